"""Audio-visual floorplan mapping on procedural indoor environments."""

__version__ = "0.1.0"
