"""Spatial audio simulation: image-source impulse responses with wall
transmission, second-order ambisonic encoding, source waveforms and placement.

Impulse responses are computed with a 2D image-source method: the source is
mirrored over the floorplan's outer bounding walls up to a maximum reflection
order. Each specular path contributes a single tap delayed by travel time,
attenuated by distance, per-reflection loss, and per-wall transmission loss
for every interior wall cell the straight image-to-receiver line crosses.
Arrivals are encoded into 9 ambisonic channels (ACN order, SN3D weights,
evaluated at zero elevation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import chirp as _chirp

from .floorplan import Floorplan, Pose, Trajectory
from .grids import traverse_cells

SETTINGS = ("dev_gen", "env_telephone", "env_nearby", "env_all_room")
NUM_AMBI_CHANNELS = 9


class InvalidPositionError(ValueError):
    pass


class PlacementInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class AcousticConfig:
    sample_rate: int = 16000
    clip_duration: float = 3.0
    speed_of_sound: float = 343.0
    max_reflection_order: int = 3
    wall_reflection: float = 0.9
    wall_transmission: float = 0.15
    min_amplitude: float = 1e-4

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        # amplitude coefficients; energy conservation bounds the squares
        if self.wall_reflection ** 2 + self.wall_transmission ** 2 > 1.0:
            raise ValueError("reflection^2 + transmission^2 exceeds 1")
        n = self.clip_duration * self.sample_rate
        if abs(n - round(n)) > 1e-9:
            raise ValueError("clip_duration * sample_rate must be an integer")

    @property
    def num_samples(self) -> int:
        return int(round(self.clip_duration * self.sample_rate))


@dataclass(frozen=True)
class WaveformSpec:
    kind: str                # "chirp" | "telephone" | "room_signature"
    label: int = 0           # room label, for room_signature only


@dataclass
class SourcePlacement:
    position: tuple[float, float]
    room_label: int
    waveform: WaveformSpec

    def to_json(self) -> dict:
        return {"position": list(self.position), "room_label": self.room_label,
                "waveform": {"kind": self.waveform.kind, "label": self.waveform.label}}

    @classmethod
    def from_json(cls, doc: dict) -> "SourcePlacement":
        return cls(tuple(doc["position"]), doc["room_label"],
                   WaveformSpec(doc["waveform"]["kind"], doc["waveform"]["label"]))


@dataclass
class ImpulseResponse:
    taps: np.ndarray  # (9, T) float64
    source_pos: tuple[float, float]
    receiver_pose: Pose


@dataclass
class AudioClip:
    samples: np.ndarray  # (T, 9)
    step_index: int = 0


def encode_ambisonics(azimuth: float, gain: float) -> np.ndarray:
    """Second-order real spherical-harmonic gains for a horizontal arrival.

    ACN channel order with SN3D weights at zero elevation; the
    elevation-dependent channels (ACN 2, 5, 7) are identically zero there.
    """
    s, c = math.sin(azimuth), math.cos(azimuth)
    s2, c2 = math.sin(2 * azimuth), math.cos(2 * azimuth)
    h = math.sqrt(3.0) / 2.0
    return gain * np.array([1.0, s, 0.0, c, h * s2, 0.0, -0.5, 0.0, h * c2])


def _axis_images(coord: float, length: float, max_order: int):
    """1D image coordinates and reflection counts over a [0, length] slab.

    Images are (1-2p)*(coord + 2*n*length) for p in {0,1}, n integer, with
    |n+p| reflections off the wall at 0 and |n| off the wall at ``length``.
    """
    out = []
    for p in (0, 1):
        for n in range(-max_order - 1, max_order + 2):
            order = abs(n + p) + abs(n)
            if order <= max_order:
                out.append(((1 - 2 * p) * (coord + 2 * n * length), order))
    return out


def compute_ir(fp: Floorplan, source: tuple[float, float], receiver: Pose,
               cfg: AcousticConfig) -> ImpulseResponse:
    """Tapped-delay-line impulse response from a source to a receiver pose."""
    if not fp.is_interior_pos(source[0], source[1]):
        raise InvalidPositionError(f"source {source} is not inside the interior")
    if not fp.is_interior_pos(receiver.x, receiver.y):
        raise InvalidPositionError(f"receiver {(receiver.x, receiver.y)} is not interior")

    x0, y0, x1, y1 = fp.interior_bbox_m()
    lx, ly = x1 - x0, y1 - y0
    inner_walls = _interior_wall_mask(fp)
    t_samples = cfg.num_samples
    taps = np.zeros((NUM_AMBI_CHANNELS, t_samples), dtype=np.float64)

    rx, ry = receiver.x, receiver.y
    for ix, ox in _axis_images(source[0] - x0, lx, cfg.max_reflection_order):
        for iy, oy in _axis_images(source[1] - y0, ly, cfg.max_reflection_order):
            order = ox + oy
            if order > cfg.max_reflection_order:
                continue
            img = (ix + x0, iy + y0)
            dist = math.hypot(img[0] - rx, img[1] - ry)
            crossings = _wall_crossings(fp, inner_walls, (rx, ry), img)
            amp = (cfg.wall_reflection ** order
                   * cfg.wall_transmission ** crossings
                   / max(dist, 0.1))
            if abs(amp) < cfg.min_amplitude:
                continue
            k = int(round(dist / cfg.speed_of_sound * cfg.sample_rate))
            if k >= t_samples:
                continue
            if dist < 1e-9:
                gains = np.zeros(NUM_AMBI_CHANNELS)
                gains[0] = amp  # co-located source: direction undefined, omni only
            else:
                az = math.atan2(img[1] - ry, img[0] - rx) - math.radians(receiver.theta)
                gains = encode_ambisonics(az, amp)
            taps[:, k] += gains
    return ImpulseResponse(taps=taps, source_pos=tuple(source), receiver_pose=receiver)


def _interior_wall_mask(fp: Floorplan) -> np.ndarray:
    """Wall cells strictly inside the interior bounding box (the box faces
    themselves are the mirrors, not transmission obstacles)."""
    x0, y0, x1, y1 = fp.interior_bbox_m()
    h, w = fp.dims
    res = fp.cell_size
    cols = (np.arange(w) + 0.5) * res
    rows = (np.arange(h) + 0.5) * res
    inside = ((rows[:, None] > y0) & (rows[:, None] < y1)
              & (cols[None, :] > x0) & (cols[None, :] < x1))
    return (fp.interior_grid == 0) & inside


def _wall_crossings(fp: Floorplan, inner_walls: np.ndarray,
                    p0: tuple[float, float], p1: tuple[float, float]) -> int:
    h, w = fp.dims
    count = 0
    for row, col, _ in traverse_cells(p0, p1, fp.cell_size):
        if 0 <= row < h and 0 <= col < w and inner_walls[row, col]:
            count += 1
    return count


def make_source_waveform(spec: WaveformSpec, cfg: AcousticConfig, seed: int) -> np.ndarray:
    """Unit-peak source waveform of T samples for a waveform spec."""
    t = np.arange(cfg.num_samples, dtype=np.float64) / cfg.sample_rate
    if spec.kind == "chirp":
        w = _chirp(t, f0=20.0, t1=cfg.clip_duration, f1=0.45 * cfg.sample_rate,
                   method="logarithmic")
    elif spec.kind == "telephone":
        tone = 0.5 * (np.sin(2 * np.pi * 440.0 * t) + np.sin(2 * np.pi * 480.0 * t))
        gate = (np.mod(t, 0.6) < 0.4).astype(np.float64)
        w = tone * gate
    elif spec.kind == "room_signature":
        rng = np.random.default_rng((int(seed) << 8) + spec.label)
        f0 = 200.0 + 60.0 * spec.label
        w = np.zeros_like(t)
        for k in range(1, 5):
            w += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
        period = 0.2 + 0.03 * spec.label
        gate = (np.mod(t + rng.uniform(0, period), period) < 0.6 * period)
        w = w * gate.astype(np.float64)
    else:
        raise ValueError(f"unknown waveform kind {spec.kind!r}")
    peak = np.max(np.abs(w))
    if peak > 0:
        w = w / peak
    return w


def place_sources(fp: Floorplan, traj: Trajectory, setting: str, seed: int,
                  window_cells: int = 24) -> list[SourcePlacement]:
    """Sound sources for one trajectory under one of the four audio settings.

    dev_gen: a chirp co-located with the camera at every step (moving source).
    env_telephone / env_nearby: one static source inside the per-step window
    of a randomly chosen step; telephone ring vs the room's signature sound.
    env_all_room: one signature source at every room's anchor, all playing.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown audio setting {setting!r}; expected one of {SETTINGS}")
    rng = np.random.default_rng(seed)
    if setting == "dev_gen":
        return [
            SourcePlacement((p.x, p.y), fp.room_label_pos(p.x, p.y), WaveformSpec("chirp"))
            for p in traj.poses
        ]
    if setting == "env_all_room":
        out = []
        for room in fp.rooms:
            r, c = room.sound_anchor
            pos = ((c + 0.5) * fp.cell_size, (r + 0.5) * fp.cell_size)
            out.append(SourcePlacement(pos, room.label, WaveformSpec("room_signature", room.label)))
        return out

    # single static source near one trajectory step
    step = int(rng.integers(len(traj.poses)))
    order = [(step + i) % len(traj.poses) for i in range(len(traj.poses))]
    for idx in order:
        pose = traj.poses[idx]
        crow, ccol = fp.cell_at(pose.x, pose.y)
        half = window_cells // 2
        r0, r1 = max(0, crow - half), min(fp.dims[0], crow + half)
        c0, c1 = max(0, ccol - half), min(fp.dims[1], ccol + half)
        cells = np.argwhere(fp.interior_grid[r0:r1, c0:c1] == 1)
        if cells.size == 0:
            continue
        r, c = cells[int(rng.integers(len(cells)))]
        r, c = int(r + r0), int(c + c0)
        pos = ((c + 0.5) * fp.cell_size, (r + 0.5) * fp.cell_size)
        label = int(fp.room_grid[r, c])
        kind = WaveformSpec("telephone") if setting == "env_telephone" \
            else WaveformSpec("room_signature", label)
        return [SourcePlacement(pos, label, kind)]
    raise PlacementInfeasibleError("no interior cell inside any step window")


def render_with_waveforms(fp: Floorplan, sources: list[tuple[tuple[float, float], np.ndarray]],
                          receiver: Pose, cfg: AcousticConfig) -> np.ndarray:
    """Sum of waveform-convolved impulse responses, truncated to T samples.

    IRs are sparse tapped delay lines, so the convolution is evaluated as a
    sum of delayed, gain-weighted copies of each waveform (exact).
    """
    t_samples = cfg.num_samples
    out = np.zeros((t_samples, NUM_AMBI_CHANNELS), dtype=np.float64)
    for position, waveform in sources:
        ir = compute_ir(fp, position, receiver, cfg)
        cols = np.nonzero(np.abs(ir.taps).sum(axis=0))[0]
        for k in cols:
            seg = waveform[: t_samples - k]
            out[k:k + seg.shape[0], :] += seg[:, None] * ir.taps[:, k][None, :]
    return out


def render_audio(fp: Floorplan, placements: list[SourcePlacement], receiver: Pose,
                 cfg: AcousticConfig, seed: int, step_index: int = 0) -> AudioClip:
    """Audio clip at a receiver pose from simultaneously playing placements."""
    if not placements:
        raise ValueError("placements must be nonempty")
    sources = [(p.position, make_source_waveform(p.waveform, cfg, seed)) for p in placements]
    samples = render_with_waveforms(fp, sources, receiver, cfg)
    return AudioClip(samples=samples, step_index=step_index)
