"""Audio-visual map prediction network.

Per step, each modality is projected to a top-down feature map centered on
the camera, concatenated with a positional encoding, and warped into the
sequence canvas. Two encoder stages per modality pair per-cell temporal
self-attention with stride-2 convolutions; three decoder stages fuse the
modalities with transposed convolutions back to canvas resolution, and a 1x1
head scores interior occupancy plus one channel per room type. Per-step
score maps are max-pooled over time into the sequence prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .grids import rotation_matrix

MODALITIES = ("av", "rgb", "audio")
STFT_WINDOW = 512
STFT_HOP = 256
LOG_FLOOR = 1e-8
# fixed affine putting log-magnitudes of unit-scale signals roughly in [0, 1]
LOG_OFFSET = -math.log(LOG_FLOOR)
LOG_SCALE = 23.0


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    feature_channels: int = 128
    pe_channels: int = 64
    enc1_channels: int = 128
    enc2_channels: int = 192
    dec_channels: int = 64
    num_rooms: int = 13
    window_h: int = 24
    window_w: int = 24
    attention_dim: int = 64
    audio_hidden: int = 128
    frame_size: int = 64
    cell_size: float = 0.25
    modality: str = "av"
    param_seed: int = 0

    def __post_init__(self):
        if self.window_h % 8 or self.window_w % 8:
            raise ValueError("window dims must be divisible by 8")
        if self.pe_channels % 4:
            raise ValueError("pe_channels must be divisible by 4")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def positional_encoding(h: int, w: int, channels: int = 64, dtype=torch.float32,
                        device=None) -> torch.Tensor:
    """Parameter-free 2D positional encoding [PE(row), PE(col)].

    Each axis contributes channels/2 dims as interleaved (sin, cos) pairs at
    frequencies 10000**(2k / (channels/2)).
    """
    per_axis = channels // 2
    k = torch.arange(per_axis // 2, dtype=torch.float64)
    inv_freq = torch.pow(10000.0, -2.0 * k / per_axis)

    def axis_pe(n):
        pos = torch.arange(n, dtype=torch.float64)[:, None] * inv_freq[None, :]
        pe = torch.empty(n, per_axis, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(pos)
        pe[:, 1::2] = torch.cos(pos)
        return pe

    rows = axis_pe(h)  # (h, per_axis)
    cols = axis_pe(w)  # (w, per_axis)
    out = torch.empty(channels, h, w, dtype=torch.float64)
    out[:per_axis] = rows.T[:, :, None].expand(per_axis, h, w)
    out[per_axis:] = cols.T[:, None, :].expand(per_axis, h, w)
    return out.to(dtype=dtype, device=device)


def feature_canvas_grid(canvas_hw: tuple[int, int], in_hw: tuple[int, int],
                        rel_pose: tuple[float, float, float], res: float,
                        dtype, device) -> torch.Tensor:
    """Sampling grid implementing pad -> translate by (x/res, y/res) cells ->
    rotate about the canvas center, for torch.grid_sample (align_corners
    False, zero padding). Differentiable inputs are the features, not poses.
    """
    ch, cw = canvas_hw
    in_h, in_w = in_hw
    x, y, theta = rel_pose
    tx, ty = x / res, y / res
    rot = rotation_matrix(-theta)
    qc = torch.arange(cw, dtype=dtype, device=device)[None, :].expand(ch, cw)
    qr = torch.arange(ch, dtype=dtype, device=device)[:, None].expand(ch, cw)
    qx = qc + 0.5 - cw / 2.0
    qy = qr + 0.5 - ch / 2.0
    px = rot[0, 0] * qx + rot[0, 1] * qy + in_w / 2.0 - tx
    py = rot[1, 0] * qx + rot[1, 1] * qy + in_h / 2.0 - ty
    gx = 2.0 * px / in_w - 1.0
    gy = 2.0 * py / in_h - 1.0
    return torch.stack([gx, gy], dim=-1)[None]  # (1, ch, cw, 2)


def align_feature_map(x: torch.Tensor, rel_pose: tuple[float, float, float],
                      res: float, canvas_hw: tuple[int, int]) -> torch.Tensor:
    """Warp one (C, h, w) camera-centric map into the canvas frame with
    bilinear resampling (differentiable w.r.t. feature values)."""
    if res <= 0:
        from .grids import InvalidResolutionError
        raise InvalidResolutionError(f"resolution must be positive, got {res}")
    grid = feature_canvas_grid(canvas_hw, x.shape[-2:], rel_pose, res,
                               x.dtype, x.device)
    return F.grid_sample(x[None], grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False)[0]


class TemporalSelfAttention(nn.Module):
    """Single-head scaled dot-product attention across time, independently at
    every spatial cell, with shared 1x1 projections and a residual output."""

    def __init__(self, channels: int, attention_dim: int):
        super().__init__()
        self.q = nn.Conv2d(channels, attention_dim, 1, bias=False)
        self.k = nn.Conv2d(channels, attention_dim, 1, bias=False)
        self.v = nn.Conv2d(channels, channels, 1, bias=False)
        self.scale = 1.0 / math.sqrt(attention_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t, c, h, w = x.shape
        q = self.q(x).permute(2, 3, 0, 1).reshape(h * w, t, -1)
        k = self.k(x).permute(2, 3, 0, 1).reshape(h * w, t, -1)
        v = self.v(x).permute(2, 3, 0, 1).reshape(h * w, t, c)
        attn = torch.softmax(torch.bmm(q, k.transpose(1, 2)) * self.scale, dim=-1)
        out = torch.bmm(attn, v)  # (hw, t, c)
        out = out.reshape(h, w, t, c).permute(2, 3, 0, 1)
        return x + out


class ConvSelfAttention(nn.Module):
    """Temporal self-attention followed by a shared stride-2 3x3 convolution
    applied to every step (halves spatial resolution)."""

    def __init__(self, in_channels: int, out_channels: int, attention_dim: int):
        super().__init__()
        self.attn = TemporalSelfAttention(in_channels, attention_dim)
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ShapeError(f"spatial dims {x.shape[-2:]} not divisible by 2")
        return F.relu(self.conv(self.attn(x)))


class UpConvSelfAttention(nn.Module):
    """Temporal self-attention followed by a shared stride-2 transposed
    convolution (doubles spatial resolution)."""

    def __init__(self, in_channels: int, out_channels: int, attention_dim: int):
        super().__init__()
        self.attn = TemporalSelfAttention(in_channels, attention_dim)
        self.conv = nn.ConvTranspose2d(in_channels, out_channels, 2, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.conv(self.attn(x)))


def _groups(channels: int) -> int:
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


class UpsampleStack(nn.Module):
    """Expand a per-step feature vector to a (channels, H/2, W/2) map via a
    linear seed at (H/8, W/8) and two normalized stride-2 transposed
    convolutions."""

    def __init__(self, channels: int, window_h: int, window_w: int):
        super().__init__()
        self.seed_hw = (window_h // 8, window_w // 8)
        self.fc = nn.Linear(channels, channels * self.seed_hw[0] * self.seed_hw[1])
        self.up1 = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.up2 = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.n1 = nn.GroupNorm(_groups(channels), channels)
        self.n2 = nn.GroupNorm(_groups(channels), channels)
        self.channels = channels

    def forward(self, vec: torch.Tensor) -> torch.Tensor:
        t = vec.shape[0]
        x = self.fc(vec).reshape(t, self.channels, *self.seed_hw)
        x = F.relu(self.n1(self.up1(F.relu(x))))
        return F.relu(self.n2(self.up2(x)))


class RgbFeatureExtractor(nn.Module):
    """Small stride-2 convolutional trunk (normalized, standing in for a
    residual backbone), global pooling to one vector per frame, then
    transposed-convolution upsampling to the top-down grid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        f = cfg.feature_channels
        mid = max(8, f // 2)
        self.trunk = nn.Sequential(
            nn.Conv2d(3, mid, 3, stride=2, padding=1),
            nn.GroupNorm(_groups(mid), mid), nn.ReLU(),
            nn.Conv2d(mid, mid, 3, stride=2, padding=1),
            nn.GroupNorm(_groups(mid), mid), nn.ReLU(),
            nn.Conv2d(mid, f, 3, stride=2, padding=1),
            nn.GroupNorm(_groups(f), f), nn.ReLU(),
            nn.Conv2d(f, f, 3, stride=2, padding=1),
            nn.GroupNorm(_groups(f), f), nn.ReLU(),
        )
        self.upsample = UpsampleStack(f, cfg.window_h, cfg.window_w)
        self.frame_size = cfg.frame_size

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.shape[1:] != (3, self.frame_size, self.frame_size):
            raise ShapeError(
                f"expected frames (t, 3, {self.frame_size}, {self.frame_size}), "
                f"got {tuple(frames.shape)}")
        vec = self.trunk(frames).mean(dim=(2, 3))
        return self.upsample(vec)


class AudioFeatureExtractor(nn.Module):
    """Per-channel log-magnitude spectrograms, a linear/ReLU/pool stack to one
    vector per clip, then the same upsampling design as the RGB branch."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        f = cfg.feature_channels
        n_freq = STFT_WINDOW // 2 + 1
        self.fc1 = nn.Linear(9 * n_freq, cfg.audio_hidden)
        self.fc2 = nn.Linear(cfg.audio_hidden, cfg.audio_hidden)
        self.fc3 = nn.Linear(cfg.audio_hidden, f)
        self.upsample = UpsampleStack(f, cfg.window_h, cfg.window_w)
        self.register_buffer("window", torch.hann_window(STFT_WINDOW), persistent=False)

    def spectrogram(self, audio: torch.Tensor) -> torch.Tensor:
        t, n, ch = audio.shape
        flat = audio.permute(0, 2, 1).reshape(t * ch, n)
        spec = torch.stft(flat, STFT_WINDOW, hop_length=STFT_HOP,
                          window=self.window.to(audio.dtype), return_complex=True)
        mag = torch.log(spec.abs() + LOG_FLOOR)
        mag = (mag + LOG_OFFSET) / LOG_SCALE
        return mag.reshape(t, ch, mag.shape[-2], mag.shape[-1])

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        if audio.ndim != 3 or audio.shape[2] != 9:
            raise ShapeError(f"expected audio (t, T, 9), got {tuple(audio.shape)}")
        spec = self.spectrogram(audio)  # (t, 9, freq, frames)
        t = spec.shape[0]
        frames = spec.permute(0, 3, 1, 2).reshape(t, spec.shape[-1], -1)
        h = F.relu(self.fc1(frames))
        h = F.relu(self.fc2(h))
        vec = self.fc3(h.mean(dim=1))
        return self.upsample(vec)


class AVMapNet(nn.Module):
    """End-to-end network mapping an egocentric sequence to per-step score
    maps over the sequence canvas."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.use_rgb = cfg.modality in ("av", "rgb")
        self.use_audio = cfg.modality in ("av", "audio")
        aligned_ch = cfg.feature_channels + cfg.pe_channels
        n_mod = int(self.use_rgb) + int(self.use_audio)
        d = cfg.attention_dim
        if self.use_rgb:
            self.rgb_extractor = RgbFeatureExtractor(cfg)
            self.rgb_enc1 = ConvSelfAttention(aligned_ch, cfg.enc1_channels, d)
            self.rgb_enc2 = ConvSelfAttention(cfg.enc1_channels, cfg.enc2_channels, d)
        if self.use_audio:
            self.audio_extractor = AudioFeatureExtractor(cfg)
            self.audio_enc1 = ConvSelfAttention(aligned_ch, cfg.enc1_channels, d)
            self.audio_enc2 = ConvSelfAttention(cfg.enc1_channels, cfg.enc2_channels, d)
        self.dec2 = UpConvSelfAttention(cfg.enc2_channels * n_mod, cfg.enc1_channels, d)
        self.dec1 = UpConvSelfAttention(cfg.enc1_channels * (1 + n_mod), cfg.dec_channels, d)
        self.dec0 = UpConvSelfAttention(cfg.dec_channels + aligned_ch * n_mod,
                                        cfg.dec_channels, d)
        self.head = nn.Conv2d(cfg.dec_channels, cfg.num_rooms + 1, 1)

    def feature_resolution(self) -> float:
        return 2.0 * self.cfg.cell_size

    def forward(self, frames: torch.Tensor | None, audio: torch.Tensor | None,
                rel_poses: list[tuple[float, float, float]],
                canvas_hw: tuple[int, int]) -> torch.Tensor:
        """Score maps (t, num_rooms+1, H', W') for one sequence.

        ``canvas_hw`` is the ground-truth-resolution canvas; features live at
        half that resolution and the decoder output returns to full canvas.
        """
        if canvas_hw[0] % 8 or canvas_hw[1] % 8:
            raise ShapeError(f"canvas {canvas_hw} must be a multiple of 8")
        feat_canvas = (canvas_hw[0] // 2, canvas_hw[1] // 2)
        res = self.feature_resolution()
        aligned = []
        if self.use_rgb:
            if frames is None:
                raise ShapeError("rgb branch requires frames")
            aligned.append(self._align_all(self.rgb_extractor(frames), rel_poses,
                                           res, feat_canvas))
        if self.use_audio:
            if audio is None:
                raise ShapeError("audio branch requires audio")
            aligned.append(self._align_all(self.audio_extractor(audio), rel_poses,
                                           res, feat_canvas))
        enc1, enc2 = [], []
        for x, branch in zip(aligned, self._enc_branches()):
            e1 = branch[0](x)
            enc1.append(e1)
            enc2.append(branch[1](e1))
        o2 = self.dec2(torch.cat(enc2, dim=1))
        o1 = self.dec1(torch.cat([o2] + enc1, dim=1))
        o0 = self.dec0(torch.cat([o1] + aligned, dim=1))
        return self.head(o0)

    def _enc_branches(self):
        out = []
        if self.use_rgb:
            out.append((self.rgb_enc1, self.rgb_enc2))
        if self.use_audio:
            out.append((self.audio_enc1, self.audio_enc2))
        return out

    def _align_all(self, feats: torch.Tensor, rel_poses, res, feat_canvas):
        pe = positional_encoding(feats.shape[-2], feats.shape[-1], self.cfg.pe_channels,
                                 dtype=feats.dtype, device=feats.device)
        out = []
        for i, rel in enumerate(rel_poses):
            x = torch.cat([feats[i], pe], dim=0)
            out.append(align_feature_map(x, rel, res, feat_canvas))
        return torch.stack(out, dim=0)


def aggregate(score_maps: torch.Tensor) -> dict:
    """Max-pool per-step scores over time; probabilities from the pooled map.

    Returns {"scores": (num_rooms+1, H', W'), "p_int": (H', W'),
    "p_room": (num_rooms, H', W')}.
    """
    if score_maps.ndim != 4 or score_maps.shape[0] < 1:
        raise ValueError(f"need (t, C, H, W) score maps, got {tuple(score_maps.shape)}")
    pooled = score_maps.max(dim=0).values
    return {
        "scores": pooled,
        "p_int": torch.sigmoid(pooled[0]),
        "p_room": torch.softmax(pooled[1:], dim=0),
    }


def predict_interior(pred: dict) -> np.ndarray:
    return (pred["p_int"].detach().cpu().numpy() >= 0.5).astype(np.uint8)


def predict_rooms(pred: dict) -> np.ndarray:
    """Most likely room label where the thresholded interior map is 1, label
    0 elsewhere; argmax ties break toward the lowest label index."""
    interior = predict_interior(pred)
    room_probs = pred["p_room"].detach().cpu().numpy()
    labels = (np.argmax(room_probs, axis=0) + 1).astype(np.uint8)
    return labels * interior


def init_parameters(net: nn.Module, seed: int) -> None:
    """Fan-in-scaled uniform init for every parameter, fixed by seed.

    Weights use the ReLU-gain bound sqrt(6/fan_in), which keeps activation
    scale roughly constant through the ReLU stacks (plain 1/sqrt(fan_in)
    shrinks activations enough that the positional-encoding channels drown
    the content signal at init). Biases use the conventional 1/sqrt(fan_in).
    """
    gen = torch.Generator().manual_seed(int(seed))
    for module in net.modules():
        weight = getattr(module, "weight", None)
        if not isinstance(weight, torch.Tensor):
            continue
        if isinstance(module, nn.GroupNorm):
            with torch.no_grad():
                weight.fill_(1.0)
                module.bias.zero_()
            continue
        fan_in = weight.numel() // weight.shape[0]
        if isinstance(module, (nn.ConvTranspose2d,)):
            fan_in = weight.numel() // weight.shape[1]
        with torch.no_grad():
            weight.uniform_(-math.sqrt(6.0 / fan_in), math.sqrt(6.0 / fan_in),
                            generator=gen)
            bias = getattr(module, "bias", None)
            if isinstance(bias, torch.Tensor):
                bound = 1.0 / math.sqrt(fan_in)
                bias.uniform_(-bound, bound, generator=gen)


def build_model(cfg: ModelConfig) -> AVMapNet:
    net = AVMapNet(cfg)
    init_parameters(net, cfg.param_seed)
    return net
