import math

import numpy as np
import pytest

from avmap.acoustics import (
    AcousticConfig,
    InvalidPositionError,
    PlacementInfeasibleError,
    SourcePlacement,
    WaveformSpec,
    compute_ir,
    encode_ambisonics,
    make_source_waveform,
    place_sources,
    render_audio,
    render_with_waveforms,
)
from avmap.floorplan import Floorplan, GenConfig, Pose, generate_floorplan, sample_trajectory

from oracles import omni_ir_oracle

CFG = AcousticConfig()


def empty_room(width_m, height_m, cell=0.25, label=1):
    """Floorplan whose interior spans exactly [0,width] x [0,height] meters."""
    cols = int(round(width_m / cell))
    rows = int(round(height_m / cell))
    interior = np.ones((rows, cols), dtype=np.uint8)
    return Floorplan(interior, interior * label, cell, [], 0)


def test_direct_path_tap_index():
    fp = empty_room(4.0, 4.0)
    ir = compute_ir(fp, (1.0, 1.0), Pose(3.0, 1.0, 0.0), CFG)
    k = round(2.0 / 343.0 * 16000)
    assert k == 93
    assert ir.taps[0, 93] == pytest.approx(1.0 / 2.0, rel=1e-12)


def test_first_order_image_tap():
    # image through the wall at x=0 sits at (-1, 1): distance 4 m, tap 187,
    # contribution beta/4. The symmetric twin through x=4 lands on the same
    # sample, so the oracle total at that tap is 2*beta/4.
    fp = empty_room(4.0, 4.0)
    ir = compute_ir(fp, (1.0, 1.0), Pose(3.0, 1.0, 0.0), CFG)
    assert round(4.0 / 343.0 * 16000) == 187
    oracle = omni_ir_oracle((0.0, 0.0, 4.0, 4.0), (1.0, 1.0), (3.0, 1.0), CFG)
    assert oracle[187] == pytest.approx(2 * CFG.wall_reflection / 4.0, rel=1e-12)
    assert ir.taps[0, 187] == pytest.approx(oracle[187], rel=1e-12)


def test_matches_mirror_oracle_random_geometries():
    rng = np.random.default_rng(0)
    for _ in range(25):
        w = float(rng.uniform(2.0, 8.0))
        h = float(rng.uniform(2.0, 8.0))
        fp = empty_room(round(w * 4) / 4, round(h * 4) / 4)
        x1, y1 = fp.dims[1] * 0.25, fp.dims[0] * 0.25
        src = (float(rng.uniform(0.3, x1 - 0.3)), float(rng.uniform(0.3, y1 - 0.3)))
        rcv = (float(rng.uniform(0.3, x1 - 0.3)), float(rng.uniform(0.3, y1 - 0.3)))
        ir = compute_ir(fp, src, Pose(rcv[0], rcv[1], 0.0), CFG)
        oracle = omni_ir_oracle((0.0, 0.0, x1, y1), src, rcv, CFG)
        assert np.array_equal(ir.taps[0] != 0, oracle != 0)
        nz = oracle != 0
        assert np.allclose(ir.taps[0][nz], oracle[nz], rtol=1e-9, atol=0)


def test_reciprocity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        fp = empty_room(6.0, 5.0)
        a = (float(rng.uniform(0.3, 5.7)), float(rng.uniform(0.3, 4.7)))
        b = (float(rng.uniform(0.3, 5.7)), float(rng.uniform(0.3, 4.7)))
        ir_ab = compute_ir(fp, a, Pose(b[0], b[1], 0.0), CFG)
        ir_ba = compute_ir(fp, b, Pose(a[0], a[1], 0.0), CFG)
        assert np.allclose(ir_ab.taps[0], ir_ba.taps[0], rtol=1e-9, atol=0)


def test_rotation_equivariance():
    rng = np.random.default_rng(2)
    fp = empty_room(6.0, 4.0)
    src = (1.3, 2.1)
    for _ in range(10):
        delta = float(rng.integers(1, 12) * 30)
        ir0 = compute_ir(fp, src, Pose(4.0, 1.5, 0.0), CFG)
        ir1 = compute_ir(fp, src, Pose(4.0, 1.5, delta), CFG)
        d = math.radians(delta)
        assert np.allclose(ir1.taps[0], ir0.taps[0], atol=1e-12)
        # first-order pair (Y, X) rotates by the heading change
        assert np.allclose(ir1.taps[1], math.cos(d) * ir0.taps[1] - math.sin(d) * ir0.taps[3],
                           atol=1e-12)
        assert np.allclose(ir1.taps[3], math.sin(d) * ir0.taps[1] + math.cos(d) * ir0.taps[3],
                           atol=1e-12)
        # second-order pair rotates at twice the rate
        assert np.allclose(ir1.taps[4], math.cos(2 * d) * ir0.taps[4] - math.sin(2 * d) * ir0.taps[8],
                           atol=1e-12)
        assert np.allclose(ir1.taps[8], math.sin(2 * d) * ir0.taps[4] + math.cos(2 * d) * ir0.taps[8],
                           atol=1e-12)


def test_energy_monotone_with_distance():
    fp = empty_room(10.0, 10.0)
    src = (2.1, 5.3)
    energies = []
    for x in np.linspace(2.6, 8.0, 12):
        ir = compute_ir(fp, src, Pose(float(x), 5.3, 0.0), CFG)
        energies.append(float((ir.taps[0] ** 2).sum()))
    assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(energies, energies[1:]))


def test_wall_transmission_counted():
    # two rooms split by a 1-cell wall: straight path crosses one wall cell
    fp = generate_floorplan(0, GenConfig(rows=24, cols=48, min_rooms=2, max_rooms=2))
    assert len(fp.rooms) == 2
    wall_col = next(c for c in range(fp.dims[1])
                    if fp.interior_grid[12, c] == 0 and 0 < c < fp.dims[1] - 1)
    src = ((wall_col - 4 + 0.5) * 0.25, 12.5 * 0.25)
    rcv = Pose((wall_col + 4 + 0.5) * 0.25, 12.5 * 0.25, 0.0)
    assert fp.is_interior_pos(*src) and fp.is_interior_pos(rcv.x, rcv.y)
    ir = compute_ir(fp, src, rcv, CFG)
    d = 8 * 0.25
    k = round(d / 343.0 * 16000)
    assert ir.taps[0, k] == pytest.approx(CFG.wall_transmission / d, rel=1e-9)


def test_position_on_wall_rejected():
    fp = generate_floorplan(0)
    with pytest.raises(InvalidPositionError):
        compute_ir(fp, (0.1, 0.1), Pose(2.5, 2.5, 0.0), CFG)


# ---- ambisonics ----

def test_omni_channel_direction_independent():
    assert encode_ambisonics(0.0, 1.0)[0] == 1.0
    assert encode_ambisonics(2.3, 1.0)[0] == 1.0


def test_full_vector_at_zero_azimuth():
    v = encode_ambisonics(0.0, 1.0)
    expected = np.array([1, 0, 0, 1, 0, 0, -0.5, 0, math.sqrt(3) / 2])
    assert np.allclose(v, expected, atol=1e-15)


def test_azimuth_parity():
    for phi in (0.3, 1.1, 2.9):
        vp = encode_ambisonics(phi, 1.0)
        vm = encode_ambisonics(-phi, 1.0)
        # sin-dependent channels flip, cos-dependent channels match
        assert vm[1] == pytest.approx(-vp[1])
        assert vm[4] == pytest.approx(-vp[4])
        assert vm[3] == pytest.approx(vp[3])
        assert vm[8] == pytest.approx(vp[8])
        assert vm[0] == vp[0] and vm[6] == vp[6]


# ---- waveforms ----

def test_chirp_definition_and_start_frequency():
    w = make_source_waveform(WaveformSpec("chirp"), CFG, 0)
    t = np.arange(200) / CFG.sample_rate
    f0, f1 = 20.0, 0.45 * CFG.sample_rate
    k = (f1 / f0) ** (1.0 / CFG.clip_duration)
    expected = np.cos(2 * np.pi * f0 * (np.power(k, t) - 1.0) / np.log(k))
    assert np.allclose(w[:200], expected, atol=1e-9)
    # instantaneous frequency at t=0 is f0: phase grows by ~2*pi*f0*dt
    dphi = np.arccos(np.clip(expected[1], -1, 1))
    assert dphi * CFG.sample_rate / (2 * np.pi) == pytest.approx(20.0, rel=0.05)


def test_room_signature_dominant_peak():
    w = make_source_waveform(WaveformSpec("room_signature", 3), CFG, seed=7)
    spec = np.abs(np.fft.rfft(w))
    freqs = np.fft.rfftfreq(w.size, d=1.0 / CFG.sample_rate)
    assert freqs[int(np.argmax(spec))] == pytest.approx(380.0, abs=2.0)


def test_waveforms_unit_peak():
    for spec in (WaveformSpec("chirp"), WaveformSpec("telephone"),
                 WaveformSpec("room_signature", 5)):
        w = make_source_waveform(spec, CFG, seed=3)
        assert np.max(np.abs(w)) == 1.0
        assert w.shape == (CFG.num_samples,)


def test_room_signature_deterministic():
    a = make_source_waveform(WaveformSpec("room_signature", 4), CFG, seed=9)
    b = make_source_waveform(WaveformSpec("room_signature", 4), CFG, seed=9)
    assert np.array_equal(a, b)


# ---- placement ----

def test_dev_gen_colocated_every_step():
    fp = generate_floorplan(4)
    traj = sample_trajectory(fp, 4, seed=0)
    placements = place_sources(fp, traj, "dev_gen", seed=0)
    assert len(placements) == 4
    for p, pose in zip(placements, traj.poses):
        assert p.position == (pose.x, pose.y)
        assert p.waveform.kind == "chirp"


def test_all_room_one_per_room():
    fp = generate_floorplan(0, GenConfig(min_rooms=5, max_rooms=5))
    traj = sample_trajectory(fp, 2, seed=0)
    placements = place_sources(fp, traj, "env_all_room", seed=0)
    assert len(placements) == 5
    assert sorted(p.room_label for p in placements) == sorted(r.label for r in fp.rooms)
    for p in placements:
        assert p.waveform == WaveformSpec("room_signature", p.room_label)


def test_nearby_label_matches_room_grid():
    fp = generate_floorplan(6)
    for seed in range(5):
        traj = sample_trajectory(fp, 4, seed=seed)
        (p,) = place_sources(fp, traj, "env_nearby", seed=seed)
        assert p.waveform.kind == "room_signature"
        row, col = fp.cell_at(*p.position)
        assert p.waveform.label == fp.room_grid[row, col] == p.room_label


def test_placement_roundtrip_json():
    p = SourcePlacement((1.5, 2.5), 7, WaveformSpec("room_signature", 7))
    assert SourcePlacement.from_json(p.to_json()) == p


# ---- rendering ----

def test_identity_ir_scales_waveform():
    # anechoic room, co-located source: single omni tap at delay 0 with the
    # near-field amplitude clamp (1/0.1)
    cfg = AcousticConfig(wall_reflection=0.0, wall_transmission=0.0)
    fp = empty_room(4.0, 4.0)
    clip = render_audio(fp, [SourcePlacement((2.0, 2.0), 1, WaveformSpec("chirp"))],
                        Pose(2.0, 2.0, 0.0), cfg, seed=0)
    w = make_source_waveform(WaveformSpec("chirp"), cfg, 0)
    assert np.allclose(clip.samples[:, 0], 10.0 * w, rtol=1e-12)
    assert np.all(clip.samples[:, 1:] == 0)


def test_two_colocated_sources_double_output():
    fp = empty_room(5.0, 4.0)
    src = SourcePlacement((1.5, 1.5), 1, WaveformSpec("telephone"))
    rcv = Pose(3.5, 2.5, 30.0)
    one = render_audio(fp, [src], rcv, CFG, seed=0)
    two = render_audio(fp, [src, src], rcv, CFG, seed=0)
    assert np.allclose(two.samples, 2.0 * one.samples, rtol=1e-12)


def test_rotated_receiver_rotates_directional_channels():
    fp = empty_room(6.0, 5.0)
    sources = [((1.2, 1.7), make_source_waveform(WaveformSpec("chirp"), CFG, 0))]
    a0 = render_with_waveforms(fp, sources, Pose(4.0, 3.0, 0.0), CFG)
    a90 = render_with_waveforms(fp, sources, Pose(4.0, 3.0, 90.0), CFG)
    assert np.allclose(a90[:, 0], a0[:, 0], atol=1e-12)
    # oracle: re-encode with azimuth shifted by -90 degrees
    assert np.allclose(a90[:, 1], -a0[:, 3], atol=1e-10)
    assert np.allclose(a90[:, 3], a0[:, 1], atol=1e-10)


def test_relative_ir_identity():
    # For one static source and two receivers, the DFT ratio of the clips
    # equals the DFT ratio of the IRs wherever the source has energy.
    fp = empty_room(5.0, 4.0)
    src = (1.1, 1.3)
    rcv1, rcv2 = Pose(3.2, 2.1, 0.0), Pose(2.4, 3.1, 60.0)
    ir1 = compute_ir(fp, src, rcv1, CFG)
    ir2 = compute_ir(fp, src, rcv2, CFG)
    last = max(np.nonzero(ir1.taps[0])[0].max(), np.nonzero(ir2.taps[0])[0].max())
    rng = np.random.default_rng(5)
    wave = np.zeros(CFG.num_samples)
    wave[: CFG.num_samples - last - 1] = rng.normal(size=CFG.num_samples - last - 1)
    a1 = render_with_waveforms(fp, [(src, wave)], rcv1, CFG)[:, 0]
    a2 = render_with_waveforms(fp, [(src, wave)], rcv2, CFG)[:, 0]
    n = 1 << 17
    f_wave = np.fft.rfft(wave, n)
    bins = np.abs(f_wave) > 1e-6 * np.abs(f_wave).max()
    ratio_clips = np.fft.rfft(a1, n)[bins] / np.fft.rfft(a2, n)[bins]
    ratio_irs = np.fft.rfft(ir1.taps[0], n)[bins] / np.fft.rfft(ir2.taps[0], n)[bins]
    assert np.max(np.abs(ratio_clips - ratio_irs) / np.abs(ratio_irs)) < 1e-6


def test_render_requires_placements():
    fp = empty_room(4.0, 4.0)
    with pytest.raises(ValueError):
        render_audio(fp, [], Pose(2.0, 2.0, 0.0), CFG, seed=0)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        AcousticConfig(wall_reflection=0.9, wall_transmission=0.5)
    with pytest.raises(ValueError):
        AcousticConfig(sample_rate=0)
