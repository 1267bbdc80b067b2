"""Onset pickers, dechirp demodulation and the collision-aware receiver."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorafb.channel import CollisionScene, add_awgn, compose_collision
from lorafb.receiver import (
    FrameAttempt,
    NoFrame,
    OutcomeClass,
    aic_curve,
    aic_onset,
    bin_to_hz,
    classify_outcome,
    coarse_fb,
    decimate_to_chip_rate,
    dechirp_fft,
    demodulate_frame,
    detect_direction,
    envelope_onset,
    first_onset,
    receive_frames,
    sfd_onset,
    symbol_error_rate,
)
from lorafb.signal import ChirpSpec, FrameSpec, IqTrace, PhyConfig, base_chirp, random_symbols, synthesize_frame

CFG = PhyConfig(S=7, f_s=2e6)


def _frame(cfg=CFG, symbols=(), delta=0.0, lead=0, sfd=0, preamble=8, seed=0, direction="up"):
    spec = ChirpSpec(direction=direction, delta_tx=delta)
    return synthesize_frame(cfg, FrameSpec(preamble, tuple(symbols), spec, lead, sfd), seed=seed)


# --- onset pickers -------------------------------------------------------------


@pytest.mark.parametrize("k", [500, 1999, 3333])
def test_envelope_onset_noiseless(k):
    x = _frame(lead=k, preamble=2)
    assert abs(envelope_onset(x).sample_index - k) <= 2


def test_envelope_score_flags_no_onset():
    x = IqTrace(1e6, np.full(4096, 1.0 + 0.5j))
    assert envelope_onset(x).score == pytest.approx(1.0, abs=1e-6)


def _aic_by_hand(x: np.ndarray) -> np.ndarray:
    # k log var(x[:k]) + (N - k - 1) log var(x[k:]), looped
    n = x.size
    out = np.full(n, np.inf)
    for k in range(2, n - 2):
        a, b = x[:k], x[k:]
        out[k] = k * math.log(np.mean(np.abs(a - a.mean()) ** 2)) + (n - k - 1) * math.log(
            np.mean(np.abs(b - b.mean()) ** 2)
        )
    return out


def test_aic_curve_matches_direct_form():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(size=200), 5 * rng.normal(size=300)]) + 0j
    got, ref = aic_curve(x), _aic_by_hand(x)
    ok = np.isfinite(ref)
    np.testing.assert_allclose(got[ok], ref[ok], rtol=1e-9)
    assert int(np.argmin(got)) == int(np.argmin(ref))


@pytest.mark.parametrize("k", [3000, 40000, 78643])
def test_aic_onset_noiseless_bias(k):
    cfg = PhyConfig(S=12, f_s=2.4e6)
    x = add_awgn(_frame(cfg, lead=k, preamble=2), 60.0, (k, None), seed=k)
    r = aic_onset(x, cfg)
    assert abs(r.sample_index - k) <= 6
    assert r.time_s == pytest.approx(r.sample_index / cfg.f_s)


def test_aic_score_separates_noise_from_onsets():
    cfg = PhyConfig(S=8, f_s=500e3)
    rng = np.random.default_rng(0)
    noise_scores, sig_scores = [], []
    for t in range(100):
        z = (rng.normal(size=8192) + 1j * rng.normal(size=8192)) / math.sqrt(2)
        noise_scores.append(aic_onset(IqTrace(cfg.f_s, z), cfg).score)
    for t in range(20):
        x = add_awgn(_frame(cfg, lead=3000 + 37 * t, preamble=2), 0.0, (3000 + 37 * t, None), seed=t)
        sig_scores.append(aic_onset(x, cfg).score)
    threshold = float(np.quantile(noise_scores, 0.99))
    assert min(sig_scores) > threshold


def test_first_onset_finds_power_rise():
    x = add_awgn(_frame(lead=5000, preamble=3), 10.0, (5000, None), seed=3)
    assert abs(first_onset(x, CFG) - 5000) <= 8


def test_first_onset_rejects_silence():
    with pytest.raises(NoFrame):
        first_onset(IqTrace(1e6, np.zeros(10000)), CFG)


# --- direction and dechirp -------------------------------------------------------


@pytest.mark.parametrize("direction", ["up", "down"])
def test_detect_direction_noiseless(direction):
    x = _frame(direction=direction, preamble=2, seed=4)
    assert detect_direction(x, CFG, 0) == direction


def test_detect_direction_at_minus_10_db():
    hits = 0
    for t in range(100):
        direction = "up" if t % 2 else "down"
        x = add_awgn(_frame(direction=direction, preamble=1, seed=t), -10.0, seed=1000 + t)
        hits += detect_direction(x, CFG, 0) == direction
    assert hits >= 95


def test_detect_direction_needs_one_chirp():
    x = _frame(preamble=1)
    with pytest.raises(ValueError):
        detect_direction(x, CFG, 10)


def test_dechirp_preamble_bin_zero():
    blocks = decimate_to_chip_rate(_frame(preamble=1), CFG, 0)
    assert dechirp_fft(blocks[0], CFG)[0] == 0


@pytest.mark.parametrize("s", [0, 1, 64, 127])
def test_dechirp_symbol_bins(s):
    x = _frame(symbols=[s], preamble=1)
    assert dechirp_fft(decimate_to_chip_rate(x, CFG, 0)[1], CFG)[0] == s


def test_dechirp_bias_bin():
    blocks = decimate_to_chip_rate(_frame(preamble=1, delta=2000.0), CFG, 0)
    assert dechirp_fft(blocks[0], CFG)[0] == round(2000 / 976.5625) == 2


def test_dechirp_peak_equals_coherent_sum():
    # noiseless symbol-0 chirp: peak magnitude = M * A/2
    blocks = decimate_to_chip_rate(_frame(preamble=1), CFG, 0)
    _, mags = dechirp_fft(blocks[0], CFG)
    assert mags[0] == pytest.approx(128 * 1.0)


def test_decimation_integer_ratio():
    cfg = PhyConfig(S=7, f_s=16 * 125e3)
    x = _frame(cfg, preamble=2)
    blocks = decimate_to_chip_rate(x, cfg, 0)
    np.testing.assert_array_equal(blocks.reshape(-1), x.samples[::16])


def test_decimation_fractional_ratio():
    cfg = PhyConfig(S=7, f_s=2.4e6)
    x = _frame(cfg, preamble=5)
    blocks = decimate_to_chip_rate(x, cfg, 0)
    assert blocks.shape[1] == 128
    # chip k*M lands within half a sample of the continuous chirp boundary
    ratio = cfg.f_s / cfg.W
    for k in range(blocks.shape[0]):
        first = blocks[k, 0]
        idx = int(np.flatnonzero(x.samples == first)[0])
        assert abs(idx - k * 128 * ratio) <= 0.5


@pytest.mark.parametrize("S", range(7, 13))
def test_modem_round_trip_all_sf(S):
    cfg = PhyConfig(S=S, f_s=250e3)
    syms = random_symbols(cfg, 20, S)
    x = _frame(cfg, syms, seed=S)
    assert demodulate_frame(x, cfg, 20, onset=0).symbols == list(syms)


def test_demod_all_zero_symbols():
    res = demodulate_frame(_frame(symbols=[0] * 6, delta=3e3), CFG, 6, onset=0)
    assert res.symbols == [0] * 6
    assert res.preamble_bin == 3


def test_demod_sf12_low_snr():
    cfg = PhyConfig(S=12, f_s=250e3)
    syms = random_symbols(cfg, 30, 1)
    x = add_awgn(_frame(cfg, syms, seed=2), -20.0, seed=3)
    res = demodulate_frame(x, cfg, 30, onset=0)
    assert np.mean(np.array(res.symbols) == np.array(syms)) >= 0.9


def test_demod_short_trace_is_noframe():
    with pytest.raises(NoFrame):
        demodulate_frame(_frame(preamble=2), CFG, 5, onset=0)


# --- coarse FB ------------------------------------------------------------------


def test_coarse_step_is_976_hz():
    assert CFG.bin_hz == pytest.approx(976.5625)
    assert bin_to_hz(127, CFG) == pytest.approx(-976.5625)


@given(delta=st.floats(-125e3 / 4, 125e3 / 4))
@settings(max_examples=40, deadline=None)
def test_coarse_fb_quantised(delta):
    x = _frame(preamble=2, delta=delta, seed=1)
    est = coarse_fb(x, CFG, 0, chirp_index=1)
    assert est / CFG.bin_hz == pytest.approx(round(est / CFG.bin_hz), abs=1e-9)
    assert abs(est - delta) <= CFG.bin_hz / 2 + 1e-6


@pytest.mark.parametrize("delta,expected", [(0.0, 0.0), (-20e3, -19531.25)])
def test_coarse_fb_examples(delta, expected):
    assert coarse_fb(_frame(preamble=2, delta=delta), CFG, 0) == expected


# --- SFD onset --------------------------------------------------------------------


@pytest.mark.parametrize("snr", [math.inf, 0.0, -10.0])
def test_sfd_onset_exact(snr):
    cfg = PhyConfig(S=9, f_s=500e3)
    lead = 1777
    x = _frame(cfg, random_symbols(cfg, 4, 0), delta=-15e3, lead=lead, sfd=2)
    if math.isfinite(snr):
        x = add_awgn(x, snr, (lead, None), seed=6)
    r = sfd_onset(x, cfg, 8, 2)
    assert r.method == "sfd"
    assert abs(r.sample_index - lead) <= 1


# --- collision receiver -------------------------------------------------------


def _collide(scr, rtm, seed, n=40):
    cfg = PhyConfig(S=7, f_s=1e6)
    s = np.random.SeedSequence(seed).generate_state(2)
    v = FrameSpec(8, random_symbols(cfg, n, int(s[0])), onset_offset=2 * cfg.samples_per_chirp(0))
    c = FrameSpec(8, random_symbols(cfg, n, int(s[1])))
    trace, truth = compose_collision(cfg, CollisionScene(v, c, rtm=rtm, scr_db=scr, snr_db=20.0, seed=seed))
    return classify_outcome(receive_frames(trace, cfg, n), truth)


def test_receiver_decodes_clean_frame():
    cfg = PhyConfig(S=7, f_s=1e6)
    syms = random_symbols(cfg, 30, 5)
    x = add_awgn(_frame(cfg, syms, lead=3000, seed=7), 10.0, (3000, None), seed=8)
    att = receive_frames(x, cfg, 30)
    assert att and att[0].committed and att[0].symbols == list(syms)
    assert abs(att[0].onset_sample - 3000) <= 2


@pytest.mark.parametrize("rtm", [0.0, 0.1, 0.3, 0.6])
def test_dominant_victim_received(rtm):
    assert _collide(60.0, rtm, 1) is OutcomeClass.VICTIM_RECEIVED
    assert _collide(20.0, rtm, 2) is OutcomeClass.VICTIM_RECEIVED


@pytest.mark.parametrize("seed", range(4))
def test_equal_power_mid_frame_collision_not_received(seed):
    assert _collide(0.0, 0.2, seed) in (OutcomeClass.STEALTHY_DROP, OutcomeClass.BAD_FRAME)


def test_strong_early_collider_captures_receiver():
    assert _collide(-20.0, 0.05, 3) is OutcomeClass.COLLISION_RECEIVED


def test_symbol_error_rate():
    assert symbol_error_rate([1, 2, 3], [1, 2, 3]) == 0
    assert symbol_error_rate([1, -1], [1, 2, 3, 4]) == 0.75
    assert symbol_error_rate([], []) == 0


class _Truth:
    victim_symbols = tuple(range(10))
    collider_symbols = tuple(range(10, 20))


@pytest.mark.parametrize(
    "attempts,expected",
    [
        ([], OutcomeClass.STEALTHY_DROP),
        ([FrameAttempt(0, 0, 8, True, list(range(10)))], OutcomeClass.VICTIM_RECEIVED),
        ([FrameAttempt(0, 0, 8, True, list(range(10, 20)))], OutcomeClass.COLLISION_RECEIVED),
        (
            [FrameAttempt(0, 0, 8, True, list(range(10))), FrameAttempt(9, 0, 8, True, list(range(10, 20)))],
            OutcomeClass.BOTH_RECEIVED,
        ),
        ([FrameAttempt(0, 0, 8, True, [5] * 10)], OutcomeClass.BAD_FRAME),
        ([FrameAttempt(0, 0, 8, True, [-1] * 10)], OutcomeClass.STEALTHY_DROP),
        ([FrameAttempt(0, 0, 4, False)], OutcomeClass.STEALTHY_DROP),
    ],
)
def test_classify_outcome_table(attempts, expected):
    assert classify_outcome(attempts, _Truth()) is expected


def test_base_chirp_unit_modulus():
    np.testing.assert_allclose(np.abs(base_chirp(CFG)), 1.0)
