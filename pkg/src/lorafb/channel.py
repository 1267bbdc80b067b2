"""Noise, collisions and the urban path-loss model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .signal import FrameSpec, IqTrace, PhyConfig, draw_theta, frame_length, synthesize_frame

NOISELESS = math.inf


def _support_slice(n: int, support) -> slice:
    if support is None:
        return slice(0, n)
    if not isinstance(support, slice):
        support = slice(*support)
    start, stop, _ = support.indices(n)
    if stop <= start:
        raise ValueError("signal support is empty")
    return slice(int(start), int(stop))


def signal_power(trace: IqTrace, support=None) -> float:
    return float(np.mean(np.abs(trace.samples[_support_slice(len(trace), support)]) ** 2))


def add_awgn(trace: IqTrace, snr_db: float, signal_support=None, seed=None) -> IqTrace:
    """Add circular Gaussian noise so that P_signal / (2 sigma^2) hits ``snr_db``.

    ``sigma^2`` is the per-component variance; the signal power is the mean
    of ``|s|^2`` over ``signal_support`` (a slice or ``(start, stop)``).
    """
    if math.isinf(snr_db) and snr_db > 0:
        return trace
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    noise = _noise(len(trace), signal_power(trace, signal_support), snr_db, seed)
    return IqTrace(trace.f_s, trace.samples + noise)


def _noise(n: int, p_sig: float, snr_db: float, seed) -> np.ndarray:
    sigma = math.sqrt(p_sig / (2.0 * 10.0 ** (snr_db / 10.0)))
    rng = np.random.default_rng(seed)
    return sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def measure_snr_db(noisy: IqTrace, clean: IqTrace, support=None) -> float:
    sl = _support_slice(len(clean), support)
    noise = noisy.samples - clean.samples
    return 10 * math.log10(np.mean(np.abs(clean.samples[sl]) ** 2) / np.mean(np.abs(noise) ** 2))


@dataclass(frozen=True)
class CollisionScene:
    victim: FrameSpec
    collider: FrameSpec
    rtm: float = 0.0
    scr_db: float = 0.0
    snr_db: float = NOISELESS
    replay_delay_s: float = 0.0
    replay_extra_fb_hz: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.rtm < 1.0:
            raise ValueError("rtm must be in [0, 1)")
        if not math.isfinite(self.scr_db):
            raise ValueError("scr_db must be finite")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite or +inf")
        if self.replay_delay_s < 0:
            raise ValueError("replay delay must be >= 0")


@dataclass
class GroundTruth:
    victim_symbols: tuple[int, ...]
    collider_symbols: tuple[int, ...]
    victim_onset: int
    victim_length: int
    collider_onset: int
    collider_length: int
    collider_amplitude: float
    replay_onset: int | None
    replay_overlaps_collision: bool
    theta_victim: float
    theta_collider: float
    seed: int
    noise_seed: int = field(default=0)


def compose_collision(cfg: PhyConfig, scene: CollisionScene) -> tuple[IqTrace, GroundTruth]:
    """Superimpose victim, scaled and delayed collider, and an optional replay.

    Offsets are measured from the victim onset (``victim.onset_offset``).
    Noise is added last, referenced to the victim's mean power.
    """
    ss = np.random.SeedSequence(scene.seed)
    s_victim, s_collider, s_noise = (int(c.generate_state(1)[0]) for c in ss.spawn(3))

    victim = scene.victim
    v_onset = victim.onset_offset
    v_len = frame_length(cfg, victim.n_chirps)
    c_onset = v_onset + int(math.floor(scene.rtm * v_len + 0.5))
    c_len = frame_length(cfg, scene.collider.n_chirps)

    theta_v = draw_theta(s_victim) if victim.chirp.theta_tx is None else victim.chirp.theta_tx
    theta_c = draw_theta(s_collider) if scene.collider.chirp.theta_tx is None else scene.collider.chirp.theta_tx
    v_trace = synthesize_frame(cfg, _with_theta(victim, theta_v))
    body_c = synthesize_frame(cfg, _with_theta(_no_offset(scene.collider), theta_c)).samples
    # collider amplitude is set relative to the victim so that SCR is exact at the receiver
    gain = (victim.chirp.amplitude / scene.collider.chirp.amplitude) * 10.0 ** (-scene.scr_db / 20.0)
    body_c = body_c * gain

    r_onset = None
    r_len = 0
    if scene.replay_delay_s > 0:
        r_onset = v_onset + int(math.floor(scene.replay_delay_s * cfg.f_s + 0.5))
        r_len = v_len
    end = max(v_onset + v_len, c_onset + c_len, (r_onset or 0) + r_len)

    x = np.zeros(end, dtype=np.complex128)
    x[: len(v_trace)] += v_trace.samples
    x[c_onset:c_onset + c_len] += body_c
    if r_onset is not None:
        replay = v_trace.samples[v_onset:]
        if scene.replay_extra_fb_hz:
            n = np.arange(replay.size)
            replay = replay * np.exp(2j * math.pi * scene.replay_extra_fb_hz * n / cfg.f_s)
        x[r_onset:r_onset + r_len] += replay

    overlap = r_onset is not None and r_onset < c_onset + c_len and c_onset < r_onset + r_len
    if math.isfinite(scene.snr_db):
        # referenced to the victim alone, not the composite
        p_v = signal_power(v_trace, (v_onset, v_onset + v_len))
        x = x + _noise(x.size, p_v, scene.snr_db, s_noise)
    noisy = IqTrace(cfg.f_s, x)
    truth = GroundTruth(
        victim_symbols=victim.symbols,
        collider_symbols=scene.collider.symbols,
        victim_onset=v_onset,
        victim_length=v_len,
        collider_onset=c_onset,
        collider_length=c_len,
        collider_amplitude=scene.collider.chirp.amplitude * gain,
        replay_onset=r_onset,
        replay_overlaps_collision=overlap,
        theta_victim=float(theta_v),
        theta_collider=float(theta_c),
        seed=scene.seed,
        noise_seed=s_noise,
    )
    return noisy, truth


def _with_theta(frame: FrameSpec, theta: float) -> FrameSpec:
    return replace(frame, chirp=replace(frame.chirp, theta_tx=float(theta)))


def _no_offset(frame: FrameSpec) -> FrameSpec:
    return replace(frame, onset_offset=0)


@dataclass(frozen=True)
class PathLossParams:
    """Urban LoRa path-loss model inputs (heights in m, frequency in MHz)."""

    f_mhz: float = 868.0
    h_b: float = 25.0
    h_m: float = 1.0
    min_height_m: float = 1.0
    min_distance_km: float = 0.001

    def __post_init__(self) -> None:
        if not self.f_mhz > 0:
            raise ValueError("f_mhz must be positive")
        if not (self.min_height_m > 0 and self.min_distance_km > 0):
            raise ValueError("floors must be positive")


def path_loss_db(p: PathLossParams, d_km, h_b=None, h_m=None):
    """Path loss in dB; accepts array distances.  ``h_b``/``h_m`` override ``p``."""
    h_b = p.h_b if h_b is None else h_b
    h_m = p.h_m if h_m is None else h_m
    vals = np.asarray(d_km, dtype=float)
    if not (np.all(np.isfinite(vals)) and math.isfinite(h_b) and math.isfinite(h_m)):
        raise ValueError("path loss inputs must be finite")
    hb = max(h_b, p.min_height_m)
    hm = max(h_m, p.min_height_m)
    d = np.maximum(vals, p.min_distance_km)
    lf = math.log10(p.f_mhz)
    lhb = math.log10(hb)
    L = (
        69.55
        + 26.16 * lf
        - 13.82 * lhb
        - (1.1 * lf - 0.7) * hm
        + (1.56 * lf - 0.8)
        + (44.9 - 6.55 * lhb) * np.log10(d)
    )
    return float(L) if L.ndim == 0 else L


def received_power_dbm(p_tx_dbm: float, params: PathLossParams, d_km, h_b=None, h_m=None):
    return p_tx_dbm - path_loss_db(params, d_km, h_b, h_m)
