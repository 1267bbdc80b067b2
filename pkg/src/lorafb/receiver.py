"""Receiver-side processing: onset pickers, dechirp/FFT demodulation, coarse FB."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.signal import hilbert

from .signal import IqTrace, PhyConfig, base_chirp


class NoFrame(Exception):
    """No preamble could be located in the trace."""


@dataclass(frozen=True)
class OnsetResult:
    sample_index: int
    time_s: float
    method: str
    score: float


@dataclass
class DemodResult:
    onset: OnsetResult
    preamble_bin: int
    symbols: list[int]
    peak_magnitudes: list[float]
    coarse_fb_hz: float


class OutcomeClass(str, Enum):
    VICTIM_RECEIVED = "VictimReceived"
    COLLISION_RECEIVED = "CollisionReceived"
    BOTH_RECEIVED = "BothReceived"
    STEALTHY_DROP = "StealthyDrop"
    BAD_FRAME = "BadFrame"


def _onset(trace: IqTrace, idx: int, method: str, score: float) -> OnsetResult:
    return OnsetResult(int(idx), idx / trace.f_s, method, float(score))


ENV_WARMUP = 16


def envelope_onset(trace: IqTrace) -> OnsetResult:
    """ENV picker on the Hilbert envelope of I.

    Each envelope sample is compared with the largest envelope value before
    it, so dips at chirp boundaries and Hilbert leakage ahead of the onset do
    not register as rises; the first ``ENV_WARMUP`` samples only seed that
    maximum.  ``score`` is the winning ratio; values near 1 mean there is no
    visible onset.
    """
    if len(trace) < 2 * ENV_WARMUP:
        raise ValueError(f"trace needs at least {2 * ENV_WARMUP} samples")
    x = trace.i
    if not np.any(x):
        raise ValueError("all-zero trace")
    env = np.abs(hilbert(x))
    floor = 1e-2 * env.max()
    prev = np.maximum.accumulate(env)[ENV_WARMUP - 1:-1]
    ratio = (env[ENV_WARMUP:] + floor) / (prev + floor)
    j = int(np.argmax(ratio))
    return _onset(trace, j + ENV_WARMUP, "env", ratio[j])


def aic_curve(x: np.ndarray) -> np.ndarray:
    """Two-segment variance-split AIC for every split point.

    ``AIC[k] = k ln var(x[:k]) + (N - k - 1) ln var(x[k:])`` where ``var`` is the
    mean squared deviation (``|.|^2`` for complex input).  Split points closer
    than two samples to either end are +inf.
    """
    x = np.asarray(x)
    N = x.size
    p = np.abs(x) ** 2 if np.iscomplexobj(x) else x * x
    c1 = np.cumsum(x)
    c2 = np.cumsum(p)
    k = np.arange(1, N)
    s1, q1 = c1[:-1], c2[:-1]
    s2, q2 = c1[-1] - s1, c2[-1] - q1
    var1 = q1 / k - np.abs(s1 / k) ** 2
    var2 = q2 / (N - k) - np.abs(s2 / (N - k)) ** 2
    floor = 1e-24 * max(float(np.mean(p)), 1e-300)
    var1 = np.maximum(var1, floor)
    var2 = np.maximum(var2, floor)
    out = np.full(N, np.inf)
    out[1:] = k * np.log(var1) + (N - k - 1) * np.log(var2)
    out[:2] = np.inf
    out[N - 2:] = np.inf
    return out


def aic_onset(
    trace: IqTrace,
    cfg: PhyConfig | None = None,
    window: int | None = None,
    coarse: str = "aic",
) -> OnsetResult:
    """Two-pass minimum-AIC picker on the complex samples.

    Pass one picks a coarse onset over the whole trace (``coarse="aic"``) or
    with the ENV picker (``coarse="env"``); pass two re-runs the AIC split
    inside one chirp (or ``window`` samples) either side of it.  ``score`` is
    the AIC depth per sample, mean(AIC) - min(AIC) over the window length.
    """
    if len(trace) < 64:
        raise ValueError("AIC picker needs at least 64 samples")
    x = trace.samples
    if coarse == "env":
        first = envelope_onset(trace).sample_index
    elif coarse == "aic":
        first = int(np.argmin(aic_curve(x)))
    else:
        raise ValueError(f"unknown coarse picker {coarse!r}")
    if window is None and cfg is not None:
        window = cfg.samples_per_chirp(0)
    if window is None:
        lo, hi = 0, len(trace)
    else:
        lo, hi = max(0, first - window), min(len(trace), first + window)
    if hi - lo < 16:
        raise ValueError("AIC window shorter than 16 samples")
    curve = aic_curve(x[lo:hi])
    k = int(np.argmin(curve))
    finite = curve[np.isfinite(curve)]
    score = (float(np.mean(finite)) - float(curve[k])) / (hi - lo)
    return _onset(trace, lo + k, "aic", score)


def decimate_to_chip_rate(trace: IqTrace, cfg: PhyConfig, onset, n_chirps: int | None = None) -> np.ndarray:
    """Nearest-sample pick of 2^S chips per chirp, shape ``(n_chirps, 2^S)``.

    Chip ``m`` of chirp ``k`` is taken at ``onset + round((k 2^S + m) f_s / W)``.
    ``n_chirps=None`` takes every whole chirp the trace holds.
    """
    start = onset.sample_index if isinstance(onset, OnsetResult) else int(onset)
    M = cfg.n_bins
    ratio = cfg.f_s / cfg.W
    avail = len(trace) - start
    if n_chirps is None:
        n_chirps = 0
        while math.floor(((n_chirps + 1) * M - 1) * ratio + 0.5) < avail:
            n_chirps += 1
    if n_chirps < 1 or start < 0:
        raise ValueError("trace too short for one chirp after onset")
    chips = np.arange(n_chirps * M)
    idx = start + np.floor(chips * ratio + 0.5).astype(np.int64)
    if idx[-1] >= len(trace):
        raise ValueError("trace too short for the requested chirps")
    return trace.samples[idx].reshape(n_chirps, M)


def dechirp_fft(chirp_samples: np.ndarray, cfg: PhyConfig) -> tuple[int, np.ndarray]:
    """Multiply by the conjugate base up chirp and take a 2^S-point FFT."""
    x = np.asarray(chirp_samples)
    if x.shape != (cfg.n_bins,):
        raise ValueError(f"expected {cfg.n_bins} chips, got shape {x.shape}")
    mags = np.abs(np.fft.fft(x * base_chirp(cfg, "up").conj()))
    return int(np.argmax(mags)), mags


def _dechirp_bins(blocks: np.ndarray, cfg: PhyConfig, direction: str = "up"):
    mags = np.abs(np.fft.fft(blocks * base_chirp(cfg, direction).conj(), axis=-1))
    return np.argmax(mags, axis=-1), mags


def detect_direction(trace: IqTrace, cfg: PhyConfig, onset) -> str:
    """Up or down, judged from exactly one chirp time of samples."""
    start = onset.sample_index if isinstance(onset, OnsetResult) else int(onset)
    L = cfg.samples_per_chirp(0)
    if start < 0 or len(trace) - start < L:
        raise ValueError("need one full chirp after onset")
    one = trace.slice(start, start + L)
    assert len(one) == L
    block = decimate_to_chip_rate(one, cfg, 0, 1)[0]
    ratios = {}
    for d in ("up", "down"):
        mags = np.abs(np.fft.fft(block * base_chirp(cfg, d).conj()))
        ratios[d] = mags.max() / max(mags.mean(), 1e-300)
    return "up" if ratios["up"] >= ratios["down"] else "down"


def bin_to_hz(b: int, cfg: PhyConfig) -> float:
    M = cfg.n_bins
    signed = b - M if b >= M // 2 else b
    return signed * cfg.bin_hz


def integrated_chips(trace: IqTrace, cfg: PhyConfig, onset, chirp_index: int = 0) -> np.ndarray:
    """Full-rate dechirp of one up chirp, summed over each chip interval.

    Returns 2^S chip values whose FFT bins are multiples of W / 2^S; every
    sample contributes, so the full-rate processing gain is kept.
    """
    start = onset.sample_index if isinstance(onset, OnsetResult) else int(onset)
    s0 = start + cfg.chirp_boundary(chirp_index)
    L = cfg.samples_per_chirp(chirp_index)
    if s0 < 0 or s0 + L > len(trace):
        raise ValueError("chirp runs past the trace")
    t = np.arange(L) / cfg.f_s
    y = trace.samples[s0:s0 + L] * np.exp(-1j * (math.pi * cfg.sweep_rate * t * t - math.pi * cfg.W * t))
    edges = np.floor(np.arange(cfg.n_bins) * cfg.f_s / cfg.W + 0.5).astype(np.int64)
    return np.add.reduceat(y, edges)


def coarse_fb(trace: IqTrace, cfg: PhyConfig, onset, chirp_index: int = 0) -> float:
    """Dechirp-FFT frequency bias, quantised to W / 2^S, in [-W/2, W/2)."""
    chips = integrated_chips(trace, cfg, onset, chirp_index)
    return bin_to_hz(int(np.argmax(np.abs(np.fft.fft(chips)))), cfg)


def _circ_close(a: int, b: int, M: int, tol: int = 1) -> bool:
    d = (a - b) % M
    return min(d, M - d) <= tol


def demodulate_frame(
    trace: IqTrace,
    cfg: PhyConfig,
    expected_symbol_count: int,
    preamble_len: int = 8,
    onset: OnsetResult | int | None = None,
    sfd_len: int = 0,
) -> DemodResult:
    """Demodulate a frame: symbol = (data bin - preamble bin) mod 2^S."""
    if onset is None:
        try:
            onset = aic_onset(trace, cfg)
        except ValueError as exc:
            raise NoFrame(str(exc)) from exc
    elif not isinstance(onset, OnsetResult):
        onset = _onset(trace, int(onset), "given", math.nan)
    n = preamble_len + sfd_len + expected_symbol_count
    try:
        blocks = decimate_to_chip_rate(trace, cfg, onset, n)
    except ValueError as exc:
        raise NoFrame(str(exc)) from exc
    bins, mags = _dechirp_bins(blocks, cfg)
    M = cfg.n_bins
    # the preamble bin is read from an averaged spectrum, robust to one bad chirp
    pre = int(np.argmax(mags[:preamble_len].sum(axis=0)))
    symbols = [int((b - pre) % M) for b in bins[preamble_len + sfd_len:]]
    peaks = [float(m[b]) for m, b in zip(mags, bins)]
    return DemodResult(onset, pre, symbols, peaks, bin_to_hz(pre, cfg))


# ---------------------------------------------------------------------------
# Collision-aware receiver
# ---------------------------------------------------------------------------

HEADER_SYMBOLS = 8
# fraction of a window's energy carried by its strongest tone for the window
# to count as interference-free (about 8.3 dB in-window SIR)
CLEAN_FRACTION = 0.87
LOCK_MIN_RUN = 3
ZERO_PAD = 8


@dataclass
class FrameAttempt:
    """One preamble lock and what was demodulated after it.

    ``symbols`` holds -1 for erased windows (not interference-free).
    ``committed`` is False when the lock never reached ``preamble_len - 2``
    clean chirps; such locks are dropped without demodulation.
    """

    onset_sample: int
    run_start: int
    run_length: int
    committed: bool
    symbols: list[int] = field(default_factory=list)
    relocked: bool = False

    @property
    def header_ok(self) -> bool:
        head = self.symbols[:HEADER_SYMBOLS]
        return bool(head) and all(s >= 0 for s in head)


def first_onset(trace: IqTrace, cfg: PhyConfig, margin_db: float = 6.0) -> int:
    """First sample where power rises above the leading noise floor.

    Block powers (1/8 chirp) are compared against the first block; the first
    block more than ``margin_db`` above it is refined with the AIC split.
    """
    B = max(16, cfg.samples_per_chirp(0) // 8)
    nb = len(trace) // B
    if nb < 3:
        raise NoFrame("trace too short")
    p = np.mean(np.abs(trace.samples[: nb * B].reshape(nb, B)) ** 2, axis=1)
    if float(p.max()) == 0.0:
        raise NoFrame("all-zero trace")
    thresh = max(p[0] * 10 ** (margin_db / 10), 1e-12 * float(p.max()))
    above = np.flatnonzero(p > thresh)
    if above.size == 0:
        raise NoFrame("no energy above the noise floor")
    k = int(above[0])
    lo, hi = max(0, (k - 2) * B), min(len(trace), (k + 2) * B)
    return lo + int(np.argmin(aic_curve(trace.samples[lo:hi])))


def _pick(trace: IqTrace, cfg: PhyConfig, starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chip-rate windows starting at arbitrary sample indices; returns (blocks, valid)."""
    offs = np.floor(np.arange(cfg.n_bins) * cfg.f_s / cfg.W + 0.5).astype(np.int64)
    idx = np.asarray(starts, dtype=np.int64)[:, None] + offs[None, :]
    valid = (idx[:, 0] >= 0) & (idx[:, -1] < len(trace))
    blocks = trace.samples[np.clip(idx, 0, len(trace) - 1)]
    return blocks, valid


def _tone_stats(blocks: np.ndarray, cfg: PhyConfig):
    """Fractional peak bin, peak magnitude and single-tone energy fraction per window.

    Zero padding keeps a tone between bins from being penalised; the
    fraction |peak|^2 / (2^S * energy) is 1 for a pure tone.
    """
    M = cfg.n_bins
    z = np.fft.fft(blocks * base_chirp(cfg, "up").conj(), n=ZERO_PAD * M, axis=-1)
    p = np.abs(z) ** 2
    k = np.argmax(p, axis=1)
    rows = np.arange(len(k))
    energy = np.sum(np.abs(blocks) ** 2, axis=1)
    frac = p[rows, k] / np.maximum(M * energy, 1e-300)
    # parabolic interpolation on the padded magnitude
    n = ZERO_PAD * M
    a, b, c = (np.sqrt(p[rows, (k + j) % n]) for j in (-1, 0, 1))
    den = a - 2 * b + c
    off = np.where(np.abs(den) > 1e-12 * b, 0.5 * (a - c) / np.where(den == 0, 1, den), 0.0)
    return ((k + off) / ZERO_PAD) % M, np.sqrt(p[rows, k]), frac


def _chip_shift(fbin, M: int) -> np.ndarray:
    """Signed chip offset, in (-M/2, M/2], of an up chirp that dechirps to ``fbin``."""
    e = (M - np.asarray(fbin, dtype=float)) % M
    return np.where(e > M / 2, e - M, e)


def _grid(trace: IqTrace, cfg: PhyConfig, start: int):
    """Per-chirp statistics on the grid anchored at ``start``.

    Each window is judged after fine alignment to its own peak: a chip-rate
    window that straddles a chirp boundary at a fractional chip offset sees a
    phase jump at the frequency wrap and would look impure otherwise.
    """
    M = cfg.n_bins
    n = 0
    while start + cfg.chirp_boundary(n + 1) <= len(trace):
        n += 1
    if n == 0:
        return None
    starts = start + np.array([cfg.chirp_boundary(i) for i in range(n)])
    blocks, _ = _pick(trace, cfg, starts)
    fbin, peak, _ = _tone_stats(blocks, cfg)
    shift = np.floor(_chip_shift(fbin, M) * cfg.f_s / cfg.W + 0.5).astype(np.int64)
    aligned, valid = _pick(trace, cfg, starts + shift)
    _, _, frac = _tone_stats(aligned, cfg)
    frac = np.where(valid, frac, 0.0)
    top = np.rint(fbin).astype(int) % M
    return top, fbin, peak, frac


def _refine_shift(trace: IqTrace, cfg: PhyConfig, start: int, r0: int, n: int, shift: int) -> int:
    """Sample-level timing for a locked run.

    Once windows sit within a chip of the preamble grid they no longer
    straddle a chirp boundary, so the preamble tone's fractional bin equals
    minus the timing error in chips; a few fixed-point passes remove it.
    """
    M = cfg.n_bins
    ratio = cfg.f_s / cfg.W
    starts = start + np.array([cfg.chirp_boundary(i) for i in range(r0, r0 + n)])
    for _ in range(3):
        blocks, valid = _pick(trace, cfg, starts + shift)
        if not valid.any():
            break
        fb = _tone_stats(blocks[valid], cfg)[0]
        step = int(math.floor(float(_chip_shift(_median_bin(fb, M), M)) * ratio + 0.5))
        if step == 0:
            break
        shift += step
    return shift


def _median_bin(fbin: np.ndarray, M: int) -> float:
    """Circular median; robust to the odd window that holds a data chirp."""
    d = (fbin - fbin[0] + M / 2) % M - M / 2
    return float((fbin[0] + np.median(d)) % M)


def _runs(top, clean, M):
    """Maximal runs of clean windows whose bins agree within one."""
    runs = []
    i, n = 0, len(top)
    while i < n:
        if not clean[i]:
            i += 1
            continue
        j = i + 1
        while j < n and clean[j] and _circ_close(int(top[j]), int(top[i]), M):
            j += 1
        runs.append((i, j - i, int(top[i])))
        i = j
    return runs


def receive_frames(
    trace: IqTrace,
    cfg: PhyConfig,
    n_symbols: int,
    preamble_len: int = 8,
    onset: int | None = None,
) -> list[FrameAttempt]:
    """Sequential dechirp receiver with preamble locking and re-locking.

    Windows are laid on a grid anchored at the first energy onset.  A window
    is clean when one tone carries at least ``CLEAN_FRACTION`` of its energy.
    A preamble candidate is a run of at least three clean windows on one
    bin; it commits once the run reaches ``preamble_len - 2`` windows, and a
    later, stronger run replaces an uncommitted one (re-lock).  A committed
    lock is realigned to its chip offset and its data windows demodulated;
    unclean data windows are erasures (-1).  Scanning resumes after the
    decoded frame.  Frequency bias is assumed well below one bin.
    """
    M = cfg.n_bins
    commit_len = max(LOCK_MIN_RUN, preamble_len - 2)
    start = first_onset(trace, cfg) if onset is None else int(onset)
    attempts: list[FrameAttempt] = []
    while True:
        stats = _grid(trace, cfg, start)
        if stats is None:
            return attempts
        top, fbin, peak, frac = stats
        lock = None
        for r0, n, b in _runs(top, frac >= CLEAN_FRACTION, M):
            if n < LOCK_MIN_RUN:
                continue
            strength = float(np.median(peak[r0:r0 + n]))
            if lock is None or (not lock[3] and strength > lock[4]):
                lock = (r0, n, b, n >= commit_len, strength)
            if lock[3]:
                break
        if lock is None:
            return attempts
        r0, n, b, committed, _ = lock
        shift = int(math.floor(float(_chip_shift(_median_bin(fbin[r0:r0 + n], M), M)) * cfg.f_s / cfg.W + 0.5))
        shift = _refine_shift(trace, cfg, start, r0, n, shift)
        frame_onset = start + cfg.chirp_boundary(r0) + shift
        attempt = FrameAttempt(frame_onset, r0, n, committed, relocked=bool(attempts) or r0 > 0)
        attempts.append(attempt)
        if not committed:
            return attempts
        # data starts where the run ends, capped at one preamble past its start
        data_win = min(r0 + n, r0 + preamble_len)
        data_start = start + cfg.chirp_boundary(data_win) + shift
        n_avail = 0
        while n_avail < n_symbols and data_start + cfg.chirp_boundary(n_avail + 1) <= len(trace):
            n_avail += 1
        if n_avail:
            starts = data_start + np.array([cfg.chirp_boundary(i) for i in range(n_avail)])
            blocks, _ = _pick(trace, cfg, starts)
            fb, _, frac = _tone_stats(blocks, cfg)
            # realignment puts the preamble on bin 0, so data bins are symbols
            attempt.symbols = [int(round(f)) % M if q >= CLEAN_FRACTION else -1 for f, q in zip(fb, frac)]
        if n_avail < n_symbols:
            return attempts
        start = data_start + cfg.chirp_boundary(n_symbols)


def symbol_error_rate(decoded, truth) -> float:
    truth = list(truth)
    if not truth:
        return 0.0
    dec = list(decoded) + [-1] * max(0, len(truth) - len(decoded))
    return sum(d != t for d, t in zip(dec, truth)) / len(truth)


def classify_outcome(attempts: list[FrameAttempt], truth, ser_limit: float = 0.1) -> OutcomeClass:
    """Map receiver attempts to an outcome using the simulation ground truth.

    A decoded frame matches a transmitter when its symbol error rate is below
    ``ser_limit`` (erasures count as errors).  A committed lock whose header
    symbols are erased is dropped silently, like a radio that cannot parse
    the header; a readable header with a failing payload is a bad frame.
    """
    got_v = got_c = False
    bad = False
    for a in attempts:
        if not a.committed or not a.symbols:
            continue
        if symbol_error_rate(a.symbols, truth.victim_symbols) < ser_limit:
            got_v = True
        elif symbol_error_rate(a.symbols, truth.collider_symbols) < ser_limit:
            got_c = True
        elif a.header_ok:
            bad = True
    if got_v and got_c:
        return OutcomeClass.BOTH_RECEIVED
    if got_v:
        return OutcomeClass.VICTIM_RECEIVED
    if got_c:
        return OutcomeClass.COLLISION_RECEIVED
    if bad:
        return OutcomeClass.BAD_FRAME
    return OutcomeClass.STEALTHY_DROP


def _padded_peak(power: np.ndarray, pad: int) -> float:
    """Fractional bin of the largest entry of a zero-padded power spectrum."""
    n = power.size
    k = int(np.argmax(power))
    a, b, c = (math.sqrt(power[(k + j) % n]) for j in (-1, 0, 1))
    den = a - 2 * b + c
    off = 0.5 * (a - c) / den if abs(den) > 1e-12 * b else 0.0
    return ((k + off) / pad) % (n // pad)


def sfd_onset(trace: IqTrace, cfg: PhyConfig, preamble_len: int = 8, sfd_len: int = 2, pad: int = 8) -> OnsetResult:
    """Frame onset from the preamble (up chirps) and the SFD (down chirps).

    A window late by ``e`` chips dechirps to bin ``delta/bin + e`` against an
    up reference and ``delta/bin - e`` against a down reference, so the two
    peaks give the timing free of the frequency bias.  The whole trace is
    searched on a chirp grid; the M/2 and whole-chirp ambiguities are settled
    by scoring every candidate alignment, and the fractional peaks then set
    the onset to sub-sample precision.  Works far below the SNR at which
    the power step is visible.
    """
    if sfd_len < 1:
        raise ValueError("sfd_onset needs at least one down chirp")
    M = cfg.n_bins
    ratio = cfg.f_s / cfg.W
    n_frame = preamble_len + sfd_len
    K = 0
    while cfg.chirp_boundary(K + 1) <= len(trace):
        K += 1
    if K < n_frame:
        raise NoFrame("trace shorter than preamble + SFD")
    up = base_chirp(cfg, "up").conj()
    dn = base_chirp(cfg, "down").conj()

    def spectra(starts, ref, n=None):
        blocks, valid = _pick(trace, cfg, np.asarray(starts))
        return np.abs(np.fft.fft(blocks * ref, n=n, axis=-1)) ** 2, valid

    grid = np.array([cfg.chirp_boundary(k) for k in range(K)])
    U, _ = spectra(grid, up)
    D, _ = spectra(grid, dn)
    run = max(1, preamble_len - 1)
    best = (-1.0, 0, 0)
    for k0 in range(K - run + 1):
        s = U[k0:k0 + run].sum(axis=0)
        b = int(np.argmax(s))
        if s[b] > best[0]:
            best = (float(s[b]), k0, b)
    _, k0, b_up = best
    sfd_win = [k for k in range(k0 + run - 1, k0 + run + sfd_len + 1) if k < K]
    ks = max(sfd_win, key=lambda k: D[k].max())
    b_dn = int(np.argmax(D[ks]))

    # candidates are scored and refined at the full sample rate: a window half
    # a chirp off holds two tones W apart there, which chip-rate sampling aliases
    Lw = int(math.floor(cfg.f_s * cfg.chirp_time()))
    t = np.arange(Lw) / cfg.f_s
    sweep = np.exp(-1j * (math.pi * cfg.sweep_rate * t * t - math.pi * cfg.W * t))
    refs = {"up": sweep, "down": sweep.conj()}

    def full(starts, direction, n=None):
        starts = np.asarray(starts)
        if starts.min() < 0 or starts.max() + Lw > len(trace):
            return None
        x = trace.samples[starts[:, None] + np.arange(Lw)[None, :]]
        return np.abs(np.fft.fft(x * refs[direction], n=n, axis=-1)) ** 2

    e0 = ((b_up - b_dn) % M) / 2.0
    best_n0, best_score = None, -1.0
    for e in (e0, e0 + M / 2):
        base = grid[k0] - int(round(e * ratio))
        for j in range(-2, 3):
            n0 = base + cfg.chirp_boundary(j) if j >= 0 else base - cfg.chirp_boundary(-j)
            starts = n0 + np.array([cfg.chirp_boundary(i) for i in range(n_frame)])
            Up = full(starts[:preamble_len], "up")
            Dn = full(starts[preamble_len:], "down")
            if Up is None or Dn is None:
                continue
            score = float(np.max(Up.sum(axis=0) + Dn.sum(axis=0)))
            if score > best_score:
                best_n0, best_score = n0, score
    if best_n0 is None:
        raise NoFrame("no complete preamble + SFD alignment in the trace")

    n0 = best_n0
    bin_w = cfg.f_s / Lw
    for _ in range(4):
        starts = n0 + np.array([cfg.chirp_boundary(i) for i in range(n_frame)])
        Up = full(starts[:preamble_len], "up", pad * Lw)
        Dn = full(starts[preamble_len:], "down", pad * Lw)
        if Up is None or Dn is None:
            break
        n_b = Lw
        f_up = _padded_peak(Up.sum(axis=0), pad)
        f_dn = _padded_peak(Dn.sum(axis=0), pad)
        # late by tau: up tone at delta + rate*tau, down tone at delta - rate*tau
        d_bins = (f_up - f_dn + n_b / 2) % n_b - n_b / 2
        tau = d_bins * bin_w / (2.0 * cfg.sweep_rate)
        step = int(math.floor(tau * cfg.f_s + 0.5))
        if step == 0:
            break
        n0 -= step
    if n0 < 0:
        raise NoFrame("frame starts before the trace")
    return _onset(trace, n0, "sfd", best_score / max(1.0, float(np.mean(U))))
