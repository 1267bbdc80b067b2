"""Fine frequency-bias estimation from one preamble chirp.

Two time-domain estimators work on the received I/Q of a single, aligned,
symbol-0 up chirp:

* ``fb_linear_regression`` unwraps ``atan2(Q, I)``, removes the known chirp
  sweep and fits a line; the slope is ``2 pi delta``.
* ``fb_least_squares`` fits the noiseless template ``A exp(j theta(t))`` over
  ``(delta, phi)`` with differential evolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import differential_evolution

from .signal import TWO_PI, IqTrace, PhyConfig

MIN_SAMPLES = 16


@dataclass(frozen=True)
class FbEstimate:
    delta_hz: float
    method: str
    residual: float
    phase_rad: float = math.nan
    converged: bool = True


@dataclass(frozen=True)
class LsqConfig:
    delta_bounds_hz: tuple[float, float] = (-50e3, 50e3)
    population: int = 30
    max_generations: int = 200
    tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.delta_bounds_hz
        if not lo <= 0.0 <= hi or not lo < hi:
            raise ValueError("delta bounds must be an interval containing 0")
        if self.population < 10:
            raise ValueError("population must be >= 10")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def unwrap_phase(wrapped) -> np.ndarray:
    """Undo 2 pi jumps: every consecutive difference is mapped into (-pi, pi]."""
    p = np.asarray(wrapped, dtype=float)
    if p.size == 0:
        raise ValueError("empty phase sequence")
    d = np.diff(p)
    k = np.ceil((d - math.pi) / TWO_PI)
    out = np.empty_like(p)
    out[0] = p[0]
    out[1:] = p[0] + np.cumsum(d - TWO_PI * k)
    return out


def sweep_phase(cfg: PhyConfig, t: np.ndarray) -> np.ndarray:
    """Known part of a base up chirp's angle: (pi W^2 / 2^S) t^2 - pi W t."""
    return math.pi * cfg.sweep_rate * t * t - math.pi * cfg.W * t


def _times(chirp: IqTrace) -> np.ndarray:
    return np.arange(len(chirp)) / chirp.f_s


def fb_linear_regression(chirp: IqTrace, cfg: PhyConfig) -> FbEstimate:
    if len(chirp) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    t = _times(chirp)
    theta = unwrap_phase(np.angle(chirp.samples))
    y = theta - sweep_phase(cfg, t)
    tm, ym = t.mean(), y.mean()
    dt = t - tm
    slope = float(np.dot(dt, y - ym) / np.dot(dt, dt))
    intercept = ym - slope * tm
    rmse = float(np.sqrt(np.mean((y - intercept - slope * t) ** 2)))
    return FbEstimate(slope / TWO_PI, "linreg", rmse, float(intercept % TWO_PI))


def estimate_amplitude(trace: IqTrace, cfg: PhyConfig, onset, n_chirps: int = 2) -> float:
    """Template amplitude from mean powers: sqrt(max(0, P_signal - P_noise)).

    The noise power comes from everything before ``onset`` (at least 2^S
    samples); the signal power from ``n_chirps`` chirps after it.
    """
    start = onset if isinstance(onset, (int, np.integer)) else onset.sample_index
    if start < cfg.n_bins:
        raise ValueError("need at least 2^S noise-only samples before the onset")
    stop = min(len(trace), start + cfg.chirp_boundary(n_chirps))
    if stop <= start:
        raise ValueError("no signal after onset")
    x = trace.samples
    p_noise = float(np.mean(np.abs(x[:start]) ** 2))
    p_sig = float(np.mean(np.abs(x[start:stop]) ** 2))
    return math.sqrt(max(0.0, p_sig - p_noise))


def lsq_objective(chirp: IqTrace, cfg: PhyConfig, A: float, delta: float, phi: float) -> float:
    """Sum of squared I/Q residuals against the noiseless template, computed literally."""
    t = _times(chirp)
    theta = sweep_phase(cfg, t) + TWO_PI * delta * t + phi
    return float(np.sum((chirp.q - A * np.sin(theta)) ** 2 + (chirp.i - A * np.cos(theta)) ** 2))


class _Objective:
    """Vectorised form of ``lsq_objective``.

    Expanding the square gives
    ``sum|r|^2 + N A^2 - 2 A Re(exp(-j phi) sum y(t) exp(-j 2 pi delta t))``
    with ``y`` the dechirped trace, so each candidate costs one pass over y.
    """

    def __init__(self, chirp: IqTrace, cfg: PhyConfig, A: float):
        self.t = _times(chirp)
        self.y = chirp.samples * np.exp(-1j * sweep_phase(cfg, self.t))
        self.const = float(np.sum(np.abs(chirp.samples) ** 2)) + len(chirp) * A * A
        self.A = A

    def correlate(self, delta) -> np.ndarray:
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        out = np.empty(delta.size, dtype=np.complex128)
        # chunked to bound memory on long chirps
        step = max(1, 2_000_000 // max(1, self.t.size))
        for i in range(0, delta.size, step):
            d = delta[i:i + step]
            out[i:i + step] = np.exp(-2j * math.pi * np.outer(d, self.t)) @ self.y
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        delta, phi = x[0], x[1]
        z = self.correlate(delta)
        return self.const - 2.0 * self.A * np.real(np.exp(-1j * np.atleast_1d(phi)) * z)


def _spectral_peak(obj: _Objective, f_s: float, lo: float, hi: float) -> float:
    """Frequency of the largest zero-padded periodogram bin of the dechirped trace."""
    n = obj.y.size
    nfft = 1 << int(math.ceil(math.log2(4 * n)))
    spec = np.abs(np.fft.fft(obj.y, nfft))
    freqs = np.fft.fftfreq(nfft, 1.0 / f_s)
    ok = (freqs >= lo) & (freqs <= hi)
    return float(freqs[ok][np.argmax(spec[ok])])


def fb_least_squares(chirp: IqTrace, cfg: PhyConfig, A: float, lsq: LsqConfig | None = None) -> FbEstimate:
    """Least-squares (delta, phi) fit by differential evolution.

    The initial population is a seeded Latin hypercube over the bounds with a
    few members placed on the dechirped periodogram peak, so the search starts
    inside the main lobe of the objective.
    """
    lsq = lsq or LsqConfig()
    if len(chirp) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    if not A > 0:
        raise ValueError("amplitude must be positive")
    lo, hi = lsq.delta_bounds_hz
    obj = _Objective(chirp, cfg, A)

    rng = np.random.default_rng(lsq.seed)
    pop = lsq.population
    u = (rng.permuted(np.tile(np.arange(pop), (2, 1)), axis=1).T + rng.random((pop, 2))) / pop
    init = np.column_stack([lo + u[:, 0] * (hi - lo), u[:, 1] * TWO_PI])
    f0 = _spectral_peak(obj, chirp.f_s, lo, hi)
    half_bin = chirp.f_s / len(chirp) / 2
    seeds = np.clip(f0 + half_bin * np.array([0.0, -0.5, 0.5, -1.0, 1.0]), lo, hi)
    phi0 = float(np.angle(obj.correlate(f0)[0]) % TWO_PI)
    init[: seeds.size, 0] = seeds
    init[: seeds.size, 1] = (phi0 + np.linspace(-0.5, 0.5, seeds.size)) % TWO_PI

    res = differential_evolution(
        obj,
        bounds=[(lo, hi), (0.0, TWO_PI)],
        strategy="best1bin",
        maxiter=lsq.max_generations,
        tol=lsq.tolerance,
        # relative to the trace energy, since the noiseless optimum is ~0
        atol=lsq.tolerance * obj.const,
        init=init,
        seed=lsq.seed,
        polish=True,
        vectorized=True,
        updating="deferred",
    )
    delta, phi = float(res.x[0]), float(res.x[1]) % TWO_PI
    return FbEstimate(delta, "lsq", float(res.fun), phi, bool(res.success))
