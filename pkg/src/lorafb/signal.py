"""Ideal LoRa CSS baseband synthesis.

The receiver sees ``I = (A/2) cos(theta)`` and ``Q = (A/2) sin(theta)`` where
the angle of a base up chirp is

    theta(t) = (pi W^2 / 2^S) t^2 - pi W t + 2 pi delta t + theta_tx - theta_rx

with ``delta = delta_tx - delta_rx``.  Data chirps start ``s * W / 2^S`` higher
and wrap back to ``-W/2`` once they reach the top of the band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
Direction = Literal["up", "down"]

# slack for float round-off when checking t against the chirp duration
_T_EPS = 1e-12


@dataclass(frozen=True)
class PhyConfig:
    """Channel and radio parameters shared by every chirp of a capture."""

    f_c: float = 869.75e6
    W: float = 125e3
    S: int = 7
    f_s: float = 2e6
    delta_rx: float = 0.0

    def __post_init__(self) -> None:
        if int(self.S) != self.S or not 6 <= self.S <= 12:
            raise ValueError(f"spreading factor must be an integer in [6, 12], got {self.S}")
        if not self.W > 0:
            raise ValueError("bandwidth must be positive")
        if not self.f_s >= 2 * self.W:
            raise ValueError(f"sample rate {self.f_s} below 2*W = {2 * self.W}")
        if not self.f_c > 0:
            raise ValueError("carrier frequency must be positive")

    @property
    def n_bins(self) -> int:
        return 1 << self.S

    @property
    def bin_hz(self) -> float:
        """Dechirp-FFT resolution, W / 2^S."""
        return self.W / self.n_bins

    @property
    def sweep_rate(self) -> float:
        """Chirp slope W^2 / 2^S in Hz/s."""
        return self.W * self.W / self.n_bins

    def chirp_time(self) -> float:
        return self.n_bins / self.W

    def chirp_boundary(self, k: int) -> int:
        """Sample index where chirp ``k`` starts, rounded against the continuous grid."""
        return int(math.floor(k * self.f_s * self.n_bins / self.W + 0.5))

    def samples_per_chirp(self, k: int = 0) -> int:
        return self.chirp_boundary(k + 1) - self.chirp_boundary(k)


@dataclass(frozen=True)
class ChirpSpec:
    """One chirp as emitted by a transmitter.

    ``theta_tx=None`` means "unknown": synthesis draws it uniformly in
    [0, 2pi) from the caller's seed.
    """

    direction: Direction = "up"
    symbol: int = 0
    amplitude: float = 2.0
    delta_tx: float = 0.0
    theta_tx: float | None = None

    def __post_init__(self) -> None:
        if self.direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")
        if self.symbol < 0:
            raise ValueError("symbol must be non-negative")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")


@dataclass(frozen=True)
class FrameSpec:
    """Frame layout: silence, preamble up chirps, optional SFD down chirps, data.

    ``sfd_len`` defaults to 0 (no start-of-frame delimiter).
    """

    preamble_len: int = 8
    symbols: tuple[int, ...] = ()
    chirp: ChirpSpec = field(default_factory=ChirpSpec)
    onset_offset: int = 0
    sfd_len: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        if self.preamble_len < 1:
            raise ValueError("preamble needs at least one chirp")
        if self.onset_offset < 0:
            raise ValueError("onset_offset must be >= 0")
        if self.sfd_len < 0:
            raise ValueError("sfd_len must be >= 0")
        if any(s < 0 for s in self.symbols):
            raise ValueError("symbols must be non-negative")

    @property
    def n_chirps(self) -> int:
        return self.preamble_len + self.sfd_len + len(self.symbols)

    @property
    def data_start_chirp(self) -> int:
        return self.preamble_len + self.sfd_len

    def check(self, cfg: PhyConfig) -> None:
        bad = [s for s in self.symbols if s >= cfg.n_bins]
        if bad or self.chirp.symbol >= cfg.n_bins:
            raise ValueError(f"symbols must be < 2^S = {cfg.n_bins}")


@dataclass(frozen=True, eq=False)
class IqTrace:
    """Complex baseband capture: ``samples = I + jQ`` at rate ``f_s``."""

    f_s: float
    samples: np.ndarray

    def __post_init__(self) -> None:
        if not self.f_s > 0:
            raise ValueError("sample rate must be positive")
        x = np.array(self.samples, dtype=np.complex128).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("trace contains non-finite samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def i(self) -> np.ndarray:
        return self.samples.real

    @property
    def q(self) -> np.ndarray:
        return self.samples.imag

    @property
    def duration(self) -> float:
        return len(self) / self.f_s

    def slice(self, start: int, stop: int) -> "IqTrace":
        return IqTrace(self.f_s, self.samples[start:stop])


def draw_theta(seed: int | np.random.Generator | None) -> float:
    """Transmitter phase, uniform in [0, 2pi)."""
    rng = np.random.default_rng(seed)
    return float(rng.uniform(0.0, TWO_PI))


def _resolved_theta(spec: ChirpSpec, seed) -> float:
    return draw_theta(seed) if spec.theta_tx is None else float(spec.theta_tx)


def _sweep_phase(cfg: PhyConfig, symbol: int, t: np.ndarray) -> np.ndarray:
    # Phase of an up chirp with no bias and no phase offset; continues
    # smoothly (with the modular wrap) past the nominal chirp end.
    M = cfg.n_bins
    f0 = -cfg.W / 2 + symbol * cfg.bin_hz
    t_wrap = (M - symbol) / cfg.W
    wrapped = np.maximum(0.0, t - t_wrap)
    return math.pi * cfg.sweep_rate * t * t + TWO_PI * f0 * t - TWO_PI * cfg.W * wrapped


def _phase(cfg: PhyConfig, direction: str, symbol: int, delta: float, phi: float, t):
    t = np.asarray(t, dtype=float)
    sweep = _sweep_phase(cfg, symbol, t)
    if direction == "down":
        sweep = -sweep
    return sweep + TWO_PI * delta * t + phi


def _check_time(cfg: PhyConfig, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    T = cfg.chirp_time()
    if np.any(t < -_T_EPS) or np.any(t > T * (1 + _T_EPS)):
        raise ValueError(f"t must lie in [0, {T}] s")
    return t


def chirp_phase(cfg: PhyConfig, spec: ChirpSpec, theta_rx: float, t):
    """Continuous phase of one chirp at local time ``t`` (scalar or array)."""
    if spec.theta_tx is None:
        raise ValueError("chirp_phase needs a concrete theta_tx")
    if spec.symbol >= cfg.n_bins:
        raise ValueError("symbol out of range")
    t = _check_time(cfg, t)
    delta = spec.delta_tx - cfg.delta_rx
    out = _phase(cfg, spec.direction, spec.symbol, delta, spec.theta_tx - theta_rx, t)
    return float(out) if out.ndim == 0 else out


def instantaneous_frequency(cfg: PhyConfig, spec: ChirpSpec, t):
    """Transmitted frequency relative to f_c, in Hz."""
    t = _check_time(cfg, t)
    raw = cfg.sweep_rate * t - cfg.W / 2 + spec.symbol * cfg.bin_hz
    raw = np.where(raw > cfg.W / 2, raw - cfg.W, raw)
    if spec.direction == "down":
        raw = -raw
    out = raw + spec.delta_tx
    return float(out) if out.ndim == 0 else out


def synthesize_chirp(cfg: PhyConfig, spec: ChirpSpec, theta_rx: float = 0.0, seed=None) -> IqTrace:
    if spec.symbol >= cfg.n_bins:
        raise ValueError("symbol out of range")
    phi = _resolved_theta(spec, seed) - theta_rx
    n = np.arange(cfg.samples_per_chirp(0))
    theta = _phase(cfg, spec.direction, spec.symbol, spec.delta_tx - cfg.delta_rx, phi, n / cfg.f_s)
    return IqTrace(cfg.f_s, 0.5 * spec.amplitude * np.exp(1j * theta))


def frame_phases(cfg: PhyConfig, frame: FrameSpec, theta_rx: float = 0.0, seed=None):
    """Per-chirp (start_index, phase array) pairs for a frame, excluding the onset offset.

    Each chirp is evaluated on its own local grid ``n / f_s`` and offset so
    the phase is continuous across the boundary.
    """
    frame.check(cfg)
    c = frame.chirp
    delta = c.delta_tx - cfg.delta_rx
    offset = _resolved_theta(c, seed) - theta_rx
    flip = "down" if c.direction == "up" else "up"
    chirps = (
        [(c.direction, 0)] * frame.preamble_len
        + [(flip, 0)] * frame.sfd_len
        + [(c.direction, s) for s in frame.symbols]
    )
    out = []
    for k, (direction, sym) in enumerate(chirps):
        start = cfg.chirp_boundary(k)
        L = cfg.chirp_boundary(k + 1) - start
        theta = _phase(cfg, direction, sym, delta, offset, np.arange(L) / cfg.f_s)
        out.append((start, theta))
        offset = float(_phase(cfg, direction, sym, delta, offset, L / cfg.f_s))
    return out


def synthesize_frame(cfg: PhyConfig, frame: FrameSpec, theta_rx: float = 0.0, seed=None) -> IqTrace:
    """Leading silence, ``preamble_len`` base up chirps, then the data chirps."""
    pieces = frame_phases(cfg, frame, theta_rx, seed)
    n_body = cfg.chirp_boundary(frame.n_chirps)
    x = np.zeros(frame.onset_offset + n_body, dtype=np.complex128)
    amp = 0.5 * frame.chirp.amplitude
    for start, theta in pieces:
        s = frame.onset_offset + start
        x[s:s + theta.size] = amp * np.exp(1j * theta)
    return IqTrace(cfg.f_s, x)


def frame_length(cfg: PhyConfig, n_chirps: int) -> int:
    return cfg.chirp_boundary(n_chirps)


def random_symbols(cfg: PhyConfig, count: int, seed) -> tuple[int, ...]:
    rng = np.random.default_rng(seed)
    return tuple(int(s) for s in rng.integers(0, cfg.n_bins, size=count))


def base_chirp(cfg: PhyConfig, direction: Direction = "up") -> np.ndarray:
    """Unit-amplitude reference chirp at the chip rate (2^S samples, t = m/W)."""
    m = np.arange(cfg.n_bins)
    theta = math.pi * m * m / cfg.n_bins - math.pi * m
    z = np.exp(1j * theta)
    return z if direction == "up" else z.conj()


def as_symbols(values: Sequence[int] | str) -> tuple[int, ...]:
    """Parse ``"1,2,3"`` or a sequence into a symbol tuple."""
    if isinstance(values, str):
        return tuple(int(v) for v in values.replace(" ", "").split(",") if v)
    return tuple(int(v) for v in values)
