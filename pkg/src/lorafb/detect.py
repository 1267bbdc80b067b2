"""Replay detection from per-device frequency-bias history."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .channel import add_awgn
from .fbest import LsqConfig, estimate_amplitude, fb_least_squares
from .receiver import aic_onset, sfd_onset
from .signal import ChirpSpec, FrameSpec, PhyConfig, random_symbols, synthesize_frame

SCHEMA_VERSION = 1
DEFAULT_WINDOW = 64
DEFAULT_THRESHOLD_HZ = 500.0
MIN_ENROLL = 3


class EnrollmentRequired(KeyError):
    """The device has no usable FB history."""


class Verdict(str, Enum):
    ACCEPT = "Accept"
    REPLAY_SUSPECTED = "ReplaySuspected"


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    margin_hz: float
    reference_hz: float

    @property
    def suspected(self) -> bool:
        return self.verdict is Verdict.REPLAY_SUSPECTED


@dataclass
class FbRecord:
    device_id: str
    window_size: int = DEFAULT_WINDOW
    threshold_hz: float = DEFAULT_THRESHOLD_HZ
    history: deque = field(default_factory=deque)  # (timestamp, fb_hz)

    def __post_init__(self) -> None:
        if self.window_size < MIN_ENROLL:
            raise ValueError(f"window must hold at least {MIN_ENROLL} estimates")
        if not self.threshold_hz > 0:
            raise ValueError("threshold must be positive")
        self.history = deque(((float(t), float(f)) for t, f in self.history), maxlen=self.window_size)

    def _values(self) -> np.ndarray:
        return np.array([f for _, f in self.history])

    @property
    def mean_hz(self) -> float:
        return float(self._values().mean())

    @property
    def min_hz(self) -> float:
        return float(self._values().min())

    @property
    def max_hz(self) -> float:
        return float(self._values().max())

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "threshold_hz": self.threshold_hz,
            "history": [list(p) for p in self.history],
        }

    @classmethod
    def from_dict(cls, device_id: str, d: dict) -> "FbRecord":
        return cls(device_id, int(d["window_size"]), float(d["threshold_hz"]), deque(map(tuple, d["history"])))


class FbDatabase:
    """Device id -> FbRecord, persisted as versioned JSON.

    Updates for one device are read-modify-write; callers serialise them.
    """

    def __init__(self, records: dict[str, FbRecord] | None = None):
        self.records: dict[str, FbRecord] = dict(records or {})

    def __contains__(self, device_id: str) -> bool:
        return device_id in self.records

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, device_id: str) -> FbRecord:
        try:
            return self.records[device_id]
        except KeyError:
            raise EnrollmentRequired(device_id) from None

    def to_json(self) -> str:
        body = {k: r.to_dict() for k, r in sorted(self.records.items())}
        return json.dumps({"schema_version": SCHEMA_VERSION, "devices": body}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FbDatabase":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported FB database schema {doc.get('schema_version')!r}")
        return cls({k: FbRecord.from_dict(k, v) for k, v in doc["devices"].items()})

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "FbDatabase":
        return cls.from_json(Path(path).read_text())


def enroll(
    db: FbDatabase,
    device_id: str,
    fb_list,
    timestamps=None,
    threshold_hz: float = DEFAULT_THRESHOLD_HZ,
    window_size: int = DEFAULT_WINDOW,
) -> FbDatabase:
    """Create (or replace) a device record from attack-free estimates."""
    fbs = [float(f) for f in fb_list]
    if len(fbs) < MIN_ENROLL:
        raise ValueError(f"enrollment needs at least {MIN_ENROLL} estimates, got {len(fbs)}")
    if not all(math.isfinite(f) for f in fbs):
        raise ValueError("FB estimates must be finite")
    ts = list(range(len(fbs))) if timestamps is None else [float(t) for t in timestamps]
    if len(ts) != len(fbs):
        raise ValueError("timestamps and estimates differ in length")
    db.records[device_id] = FbRecord(device_id, window_size, threshold_hz, deque(zip(ts, fbs)))
    return db


def check_frame(db: FbDatabase, device_id: str, fb_hz: float, timestamp: float = 0.0) -> Decision:
    """Compare a frame's FB with the device's windowed mean.

    Accepted estimates join the window; suspected ones never touch it.
    """
    rec = db[device_id]
    if len(rec.history) < MIN_ENROLL:
        raise EnrollmentRequired(device_id)
    ref = rec.mean_hz
    margin = abs(float(fb_hz) - ref) - rec.threshold_hz
    if margin > 0:
        return Decision(Verdict.REPLAY_SUSPECTED, margin, ref)
    rec.history.append((float(timestamp), float(fb_hz)))
    return Decision(Verdict.ACCEPT, margin, ref)


def false_alarm_rate(fb_series, threshold_hz: float, frame_interval_s: float) -> float:
    """Fraction of frame-interval windows whose max FB spread exceeds the threshold.

    Windows start at every sample and span ``frame_interval_s``; the spread
    is max - min, i.e. the largest pairwise |fb_i - fb_j|.
    """
    arr = np.asarray(fb_series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("fb_series must be (timestamp, hz) pairs")
    if not frame_interval_s > 0:
        raise ValueError("frame interval must be positive")
    order = np.argsort(arr[:, 0], kind="stable")
    t, f = arr[order, 0], arr[order, 1]
    if t[-1] - t[0] < 10 * frame_interval_s:
        raise ValueError("series must span at least 10 frame intervals")
    ends = np.searchsorted(t, t + frame_interval_s, side="right")
    n = int(np.searchsorted(t, t[-1] - frame_interval_s, side="right"))
    hits = 0
    for i in range(n):
        seg = f[i:ends[i]]
        hits += (seg.max() - seg.min()) > threshold_hz
    return hits / n


@dataclass(frozen=True)
class PipelineConfig:
    """Frame layout and estimator settings for simulated receptions.

    Frames carry a two-chirp SFD so the onset can be recovered far below the
    SNR at which the power step is visible; the second preamble chirp feeds
    the least-squares estimator.
    """

    phy: PhyConfig = field(default_factory=lambda: PhyConfig(S=12, f_s=500e3))
    preamble_len: int = 8
    sfd_len: int = 2
    n_symbols: int = 4
    amplitude: float = 2.0
    lsq: LsqConfig = field(default_factory=LsqConfig)


@dataclass(frozen=True)
class TrialResult:
    fb_hz: float
    onset_error: int
    aic_onset_error: int
    decision: Decision | None


def simulate_reception(pc: PipelineConfig, delta_tx: float, extra_fb_hz: float, snr_db: float, seed: int):
    """Synthesize one frame (plus any replayer FB), add noise, estimate its FB.

    Returns (fb_hz, onset_error_samples, aic_onset_error_samples).
    """
    cfg = pc.phy
    ss = np.random.SeedSequence(seed)
    s_sym, s_theta, s_noise, s_off = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
    L = cfg.samples_per_chirp(0)
    onset = int(np.random.default_rng(s_off).integers(L // 2, L))
    frame = FrameSpec(
        preamble_len=pc.preamble_len,
        symbols=random_symbols(cfg, pc.n_symbols, s_sym),
        chirp=ChirpSpec(amplitude=pc.amplitude, delta_tx=delta_tx + extra_fb_hz),
        onset_offset=onset,
        sfd_len=pc.sfd_len,
    )
    clean = synthesize_frame(cfg, frame, seed=s_theta)
    trace = add_awgn(clean, snr_db, (onset, len(clean)), seed=s_noise)
    aic = aic_onset(trace, cfg).sample_index
    found = sfd_onset(trace, cfg, pc.preamble_len, pc.sfd_len)
    A = estimate_amplitude(trace, cfg, found)
    start = found.sample_index + cfg.chirp_boundary(1)
    chirp = trace.slice(start, start + cfg.samples_per_chirp(1))
    est = fb_least_squares(chirp, cfg, max(A, 1e-12), pc.lsq)
    return est.delta_hz, found.sample_index - onset, aic - onset


def end_to_end_replay_trial(
    pc: PipelineConfig,
    db: FbDatabase,
    device_id: str,
    delta_tx: float,
    extra_fb_hz: float,
    snr_db: float,
    seed: int,
) -> TrialResult:
    """One received frame through onset, FB estimation and the detector."""
    fb, err, aic_err = simulate_reception(pc, delta_tx, extra_fb_hz, snr_db, seed)
    return TrialResult(fb, err, aic_err, check_frame(db, device_id, fb, timestamp=float(seed)))


def enroll_from_pipeline(
    pc: PipelineConfig,
    db: FbDatabase,
    device_id: str,
    delta_tx: float,
    snr_db: float,
    n: int,
    seed: int,
    threshold_hz: float = DEFAULT_THRESHOLD_HZ,
) -> FbDatabase:
    """Enroll a device from ``n`` attack-free receptions."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    fbs = [simulate_reception(pc, delta_tx, 0.0, snr_db, int(s))[0] for s in seeds]
    return enroll(db, device_id, fbs, threshold_hz=threshold_hz)


def with_phy(pc: PipelineConfig, **kw) -> PipelineConfig:
    return replace(pc, phy=replace(pc.phy, **kw))
