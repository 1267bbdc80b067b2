"""Attack-surface analytics: collision outcome grids, vulnerable areas, SX1276 windows."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import CollisionScene, PathLossParams, compose_collision, path_loss_db
from .receiver import OutcomeClass, classify_outcome, receive_frames
from .signal import FrameSpec, PhyConfig, random_symbols

Point = tuple[float, float]


class NotInTable(KeyError):
    """Requested (S, payload) pair is not among the measured windows."""


@dataclass(frozen=True)
class AttackGeometry:
    """Actor positions (m), heights (m), transmit powers (dBm) and SCR thresholds (dB)."""

    gateway_pos: Point = (0.0, 0.0)
    collider_pos: Point = (50.0, 0.0)
    eavesdropper_pos: Point = (400.0, 0.0)
    gateway_h: float = 25.0
    collider_h: float = 0.0
    eavesdropper_h: float = 0.0
    device_h: float = 0.0
    p_v_dbm: float = 14.0
    p_c_dbm: float = 2.0
    pathloss: PathLossParams = field(default_factory=PathLossParams)
    scr_low_db: float = -6.0
    scr_high_db: float = 6.0
    eavesdrop_margin_db: float = 6.0
    sensitivity_dbm: float | None = None

    def __post_init__(self) -> None:
        if not self.scr_low_db < self.scr_high_db:
            raise ValueError("scr_low_db must be below scr_high_db")
        for h in (self.gateway_h, self.collider_h, self.eavesdropper_h, self.device_h):
            if not (math.isfinite(h) and h >= 0):
                raise ValueError("heights must be finite and non-negative")

    def with_floor(self, min_height_m: float) -> "AttackGeometry":
        return replace(self, pathloss=replace(self.pathloss, min_height_m=min_height_m))


def _dist_km(a: Point, x, y):
    return np.hypot(np.asarray(x, dtype=float) - a[0], np.asarray(y, dtype=float) - a[1]) / 1000.0


def _rx(geom: AttackGeometry, p_tx: float, tx_pos: Point, tx_h: float, rx_pos: Point, rx_h: float, x=None, y=None):
    # receiver height is h_b, transmitter height h_m; (x, y) replaces whichever end is the device
    if x is None:
        d = _dist_km(rx_pos, *tx_pos)
    else:
        d = _dist_km(rx_pos, x, y)
    return p_tx - path_loss_db(geom.pathloss, d, h_b=rx_h, h_m=tx_h)


def scr_at_gateway(geom: AttackGeometry, x, y):
    """Victim-to-collision power ratio at the gateway for a device at (x, y)."""
    g = geom
    pv = _rx(g, g.p_v_dbm, None, g.device_h, g.gateway_pos, g.gateway_h, x, y)
    pc = _rx(g, g.p_c_dbm, g.collider_pos, g.collider_h, g.gateway_pos, g.gateway_h)
    return pv - pc


def scr_at_eavesdropper(geom: AttackGeometry, x, y):
    g = geom
    pv = _rx(g, g.p_v_dbm, None, g.device_h, g.eavesdropper_pos, g.eavesdropper_h, x, y)
    pc = _rx(g, g.p_c_dbm, g.collider_pos, g.collider_h, g.eavesdropper_pos, g.eavesdropper_h)
    return pv, pv - pc


def stealthy_condition(geom: AttackGeometry, device_pos) -> np.ndarray | bool:
    """Collision at the gateway lands in the stealthy SCR band."""
    x, y = device_pos
    scr = scr_at_gateway(geom, x, y)
    out = (scr >= geom.scr_low_db) & (scr <= geom.scr_high_db)
    return bool(out) if np.ndim(out) == 0 else out


def eavesdrop_condition(geom: AttackGeometry, device_pos) -> np.ndarray | bool:
    """Eavesdropper decodes the victim despite the collision."""
    x, y = device_pos
    pv, scr = scr_at_eavesdropper(geom, x, y)
    out = scr >= geom.eavesdrop_margin_db
    if geom.sensitivity_dbm is not None:
        out = out & (pv >= geom.sensitivity_dbm)
    return bool(out) if np.ndim(out) == 0 else out


def ring_outer_radius_m(geom: AttackGeometry, max_m: float = 1e5) -> float:
    """Largest gateway distance at which the stealthy band is still reachable.

    SCR at the gateway falls monotonically with distance, so this is where it
    crosses ``scr_low_db``; found by bisection along +x.
    """
    gx, gy = geom.gateway_pos

    def scr(d):
        return float(scr_at_gateway(geom, gx + d, gy))

    lo, hi = 0.0, max_m
    if scr(hi) >= geom.scr_low_db:
        return hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if scr(mid) >= geom.scr_low_db:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: float = 1.0

    def __post_init__(self) -> None:
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("empty grid extent")

    @property
    def shape(self) -> tuple[int, int]:
        ny = int(round((self.y_max - self.y_min) / self.resolution))
        nx = int(round((self.x_max - self.x_min) / self.resolution))
        return ny, nx

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates, row-major (rows are y)."""
        ny, nx = self.shape
        xs = self.x_min + (np.arange(nx) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(ny) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def contains(self, p: Point) -> bool:
        return self.x_min <= p[0] <= self.x_max and self.y_min <= p[1] <= self.y_max

    @classmethod
    def around(cls, geom: AttackGeometry, side_m: float = 1000.0, resolution: float = 1.0) -> "GridSpec":
        """Square window of at least ``side_m`` over the actors and the whole ring."""
        r = ring_outer_radius_m(geom) + 2 * resolution
        gx, gy = geom.gateway_pos
        pts = np.array(
            [geom.gateway_pos, geom.collider_pos, geom.eavesdropper_pos, (gx - r, gy - r), (gx + r, gy + r)],
            dtype=float,
        )
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        side = max(side_m, float((hi - lo).max()) + 2 * resolution)
        c = (lo + hi) / 2
        h = side / 2
        return cls(c[0] - h, c[0] + h, c[1] - h, c[1] + h, resolution)


@dataclass
class AreaReport:
    core_area_m2: float
    ring_area_m2: float
    disk_area_m2: float
    grid: GridSpec
    ring_mask: np.ndarray
    disk_mask: np.ndarray
    intersection_mask: np.ndarray

    def summary(self) -> dict:
        g = self.grid
        return {
            "core_area_m2": self.core_area_m2,
            "ring_area_m2": self.ring_area_m2,
            "disk_area_m2": self.disk_area_m2,
            "grid": {"x_min": g.x_min, "x_max": g.x_max, "y_min": g.y_min, "y_max": g.y_max, "resolution": g.resolution},
        }


def vulnerable_area(geom: AttackGeometry, grid: GridSpec | None = None) -> AreaReport:
    """Cell-wise evaluation of both conditions; core area is their overlap."""
    grid = grid or GridSpec.around(geom)
    for p in (geom.gateway_pos, geom.collider_pos, geom.eavesdropper_pos):
        if not grid.contains(p):
            raise ValueError(f"grid does not cover actor at {p}")
    X, Y = grid.centers()
    ring = stealthy_condition(geom, (X, Y))
    disk = eavesdrop_condition(geom, (X, Y))
    both = ring & disk
    cell = grid.resolution**2
    return AreaReport(
        float(both.sum() * cell), float(ring.sum() * cell), float(disk.sum() * cell), grid, ring, disk, both
    )


def area_vs_distance_sweep(
    geom: AttackGeometry,
    d_ge_list,
    p_c_list,
    resolution: float = 1.0,
) -> list[dict]:
    """Core area for each (d_ge, P_c), moving the eavesdropper along the gateway axis."""
    gx, gy = geom.gateway_pos
    ex, ey = geom.eavesdropper_pos
    norm = math.hypot(ex - gx, ey - gy)
    ux, uy = ((ex - gx) / norm, (ey - gy) / norm) if norm > 0 else (1.0, 0.0)
    rows = []
    for p_c in p_c_list:
        for d in d_ge_list:
            g = replace(geom, p_c_dbm=float(p_c), eavesdropper_pos=(gx + ux * d, gy + uy * d))
            rep = vulnerable_area(g, GridSpec.around(g, resolution=resolution))
            rows.append({"d_ge_m": float(d), "p_c_dbm": float(p_c), "core_area_m2": rep.core_area_m2})
    return rows


@dataclass
class GridResult:
    scr_db: list[float]
    rtm: list[float]
    modal: list[list[OutcomeClass]]
    counts: list[list[dict[str, int]]]
    trials: int
    seed: int

    def to_csv(self) -> str:
        lines = ["scr_db," + ",".join(f"{r:g}" for r in self.rtm)]
        for s, row in zip(self.scr_db, self.modal):
            lines.append(f"{s:g}," + ",".join(c.value for c in row))
        return "\n".join(lines) + "\n"


def _modal(counter: Counter) -> OutcomeClass:
    # ties broken by enum order so the result is deterministic
    order = list(OutcomeClass)
    return max(order, key=lambda c: (counter.get(c, 0), -order.index(c)))


def collision_trial(
    cfg: PhyConfig,
    scr_db: float,
    rtm: float,
    seed: int,
    n_symbols: int = 40,
    preamble_len: int = 8,
    snr_db: float = 20.0,
) -> OutcomeClass:
    """One victim/collider superposition run through the receiver."""
    s_v, s_c, s_scene = (int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(3))
    lead = cfg.samples_per_chirp(0) * 2
    victim = FrameSpec(preamble_len, random_symbols(cfg, n_symbols, s_v), onset_offset=lead)
    collider = FrameSpec(preamble_len, random_symbols(cfg, n_symbols, s_c))
    scene = CollisionScene(victim, collider, rtm=rtm, scr_db=scr_db, snr_db=snr_db, seed=s_scene)
    trace, truth = compose_collision(cfg, scene)
    return classify_outcome(receive_frames(trace, cfg, n_symbols, preamble_len), truth)


def collision_grid(
    cfg: PhyConfig,
    scr_range,
    rtm_range,
    trials: int,
    seed: int,
    n_symbols: int = 40,
    snr_db: float = 20.0,
) -> GridResult:
    """Outcome frequencies and modal class for every (SCR, RTM) cell."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    scr = [float(s) for s in scr_range]
    rtm = [float(r) for r in rtm_range]
    cells = np.random.SeedSequence(seed).spawn(len(scr) * len(rtm))
    modal, counts = [], []
    for i, s in enumerate(scr):
        mrow, crow = [], []
        for j, r in enumerate(rtm):
            seeds = cells[i * len(rtm) + j].generate_state(trials)
            c = Counter(collision_trial(cfg, s, r, int(t), n_symbols, snr_db=snr_db) for t in seeds)
            mrow.append(_modal(c))
            crow.append({k.value: v for k, v in sorted(c.items(), key=lambda kv: kv[0].value)})
        modal.append(mrow)
        counts.append(crow)
    return GridResult(scr, rtm, modal, counts, trials, seed)


@dataclass(frozen=True)
class CollisionWindows:
    s: int
    payload_bytes: int
    w1: float
    w2: float
    w3: float

    def __post_init__(self) -> None:
        if not 0 < self.w1 < self.w2 < self.w3:
            raise ValueError("windows must satisfy 0 < w1 < w2 < w3")


# Measured SX1276 collision windows in ms, rows in their published order.
# The (7, 30) measurement appears twice (payload and spreading-factor sweeps).
COLLISION_WINDOWS_TABLE: tuple[CollisionWindows, ...] = (
    CollisionWindows(7, 10, 5, 28, 141),
    CollisionWindows(7, 20, 5, 38, 156),
    CollisionWindows(7, 30, 6, 41, 165),
    CollisionWindows(7, 40, 6, 54, 178),
    CollisionWindows(7, 30, 6, 41, 165),
    CollisionWindows(8, 30, 10, 82, 208),
    CollisionWindows(9, 30, 22, 156, 274),
)


def lookup_collision_windows(s: int, payload_bytes: int) -> CollisionWindows:
    for row in COLLISION_WINDOWS_TABLE:
        if row.s == s and row.payload_bytes == payload_bytes:
            return row
    raise NotInTable((s, payload_bytes))
