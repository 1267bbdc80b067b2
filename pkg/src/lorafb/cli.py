"""Command-line front end and on-disk formats.

Traces are raw interleaved float32 little-endian I/Q with a ``.meta.json``
sidecar.  Every command that writes files also writes a run manifest
(``<out>.manifest.json``) recording argv, parameters, seed, version and
SHA-256 of each output; ``lorafb rerun`` replays one and compares checksums.

Exit codes: 0 success/Accept, 1 rerun mismatch, 2 usage error,
3 ReplaySuspected, 4 NoFrame / NotInTable / no enrolled reference.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    AttackGeometry,
    GridSpec,
    NotInTable,
    area_vs_distance_sweep,
    collision_grid,
    lookup_collision_windows,
    vulnerable_area,
)
from .channel import PathLossParams, add_awgn
from .detect import DEFAULT_THRESHOLD_HZ, EnrollmentRequired, FbDatabase, check_frame, enroll
from .fbest import LsqConfig, estimate_amplitude, fb_least_squares, fb_linear_regression
from .receiver import NoFrame, coarse_fb, first_onset, sfd_onset
from .signal import ChirpSpec, FrameSpec, IqTrace, PhyConfig, as_symbols, synthesize_frame

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_SUSPECTED = 3
EXIT_NO_RESULT = 4

META_SUFFIX = ".meta.json"
MANIFEST_SUFFIX = ".manifest.json"


# --- trace files -------------------------------------------------------------


@dataclass
class TraceFile:
    """A trace plus its sidecar metadata."""

    trace: IqTrace
    meta: dict = field(default_factory=dict)

    @staticmethod
    def sidecar_path(path) -> Path:
        p = Path(path)
        return p.with_name(p.stem + META_SUFFIX) if p.suffix else p.with_name(p.name + META_SUFFIX)

    def write(self, path) -> list[Path]:
        p = Path(path)
        iq = np.empty(2 * len(self.trace), dtype="<f4")
        iq[0::2] = self.trace.i
        iq[1::2] = self.trace.q
        p.write_bytes(iq.tobytes())
        meta = dict(self.meta)
        meta["f_s"] = float(self.trace.f_s)
        meta["format"] = "interleaved float32 little-endian I/Q"
        side = self.sidecar_path(p)
        side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return [p, side]

    @classmethod
    def read(cls, path) -> "TraceFile":
        p = Path(path)
        raw = p.read_bytes()
        if len(raw) % 8:
            raise ValueError(f"{p}: payload length {len(raw)} is not a multiple of 8 bytes")
        meta = json.loads(cls.sidecar_path(p).read_text())
        f_s = float(meta.get("f_s", 0.0))
        if not f_s > 0:
            raise ValueError(f"{p}: sidecar f_s must be positive")
        iq = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        return cls(IqTrace(f_s, iq[0::2] + 1j * iq[1::2]), meta)

    def phy(self) -> PhyConfig:
        m = self.meta
        return PhyConfig(f_c=float(m.get("f_c", 869.75e6)), W=float(m["W"]), S=int(m["S"]), f_s=float(m["f_s"]))


# --- manifests ---------------------------------------------------------------


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + MANIFEST_SUFFIX) if p.suffix else p.with_name(p.name + MANIFEST_SUFFIX)


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    params: dict
    seed: int | None
    version: str
    outputs: dict[str, str]

    def write(self, path) -> Path:
        p = Path(path)
        p.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return p

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(**{f.name: d[f.name] for f in fields(cls)})


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _record(args, argv: list[str], outputs: list[Path]) -> Path:
    params = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "manifest")}
    man = RunManifest(
        command=args.command,
        argv=list(argv),
        params=params,
        seed=getattr(args, "seed", None),
        version=__version__,
        outputs={str(p): sha256_file(p) for p in outputs},
    )
    target = args.manifest if getattr(args, "manifest", None) else manifest_path(outputs[0])
    return man.write(target)


def _emit(args, argv, report: dict, extra: list[Path] = ()) -> None:
    """Print a JSON report; with ``--out`` also save it and a manifest."""
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text)
        _record(args, argv, [Path(out), *extra])
    elif getattr(args, "manifest", None):
        _record_stdout(args, argv, text)


def _record_stdout(args, argv, text: str) -> None:
    params = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "manifest")}
    man = RunManifest(
        args.command, list(argv), params, getattr(args, "seed", None), __version__,
        {"<stdout>": hashlib.sha256(text.encode()).hexdigest()},
    )
    man.write(args.manifest)


# --- commands ----------------------------------------------------------------


def _phy(args) -> PhyConfig:
    return PhyConfig(f_c=args.fc, W=args.bw, S=args.sf, f_s=args.fs)


def cmd_synth(args, argv) -> int:
    cfg = _phy(args)
    ss = np.random.SeedSequence(args.seed)
    s_theta, s_noise = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    chirp = ChirpSpec(amplitude=args.amplitude, delta_tx=args.delta_tx, theta_tx=args.theta_tx)
    frame = FrameSpec(args.preamble, as_symbols(args.symbols), chirp, args.lead, args.sfd)
    trace = synthesize_frame(cfg, frame, seed=s_theta)
    if math.isfinite(args.snr):
        trace = add_awgn(trace, args.snr, (args.lead, len(trace)), seed=s_noise)
    meta = {
        "f_c": cfg.f_c,
        "W": cfg.W,
        "S": cfg.S,
        "seed": args.seed,
        "synthesis": {
            "delta_tx": args.delta_tx,
            "amplitude": args.amplitude,
            "theta_tx": args.theta_tx,
            "preamble_len": args.preamble,
            "sfd_len": args.sfd,
            "symbols": list(frame.symbols),
            "onset_offset": args.lead,
            "snr_db": _jsonable(args.snr),
        },
        "description": f"synthetic frame, lorafb {__version__}",
    }
    written = TraceFile(trace, meta).write(args.out)
    _record(args, argv, written)
    sys.stdout.write(json.dumps({"samples": len(trace), "out": str(args.out)}) + "\n")
    return EXIT_OK


def _locate(tf: TraceFile, cfg: PhyConfig, args) -> int:
    if args.onset is not None:
        return int(args.onset)
    syn = tf.meta.get("synthesis", {})
    sfd = int(syn.get("sfd_len", 0))
    if sfd > 0:
        return sfd_onset(tf.trace, cfg, int(syn.get("preamble_len", 8)), sfd).sample_index
    try:
        return first_onset(tf.trace, cfg)
    except NoFrame as exc:
        # a trace that carries energy from its first block starts at 0
        if "noise floor" in str(exc):
            return 0
        raise


def estimate_from_trace(tf: TraceFile, method: str, chirp_index: int, args) -> dict:
    cfg = tf.phy()
    trace = tf.trace
    onset = _locate(tf, cfg, args)
    start = onset + cfg.chirp_boundary(chirp_index)
    stop = start + cfg.samples_per_chirp(chirp_index)
    if onset < 0 or stop > len(trace):
        raise NoFrame(f"chirp {chirp_index} after onset {onset} runs past the trace")
    if method == "fft":
        return {"delta_hz": coarse_fb(trace, cfg, onset, chirp_index), "method": "fft", "residual": None, "onset": onset}
    chirp = trace.slice(start, stop)
    if method == "linreg":
        est = fb_linear_regression(chirp, cfg)
    else:
        if args.amplitude is not None:
            A = args.amplitude
        elif onset >= cfg.n_bins:
            A = estimate_amplitude(trace, cfg, onset)
        else:
            # no noise-only lead: take the raw envelope
            seg = trace.samples[onset:onset + cfg.chirp_boundary(2)]
            A = float(np.sqrt(np.mean(np.abs(seg) ** 2)))
        lo, hi = args.bounds
        est = fb_least_squares(chirp, cfg, max(A, 1e-12), LsqConfig((lo, hi), seed=args.seed))
    return {"delta_hz": est.delta_hz, "method": est.method, "residual": est.residual, "onset": onset}


def cmd_fb(args, argv) -> int:
    tf = TraceFile.read(args.trace)
    report = estimate_from_trace(tf, args.method, args.chirp_index, args)
    _emit(args, argv, report)
    return EXIT_OK


def _span(lo: float, hi: float, step: float) -> list[float]:
    if not step > 0 or hi < lo:
        raise ValueError("need step > 0 and max >= min")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + k * step, 10) for k in range(n)]


def cmd_grid(args, argv) -> int:
    cfg = _phy(args)
    scr = _span(args.scr_min, args.scr_max, args.scr_step)
    rtm = _span(args.rtm_min, args.rtm_max, args.rtm_step)
    res = collision_grid(cfg, scr, rtm, args.trials, args.seed, args.data_symbols, args.snr)
    out = Path(args.out)
    out.write_text(res.to_csv())
    counts = out.with_name(out.stem + ".counts.json")
    doc = {"scr_db": res.scr_db, "rtm": res.rtm, "trials": res.trials, "seed": res.seed, "counts": res.counts}
    counts.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _record(args, argv, [out, counts])
    sys.stdout.write(res.to_csv())
    return EXIT_OK


def load_geometry(path) -> AttackGeometry:
    """AttackGeometry from JSON; ``pathloss`` may be a nested object."""
    d = json.loads(Path(path).read_text())
    known = {f.name for f in fields(AttackGeometry)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
    if "pathloss" in d:
        d["pathloss"] = PathLossParams(**d["pathloss"])
    for k in ("gateway_pos", "collider_pos", "eavesdropper_pos"):
        if k in d:
            d[k] = tuple(float(v) for v in d[k])
    return AttackGeometry(**d)


def _mask_csv(mask: np.ndarray, path: Path) -> Path:
    np.savetxt(path, mask.astype(np.uint8), fmt="%d", delimiter=",")
    return path


def cmd_area(args, argv) -> int:
    geom = load_geometry(args.geometry) if args.geometry else AttackGeometry()
    if args.height_floor is not None:
        geom = geom.with_floor(args.height_floor)
    rep = vulnerable_area(geom, GridSpec.around(geom, resolution=args.grid_res))
    report = rep.summary()
    if args.d_ge:
        p_c = [float(v) for v in args.p_c.split(",")] if args.p_c else [geom.p_c_dbm]
        d_ge = [float(v) for v in args.d_ge.split(",")]
        report["sweep"] = area_vs_distance_sweep(geom, d_ge, p_c, args.grid_res)
    extra = []
    if args.masks:
        if not args.out:
            raise ValueError("--masks needs --out")
        o = Path(args.out)
        for name, m in (("ring", rep.ring_mask), ("disk", rep.disk_mask), ("core", rep.intersection_mask)):
            extra.append(_mask_csv(m, o.with_name(f"{o.stem}.{name}.csv")))
    _emit(args, argv, report, extra)
    return EXIT_OK


def cmd_detect(args, argv) -> int:
    db_path = Path(args.db)
    db = FbDatabase.load(db_path) if db_path.exists() else FbDatabase()
    if args.enroll:
        enroll(db, args.device, [float(v) for v in args.enroll.split(",")], threshold_hz=args.threshold)
        db.save(db_path)
        rec = db[args.device]
        _emit(args, argv, {"device": args.device, "enrolled": len(rec.history), "reference_hz": rec.mean_hz})
        return EXIT_OK
    if args.fb is not None:
        fb = args.fb
    elif args.trace:
        tf = TraceFile.read(args.trace)
        fb = estimate_from_trace(tf, "lsq", args.chirp_index, args)["delta_hz"]
    else:
        raise ValueError("give a trace, --fb or --enroll")
    dec = check_frame(db, args.device, fb, args.timestamp)
    db.save(db_path)
    report = {
        "device": args.device,
        "fb_hz": fb,
        "verdict": dec.verdict.value,
        "margin_hz": dec.margin_hz,
        "reference_hz": dec.reference_hz,
    }
    _emit(args, argv, report)
    return EXIT_SUSPECTED if dec.suspected else EXIT_OK


def cmd_windows(args, argv) -> int:
    row = lookup_collision_windows(args.sf, args.payload)
    _emit(args, argv, {"s": row.s, "payload_bytes": row.payload_bytes, "w1_ms": row.w1, "w2_ms": row.w2, "w3_ms": row.w3})
    return EXIT_OK


def cmd_rerun(args, argv) -> int:
    man = RunManifest.read(args.manifest_file)
    code = main(man.argv)
    if code != EXIT_OK:
        return code
    bad = [p for p, h in man.outputs.items() if p != "<stdout>" and sha256_file(p) != h]
    for p in bad:
        sys.stderr.write(f"checksum mismatch: {p}\n")
    return EXIT_MISMATCH if bad else EXIT_OK


# --- parser ------------------------------------------------------------------


def _phy_flags(p: argparse.ArgumentParser, sf: int, fs: float) -> None:
    p.add_argument("--sf", type=int, default=sf, help="spreading factor S")
    p.add_argument("--bw", type=float, default=125e3, help="bandwidth W in Hz")
    p.add_argument("--fs", type=float, default=fs, help="sample rate in Hz")
    p.add_argument("--fc", type=float, default=869.75e6, help="carrier frequency in Hz")


def _estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chirp-index", type=int, default=1, help="preamble chirp to estimate from (default: second)")
    p.add_argument("--onset", type=int, default=None, help="frame onset sample; detected when omitted")
    p.add_argument("--amplitude", type=float, default=None, help="template amplitude for lsq")
    p.add_argument("--bounds", type=float, nargs=2, default=(-50e3, 50e3), metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0, help="optimizer seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lorafb", description="LoRa frequency-bias toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize one frame to a trace file")
    _phy_flags(p, 7, 2e6)
    p.add_argument("--delta-tx", type=float, default=0.0)
    p.add_argument("--amplitude", type=float, default=2.0)
    p.add_argument("--theta-tx", type=float, default=None, help="transmitter phase; random when omitted")
    p.add_argument("--preamble", type=int, default=8)
    p.add_argument("--sfd", type=int, default=0, help="SFD down chirps")
    p.add_argument("--symbols", default="", help="comma-separated data symbols")
    p.add_argument("--lead", type=int, default=0, help="leading silence in samples")
    p.add_argument("--snr", type=float, default=math.inf, help="AWGN SNR in dB (default: noiseless)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fb", help="estimate the frequency bias of a trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--method", choices=("fft", "linreg", "lsq"), default="lsq")
    _estimator_flags(p)
    p.add_argument("--out", type=Path)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_fb)

    p = sub.add_parser("grid", help="collision outcome matrix over SCR x RTM")
    _phy_flags(p, 7, 1e6)
    p.add_argument("--scr-min", type=float, default=-20.0)
    p.add_argument("--scr-max", type=float, default=20.0)
    p.add_argument("--scr-step", type=float, default=4.0)
    p.add_argument("--rtm-min", type=float, default=0.0)
    p.add_argument("--rtm-max", type=float, default=0.4)
    p.add_argument("--rtm-step", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--data-symbols", type=int, default=40)
    p.add_argument("--snr", type=float, default=20.0, help="victim SNR in dB")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("area", help="vulnerable area of a geometry")
    p.add_argument("--geometry", type=Path, help="AttackGeometry JSON (default: built-in)")
    p.add_argument("--grid-res", type=float, default=1.0)
    p.add_argument("--height-floor", type=float, default=None, help="minimum antenna height in m")
    p.add_argument("--d-ge", default="", help="comma-separated eavesdropper distances for a sweep")
    p.add_argument("--p-c", default="", help="comma-separated collider powers for the sweep")
    p.add_argument("--masks", action="store_true", help="also write ring/disk/core CSV masks")
    p.add_argument("--out", type=Path)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_area)

    p = sub.add_parser("detect", help="check a frame against a device's FB history")
    p.add_argument("trace", type=Path, nargs="?")
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--fb", type=float, default=None, help="FB in Hz instead of a trace")
    p.add_argument("--enroll", default="", help="comma-separated attack-free FBs to enroll")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_HZ)
    p.add_argument("--timestamp", type=float, default=0.0)
    _estimator_flags(p)
    p.add_argument("--out", type=Path)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("windows", help="measured collision windows for (S, payload)")
    p.add_argument("--sf", type=int, required=True)
    p.add_argument("--payload", type=int, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("rerun", help="replay a run manifest and verify checksums")
    p.add_argument("manifest_file", type=Path)
    p.set_defaults(func=cmd_rerun)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (NoFrame, NotInTable, EnrollmentRequired) as exc:
        sys.stderr.write(f"lorafb: {type(exc).__name__}: {exc}\n")
        return EXIT_NO_RESULT
    except (ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"lorafb: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())


def main_entry() -> None:
    sys.exit(main())
