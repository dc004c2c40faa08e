"""Run configuration, output serialization and the command-line interface.

Output layout of a run directory::

    timeseries.csv            one row per monitor record, fixed column order
    snapshots/snap_NNNNN.json sidecar: model kind, n, dims, spacings, t, value count
    snapshots/snap_NNNNN.bin  raw little-endian float64, row-major (C order)
    manifest.json             every written file with its size in bytes
"""

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .background import (Forcing, forcing_profile, make_schedule, prescribed_form,
                         zero_forcing)
from .errors import ConfigError, KahlerFlowError
from .flow import FlowProblem, RunSettings, psh_gauge_transform, run
from .geometry import RADIAL, TORUS, ModelGeometry, complex_hessian
from .scenarios import list_scenarios, run_scenario

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "sup_v", "sup_w", "trace_min", "trace_max", "equiv_cmin", "equiv_cmax",
               "Q_max", "S_max", "gradw_max", "lp_energy", "dissipation", "ricci_residual",
               "heat_residual", "dt_used", "status")

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ModelBlock:
    kind: str
    n: int
    resolution: int
    s_min: float = -8.0
    s_max: float = 10.0
    psi_amplitude: float = 0.0      # torus: psi = 4 a cos x_1, i.e. g0 = 1 - a cos x_1
    background_a: float = 0.0       # radial: P0 = e^s + a log(1 + e^s)


@dataclass
class ScheduleBlock:
    kind: str = "constant"
    T: Optional[float] = None
    sigma_T_scale: float = 1.0      # interpolation target sigma(T) = scale * g0
    barrier: Optional[str] = None   # "r2" (radial |z|^2) or "cos" (torus)
    barrier_amplitude: float = 1.0


@dataclass
class ForcingBlock:
    recipe: str = "none"            # none | decay | manufactured
    C1: float = 0.0
    eps: float = 1.0
    amplitude: float = 0.1


@dataclass
class OmegaBlock:
    from_forcing: bool = False


@dataclass
class RunBlock:
    t_max: float = 1.0
    dt_safety: float = 0.2
    tol_w: float = 1e-7
    record_interval: Optional[float] = None
    record_every_steps: Optional[int] = None
    snapshot_interval: Optional[float] = None
    p: int = 4
    k: int = 1
    max_wall_seconds: Optional[float] = None


@dataclass
class RunConfig:
    model: ModelBlock
    schedule: ScheduleBlock = field(default_factory=ScheduleBlock)
    forcing: ForcingBlock = field(default_factory=ForcingBlock)
    omega: OmegaBlock = field(default_factory=OmegaBlock)
    run: RunBlock = field(default_factory=RunBlock)
    output: Optional[str] = None

    def to_dict(self):
        return asdict(self)

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_BLOCKS = {"model": ModelBlock, "schedule": ScheduleBlock, "forcing": ForcingBlock,
           "omega": OmegaBlock, "run": RunBlock}


def _block(cls, name, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"block {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(map(repr, unknown))}")
    data = {k: _coerce(cls, name, k, v) for k, v in data.items()}
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"block {name!r}: {exc}") from None


def _coerce(cls, block, key, value):
    """Numbers written like ``1e-7`` load as strings under YAML 1.1; convert them."""
    kind = {f.name: f.type for f in fields(cls)}[key]
    if value is None or kind not in (float, Optional[float]):
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{block}.{key} must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{block}.{key} must be a number, got {value!r}") from None


def validate(cfg):
    m, r, s, f = cfg.model, cfg.run, cfg.schedule, cfg.forcing
    if m.kind not in (TORUS, RADIAL):
        raise ConfigError(f"model.kind must be {TORUS!r} or {RADIAL!r}, got {m.kind!r}")
    if not isinstance(m.resolution, int) or m.resolution < 8:
        raise ConfigError(f"model.resolution must be an integer >= 8, got {m.resolution!r}")
    if m.kind == TORUS and m.n not in (1, 2):
        raise ConfigError("model.n must be 1 or 2 on the torus")
    if m.kind == RADIAL:
        if m.n < 2:
            raise ConfigError("model.n must be >= 2 on the radial model")
        if not m.s_min < m.s_max:
            raise ConfigError("model.s_min must be < model.s_max")
    if not 0 < r.dt_safety <= 0.5:
        raise ConfigError(f"run.dt_safety must lie in (0, 0.5], got {r.dt_safety!r}")
    if not r.tol_w > 0:
        raise ConfigError(f"run.tol_w must be > 0, got {r.tol_w!r}")
    if r.t_max < 0:
        raise ConfigError("run.t_max must be >= 0")
    if r.p != 2 * r.k + 2 or r.k < 1:
        raise ConfigError("run.p must equal 2 * run.k + 2 with run.k >= 1")
    if s.kind not in ("constant", "krf_linear", "interpolation"):
        raise ConfigError(f"schedule.kind {s.kind!r} is not recognized")
    if s.barrier not in (None, "r2", "cos"):
        raise ConfigError(f"schedule.barrier {s.barrier!r} is not recognized")
    if f.recipe not in ("none", "decay", "manufactured"):
        raise ConfigError(f"forcing.recipe {f.recipe!r} is not recognized")
    if f.recipe == "decay" and not f.eps > 0:
        raise ConfigError("forcing.eps must be > 0")
    return cfg


def parse_config(text):
    """Parse a YAML run configuration, fill defaults and validate."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = sorted(set(doc) - set(_BLOCKS) - {"output"})
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(map(repr, unknown))}")
    if "model" not in doc:
        raise ConfigError("missing model block")
    blocks = {name: _block(cls, name, doc.get(name)) for name, cls in _BLOCKS.items()}
    return validate(RunConfig(output=doc.get("output"), **blocks))


def build_problem(cfg):
    """Turn a validated configuration into ``(FlowProblem, RunSettings)``."""
    m = cfg.model
    if m.kind == TORUS:
        base = ModelGeometry.torus(m.n, m.resolution)
        psi = base.field(4.0 * m.psi_amplitude * np.cos(base.x()))
        model = ModelGeometry.torus(m.n, m.resolution, psi=psi) if m.psi_amplitude else base
    else:
        s = np.linspace(m.s_min, m.s_max, m.resolution)
        e, a = np.exp(s), m.background_a
        p0 = (e + a * np.log1p(e), e + a * e / (1 + e), e + a * e / (1 + e) ** 2)
        model = ModelGeometry.radial(m.n, m.resolution, m.s_min, m.s_max, p0=p0)

    fb = cfg.forcing
    if fb.recipe == "decay":
        forcing = forcing_profile(fb.C1, fb.eps, model)
    elif fb.recipe == "manufactured":
        coord = model.x() if model.is_torus else np.exp(-np.exp(model.s))
        phi = model.field(fb.amplitude * (np.cos(coord) if model.is_torus else coord))
        g1 = model.g0 + complex_hessian(phi, model)
        forcing = Forcing(g1.logdet() - model.g0.logdet())
    else:
        forcing = zero_forcing(model)

    sb = cfg.schedule
    params = {"T": sb.T}
    if sb.kind == "interpolation":
        params["sigma_T"] = model.g0 * sb.sigma_T_scale
    path = make_schedule(sb.kind, model, params)
    if sb.barrier:
        if sb.barrier == "r2":
            if model.is_torus:
                raise ConfigError("barrier 'r2' needs the radial model")
            F = sb.barrier_amplitude * np.exp(model.s)
        else:
            if not model.is_torus:
                raise ConfigError("barrier 'cos' needs the torus model")
            F = model.field(sb.barrier_amplitude * np.cos(model.x()))
        path, forcing = psh_gauge_transform(path, forcing, F, sb.T)

    omega = prescribed_form(model, forcing.f0) if cfg.omega.from_forcing else None
    rb = cfg.run
    settings = RunSettings(t_max=rb.t_max, dt_safety=rb.dt_safety, tol_w=rb.tol_w,
                           record_interval=rb.record_interval,
                           record_every_steps=rb.record_every_steps,
                           snapshot_interval=rb.snapshot_interval, p=rb.p, k=rb.k,
                           max_wall_seconds=rb.max_wall_seconds)
    return FlowProblem(model, path, forcing, omega), settings


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

@dataclass
class OutputLayout:
    directory: Path
    timeseries: str = "timeseries.csv"
    snapshot_dir: str = "snapshots"
    manifest: str = "manifest.json"

    def __post_init__(self):
        self.directory = Path(self.directory)
        names = [self.timeseries, self.snapshot_dir, self.manifest]
        if len(set(names)) != len(names):
            raise ConfigError("output layout paths must be distinct")

    def snapshot_paths(self, index):
        stem = f"{self.snapshot_dir}/snap_{index:05d}"
        return stem + ".json", stem + ".bin"


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return repr(float(value))


def write_timeseries(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in report.records:
            w.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])


def read_timeseries(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_snapshot(model, t, v, json_path, bin_path):
    v = np.ascontiguousarray(v, dtype="<f8")
    if v.shape != model.shape:
        raise ConfigError("snapshot shape does not match the model")
    Path(bin_path).write_bytes(v.tobytes(order="C"))
    meta = {
        "model_kind": model.kind,
        "n": model.n,
        "dims": list(model.shape),
        "spacings": list(model.spacing),
        "t": float(t),
        "value_count": int(v.size),
        "dtype": "<f8",
        "order": "C",
        "data": Path(bin_path).name,
    }
    if not model.is_torus:
        meta["s_range"] = [model.s_min, model.s_max]
    Path(json_path).write_text(json.dumps(meta, indent=2))
    return meta


def read_snapshot(json_path):
    meta = json.loads(Path(json_path).read_text())
    raw = (Path(json_path).parent / meta["data"]).read_bytes()
    arr = np.frombuffer(raw, dtype="<f8")
    if arr.size != meta["value_count"]:
        raise ValueError("snapshot value count does not match its sidecar")
    return meta, arr.reshape(meta["dims"])


def write_outputs(report, traj, layout, model=None, extra=None):
    """Write the time series, snapshots and manifest; return the manifest dict."""
    if not isinstance(layout, OutputLayout):
        layout = OutputLayout(layout)
    root = layout.directory
    root.mkdir(parents=True, exist_ok=True)
    written = []

    ts = root / layout.timeseries
    write_timeseries(report, ts)
    written.append(ts)

    if traj is not None and traj.snapshots and model is not None:
        (root / layout.snapshot_dir).mkdir(exist_ok=True)
        for i, (t, v) in enumerate(traj.snapshots):
            jp, bp = layout.snapshot_paths(i)
            write_snapshot(model, t, v, root / jp, root / bp)
            written += [root / jp, root / bp]

    if extra:
        for name, payload in extra.items():
            p = root / name
            p.write_text(json.dumps(payload, indent=2, default=_json_default))
            written.append(p)

    names = [str(p.relative_to(root)) for p in written]
    if len(set(names)) != len(names):
        raise ConfigError("output layout collision")
    manifest = {
        "status": report.status,
        "records": len(report.records),
        "realized": report.realized,
        "files": [{"path": n, "bytes": p.stat().st_size} for n, p in zip(names, written)],
    }
    (root / layout.manifest).write_text(json.dumps(manifest, indent=2, default=_json_default))
    return manifest


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj)!r}")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _status_code(status):
    if status in ("degenerate", "blowup"):
        return EXIT_NUMERIC
    if status in ("converged", "horizon_reached"):
        return EXIT_OK
    return EXIT_VERDICT


def _cmd_run(args):
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cfg = parse_config(text)
    problem, settings = build_problem(cfg)
    traj, report = run(problem, settings)
    out = args.out or cfg.output
    if out:
        write_outputs(report, traj, OutputLayout(out), problem.model,
                      extra={"config.json": cfg.to_dict()})
    last = report.records[-1] if report.records else None
    print(json.dumps({"status": traj.status, "t": traj.final.t, "steps": traj.final.steps,
                      "sup_w": None if last is None else last.sup_w,
                      "error": traj.error}, default=_json_default))
    return _status_code(traj.status)


def _cmd_scenario(args):
    overrides = {"grid": args.grid, "dt_safety": args.dt_safety, "t_max": args.t_max}
    traj, report, verdict = run_scenario(args.name, overrides)
    if args.out:
        model = traj.final.g.model if traj.final is not None else None
        write_outputs(report, traj, OutputLayout(args.out), model,
                      extra={"verdict.json": verdict})
    print(json.dumps({"scenario": args.name, "pass": verdict["pass"],
                      "status": verdict["status"], "checks": verdict["checks"],
                      "values": verdict["values"]}, default=_json_default))
    if traj.status in ("degenerate", "blowup"):
        return EXIT_NUMERIC
    return EXIT_OK if verdict["pass"] else EXIT_VERDICT


def _cmd_list(args):
    for name in list_scenarios():
        print(name)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="kahlerflow",
                                     description="Monge-Ampere / modified Kaehler-Ricci flow lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a flow from a YAML configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("scenario", help="run a named scenario")
    p.add_argument("name")
    p.add_argument("--grid", type=int)
    p.add_argument("--dt-safety", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_scenario)

    p = sub.add_parser("list-scenarios", help="list scenario names")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KahlerFlowError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
