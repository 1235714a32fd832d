"""Command-line entry point: ``finslerlab compute | verify | scan``.

Exit codes: 0 success, 1 an identity failed, 2 usage/config/sampling error,
3 invalid point.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import catalog as cat
from .catalog import FieldSpec, MetricSpec
from .change import barred_derived, evaluate_change
from .errors import (
    ConfigError,
    DegenerateMetric,
    FinslerError,
    InvalidChange,
    InvalidPoint,
    SamplingExhausted,
)
from .geometry import frame_for
from .jets import JetContext
from .verify import (
    SUITES,
    RunConfig,
    reports_to_csv,
    reports_to_json,
    run,
    scan_grid,
    scan_to_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_POINT = 0, 1, 2, 3

# index pattern of every tensor in the compute dump; '^' marks upper slots
UNBARRED_LABELS = {
    "L": "", "g": "_ij", "g_inv": "^ij", "h": "_ij", "C": "_ijk", "C_up": "^i_jk",
    "S": "^i", "N": "^i_j", "Gamma": "^i_jk", "P": "^i_jk", "R": "^i_jk",
}
BARRED_LABELS = {
    "Lbar": "", "tau": "", "gbar": "_ij", "gbar_inv": "^ij", "Cbar": "_ijk", "A": "^i_jk",
    "E": "_ij", "F": "_ij", "D00": "^r", "D0j": "^r_j", "D": "^i_jk",
}
DERIVED_LABELS = {"S": "^i", "N": "^i_j", "Gamma": "^i_jk", "P": "^i_jk"}


def parse_point(text: str, n: int | None = None):
    """``"x1,x2;y1,y2"`` -> (x, y) arrays."""
    try:
        xs, ys = text.split(";")
        x = np.array([float(v) for v in xs.split(",")])
        y = np.array([float(v) for v in ys.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad --at value {text!r}; expected 'x1,x2;y1,y2'") from exc
    if x.shape != y.shape or (n is not None and len(x) != n):
        raise ConfigError("--at: x and y must both have the metric's dimension")
    return x, y


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _tensor(value: np.ndarray, label: str) -> dict:
    return {"indices": label, "shape": list(value.shape), "values": value.tolist()}


def compute_document(metric: MetricSpec, change: FieldSpec | None, x, y, order: int = 5) -> dict:
    """Structured dump of the unbarred frame and, if ``change`` is given, the
    barred objects and the difference tensor at one point."""
    point = cat.point_validity(metric, change, x, y)
    if not point.valid:
        raise InvalidPoint(f"invalid point x={np.asarray(x).tolist()}, y={np.asarray(y).tolist()}")
    ctx = JetContext(metric.n, order)
    doc = {"metric": metric.to_dict(), "point": {"x": list(map(float, x)),
                                                  "y": list(map(float, y))}}
    _, fr = frame_for(metric, [point], ctx)
    vals = fr.values()
    doc["unbarred"] = {k: _tensor(vals[k][0], lab) for k, lab in UNBARRED_LABELS.items()
                       if k in vals}
    if change is not None:
        doc["change"] = change.to_dict()
        ev = evaluate_change(metric, change, [point], ctx, direct=False)
        cvals = ev.cf.values()
        doc["barred"] = {k: _tensor(cvals[k][0], lab) for k, lab in BARRED_LABELS.items()}
        if order >= 5:
            bd = barred_derived(ev.frame, ev.cf)
            doc["barred"].update({f"{k}bar": _tensor(getattr(bd, k).value[0], lab)
                                  for k, lab in DERIVED_LABELS.items()})
    return doc


def _flatten(doc: dict) -> str:
    lines = ["block,name,index,value"]
    for block in ("unbarred", "barred"):
        for name, t in doc.get(block, {}).items():
            arr = np.asarray(t["values"], dtype=float)
            for idx in np.ndindex(arr.shape):
                lines.append(f"{block},{name},{'.'.join(map(str, idx))},{float(arr[idx])!r}")
    return "\n".join(lines) + "\n"


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _specs(args):
    metric = MetricSpec.from_dict(_load_json(args.metric)) if args.metric else None
    change = FieldSpec.from_dict(_load_json(args.change)) if args.change else None
    return metric, change


def cmd_compute(args) -> int:
    metric, change = _specs(args)
    if metric is None:
        raise ConfigError("compute needs --metric")
    if args.at is None:
        raise ConfigError("compute needs --at 'x1,..;y1,..'")
    x, y = parse_point(args.at, metric.n)
    doc = compute_document(metric, change, x, y, args.order or 5)
    text = (json.dumps(doc, sort_keys=True, indent=1) + "\n" if args.format == "json"
            else _flatten(doc))
    _emit(text, args.out)
    return EXIT_OK


def _parse_tolerances(items) -> dict:
    out = {}
    for item in items or ():
        key, _, value = item.partition("=")
        try:
            out[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad --tolerance {item!r}; expected ID=VALUE") from exc
    return out


def build_config(args) -> RunConfig:
    base = RunConfig.from_dict(_load_json(args.config)).to_dict() if args.config else {}
    metric, change = _specs(args)
    if metric is not None:
        base["metric"] = metric.to_dict()
    if change is not None:
        base["change"] = change.to_dict()
    for key, attr in (("suites", "suite"), ("samples", "samples"), ("seed", "seed"),
                      ("jet_order", "order"), ("output", "out"), ("format", "format"),
                      ("n", "dim")):
        value = getattr(args, attr, None)
        if value is not None:
            base[key] = value
    tol = _parse_tolerances(args.tolerance)
    if tol:
        base["tolerances"] = {**base.get("tolerances", {}), **tol}
    return RunConfig.from_dict(base)


def cmd_verify(args) -> int:
    config = build_config(args)
    reports = run(config)
    js, cs = reports_to_json(reports), reports_to_csv(reports)
    if config.output:
        out = Path(config.output)
        main, other = (js, cs) if config.format == "json" else (cs, js)
        out.write_text(main)
        out.with_suffix(".csv" if config.format == "json" else ".json").write_text(other)
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"FAIL {r.id} [{r.case}] max_rel={r.max_rel:.3e} tol={r.tolerance:g} {r.notes}",
              file=sys.stderr)
    print(f"{len(reports) - len(failed)}/{len(reports)} identity reports passed",
          file=sys.stderr)
    if not config.output:
        sys.stdout.write(js if config.format == "json" else cs)
    return EXIT_FAIL if failed else EXIT_OK


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def cmd_scan(args) -> int:
    metric, _ = _specs(args)
    metric = metric or MetricSpec("euclidean", args.dim or 2)
    rows = scan_grid(metric, _floats(args.sigma_amplitudes), _floats(args.b_magnitudes),
                     samples=args.samples or 20, seed=args.seed or 0, jet_order=args.order or 5)
    if args.format == "json":
        _emit(json.dumps(rows, sort_keys=True, indent=1) + "\n", args.out)
    else:
        _emit(scan_to_csv(rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finslerlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt_default):
        p.add_argument("--metric", metavar="FILE", help="metric spec JSON")
        p.add_argument("--change", metavar="FILE", help="change spec JSON (sigma, b)")
        p.add_argument("--order", type=int, metavar="K", help="jet truncation order")
        p.add_argument("--out", metavar="PATH", help="output file (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default=fmt_default)
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--dim", type=int, help="dimension of the default catalog")

    p = sub.add_parser("compute", help="dump every tensor at one point")
    common(p, "json")
    p.add_argument("--at", metavar="X;Y", help="point as 'x1,x2;y1,y2'")
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("verify", help="run verification suites")
    common(p, None)
    p.add_argument("--config", metavar="FILE", help="RunConfig JSON")
    p.add_argument("--suite", action="append", choices=list(SUITES), metavar="NAME",
                   help=f"suite to run (repeatable): {', '.join(SUITES)}")
    p.add_argument("--tolerance", action="append", metavar="ID=VALUE",
                   help="override one identity's tolerance (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scan", help="max |D| over a grid of sigma amplitude x b magnitude")
    common(p, "csv")
    p.add_argument("--sigma-amplitudes", default="0,0.25,0.5,1.0")
    p.add_argument("--b-magnitudes", default="0,0.1,0.5,0.9")
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, SamplingExhausted) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidPoint, InvalidChange, DegenerateMetric) as exc:
        print(f"invalid point: {exc}", file=sys.stderr)
        return EXIT_POINT
    except FinslerError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
