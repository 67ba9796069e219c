"""Command-line interface.

Subcommands: ``estimate`` (one bias-aware CI), ``sensitivity`` (sweep over
the heterogeneity bound, optionally with a rendered figure), ``vcate``
(heterogeneity-variance estimates and a suggested bound), ``simulate``
(fixed-design Monte Carlo from a config file), ``staggered`` (panel
pipeline), and ``compare`` (side-by-side estimator table).

Outputs are deterministic for a fixed configuration and seed: floats are
serialized with round-trip ``repr`` and every header line is derived from
the resolved configuration, never from the clock. Exit codes: 2 for
configuration errors, 3 for data errors, 4 for numerical failures.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from .baselines import COMPARISON_COLUMNS, DEFAULT_TRIM_C, comparison_table
from .dataset import ColumnSchema, load_csv, load_panel_csv, panel_to_design, saturate
from .design import build_design
from .errors import ConfigError, RegulateError
from .inference import feasible_ci
from .simlab import (
    MC_COLUMNS,
    parse_dgp_config,
    result_rows,
    simulate,
    spec_from_config,
)
from .vcate import SENSITIVITY_COLUMNS, sensitivity, vcate_report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _render_record(record: dict, header: dict, fmt: str) -> str:
    lines = []
    if fmt == "csv":
        lines.extend(f"# {k}={_fmt(v)}" for k, v in header.items())
        lines.append(",".join(record.keys()))
        lines.append(",".join(_fmt(v) for v in record.values()))
    else:
        lines.extend(f"{k} = {_fmt(v)}" for k, v in header.items())
        lines.append("-" * 40)
        width = max(len(k) for k in record)
        lines.extend(f"{k:<{width}}  {_fmt(v)}" for k, v in record.items())
    return "\n".join(lines) + "\n"


def _render_table(rows: list[dict], columns, header: dict, fmt: str) -> str:
    lines = []
    if fmt == "csv":
        lines.extend(f"# {k}={_fmt(v)}" for k, v in header.items())
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_fmt(row.get(c)) for c in columns))
    else:
        lines.extend(f"{k} = {_fmt(v)}" for k, v in header.items())
        lines.append("-" * 40)
        cells = [[_fmt(row.get(c)) for c in columns] for row in rows]
        widths = [
            max(len(col), *(len(r[i]) for r in cells)) if cells else len(col)
            for i, col in enumerate(columns)
        ]
        lines.append("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
        for r in cells:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ConfigError("--c-grid expects lo:hi:step") from exc
    if step <= 0 or hi < lo:
        raise ConfigError("--c-grid expects step > 0 and hi >= lo")
    count = int(round((hi - lo) / step)) + 1
    return tuple(round(lo + i * step, 12) for i in range(count))


def _grid_spec(args):
    from .inference import GridSpec

    if not getattr(args, "lambda_grid", None):
        return None
    try:
        lo, hi, points = args.lambda_grid.split(":")
        return GridSpec(n_points=int(points), lo=float(lo), hi=float(hi))
    except ValueError as exc:
        raise ConfigError("--lambda-grid expects lo:hi:points") from exc


def _reject_c_grid(args, command: str) -> None:
    if getattr(args, "c_grid", None):
        raise ConfigError(f"{command} takes --c; use the sensitivity command for --c-grid")


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="input CSV path")
    parser.add_argument("--outcome", help="outcome column")
    parser.add_argument("--treatment", help="treatment column")
    parser.add_argument("--covariates", help="comma-separated covariate columns")
    parser.add_argument("--discrete", help="comma-separated discrete columns to saturate")
    parser.add_argument("--estimand", choices=("ate", "att", "atu"), default="ate")
    parser.add_argument("--c", type=float, default=0.0, help="heterogeneity bound")
    parser.add_argument("--c-grid", help="bound grid as lo:hi:step")
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--se", choices=("homo", "robust", "cluster"), default="robust")
    parser.add_argument("--cluster-col", help="cluster id column")
    parser.add_argument("--trim-c", type=float, default=DEFAULT_TRIM_C)
    parser.add_argument("--lambda-grid", help="penalty search override as lo:hi:points")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output path (default: stdout)")
    parser.add_argument("--format", choices=("csv", "pretty"), default="pretty")
    parser.add_argument("--plot", action="store_true",
                        help="render a figure next to --out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regulate",
        description="Bias-aware treatment effect estimation under bounded heterogeneity",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("estimate", "sensitivity", "vcate", "compare"):
        p = sub.add_parser(name)
        _common_flags(p)
    p = sub.add_parser("staggered")
    _common_flags(p)
    p.add_argument("--unit", required=True, help="unit id column")
    p.add_argument("--time", required=True, help="time period column")
    p = sub.add_parser("simulate")
    _common_flags(p)
    p.add_argument("--reps", type=int, help="replications (overrides config)")
    p.add_argument("--mode", choices=("oracle", "feasible"), help="overrides config")
    return parser


def _schema_from_args(args) -> ColumnSchema:
    if not (args.outcome and args.treatment and args.covariates):
        raise ConfigError("--outcome, --treatment and --covariates are required")
    covs = tuple(v.strip() for v in args.covariates.split(",") if v.strip())
    discrete = tuple(
        v.strip() for v in (args.discrete or "").split(",") if v.strip()
    )
    return ColumnSchema(
        outcome=args.outcome,
        treatment=args.treatment,
        covariates=covs,
        discrete=discrete,
        cluster=args.cluster_col,
    )


def _design_from_args(args):
    schema = _schema_from_args(args)
    ds = load_csv(args.input, schema)
    if schema.discrete:
        ds = saturate(ds, schema.discrete)
    return build_design(ds, args.estimand)


def _header(args, command: str, extra: dict | None = None) -> dict:
    head = {
        "command": command,
        "input": args.input,
        "estimand": getattr(args, "estimand", None),
        "alpha": args.alpha,
        "se": args.se,
        "cluster_col": args.cluster_col,
        "trim_c": args.trim_c,
        "seed": args.seed,
    }
    if getattr(args, "c_grid", None):
        head["c_grid"] = args.c_grid
    else:
        head["c"] = args.c
    if extra:
        head.update(extra)
    return {k: v for k, v in head.items() if v is not None}


def _maybe_plot(args, curve) -> None:
    if not args.plot:
        return
    if not args.out:
        raise ConfigError("--plot needs --out to place the figure")
    from .plots import sensitivity_figure

    sensitivity_figure(curve, Path(args.out).with_suffix(".png"))


def _cmd_estimate(args) -> None:
    _reject_c_grid(args, "estimate")
    dm = _design_from_args(args)
    report = feasible_ci(
        dm, c_bound=args.c, alpha=args.alpha, se_kind=args.se, grid=_grid_spec(args)
    )
    _emit(_render_record(report.to_row(), _header(args, "estimate"), args.format), args.out)


def _cmd_sensitivity(args, dm=None, command: str = "sensitivity") -> None:
    if dm is None:
        dm = _design_from_args(args)
    if not args.c_grid:
        raise ConfigError("sensitivity needs --c-grid lo:hi:step")
    curve = sensitivity(
        dm, c_grid=_parse_grid(args.c_grid), alpha=args.alpha, se_kind=args.se,
        grid=_grid_spec(args),
    )
    extra = {"breakdown_c": curve.breakdown_c if curve.breakdown_c is not None else "none"}
    text = _render_table(curve.to_rows(), SENSITIVITY_COLUMNS, _header(args, command, extra), args.format)
    _emit(text, args.out)
    _maybe_plot(args, curve)
    for c, msgs in curve.errors.items():
        for msg in msgs:
            print(f"warning: C={c}: {msg}", file=sys.stderr)


def _cmd_vcate(args) -> None:
    dm = _design_from_args(args)
    record = vcate_report(dm, alpha=args.alpha)
    _emit(_render_record(record, _header(args, "vcate"), args.format), args.out)


def _cmd_compare(args) -> None:
    _reject_c_grid(args, "compare")
    dm = _design_from_args(args)
    rows = comparison_table(
        dm, c_bound=args.c, alpha=args.alpha, se_kind=args.se, trim_c=args.trim_c
    )
    _emit(_render_table(rows, COMPARISON_COLUMNS, _header(args, "compare"), args.format), args.out)


def _cmd_staggered(args) -> None:
    if not (args.outcome and args.treatment):
        raise ConfigError("--outcome and --treatment are required")
    panel = load_panel_csv(
        args.input, unit=args.unit, time=args.time,
        outcome=args.outcome, treatment=args.treatment,
    )
    ds = panel_to_design(panel, estimand="att")
    dm = build_design(ds, "att")
    if args.c_grid:
        args.estimand = "att"
        _cmd_sensitivity(args, dm=dm, command="staggered")
        return
    report = feasible_ci(dm, c_bound=args.c, alpha=args.alpha, se_kind=args.se)
    _emit(_render_record(report.to_row(), _header(args, "staggered"), args.format), args.out)


def _cmd_simulate(args) -> None:
    cfg = parse_dgp_config(args.input)
    spec, extras = spec_from_config(cfg)
    reps = args.reps if args.reps is not None else extras["reps"]
    if reps is None:
        reps = 500
    mode = args.mode if args.mode is not None else extras["mode"]
    seed = args.seed if args.seed != 0 else extras["seed"]
    result = simulate(
        spec,
        reps=reps,
        alpha=extras["alpha"],
        estimators=extras["estimators"],
        mode=mode,
        master_seed=seed,
        trim_c=extras["trim_c"],
    )
    extra = {"reps": reps, "mode": mode, "beta_target": result.beta_target}
    _emit(
        _render_table(result_rows(result), MC_COLUMNS, _header(args, "simulate", extra), args.format),
        args.out,
    )


_COMMANDS = {
    "estimate": _cmd_estimate,
    "sensitivity": _cmd_sensitivity,
    "vcate": _cmd_vcate,
    "compare": _cmd_compare,
    "staggered": _cmd_staggered,
    "simulate": _cmd_simulate,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            _COMMANDS[args.command](args)
    except RegulateError as exc:
        kind = type(exc).__name__.removesuffix("Error").lower()
        print(f'error code={exc.exit_code} kind={kind} message="{exc}"', file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
