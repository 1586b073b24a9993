"""Command-line interface: ``synthcontrol <command> [options]``.

Exit status is 0 on success, 1 when a domain check fails (the message starts
with the error class name) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence

SCHEMA_VERSION = "1.0"

_KINDS = ("sc", "sc_pen", "dsc", "dsc_pen")
_PRESETS = ("smoking", "basque", "german")


def _number(text: str):
    try:
        f = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    return int(f) if f.is_integer() and "." not in text and "e" not in text.lower() else f


def _lambda_grid(text: str):
    try:
        grid = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not grid:
        raise argparse.ArgumentTypeError("lambda grid is empty")
    return grid


def _split(text: str):
    parts = text.split(":")
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"expected S:L with two nonnegative integers, got {text!r}")
    return int(parts[0]), int(parts[1])


def _data_options(p: argparse.ArgumentParser, need_t0: bool = True) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="panel CSV (long format unless column options or --preset are given)")
    g.add_argument("--preset", choices=_PRESETS,
                   help="known dataset layout; fills column names, treated unit and t0")
    g.add_argument("--treated", help="treated unit id")
    g.add_argument("--t0", type=_number, help="first treated period")
    g.add_argument("--unit-col", help="unit column of a non-long-format CSV")
    g.add_argument("--time-col", help="time column of a non-long-format CSV")
    g.add_argument("--outcome-col", help="outcome column of a non-long-format CSV")
    g.add_argument("--exclude-columns", default="", help="comma-separated columns to ignore")
    g.add_argument("--allow-missing-covariates", action="store_true",
                   help="accept empty covariate cells (skipped when averaging)")


def _model_options(p: argparse.ArgumentParser, default_kind: str = "sc") -> None:
    g = p.add_argument_group("model")
    g.add_argument("--estimator", choices=_KINDS, default=default_kind)
    g.add_argument("--lambda-grid", type=_lambda_grid, help="comma-separated penalty values, ascending")
    g.add_argument("--v-candidates", type=int, default=200, help="number of importance candidates")
    g.add_argument("--split", type=_split, help="training:validation lengths of the pre-period")
    g.add_argument("--seed", type=int, default=0)


def _output_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("output")
    g.add_argument("--format", choices=("text", "json", "csv"), default="text", help="stdout format")
    g.add_argument("--out", help="directory to write every artifact into")
    g.add_argument("--jobs", type=int, default=1, help="worker processes for placebo/evaluation grids")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthcontrol", description="Synthetic control estimation toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("fit", help="fit one estimator")
    _data_options(p)
    _model_options(p)
    _output_options(p)

    p = sub.add_parser("balance", help="covariate balance table of a fit")
    _data_options(p)
    _model_options(p)
    _output_options(p)
    p.add_argument("--normalize-balance", action=argparse.BooleanOptionalAction, default=None,
                   help="divide WMAPE by |treated value| (default: on for differenced estimators)")

    p = sub.add_parser("placebo-space", help="refit with every donor as pseudo-treated")
    _data_options(p)
    _model_options(p)
    _output_options(p)
    p.add_argument("--max-pre-rmspe-ratio", type=float,
                   help="drop placebos whose pre-RMSPE exceeds this multiple of the treated unit's")

    p = sub.add_parser("placebo-time", help="refit with an earlier pseudo-intervention")
    _data_options(p)
    _model_options(p)
    _output_options(p)
    p.add_argument("--placebo-t0", type=_number, required=True)

    p = sub.add_parser("evaluate", help="leave-one-out evaluation on untreated units")
    _data_options(p)
    _model_options(p)
    _output_options(p)
    p.add_argument("--estimators", default=",".join(_KINDS), help="comma-separated estimator kinds")
    p.add_argument("--sparsity-threshold", type=float, default=1e-3)
    p.add_argument("--name", help="dataset label in the report (default: preset or file name)")

    p = sub.add_parser("bias-lab", help="worked bias examples and simulated panels")
    p.add_argument("--reproduce-examples", action="store_true", help="check every worked example")
    p.add_argument("--link", default="square", help="linear, square, cube or power(p)")
    p.add_argument("--donors", type=int, default=10)
    p.add_argument("--periods", type=int, default=20)
    p.add_argument("--covariates", type=int, default=1)
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--treated-in-hull", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")
    p.add_argument("--out", help="directory to write every artifact into")
    return parser


class _Usage(Exception):
    pass


def _clean(x):
    """JSON-safe copy: NaN and infinities become null."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _json(command: str, payload: dict) -> str:
    return json.dumps(_clean({"schema_version": SCHEMA_VERSION, "command": command, **payload}), indent=2) + "\n"


def _write_atomic(directory: Path, name: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, directory / name)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, artifacts: Dict[str, str], stdout_pick: Dict[str, str]) -> None:
    """Print the artifact chosen by ``--format``; write all artifacts to ``--out``."""
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in artifacts.items():
            _write_atomic(out, name, text)
    sys.stdout.write(artifacts[stdout_pick[args.format]])


def _load(args):
    from synthcontrol.datasets import PRESETS, data_path, load_external
    from synthcontrol.panel import load_panel

    preset = PRESETS[args.preset] if args.preset else None
    if preset is not None:
        path = args.data or data_path(preset)
        unit_col = args.unit_col or preset.unit_col
        time_col = args.time_col or preset.time_col
        outcome_col = args.outcome_col or preset.outcome_col
        exclude = preset.exclude + tuple(c for c in args.exclude_columns.split(",") if c)
        panel = load_external(path, unit_col, time_col, outcome_col, exclude)
        treated = args.treated or preset.treated_unit
        t0 = preset.t0 if args.t0 is None else args.t0
        return panel, treated, t0
    if not args.data:
        raise _Usage("--data is required (or --preset with SYNTHCONTROL_DATA set)")
    if args.treated is None or args.t0 is None:
        raise _Usage("--treated and --t0 are required")
    if args.unit_col or args.time_col or args.outcome_col:
        if not (args.unit_col and args.time_col and args.outcome_col):
            raise _Usage("--unit-col, --time-col and --outcome-col go together")
        exclude = tuple(c for c in args.exclude_columns.split(",") if c)
        panel = load_external(args.data, args.unit_col, args.time_col, args.outcome_col, exclude,
                              allow_missing_covariates=args.allow_missing_covariates)
    else:
        panel = load_panel(args.data, allow_missing_covariates=args.allow_missing_covariates)
    return panel, args.treated, args.t0


def _design(args, panel, treated, t0):
    from synthcontrol.panel import StudyDesign

    if args.split is None:
        return StudyDesign.with_default_split(panel, treated, t0)
    return StudyDesign(treated, t0, args.split[0], args.split[1])


def _config(args):
    from synthcontrol.estimators import DEFAULT_LAMBDA_GRID, SearchConfig

    if args.v_candidates < 1:
        raise _Usage("--v-candidates must be at least 1")
    grid = args.lambda_grid if args.lambda_grid is not None else DEFAULT_LAMBDA_GRID
    return SearchConfig(lambda_grid=grid, v_candidates=args.v_candidates, seed=args.seed)


def _fit_text(f) -> str:
    lines = [
        f"{f.kind.label} fit for {f.design.treated_unit} (t0={f.design.t0}, split {f.design.train_len}:{f.design.valid_len})",
        f"lambda = {f.lam!r}   alpha = {f.alpha!r}",
        f"pre-RMSPE = {f.pre_rmspe!r}   post-RMSPE = {f.post_rmspe!r}   validation RMSPE = {f.valid_rmspe!r}",
        "",
        "donor weights (> 0):",
    ]
    w = [(d, x) for d, x in f.weights_by_donor().items() if x > 0]
    width = max([len(d) for d, _ in w] + [1])
    lines += [f"  {d.ljust(width)}  {x!r}" for d, x in sorted(w, key=lambda p: -p[1])]
    lines.append("importance:")
    width = max(len(v) for v in f.variable_names)
    lines += [f"  {v.ljust(width)}  {x!r}" for v, x in zip(f.variable_names, f.v_diag.tolist())]
    lines.append("effects:")
    lines += [f"  {t}  {e!r}" for t, e in zip(f.post_times.tolist(), f.effects.tolist())]
    return "\n".join(lines) + "\n"


def _paths_csv(f) -> str:
    rows = ["time,treated,counterfactual,gap"]
    for t, y, c in zip(f.time_points.tolist(), f.treated_path.tolist(), f.counterfactual.tolist()):
        rows.append(f"{t},{y!r},{c!r},{y - c!r}")
    return "\n".join(rows) + "\n"


def _cmd_fit(args) -> None:
    from synthcontrol.estimators import fit

    panel, treated, t0 = _load(args)
    f = fit(panel, _design(args, panel, treated, t0), args.estimator, _config(args))
    artifacts = {"fit.json": _json("fit", {"result": f.to_dict()}), "fit.txt": _fit_text(f),
                 "paths.csv": _paths_csv(f)}
    _emit(args, artifacts, {"json": "fit.json", "text": "fit.txt", "csv": "paths.csv"})


def _cmd_balance(args) -> None:
    from synthcontrol.diagnostics import balance_table
    from synthcontrol.estimators import fit
    from synthcontrol.panel import build_predictor_matrices

    panel, treated, t0 = _load(args)
    design = _design(args, panel, treated, t0)
    f = fit(panel, design, args.estimator, _config(args))
    m = build_predictor_matrices(panel, design, differenced=f.kind.differenced)
    table = balance_table(f, m, normalized=args.normalize_balance)
    rows = ["variable,treated,synthetic,wmape,importance"]
    rows += [f"{r.variable},{r.treated!r},{r.synthetic!r},{r.wmape!r},{r.importance!r}" for r in table.rows]
    artifacts = {
        "balance.json": _json("balance", {"balance": table.to_dict(), "fit": f.to_dict()}),
        "balance.txt": table.render() + "\n",
        "balance.csv": "\n".join(rows) + "\n",
    }
    _emit(args, artifacts, {"json": "balance.json", "text": "balance.txt", "csv": "balance.csv"})


def _cmd_placebo_space(args) -> None:
    from synthcontrol.inference import in_space_placebos

    panel, treated, t0 = _load(args)
    study = in_space_placebos(panel, _design(args, panel, treated, t0), args.estimator, _config(args),
                              max_pre_rmspe_ratio=args.max_pre_rmspe_ratio, n_jobs=args.jobs)
    fits = (study.treated_fit,) + study.placebo_fits
    width = max(len(f.design.treated_unit) for f in fits)
    lines = [f"{'unit'.ljust(width)}  {'pre_rmspe':>12}  {'post_rmspe':>12}  {'ratio':>12}"]
    for f, r in zip(fits, study.ratios.tolist()):
        lines.append(f"{f.design.treated_unit.ljust(width)}  {f.pre_rmspe:12.4f}  {f.post_rmspe:12.4f}  {r:12.4f}")
    lines.append(f"p-value = {study.p_value!r} ({len(study.placebo_fits)} placebos)")
    lines += [f"failed: {x.unit}: {x.error}: {x.message}" for x in study.failures]
    lines += [f"excluded: {u}" for u in study.excluded]
    artifacts = {
        "placebo_space.json": _json("placebo-space", study.to_dict()),
        "placebo_space.txt": "\n".join(lines) + "\n",
        "placebo_paths.csv": study.paths_csv(),
        "placebo_ratios.csv": study.ratios_csv(),
    }
    _emit(args, artifacts, {"json": "placebo_space.json", "text": "placebo_space.txt", "csv": "placebo_ratios.csv"})


def _cmd_placebo_time(args) -> None:
    from synthcontrol.inference import in_time_placebo

    panel, treated, t0 = _load(args)
    design = _design(args, panel, treated, t0)
    valid_len = args.split[1] if args.split else None
    f = in_time_placebo(panel, design, args.placebo_t0, args.estimator, _config(args), valid_len=valid_len)
    artifacts = {
        "placebo_time.json": _json("placebo-time", {"placebo_t0": args.placebo_t0, "result": f.to_dict()}),
        "placebo_time.txt": _fit_text(f),
        "placebo_time_paths.csv": _paths_csv(f),
    }
    _emit(args, artifacts, {"json": "placebo_time.json", "text": "placebo_time.txt", "csv": "placebo_time_paths.csv"})


def _cmd_evaluate(args) -> None:
    from synthcontrol.evaluation import leave_one_out_eval
    from synthcontrol.panel import StudyDesign

    panel, treated, t0 = _load(args)
    try:
        kinds = [k.strip() for k in args.estimators.split(",") if k.strip()]
        if not kinds or any(k not in _KINDS for k in kinds):
            raise ValueError
    except ValueError:
        raise _Usage(f"--estimators must list kinds from {', '.join(_KINDS)}")
    design = _design(args, panel, treated, t0)
    name = args.name or args.preset or Path(args.data).stem
    report = leave_one_out_eval(
        panel, design, kinds, _config(args), dataset=name, sparsity_threshold=args.sparsity_threshold,
        valid_len=args.split[1] if args.split else None, n_jobs=args.jobs,
    )
    if args.split and report.metadata[name]["train_len"] != args.split[0]:
        from synthcontrol.errors import InvalidDesign

        n_pre = report.metadata[name]["train_len"] + report.metadata[name]["valid_len"]
        raise InvalidDesign(f"split {args.split[0]}:{args.split[1]} does not cover the {n_pre} pre-periods")
    artifacts = {
        "evaluation.json": _json("evaluate", report.to_dict()),
        "evaluation.txt": report.render() + "\n",
        "evaluation_units.csv": report.units_csv(),
    }
    _emit(args, artifacts, {"json": "evaluation.json", "text": "evaluation.txt", "csv": "evaluation_units.csv"})


def _cmd_bias_lab(args) -> int:
    from synthcontrol import bias_lab
    from synthcontrol.panel import write_panel

    if args.reproduce_examples:
        report = bias_lab.reproduce_examples()
        artifacts = {"examples.json": _json("bias-lab", report.to_dict()), "examples.txt": report.render() + "\n"}
        args.format = "json" if args.format == "json" else "text"
        _emit(args, artifacts, {"json": "examples.json", "text": "examples.txt"})
        return 0 if report.passed else 1
    spec = bias_lab.GenerativeSpec(
        n_donors=args.donors, n_times=args.periods, n_covariates=args.covariates, link=args.link,
        noise_sd=args.noise_sd, seed=args.seed, treated_in_hull=args.treated_in_hull,
    )
    g = bias_lab.generate_panel(spec)
    truth = {
        "link": spec.link.name,
        "flags": list(spec.flags),
        "seed": spec.seed,
        "treated_unit": g.treated_unit,
        "Z": g.Z.tolist(),
        "noiseless": g.noiseless.tolist(),
        "eps": g.eps.tolist(),
        "hull_weights": None if g.hull_weights is None else g.hull_weights.tolist(),
    }
    csv_text = write_panel(g.panel)
    summary = (f"simulated {g.panel.n_units} units x {g.panel.n_times} periods, link {spec.link.name}, "
               f"noise sd {spec.noise_sd!r}, seed {spec.seed}; treated unit {g.treated_unit}\n")
    summary += "".join(f"flag: {x}\n" for x in spec.flags)
    artifacts = {"panel.csv": csv_text, "truth.json": _json("bias-lab", truth), "simulation.txt": summary}
    _emit(args, artifacts, {"csv": "panel.csv", "json": "truth.json", "text": "simulation.txt"})
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "balance": _cmd_balance,
    "placebo-space": _cmd_placebo_space,
    "placebo-time": _cmd_placebo_time,
    "evaluate": _cmd_evaluate,
    "bias-lab": _cmd_bias_lab,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and execute; returns the process exit status."""
    from synthcontrol.errors import SynthControlError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        status = _COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except SynthControlError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
