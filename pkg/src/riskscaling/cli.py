"""Command-line surface.

Commands: ``calibrate``, ``robust``, ``decompose``, ``tables``, ``backtest``
and ``synthetic-backtest``. Every command resolves its parameters by
layering a YAML config file, ``RISKSCALING_*`` environment variables and
command-line flags (flags win), writes UTF-8 CSV/JSON reports plus PNG
figures where a figure is natural, and always emits ``manifest.json`` with
the resolved configuration, its hash, the seed and library versions.

Exit codes: 2 for configuration and input problems, 3 for solver and
fitting failures.
"""
from __future__ import annotations

import csv
import functools
import json
import math
import os
import sys
from typing import Any, Mapping, Optional, Sequence

import click
import numpy as np

from . import figures
from .backtest import (
    DEFAULT_CAL_M,
    BacktestResult,
    Horizon,
    ReturnPanel,
    aggregate_methods,
    density_report,
    horizon_from_config,
    ingest_returns,
    make_synthetic_panel,
    method_to_config,
    rolling_backtest,
    standard_methods,
)
from .calibration import (
    DEFAULT_TOL,
    calibrate,
    closed_form_gaussian_scalar,
    decompose,
    problem_from_config,
    problem_to_config,
    robust_calibrate,
)
from .config import (
    DEFAULT_M,
    RunConfig,
    env_overrides,
    load_config_file,
    merge_config,
    reject_unknown_keys,
    write_manifest,
)
from .distributions import Normal, StudentT
from .errors import (
    ConfigError,
    DegenerateFitError,
    IngestionError,
    InsufficientSampleError,
    PanelError,
    ParameterError,
    UnboundedScalarError,
)
from .presets import (
    CalibratePreset,
    GridPreset,
    RobustPreset,
    TablePreset,
    get_preset,
    preset_names,
)
from .rng import DEFAULT_SEED

_CONFIG_EXIT = 2
_SOLVER_EXIT = 3


def _wrap_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigError, IngestionError, ParameterError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_CONFIG_EXIT)
        except (
            UnboundedScalarError,
            PanelError,
            DegenerateFitError,
            InsufficientSampleError,
        ) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_SOLVER_EXIT)

    return wrapper


def _f4(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.4f}"


def _sig2(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.2g}"


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: str, body: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(body, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _parse_range(text: Any, integer: bool = False) -> list:
    """"lo..hi" (9 evenly spaced points), "lo..hi..step", or a single value."""
    parts = str(text).split("..")
    try:
        if len(parts) == 1:
            values = [float(parts[0])]
        elif len(parts) == 2:
            lo, hi = float(parts[0]), float(parts[1])
            values = list(np.linspace(lo, hi, 9))
        elif len(parts) == 3:
            lo, hi, step = (float(p) for p in parts)
            if step <= 0:
                raise ValueError("step must be positive")
            values = list(np.arange(lo, hi + step / 2, step))
        else:
            raise ValueError("too many '..' separators")
    except ValueError as exc:
        raise ConfigError(f"cannot parse range {text!r}: {exc}") from None
    if integer:
        return list(dict.fromkeys(int(round(v)) for v in values))
    return [float(v) for v in values]


def _resolve(config_path: Optional[str], flags: Mapping[str, Any], allowed: set) -> RunConfig:
    file_layer = load_config_file(config_path) if config_path else {}
    # a manifest from an earlier run is valid input: unwrap its config block
    if {"config", "config_sha256"}.issubset(file_layer):
        file_layer = dict(file_layer["config"])
    file_layer.pop("command", None)
    data = merge_config(file_layer, env_overrides())
    given = {k: v for k, v in flags.items() if v is not None}
    data = merge_config(data, given)
    reject_unknown_keys(data, allowed, "config")
    return RunConfig(data=data, config_path=config_path)


def _scalar_rows(label: str, result) -> list:
    d = result.diagnostics
    return [
        label,
        _f4(result.c_star),
        _sig2(result.mc_std_error),
        str(result.solver_iterations),
        _f4(result.bracket[0]),
        _f4(result.bracket[1]),
        _f4(d.negative_reserve_fraction),
        str(d.monotonicity_violated).lower(),
        str(d.already_riskless).lower(),
        str(d.unbounded).lower(),
    ]


_SCALAR_HEADER = [
    "label",
    "c_star",
    "mc_std_error",
    "iterations",
    "bracket_lo",
    "bracket_hi",
    "negative_reserve_fraction",
    "monotonicity_violated",
    "already_riskless",
    "unbounded",
]


def _scalar_json(result) -> dict:
    d = result.diagnostics
    return {
        "c_star": result.c_star,
        "mc_std_error": None if math.isnan(result.mc_std_error) else result.mc_std_error,
        "iterations": result.solver_iterations,
        "bracket": list(result.bracket),
        "diagnostics": {
            "negative_reserve_fraction": d.negative_reserve_fraction,
            "monotonicity_violated": d.monotonicity_violated,
            "already_riskless": d.already_riskless,
            "unbounded": d.unbounded,
        },
    }


def _out_dir(value: Optional[str]) -> str:
    out = value or "."
    os.makedirs(out, exist_ok=True)
    return out


@click.group()
@click.version_option(package_name="riskscaling")
def main() -> None:
    """Risk-unbiased scaling factors for VaR and ES estimators."""


_COMMON_ALLOWED = {"mc", "seed", "tol", "workers", "out"}


def _common_options(func):
    func = click.option("--config", "config_path", type=click.Path(), default=None,
                        help="YAML config file (a manifest.json also works).")(func)
    func = click.option("--mc", type=int, default=None,
                        help=f"Monte Carlo panel size (default {DEFAULT_M}).")(func)
    func = click.option("--seed", type=int, default=None,
                        help=f"master seed (default {DEFAULT_SEED}).")(func)
    func = click.option("--tol", type=float, default=None,
                        help=f"solver tolerance (default {DEFAULT_TOL}).")(func)
    func = click.option("--workers", type=int, default=None,
                        help="worker threads for panel construction (default 1).")(func)
    func = click.option("--out", type=click.Path(), default=None,
                        help="output directory (default: current directory).")(func)
    return func


def _numbers(cfg: RunConfig) -> tuple[int, int, float, int, str]:
    mc = cfg.get_int("mc", DEFAULT_M)
    seed = cfg.get_int("seed", DEFAULT_SEED)
    tol = cfg.get_float("tol", DEFAULT_TOL)
    workers = cfg.get_int("workers", 1)
    out = _out_dir(cfg.get_str("out"))
    return mc, seed, tol, workers, out


def _problem_from(cfg: RunConfig, preset_obj) -> tuple:
    """(problem, preset-name) for single-problem commands."""
    if preset_obj is not None:
        if not isinstance(preset_obj, CalibratePreset):
            raise ConfigError(
                f"preset {preset_obj.name!r} is not a single-problem preset; "
                "use the robust or tables command for it"
            )
        return preset_obj.problem, preset_obj.name
    section = cfg.data.get("problem")
    if section is None:
        raise ConfigError(
            "missing required config key 'problem' (or pass --preset); "
            f"presets: {', '.join(preset_names())}"
        )
    return problem_from_config(section), None


@main.command("calibrate")
@click.option("--preset", type=str, default=None,
              help=f"named parameter set: {', '.join(preset_names())}.")
@click.option("--n", "n_range", type=str, default=None,
              help="sample-size range for grid presets, e.g. 100..250 or 10..250..20.")
@click.option("--alpha", "alpha_range", type=str, default=None,
              help="level range for grid presets, e.g. 0.005..0.025.")
@_common_options
@_wrap_errors
def calibrate_cmd(config_path, preset, n_range, alpha_range, mc, seed, tol, workers, out):
    """Solve one scaling problem, or evaluate the closed-form Gaussian grid."""
    flags = {"mc": mc, "seed": seed, "tol": tol, "workers": workers, "out": out,
             "preset": preset, "n": n_range, "alpha": alpha_range}
    cfg = _resolve(config_path, flags, _COMMON_ALLOWED | {"preset", "problem", "n", "alpha"})
    mc, seed, tol, workers, out = _numbers(cfg)
    preset_name = cfg.get_str("preset")
    preset_obj = get_preset(preset_name) if preset_name else None

    if isinstance(preset_obj, GridPreset):
        _run_grid(cfg, preset_obj, out)
        return

    problem, pname = _problem_from(cfg, preset_obj)
    result = calibrate(problem, mc, seed, tol, workers=workers)
    csv_path = os.path.join(out, "calibrate.csv")
    _write_csv(csv_path, _SCALAR_HEADER, [_scalar_rows(pname or "problem", result)])
    body = _scalar_json(result)
    body["problem"] = problem_to_config(problem)
    _write_json(os.path.join(out, "calibrate.json"), body)
    resolved = {
        "command": "calibrate", "preset": pname, "mc": mc, "seed": seed,
        "tol": tol, "workers": workers, "problem": problem_to_config(problem),
    }
    write_manifest(os.path.join(out, "manifest.json"), resolved, seed,
                   ["calibrate.csv", "calibrate.json"])
    click.echo(
        f"c_star={_f4(result.c_star)} mc_std_error={_sig2(result.mc_std_error)} "
        f"iterations={result.solver_iterations}"
    )


def _run_grid(cfg: RunConfig, preset_obj: GridPreset, out: str) -> None:
    n_text = cfg.data.get("n", f"{preset_obj.n_lo}..{preset_obj.n_hi}")
    alpha_text = cfg.data.get("alpha", f"{preset_obj.alpha_lo}..{preset_obj.alpha_hi}")
    ns = _parse_range(n_text, integer=True)
    alphas = _parse_range(alpha_text)
    grid = np.empty((len(alphas), len(ns)))
    rows = []
    for i, alpha in enumerate(alphas):
        for j, n in enumerate(ns):
            grid[i, j] = closed_form_gaussian_scalar(n, alpha)
            rows.append([str(n), f"{alpha:.6g}", _f4(grid[i, j])])
    csv_path = os.path.join(out, "gaussian_grid.csv")
    _write_csv(csv_path, ["n", "alpha", "c_star"], rows)
    png_path = os.path.join(out, "gaussian_grid.png")
    figures.save_heatmap(ns, alphas, grid, png_path)
    seed = cfg.get_int("seed", DEFAULT_SEED)
    resolved = {
        "command": "calibrate", "preset": preset_obj.name,
        "n": str(n_text), "alpha": str(alpha_text),
    }
    write_manifest(os.path.join(out, "manifest.json"), resolved, seed,
                   ["gaussian_grid.csv", "gaussian_grid.png"])
    click.echo(f"grid {len(ns)}x{len(alphas)} written to {csv_path}")


@main.command("robust")
@click.option("--preset", type=str, default=None,
              help="family preset, e.g. gpd-es-sweep or student-t-es-sweep.")
@_common_options
@_wrap_errors
def robust_cmd(config_path, preset, mc, seed, tol, workers, out):
    """Family supremum of per-member scaling factors."""
    flags = {"mc": mc, "seed": seed, "tol": tol, "workers": workers, "out": out,
             "preset": preset}
    cfg = _resolve(config_path, flags, _COMMON_ALLOWED | {"preset", "problems"})
    mc, seed, tol, workers, out = _numbers(cfg)
    preset_name = cfg.get_str("preset")
    if preset_name:
        preset_obj = get_preset(preset_name)
        if not isinstance(preset_obj, RobustPreset):
            raise ConfigError(f"preset {preset_name!r} is not a family preset")
        problems = list(preset_obj.problems)
        labels = list(preset_obj.labels)
        values = list(preset_obj.values)
        parameter = preset_obj.parameter
    else:
        section = cfg.data.get("problems")
        if not section:
            raise ConfigError("missing required config key 'problems' (or pass --preset)")
        problems = [problem_from_config(p) for p in section]
        labels = [f"member-{k}" for k in range(len(problems))]
        values = [float(k) for k in range(len(problems))]
        parameter = "member"

    result = robust_calibrate(problems, mc, seed, tol, workers=workers)
    rows = [_scalar_rows(label, member) for label, member in zip(labels, result.members)]
    _write_csv(os.path.join(out, "robust.csv"), _SCALAR_HEADER, rows)
    body = {
        "c_star_sup": result.c_star_sup,
        "unbounded": result.unbounded,
        "members": {label: _scalar_json(m) for label, m in zip(labels, result.members)},
    }
    _write_json(os.path.join(out, "robust.json"), body)
    figures.save_sweep(values, labels, [m.c_star for m in result.members],
                       [m.mc_std_error for m in result.members],
                       os.path.join(out, "robust.png"), parameter)
    resolved = {
        "command": "robust", "preset": preset_name, "mc": mc, "seed": seed,
        "tol": tol, "workers": workers,
        "problems": [problem_to_config(p) for p in problems],
    }
    write_manifest(os.path.join(out, "manifest.json"), resolved, seed,
                   ["robust.csv", "robust.json", "robust.png"])
    click.echo(f"c_star_sup={_f4(result.c_star_sup)} over {len(problems)} members")


@main.command("decompose")
@click.option("--preset", type=str, default=None,
              help="single-problem preset, e.g. overlapping-var.")
@_common_options
@_wrap_errors
def decompose_cmd(config_path, preset, mc, seed, tol, workers, out):
    """Split the scalar into confidence and time stages."""
    flags = {"mc": mc, "seed": seed, "tol": tol, "workers": workers, "out": out,
             "preset": preset}
    cfg = _resolve(config_path, flags, _COMMON_ALLOWED | {"preset", "problem"})
    mc, seed, tol, workers, out = _numbers(cfg)
    preset_name = cfg.get_str("preset")
    preset_obj = get_preset(preset_name) if preset_name else None
    problem, pname = _problem_from(cfg, preset_obj)

    result = decompose(problem, mc, seed, tol, workers=workers)
    rows = [
        _scalar_rows("confidence", result.confidence),
        _scalar_rows("time", result.time),
        _scalar_rows("combined", result.combined),
    ]
    _write_csv(os.path.join(out, "decompose.csv"), _SCALAR_HEADER, rows)
    _write_json(os.path.join(out, "decompose.json"), {
        "confidence": _scalar_json(result.confidence),
        "time": _scalar_json(result.time),
        "combined": _scalar_json(result.combined),
    })
    resolved = {
        "command": "decompose", "preset": pname, "mc": mc, "seed": seed,
        "tol": tol, "workers": workers, "problem": problem_to_config(problem),
    }
    write_manifest(os.path.join(out, "manifest.json"), resolved, seed,
                   ["decompose.csv", "decompose.json"])
    click.echo(
        f"confidence={_f4(result.confidence_c)} time={_f4(result.time_c)} "
        f"combined={_f4(result.combined_c)}"
    )


_TABLE_PRESETS = {"1": "table-1", "2": "table-2", "3": "table-3"}


@main.command("tables")
@click.option("--table", "which", type=click.Choice(["1", "2", "3", "all"]),
              default=None, help="which reference table to run (default all).")
@_common_options
@_wrap_errors
def tables_cmd(config_path, which, mc, seed, tol, workers, out):
    """Reproduce the three reference scalar tables, row by row."""
    flags = {"mc": mc, "seed": seed, "tol": tol, "workers": workers, "out": out,
             "table": which}
    cfg = _resolve(config_path, flags, _COMMON_ALLOWED | {"table"})
    mc, seed, tol, workers, out = _numbers(cfg)
    which = cfg.get_str("table", "all")
    if which == "all":
        selected = ["1", "2", "3"]
    elif which in _TABLE_PRESETS:
        selected = [which]
    else:
        raise ConfigError(f"table must be one of 1, 2, 3, all; got {which!r}")

    outputs = []
    for key in selected:
        preset_obj = get_preset(_TABLE_PRESETS[key])
        assert isinstance(preset_obj, TablePreset)
        rows = []
        combined, confidence, times = [], [], []
        for label, problem in zip(preset_obj.labels, preset_obj.problems):
            result = decompose(problem, mc, seed, tol, workers=workers)
            combined.append(result.combined_c)
            confidence.append(result.confidence_c)
            times.append(result.time_c)
            rows.append([
                label,
                _f4(result.combined_c), _f4(result.confidence_c), _f4(result.time_c),
                _sig2(result.combined.mc_std_error),
                _sig2(result.confidence.mc_std_error),
                _sig2(result.time.mc_std_error),
            ])
            click.echo(
                f"{preset_obj.name} {label}: combined={_f4(result.combined_c)} "
                f"confidence={_f4(result.confidence_c)} time={_f4(result.time_c)}"
            )
        csv_name = f"{preset_obj.name}.csv"
        _write_csv(os.path.join(out, csv_name),
                   ["distribution", "c_star", "confidence_c_star", "time_c_star",
                    "c_star_se", "confidence_se", "time_se"],
                   rows)
        png_name = f"{preset_obj.name}.png"
        figures.save_table_bars(list(preset_obj.labels), combined, confidence, times,
                                os.path.join(out, png_name), preset_obj.note)
        outputs += [csv_name, png_name]

    resolved = {"command": "tables", "table": which, "mc": mc, "seed": seed,
                "tol": tol, "workers": workers}
    write_manifest(os.path.join(out, "manifest.json"), resolved, seed, outputs)


_BACKTEST_ALLOWED = {
    "seed", "workers", "out", "tol", "horizon", "window", "alpha", "methods",
    "pre_obs", "cal_mc", "nu",
}


def _method_list(cfg: RunConfig, horizon: Horizon) -> list:
    nu = cfg.get_float("nu", 6.0)
    catalog = {m.id: m for m in standard_methods(horizon, nu)}
    raw = cfg.data.get("methods", "1,2,3,4,5,6")
    if isinstance(raw, str):
        tokens = [t for t in raw.split(",") if t.strip()]
    elif isinstance(raw, (list, tuple)):
        tokens = list(raw)
    else:
        raise ConfigError(f"config key 'methods' must be a list or comma string, got {raw!r}")
    methods = []
    for token in tokens:
        try:
            mid = int(token)
        except (TypeError, ValueError):
            raise ConfigError(f"method ids must be integers, got {token!r}") from None
        if mid not in catalog:
            raise ConfigError(f"unknown method id {mid}; available: 1..6")
        methods.append(catalog[mid])
    if not methods:
        raise ConfigError("no methods selected")
    return methods


def _run_backtest_pipeline(
    cfg: RunConfig,
    panel: ReturnPanel,
    resolved: dict,
    out: str,
) -> None:
    seed = cfg.get_int("seed", DEFAULT_SEED)
    tol = cfg.get_float("tol", DEFAULT_TOL)
    workers = cfg.get_int("workers", 1)
    horizon = horizon_from_config(cfg.get_str("horizon", "one_period"))
    window = cfg.get_int("window", 50)
    alpha = cfg.get_float("alpha", 0.01)
    cal_M = cfg.get_int("cal_mc", DEFAULT_CAL_M)
    pre_obs = cfg.get_int("pre_obs", 0)
    methods = _method_list(cfg, horizon)

    if pre_obs:
        if pre_obs >= panel.n_obs:
            raise ConfigError(
                f"pre_obs={pre_obs} consumes the whole panel of {panel.n_obs} observations"
            )
        pre: Optional[ReturnPanel] = panel.slice_obs(0, pre_obs)
        evaluation = panel.slice_obs(pre_obs, None)
    else:
        pre = None
        evaluation = panel
    needs_pre = [m.label() for m in methods if m.needs_pre_window]
    if needs_pre and pre is None:
        raise ConfigError(
            f"methods {needs_pre} fit on pre-window data; set pre_obs > 0"
        )

    results: list[BacktestResult] = []
    detail_rows = []
    for method in methods:
        result = rolling_backtest(
            evaluation, method, horizon, window, alpha=alpha, seed=seed,
            cal_M=cal_M, tol=tol, pre=pre, workers=workers,
        )
        results.append(result)
        skipped = dict(result.skipped)
        for p, pid in enumerate(result.portfolio_ids):
            detail_rows.append([
                pid, str(method.id), method.label(),
                _f4(result.scalars[p]),
                str(int(result.breach_counts[p])),
                str(result.window_count),
                _f4(result.exception_rates[p]),
                skipped.get(pid, ""),
            ])
        click.echo(
            f"method {method.label()}: mean_rate={_f4(result.mean_rate)} "
            f"sd={_f4(result.sd_rate)} skipped={len(result.skipped)}"
        )

    summary = aggregate_methods(results, target=alpha)
    _write_csv(os.path.join(out, "per_portfolio.csv"),
               ["portfolio", "method_id", "label", "scalar", "breaches",
                "windows", "exception_rate", "skipped_reason"],
               detail_rows)
    _write_csv(os.path.join(out, "summary.csv"),
               ["method_id", "label", "mean_rate", "sd_rate", "best_share"],
               [[str(r.method_id), r.label, _f4(r.mean_rate), _f4(r.sd_rate),
                 _f4(r.best_share)] for r in summary.rows])
    report = density_report(results)
    rows = report.to_rows()
    _write_csv(os.path.join(out, "density.csv"),
               ["method_id", "label", "kind", "x", "x_left", "x_right", "value"],
               [[str(r["method_id"]), r["label"], r["kind"], f"{r['x']:.6g}",
                 "" if math.isnan(r["x_left"]) else f"{r['x_left']:.6g}",
                 "" if math.isnan(r["x_right"]) else f"{r['x_right']:.6g}",
                 f"{r['value']:.6g}"] for r in rows])
    figures.save_density(report.blocks, os.path.join(out, "density.png"), target=alpha)
    _write_json(os.path.join(out, "backtest.json"), {
        "target_alpha": alpha,
        "portfolios": summary.portfolio_count,
        "methods": [
            {"id": r.method_id, "label": r.label, "mean_rate": r.mean_rate,
             "sd_rate": r.sd_rate, "best_share": r.best_share}
            for r in summary.rows
        ],
        "calibration_records": [r.calibration_record for r in results],
    })
    outputs = ["per_portfolio.csv", "summary.csv", "density.csv", "density.png",
               "backtest.json"]
    write_manifest(os.path.join(out, "manifest.json"), resolved, seed, outputs)
    for row in summary.rows:
        click.echo(
            f"summary {row.label}: mean={_f4(row.mean_rate)} sd={_f4(row.sd_rate)} "
            f"best_share={_f4(row.best_share)}"
        )


@main.command("backtest")
@click.option("--returns", "returns_path", type=click.Path(), default=None,
              help="returns CSV, wide or long layout.")
@click.option("--layout", type=click.Choice(["auto", "wide", "long"]), default=None)
@click.option("--delimiter", type=str, default=None)
@click.option("--decimal", type=str, default=None)
@click.option("--horizon", type=click.Choice(["one_period", "two_period_overlap"]),
              default=None)
@click.option("--window", type=int, default=None, help="rolling window length (default 50).")
@click.option("--alpha", type=float, default=None, help="target exception rate (default 0.01).")
@click.option("--methods", type=str, default=None,
              help="comma-separated method ids, default 1,2,3,4,5,6.")
@click.option("--pre-obs", "pre_obs", type=int, default=None,
              help="leading observations reserved for method fitting.")
@click.option("--cal-mc", "cal_mc", type=int, default=None,
              help=f"panel size for calibrated methods (default {DEFAULT_CAL_M}).")
@click.option("--nu", type=float, default=None, help="degrees of freedom for method 4.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@_wrap_errors
def backtest_cmd(config_path, returns_path, layout, delimiter, decimal, horizon,
                 window, alpha, methods, pre_obs, cal_mc, nu, seed, tol, workers, out):
    """Rolling backtest of the scaling methods on a returns file."""
    flags = {
        "returns": returns_path, "layout": layout, "delimiter": delimiter,
        "decimal": decimal, "horizon": horizon, "window": window, "alpha": alpha,
        "methods": methods, "pre_obs": pre_obs, "cal_mc": cal_mc, "nu": nu,
        "seed": seed, "tol": tol, "workers": workers, "out": out,
    }
    allowed = _BACKTEST_ALLOWED | {"returns", "layout", "delimiter", "decimal",
                                   "date_column", "portfolio_column", "return_column"}
    cfg = _resolve(config_path, flags, allowed)
    out_dir = _out_dir(cfg.get_str("out"))
    path = cfg.get_str("returns", required=True)
    panel = ingest_returns(
        path,
        layout=cfg.get_str("layout", "auto"),
        delimiter=cfg.get_str("delimiter", ","),
        decimal=cfg.get_str("decimal", "."),
        date_column=cfg.get_str("date_column", "date"),
        portfolio_column=cfg.get_str("portfolio_column", "portfolio"),
        return_column=cfg.get_str("return_column", "return"),
    )
    for note in panel.dropped:
        click.echo(f"ingest: {note}", err=True)
    resolved = {
        "command": "backtest", "returns": path,
        "layout": cfg.get_str("layout", "auto"),
        "delimiter": cfg.get_str("delimiter", ","),
        "decimal": cfg.get_str("decimal", "."),
        "horizon": cfg.get_str("horizon", "one_period"),
        "window": cfg.get_int("window", 50),
        "alpha": cfg.get_float("alpha", 0.01),
        "methods": str(cfg.data.get("methods", "1,2,3,4,5,6")),
        "pre_obs": cfg.get_int("pre_obs", 0),
        "cal_mc": cfg.get_int("cal_mc", DEFAULT_CAL_M),
        "nu": cfg.get_float("nu", 6.0),
        "seed": cfg.get_int("seed", DEFAULT_SEED),
        "tol": cfg.get_float("tol", DEFAULT_TOL),
        "workers": cfg.get_int("workers", 1),
    }
    _run_backtest_pipeline(cfg, panel, resolved, out_dir)


_SYNTH_FAMILIES = {"normal": Normal, "t6": lambda: StudentT(6.0)}


@main.command("synthetic-backtest")
@click.option("--family", type=click.Choice(sorted(_SYNTH_FAMILIES)), default=None,
              help="generating law for the synthetic panel (default normal).")
@click.option("--portfolios", type=int, default=None,
              help="number of synthetic portfolios (default 1853).")
@click.option("--obs", type=int, default=None,
              help="evaluation observations per portfolio (default 625).")
@click.option("--pre-obs", "pre_obs", type=int, default=None,
              help="additional leading observations for method fitting (default 625).")
@click.option("--horizon", type=click.Choice(["one_period", "two_period_overlap"]),
              default=None)
@click.option("--window", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--methods", type=str, default=None)
@click.option("--cal-mc", "cal_mc", type=int, default=None)
@click.option("--nu", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@_wrap_errors
def synthetic_backtest_cmd(config_path, family, portfolios, obs, pre_obs, horizon,
                           window, alpha, methods, cal_mc, nu, seed, tol, workers, out):
    """Backtest the scaling methods on a generated IID panel."""
    flags = {
        "family": family, "portfolios": portfolios, "obs": obs, "pre_obs": pre_obs,
        "horizon": horizon, "window": window, "alpha": alpha, "methods": methods,
        "cal_mc": cal_mc, "nu": nu, "seed": seed, "tol": tol, "workers": workers,
        "out": out,
    }
    cfg = _resolve(config_path, flags,
                   _BACKTEST_ALLOWED | {"family", "portfolios", "obs"})
    out_dir = _out_dir(cfg.get_str("out"))
    family_name = cfg.get_str("family", "normal")
    if family_name not in _SYNTH_FAMILIES:
        raise ConfigError(
            f"unknown family {family_name!r}; choose from {sorted(_SYNTH_FAMILIES)}"
        )
    portfolios_n = cfg.get_int("portfolios", 1853)
    obs_n = cfg.get_int("obs", 625)
    pre_n = cfg.get_int("pre_obs", 625)
    seed_v = cfg.get_int("seed", DEFAULT_SEED)
    law = _SYNTH_FAMILIES[family_name]()
    panel = make_synthetic_panel(law, portfolios_n, obs_n + pre_n, seed=seed_v)
    # reuse the shared pipeline; it slices the pre segment back off
    cfg.data["pre_obs"] = pre_n
    resolved = {
        "command": "synthetic-backtest", "family": family_name,
        "portfolios": portfolios_n, "obs": obs_n, "pre_obs": pre_n,
        "horizon": cfg.get_str("horizon", "one_period"),
        "window": cfg.get_int("window", 50),
        "alpha": cfg.get_float("alpha", 0.01),
        "methods": str(cfg.data.get("methods", "1,2,3,4,5,6")),
        "cal_mc": cfg.get_int("cal_mc", DEFAULT_CAL_M),
        "nu": cfg.get_float("nu", 6.0),
        "seed": seed_v,
        "tol": cfg.get_float("tol", DEFAULT_TOL),
        "workers": cfg.get_int("workers", 1),
    }
    _run_backtest_pipeline(cfg, panel, resolved, out_dir)


if __name__ == "__main__":
    main()
