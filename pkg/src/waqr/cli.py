"""Command-line front end.

Subcommands::

    waqr fit        --input data.csv --y ret --x mkt,smb --psi upper --alpha 0.05
    waqr crossfit   --input data.csv --y wage --psi inequality --alpha 0.1
    waqr simulate   --psi-type 1 --dgp DGP1 --noise normal --p 2 --T 1000 --reps 500
    waqr compare    --input data.csv --y wage --psi inequality --alpha 0.1
    waqr psi-table  --psi exponential --a 10 --points 11

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import config as cfgmod
from .comparator import build_quantile_grid, parametric_waqr
from .dataset import Dataset
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegeneracyError,
    NumericError,
    ParameterError,
    ShapeError,
    SingularityError,
    SizeError,
    WaqrError,
)
from .estimator import waqr_crossfit, waqr_fit
from .simulator import SimConfig, psi_type, run_mc

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _num(v: float) -> str:
    """Shortest string that reads back to the same double."""
    return repr(float(v))


# ingestion -----------------------------------------------------------------


def read_table(path):
    """Header and rows of a UTF-8 CSV; rejects empty files and duplicate headers."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    seen = set()
    dups = sorted({h for h in header if h in seen or seen.add(h)})
    if dups:
        raise DataError(f"schema error: duplicate column names {dups}")
    return header, rows[1:]


def ingest_csv(path, dependent: str, regressors: Optional[Sequence[str]] = None,
               time_col: Optional[str] = None) -> Dataset:
    """Load the role columns of ``path`` in file order.

    ``regressors`` defaults to every column other than the dependent and time
    columns. Blank or non-numeric cells in a role column are reported with
    their line numbers (the header is line 1). No intercept is added here.
    """
    header, rows = read_table(path)
    if regressors is None or len(regressors) == 0:
        regressors = [h for h in header if h not in (dependent, time_col)]
    wanted = [dependent] + list(regressors)
    missing = [c for c in wanted + ([time_col] if time_col else []) if c not in header]
    if missing:
        raise DataError(f"columns not found in header: {missing}")
    if dependent in regressors:
        raise DataError("the dependent column cannot also be a regressor")
    idx = [header.index(c) for c in wanted]
    values = np.empty((len(rows), len(idx)))
    bad = []
    kept = []
    for i, row in enumerate(rows):
        line = i + 2
        if not any(cell.strip() for cell in row):
            continue  # trailing blank lines
        try:
            values[len(kept)] = [float(row[j]) for j in idx]
        except (ValueError, IndexError):
            bad.append(line)
            continue
        if not np.all(np.isfinite(values[len(kept)])):
            bad.append(line)
            continue
        kept.append(line)
    if bad:
        shown = ", ".join(str(b) for b in bad[:20]) + (" ..." if len(bad) > 20 else "")
        raise DataError(f"missing or non-numeric values on line(s) {shown}")
    values = values[: len(kept)]
    p = len(regressors)
    if values.shape[0] < p + 2:
        raise DataError(f"need at least p + 2 = {p + 2} usable rows, found {values.shape[0]}")
    return Dataset(values[:, 1:], values[:, 0], time_ordered=True, names=tuple(regressors))


# estimation helpers ----------------------------------------------------------


def window_starts(T: int, window: int, step: int) -> List[int]:
    """Zero-based start rows of every full window."""
    if window > T:
        raise ParameterError(f"window {window} exceeds sample size {T}")
    if window < 1 or step < 1:
        raise ParameterError("window and step must be positive")
    return list(range(0, T - window + 1, step))


def run_rolling(data: Dataset, window: int, step: int, w, cfg, seed=0, crossfit=False):
    """One fit per window; failures are recorded per window instead of aborting.

    Returns a list of ``(window_end, FitResult or None, error or None)`` where
    ``window_end`` is the 1-based index of the last row of the window.
    """
    if window <= data.p + 10:
        raise ParameterError(f"rolling window must exceed p + 10 = {data.p + 10}")
    fitter = waqr_crossfit if crossfit else waqr_fit
    out = []
    for start in window_starts(data.T, window, step):
        end = start + window
        try:
            res = fitter(data.rows(slice(start, end)), w, cfg, seed)
            out.append((end, res, None))
        except (WaqrError, np.linalg.LinAlgError) as exc:
            out.append((end, None, f"{type(exc).__name__}: {exc}"))
    return out


# reports -------------------------------------------------------------------


def fit_rows(res, level=0.9):
    ci = res.ci(level)
    return [
        {"coefficient": n, "estimate": b, "se": s, "ci_low": lo, "ci_high": hi}
        for n, b, s, (lo, hi) in zip(res.names, res.beta_hat, res.std_errors, ci)
    ]


def rolling_rows(results):
    rows = []
    for end, res, err in results:
        if res is None:
            rows.append({"window_end": end, "coefficient": "", "estimate": math.nan, "se": math.nan, "error": err})
            continue
        for n, b, s in zip(res.names, res.beta_hat, res.std_errors):
            rows.append({"window_end": end, "coefficient": n, "estimate": b, "se": s, "error": ""})
    return rows


def _csv_text(rows, columns):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for r in rows:
        wr.writerow([_num(r[c]) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_report(payload, fmt: str, path=None, columns: Optional[Sequence[str]] = None) -> str:
    """Render ``payload`` as JSON or CSV and write it to ``path`` (stdout if ``None``).

    For CSV ``payload`` is a list of flat dicts; ``columns`` fixes the header
    so an empty list still yields a header line. Floats are written with
    ``repr`` so a re-read reproduces them exactly.
    """
    if fmt == "json":
        text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        rows = list(payload)
        if columns is None:
            columns = list(rows[0].keys()) if rows else []
        text = _csv_text(rows, list(columns))
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from None
    return text


# argument handling ---------------------------------------------------------


def _split_list(s):
    return [c.strip() for c in s.split(",") if c.strip()] if s else None


def _add_common(sp):
    sp.add_argument("--config", help="flat key = value settings file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output", help="output file (default stdout)")
    sp.add_argument("--format", choices=("json", "csv"), default="json")


def _add_psi(sp):
    sp.add_argument("--psi", help="weighting family (upper, lower, middle, inequality, exponential, "
                                  "welfare_exponential, polynomial, constant, custom)")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--a", type=float)
    sp.add_argument("--psi-file", help="CSV of u,psi knots for the custom family")


def _add_data(sp):
    sp.add_argument("--input", required=True, help="CSV file with a header row")
    sp.add_argument("--y", "--dependent", dest="y", required=True, help="dependent column")
    sp.add_argument("--x", "--regressors", dest="x", help="comma-separated regressor columns")
    sp.add_argument("--time", help="time index column (ignored; row order is time order)")
    sp.add_argument("--no-intercept", action="store_true", help="do not prepend a constant")
    sp.add_argument("--n-trees", type=int)
    sp.add_argument("--split-ratio", type=float)
    sp.add_argument("--nw-lag")


def build_parser():
    ap = argparse.ArgumentParser(prog="waqr", description="Weighted-average quantile regression")
    sub = ap.add_subparsers(dest="command", required=True)

    for name in ("fit", "crossfit"):
        sp = sub.add_parser(name, help=f"{name} WAQR on a CSV file")
        _add_common(sp)
        _add_psi(sp)
        _add_data(sp)
        sp.add_argument("--rolling-window", type=int)
        sp.add_argument("--rolling-step", type=int)
        if name == "fit":
            sp.add_argument("--crossfit", action="store_true", help="use the cross-fitted estimator")

    sp = sub.add_parser("compare", help="WAQR next to the quantile-regression comparator")
    _add_common(sp)
    _add_psi(sp)
    _add_data(sp)
    sp.add_argument("--crossfit", action="store_true")

    sp = sub.add_parser("simulate", help="Monte Carlo coverage and MAE")
    _add_common(sp)
    sp.add_argument("--psi-type", help="comma-separated psi-types 1-4 (default 1)")
    sp.add_argument("--dgp", help="comma-separated DGPs (default DGP1)")
    sp.add_argument("--noise", help="comma-separated noise laws, normal or t4 (default normal)")
    sp.add_argument("--p", help="comma-separated regressor counts (default 2)")
    sp.add_argument("--T", help="comma-separated sample sizes (default 1000)")
    sp.add_argument("--beta1", help="comma-separated values of the first beta_bar entry (default 0)")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--n-trees", type=int)
    sp.add_argument("--crossfit", action="store_true")
    sp.add_argument("--cache-dir", help="directory for resumable per-replication results")

    sp = sub.add_parser("psi-table", help="tabulate psi and Psi on a grid")
    _add_common(sp)
    _add_psi(sp)
    sp.add_argument("--points", type=int, default=11)
    return ap


def _settings(args) -> cfgmod.RunSettings:
    values = cfgmod.load(args.config) if getattr(args, "config", None) else {}
    st = cfgmod.settings_from(values)
    if getattr(args, "psi", None) or getattr(args, "psi_file", None) or \
            getattr(args, "alpha", None) is not None or getattr(args, "a", None) is not None:
        fam = args.psi or ("custom" if args.psi_file else values.get("psi.family"))
        alpha = args.alpha if args.alpha is not None else values.get("psi.alpha")
        a = args.a if args.a is not None else values.get("psi.a")
        st = replace(st, psi=cfgmod.psi_from_values(fam, alpha, a, args.psi_file or values.get("psi.custom_file")))
    fit = st.fit
    try:
        if getattr(args, "n_trees", None) is not None:
            fit = replace(fit, cdf=replace(fit.cdf, n_trees=args.n_trees))
        if getattr(args, "split_ratio", None) is not None:
            fit = replace(fit, split_ratio=args.split_ratio)
        if getattr(args, "nw_lag", None) is not None:
            lag = args.nw_lag.strip().lower()
            fit = replace(fit, nw_lag="auto" if lag == "auto" else int(lag))
    except (ParameterError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    crossfit = st.crossfit or args.command == "crossfit" or bool(getattr(args, "crossfit", False))
    return replace(
        st,
        fit=fit,
        seed=args.seed if args.seed is not None else st.seed,
        add_intercept=st.add_intercept and not getattr(args, "no_intercept", False),
        crossfit=crossfit,
    )


def _load_data(args, st):
    data = ingest_csv(args.input, args.y, _split_list(args.x), args.time)
    return data.with_intercept() if st.add_intercept else data


def cmd_fit(args, st):
    data = _load_data(args, st)
    fitter = waqr_crossfit if st.crossfit else waqr_fit
    level = st.fit.level
    if args.rolling_window is not None:
        step = args.rolling_step or args.rolling_window
        results = run_rolling(data, args.rolling_window, step, st.psi, st.fit, st.seed, st.crossfit)
        if args.format == "csv":
            emit_report(rolling_rows(results), "csv", args.output,
                        ["window_end", "coefficient", "estimate", "se", "error"])
        else:
            emit_report([
                {"window_end": end, "error": err, **({} if res is None else res.to_dict(level))}
                for end, res, err in results
            ], "json", args.output)
        return EXIT_OK if any(res is not None for _, res, _ in results) else EXIT_NUMERIC
    res = fitter(data, st.psi, st.fit, st.seed)
    if args.format == "csv":
        emit_report(fit_rows(res, level), "csv", args.output, ["coefficient", "estimate", "se", "ci_low", "ci_high"])
    else:
        out = res.to_dict(level)
        out["estimator"] = "crossfit" if st.crossfit else "split"
        out["seed"] = st.seed
        emit_report(out, "json", args.output)
    return EXIT_OK


def cmd_compare(args, st):
    data = _load_data(args, st)
    fitter = waqr_crossfit if st.crossfit else waqr_fit
    res = fitter(data, st.psi, st.fit, st.seed)
    grid = build_quantile_grid(st.psi, st.cmp_grid_points, st.cmp_trunc_eps)
    par = parametric_waqr(data, st.psi, grid, st.cmp_tol)
    rows = [
        {"coefficient": n, "waqr": b, "waqr_se": s, "parametric": pb}
        for n, b, s, pb in zip(res.names, res.beta_hat, res.std_errors, par.beta)
    ]
    if args.format == "csv":
        emit_report(rows, "csv", args.output, ["coefficient", "waqr", "waqr_se", "parametric"])
    else:
        emit_report({
            "coefficients": rows,
            "psi": st.psi.describe(),
            "comparator": {"grid_points": int(grid.u.size), "trunc_eps": grid.eps,
                           "truncated_mass": grid.truncated_mass, "failed_nodes": par.failed_nodes},
        }, "json", args.output)
    return EXIT_OK


SIM_DEFAULTS = {"psi_type": "1", "dgp": "DGP1", "noise": "normal", "p": "2", "T": "1000", "beta1": "0"}


def _parse_cells(args, sim):
    """Cartesian product of the comma-separated simulate options."""

    def pick(key):
        flag = getattr(args, key)
        if flag is not None:
            return _split_list(flag)
        if key in sim:
            return [str(sim[key])]
        return [SIM_DEFAULTS[key]]

    try:
        kinds = [int(v) for v in pick("psi_type")]
        dgps = pick("dgp")
        noises = pick("noise")
        ps = [int(v) for v in pick("p")]
        Ts = [int(v) for v in pick("T")]
        b1s = [float(v) for v in pick("beta1")]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulate option: {exc}") from None
    return [(k, d, n, p, T, b) for k in kinds for d in dgps for n in noises for p in ps for T in Ts for b in b1s]


def cmd_simulate(args, st):
    sim = st.sim
    reps = args.reps if args.reps is not None else sim.get("reps", 500)
    estimator = "crossfit" if (args.crossfit or sim.get("estimator") == "crossfit") else "split"
    rows = []
    try:
        for kind, dgp, noise, p, T, b1 in _parse_cells(args, sim):
            if "beta_bar" in sim:
                scfg = SimConfig(dgp=dgp, noise=noise, p=p, beta_bar=sim["beta_bar"], T=T, reps=reps,
                                 psi=psi_type(kind), seed=st.seed, fit=st.fit)
            else:
                scfg = SimConfig.table_cell(kind, dgp, noise, p, T, b1, reps=reps, seed=st.seed, fit=st.fit)
            rep = run_mc(scfg, estimator, cache_dir=args.cache_dir)
            row = rep.row()
            row["psi_type"] = kind
            rows.append(row)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    cols = ["psi_type", "dgp", "noise", "p", "T", "beta_bar1", "estimator", "reps", "failures",
            "coverage", "coverage_se", "mae", "mae_se", "true_beta1", "psi"]
    if args.format == "csv":
        emit_report(rows, "csv", args.output, cols)
    else:
        emit_report([{c: r[c] for c in cols} for r in rows], "json", args.output)
    return EXIT_OK


def cmd_psi_table(args, st):
    if args.points < 2:
        raise ConfigError("--points must be at least 2")
    u = np.linspace(0.0, 1.0, args.points)
    w = st.psi
    rows = [{"u": float(a), "psi": float(b), "Psi": float(c)} for a, b, c in zip(u, w.psi(u), w.Psi(u))]
    if args.format == "csv":
        emit_report(rows, "csv", args.output, ["u", "psi", "Psi"])
    else:
        emit_report({"psi": w.describe(), "psi_bar": w.psi_bar, "jumps": list(w.jumps), "table": rows},
                    "json", args.output)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "crossfit": cmd_fit,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "psi-table": cmd_psi_table,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        st = _settings(args)
        return COMMANDS[args.command](args, st)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, SizeError, DegeneracyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularityError, NumericError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except WaqrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
