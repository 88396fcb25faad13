"""Command-line front end: ``pfopt <command> --config FILE [--seed N] [--out DIR] [--threads N]``."""
import argparse
import csv
import hashlib
import io
import json
import math
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .backtest import BacktestConfig, report_tables, run_backtest
from .errors import ConfigError, DataError, NonConvergenceError, PfoptError
from .estimators import (ReturnsMatrix, estimate_covariance, ledoit_wolf_shrinkage, sample_cov,
                         sample_mean)
from .simulation import (GRIDS, calibrated_market, constant_corr_market, fmt,
                         frontier_sweep, hidden_factor_market, shorting_amount,
                         verify_risk_bounds, write_frontier_csv)
from .solver import SolverConfig, SolverProblem, admm_solve, auto_eta, cycode_solve
from .sorted_l1 import lambda_sequence, log_grid
from .strategies import (KINDS, StrategySpec, extract_groups, select_lambda_ridge,
                         select_lambda_slope_lo, select_lambda_sparse, solution_path)

SCHEMA = "pfopt/1"
COMMANDS = ("solve", "frontier", "simulate", "backtest", "compare-solvers")
MISSING = {"", "na", "nan", "null", "none"}
TIMING_FILES = ("tables/timing.csv",)


# -- ingestion -------------------------------------------------------------

def _parse_date(text, date_format):
    if date_format:
        return datetime.strptime(text, date_format).date()
    return int(text) if text.lstrip("-").isdigit() else text


def ingest_returns(path, date_format=None, drop_threshold=0, percent=False,
                   missing_values=None):
    """Read a returns CSV: header of tickers, first column of dates.

    Columns with more than ``drop_threshold`` missing cells are dropped; any
    remaining missing cell is an error. ``percent`` divides every value by 100.
    """
    missing = MISSING if missing_values is None else {m.strip().lower() for m in missing_values}
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [c.strip() for c in rows[0]]
    tickers = header[1:]
    if not tickers:
        raise DataError(f"{path}: no asset columns")
    k = len(tickers)
    dates, cells = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != k + 1:
            raise DataError(f"{path}:{lineno}: expected {k + 1} cells, found {len(row)}")
        try:
            dates.append(_parse_date(row[0].strip(), date_format))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparseable date {row[0]!r}") from exc
        vals = []
        for j, c in enumerate(row[1:]):
            c = c.strip()
            if c.lower() in missing:
                vals.append(math.nan)
                continue
            try:
                x = float(c)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparseable value {c!r} in column "
                                f"{tickers[j]!r}") from exc
            if not math.isfinite(x):
                raise DataError(f"{path}:{lineno}: non-finite value in column {tickers[j]!r}")
            vals.append(x)
        cells.append(vals)
    seen = set()
    for d in dates:
        if d in seen:
            raise DataError(f"{path}: duplicate date {d}")
        seen.add(d)
    X = np.array(cells, dtype=float)
    n_missing = np.isnan(X).sum(axis=0)
    keep = n_missing <= drop_threshold
    if not keep.any():
        raise DataError(f"{path}: every column exceeds the missing-value threshold")
    X = X[:, keep]
    tickers = [t for t, kp in zip(tickers, keep) if kp]
    if np.isnan(X).any():
        i, j = np.argwhere(np.isnan(X))[0]
        raise DataError(f"{path}: missing value at date {dates[i]} in column {tickers[j]!r}")
    if percent:
        X = X / 100.0
    try:
        return ReturnsMatrix(X, dates, tickers)
    except TypeError as exc:
        raise DataError(f"{path}: dates are not mutually comparable") from exc


# -- config handling ---------------------------------------------------------

def _sha256_bytes(b):
    return hashlib.sha256(b).hexdigest()


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def load_config(path):
    """Load a run config or a manifest (whose ``config`` entry is used).

    Returns ``(config, expected_inputs)``; the second item maps input paths to
    the sha256 recorded in a manifest and is empty for plain configs.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    expected = {}
    if doc.get("kind") == "manifest":
        expected = doc.get("inputs") or {}
        doc = doc.get("config")
        if not isinstance(doc, dict):
            raise ConfigError("manifest has no config entry")
        base = None
    else:
        base = Path(path).resolve().parent
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"unrecognized schema {doc.get('schema')!r}; expected {SCHEMA!r}")
    doc = dict(doc)
    if base is not None:
        _resolve_paths(doc, base)
    return doc, expected


def _resolve_paths(doc, base):
    data = doc.get("returns")
    if isinstance(data, dict) and "path" in data:
        p = Path(data["path"])
        data = dict(data)
        data["path"] = str(p if p.is_absolute() else (base / p).resolve())
        doc["returns"] = data


def _check_keys(cfg, allowed, where="config"):
    extra = set(cfg) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def _num(cfg, key, default, lo=None, hi=None, integer=False):
    val = cfg.get(key, default)
    if integer:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key} must be an integer")
    elif isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if (lo is not None and val < lo) or (hi is not None and val > hi):
        raise ConfigError(f"{key}={val} outside [{lo}, {hi}]")
    return val


def _grid(cfg, default):
    g = cfg.get("grid", None)
    if g is None:
        lo, hi, n = default
    else:
        if not isinstance(g, dict):
            raise ConfigError("grid must be an object with lo, hi, n")
        _check_keys(g, ("lo", "hi", "n"), "grid")
        lo, hi, n = g.get("lo", default[0]), g.get("hi", default[1]), g.get("n", default[2])
    try:
        return log_grid(float(lo), float(hi), int(n))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc


def _returns(cfg):
    spec = cfg.get("returns")
    if not isinstance(spec, dict) or "path" not in spec:
        raise ConfigError("returns must be an object with a path")
    _check_keys(spec, ("path", "date_format", "drop_threshold", "percent", "missing_values"),
                "returns")
    drop = spec.get("drop_threshold", 0)
    if isinstance(drop, bool) or not isinstance(drop, int) or drop < 0:
        raise ConfigError("drop_threshold must be a nonnegative integer")
    return ingest_returns(spec["path"], spec.get("date_format"), drop,
                          bool(spec.get("percent", False)), spec.get("missing_values"))


def _penalty(cfg, k):
    pen = cfg.get("penalty", {"family": "none"})
    if not isinstance(pen, dict):
        raise ConfigError("penalty must be an object")
    _check_keys(pen, ("family", "lambda1", "q", "values"), "penalty")
    try:
        if "values" in pen:
            return np.asarray(pen["values"], dtype=float)
        return lambda_sequence(k, float(pen.get("lambda1", 0.0)), pen.get("family", "slope"),
                               float(pen.get("q", 0.01)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid penalty: {exc}") from exc


def _solver_config(cfg, sigma, phi):
    s = cfg.get("solver", {})
    _check_keys(s, ("eta", "tol", "max_iter", "check_every"), "solver")
    eta = s.get("eta", 1.0)
    eta = auto_eta(sigma, phi) if eta == "auto" else eta
    try:
        return SolverConfig(eta=float(eta), tol=float(s.get("tol", 1e-7)),
                            max_iter=int(s.get("max_iter", 50_000)),
                            check_every=int(s.get("check_every", 5)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from exc


def _strategies(cfg):
    raw = cfg.get("strategies", list(KINDS))
    if not isinstance(raw, list) or not raw:
        raise ConfigError("strategies must be a nonempty list")
    out = []
    for item in raw:
        try:
            if isinstance(item, str):
                out.append(StrategySpec(item))
            elif isinstance(item, dict):
                item = dict(item)
                kind = item.pop("kind", None)
                out.append(StrategySpec(kind, item))
            else:
                raise ValueError(f"bad strategy entry {item!r}")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return out


# -- artifact writing --------------------------------------------------------

def csv_text(rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    for row in rows:
        wr.writerow([fmt(x) for x in row])
    return buf.getvalue()


def commit(out_dir, files):
    """Write ``files`` (relative name -> text) into ``out_dir`` all-or-nothing."""
    out = Path(out_dir).resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        for name, text in files.items():
            p = tmp / name
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        old = None
        if out.exists():
            old = out.parent / f".{out.name}.old-{os.getpid()}"
            os.replace(out, old)
        os.replace(tmp, out)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def build_manifest(command, cfg, seeds, inputs, files):
    cfg_text = canonical_json(cfg)
    return {
        "kind": "manifest",
        "schema": SCHEMA,
        "command": command,
        "version": __version__,
        "backend": kernels.BACKEND,
        "config": cfg,
        "config_sha256": _sha256_bytes(cfg_text.encode()),
        "seeds": seeds,
        "inputs": {p: _sha256_file(p) for p in inputs},
        "artifacts": {name: _sha256_bytes(text.encode())
                      for name, text in sorted(files.items()) if name not in TIMING_FILES},
        "nondeterministic": list(TIMING_FILES),
    }


# -- commands --------------------------------------------------------------

COMMON_KEYS = ("schema", "command", "seed", "out", "threads")


def cmd_solve(cfg, ctx):
    _check_keys(cfg, COMMON_KEYS + ("returns", "sigma", "mu", "phi", "penalty", "nonneg",
                                    "solver", "algorithm", "estimator", "escalate",
                                    "shrinkage_target"))
    inputs = []
    if "sigma" in cfg:
        try:
            sigma = np.asarray(cfg["sigma"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("sigma must be a numeric matrix") from exc
        tickers = [f"A{i}" for i in range(sigma.shape[0])]
        R = None
    else:
        R = _returns(cfg)
        inputs.append(cfg["returns"]["path"])
        try:
            sigma = estimate_covariance(R, cfg.get("estimator", "shrinkage"),
                                        cfg.get("shrinkage_target", "identity")).matrix
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        tickers = list(R.tickers)
    k = sigma.shape[0]
    mu = cfg.get("mu")
    if mu == "sample":
        if R is None:
            raise ConfigError("mu='sample' needs a returns panel")
        mu = sample_mean(R)
    phi = _num(cfg, "phi", 1.0, lo=1e-300)
    try:
        problem = SolverProblem(sigma, mu=mu, phi=phi, penalty=_penalty(cfg, k),
                                nonneg=bool(cfg.get("nonneg", False)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sc = _solver_config(cfg, sigma, phi)
    algo = cfg.get("algorithm", "admm")
    try:
        if algo == "admm":
            sol = admm_solve(problem, sc)
        elif algo == "cycode":
            sol = cycode_solve(problem, sc)
        else:
            raise ConfigError(f"unknown algorithm {algo!r}")
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if not sol.converged and cfg.get("escalate", False):
        raise NonConvergenceError(f"{algo} stopped after {sol.iterations} iterations "
                                  f"with gap {sol.gap!r}")
    files = {
        "weights.csv": csv_text([("asset", "weight")] + list(zip(tickers, sol.w))),
        "report.json": canonical_json({
            "algorithm": algo, "objective": sol.objective, "gap": sol.gap,
            "iterations": sol.iterations, "converged": sol.converged, "beta": sol.beta,
            "budget_residual": float(sol.w.sum() - 1.0),
            "shorting": shorting_amount(sol.w),
            "active": int(np.count_nonzero(sol.w)),
            "groups": [[tickers[i] for i in g] for g in extract_groups(sol.w)],
        }),
    }
    return files, [], inputs


def cmd_frontier(cfg, ctx):
    _check_keys(cfg, COMMON_KEYS + ("returns", "grid", "family", "nonneg", "phi", "q",
                                    "threshold", "use_mu", "estimator", "shrinkage_target",
                                    "tol", "target_active_frac", "markers"))
    R = _returns(cfg)
    try:
        sigma = estimate_covariance(R, cfg.get("estimator", "shrinkage"),
                                    cfg.get("shrinkage_target", "identity")).matrix
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    grid = _grid(cfg, GRIDS["empirical"])
    family = cfg.get("family", "slope")
    if family not in ("slope", "lasso", "ridge"):
        raise ConfigError(f"unknown family {family!r}")
    mu = sample_mean(R) if cfg.get("use_mu", False) else None
    phi = _num(cfg, "phi", 1.0, lo=1e-300)
    thr = _num(cfg, "threshold", 5e-4, lo=0.0)
    path = solution_path(sigma, grid, family, bool(cfg.get("nonneg", False)), mu, phi,
                         _num(cfg, "q", 0.01, 1e-12, 1 - 1e-12), thr,
                         _num(cfg, "tol", 1e-7, lo=1e-300))
    act, grp, lo_, ew = path.active_counts(), path.group_counts(), path.long_only(), path.ew_reached()
    rows = [("index", "lambda1", "risk", "active", "groups", "shorting", "long_only",
             "ew_reached", "converged")]
    for i, lam in enumerate(grid):
        w = path.weights[i]
        rows.append((i, float(lam), float(w @ sigma @ w), int(act[i]), int(grp[i]),
                     shorting_amount(w), int(lo_[i]), int(ew[i]), int(path.converged[i])))
    wrows = _long_weights(path.weights, R.tickers)
    sel = {
        "sparse": select_lambda_sparse(path, _num(cfg, "target_active_frac", 0.3, 1e-12, 1.0)),
        "ridge": select_lambda_ridge(path, _num(cfg, "markers", 6, 2, integer=True)),
        "slope_lo": select_lambda_slope_lo(path, _num(cfg, "markers", 6, 2, integer=True)),
    }
    report = {"k": R.shape[1], "T": R.shape[0], "family": family,
              "selections": {n: {"index": i, "lambda1": float(grid[i]), "flagged": f}
                             for n, (i, f) in sel.items()}}
    files = {"frontier.csv": csv_text(rows), "weights.csv": csv_text(wrows),
             "report.json": canonical_json(report)}
    return files, [], [cfg["returns"]["path"]]


def cmd_simulate(cfg, ctx):
    _check_keys(cfg, COMMON_KEYS + ("design", "grid", "family", "nonneg", "use_mu", "phi",
                                    "q", "tol", "threshold", "rho", "n", "p", "t", "k"))
    design = cfg.get("design", "hidden-factor")
    seed = _num(cfg, "seed", 0, lo=0, integer=True)
    use_mu = bool(cfg.get("use_mu", False))
    if design == "hidden-factor":
        market = hidden_factor_market(seed, t=_num(cfg, "t", 50, 2, integer=True))
        default = GRIDS["hidden-factor"]
    elif design == "calibrated":
        market = calibrated_market(seed, k=_num(cfg, "k", 500, 2, integer=True),
                                   t=_num(cfg, "t", 500, 2, integer=True))
        default = GRIDS["calibrated-meanvar" if use_mu else "calibrated-minvar"]
    elif design == "constant-correlation":
        try:
            market = constant_corr_market(seed, _num(cfg, "rho", 0.2, -1, 1),
                                          _num(cfg, "n", 500, 2, integer=True),
                                          _num(cfg, "p", 100, 2, integer=True))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        default = GRIDS["hidden-factor"]
    else:
        raise ConfigError(f"unknown design {design!r}")
    grid = _grid(cfg, default)
    family = cfg.get("family", "slope")
    if family not in ("slope", "lasso"):
        raise ConfigError(f"unknown family {family!r}")
    prof = frontier_sweep(market, grid, family, bool(cfg.get("nonneg", False)), use_mu,
                          _num(cfg, "phi", 1.0, lo=1e-300), _num(cfg, "q", 0.01, 1e-12, 1),
                          _num(cfg, "tol", 1e-7 if design == "calibrated" else 1e-12, lo=1e-300),
                          threshold=_num(cfg, "threshold", 0.0, lo=0.0), threads=ctx["threads"])
    S_hat = sample_cov(market.R)
    brows = [("index", "lambda1", "applicable", "passed", "sup_norm", "c", "slack_actual_oracle",
              "slack_actual_empirical", "slack_oracle_empirical")]
    n_pass = n_app = 0
    for i, lam in enumerate(grid):
        r = verify_risk_bounds(prof.weights[i], prof.oracle_weights[i], market.sigma_true,
                               S_hat, prof.penalties[i])
        if r["applicable"]:
            n_app += 1
            n_pass += bool(r["passed"])
            brows.append((i, float(lam), 1, int(r["passed"]), r["sup_norm"], r["c"]) + r["slack"])
        else:
            brows.append((i, float(lam), 0, "", r["sup_norm"], "", "", "", ""))
    k = market.sigma_true.shape[0]
    wrows = _long_weights(prof.weights, market.R.tickers)
    grp = prof.group_counts()
    ogrp = prof.group_counts(True)
    report = {
        "design": design, "seed": seed, "k": k, "t": market.R.shape[0],
        "grid": {"lo": float(grid[0]), "hi": float(grid[-1]), "n": int(grid.size)},
        "risk_bounds": {"applicable": n_app, "passed": n_pass},
        "converged_points": int(prof.converged.sum()),
        "first_three_groups": {
            "estimated": _first_index(grp == 3), "oracle": _first_index(ogrp == 3)},
        "references": {name: {key: ref[key] for key in ("empirical", "actual", "oracle")}
                       for name, ref in prof.references.items()},
    }
    files = {"frontier.csv": write_frontier_csv(prof), "weights.csv": csv_text(wrows),
             "tables/risk_bounds.csv": csv_text(brows), "report.json": canonical_json(report)}
    return files, [seed], []


def _long_weights(W, tickers):
    rows = [("index", "asset", "weight")]
    for i, w in enumerate(W):
        rows.extend((i, t, float(x)) for t, x in zip(tickers, w))
    return rows


def _first_index(mask):
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def cmd_backtest(cfg, ctx):
    _check_keys(cfg, COMMON_KEYS + ("returns", "window", "rebalance_period", "strategies",
                                    "tc_bps", "threshold", "grid", "periods_per_year",
                                    "charge_initial", "shrinkage_target", "phi", "q",
                                    "log_returns"))
    R = _returns(cfg)
    grid = cfg.get("grid") or {}
    if not isinstance(grid, dict):
        raise ConfigError("grid must be an object with lo, hi, n")
    _check_keys(grid, ("lo", "hi", "n"), "grid")
    lo, hi, n = GRIDS["empirical"]
    g = (float(grid.get("lo", lo)), float(grid.get("hi", hi)), int(grid.get("n", n)))
    try:
        log_grid(*g)
        bc = BacktestConfig(
            window=_num(cfg, "window", 120, 2, integer=True),
            rebalance_period=_num(cfg, "rebalance_period", 1, 1, integer=True),
            strategies=tuple(_strategies(cfg)),
            tc_regimes=tuple(float(b) / 1e4 for b in cfg.get("tc_bps", [0, 35, 50])),
            threshold=_num(cfg, "threshold", 5e-4, lo=0.0),
            grid=g,
            periods_per_year=_num(cfg, "periods_per_year", 12, 1, integer=True),
            charge_initial=bool(cfg.get("charge_initial", True)),
            shrinkage_target=cfg.get("shrinkage_target", "identity"),
            phi=_num(cfg, "phi", 1.0, lo=1e-300), q=_num(cfg, "q", 0.01, 1e-12, 1),
            log_returns=bool(cfg.get("log_returns", False)), threads=ctx["threads"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rep = run_backtest(R, bc)
    files = {"report.json": rep.to_json()}
    for name, rows in report_tables(rep).items():
        files[f"tables/{name}.csv"] = csv_text(rows)
    rrows = [("date",) + tuple(r.name for r in rep.results)]
    for j, d in enumerate(rep.dates):
        rrows.append((str(d),) + tuple("" if not np.isfinite(r.returns[j]) else float(r.returns[j])
                                       for r in rep.results))
    files["tables/returns.csv"] = csv_text(rrows)
    wrows = [("strategy", "date", "asset", "weight")]
    for r in rep.results:
        for j, d in enumerate(rep.dates):
            wrows.extend((r.name, str(d), t, "" if not np.isfinite(x) else float(x))
                         for t, x in zip(rep.tickers, r.weights[j]))
    files["weights.csv"] = csv_text(wrows)
    return files, [], [cfg["returns"]["path"]]


def cmd_compare_solvers(cfg, ctx):
    _check_keys(cfg, COMMON_KEYS + ("rho", "n", "p", "seeds", "lambdas", "tol", "phi",
                                    "starts", "max_iter", "eta"))
    rho = _num(cfg, "rho", 0.2, -1, 1)
    n = _num(cfg, "n", 500, 2, integer=True)
    p = _num(cfg, "p", 100, 2, integer=True)
    seeds = cfg.get("seeds", 100)
    base_seed = _num(cfg, "seed", 0, lo=0, integer=True)
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = list(range(base_seed, base_seed + seeds))
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a positive count or a list of integers")
    lambdas = [float(x) for x in cfg.get("lambdas", [4.03e-6, 5.65e-4, 7.91e-2])]
    tol = _num(cfg, "tol", 1e-7, lo=1e-300)
    phi = _num(cfg, "phi", 2.0, lo=1e-300)
    max_iter = _num(cfg, "max_iter", 50_000, 1, integer=True)
    starts = cfg.get("starts", ["ew", "random"])
    if not set(starts) <= {"ew", "random"} or not starts:
        raise ConfigError("starts must be a subset of ['ew', 'random']")
    try:
        eta_cfg = cfg.get("eta", 1.0)
        if eta_cfg != "auto":
            SolverConfig(eta=float(eta_cfg))
        constant_corr_market(0, rho, 2, p)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    def run_seed(seed):
        m = constant_corr_market(seed, rho, n, p)
        sigma = ledoit_wolf_shrinkage(m.R)
        eta = auto_eta(sigma, phi) if eta_cfg == "auto" else float(eta_cfg)
        out = []
        for lam in lambdas:
            prob = SolverProblem(sigma, phi=phi, penalty=np.full(p, lam))
            t0 = time.perf_counter()
            a = admm_solve(prob, SolverConfig(eta=eta, tol=tol, max_iter=max_iter))
            ta = time.perf_counter() - t0
            rec = {"lambda": lam, "ADMM": (a.objective, shorting_amount(a.w), 0.0, a.converged,
                                           a.iterations, ta)}
            for st in starts:
                t0 = time.perf_counter()
                c = cycode_solve(prob, SolverConfig(tol=tol, max_iter=max_iter), start=st,
                                 seed=seed)
                tc = time.perf_counter() - t0
                rec[f"CyCoDe-{st}"] = (c.objective, shorting_amount(c.w),
                                       float(np.max(np.abs(c.w - a.w))), c.converged,
                                       c.iterations, tc)
            out.append(rec)
        return out

    if ctx["threads"] > 1:
        with ThreadPoolExecutor(max_workers=ctx["threads"]) as ex:
            per_seed = list(ex.map(run_seed, seeds))
    else:
        per_seed = [run_seed(s) for s in seeds]
    algos = ["ADMM"] + [f"CyCoDe-{st}" for st in starts]
    rows = [("lambda", "algorithm", "obj_min", "obj_median", "short_median", "wdiff_median",
             "wdiff_max", "converged", "iter_median")]
    trows = [("lambda", "algorithm", "time_median_s", "time_max_s")]
    for li, lam in enumerate(lambdas):
        for al in algos:
            vals = np.array([s[li][al][:3] for s in per_seed], dtype=float)
            conv = sum(bool(s[li][al][3]) for s in per_seed)
            its = np.median([s[li][al][4] for s in per_seed])
            tm = np.array([s[li][al][5] for s in per_seed])
            rows.append((lam, al, float(vals[:, 0].min()), float(np.median(vals[:, 0])),
                         float(np.median(vals[:, 1])), float(np.median(vals[:, 2])),
                         float(vals[:, 2].max()), conv, float(its)))
            trows.append((lam, al, float(np.median(tm)), float(tm.max())))
    files = {"tables/compare_solvers.csv": csv_text(rows), "tables/timing.csv": csv_text(trows),
             "report.json": canonical_json({"rho": rho, "n": n, "p": p, "phi": phi, "tol": tol,
                                            "seeds": len(seeds), "lambdas": lambdas,
                                            "covariance": "ledoit-wolf identity target"})}
    return files, seeds, []


HANDLERS = {"solve": cmd_solve, "frontier": cmd_frontier, "simulate": cmd_simulate,
            "backtest": cmd_backtest, "compare-solvers": cmd_compare_solvers}


def run(command, config_path, seed=None, out=None, threads=None):
    """Execute one command; returns the output directory. Raises PfoptError subclasses."""
    cfg, expected = load_config(config_path)
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for command {cfg['command']!r}, not {command!r}")
    cfg["command"] = command
    if seed is not None:
        cfg["seed"] = seed
    if threads is None:
        env = os.environ.get("PFOPT_THREADS")
        try:
            threads = int(env) if env else int(cfg.get("threads", 1))
        except ValueError as exc:
            raise ConfigError("thread count must be an integer") from exc
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    out_dir = out or cfg.get("out") or "pfopt-out"
    cfg.pop("out", None)
    cfg.pop("threads", None)
    for p, digest in expected.items():
        if not os.path.exists(p) or _sha256_file(p) != digest:
            raise DataError(f"input {p} differs from the manifest record")
    files, seeds, inputs = HANDLERS[command](cfg, {"threads": threads})
    manifest = build_manifest(command, cfg, seeds, inputs, files)
    files["manifest.json"] = canonical_json(manifest)
    commit(out_dir, files)
    return out_dir


def _error(exc, code):
    rec = {"error": {"type": type(exc).__name__, "exit_code": code, "message": str(exc)}}
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="pfopt", description="Sorted-L1 penalized portfolio toolkit")
    ap.add_argument("--version", action="version", version=f"pfopt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"solve": "solve one penalized mean-variance problem",
             "frontier": "sweep a penalty grid on a returns panel",
             "simulate": "simulation study with the empirical/actual/oracle risk triple",
             "backtest": "rolling-window out-of-sample backtest",
             "compare-solvers": "ADMM versus coordinate descent on constant-correlation draws"}
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", required=True, help="JSON run config or manifest")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default from config or ./pfopt-out)")
        p.add_argument("--threads", type=int, help="worker threads (fallback: PFOPT_THREADS)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        out = run(args.command, args.config, args.seed, args.out, args.threads)
    except PfoptError as exc:
        return _error(exc, exc.exit_code)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
