"""Rolling-window out-of-sample backtests, performance and diversification metrics."""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError, PfoptError
from .estimators import ReturnsMatrix, ledoit_wolf_shrinkage
from .simulation import GRIDS
from .sorted_l1 import log_grid
from .strategies import (DEFAULT_THRESHOLD, StrategySpec, allocate, slope_mv_assets,
                         slope_mv_groups)


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 120
    rebalance_period: int = 1
    strategies: Sequence[StrategySpec] = field(
        default_factory=lambda: tuple(StrategySpec(k) for k in ("EW", "GMV", "GMV-LO")))
    tc_regimes: Sequence[float] = (0.0, 0.0035, 0.005)
    threshold: float = DEFAULT_THRESHOLD
    grid: tuple = GRIDS["empirical"]
    periods_per_year: int = 12
    charge_initial: bool = True
    shrinkage_target: str = "identity"
    phi: float = 1.0
    q: float = 0.01
    log_returns: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.rebalance_period < 1:
            raise ValueError("rebalance_period must be at least 1")
        if any(c < 0 for c in self.tc_regimes):
            raise ValueError("transaction costs must be nonnegative")
        if not self.strategies:
            raise ValueError("no strategies configured")
        names = [s.kind for s in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError("duplicate strategy kinds")

    def penalty_grid(self):
        lo, hi, n = self.grid
        return log_grid(lo, hi, int(n))


@dataclass
class StrategyResult:
    name: str
    returns: np.ndarray
    weights: np.ndarray
    lambdas: List[Optional[float]]
    flags: List[List[str]]
    metrics: dict
    net: dict


@dataclass
class BacktestReport:
    dates: list
    tickers: list
    config: BacktestConfig
    results: List[StrategyResult]

    def result(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        cfg = self.config
        return {
            "annualization": {"periods_per_year": cfg.periods_per_year,
                              "mean": "x periods_per_year",
                              "volatility": "x sqrt(periods_per_year)"},
            "window": cfg.window,
            "rebalance_period": cfg.rebalance_period,
            "tc_regimes": [float(c) for c in cfg.tc_regimes],
            "oos_dates": [str(d) for d in self.dates],
            "tickers": [str(t) for t in self.tickers],
            "strategies": {
                r.name: {
                    "metrics": _clean(r.metrics),
                    "net": {repr(float(c)): _clean(v) for c, v in r.net.items()},
                    "returns": _clean(list(r.returns)),
                    "lambda": _clean(r.lambdas),
                    "flags": r.flags,
                } for r in self.results
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def oos_metrics(series, periods_per_year=12):
    """Annualized mean, volatility and Sharpe ratio, plus the 5% per-period VaR."""
    r = np.asarray(series, dtype=float)
    r = r[np.isfinite(r)]
    if r.size < 2:
        raise ValueError("need at least two returns")
    if np.ptp(r) == 0:
        raise ValueError("zero-variance return series")
    m = r.mean()
    s = r.std(ddof=1)
    return {"mean": m * periods_per_year,
            "volatility": s * math.sqrt(periods_per_year),
            "sharpe": m / s * math.sqrt(periods_per_year),
            "var5": float(np.quantile(r, 0.05))}


def weight_changes(history, charge_initial=True):
    """Per-date ``||w_t - w_(t-1)||_1``; the first entry is ``||w_1||_1`` or 0."""
    W = np.asarray(history, dtype=float)
    first = np.abs(W[0]).sum() if charge_initial else 0.0
    return np.concatenate([[first], np.abs(np.diff(W, axis=0)).sum(axis=1)])


def turnover(history):
    """Mean l1 distance between consecutive weight vectors."""
    W = np.asarray(history, dtype=float)
    if W.ndim != 2 or W.shape[0] < 2:
        raise ValueError("turnover needs at least two weight vectors")
    return float(np.abs(np.diff(W, axis=0)).sum(axis=1).mean())


def diversification_metrics(w, sigma):
    """Diversification ratio, weight and risk-contribution diversification."""
    w = np.asarray(w, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    k = w.size
    q = sigma @ w
    var = float(w @ q)
    if not var > 0:
        raise ValueError("zero portfolio variance")
    sp = math.sqrt(var)
    rc = w * q / sp
    rel = rc / sp
    return {"DR": float(w @ np.sqrt(np.diag(sigma)) / sp),
            "WDiv": float(1.0 / (k * np.sum(w * w))),
            "RDiv": float(1.0 / (k * np.sum(rel * rel))),
            "RC": rc}


def apply_transaction_costs(series, turnovers, cost_per_unit):
    """Net returns ``gross_t - cost * turnover_t``."""
    series = np.asarray(series, dtype=float)
    turnovers = np.asarray(turnovers, dtype=float)
    if series.shape != turnovers.shape:
        raise ValueError("returns and turnovers are misaligned")
    if cost_per_unit < 0:
        raise ValueError("cost must be nonnegative")
    return series - cost_per_unit * turnovers


def holding_returns(R, start, length, log_returns=False):
    """Per-asset return over ``length`` periods from row ``start``."""
    block = R[start:start + length]
    if log_returns:
        return block.sum(axis=0)
    return np.prod(1.0 + block, axis=0) - 1.0


def _run_strategy(spec, X, sigmas, grid, config, mv_assets):
    n = len(sigmas)
    k = X.shape[1]
    tau, h = config.window, config.rebalance_period
    rets = np.full(n, np.nan)
    W = np.full((n, k), np.nan)
    lams, flags = [], []
    mu0 = np.zeros(k)
    for j, sigma in enumerate(sigmas):
        start = j * h
        try:
            alloc = allocate(spec, sigma, mu0, X[start:start + tau], grid, config.phi, config.q,
                             config.threshold, mv_assets)
        except (ValueError, PfoptError, np.linalg.LinAlgError) as exc:
            lams.append(None)
            flags.append([f"failed: {exc}"])
            continue
        W[j] = alloc.weights
        lams.append(alloc.lambda_used)
        flags.append(alloc.flags)
        rets[j] = float(alloc.weights @ holding_returns(X, start + tau, h, config.log_returns))
    ok = np.isfinite(rets)
    Wok = W[ok]
    metrics = {}
    try:
        metrics.update(oos_metrics(rets, config.periods_per_year))
    except ValueError:
        metrics.update({"mean": np.nan, "volatility": np.nan, "sharpe": np.nan, "var5": np.nan})
    metrics["active_positions"] = float(np.mean(np.count_nonzero(Wok, axis=1))) if ok.any() else np.nan
    metrics["turnover"] = turnover(Wok) if Wok.shape[0] >= 2 else np.nan
    div = [diversification_metrics(W[j], sigmas[j]) for j in np.flatnonzero(ok)]
    for key in ("DR", "WDiv", "RDiv"):
        metrics[key] = float(np.mean([d[key] for d in div])) if div else np.nan
    metrics["skipped_dates"] = int((~ok).sum())
    net = {}
    if ok.any():
        dw = weight_changes(Wok, config.charge_initial)
        for c in config.tc_regimes:
            series = apply_transaction_costs(rets[ok], dw, c)
            try:
                m = oos_metrics(series, config.periods_per_year)
            except ValueError:
                m = {"mean": np.nan, "volatility": np.nan, "sharpe": np.nan, "var5": np.nan}
            net[float(c)] = {"mean": m["mean"], "sharpe": m["sharpe"]}
    return StrategyResult(spec.kind, rets, W, lams, flags, metrics, net)


def run_backtest(R, config=None):
    """Rolling-window backtest of every configured strategy.

    At date ``j`` the window is rows ``[j h, j h + tau)``; the shrinkage
    covariance of that window drives the allocation, which is then held over
    the next ``h`` rows. SLOPE-MV fixes its assets once from the full panel.
    """
    config = config or BacktestConfig()
    if not isinstance(R, ReturnsMatrix):
        R = ReturnsMatrix(R)
    X = R.values
    T, k = X.shape
    tau, h = config.window, config.rebalance_period
    if T <= tau + h:
        raise DataError(f"panel of {T} periods is too short for window {tau} and holding {h}")
    n = (T - tau) // h
    grid = config.penalty_grid()
    sigmas = [ledoit_wolf_shrinkage(X[j * h:j * h + tau], config.shrinkage_target)
              for j in range(n)]
    mv_assets = None
    if any(s.kind == "SLOPE-MV" for s in config.strategies):
        spec = next(s for s in config.strategies if s.kind == "SLOPE-MV")
        full = ledoit_wolf_shrinkage(X, config.shrinkage_target)
        groups, _, _ = slope_mv_groups(full, grid, config.q, spec.params["markers"],
                                       config.threshold)
        mv_assets = slope_mv_assets(X, groups)
    job = lambda s: _run_strategy(s, X, sigmas, grid, config, mv_assets)  # noqa: E731
    if config.threads > 1 and len(config.strategies) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            results = list(ex.map(job, config.strategies))
    else:
        results = [job(s) for s in config.strategies]
    dates = [R.dates[tau + j * h] for j in range(n)]
    return BacktestReport(dates, list(R.tickers), config, results)


TABLES = {
    "risk_return": ("strategy", "ann_mean", "ann_volatility", "sharpe", "var5",
                    "active_positions", "turnover"),
    "diversification": ("strategy", "DR", "WDiv", "RDiv"),
    "transaction_costs": ("strategy", "cost", "net_ann_mean", "net_sharpe"),
}


def report_tables(report):
    """Rows of the three summary tables keyed by table name (header first)."""
    out = {name: [cols] for name, cols in TABLES.items()}
    for r in report.results:
        m = r.metrics
        out["risk_return"].append((r.name, m["mean"], m["volatility"], m["sharpe"], m["var5"],
                                   m["active_positions"], m["turnover"]))
        out["diversification"].append((r.name, m["DR"], m["WDiv"], m["RDiv"]))
        for c in report.config.tc_regimes:
            v = r.net.get(float(c), {"mean": np.nan, "sharpe": np.nan})
            out["transaction_costs"].append((r.name, float(c), v["mean"], v["sharpe"]))
    return out
