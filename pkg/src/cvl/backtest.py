"""Covariance estimation, control projection, Markowitz weights, and portfolio evaluation.

Weights solve ``min -w'f + mu/2 w'Vw`` subject to ``w'M = 0``, which gives
``w = V^{-1} R f`` with ``R = I - M (M' V^{-1} M)^{-1} M' V^{-1}``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve

from .signals import half_life


class InvariantError(RuntimeError):
    """An in-run algebraic check failed."""


@dataclass(frozen=True)
class BacktestConfig:
    cov_half_life: float = 126.0
    shrinkage: float = 0.5
    eigen_floor: float = 1e-8
    min_history: int = 60
    cov_lookback: int = 756
    smoothing_window: int = 21
    annualization: int = 252
    include_intercept: bool = True
    include_group_dummies: bool = True
    controls: tuple | None = None  # None: every panel control column
    start_date: str | None = None
    end_date: str | None = None
    periods: tuple | None = None  # ((start, end), ...) inclusive ISO dates
    n_periods: int = 3
    check_tol: float = 1e-8
    half_life_method: str = "pearson"

    def __post_init__(self):
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in [0, 1]")
        if self.eigen_floor <= 0:
            raise ValueError("eigen_floor must be positive")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    date: str
    firms: tuple
    V: np.ndarray


# ---------------------------------------------------------------- covariance


def ewma_weights(n: int, half_life: float) -> np.ndarray:
    """Weights for ``n`` observations, oldest first, halving every ``half_life`` days, summing to 1."""
    w = 0.5 ** (np.arange(n - 1, -1, -1) / half_life)
    return w / w.sum()


def ewma_covariance(history: np.ndarray, half_life: float) -> np.ndarray:
    """Exponentially weighted covariance of the rows of ``history`` (oldest first)."""
    w = ewma_weights(history.shape[0], half_life)
    mu = w @ history
    x = history - mu
    s = (x * w[:, None]).T @ x
    return 0.5 * (s + s.T)


def floor_eigenvalues(m: np.ndarray, floor: float) -> np.ndarray:
    evals, evecs = np.linalg.eigh(m)
    if evals[0] >= floor:
        return m
    out = (evecs * np.maximum(evals, floor)) @ evecs.T
    return 0.5 * (out + out.T)


def estimate_covariance(returns, t: int | None = None, config: BacktestConfig = BacktestConfig(), date: str = "", firms=()) -> CovarianceEstimate:
    """EWMA covariance shrunk toward its diagonal, with an eigenvalue floor.

    ``V = (1 - delta) S + delta diag(S)``. Uses rows ``<= t`` of the
    ``(T, J)`` return history (all rows when ``t`` is None), at most
    ``config.cov_lookback`` of them. Missing returns count as 0.
    """
    r = np.asarray(returns, dtype=float)
    end = r.shape[0] if t is None else t + 1
    start = max(0, end - config.cov_lookback)
    hist = r[start:end]
    if hist.shape[0] < config.min_history:
        raise ValueError(f"covariance needs {config.min_history} days of history, got {hist.shape[0]}")
    if np.any(np.isinf(hist)):
        raise ValueError("non-finite returns in covariance history")
    hist = np.where(np.isfinite(hist), hist, 0.0)
    s = ewma_covariance(hist, config.cov_half_life)
    v = (1.0 - config.shrinkage) * s + config.shrinkage * np.diag(np.diag(s))
    v = floor_eigenvalues(v, config.eigen_floor)
    return CovarianceEstimate(date, tuple(firms), v)


# ----------------------------------------------------------------- controls


def independent_columns(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Indices of a greedy maximal set of linearly independent columns, in order."""
    keep: list[int] = []
    for k in range(M.shape[1]):
        trial = M[:, keep + [k]]
        if np.linalg.matrix_rank(trial, tol=tol * max(1.0, np.abs(trial).max())) == len(keep) + 1:
            keep.append(k)
    return np.array(keep, dtype=int)


def assemble_controls(controls: np.ndarray, groups: np.ndarray, include_intercept: bool = True, include_group_dummies: bool = True) -> np.ndarray:
    """Stack intercept, control exposures, and group dummies; drop collinear columns.

    NaN exposures are set to 0 (the cross-sectional mean of a z-scored control).
    """
    cols = []
    J = groups.shape[0]
    if include_intercept:
        cols.append(np.ones((J, 1)))
    if controls is not None and controls.size:
        cols.append(np.where(np.isfinite(controls), controls, 0.0))
    if include_group_dummies:
        uniq = np.unique(groups[groups >= 0])
        cols.append((groups[:, None] == uniq[None, :]).astype(float))
    if not cols:
        return np.zeros((J, 0))
    M = np.hstack(cols)
    return M[:, independent_columns(M)]


# --------------------------------------------------------------- portfolio


def _factor(V):
    return cho_factor(np.asarray(V, dtype=float), lower=True)


def projection(V, M) -> np.ndarray:
    """``R = I - M (M' V^{-1} M)^{-1} M' V^{-1}``; identity when ``M`` has no columns."""
    V = np.asarray(V, dtype=float)
    M = np.asarray(M, dtype=float).reshape(V.shape[0], -1)
    J, K = M.shape
    if K == 0:
        return np.eye(J)
    if np.linalg.matrix_rank(M) < K:
        raise np.linalg.LinAlgError("control matrix is rank deficient")
    cf = _factor(V)
    vinv_m = cho_solve(cf, M)  # V^{-1} M
    gram = M.T @ vinv_m
    # R = I - M gram^{-1} (V^{-1} M)'
    return np.eye(J) - M @ np.linalg.solve(gram, vinv_m.T)


def markowitz_weights(V, R, f, unit_vol: bool = True) -> np.ndarray:
    """``w = V^{-1} R f``, optionally rescaled to unit predicted volatility ``sqrt(w'Vw) = 1``."""
    V = np.asarray(V, dtype=float)
    f = np.asarray(f, dtype=float)
    w = cho_solve(_factor(V), np.asarray(R) @ f)
    if unit_vol:
        vol = math.sqrt(max(0.0, float(w @ V @ w)))
        w = w / vol if vol > 0 else np.zeros_like(w)
    return w


def smooth_weights(history, window: int = 21) -> np.ndarray:
    """Equal-weighted mean of the last ``min(window, len(history))`` weight vectors.

    Vectors must already be aligned on a common firm axis; NaN counts as 0.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim == 1:
        h = h[None]
    if h.shape[0] == 0:
        raise ValueError("smoothing needs at least one day of weights")
    tail = h[-window:]
    return np.where(np.isfinite(tail), tail, 0.0).mean(axis=0)


# ------------------------------------------------------------------- report


def sharpe_ratio(returns, annualization: int = 252) -> tuple[float, bool]:
    """Annualized ``mean / std`` (sample std). Returns ``(value, defined)``; undefined reports 0."""
    r = np.asarray(returns, dtype=float)
    r = r[np.isfinite(r)]
    if r.size < 2:
        return 0.0, False
    sd = r.std(ddof=1)
    if not sd > 0:
        return 0.0, False
    return float(r.mean() / sd * math.sqrt(annualization)), True


def default_periods(dates, n: int = 3) -> tuple:
    """Contiguous, near-equal date ranges covering ``dates``."""
    chunks = [c for c in np.array_split(np.asarray(dates), n) if len(c)]
    return tuple((str(c[0]), str(c[-1])) for c in chunks)


@dataclass(eq=False)
class BacktestReport:
    dates: tuple  # dates of realized portfolio returns
    daily_returns: pd.DataFrame  # index date, one column per signal
    sharpe: pd.DataFrame  # index period label, one column per signal
    half_lives: pd.DataFrame  # same layout
    sharpe_defined: pd.DataFrame
    periods: tuple
    config_digest: str
    checks: dict = field(default_factory=dict)


def _period_label(p) -> str:
    return f"{p[0]}..{p[1]}"


def _check_periods(periods, dates) -> None:
    covered = np.zeros(len(dates), dtype=int)
    d = np.asarray(dates)
    for start, end in periods:
        covered += (d >= start) & (d <= end)
    if np.any(covered != 1):
        raise ValueError("sub-periods must be disjoint and cover every evaluation date")


def run_backtest(panel, signals: dict, config: BacktestConfig = BacktestConfig()) -> BacktestReport:
    """Daily Markowitz backtest of each signal with 21-day weight smoothing.

    For each date ``t``: estimate ``V`` from returns through ``t``, assemble
    the controls ``M``, project, form unit-volatility weights from the signal,
    smooth them, and earn ``w_t' r_{t+1}``. No transaction costs.

    Parameters
    ----------
    panel : CharacteristicPanel
    signals : dict
        ``{label: SignalSeries}`` aligned with the panel's dates and firms.
    """
    T, J = len(panel.dates), len(panel.firms)
    if not signals:
        raise ValueError("no signals to backtest")
    for label, s in signals.items():
        if tuple(s.dates) != tuple(panel.dates) or tuple(s.firms) != tuple(panel.firms):
            raise ValueError(f"signal {label!r} is not aligned with the panel dates/firms")
    dates = np.asarray(panel.dates)
    in_window = np.ones(T, dtype=bool)
    if config.start_date:
        in_window &= dates >= config.start_date
    if config.end_date:
        in_window &= dates <= config.end_date
    if not in_window.any():
        raise ValueError("backtest window does not overlap the panel dates")

    labels = list(signals)
    ctrl_idx = None
    if config.controls is not None:
        names = list(panel.control_names)
        ctrl_idx = [names.index(c) for c in config.controls]
    rets = np.where(np.isfinite(panel.returns), panel.returns, np.nan)
    hist = {k: [] for k in labels}
    port = {k: np.full(T, np.nan) for k in labels}
    max_idem = 0.0
    max_orth = 0.0
    n_steps = 0
    for t in range(T - 1):
        if not in_window[t] or t + 1 < config.min_history:
            continue
        rows = {k: signals[k].values[t] for k in labels}
        live = np.zeros(J, dtype=bool)
        for v in rows.values():
            live |= np.isfinite(v)
        live &= panel.groups[t] >= 0
        idx = np.flatnonzero(live)
        if idx.size < 2:
            continue
        V = estimate_covariance(rets[:, idx], t, config).V
        ctrl = panel.controls[t, idx]
        if ctrl_idx is not None:
            ctrl = ctrl[:, ctrl_idx]
        M = assemble_controls(ctrl, panel.groups[t, idx], config.include_intercept, config.include_group_dummies)
        if M.shape[1] >= idx.size:
            continue
        R = projection(V, M)
        idem = float(np.abs(R @ R - R).max())
        max_idem = max(max_idem, idem)
        if idem > config.check_tol:
            raise InvariantError(f"projection not idempotent on {panel.dates[t]}: {idem:.3e}")
        n_steps += 1
        for k in labels:
            f = np.where(np.isfinite(rows[k][idx]), rows[k][idx], 0.0)
            w = markowitz_weights(V, R, f)
            if M.shape[1]:
                orth = float(np.abs(w @ M).max()) / max(1.0, np.linalg.norm(w) * np.linalg.norm(M))
                max_orth = max(max_orth, orth)
                if orth > config.check_tol:
                    raise InvariantError(f"weights load on controls on {panel.dates[t]}: {orth:.3e}")
            full = np.zeros(J)
            full[idx] = w
            hist[k].append(full)
            if len(hist[k]) > config.smoothing_window:
                hist[k].pop(0)
            ws = smooth_weights(hist[k], config.smoothing_window)
            r_next = np.where(np.isfinite(rets[t + 1]), rets[t + 1], 0.0)
            port[k][t + 1] = float(ws @ r_next)
    if n_steps == 0:
        raise ValueError("no date had enough history and firms to form a portfolio")

    realized = np.isfinite(port[labels[0]])
    ret_dates = tuple(dates[realized])
    daily = pd.DataFrame({str(k): port[k][realized] for k in labels}, index=pd.Index(ret_dates, name="date"))
    periods = tuple(tuple(p) for p in config.periods) if config.periods else default_periods(ret_dates, config.n_periods)
    _check_periods(periods, ret_dates)

    rows_s, rows_h, rows_d = {}, {}, {}
    for lbl, (start, end) in [("full", (ret_dates[0], ret_dates[-1]))] + [(_period_label(p), p) for p in periods]:
        mask = (daily.index >= start) & (daily.index <= end)
        srow, hrow, drow = {}, {}, {}
        for k in labels:
            srow[str(k)], drow[str(k)] = sharpe_ratio(daily[str(k)].to_numpy()[mask], config.annualization)
            smask = in_window & (dates >= start) & (dates <= end)
            try:
                hrow[str(k)] = half_life(signals[k].values[smask], config.half_life_method)
            except ValueError:
                hrow[str(k)] = math.nan
        rows_s[lbl], rows_h[lbl], rows_d[lbl] = srow, hrow, drow
    return BacktestReport(
        dates=ret_dates,
        daily_returns=daily,
        sharpe=pd.DataFrame.from_dict(rows_s, orient="index"),
        half_lives=pd.DataFrame.from_dict(rows_h, orient="index"),
        sharpe_defined=pd.DataFrame.from_dict(rows_d, orient="index"),
        periods=periods,
        config_digest=config.digest(),
        checks={"max_idempotence_error": max_idem, "max_control_loading": max_orth, "portfolio_dates": n_steps},
    )
