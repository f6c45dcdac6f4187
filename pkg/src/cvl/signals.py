"""Characteristic-linkage momentum spillover signals and their half-lives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .metrics import SimilarityMatrix
from .panel import group_demean, zscore

HORIZONS = (21, 63, 126, 252)
COMBINED = "combined"


@dataclass(frozen=True, eq=False)
class SignalSeries:
    """Per-date firm-indexed signal values ``(T, J)``; NaN where undefined."""

    horizon: int | str
    dates: tuple
    firms: tuple
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.dates), len(self.firms)):
            raise ValueError(f"signal values {v.shape} do not match dates x firms")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "firms", tuple(self.firms))

    @property
    def label(self) -> str:
        return str(self.horizon)


def linkage_weights(sim) -> np.ndarray:
    """Row-normalized similarities ``S[j, i] / sum_i S[j, i]``."""
    s = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=float)
    rows = s.sum(axis=1)
    bad = np.flatnonzero(~(rows > 0))
    if bad.size:
        firms = sim.firms if isinstance(sim, SimilarityMatrix) else range(s.shape[0])
        names = [list(firms)[i] for i in bad]
        raise ValueError(f"firm(s) {names} have no positive similarity to any other firm")
    return s / rows[:, None]


def window_return(returns, firm: int, t: int, l: int, max_missing: float = 0.10) -> float:
    """Compounded return of one firm over days ``t-l .. t-1`` (NaN if excluded).

    Missing days are skipped as long as they are at most ``max_missing`` of
    the window; beyond that the firm is excluded for this date and horizon.
    """
    r = np.asarray(returns, dtype=float)
    col = r if r.ndim == 1 else r[:, firm]
    if t - l < 0:
        return math.nan
    w = col[t - l : t]
    ok = np.isfinite(w)
    if (~ok).sum() > max_missing * l:
        return math.nan
    return float(np.prod(1.0 + w[ok]) - 1.0)


class WindowReturns:
    """Vectorized window returns over a ``(T, J)`` return panel via log prefix sums."""

    def __init__(self, returns, max_missing: float = 0.10):
        r = np.asarray(returns, dtype=float)
        ok = np.isfinite(r)
        if np.any(r[ok] <= -1.0):
            raise ValueError("returns must exceed -100%")
        self.max_missing = max_missing
        self._cum = np.vstack([np.zeros((1, r.shape[1])), np.cumsum(np.log1p(np.where(ok, r, 0.0)), axis=0)])
        self._miss = np.vstack([np.zeros((1, r.shape[1]), dtype=np.int64), np.cumsum(~ok, axis=0)])

    def __call__(self, t: int, l: int) -> np.ndarray:
        if t - l < 0:
            return np.full(self._cum.shape[1], np.nan)
        span = self._cum[t] - self._cum[t - l]
        miss = self._miss[t] - self._miss[t - l]
        return np.where(miss <= self.max_missing * l, np.expm1(span), np.nan)


def spillover_from_window(weights: np.ndarray, window: np.ndarray) -> np.ndarray:
    """``f_j = sum_i w[j, i] R_i`` with excluded (NaN) firms dropped and rows renormalized."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(window, dtype=float)
    ok = np.isfinite(r)
    num = w @ np.where(ok, r, 0.0)
    den = w @ ok.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def spillover_signal(weights, returns, t: int, l: int, max_missing: float = 0.10) -> np.ndarray:
    """Spillover signal for date ``t`` and lookback ``l``.

    ``returns`` is a ``(T, J)`` panel whose columns align with the rows of
    ``weights``.
    """
    window = WindowReturns(returns, max_missing)(t, l)
    return spillover_from_window(weights, window)


def combined_window(windows) -> np.ndarray:
    """Per-firm mean of the horizon window returns; NaN if any horizon is missing."""
    return np.mean(np.stack([np.asarray(w, dtype=float) for w in windows]), axis=0)


def combined_signal(windows, weights) -> np.ndarray:
    """Average the horizon window returns per firm, then apply the linkage weights."""
    return spillover_from_window(weights, combined_window(windows))


def normalize_values(values, groups, name: str = "") -> np.ndarray:
    """Group-demean then z-score one cross-section."""
    return zscore(group_demean(values, groups), name=name)


def normalize_signal(series: SignalSeries, groups) -> SignalSeries:
    """Per date: group-demean, then z-score. Dates with fewer than 2 values stay NaN."""
    g = np.asarray(groups)
    out = np.full(series.values.shape, np.nan)
    for t, row in enumerate(series.values):
        ok = np.isfinite(row)
        if ok.sum() < 2:
            continue
        out[t] = normalize_values(row, np.where(ok, g[t], -1), name=f"signal {series.label} on {series.dates[t]}")
    return SignalSeries(series.horizon, series.dates, series.firms, out, normalized=True)


def daily_autocorrelations(values, method: str = "pearson") -> np.ndarray:
    """Cross-sectional correlation of each date's signal with the previous date's.

    NaN where fewer than three firms are shared or either side is constant.
    """
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape[0], np.nan)
    for t in range(1, v.shape[0]):
        ok = np.isfinite(v[t]) & np.isfinite(v[t - 1])
        if ok.sum() < 3:
            continue
        a, b = v[t, ok], v[t - 1, ok]
        if method == "spearman":
            a = pd.Series(a).rank().to_numpy()
            b = pd.Series(b).rank().to_numpy()
        elif method != "pearson":
            raise ValueError(f"unknown correlation method {method!r}")
        a = a - a.mean()
        b = b - b.mean()
        den = math.sqrt(float(a @ a) * float(b @ b))
        if den > 0:
            out[t] = float(a @ b) / den
    return out


def half_life_from_decay(d: float) -> float:
    if not 0.0 < d < 1.0:
        raise ValueError(f"half-life is undefined for decay {d!r} outside (0, 1)")
    return math.log(0.5) / math.log(d)


def half_life(series, method: str = "pearson") -> float:
    """``ln(0.5) / ln(d)`` with ``d`` the mean day-over-day cross-sectional correlation."""
    values = series.values if isinstance(series, SignalSeries) else series
    rho = daily_autocorrelations(values, method)
    rho = rho[np.isfinite(rho)]
    if rho.size == 0:
        raise ValueError("half-life needs at least two dates with overlapping signals")
    return half_life_from_decay(float(rho.mean()))


# ------------------------------------------------------------ series builder


def build_signals(
    panel,
    weights_for_date,
    horizons=HORIZONS,
    dates=None,
    max_missing: float = 0.10,
    normalize: bool = True,
) -> dict:
    """Assemble per-horizon and combined signal series over the panel.

    ``weights_for_date(t, idx)`` returns a list of linkage-weight matrices
    (one per ensemble member) over the firms ``idx`` available on date ``t``.
    Per-member raw signals are averaged with equal weight, then (optionally)
    group-demeaned and z-scored per date.
    """
    T, J = len(panel.dates), len(panel.firms)
    wr = WindowReturns(panel.returns, max_missing)
    labels = list(horizons) + [COMBINED]
    raw = {h: np.full((T, J), np.nan) for h in labels}
    date_idx = range(T) if dates is None else dates
    avail = panel.available
    max_h = max(horizons)
    for t in date_idx:
        idx = np.flatnonzero(avail[t])
        if idx.size < 2 or t < min(horizons):
            continue
        windows = {h: wr(t, h)[idx] for h in horizons}
        comb = combined_window([windows[h] for h in horizons]) if t >= max_h else None
        members = weights_for_date(t, idx)
        for h in horizons:
            if t < h:
                continue
            raw[h][t, idx] = np.mean([spillover_from_window(w, windows[h]) for w in members], axis=0)
        if comb is not None:
            raw[COMBINED][t, idx] = np.mean([spillover_from_window(w, comb) for w in members], axis=0)
    out = {}
    for h in labels:
        s = SignalSeries(h, panel.dates, panel.firms, raw[h])
        out[h] = normalize_signal(s, panel.groups) if normalize else s
    return out


def write_signals(fh, series_list, header: str = "") -> None:
    """Long text format: ``date,firm_id,horizon,value``; undefined cells omitted."""
    if header:
        fh.write(header.rstrip("\n") + "\n")
    fh.write("date,firm_id,horizon,value\n")
    for s in series_list:
        tt, jj = np.nonzero(np.isfinite(s.values))
        for t, j in zip(tt, jj):
            fh.write(f"{s.dates[t]},{s.firms[j]},{s.label},{float(s.values[t, j])!r}\n")


def read_signals(path, dates=None, firms=None, normalized: bool = True) -> dict:
    """Parse a signal file back into ``{horizon: SignalSeries}``."""
    df = pd.read_csv(path, comment="#", dtype={"date": str, "firm_id": str, "horizon": str}, float_precision="round_trip")
    dates = tuple(sorted(df["date"].unique())) if dates is None else tuple(dates)
    firms = tuple(sorted(df["firm_id"].unique())) if firms is None else tuple(firms)
    di = {d: i for i, d in enumerate(dates)}
    fi = {f: i for i, f in enumerate(firms)}
    out = {}
    for label, part in df.groupby("horizon", sort=False):
        v = np.full((len(dates), len(firms)), np.nan)
        v[part["date"].map(di).to_numpy(), part["firm_id"].map(fi).to_numpy()] = part["value"].to_numpy()
        key = int(label) if label.isdigit() else label
        out[key] = SignalSeries(key, dates, firms, v, normalized=normalized)
    return out
