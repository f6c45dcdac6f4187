"""Characteristic panels: preprocessing, targets, synthetic generation, and file IO.

A panel is a set of aligned ``(date, firm)`` arrays. Missing cells are NaN
(characteristics, returns, controls, target) or -1 (group labels).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd


class ZeroDispersionError(ValueError):
    """Cross-section has no dispersion, so it cannot be z-scored."""


@dataclass(frozen=True, eq=False)
class CharacteristicPanel:
    dates: tuple
    firms: tuple
    characteristic_names: tuple
    characteristics: np.ndarray  # (T, J, C)
    groups: np.ndarray  # (T, J) int, -1 = missing
    returns: np.ndarray  # (T, J); returns[t] is realized over day t
    control_names: tuple = ()
    controls: np.ndarray | None = None  # (T, J, K)
    target: np.ndarray | None = None  # (T, J)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        T, J = len(self.dates), len(self.firms)
        chars = np.array(self.characteristics, dtype=float)
        if chars.ndim != 3 or chars.shape[:2] != (T, J):
            raise ValueError(f"characteristics must be (T, J, C) = ({T}, {J}, C), got {chars.shape}")
        if chars.shape[2] != len(self.characteristic_names):
            raise ValueError("characteristic names do not match the characteristic axis")
        groups = np.array(self.groups, dtype=np.int64)
        rets = np.array(self.returns, dtype=float)
        if groups.shape != (T, J) or rets.shape != (T, J):
            raise ValueError("groups and returns must be (T, J)")
        ctrl = np.zeros((T, J, 0)) if self.controls is None else np.array(self.controls, dtype=float)
        if ctrl.shape[:2] != (T, J) or ctrl.shape[2] != len(self.control_names):
            raise ValueError("controls must be (T, J, K) with K control names")
        tgt = None if self.target is None else np.array(self.target, dtype=float)
        if tgt is not None and tgt.shape != (T, J):
            raise ValueError("target must be (T, J)")
        for name, arr in [("characteristics", chars), ("groups", groups), ("returns", rets), ("controls", ctrl), ("target", tgt)]:
            if arr is not None:
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        for name in ("dates", "firms", "characteristic_names", "control_names"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def available(self) -> np.ndarray:
        """``(T, J)`` mask: all characteristics finite and a group label present."""
        return np.all(np.isfinite(self.characteristics), axis=2) & (self.groups >= 0)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.characteristics.shape

    def replace(self, **changes) -> CharacteristicPanel:
        return replace(self, **changes)


# ------------------------------------------------------- cross-sectional ops


def percentile(values, pct: float) -> float:
    """Linear interpolation between closest ranks (numpy's default 'linear' method)."""
    return float(np.percentile(np.asarray(values, dtype=float), pct))


def winsorize(values, lower_pct: float = 1.0, upper_pct: float = 99.0) -> np.ndarray:
    """Clip finite values to their ``[lower_pct, upper_pct]`` empirical percentiles.

    NaNs pass through untouched.
    """
    if not 0.0 <= lower_pct < upper_pct <= 100.0:
        raise ValueError("need 0 <= lower_pct < upper_pct <= 100")
    v = np.array(values, dtype=float)
    finite = np.isfinite(v)
    if not finite.any():
        raise ValueError("cannot winsorize an all-missing vector")
    if finite.sum() < 2:
        raise ValueError("winsorizing needs at least two finite values")
    lo, hi = np.percentile(v[finite], [lower_pct, upper_pct])
    v[finite] = np.clip(v[finite], lo, hi)
    return v


def zscore(values, name: str = "") -> np.ndarray:
    """Standardize finite entries to mean 0, population std 1.

    Raises
    ------
    ZeroDispersionError
        If fewer than two finite values or zero dispersion. ``name`` (e.g.
        characteristic and date) is included in the message.
    """
    v = np.array(values, dtype=float)
    finite = np.isfinite(v)
    label = f" ({name})" if name else ""
    if finite.sum() < 2:
        raise ZeroDispersionError(f"z-score needs at least two finite values{label}")
    x = v[finite]
    mu = x.mean()
    sd = math.sqrt(np.mean((x - mu) ** 2))
    if sd <= 1e-14 * max(1.0, abs(mu)):
        raise ZeroDispersionError(f"zero cross-sectional dispersion{label}")
    z = (x - mu) / sd
    # second pass tightens mean/std to rounding level
    z = z - z.mean()
    z = z / math.sqrt(np.mean(z * z))
    v[finite] = z
    return v


def group_demean(values, labels) -> np.ndarray:
    """Subtract per-label means from the finite entries. Singletons become 0."""
    v = np.array(values, dtype=float)
    labels = np.asarray(labels)
    finite = np.isfinite(v)
    if labels.shape != v.shape:
        raise ValueError("labels must align with values")
    lab = labels[finite]
    x = v[finite]
    uniq, inv = np.unique(lab, return_inverse=True)
    sums = np.bincount(inv, weights=x, minlength=uniq.size)
    counts = np.bincount(inv, minlength=uniq.size)
    x = x - (sums / counts)[inv]
    # second pass removes the rounding residue of the first
    sums = np.bincount(inv, weights=x, minlength=uniq.size)
    x = x - (sums / counts)[inv]
    v[finite] = x
    return v


def preprocess(
    panel: CharacteristicPanel,
    lower_pct: float = 1.0,
    upper_pct: float = 99.0,
    min_firms: int = 10,
) -> CharacteristicPanel:
    """Per date and characteristic: group-demean, z-score, winsorize.

    Firms missing any characteristic (or their group) on a date are dropped
    from that date's cross-section, i.e. all their characteristics become NaN.
    """
    T, J, C = panel.shape
    avail = panel.available
    out = np.full((T, J, C), np.nan)
    for t in range(T):
        idx = np.flatnonzero(avail[t])
        if idx.size < min_firms:
            raise ValueError(f"date {panel.dates[t]} has {idx.size} usable firms, fewer than {min_firms}")
        labels = panel.groups[t, idx]
        for c in range(C):
            v = group_demean(panel.characteristics[t, idx, c], labels)
            v = zscore(v, name=f"{panel.characteristic_names[c]} on {panel.dates[t]}")
            out[t, idx, c] = winsorize(v, lower_pct, upper_pct)
    meta = dict(panel.meta, preprocessed=True)
    return panel.replace(characteristics=out, meta=meta)


# ------------------------------------------------------------------- targets


def forward_returns(returns: np.ndarray, horizon: int) -> np.ndarray:
    """Compounded return over ``t+1 .. t+horizon``; NaN if any day is missing or out of range."""
    r = np.asarray(returns, dtype=float)
    T = r.shape[0]
    logs = np.log1p(np.where(np.isfinite(r), r, 0.0))
    miss = (~np.isfinite(r)).astype(np.int64)
    cum = np.vstack([np.zeros((1,) + r.shape[1:]), np.cumsum(logs, axis=0)])
    cmiss = np.vstack([np.zeros((1,) + r.shape[1:], dtype=np.int64), np.cumsum(miss, axis=0)])
    out = np.full(r.shape, np.nan)
    if T > horizon:
        # days t+1 .. t+h are rows t+1 .. t+h, i.e. cum[t+h+1] - cum[t+1]
        span = cum[horizon + 1 :] - cum[1 : T - horizon + 1]
        nmiss = cmiss[horizon + 1 :] - cmiss[1 : T - horizon + 1]
        out[: T - horizon] = np.where(nmiss == 0, np.expm1(span), np.nan)
    return out


def build_target(panel: CharacteristicPanel, horizon: int = 63) -> CharacteristicPanel:
    """Cross-sectionally z-scored ``horizon``-day forward returns.

    Cells without full forward history, or for unavailable firms, carry NaN.
    """
    fwd = forward_returns(panel.returns, horizon)
    fwd[~panel.available] = np.nan
    target = np.full(fwd.shape, np.nan)
    for t in range(fwd.shape[0]):
        if np.isfinite(fwd[t]).sum() == 0:
            continue
        target[t] = zscore(fwd[t], name=f"{horizon}-day forward return on {panel.dates[t]}")
    return panel.replace(target=target, meta=dict(panel.meta, target_horizon=horizon))


# ----------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticConfig:
    """Planted-structure market.

    Firms fall into clusters whose members have nearby characteristic
    vectors. Each cluster has leaders; followers absorb a fraction
    ``lead_lag_strength`` of their leaders' returns with a geometrically
    decaying lag. Industry groups are assigned independently of clusters.
    Only the first ``n_informative`` characteristics carry the cluster
    signal; the rest are persistent noise.
    """

    n_firms: int = 50
    n_dates: int = 2500
    n_characteristics: int = 8
    n_clusters: int = 5
    intra_cluster_corr: float = 0.8
    lead_lag_strength: float = 0.5
    noise_vol: float = 0.02
    seed: int = 0
    n_groups: int = 4
    leaders_per_cluster: int = 2
    lag_half_life: float = 21.0
    max_lag: int = 126
    market_vol: float = 0.01
    char_persistence: float = 0.98
    n_informative: int | None = None
    noise_char_persistence: float | None = None
    cluster_drift: float = 0.0
    start_date: str = "2010-01-04"

    def __post_init__(self):
        for name in ("n_firms", "n_dates", "n_characteristics", "n_clusters", "n_groups", "max_lag"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_clusters > self.n_firms:
            raise ValueError("cluster count exceeds firm count")
        if not 0.0 <= self.lead_lag_strength <= 1.0:
            raise ValueError("lead_lag_strength must lie in [0, 1]")
        if not 0.0 <= self.intra_cluster_corr <= 1.0:
            raise ValueError("intra_cluster_corr must lie in [0, 1]")
        if self.leaders_per_cluster < 1:
            raise ValueError("each cluster needs at least one leader")
        if self.n_informative is not None and not 0 <= self.n_informative <= self.n_characteristics:
            raise ValueError("n_informative must lie in [0, n_characteristics]")


def lag_kernel(half_life: float, max_lag: int) -> np.ndarray:
    """Weights for lags ``1..max_lag``, halving every ``half_life`` days, summing to 1."""
    k = 0.5 ** (np.arange(max_lag) / half_life)
    return k / k.sum()


def _ar1(rng, shape, phi, T):
    out = np.empty((T,) + shape)
    out[0] = rng.standard_normal(shape)
    s = math.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        out[t] = phi * out[t - 1] + s * rng.standard_normal(shape)
    return out


def generate_synthetic(config: SyntheticConfig) -> CharacteristicPanel:
    """Deterministic synthetic panel with planted cluster lead-lag structure.

    ``meta`` records the cluster labels and leader flags so tests can check
    the planted structure directly.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    J, T, C, K = cfg.n_firms, cfg.n_dates, cfg.n_characteristics, cfg.n_clusters
    n_inf = C if cfg.n_informative is None else cfg.n_informative

    clusters = rng.permutation(np.arange(J) % K)
    groups = rng.permutation(np.arange(J) % cfg.n_groups)
    leader = np.zeros(J, dtype=bool)
    for k in range(K):
        members = np.flatnonzero(clusters == k)
        leader[members[: cfg.leaders_per_cluster]] = True
    # a cluster made only of leaders has no followers; that is allowed

    centers = rng.standard_normal((K, n_inf))
    rho = cfg.intra_cluster_corr
    idio = _ar1(rng, (J, n_inf), cfg.char_persistence, T)
    chars = np.empty((T, J, C))
    chars[:, :, :n_inf] = math.sqrt(rho) * centers[clusters][None] + math.sqrt(1.0 - rho) * idio
    if n_inf < C:
        phi_noise = cfg.char_persistence if cfg.noise_char_persistence is None else cfg.noise_char_persistence
        chars[:, :, n_inf:] = _ar1(rng, (J, C - n_inf), phi_noise, T)

    market = rng.normal(0.0, cfg.market_vol, T)
    factor = rng.normal(0.0, cfg.noise_vol, (T, K))
    eps = rng.normal(0.0, cfg.noise_vol, (T, J))
    drift = cfg.cluster_drift * rng.standard_normal(K)
    rets = market[:, None] + eps + drift[clusters][None]
    rets[:, leader] += factor[:, clusters[leader]]

    kernel = lag_kernel(cfg.lag_half_life, cfg.max_lag)
    lead_mean = np.zeros((T, K))
    for k in range(K):
        m = leader & (clusters == k)
        lead_mean[:, k] = rets[:, m].mean(axis=1)
    transmitted = np.zeros((T, K))
    for lag, wt in enumerate(kernel, start=1):
        transmitted[lag:] += wt * lead_mean[:-lag]
    rets[:, ~leader] += cfg.lead_lag_strength * transmitted[:, clusters[~leader]]

    size = _ar1(rng, (J,), 0.999, T) + 2.0 * rng.standard_normal(J)[None]
    mom = np.zeros((T, J))
    logs = np.vstack([np.zeros((1, J)), np.cumsum(np.log1p(rets), axis=0)])
    for t in range(252, T):
        # return from 252 days ago to 21 days ago
        mom[t] = np.expm1(logs[t - 21] - logs[t - 252])
    controls = np.stack([_zscore_rows(size), _zscore_rows(mom)], axis=2)

    dates = tuple(d.strftime("%Y-%m-%d") for d in pd.bdate_range(cfg.start_date, periods=T))
    firms = tuple(f"F{j:03d}" for j in range(J))
    meta = {
        "synthetic": asdict(cfg),
        "clusters": clusters.tolist(),
        "leaders": leader.tolist(),
    }
    return CharacteristicPanel(
        dates=dates,
        firms=firms,
        characteristic_names=tuple(f"char_{c:02d}" for c in range(C)),
        characteristics=chars,
        groups=np.broadcast_to(groups, (T, J)).copy(),
        returns=rets,
        control_names=("size", "momentum"),
        controls=controls,
        meta=meta,
    )


def _zscore_rows(a: np.ndarray) -> np.ndarray:
    mu = a.mean(axis=1, keepdims=True)
    sd = a.std(axis=1, keepdims=True)
    return np.where(sd > 0, (a - mu) / np.where(sd > 0, sd, 1.0), 0.0)


# ------------------------------------------------------------------- file io

PANEL_FILES = {
    "characteristics": "characteristics.csv",
    "returns": "returns.csv",
    "groups": "groups.csv",
    "controls": "controls.csv",
    "target": "target.csv",
}


def _long_frame(panel: CharacteristicPanel, values: np.ndarray, columns) -> pd.DataFrame:
    T, J = len(panel.dates), len(panel.firms)
    df = pd.DataFrame(values.reshape(T * J, -1), columns=list(columns))
    df.insert(0, "firm_id", np.tile(np.array(panel.firms, dtype=object), T))
    df.insert(0, "date", np.repeat(np.array(panel.dates, dtype=object), J))
    return df


def _write_csv(df: pd.DataFrame, path: Path, header: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        df.to_csv(fh, index=False, na_rep="", float_format=None, lineterminator="\n")


def write_panel(panel: CharacteristicPanel, directory, header: str = "") -> None:
    """Write the panel as long-format CSV files (one per content kind).

    Every file has columns ``date, firm_id, <names...>``; missing values are
    empty fields; ``header`` is written as a leading ``#`` comment line.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(_long_frame(panel, panel.characteristics, panel.characteristic_names), d / PANEL_FILES["characteristics"], header)
    _write_csv(_long_frame(panel, panel.returns, ["return"]), d / PANEL_FILES["returns"], header)
    g = _long_frame(panel, panel.groups.astype(float), ["group"])
    g = g[panel.groups.reshape(-1) >= 0].copy()
    g["group"] = g["group"].astype(np.int64)
    _write_csv(g, d / PANEL_FILES["groups"], header)
    _write_csv(_long_frame(panel, panel.controls, panel.control_names), d / PANEL_FILES["controls"], header)
    if panel.target is not None:
        _write_csv(_long_frame(panel, panel.target, ["target"]), d / PANEL_FILES["target"], header)


def read_header(path) -> str:
    """First line if it is a ``#`` comment, else ''."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
    return first if first.startswith("#") else ""


def _read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", dtype={"date": str, "firm_id": str}, float_precision="round_trip")


def read_panel(directory) -> CharacteristicPanel:
    """Read a panel directory written by :func:`write_panel` (or by hand in the same format).

    ``characteristics.csv`` and ``returns.csv`` are required; dates and firms
    are the sorted union of the keys found there.
    """
    d = Path(directory)
    chars = _read_csv(d / PANEL_FILES["characteristics"])
    rets = _read_csv(d / PANEL_FILES["returns"])
    dates = tuple(sorted(set(chars["date"]) | set(rets["date"])))
    firms = tuple(sorted(set(chars["firm_id"]) | set(rets["firm_id"])))
    T, J = len(dates), len(firms)
    di = {x: i for i, x in enumerate(dates)}
    fi = {x: i for i, x in enumerate(firms)}

    def grid(df, cols, fill=np.nan, dtype=float):
        out = np.full((T, J, len(cols)), fill, dtype=dtype)
        if len(df):
            ti = df["date"].map(di).to_numpy()
            ji = df["firm_id"].map(fi).to_numpy()
            out[ti, ji] = df[list(cols)].to_numpy(dtype=dtype)
        return out

    char_names = [c for c in chars.columns if c not in ("date", "firm_id")]
    characteristics = grid(chars, char_names)
    returns = grid(rets, ["return"])[..., 0]
    gpath = d / PANEL_FILES["groups"]
    if gpath.exists():
        groups = grid(_read_csv(gpath), ["group"], fill=-1, dtype=np.int64)[..., 0]
    else:
        groups = np.zeros((T, J), dtype=np.int64)
    cpath = d / PANEL_FILES["controls"]
    control_names: list[str] = []
    controls = np.zeros((T, J, 0))
    if cpath.exists():
        cdf = _read_csv(cpath)
        control_names = [c for c in cdf.columns if c not in ("date", "firm_id")]
        controls = grid(cdf, control_names)
    tpath = d / PANEL_FILES["target"]
    target = grid(_read_csv(tpath), ["target"])[..., 0] if tpath.exists() else None
    return CharacteristicPanel(
        dates=dates,
        firms=firms,
        characteristic_names=tuple(char_names),
        characteristics=characteristics,
        groups=groups,
        returns=returns,
        control_names=tuple(control_names),
        controls=controls,
        target=target,
    )
