"""Glue between the modules: training windows, gamma calibration, and linkage-weight providers.

These are the steps every end-to-end run repeats, shared by the command
line driver, the tests, and the narrative scripts.
"""

from __future__ import annotations

import numpy as np

from .metrics import (
    calibrate_gamma,
    pairwise_bures,
    pairwise_euclidean,
    similarity_values,
    squared_distance_sample,
    state_panel,
)
from .signals import linkage_weights


def training_dates(panel, fraction: float, horizon: int) -> tuple[np.ndarray, int]:
    """Date indices usable for training and the first out-of-sample index.

    The first ``fraction`` of dates form the training window. Dates whose
    forward target would reach past the window are embargoed, so no
    training label uses a return from the evaluation period.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("train fraction must lie in (0, 1)")
    T = len(panel.dates)
    n_train = int(round(fraction * T))
    last = n_train - horizon
    if last < 1:
        raise ValueError(f"training window of {n_train} dates is shorter than the {horizon}-day target horizon")
    idx = np.arange(last)
    if panel.target is not None:
        idx = idx[np.isfinite(panel.target[idx]).any(axis=1)]
    return idx, n_train


def euclidean_squared_distances(panel, dates) -> np.ndarray:
    """Pooled ``d^2`` over all firm pairs of each listed date."""
    avail = panel.available
    out = [squared_distance_sample(pairwise_euclidean(panel.characteristics[t, avail[t]])) for t in dates]
    return np.concatenate(out) if out else np.zeros(0)


def qcml_states(models, panel) -> list[np.ndarray]:
    """Per-model ``(T, J, N)`` ground states of every available cell."""
    return [state_panel(m, panel.characteristics, panel.available) for m in models]


def qcml_squared_distances(states, panel, dates) -> np.ndarray:
    """Pooled Bures ``d^2`` over all firm pairs of each listed date and every ensemble member."""
    avail = panel.available
    out = [squared_distance_sample(pairwise_bures(s[t, avail[t]])) for s in states for t in dates]
    return np.concatenate(out) if out else np.zeros(0)


def calibrate(panel, states, dates, gamma_euclidean: float = 1.0) -> float:
    """Median-matched ``gamma_qcml`` over the training pairs."""
    return calibrate_gamma(
        euclidean_squared_distances(panel, dates),
        qcml_squared_distances(states, panel, dates),
        gamma_euclidean,
    )


def euclidean_provider(panel, gamma: float):
    """``weights_for_date`` callback with a single Euclidean linkage matrix."""

    def weights(t, idx):
        d = pairwise_euclidean(panel.characteristics[t, idx])
        return [linkage_weights(similarity_values(d, gamma))]

    return weights


def qcml_provider(states, gamma: float):
    """``weights_for_date`` callback with one Bures linkage matrix per ensemble member."""

    def weights(t, idx):
        return [linkage_weights(similarity_values(pairwise_bures(s[t, idx]), gamma)) for s in states]

    return weights


def mean_similarity(states, t, idx, gamma: float) -> np.ndarray:
    """Ensemble-mean QCML similarity on one date (diagnostic export only)."""
    return np.mean([similarity_values(pairwise_bures(s[t, idx]), gamma) for s in states], axis=0)
