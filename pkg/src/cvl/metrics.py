"""Distances between firms, the distance-to-similarity kernel, and gamma calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hermitian import _amplitudes, _check_dims
from .qcml import QcmlModel, ground_states


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return math.sqrt(float(d @ d))


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``. Diagnostic only; magnitudes carry meaning for factor scores."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance is undefined for a zero vector")
    return float(1.0 - (a @ b) / (na * nb))


def _overlap(a, b) -> float:
    va, vb = _amplitudes(a), _amplitudes(b)
    _check_dims(va.shape[0], vb.shape[0])
    return min(1.0, abs(np.vdot(va, vb)))


def bures_distance(a, b) -> float:
    """``sqrt(2 - 2 |<a|b>|)``, in ``[0, sqrt(2)]``."""
    return math.sqrt(max(0.0, 2.0 - 2.0 * _overlap(a, b)))


def geodesic_distance(a, b) -> float:
    """``arccos |<a|b>|``, in ``[0, pi/2]``."""
    return math.acos(min(1.0, max(0.0, _overlap(a, b))))


@dataclass(frozen=True, eq=False)
class GammaConfig:
    gamma_euclidean: float = 1.0
    gamma_qcml: float = 16.0

    def __post_init__(self):
        if not (self.gamma_euclidean > 0 and self.gamma_qcml > 0):
            raise ValueError("gamma values must be strictly positive")


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Per-date J x J similarity: symmetric, zero diagonal, entries in [0, 1]."""

    date: str
    firms: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        firms = tuple(self.firms)
        if v.shape != (len(firms), len(firms)):
            raise ValueError(f"similarity shape {v.shape} does not match {len(firms)} firms")
        if np.any(np.diag(v) != 0.0):
            raise ValueError("similarity diagonal must be exactly 0")
        if np.any(np.abs(v - v.T) > 1e-12):
            raise ValueError("similarity matrix is not symmetric")
        if np.any(v < 0.0) or np.any(v > 1.0) or not np.all(np.isfinite(v)):
            raise ValueError("similarities must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "firms", firms)


def _check_distances(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if np.any(d < 0.0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and nonnegative")
    if np.any(np.abs(d - d.T) > 1e-12 * max(1.0, float(d.max(initial=0.0)))):
        raise ValueError("distance matrix is not symmetric")
    return d


def similarity_values(distances, gamma: float) -> np.ndarray:
    """``exp(-gamma d^2)`` off the diagonal, 0 on it."""
    if not gamma > 0:
        raise ValueError("gamma must be strictly positive")
    d = _check_distances(distances)
    s = np.exp(-gamma * d * d)
    # symmetrize away last-bit asymmetry of the distance input
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 0.0)
    return s


def similarity_matrix(distances, gamma: float, date: str = "", firms=None) -> SimilarityMatrix:
    s = similarity_values(distances, gamma)
    firms = tuple(range(s.shape[0])) if firms is None else tuple(firms)
    return SimilarityMatrix(date, firms, s)


def calibrate_gamma(euclid_d2, qcml_d2, gamma_euclidean: float = 1.0) -> float:
    """QCML kernel scale matching the median of ``gamma * d^2`` to the Euclidean one.

    Medians of even-length samples average the two central order statistics.
    """
    e = np.asarray(euclid_d2, dtype=float).reshape(-1)
    q = np.asarray(qcml_d2, dtype=float).reshape(-1)
    if e.size == 0 or q.size == 0:
        raise ValueError("calibration needs nonempty distance samples")
    if np.any(e < 0) or np.any(q < 0):
        raise ValueError("squared distances must be nonnegative")
    mq = float(np.median(q))
    if mq <= 0.0:
        raise ValueError("median QCML squared distance is 0 (degenerate ground states)")
    gamma = gamma_euclidean * float(np.median(e)) / mq
    if not gamma > 0:
        raise ValueError("calibrated gamma is not strictly positive")
    return gamma


def pairwise_euclidean(x, block: int = 256) -> np.ndarray:
    """J x J Euclidean distances between the rows of ``x``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("characteristic slice has missing values")
    n = x.shape[0]
    out = np.empty((n, n))
    for lo in range(0, n, block):
        diff = x[lo : lo + block, None, :] - x[None, :, :]
        out[lo : lo + block] = np.sqrt(np.einsum("ijc,ijc->ij", diff, diff))
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


def pairwise_bures(states: np.ndarray) -> np.ndarray:
    """J x J Bures distances between the rows of a ``(J, N)`` state array."""
    states = np.asarray(states, dtype=complex)
    ov = np.minimum(1.0, np.abs(states.conj() @ states.T))
    ov = 0.5 * (ov + ov.T)
    d = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * ov))
    np.fill_diagonal(d, 0.0)
    return d


def pairwise_qcml(models, x) -> list[np.ndarray]:
    """Per-model J x J Bures distances between ground states of the rows of ``x``.

    One ground-state solve per firm and model.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("characteristic slice has missing values")
    if isinstance(models, QcmlModel):
        models = [models]
    return [pairwise_bures(ground_states(m, x)[0]) for m in models]


def state_panel(model: QcmlModel, characteristics: np.ndarray, available: np.ndarray) -> np.ndarray:
    """Ground states ``(T, J, N)`` for every available ``(date, firm)`` cell; NaN elsewhere."""
    T, J, _ = characteristics.shape
    out = np.full((T, J, model.dim), np.nan, dtype=complex)
    tt, jj = np.nonzero(available)
    if tt.size:
        out[tt, jj] = ground_states(model, characteristics[tt, jj])[0]
    return out


def squared_distance_sample(d: np.ndarray) -> np.ndarray:
    """Upper-triangle (i < j) squared distances of a square matrix."""
    iu = np.triu_indices(d.shape[0], k=1)
    return d[iu] ** 2


# ------------------------------------------------------------------- file io


def write_similarity_blocks(fh, matrices, header: str = "") -> None:
    """Dense text blocks: ``# date=<d>`` line, a header row of firm ids, then J rows.

    Values are written with ``repr`` so they parse back bit-exactly.
    """
    if header:
        fh.write(header.rstrip("\n") + "\n")
    for sm in matrices:
        fh.write(f"# date={sm.date}\n")
        fh.write("firm_id," + ",".join(str(f) for f in sm.firms) + "\n")
        for f, row in zip(sm.firms, sm.values):
            fh.write(str(f) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def read_similarity_blocks(fh) -> list[SimilarityMatrix]:
    out = []
    date, firms, rows = None, None, []

    def flush():
        if date is not None:
            out.append(SimilarityMatrix(date, tuple(firms), np.array(rows, dtype=float).reshape(len(firms), len(firms))))

    for line in fh:
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("# date="):
            flush()
            date, firms, rows = line[len("# date=") :], None, []
        elif line.startswith("#"):
            continue
        elif firms is None:
            firms = line.split(",")[1:]
        else:
            rows.append([float(v) for v in line.split(",")[1:]])
    flush()
    return out
