"""Supervised quantum cognition machine learning (QCML) regression.

A model holds C Hermitian feature operators and one target operator. A data
vector ``x`` is encoded as the ground state of the error Hamiltonian

    H(x) = sum_c (A_c - x_c I)^2

and read back through expectation values: the *position* ``<A_c>`` and the
*forecast* ``<B>``. Training minimizes

    (forecast - y)^2 + w * |position - x|^2

with the ground state held fixed while differentiating (stop-gradient), so
the gradients are closed-form outer products of the ground state.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .hermitian import HermitianOperator, QuantumState, batch_ground_states, expectation

CHECKPOINT_FORMAT = "cvl-qcml-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    dim: int = 12
    bias_weight: float = 1.0
    learning_rate: float = 1e-2
    epochs: int = 300
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    name_fraction: float = 0.10
    date_subgroup_count: int = 5
    ensemble_size: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("Hilbert space dimension must be >= 1")
        if not 4 <= self.dim <= 32:
            warnings.warn(f"Hilbert dimension {self.dim} is outside the usual 4..32 range", stacklevel=3)
        if not 0.0 < self.name_fraction <= 1.0:
            raise ValueError("name_fraction must lie in (0, 1]")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.date_subgroup_count < 1:
            raise ValueError("date_subgroup_count must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.bias_weight < 0:
            raise ValueError("bias_weight must be >= 0")


@dataclass(frozen=True)
class TrainingSample:
    features: np.ndarray
    target: float
    firm: str = ""
    date: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite features for firm {self.firm!r} on {self.date!r}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "target", float(self.target))


@dataclass(frozen=True, eq=False)
class QcmlModel:
    feature_ops: tuple[HermitianOperator, ...]
    target_op: HermitianOperator
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ops = tuple(self.feature_ops)
        if not ops:
            raise ValueError("a model needs at least one feature operator")
        dims = {op.dim for op in ops} | {self.target_op.dim}
        if len(dims) != 1:
            raise ValueError(f"operators disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "feature_ops", ops)

    @property
    def dim(self) -> int:
        return self.target_op.dim

    @property
    def feature_count(self) -> int:
        return len(self.feature_ops)

    @classmethod
    def from_params(cls, sym: np.ndarray, antisym: np.ndarray, meta: dict | None = None) -> QcmlModel:
        """Build from stacked ``(C + 1, N, N)`` parts; the last slot is the target operator."""
        ops = [HermitianOperator(s, a) for s, a in zip(sym, antisym)]
        return cls(tuple(ops[:-1]), ops[-1], dict(meta or {}))

    def params(self) -> tuple[np.ndarray, np.ndarray]:
        ops = list(self.feature_ops) + [self.target_op]
        return np.stack([op.sym for op in ops]), np.stack([op.antisym for op in ops])

    def feature_matrices(self) -> np.ndarray:
        return np.stack([op.matrix for op in self.feature_ops])


# ---------------------------------------------------------------- evaluation


def _check_features(model: QcmlModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.feature_count:
        raise ValueError(f"expected {model.feature_count} features, got {x.shape[-1]}")
    return x


def _hamiltonians(mats: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Stacked error Hamiltonians for rows of ``X``; ``mats`` is ``(C, N, N)``."""
    n_dim = mats.shape[-1]
    eye = np.eye(n_dim)
    sq = np.einsum("cab,cbd->ad", mats, mats)
    lin = np.einsum("nc,cab->nab", X, mats)
    return sq[None] - 2.0 * lin + (X * X).sum(axis=1)[:, None, None] * eye


def error_hamiltonian(model: QcmlModel, features) -> HermitianOperator:
    """``sum_c (A_c - x_c I)^2`` as a Hermitian operator."""
    x = _check_features(model, features).reshape(-1)
    eye = np.eye(model.dim)
    h = np.zeros((model.dim, model.dim), dtype=complex)
    for op, xc in zip(model.feature_ops, x):
        d = op.matrix - xc * eye
        h += d @ d
    return HermitianOperator.from_matrix(h)


def ground_states(model: QcmlModel, X, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ground states and ground energies for the rows of ``X``."""
    X = np.atleast_2d(_check_features(model, X))
    mats = model.feature_matrices()
    states = np.empty((X.shape[0], model.dim), dtype=complex)
    energies = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        states[sl], energies[sl] = batch_ground_states(_hamiltonians(mats, X[sl]))
    return states, energies


def ground_state_of(model: QcmlModel, features) -> QuantumState:
    states, _ = ground_states(model, np.asarray(features, dtype=float).reshape(1, -1))
    return QuantumState(states[0], normalize=True)


def _expectations(mats: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``(n, K)`` real expectations of ``K`` operators on ``n`` states."""
    return np.einsum("na,kab,nb->nk", psi.conj(), mats, psi).real


def position(model: QcmlModel, state) -> np.ndarray:
    """Vector of feature-operator expectations on ``state``."""
    return np.array([expectation(op, state) for op in model.feature_ops])


def ground_energy(model: QcmlModel, features) -> float:
    psi = ground_state_of(model, features)
    return expectation(error_hamiltonian(model, features), psi)


def forecast(model: QcmlModel, features) -> float:
    return expectation(model.target_op, ground_state_of(model, features))


def loss(model: QcmlModel, sample: TrainingSample, w: float) -> float:
    psi = ground_state_of(model, sample.features)
    y_hat = expectation(model.target_op, psi)
    x_hat = position(model, psi)
    return (y_hat - sample.target) ** 2 + w * float(np.sum((x_hat - sample.features) ** 2))


def loss_and_gradients(
    sym: np.ndarray, antisym: np.ndarray, X: np.ndarray, y: np.ndarray, w: float, psi: np.ndarray | None = None
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean loss over a batch and its stop-gradient gradients.

    ``sym`` / ``antisym`` are ``(C + 1, N, N)`` stacks with the target operator
    last. When ``psi`` is given it is used as the (frozen) ground states;
    otherwise they are solved for. Returns ``(loss, grad_sym, grad_antisym,
    psi)``; gradient slices are symmetric / antisymmetric, matching
    directional derivatives along (anti)symmetric unit perturbations.
    """
    mats = sym + 1j * antisym
    n = X.shape[0]
    if psi is None:
        psi, _ = batch_ground_states(_hamiltonians(mats[:-1], X))
    e = _expectations(mats, psi)
    resid_x = e[:, :-1] - X
    resid_y = e[:, -1] - y
    total = float(np.mean(resid_y**2 + w * np.sum(resid_x**2, axis=1)))
    coef = np.empty_like(e)
    coef[:, :-1] = (2.0 * w / n) * resid_x
    coef[:, -1] = (2.0 / n) * resid_y
    # d<psi|S + iA|psi> / dS = Re(psi psi^H), / dA = Im(psi psi^H)
    g = np.einsum("nk,na,nb->kab", coef, psi, psi.conj())
    return total, g.real.copy(), g.imag.copy(), psi


def mean_loss(model: QcmlModel, X, y, w: float) -> float:
    sym, anti = model.params()
    return loss_and_gradients(sym, anti, np.atleast_2d(np.asarray(X, float)), np.asarray(y, float), w)[0]


# ------------------------------------------------------------------ training


class Adam:
    """Adam over a dict of arrays; updates in place."""

    def __init__(self, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def init_params(n_features: int, dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian N(0, 1/dim) entries, then (anti)symmetrized."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(dim)
    s = rng.normal(0.0, scale, (n_features + 1, dim, dim))
    a = rng.normal(0.0, scale, (n_features + 1, dim, dim))
    return 0.5 * (s + s.transpose(0, 2, 1)), 0.5 * (a - a.transpose(0, 2, 1))


def _stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    samples = list(samples)
    if not samples:
        raise ValueError("cannot train on an empty sample set")
    counts = {s.features.shape[0] for s in samples}
    if len(counts) != 1:
        raise ValueError(f"inconsistent feature counts across samples: {sorted(counts)}")
    X = np.stack([s.features for s in samples])
    y = np.array([s.target for s in samples])
    return X, y


def fit(X: np.ndarray, y: np.ndarray, config: TrainingConfig, seed: int | None = None) -> QcmlModel:
    """Train on arrays ``X (n, C)`` and ``y (n,)``; see :func:`train`."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot train on an empty sample set")
    if y.shape != (X.shape[0],):
        raise ValueError("targets must align with feature rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    seed = config.seed if seed is None else seed
    sym, anti = init_params(X.shape[1], config.dim, seed)
    params = {"sym": sym, "antisym": anti}
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng([seed, 1])
    n = X.shape[0]
    batch = n if config.batch_size is None else min(config.batch_size, n)
    history = []
    for epoch in range(config.epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            val, gs, ga, _ = loss_and_gradients(params["sym"], params["antisym"], X[idx], y[idx], config.bias_weight)
            if not math.isfinite(val):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}; the learning rate is likely too large")
            epoch_loss += val * len(idx) / n
            opt.step(params, {"sym": gs, "antisym": ga})
            params["sym"] = 0.5 * (params["sym"] + params["sym"].transpose(0, 2, 1))
            params["antisym"] = 0.5 * (params["antisym"] - params["antisym"].transpose(0, 2, 1))
        history.append(epoch_loss)
    meta = {"seed": int(seed), "config": asdict(config), "loss_history": history}
    return QcmlModel.from_params(params["sym"], params["antisym"], meta)


def train(samples, config: TrainingConfig, seed: int | None = None) -> QcmlModel:
    """Adam training of the supervised model with the input-bias penalty.

    Deterministic for a fixed seed. With ``config.epochs == 0`` the randomly
    initialized model is returned.
    """
    X, y = _stack_samples(samples)
    return fit(X, y, config, seed)


# ------------------------------------------------------------------ ensemble


def derive_seed(global_seed: int, k: int) -> int:
    """Per-member seed: a SeedSequence hash of ``(global_seed, k)``."""
    return int(np.random.SeedSequence([int(global_seed), int(k)]).generate_state(1, dtype=np.uint32)[0])


def date_subgroups(n_dates: int, count: int) -> list[np.ndarray]:
    """Interleaved date groups: group ``g`` holds indices ``i`` with ``i % count == g``."""
    groups = [np.arange(g, n_dates, count) for g in range(count)]
    if any(g.size == 0 for g in groups):
        raise ValueError(f"{n_dates} training dates cannot fill {count} date sub-groups")
    return groups


def ensemble_plan(firm_count: int, n_dates: int, config: TrainingConfig) -> list[dict]:
    """Per-member seed, date sub-group, and firm subsample (indices).

    Firms are drawn without replacement from member-seeded randomness.
    """
    n_pick = int(math.floor(config.name_fraction * firm_count + 1e-9))
    if n_pick < 1:
        raise ValueError(f"name_fraction {config.name_fraction} of {firm_count} firms selects no firm")
    groups = date_subgroups(n_dates, config.date_subgroup_count)
    plan = []
    for k in range(config.ensemble_size):
        seed = derive_seed(config.seed, k)
        rng = np.random.default_rng(seed)
        firms = np.sort(rng.choice(firm_count, size=n_pick, replace=False))
        g = k % config.date_subgroup_count
        plan.append({"member": k, "seed": seed, "subgroup": g, "firms": firms, "dates": groups[g]})
    return plan


def train_ensemble(panel, config: TrainingConfig, train_dates=None, n_jobs: int = 1) -> list[QcmlModel]:
    """Train ``config.ensemble_size`` models on rotating date sub-groups and firm subsamples.

    Parameters
    ----------
    panel : CharacteristicPanel
        Preprocessed panel carrying a target.
    train_dates : sequence of int, optional
        Date indices eligible for training. Defaults to every date with at
        least one target value.
    n_jobs : int
        Worker threads; results do not depend on it.
    """
    if panel.target is None:
        raise ValueError("panel has no target; run build_target first")
    usable = np.isfinite(panel.target) & panel.available
    if train_dates is None:
        train_dates = np.flatnonzero(usable.any(axis=1))
    train_dates = np.asarray(train_dates, dtype=int)
    plan = ensemble_plan(len(panel.firms), len(train_dates), config)

    def member(p):
        d_idx = train_dates[p["dates"]]
        sub = usable[np.ix_(d_idx, p["firms"])]
        tt, jj = np.nonzero(sub)
        if tt.size == 0:
            raise ValueError(f"ensemble member {p['member']} has no usable training samples")
        t_abs, j_abs = d_idx[tt], p["firms"][jj]
        X = panel.characteristics[t_abs, j_abs]
        y = panel.target[t_abs, j_abs]
        model = fit(X, y, config, seed=p["seed"])
        model.meta.update(member=p["member"], subgroup=p["subgroup"], firms=[panel.firms[j] for j in p["firms"]])
        return model

    if n_jobs <= 1:
        return [member(p) for p in plan]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(member, plan))


# ---------------------------------------------------------------- checkpoints


def model_to_json(model: QcmlModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "feature_count": model.feature_count,
        "meta": model.meta,
        "feature_ops": [op.to_json() for op in model.feature_ops],
        "target_op": model.target_op.to_json(),
    }


def model_from_json(data: dict) -> QcmlModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a QCML checkpoint")
    ops = tuple(HermitianOperator.from_json(o) for o in data["feature_ops"])
    return QcmlModel(ops, HermitianOperator.from_json(data["target_op"]), dict(data.get("meta", {})))


def save_model(model: QcmlModel, path, header: dict | None = None) -> None:
    payload = model_to_json(model)
    if header:
        payload["header"] = header
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> QcmlModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
