"""Hermitian operators and pure quantum states.

Operators are stored as a real symmetric part and a real antisymmetric part,
``O = sym + 1j * antisym``, so Hermiticity holds by construction and
gradients stay real-valued. States are unit-norm complex vectors with a
canonical global phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12
PHASE_TOL = 1e-12
IMAG_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def canonical_phase(amplitudes: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the first non-negligible component is real and >= 0.

    Works on a single vector ``(N,)`` or a stack ``(n, N)``.
    """
    v = np.array(amplitudes, dtype=complex)
    single = v.ndim == 1
    if single:
        v = v[None, :]
    mags = np.abs(v)
    big = mags > PHASE_TOL
    if not big.any(axis=1).all():
        raise ValueError("cannot canonicalize the phase of a zero vector")
    idx = np.argmax(big, axis=1)
    rows = np.arange(v.shape[0])
    lead = v[rows, idx]
    v = v * (np.conj(lead) / np.abs(lead))[:, None]
    # the leading component is real by definition; drop rounding residue
    v[rows, idx] = np.abs(lead)
    return v[0] if single else v


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """N x N Hermitian operator ``sym + i * antisym``.

    Inputs are projected onto their symmetric / antisymmetric parts, so any
    real square matrices are accepted.
    """

    sym: np.ndarray
    antisym: np.ndarray

    def __init__(self, sym, antisym=None):
        s = np.array(sym, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
            raise ValueError(f"sym must be a non-empty square matrix, got shape {s.shape}")
        a = np.zeros_like(s) if antisym is None else np.array(antisym, dtype=float)
        if a.shape != s.shape:
            raise ValueError(f"antisym shape {a.shape} does not match sym shape {s.shape}")
        object.__setattr__(self, "sym", _frozen(0.5 * (s + s.T)))
        object.__setattr__(self, "antisym", _frozen(0.5 * (a - a.T)))

    @property
    def dim(self) -> int:
        return self.sym.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """The realized complex matrix."""
        return self.sym + 1j * self.antisym

    @classmethod
    def from_matrix(cls, m) -> HermitianOperator:
        """Hermitian part of a complex square matrix."""
        m = np.asarray(m, dtype=complex)
        return cls(m.real, m.imag)

    @classmethod
    def identity(cls, n: int) -> HermitianOperator:
        return cls(np.eye(n))

    @classmethod
    def zeros(cls, n: int) -> HermitianOperator:
        return cls(np.zeros((n, n)))

    @classmethod
    def diagonal(cls, values) -> HermitianOperator:
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, scale: float = 1.0) -> HermitianOperator:
        return cls(rng.normal(0.0, scale, (n, n)), rng.normal(0.0, scale, (n, n)))

    def __add__(self, other: HermitianOperator) -> HermitianOperator:
        _check_dims(self.dim, other.dim)
        return HermitianOperator(self.sym + other.sym, self.antisym + other.antisym)

    def __sub__(self, other: HermitianOperator) -> HermitianOperator:
        _check_dims(self.dim, other.dim)
        return HermitianOperator(self.sym - other.sym, self.antisym - other.antisym)

    def __mul__(self, k: float) -> HermitianOperator:
        k = float(k)
        return HermitianOperator(k * self.sym, k * self.antisym)

    __rmul__ = __mul__

    def square(self) -> HermitianOperator:
        m = self.matrix
        return HermitianOperator.from_matrix(m @ m)

    def to_json(self) -> list:
        """Nested ``[re, im]`` pairs, row-major."""
        return [
            [[float(self.sym[a, b]), float(self.antisym[a, b])] for b in range(self.dim)]
            for a in range(self.dim)
        ]

    @classmethod
    def from_json(cls, data) -> HermitianOperator:
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError("operator must be an N x N array of [re, im] pairs")
        return cls(arr[..., 0], arr[..., 1])


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Unit-norm complex vector with canonical global phase.

    ``normalize=True`` rescales the input; otherwise the norm must already be
    1 within ``NORM_TOL``.
    """

    amplitudes: np.ndarray

    def __init__(self, amplitudes, normalize: bool = False):
        v = np.array(amplitudes, dtype=complex).reshape(-1)
        if v.size < 1:
            raise ValueError("state must have at least one component")
        norm = np.linalg.norm(v)
        if normalize:
            if norm == 0.0:
                raise ValueError("cannot normalize the zero vector")
            v = v / norm
        elif abs(norm * norm - 1.0) > NORM_TOL:
            raise ValueError(f"state has squared norm {norm * norm!r}, expected 1")
        object.__setattr__(self, "amplitudes", _frozen(canonical_phase(v)))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @classmethod
    def basis(cls, n: int, k: int) -> QuantumState:
        v = np.zeros(n, dtype=complex)
        v[k] = 1.0
        return cls(v)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> QuantumState:
        return cls(rng.normal(size=n) + 1j * rng.normal(size=n), normalize=True)

    def to_json(self) -> list:
        return [[float(z.real), float(z.imag)] for z in self.amplitudes]

    @classmethod
    def from_json(cls, data) -> QuantumState:
        arr = np.asarray(data, dtype=float)
        return cls(arr[:, 0] + 1j * arr[:, 1])


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise ValueError(f"dimension mismatch: {a} != {b}")


def _amplitudes(state) -> np.ndarray:
    if isinstance(state, QuantumState):
        return state.amplitudes
    return np.asarray(state, dtype=complex)


def expectation(op: HermitianOperator, state) -> float:
    """Real expectation value ``<psi|O|psi>``."""
    v = _amplitudes(state)
    _check_dims(op.dim, v.shape[0])
    val = np.vdot(v, op.matrix @ v)
    scale = max(1.0, float(np.abs(op.matrix).max()))
    if abs(val.imag) > IMAG_TOL * scale:
        raise ArithmeticError(f"expectation has imaginary residual {val.imag!r}")
    return float(val.real)


def ground_state(op: HermitianOperator) -> tuple[QuantumState, float]:
    """Eigenvector of the lowest eigenvalue, and that eigenvalue.

    Dense Hermitian eigendecomposition; for degenerate minima the vector is
    whichever one LAPACK returns.
    """
    evals, evecs = np.linalg.eigh(op.matrix)
    return QuantumState(evecs[:, 0], normalize=True), float(evals[0])


def batch_ground_states(matrices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ground states of a stack of Hermitian matrices ``(n, N, N)``.

    Returns phase-canonical states ``(n, N)`` and lowest eigenvalues ``(n,)``.
    """
    evals, evecs = np.linalg.eigh(matrices)
    psi = evecs[..., :, 0]
    psi = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
    return canonical_phase(psi.reshape(-1, psi.shape[-1])).reshape(psi.shape), evals[..., 0]


def fidelity(a, b) -> float:
    """``|<a|b>|^2`` for pure states (phase-invariant)."""
    va, vb = _amplitudes(a), _amplitudes(b)
    _check_dims(va.shape[0], vb.shape[0])
    return float(min(1.0, abs(np.vdot(va, vb)) ** 2))
