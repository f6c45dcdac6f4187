import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvl.hermitian import (
    HermitianOperator,
    QuantumState,
    batch_ground_states,
    canonical_phase,
    expectation,
    fidelity,
    ground_state,
)

from oracles import expectation_loop, jacobi_eigenvalues

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=10)


def is_hermitian(m):
    return np.array_equal(m, m.conj().T)


class TestOperator:
    def test_parts_are_symmetrized(self):
        rng = np.random.default_rng(0)
        op = HermitianOperator(rng.normal(size=(5, 5)), rng.normal(size=(5, 5)))
        assert np.array_equal(op.sym, op.sym.T)
        assert np.array_equal(op.antisym, -op.antisym.T)
        assert is_hermitian(op.matrix)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            HermitianOperator(np.zeros((2, 3)))

    def test_immutable(self):
        op = HermitianOperator.identity(3)
        with pytest.raises(ValueError):
            op.sym[0, 0] = 2.0

    @given(seeds, dims, st.floats(-10, 10))
    @settings(max_examples=50, deadline=None)
    def test_closure(self, seed, n, k):
        rng = np.random.default_rng(seed)
        a = HermitianOperator.random(n, rng)
        b = HermitianOperator.random(n, rng)
        for op in (a + b, a - b, k * a, a * k, a.square()):
            assert is_hermitian(op.matrix)

    def test_square_matches_matrix_product(self):
        rng = np.random.default_rng(1)
        a = HermitianOperator.random(4, rng)
        assert np.allclose(a.square().matrix, a.matrix @ a.matrix, atol=1e-14)

    def test_json_round_trip_is_exact(self):
        op = HermitianOperator.random(6, np.random.default_rng(2))
        back = HermitianOperator.from_json(op.to_json())
        assert np.array_equal(back.sym, op.sym) and np.array_equal(back.antisym, op.antisym)


class TestState:
    def test_norm_enforced(self):
        with pytest.raises(ValueError):
            QuantumState([1.0, 1.0])
        s = QuantumState([1.0, 1.0], normalize=True)
        assert abs(np.vdot(s.amplitudes, s.amplitudes) - 1) < 1e-12

    def test_phase_canonical(self):
        s = QuantumState(np.array([0.0, 1j, 1.0]) / math.sqrt(2))
        assert s.amplitudes[0] == 0
        assert s.amplitudes[1].imag == 0 and s.amplitudes[1].real > 0

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            QuantumState([0, 0], normalize=True)

    def test_batch_canonical_phase(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(7, 4)) + 1j * rng.normal(size=(7, 4))
        c = canonical_phase(v)
        assert np.all(c[:, 0].imag == 0) and np.all(c[:, 0].real >= 0)
        assert np.allclose(np.abs(c), np.abs(v))

    def test_json_round_trip(self):
        s = QuantumState.random(5, np.random.default_rng(4))
        assert np.array_equal(QuantumState.from_json(s.to_json()).amplitudes, s.amplitudes)


class TestExpectation:
    def test_identity(self):
        s = QuantumState.random(5, np.random.default_rng(5))
        assert expectation(HermitianOperator.identity(5), s) == pytest.approx(1.0, abs=1e-12)

    def test_eigenstate(self):
        op = HermitianOperator.diagonal([0, 0, 1, 0])
        assert expectation(op, QuantumState.basis(4, 2)) == 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_triple_loop(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        op = HermitianOperator.random(n, rng)
        s = QuantumState.random(n, rng)
        ref = expectation_loop(op.matrix.tolist(), s.amplitudes.tolist())
        assert abs(ref.imag) < 1e-10
        assert expectation(op, s) == pytest.approx(ref.real, abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            expectation(HermitianOperator.identity(3), QuantumState.basis(2, 0))


class TestGroundState:
    def test_diagonal(self):
        s, e = ground_state(HermitianOperator.diagonal([3, 1, 2]))
        assert e == 1.0
        assert np.allclose(s.amplitudes, [0, 1, 0])

    def test_degenerate_identity(self):
        op = HermitianOperator.identity(2)
        s, e = ground_state(op)
        assert e == pytest.approx(1.0)
        assert np.linalg.norm(op.matrix @ s.amplitudes - e * s.amplitudes) < 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_against_jacobi(self, seed):
        rng = np.random.default_rng(100 + seed)
        op = HermitianOperator.random(6, rng)
        s, e = ground_state(op)
        assert e == pytest.approx(jacobi_eigenvalues(op.matrix)[0], abs=1e-8)
        norm = np.linalg.norm(op.matrix, 2)
        assert np.linalg.norm(op.matrix @ s.amplitudes - e * s.amplitudes) <= 1e-8 * max(1.0, norm)

    @given(seeds, st.integers(1, 8))
    @settings(max_examples=30, deadline=None)
    def test_variational_and_consistency(self, seed, n):
        rng = np.random.default_rng(seed)
        op = HermitianOperator.random(n, rng)
        s, e = ground_state(op)
        assert expectation(op, s) == pytest.approx(e, abs=1e-8)
        for _ in range(100):
            assert e <= expectation(op, QuantumState.random(n, rng)) + 1e-10

    def test_batch_matches_single(self):
        rng = np.random.default_rng(6)
        ops = [HermitianOperator.random(5, rng) for _ in range(8)]
        states, energies = batch_ground_states(np.stack([o.matrix for o in ops]))
        for op, psi, e in zip(ops, states, energies):
            s, e1 = ground_state(op)
            assert e == pytest.approx(e1, abs=1e-12)
            assert fidelity(s, psi) == pytest.approx(1.0, abs=1e-10)


class TestFidelity:
    def test_identical(self):
        s = QuantumState.random(4, np.random.default_rng(7))
        assert fidelity(s, s) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert fidelity(QuantumState.basis(3, 0), QuantumState.basis(3, 1)) == 0.0

    def test_superposition(self):
        plus = QuantumState([1, 1], normalize=True)
        assert fidelity(QuantumState.basis(2, 0), plus) == pytest.approx(0.5, abs=1e-15)

    @given(seeds, st.integers(1, 8), st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_and_phase_invariance(self, seed, n, t1, t2):
        rng = np.random.default_rng(seed)
        a = QuantumState.random(n, rng).amplitudes
        b = QuantumState.random(n, rng).amplitudes
        f = fidelity(a, b)
        assert 0.0 <= f <= 1.0
        assert f == pytest.approx(fidelity(b, a), abs=1e-12)
        assert f == pytest.approx(fidelity(cmath.exp(1j * t1) * a, cmath.exp(1j * t2) * b), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fidelity(QuantumState.basis(2, 0), QuantumState.basis(3, 0))
