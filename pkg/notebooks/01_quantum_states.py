"""
Firm characteristics as quantum states
======================================

A QCML model maps a characteristic vector x to the ground state of the
error Hamiltonian H(x) = sum_c (A_c - x_c I)^2. Nearby inputs give nearly
parallel states; the Bures distance between states then replaces the plain
Euclidean distance between vectors.
"""

# %%
import numpy as np

from cvl.hermitian import HermitianOperator, QuantumState, fidelity, ground_state
from cvl.metrics import bures_distance, euclidean_distance, geodesic_distance
from cvl.qcml import TrainingConfig, fit, forecast, ground_state_of, position

rng = np.random.default_rng(7)

# %% [markdown]
# Operators are stored as a real symmetric part plus a real antisymmetric
# part, so Hermiticity holds by construction.

# %%
op = HermitianOperator.random(4, rng)
psi, e0 = ground_state(op)
print("ground energy", round(e0, 6))
print("residual", np.linalg.norm(op.matrix @ psi.amplitudes - e0 * psi.amplitudes))
print("first amplitude (phase fixed real, >= 0):", psi.amplitudes[0])

# %%
plus = QuantumState([1, 1], normalize=True)
print("fidelity |0> vs |+>:", fidelity(QuantumState.basis(2, 0), plus))
print("Bures, geodesic:", bures_distance(QuantumState.basis(2, 0), plus), geodesic_distance(QuantumState.basis(2, 0), plus))

# %% [markdown]
# Toy supervised problem: two characteristics, target depends on which
# quadrant the point sits in. The fitted model reproduces the inputs through
# its position operators and the target through the ground-state expectation
# of B.

# %%
X = rng.normal(size=(400, 2))
y = np.sign(X[:, 0]) * np.sign(X[:, 1])
model = fit(X, y, TrainingConfig(dim=6, epochs=200, seed=1))
hist = model.meta["loss_history"]
print(f"loss {hist[0]:.3f} -> {hist[-1]:.3f}")

# %%
pred = np.array([forecast(model, x) for x in X])
print("in-sample correlation of forecast with target:", np.corrcoef(pred, y)[0, 1].round(3))
x0 = np.array([0.8, 0.9])
print("position of", x0, "->", position(model, ground_state_of(model, x0)).round(3))

# %% [markdown]
# Distances between ground states for a pair in one quadrant and a pair
# straddling an axis, next to the raw Euclidean distances.

# %%
pairs = {
    "same quadrant": (np.array([0.3, 0.3]), np.array([1.2, 1.0])),
    "across the axis": (np.array([0.3, 0.3]), np.array([-0.3, 0.3])),
}
for name, (a, b) in pairs.items():
    d_e = euclidean_distance(a, b)
    d_q = bures_distance(ground_state_of(model, a), ground_state_of(model, b))
    print(f"{name:16s} euclidean {d_e:.3f}  bures {d_q:.3f}")
