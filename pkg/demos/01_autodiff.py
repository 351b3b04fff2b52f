"""Autodiff tour: build a computation, run backward, audit it numerically.

The tensor core is deliberately small — float64 NumPy arrays, a handful of
ops, reverse-mode differentiation — because at desk scale exactness beats
speed: every gradient can be compared against central finite differences
at rel-err < 1e-5, which is what the test suite does for every op.
"""
import numpy as np

from desklm import tensor as T
from desklm.tensor import RngState


def banner(title):
    print(f"\n=== {title} " + "=" * max(0, 60 - len(title)))


def rel_error(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / denom


banner("A tiny computation graph")
rng = np.random.default_rng(0)
x = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
w = T.Tensor(rng.standard_normal((4, 2)) * 0.5, requires_grad=True)
g = T.Tensor(np.ones(2), requires_grad=True)

h = T.swish(T.matmul(x, w))          # [3, 2]
y = T.rms_norm(h, g)                 # normalized activations
loss = T.mean_all(y)
print(f"forward: x{x.shape} @ w{w.shape} -> swish -> rms_norm -> mean")
print(f"loss = {loss.item():.6f}")

loss.backward()
print(f"dL/dw:\n{w.grad.round(4)}")

banner("Backward vs central finite differences")
for name, t in [("x", x), ("w", w), ("gain", g)]:
    numeric = np.zeros_like(t.data)
    it = np.nditer(t.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = t.data[i]
        t.data[i] = orig + 1e-5
        up = T.mean_all(T.rms_norm(T.swish(T.matmul(x, w)), g)).item()
        t.data[i] = orig - 1e-5
        down = T.mean_all(T.rms_norm(T.swish(T.matmul(x, w)), g)).item()
        t.data[i] = orig
        numeric[i] = (up - down) / 2e-5
    print(f"  {name:5s} rel err vs finite differences: {rel_error(t.grad, numeric):.2e}")

banner("The loss that trains the models")
logits = T.Tensor(rng.standard_normal((5, 11)) * 2, requires_grad=True)
targets = np.array([0, 3, 10, 7, 1])
mask = np.array([1.0, 1.0, 1.0, 1.0, 0.0])   # last position is padding
ce = T.softmax_cross_entropy(logits, targets, mask)
ce.backward()
print(f"masked cross-entropy over 4 real positions: {ce.item():.6f}")
print(f"gradient at the masked row is exactly zero: "
      f"{bool(np.all(logits.grad[4] == 0.0))}")

banner("Deterministic initialization")
a = T.trunc_normal((3, 3), mean=0.0, std=0.02, rng=RngState(7))
b = T.trunc_normal((3, 3), mean=0.0, std=0.02, rng=RngState(7))
print(f"same seed, same draw: {bool(np.array_equal(a, b))}")
print(f"all samples inside 2 standard deviations: "
      f"{bool(np.all(np.abs(a) <= 2 * 0.02))}")
