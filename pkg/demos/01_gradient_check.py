"""Spot-check the autodiff engine against finite differences.

The whole package rides on these gradients, so this demo recomputes a few
of them the slow way: nudge one entry, re-run the forward pass, difference
the losses. Run from the repo root:

    python3 demos/01_gradient_check.py
"""

import numpy as np

from squeezekit.tensor import Tensor, gelu, layer_norm, matmul, mul, softmax, tsum


def fd(build, x, i, h=1e-5):
    flat = x.reshape(-1)
    keep = flat[i]
    flat[i] = keep + h
    up = build().item()
    flat[i] = keep - h
    dn = build().item()
    flat[i] = keep
    return (up - dn) / (2.0 * h)


rng = np.random.default_rng(0)

# a small composite expression touching several op kinds
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
gain = Tensor(np.ones(4), requires_grad=True)
bias = Tensor(np.zeros(4), requires_grad=True)
probe = Tensor(rng.normal(size=(3, 4)))


def loss():
    return tsum(mul(softmax(layer_norm(gelu(matmul(x, w)), gain, bias)), probe))


loss().backward()

print("composite expression: softmax(layer_norm(gelu(x @ w))) . probe")
print(f"{'leaf':>6} {'entry':>6} {'autodiff':>12} {'finite diff':>12} {'abs gap':>10}")
for name, leaf in (("x", x), ("w", w), ("gain", gain), ("bias", bias)):
    for i in rng.choice(leaf.data.size, size=3, replace=False):
        a = leaf.grad.reshape(-1)[i]
        n = fd(loss, leaf.data, int(i))
        print(f"{name:>6} {int(i):>6} {a:>12.6f} {n:>12.6f} {abs(a - n):>10.2e}")

# the product chain every squeezed weight goes through
lmap = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
theta = Tensor(rng.normal(size=(6, 5)))  # frozen donor weight
rmap = Tensor(rng.normal(size=(5, 2)), requires_grad=True)


def mapped():
    return tsum(matmul(matmul(lmap, theta), rmap))


mapped().backward()
print("\ntwo-sided map: sum(L @ W @ R), W frozen")
worst = 0.0
for name, leaf in (("L", lmap), ("R", rmap)):
    for i in range(leaf.data.size):
        gap = abs(leaf.grad.reshape(-1)[i] - fd(mapped, leaf.data, i))
        worst = max(worst, gap)
print(f"checked every entry of L and R: worst abs gap {worst:.2e}")
print("W stays frozen:", "no gradient" if theta.grad is None else "LEAKED")
