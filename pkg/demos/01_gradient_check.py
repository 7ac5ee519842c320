"""Check the hand-written input gradient of the default victim against finite differences.

The victim is piecewise linear, so a central difference that does not cross a
ReLU kink is exact up to floating-point rounding.
"""

import numpy as np

from rangeattack import default_victim, forward, input_gradient

shape = (3, 8, 8)
net = default_victim(shape, grand_mean=120.0, seed=0)
x = np.random.default_rng(0).uniform(0, 255, size=shape)

g = input_gradient(net, x)
print(f"f(x) = {forward(net, x):.4f}, |grad| = {np.linalg.norm(g):.4f}")

h = 1e-2
for idx in [(0, 0, 0), (1, 3, 4), (2, 7, 7)]:
    e = np.zeros(shape)
    e[idx] = h
    fd = (forward(net, x + e) - forward(net, x - e)) / (2 * h)
    print(f"pixel {idx}: analytic {g[idx]: .6e}  finite difference {fd: .6e}")
