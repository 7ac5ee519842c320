"""On a single affine victim the best perturbation has a closed form.

f(X + d) = f(X) + g.d, so the smallest l2 step that reaches the nearer bound
moves along g by |bound - f(X)| / |g|. The attack should land close to that,
paying at most sqrt(n) extra for integer rounding.
"""

import math

import numpy as np

from rangeattack import PRESETS, Affine, AttackConfig, PreprocessSpec, VictimNetwork, attack, forward, input_gradient

target = PRESETS["make-healthy"]
rng = np.random.default_rng(0)
shape = (3, 6, 6)
n = int(np.prod(shape))
X = rng.integers(40, 216, size=shape, dtype=np.uint8)
w = rng.normal(size=(1, n)) * 0.05
spec = PreprocessSpec(128.0, True)

net = VictimNetwork(shape, spec, (Affine(w, np.zeros(1)),))
net = VictimNetwork(shape, spec, (Affine(w, np.array([target.upper + 6.0 - forward(net, X)])),))
g = input_gradient(net, X)
gg = float(g.ravel() @ g.ravel())

res = attack(net, X, target, AttackConfig(step_size=0.05 / (2 * gg)))
minimal = (res.f_before - target.upper) / math.sqrt(gg)
print(f"f: {res.f_before:.3f} -> {res.f_after:.3f} in {res.iterations_used} iterations (success={res.success})")
print(f"attack l2 {res.norms[1]:.3f}, closed-form minimum {minimal:.3f}, allowed {minimal + math.sqrt(n):.3f}")
