"""The tape engine in isolation.

Builds the gate computation by hand, differentiates it, and checks the
result against central finite differences.
"""

import numpy as np

from methgraph.autodiff import Tape, const, param

rng = np.random.default_rng(3)

W1 = const(rng.normal(size=(16, 8)) * 0.4)
b1 = const(np.zeros(16))
W2 = const(rng.normal(size=(1, 16)) * 0.4)
b2 = const(np.zeros(1))

s = param(rng.uniform(0, 1, (1, 8)))  # one site's sequence features

tape = Tape()
hidden = tape.relu(tape.linear(s, W1, b1))
gate = tape.sigmoid(tape.linear(hidden, W2, b2))
modulated = tape.scalar_mul(gate, 0.83)  # a beta value of 0.83
loss = tape.sum(modulated)
tape.backward(loss)

print(f"gate value g = {gate.data[0, 0]:.6f} (always inside (0, 1))")
print(f"modulated beta = {modulated.data[0, 0]:.6f}\n")

print("analytic dg/ds vs central finite differences:")
h = 1e-6
for k in range(8):
    orig = s.data[0, k]
    s.data[0, k] = orig + h
    t = Tape(recording=False)
    up = t.scalar_mul(t.sigmoid(t.linear(t.relu(t.linear(s, W1, b1)), W2, b2)), 0.83)
    s.data[0, k] = orig - h
    t = Tape(recording=False)
    down = t.scalar_mul(t.sigmoid(t.linear(t.relu(t.linear(s, W1, b1)), W2, b2)), 0.83)
    s.data[0, k] = orig
    fd = (float(up.data) - float(down.data)) / (2 * h)
    print(f"  s[{k}]: analytic {s.grad[0, k]:+.8f}   fd {fd:+.8f}")
