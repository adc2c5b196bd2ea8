"""
Gradients on a tape
===================

Every model in the package is built from a small reverse-mode tape.  This
script records a two-layer network, pulls gradients back through it and
compares one of them against central differences.
"""
import numpy as np

from fieldmanifold import autodiff as ad
from fieldmanifold.autodiff import Tape

rng = np.random.default_rng(0)
x = rng.normal(size=(5, 3))
w1, w2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 1))


def loss_of(w1_value):
    # float64 tape so finite differences are meaningful
    tape = Tape(np.float64)
    a = tape.leaf(w1_value, "w1")
    b = tape.leaf(w2, "w2")
    h = ad.sin(tape.const(x) @ a)
    return tape, a, ad.mean(ad.square(h @ b))


tape, a, loss = loss_of(w1)
grads = tape.backward(loss)
print("loss", float(loss.value))
print("dL/dw1 shape", grads[a].shape)

# nudge a single weight both ways
h = 1e-6
bump = np.zeros_like(w1)
bump[1, 2] = h
numeric = (float(loss_of(w1 + bump)[2].value) - float(loss_of(w1 - bump)[2].value)) / (2 * h)
print(f"tape {grads[a][1, 2]:.8f}   finite difference {numeric:.8f}")
