"""Reverse-mode autodiff on the f64 tensor core.

Builds a small computation, backpropagates through it, and compares the
gradients with central finite differences.
"""

import numpy as np

from iclct import autodiff as ad
from iclct.autodiff import Tape, Tensor, backward

rng = np.random.default_rng(0)

x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
gamma = Tensor(np.ones(3), requires_grad=True)
beta = Tensor(np.zeros(3), requires_grad=True)

with Tape() as tape:
    h = ad.gelu(ad.matmul(x, w))
    h = ad.layer_norm(h, gamma, beta)
    loss = ad.tmean(ad.mul(h, h))
    backward(tape, loss)

print(f"loss = {loss.item():.6f}")
print(f"grad wrt x, first row: {x.grad[0]}")

# finite-difference spot check on one weight entry
def loss_value():
    z = ad.layer_norm(ad.gelu(ad.matmul(x, w)), gamma, beta)
    return ad.tmean(ad.mul(z, z)).item()

h_step = 1e-5
orig = w.data[1, 2]
w.data[1, 2] = orig + h_step
up = loss_value()
w.data[1, 2] = orig - h_step
dn = loss_value()
w.data[1, 2] = orig

print(f"w[1,2]: reverse-mode {w.grad[1, 2]:.8f}  finite-diff {(up - dn) / (2 * h_step):.8f}")
