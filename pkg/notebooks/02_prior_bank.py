"""
The Gaussian prior bank
=======================

Sixteen anisotropic Gaussians on a 4x4 grid are rendered onto the feature
grid.  Their widths are trainable, and the tape's gradients agree with
central differences.
"""

import numpy as np

from scanpath_forge.autodiff import Tape, mul, numerical_grad, sum_
from scanpath_forge.priors import init_bank, render_bank

bank = init_bank(16)
maps = render_bank(bank, 8, 8).data
print("bank maps", maps.shape)
print("prior 5 on the 8x8 grid:")
print(np.round(maps[5], 2))

# a random linear readout of the maps, differentiated both ways
proj = np.random.default_rng(0).normal(size=maps.shape)
with Tape() as tape:
    loss = sum_(mul(render_bank(bank, 8, 8), proj))
tape.backward(loss)

p = bank.named_parameters()["priors.5.log_sigma_x"]
fd = numerical_grad(lambda: float((render_bank(bank, 8, 8).data * proj).sum()), p.data.reshape(1), step=1e-6)
print("d loss / d log_sigma_x: tape %.8f  finite differences %.8f" % (float(p.grad), fd[0]))
