"""
Orientation histograms from steerable features
===============================================

A walk from Fourier coefficients on the circle to per-pixel orientation
histograms, and a numerical look at how they move when the image turns.
Run with ``python3 notebooks/01_orientation_histograms.py``.
"""

# %%
# A band-limited signal on the circle is a coefficient vector
# [a0, a1, b1, a2, b2, ...].  Sampling it at the N angles of C_N is one
# matrix product; with enough samples the product can be undone.
import math

import numpy as np
from scipy.ndimage import gaussian_filter

from histoport import tensor as T
from histoport.eoh import generate_eoh_tensor, subgroup_alignment, transform_eoh
from histoport.groups import RepSpec, discretization_matrix, fit_coefficients
from histoport.steerable import ELU, Conv, NetworkSpec, assemble_network

q = discretization_matrix(12, 3)
v = np.array([0.5, 1.0, 0.0, 0.0, 0.3, 0.0, 0.0])
samples = q @ v
print("samples at the 12 angles:", np.round(samples, 3))
print("recovered coefficients:  ", np.round(fit_coefficients(samples, 12, 3), 12))

# %%
# A small steerable network maps a heightmap to one such coefficient vector
# per pixel.  A softmax over the sampled angles turns it into a histogram.
rng = np.random.default_rng(0)
net = assemble_network(NetworkSpec(RepSpec.trivial(), 1, [
    Conv(RepSpec.irrep_sum(3), 2), ELU(), Conv(RepSpec.irrep_sum(3), 1),
]), rng)
img = gaussian_filter(rng.normal(size=(1, 32, 32)), (0, 2, 2))
with T.no_grad():
    eoh = generate_eoh_tensor(net.apply(T.Tensor(img)), 36).data
print("EOH shape", eoh.shape, "bins sum to", float(eoh.sum(0).mean()))

# %%
# Turning the image by a quarter turn turns the map and shifts every
# histogram by 36 / 4 = 9 bins.  Both operations are index permutations
# here, so the match holds to rounding.
with T.no_grad():
    turned = generate_eoh_tensor(net.apply(T.Tensor(np.rot90(img, 1, axes=(1, 2)).copy())), 36).data
print("quarter-turn residual:", np.abs(turned - transform_eoh(eoh, 9)).max())

# %%
# Subgroup alignment builds the N rotated copies of a template used by
# the place model, keeping M = 12 of the 36 bins in each copy.
stack = subgroup_alignment(eoh[:, 10:21, 10:21], 12)
print("alignment stack:", stack.shape)
print("row 0 keeps every third bin:", np.allclose(stack[0], eoh[::3, 10:21, 10:21]))
