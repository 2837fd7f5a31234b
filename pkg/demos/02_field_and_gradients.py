"""
The 4D field and its gradients
==============================

F(p, t) is a dot product between decoder weights at p and a row of the
temporal basis.  The first basis column is fixed at one, so the first
weight is the static signed distance.  Training runs reverse-mode through
basis, decoder and grid by hand; this demo checks that against finite
differences on a one-voxel model.
"""

import numpy as np

from tsdf4d import gradcheck
from tsdf4d.basis import init_dct
from tsdf4d.field import numerical_gradient

# DCT initialisation of the temporal basis: columns are orthogonal.
basis = init_dct(6, 4)
print(np.round(basis.values, 3))
print("Gram matrix:\n", np.round(basis.values.T @ basis.values, 6))

# A miniature model: two levels, one finest voxel, three frames.
model = gradcheck.miniature_model(frames=3, seed=1)
p = np.array([[0.3, 0.6, 0.5]])
w = model.decode(p)[0]
for t in range(3):
    print(f"t={t}  F={model.query(p, t)[0]:+.5f}  static + dynamic = "
          f"{w[0]:+.5f} + {w[1:] @ model.basis.values[t, 1:]:+.5f}")

# The spatial gradient is a six-probe central difference.
print("numerical gradient:", numerical_gradient(model, p[0], 0, 0.05))

# End-to-end gradient check of the full training objective.
model, batch = gradcheck.find_smooth_case()
res = gradcheck.check_gradients(model, batch, eps=0.05)
print(f"{res.parameters} parameters, max relative error per group:")
for group, err in res.max_rel_error.items():
    print(f"  {group:6s} {err:.2e}")
