"""
Reconstruction and segmentation metrics
=======================================

Accuracy is the mean distance from predicted surface samples to ground
truth, completion the other way round, Chamfer-L1 their mean.  AA is the
geometric mean of static and dynamic accuracy.
"""

import numpy as np

from tsdf4d.evaluation import aa_from, recon_metrics, seg_metrics

rng = np.random.default_rng(0)
g = np.arange(0, 2, 0.02)
yy, zz = np.meshgrid(g, g)
wall = np.column_stack([np.zeros(yy.size), yy.ravel(), zz.ravel()])

# A reconstruction that is 1 cm off along the wall normal.
rep = recon_metrics(wall + [0.01, 0, 0], wall, threshold_cm=2.0)
print(rep.to_text())

# Noise inflates both directions.
noisy = wall + rng.normal(0, 0.02, wall.shape)
print(recon_metrics(noisy, wall, threshold_cm=2.0).to_text())

# AA from a static and a dynamic accuracy.
print(f"AA(98.99, 92.37) = {aa_from(98.99, 92.37):.4f}")

gt = np.array([0] * 90 + [1] * 10)
pred = gt.copy()
pred[:3] = 1      # three wall points removed by mistake
pred[-2:] = 0     # two sphere points kept
print(seg_metrics(pred, gt).to_text())
