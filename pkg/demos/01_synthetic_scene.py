"""Build a small synthetic scene, extract endmembers with VCA, score them.

Run with ``python3 demos/01_synthetic_scene.py``.
"""

import numpy as np

from smile import metrics
from smile.datagen import DatasetSpec, build_dataset
from smile.lmm import constraint_report, mix
from smile.vca import vca_extract

# a 32 x 32 scene, 50 bands, 4 materials, one pure pixel per material
spec = DatasetSpec(height=32, width=32, channels=50, p=4, snr_db=30.0, seed=3,
                   pure_pixel_injection=True)
d = build_dataset(spec)
cube, a, e = d["cube"], d["truth_abundance"], d["truth_endmembers"]
print("cube", cube.shape, "abundance", a.shape, "endmembers", e.shape)

# abundances live on the simplex
print("constraints:", constraint_report(a))

# noise was scaled to hit the requested SNR
print("realized SNR %.2f dB" % metrics.snr_realized(mix(a, e), cube))

# VCA finds the vertices of the data simplex; order is arbitrary, so align first
est = vca_extract(cube, 4, seed=0)
perm = metrics.align_permutation(est, e)
mean, per = metrics.sad_mean(est[perm], e)
print("SAD per endmember (deg):", np.round(per, 3), "mean %.3f" % mean)
