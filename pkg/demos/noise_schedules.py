"""
Noise grids, curricula and index sampling
=========================================

Training works on a discrete grid of noise levels whose size grows during
training.  This script prints the pieces that decide which pair of levels a
training step sees.
"""

import numpy as np

from ictlab.schedules import (
    Curriculum,
    NoiseIndexSampler,
    WeightingFn,
    build_grid,
    curriculum_n,
    index_pmf,
    sample_index,
    weight,
)

# %%
# The grid interpolates linearly in ``sigma ** (1 / rho)``, which packs most
# levels near ``sigma_min``.

grid = build_grid(11)
print(np.array2string(grid.levels, precision=4))

# %%
# The exponential curriculum doubles the number of intervals at fixed
# intervals of training, giving eight plateaus for the default settings.

c = Curriculum("exponential", s0=10, s1=1280, K=400_000)
for k in range(0, 400_000, c.plateau_length):
    print(f"k={k:>6}  N={curriculum_n(c, k)}")

# %%
# Indices are drawn from a discretized lognormal over ``sigma``.  The median
# sampled level is ``exp(-1.1)``; the per-index probability peaks a little
# lower because the grid is denser there, and the largest levels are rarely
# visited.

g = build_grid(1281)
pmf = index_pmf(NoiseIndexSampler("lognormal", -1.1, 2.0), g)
top = np.argsort(pmf)[-3:][::-1]
for j in top:
    print(f"i={j + 1:>4}  sigma={g.levels[j]:.4f}  p={pmf[j]:.5f}")
print("P(sigma_i > 10) =", pmf[g.levels[:-1] > 10].sum())

draws = sample_index(NoiseIndexSampler(), g, np.random.default_rng(0), size=100_000)
print("median sampled sigma:", np.median(g.levels[draws - 1]))

# %%
# The loss weight is the inverse gap between neighbouring levels, so fine
# levels near ``sigma_min`` get the largest weights.

w = weight(WeightingFn("inverse_gap"), g, np.array([1, 100, 640, 1280]))
print(w)
