"""Brownian band-exit embedding: the eps-lattice path shadows the Brownian
path within eps per component, and band-exit times average eps^2.

Run:  python3 demos/brownian_embedding.py
"""

import math

import numpy as np

from polymermc import discretize_brownian_path

rng = np.random.default_rng(0)

print("sup-distance of the embedded path (bound: eps per component):")
for eps in (0.4, 0.2, 0.1):
    tr = discretize_brownian_path(d=2, t=1.0, eps=eps, h=eps**2 / 100, rng=rng)
    levels = tr.levels_on_fine_grid()
    per_comp = np.abs(tr.fine_path - levels * eps).max()
    print(f"  eps={eps:<4}: jumps={tr.embedded.n_jumps:>3}  "
          f"max per-component distance {per_comp:.4f}  "
          f"(Euclidean bound eps*sqrt(2) = {eps * math.sqrt(2):.4f})")

eps, h = 0.1, 0.1**2 / 1000
firsts = []
for _ in range(500):
    tr = discretize_brownian_path(d=1, t=6 * eps**2, eps=eps, h=h, rng=rng)
    taus = tr.exit_times[0]
    firsts.append(taus[0] if taus.size else 6 * eps**2)
firsts = np.asarray(firsts)
print(f"\nmean first exit time of (-eps, eps): {firsts.mean():.5f} "
      f"(theory eps^2 = {eps**2}) over {firsts.size} traces")
