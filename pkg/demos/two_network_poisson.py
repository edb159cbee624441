"""
Mixing two networks for a 1D Poisson problem
============================================

The solution is written as u = u_h + alpha * u_l, with a cross-attention
network u_h for the oscillatory part and a small dense network u_l for the
smooth part. This script compares three choices for alpha: fixed at zero
(only u_h), learned by gradient descent, or recomputed every epoch as the
closed-form minimiser of the sampled loss.

Usage:  python demos/two_network_poisson.py [epochs]   (default 1000)
"""
import sys
import tempfile

from spectra_ca.runner.config import default_config
from spectra_ca.runner.experiments import run

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
small = dict(nu=30.0, epochs=epochs, m_base=32, K=2, d_q=16, n_heads=2, n_layers=2,
             n_interior=256, low_width=32, low_depth=2, record_every=max(epochs // 5, 1))

for alpha in ("fixed:0", "learnable", "optimal"):
    cfg = default_config("poisson1d").replace(alpha=alpha, **small)
    with tempfile.TemporaryDirectory() as out:
        record = run(cfg, out)
    print(f"alpha={alpha:10s} final rel L2 = {record.last('rel_l2'):.4g}   "
          f"final alpha = {record.last('alpha'):.4g}")
