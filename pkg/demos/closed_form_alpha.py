"""
The closed-form mixing factor
=============================

For a linear operator the sampled loss is a quadratic in alpha, so its
minimiser has a closed form. Here it is compared with a brute-force scan.
"""
import numpy as np

from spectra_ca.attention_net import DenseNet
from spectra_ca.pde_solvers import Box, PdeProblem, alpha_optimal, sampled_loss_in_alpha

problem = PdeProblem(Box(1), lambda x: np.pi ** 2 * np.sin(np.pi * x[:, 0]),
                     lambda x: np.sin(np.pi * x[:, 0]), gamma=5.0)
rng = np.random.default_rng(0)
xr = rng.uniform(-1, 1, (128, 1))
xb = np.array([[-1.0], [1.0]])
u_h = DenseNet(1, width=16, depth=2, seed=1, prefix="high.")
u_l = DenseNet(1, width=16, depth=2, seed=2, prefix="low.")

alpha = alpha_optimal(problem, u_h.scalar, u_l.scalar, xr, xb)
loss = sampled_loss_in_alpha(problem, u_h.scalar, u_l.scalar, xr, xb)
grid = np.linspace(-10, 10, 200001)
values = loss(grid)
print(f"closed form: alpha = {alpha:.6f}")
print(f"scan:        alpha = {grid[np.argmin(values)]:.6f}  (step 1e-4)")
print(f"loss at the closed form {loss(np.array([alpha]))[0]:.6g}, scan minimum {values.min():.6g}")
