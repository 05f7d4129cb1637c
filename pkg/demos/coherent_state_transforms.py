"""Wigner and Husimi transforms of a coherent state.

Builds a coherent state, checks its Wigner function against the closed-form Gaussian,
compares the marginals of both transforms with the position and momentum densities,
and pairs the Husimi function with a test bump.

Run: python demos/coherent_state_transforms.py
"""
import numpy as np

from sclab.grid import SpatialGrid, coherent_state, momentum_density
from sclab.phase_space import Bump, TestFunction, gaussian_smooth, husimi, pair, wigner

eps = 0.1
y0, p0 = 0.3, -0.4
grid = SpatialGrid.uniform(-8.0, 8.0, 512)
psi = coherent_state(grid, eps, [y0], [p0])

W = wigner(psi)
X, P = W.x_points[:, None, 0], W.p_points[None, :, 0]
exact = np.exp(-((X - y0) ** 2 + (P - p0) ** 2) / eps) / (np.pi * eps)
print(f"Wigner vs closed form: max error {np.abs(W.values - exact).max():.2e}")

H = husimi(psi)
rho, mrho = psi.density(), momentum_density(psi)
print(f"Wigner x-marginal error  {np.abs(W.x_marginal() - rho).max():.2e}")
print(f"Wigner p-marginal error  {np.abs(W.p_marginal() - mrho).max():.2e}")
smoothed = gaussian_smooth(rho, grid.axes, eps)
print(f"Husimi x-marginal error  {np.abs(H.x_marginal() - smoothed).max():.2e}")
print(f"Husimi minimum {H.values.min():.2e} (nonnegative by construction)")

phi = TestFunction.separable(Bump([y0], 1.5), Bump([p0], 1.5))
for F in (W, H):
    res = pair(F, phi)
    print(f"{F.kind:7s} pairing {res.value:.6f}, bound {res.bound:.4f}")
