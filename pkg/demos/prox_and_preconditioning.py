"""Weighted proximal steps onto an ellipsoid.

Walks through the prox operator used by every 3P-SPIDER update: the
point in {s : s' Omega s <= r} closest to a target in the metric
of a preconditioner B.
"""
import numpy as np

from spider3p import EllipsoidIndicator, weighted_prox

rng = np.random.default_rng(0)

# a random SPD shape for the constraint set
A = rng.standard_normal((3, 3))
Omega = A @ A.T + 0.5 * np.eye(3)
g = EllipsoidIndicator(Omega, radius=1.0)

# a point well outside the set
s = 4 * rng.standard_normal(3)
print("quad(s) =", g.quad(s), "(outside when > 1)")

# when B is proportional to Omega the prox is a radial rescaling
p_radial = weighted_prox(Omega, 1.0, g, s)
print("B = Omega:", p_radial, "quad =", g.quad(p_radial))
print("radial projection:", g.radial_projection(s))

# a different metric moves the solution along the boundary
B = np.diag([1.0, 10.0, 0.1])
p_B = weighted_prox(B, 1.0, g, s)
print("B = diag(1, 10, 0.1):", p_B, "quad =", g.quad(p_B))

# KKT check: B (s - p) = lam Omega p for some lam >= 0
lhs = B @ (s - p_B)
normal = Omega @ p_B
lam = lhs @ normal / (normal @ normal)
print("multiplier:", lam, "residual:", np.linalg.norm(lhs - lam * normal))

# points already inside are returned untouched
inside = 0.1 * p_B
print("inside point unchanged:", np.array_equal(weighted_prox(B, 1.0, g, inside), inside))
