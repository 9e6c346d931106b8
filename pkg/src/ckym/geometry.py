"""Torus-invariant Kaehler metrics in symplectic action coordinates.

A metric is encoded by a convex symplectic potential u = u_ref + phi on the
moment polytope, with u_ref the canonical reference sum(l_i log l_i) whose
derivatives are evaluated in closed form (it is log-singular at the boundary
and must never be finite-differenced) and phi a smooth correction carried on
the grid.  The normalization of u_ref (no 1/2 factor) is fixed so that the
scalar curvature of the reference metric on the unit square is 4; see the
inverse-Hessian oracle u^{11} = x(1-x) on an interval factor.

Scalar curvature uses the standard symplectic-coordinate formula
S = -sum_{jk} d^2 u^{jk} / dx_j dx_k applied to the smooth field u^{jk}.
"""

import numpy as np

from . import fd
from .errors import NotPositiveDefinite

# relative eigenvalue floor distinguishing degeneration from round-off
POSITIVITY_TOL = 1e-10


class SymplecticPotential:
    """u = u_ref + phi on a fixed polytope grid.

    reference="guillemin" uses the canonical boundary-singular potential;
    reference="flat" uses u_ref = |x|^2/2 (test harness only: Euclidean
    Hessian, no boundary compatibility).
    """

    def __init__(self, P, G, phi=None, reference="guillemin"):
        self.P = P
        self.G = G
        self.phi = np.zeros(G.nnodes) if phi is None else np.asarray(phi, dtype=float).copy()
        if self.phi.shape != (G.nnodes,):
            raise ValueError("phi shape mismatch")
        if reference not in ("guillemin", "flat"):
            raise ValueError(f"unknown reference {reference!r}")
        self.reference = reference

    def with_phi(self, phi):
        return SymplecticPotential(self.P, self.G, phi, self.reference)

    def reference_hessian(self):
        """Closed-form Hessian of u_ref at the nodes, shape (M, 2, 2)."""
        G, P = self.G, self.P
        if self.reference == "flat":
            H = np.zeros((G.nnodes, 2, 2))
            H[:, 0, 0] = H[:, 1, 1] = 1.0
            return H
        nu = P.nu.astype(float)  # (k, 2)
        inv_l = 1.0 / G.lv  # (M, k)
        # sum_i nu_i nu_i^T / l_i
        return np.einsum("mk,ka,kb->mab", inv_l, nu, nu)


class MetricFields:
    """Node-wise Hessian, inverse Hessian and scalar curvature of u."""

    __slots__ = ("H", "U", "S")

    def __init__(self, H, U, S=None):
        self.H = H
        self.U = U
        self.S = S


def _invert_spd_2x2(H):
    """Node-wise inverse of symmetric 2x2 fields, with positivity check."""
    tr = H[:, 0, 0] + H[:, 1, 1]
    det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0]
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    lam_min = 0.5 * (tr - disc)
    bad = lam_min <= POSITIVITY_TOL * np.abs(tr)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NotPositiveDefinite(k, f"(min eig {lam_min[k]:.3e}, trace {tr[k]:.3e})")
    U = np.empty_like(H)
    U[:, 0, 0] = H[:, 1, 1] / det
    U[:, 1, 1] = H[:, 0, 0] / det
    U[:, 0, 1] = -H[:, 0, 1] / det
    U[:, 1, 0] = -H[:, 1, 0] / det
    return U


def hessian_fields(u, P, G):
    """Hessian and inverse Hessian of u = u_ref + phi at the nodes.

    The reference part is analytic; phi is finite-differenced with the grid
    stencils.  Raises NotPositiveDefinite when the metric degenerates.
    """
    ops = fd.build_operators(G)
    H = u.reference_hessian() + fd.hessian(ops, u.phi)
    U = _invert_spd_2x2(H)
    return MetricFields(H, U)


def abreu_scalar(u, P, G, mf=None):
    """Scalar curvature field S = -(U11_xx + 2 U12_xy + U22_yy)."""
    ops = fd.build_operators(G)
    if mf is None:
        mf = hessian_fields(u, P, G)
    U = mf.U
    S = -(ops.Dxx @ U[:, 0, 0] + 2.0 * (ops.Dxy @ U[:, 0, 1]) + ops.Dyy @ U[:, 1, 1])
    mf.S = S
    return S


def metric_laplacian(u, m, P, G, mf=None):
    """Divergence-form Laplacian  div(U grad m)  of a grid scalar m."""
    ops = fd.build_operators(G)
    if mf is None:
        mf = hessian_fields(u, P, G)
    v = np.einsum("mab,mb->ma", mf.U, fd.gradient(ops, m))
    return fd.divergence(ops, v)
