"""Coupled-system residuals, topological constants, pointwise identities.

The coupled equations on a toric surface reduce to two scalar equations on
the moment polytope for the pair (phi, m):

    tr B                    = z            (contracted-curvature equation)
    alpha0 S + alpha1 4detB = c            (scalar-curvature equation)

with the constants z, S_hat, c_hat, c fixed by the Kaehler class and the
bundle topology:  z = flux / vol,  S_hat = mean(S),  c_hat = mean(4 det B)/2,
c = alpha0 S_hat + 2 alpha1 c_hat.  All four are invariant under (phi, m)
perturbations up to quadrature error, which the tests enforce.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import bundle as bd
from . import fd, geometry
from .errors import ClassMismatch
from .polytope import boundary_flux, integrate


@dataclass(frozen=True)
class Coupling:
    alpha0: float
    alpha1: float

    def __post_init__(self):
        if self.alpha0 == 0.0 and self.alpha1 == 0.0:
            raise ValueError("coupling (0, 0) is degenerate")

    def scaled(self, t):
        return Coupling(t * self.alpha0, t * self.alpha1)


@dataclass(frozen=True)
class TopoConstants:
    z: float
    S_hat: float
    c_hat: float
    c: float
    vol: float


class PairState:
    """The solver unknown: a metric potential and a bundle potential."""

    def __init__(self, u, bp):
        self.u = u
        self.bp = bp
        self.P = u.P
        self.G = u.G
        self._fields = None

    @classmethod
    def reference(cls, P, G, bundle_data):
        u = geometry.SymplecticPotential(P, G)
        bp = bd.BundlePotential(bundle_data, G=G)
        return cls(u, bp)

    @property
    def phi(self):
        return self.u.phi

    @property
    def m(self):
        return self.bp.m

    def with_fields(self, phi=None, m=None):
        u = self.u if phi is None else self.u.with_phi(phi)
        bp = self.bp if m is None else self.bp.with_m(m)
        return PairState(u, bp)

    def shifted(self, dphi, dm):
        return self.with_fields(self.phi + dphi, self.m + dm)

    def fields(self):
        """Metric fields, scalar curvature and curvature matrix, cached."""
        if self._fields is None:
            mf = geometry.hessian_fields(self.u, self.P, self.G)
            S = geometry.abreu_scalar(self.u, self.P, self.G, mf)
            B = bd.curvature_matrix(self.u, self.bp, self.P, self.G, mf)
            self._fields = (mf, S, B)
        return self._fields

    def same_class(self, other):
        return (
            np.array_equal(self.P.nu, other.P.nu)
            and np.allclose(self.P.lam, other.P.lam, rtol=0, atol=1e-12)
            and np.array_equal(self.bp.bd.labels, other.bp.bd.labels)
            and self.G.n == other.G.n
        )


def topo_constants(state, alpha):
    """Class constants (z, S_hat, c_hat, c, vol) from the current state.

    z comes from the exact facet-trace flux; the averages are quadrature
    integrals, hence (phi, m)-invariant only up to O(h^2).
    """
    P, G = state.P, state.G
    vol = math.fsum(G.w)
    flux = boundary_flux(state.bp.bd.traces, P)
    z = flux / vol
    _, S, B = state.fields()
    S_hat = integrate(S, P, G) / vol
    c_hat = integrate(bd.topform_FF(B), P, G) / (2.0 * vol)
    c = alpha.alpha0 * S_hat + 2.0 * alpha.alpha1 * c_hat
    return TopoConstants(z=z, S_hat=S_hat, c_hat=c_hat, c=c, vol=vol)


def residual(state, alpha, tc):
    """Node-wise residuals (r_hym, r_scalar) of the coupled system."""
    _, S, B = state.fields()
    r_hym = bd.lambda_F(B) - tc.z
    r_scalar = alpha.alpha0 * S + alpha.alpha1 * bd.topform_FF(B) - tc.c
    return r_hym, r_scalar


def residual_norms(state, alpha, tc):
    """Residual fields plus (L2, Linf) norms in the quadrature metric."""
    r_hym, r_scalar = residual(state, alpha, tc)
    P, G = state.P, state.G

    def norms(r):
        l2 = math.sqrt(max(integrate(r * r, P, G), 0.0))
        return l2, float(np.max(np.abs(r)))

    return {
        "r_hym": r_hym,
        "r_scalar": r_scalar,
        "hym_l2": norms(r_hym)[0],
        "hym_linf": norms(r_hym)[1],
        "scalar_l2": norms(r_scalar)[0],
        "scalar_linf": norms(r_scalar)[1],
    }


def identity_check(state, tc):
    """Max node-wise violation of the squared-curvature identity.

    With zhat the multiple z of the Kaehler form, the identity reads
    Lambda^2((F - zhat)^2) = 2|Lambda F - 2z|^2 - 2|F - zhat|^2 for
    integrable curvature; in matrix form both sides are 4 det(B - zI).
    """
    _, _, B = state.fields()
    z = tc.z
    trBz = bd.lambda_F(B) - 2.0 * z
    detBz = (B[:, 0, 0] - z) * (B[:, 1, 1] - z) - B[:, 0, 1] * B[:, 1, 0]
    lhs = 4.0 * detBz
    normFz = trBz * trBz - 2.0 * detBz
    rhs = 2.0 * trBz * trBz - 2.0 * normFz
    return float(np.max(np.abs(lhs - rhs)))


def s_alpha_from_fields(S, B, alpha, tc):
    """S_alpha = -alpha0 S - alpha1 Lambda^2((F - zhat)^2) as a grid scalar."""
    z = tc.z
    detBz = (B[:, 0, 0] - z) * (B[:, 1, 1] - z) - B[:, 0, 1] * B[:, 1, 0]
    return -alpha.alpha0 * S - 4.0 * alpha.alpha1 * detBz


def extremal_residual(state, alpha, tc):
    """Node-wise residual of the extremal-pair condition.

    First component (shape (M, 2)): 4 alpha1 grad(tr B) + B grad(S_alpha),
    the reduction of the condition that the S_alpha-Hamiltonian field
    preserves the connection.  Second component (shape (M,)): deviation of
    S_alpha from its best affine fit; for invariant data the field is
    holomorphy-preserving iff S_alpha is affine in the action coordinates.
    Both vanish at solutions of the coupled system.
    """
    ops = fd.build_operators(state.G)
    _, S, B = state.fields()
    s_alpha = s_alpha_from_fields(S, B, alpha, tc)
    grad_tr = fd.gradient(ops, bd.lambda_F(B))
    grad_sa = fd.gradient(ops, s_alpha)
    first = 4.0 * alpha.alpha1 * grad_tr + np.einsum("mkj,mj->mk", B, grad_sa)
    second = s_alpha - affine_fit(s_alpha, state.P, state.G)
    return first, second


def affine_fit(field, P, G):
    """Quadrature-weighted L2 projection of a grid scalar onto affine functions."""
    X = np.stack([np.ones(G.nnodes), G.xy[:, 0], G.xy[:, 1]], axis=1)
    W = G.w
    gram = X.T @ (W[:, None] * X)
    rhs = X.T @ (W * field)
    coef = np.linalg.solve(gram, rhs)
    return X @ coef


def require_same_class(s1, s2):
    if not s1.same_class(s2):
        raise ClassMismatch("states differ in polytope, bundle data or grid")
