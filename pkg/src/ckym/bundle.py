"""Torus-invariant hermitian structures on toric line bundles.

The bundle is fixed by integer facet labels c_i (equivariant first-Chern
data).  A hermitian structure is encoded by its moment section sigma, a
2-vector field on the polytope whose facet traces <sigma, nu_i> equal -c_i;
the curvature matrix is B_{kj} = d sigma_j / d x_k.  The trace of B is the
contracted curvature Lambda F, and 4 det B is the reduced top Chern-Weil
density.  Curvature is carried as a real matrix (the factor i of the u(1)
identification is stripped throughout).

sigma splits as sigma_ref + U grad m: the closed-form reference carries the
topology, the smooth correction m is the solver unknown and contributes
nothing to the facet traces.
"""

import numpy as np

from . import fd
from .errors import NegativeNorm


class BundleData:
    """Topological data: integer facet labels, reference moment section.

    For a rectangle [0,a]x[0,b] with facet order (x=0, y=0, x=a, y=b) and
    degrees (p, q) the labels are (0, 0, p, q) and sigma_ref is the affine
    section ((p/a) x1, (q/b) x2).  For general polytopes the reference is the
    closed form sigma_ref = -U_ref sum_i c_i nu_i / l_i, which has the same
    facet traces; the two constructions agree on rectangles.

    The per-facet trace constant <sigma, nu_i> = -c_i is a normalization
    convention: it is pinned by requiring boundary_flux(sigma_ref) to
    reproduce the Chern-Weil pairing of the bundle degree with the class
    (checked in the tests), not imposed axiomatically.
    """

    def __init__(self, P, labels):
        labels = [int(c) for c in labels]
        if len(labels) != P.nfacets:
            raise ValueError(f"need {P.nfacets} facet labels, got {len(labels)}")
        self.P = P
        self.labels = np.array(labels, dtype=np.int64)

    @classmethod
    def from_degrees(cls, P, p, q):
        """Rectangle convenience: degrees (p, q) -> labels on the four facets."""
        labels = []
        for v in P.nu:
            if tuple(v) == (1, 0) or tuple(v) == (0, 1):
                labels.append(0)
            elif tuple(v) == (-1, 0):
                labels.append(int(p))
            elif tuple(v) == (0, -1):
                labels.append(int(q))
            else:
                raise ValueError("from_degrees needs an axis-aligned rectangle")
        return cls(P, labels)

    @property
    def traces(self):
        """Per-facet constants <sigma, nu_i>; independent of m."""
        return -self.labels.astype(float)

    def is_rectangle(self):
        want = {(1, 0), (0, 1), (-1, 0), (0, -1)}
        return {tuple(v) for v in self.P.nu} == want and self.P.nfacets == 4

    def sigma_ref(self, G, mf_ref_U=None):
        """Reference moment section at the grid nodes, shape (M, 2)."""
        P = self.P
        if self.is_rectangle():
            # affine closed form ((p/a) x1, (q/b) x2)
            rates = self._rectangle_rates()
            return G.xy * rates[None, :]
        U = self._reference_U(G) if mf_ref_U is None else mf_ref_U
        t = self._t_field(G)  # sum_i c_i nu_i / l_i
        return -np.einsum("mab,mb->ma", U, t)

    def B_ref(self, G):
        """Closed-form Jacobian of sigma_ref, B_kj = d_k sigma_ref_j, (M,2,2)."""
        P = self.P
        if self.is_rectangle():
            rates = self._rectangle_rates()
            B = np.zeros((G.nnodes, 2, 2))
            B[:, 0, 0] = rates[0]
            B[:, 1, 1] = rates[1]
            return B
        nu = P.nu.astype(float)
        c = self.labels.astype(float)
        inv_l = 1.0 / G.lv  # (M, k)
        U = self._reference_U(G)
        t = self._t_field(G)
        # dH_k = -sum_i nu_i nu_i^T nu_ik / l_i^2 ; dU_k = -U dH_k U
        dH = -np.einsum("mi,ia,ib,ik->mkab", inv_l**2, nu, nu, nu)
        dU = -np.einsum("mab,mkbc,mcd->mkad", U, dH, U)
        # dt_k = -sum_i c_i nu_i nu_ik / l_i^2
        dt = -np.einsum("i,mi,ij,ik->mkj", c, inv_l**2, nu, nu)
        # sigma_j = -(U t)_j ; B_kj = -(dU_k t)_j - (U dt_k)_j
        return -np.einsum("mkjb,mb->mkj", dU, t) - np.einsum("mjb,mkb->mkj", U, dt)

    def _rectangle_rates(self):
        P = self.P
        rate = np.zeros(2)
        for v, c in zip(P.nu, self.labels):
            if tuple(v) == (-1, 0):
                a = P.lam[list(map(tuple, P.nu)).index((-1, 0))]
                rate[0] = c / a
            elif tuple(v) == (0, -1):
                b = P.lam[list(map(tuple, P.nu)).index((0, -1))]
                rate[1] = c / b
        return rate

    def _reference_U(self, G):
        nu = self.P.nu.astype(float)
        H = np.einsum("mk,ka,kb->mab", 1.0 / G.lv, nu, nu)
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
        U = np.empty_like(H)
        U[:, 0, 0] = H[:, 1, 1] / det
        U[:, 1, 1] = H[:, 0, 0] / det
        U[:, 0, 1] = U[:, 1, 0] = -H[:, 0, 1] / det
        return U

    def _t_field(self, G):
        nu = self.P.nu.astype(float)
        c = self.labels.astype(float)
        return np.einsum("i,mi,ia->ma", c, 1.0 / G.lv, nu)


class BundlePotential:
    """Hermitian structure: bundle data plus smooth correction m."""

    def __init__(self, bd, m=None, G=None):
        self.bd = bd
        if m is None:
            if G is None:
                raise ValueError("need m or G")
            m = np.zeros(G.nnodes)
        self.m = np.asarray(m, dtype=float).copy()

    def with_m(self, m):
        return BundlePotential(self.bd, m)


def curvature_matrix(u, bp, P, G, mf=None):
    """Curvature matrix B_kj = d sigma_j / d x_k, shape (M, 2, 2).

    Reference part analytic; the correction D(U grad m) uses the same grid
    stencils as the metric Laplacian, so tr B = laplacian + tr B_ref holds
    exactly node-wise.
    """
    from .geometry import hessian_fields

    ops = fd.build_operators(G)
    if mf is None:
        mf = hessian_fields(u, P, G)
    v = np.einsum("mab,mb->ma", mf.U, fd.gradient(ops, bp.m))
    B = bp.bd.B_ref(G).copy()
    B[:, 0, 0] += ops.Dx @ v[:, 0]
    B[:, 0, 1] += ops.Dx @ v[:, 1]
    B[:, 1, 0] += ops.Dy @ v[:, 0]
    B[:, 1, 1] += ops.Dy @ v[:, 1]
    return B


def lambda_F(B):
    """Contracted curvature Lambda F = tr B, grid scalar."""
    return B[:, 0, 0] + B[:, 1, 1]


def det_B(B):
    return B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]


def topform_FF(B):
    """Reduced top Chern-Weil density Lambda^2(F ^ F) = 4 det B."""
    return 4.0 * det_B(B)


def pointwise_norm_F(B):
    """|F|^2 = (tr B)^2 - 2 det B for integrable (type (1,1)) curvature."""
    n = lambda_F(B) ** 2 - 2.0 * det_B(B)
    bad = n < -1e-10
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NegativeNorm(k, float(n[k]))
    return n
