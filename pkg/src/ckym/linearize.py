"""Analytic sparse Jacobian of the discrete residual map, plus validators.

The Jacobian differentiates the discrete formulas exactly (chain rule
through the node-wise 2x2 inversion and the stencil matrices), so finite
differences of the residual converge to J*v linearly in the step size all
the way to round-off; `fd_consistency` asserts exactly that.

At a solution the Jacobian, rewritten in the natural coordinates
(phidot_K, xi) = (-udot, material bundle velocity), represents the
second-variation operator of the energy and is self-adjoint in the
quadrature inner product up to discretization error; `adjoint_check`
measures the weighted asymmetry.  The known kernel consists of affine
metric directions and constant bundle directions.
"""

import numpy as np
import scipy.sparse as sp

from . import fd
from . import bundle as bd
from .errors import NotAtHYM
from .system import residual, s_alpha_from_fields


class TangentVector:
    """Direction (phidot, mdot); phidot is normalized to quadrature mean zero."""

    def __init__(self, phidot, mdot, G=None):
        self.phidot = np.asarray(phidot, dtype=float).copy()
        self.mdot = np.asarray(mdot, dtype=float).copy()
        if G is not None:
            w = G.w
            self.phidot -= float(w @ self.phidot) / float(np.sum(w))

    def stacked(self):
        return np.concatenate([self.phidot, self.mdot])


class LinearOperator:
    """Assembled Jacobian with its quadrature weights and field blocks."""

    def __init__(self, matrix, weights, blocks, meta):
        self.matrix = matrix.tocsr()
        self.weights = weights
        self.blocks = blocks
        self.meta = meta

    def apply(self, v):
        if isinstance(v, TangentVector):
            v = v.stacked()
        return self.matrix @ v

    def dump_coo(self, path):
        """Write (row, col, value) triplets for external spectral analysis."""
        coo = self.matrix.tocoo()
        with open(path, "w") as f:
            f.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{r} {c} {v!r}\n")


def _diag(v):
    return sp.diags(np.asarray(v))


def jacobian_blocks(state):
    """Sparse derivatives of the basic fields with respect to (phi, m).

    Returns operators dS_phi, dtr_phi, dtr_m, ddet_phi, ddet_m, adv
    where adv is phidot -> <grad m, U grad phidot>.
    """
    G = state.G
    ops = fd.build_operators(G)
    mf, _, B = state.fields()
    U = mf.U
    Dx, Dy = ops.Dx, ops.Dy
    D2 = {(0, 0): ops.Dxx, (0, 1): ops.Dxy, (1, 0): ops.Dxy, (1, 1): ops.Dyy}

    # delta U_ab = -U_aj U_bk delta H_jk
    def dU(a, b):
        return -(
            _diag(U[:, a, 0] * U[:, b, 0]) @ ops.Dxx
            + _diag(U[:, a, 0] * U[:, b, 1] + U[:, a, 1] * U[:, b, 0]) @ ops.Dxy
            + _diag(U[:, a, 1] * U[:, b, 1]) @ ops.Dyy
        )

    dU00, dU01, dU11 = dU(0, 0), dU(0, 1), dU(1, 1)
    dS_phi = -(ops.Dxx @ dU00 + 2.0 * (ops.Dxy @ dU01) + ops.Dyy @ dU11)

    gm = fd.gradient(ops, state.bp.m)
    dUops = {(0, 0): dU00, (0, 1): dU01, (1, 0): dU01, (1, 1): dU11}
    # delta (U grad m)_a wrt phidot and mdot
    O = [
        _diag(gm[:, 0]) @ dUops[(a, 0)] + _diag(gm[:, 1]) @ dUops[(a, 1)]
        for a in range(2)
    ]
    Pp = [_diag(U[:, a, 0]) @ Dx + _diag(U[:, a, 1]) @ Dy for a in range(2)]

    D1 = [Dx, Dy]
    dB_phi = {(k, j): (D1[k] @ O[j]).tocsr() for k in range(2) for j in range(2)}
    dB_m = {(k, j): (D1[k] @ Pp[j]).tocsr() for k in range(2) for j in range(2)}

    def trace_of(dB):
        return (dB[(0, 0)] + dB[(1, 1)]).tocsr()

    def det_of(dB):
        return (
            _diag(B[:, 1, 1]) @ dB[(0, 0)]
            + _diag(B[:, 0, 0]) @ dB[(1, 1)]
            - _diag(B[:, 1, 0]) @ dB[(0, 1)]
            - _diag(B[:, 0, 1]) @ dB[(1, 0)]
        ).tocsr()

    adv = _diag(gm[:, 0] * U[:, 0, 0] + gm[:, 1] * U[:, 1, 0]) @ Dx + _diag(
        gm[:, 0] * U[:, 0, 1] + gm[:, 1] * U[:, 1, 1]
    ) @ Dy

    return {
        "dS_phi": dS_phi.tocsr(),
        "dtr_phi": trace_of(dB_phi),
        "dtr_m": trace_of(dB_m),
        "ddet_phi": det_of(dB_phi),
        "ddet_m": det_of(dB_m),
        "adv": adv.tocsr(),
    }


def assemble_jacobian(state, alpha, tc):
    """Exact Jacobian of the stacked residual (r_hym, r_scalar) wrt (phi, m)."""
    blk = jacobian_blocks(state)
    a0, a1 = alpha.alpha0, alpha.alpha1
    Jh_phi = blk["dtr_phi"]
    Jh_m = blk["dtr_m"]
    Js_phi = a0 * blk["dS_phi"] + 4.0 * a1 * blk["ddet_phi"]
    Js_m = (4.0 * a1 * blk["ddet_m"]).tocsr()
    J = sp.bmat([[Jh_phi, Jh_m], [Js_phi, Js_m]], format="csr")
    return LinearOperator(J, state.G.w, blk, {"method": "analytic"})


def fd_consistency(state, alpha, tc, v, eps_list=(1e-3, 1e-4, 1e-5), profile=False):
    """Directional finite differences of the residual against J*v.

    Returns the max over eps of ||(R(x + eps v) - R(x))/eps - J v|| / ||J v||
    in the weighted L2 norm; the per-eps ratios decrease linearly in eps
    until round-off.  With profile=True returns the list of ratios.
    """
    G = state.G
    w2 = np.concatenate([G.w, G.w])

    def norm(r):
        return float(np.sqrt(np.maximum(w2 @ (r * r), 0.0)))

    J = assemble_jacobian(state, alpha, tc)
    if isinstance(v, TangentVector):
        vd = v.stacked()
    else:
        vd = np.asarray(v, dtype=float)
    Jv = J.matrix @ vd
    r0 = np.concatenate(residual(state, alpha, tc))
    denom = norm(Jv)
    ratios = []
    M = G.nnodes
    for eps in eps_list:
        s = state.shifted(eps * vd[:M], eps * vd[M:])
        r1 = np.concatenate(residual(s, alpha, tc))
        diff = (r1 - r0) / eps - Jv
        ratios.append(norm(diff) / denom if denom > 0 else norm(diff))
    return ratios if profile else max(ratios)


def smooth_test_vectors(state, count, seed=7):
    """Deterministic batch of smooth compactly supported tangent directions.

    Random quadratic polynomials times the product of the facet functions:
    smooth up to the boundary and vanishing on it, so weak-form pairings see
    the interior operator rather than one-sided boundary stencils.
    """
    G = state.G
    x, y = G.xy[:, 0], G.xy[:, 1]
    lb = np.prod(G.lv, axis=1)
    lb = lb / np.max(lb)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        cp = rng.standard_normal(6)
        cm = rng.standard_normal(6)
        basis = [np.ones_like(x), x, y, x * y, x * x, y * y]
        phid = lb * sum(c * b for c, b in zip(cp, basis))
        mdot = lb * sum(c * b for c, b in zip(cm, basis))
        out.append(TangentVector(phid, mdot, G))
    return out


def second_variation_form(state, alpha, tc, vectors):
    """Weak-form second variation of the energy over a batch of directions.

    F[i, j] = -int udot_i * dS_alpha(v_j) - 4 alpha1 int xi_i * dr_hym(v_j)
    with xi the complex-gauge bundle velocity.  At a solution this is the
    energy Hessian, symmetric up to discretization error.
    """
    from .invariants import bundle_velocity

    G = state.G
    M = G.nnodes
    w = G.w
    blk = jacobian_blocks(state)
    a0, a1 = alpha.alpha0, alpha.alpha1
    Jh = sp.hstack([blk["dtr_phi"], blk["dtr_m"]], format="csr")
    Js = sp.hstack(
        [a0 * blk["dS_phi"] + 4.0 * a1 * blk["ddet_phi"], 4.0 * a1 * blk["ddet_m"]],
        format="csr",
    )
    k = len(vectors)
    F = np.zeros((k, k))
    xis = [bundle_velocity(state, v.phidot, v.mdot) for v in vectors]
    for j, vj in enumerate(vectors):
        vd = vj.stacked()
        dr_h = Jh @ vd
        # S_alpha = -(r_scalar + c) + 4 alpha1 z r_hym
        dsa = -(Js @ vd) + 4.0 * a1 * tc.z * dr_h
        for i, vi in enumerate(vectors):
            F[i, j] = -float(w @ (vi.phidot * dsa)) - 4.0 * a1 * float(
                w @ (xis[i] * dr_h)
            )
    return F


def adjoint_check(state, alpha, tc=None, hym_tol=None, nvec=8, seed=7):
    """Relative asymmetry of the weak-form second variation.

    Requires the state to satisfy the contracted-curvature equation (HYM);
    raises NotAtHYM otherwise unless hym_tol is overridden.  Small (O(h)) at
    solutions with alpha0 alpha1 >= 0, order one away from them.
    """
    from .system import topo_constants

    if tc is None:
        tc = topo_constants(state, alpha)
    r_hym, _ = residual(state, alpha, tc)
    thresh = 50.0 * state.G.h**2 * (1.0 + abs(tc.z)) if hym_tol is None else hym_tol
    hym_norm = float(np.max(np.abs(r_hym)))
    if hym_norm > thresh:
        raise NotAtHYM(f"|r_hym|_inf = {hym_norm:.3e} > {thresh:.3e}")
    F = second_variation_form(state, alpha, tc, smooth_test_vectors(state, nvec, seed))
    den = float(np.max(np.abs(F)))
    num = float(np.max(np.abs(F - F.T)))
    return num / den if den > 0 else 0.0


def kernel_basis(state):
    """Known kernel directions at solutions: affine phidot, constant mdot.

    Returns a (2M, 4) array with quadrature-orthonormal columns.
    """
    G = state.G
    M = G.nnodes
    cols = []
    for f in (np.ones(M), G.xy[:, 0], G.xy[:, 1]):
        v = np.zeros(2 * M)
        v[:M] = f
        cols.append(v)
    v = np.zeros(2 * M)
    v[M:] = 1.0
    cols.append(v)
    K = np.stack(cols, axis=1)
    w2 = np.concatenate([G.w, G.w])
    # Gram-Schmidt in the weighted inner product
    for j in range(K.shape[1]):
        for i in range(j):
            K[:, j] -= (w2 * K[:, i]) @ K[:, j] * K[:, i]
        K[:, j] /= np.sqrt((w2 * K[:, j]) @ K[:, j])
    return K


def cokernel_basis(state, alpha, tc, zetas=None):
    """Left near-null functionals of the Jacobian at solutions.

    The residual averages vanish identically and the character is
    state-independent, so the weighted functionals
      [w, 0], [0, w], and the character rows for each toric generator
    annihilate the Jacobian range up to O(h^2).  Returns (2M, 4).
    """
    from .invariants import ToricVectorField, moment_section

    G = state.G
    M = G.nnodes
    w = G.w
    if zetas is None:
        zetas = [ToricVectorField((1.0, 0.0)), ToricVectorField((0.0, 1.0))]
    sigma = moment_section(state)
    cols = [np.concatenate([w, np.zeros(M)]), np.concatenate([np.zeros(M), w])]
    for zeta in zetas:
        ham = zeta.lift_constant(state) - sigma @ zeta.a
        phz = zeta.hamiltonian(state.P, G)
        # futaki = int [-4 a1 (ham + z phz) r_hym + phz r_scalar]
        row_h = -4.0 * alpha.alpha1 * (ham + tc.z * phz) * w
        row_s = phz * w
        cols.append(np.concatenate([row_h, row_s]))
    C = np.stack(cols, axis=1)
    for j in range(C.shape[1]):
        C[:, j] /= np.linalg.norm(C[:, j])
    return C
