"""Geodesic paths in the reduced space of metrics and hermitian structures.

Metric factor: in symplectic-potential coordinates the geodesic between two
toric Kaehler potentials is the linear interpolation u_t = (1-t) u_0 + t u_1;
the Legendre dual of a linear family satisfies the Kaehler-side geodesic
equation phi_tt = (d phi_t, d phi_t) exactly (envelope theorem:
phi_t(y) = -udot(x_t(y)) and x_t moves by -U grad udot, making both sides
equal grad udot' U grad udot).  `geodesic_equation_residual` validates that
identity through the numerical Legendre transform.

Bundle factor: the reduced space is a symmetric space, and along a geodesic
the hermitian structure moves with constant velocity in the complex-gauge
trivialization that follows the metric path.  In grid coordinates that
velocity is the same xi as in the first-variation pairing,

    xi = mdot - <grad m, U_t grad udot> + g_t,   grad g_t = -H B_ref' U grad udot,

so the geodesic condition is d/dt xi = 0: a linear nonautonomous transport
ODE for m_t driven by the unknown constant field xi.  Both endpoints fixed
makes it a linear shooting problem, solved matrix-free with GMRES; for a
constant metric path the equation degenerates to mdot = xi, i.e. m_t linear.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import fd
from .errors import (
    LeavesCone,
    NotPositiveDefinite,
    ShootingDiverged,
)
from .geometry import hessian_fields
from .system import PairState, require_same_class


def metric_geodesic(u0, u1, N):
    """Linear symplectic-potential path between two metrics, N samples.

    Returns the list of potentials u_t at t = k/(N-1); every sample is
    checked for metric positivity and a degenerate intermediate Hessian
    raises LeavesCone(t).
    """
    if N < 2:
        raise ValueError("need at least 2 samples")
    P, G = u0.P, u0.G
    out = []
    for k in range(N):
        t = k / (N - 1)
        u_t = u0.with_phi((1.0 - t) * u0.phi + t * u1.phi)
        try:
            hessian_fields(u_t, P, G)
        except NotPositiveDefinite:
            raise LeavesCone(t)
        out.append(u_t)
    return out


def _transport_terms(u_t, bundle_data, P, G, udot, ops):
    """Advection operator coefficient and source for the xi-transport ODE.

    Returns (Ug, g) with Ug = U_t grad udot (the advection velocity field)
    and g the potential of the reference-section motion, so that
    mdot = xi + <grad m, Ug> - g.
    """
    mf = hessian_fields(u_t, P, G)
    grad_udot = fd.gradient(ops, udot)
    Ug = np.einsum("mab,mb->ma", mf.U, grad_udot)
    if np.any(bundle_data.labels != 0):
        Bref = bundle_data.B_ref(G)
        V = -np.einsum("mab,mkb,mk->ma", mf.H, Bref, Ug)
        g = fd.potential_fit(G, V)
    else:
        g = np.zeros(G.nnodes)
    return Ug, g


def _all_transport_terms(us, bundle_data, P, G, udot, ops):
    return [_transport_terms(u, bundle_data, P, G, udot, ops) for u in us]


def _integrate_m(G, ops, terms, m_init, xi, collect=False):
    """Explicit-midpoint integration of mdot = xi + <grad m, Ug_t> - g_t.

    terms holds (Ug, g) at N uniform samples; the midpoint stage uses the
    average of consecutive sample coefficients (second-order accurate).
    Returns m(1), or the whole sampled path when collect is True.
    """
    N = len(terms)
    dt = 1.0 / (N - 1)

    def rhs(m, Ug, g):
        return xi + np.einsum("ma,ma->m", fd.gradient(ops, m), Ug) - g

    m = m_init.copy()
    path = [m.copy()]
    for k in range(N - 1):
        Ug0, g0 = terms[k]
        Ug1, g1 = terms[k + 1]
        Ugm, gm = 0.5 * (Ug0 + Ug1), 0.5 * (g0 + g1)
        k1 = rhs(m, Ug0, g0)
        k2 = rhs(m + 0.5 * dt * k1, Ugm, gm)
        m = m + dt * k2
        path.append(m.copy())
    return path if collect else m


def bundle_geodesic(us, bundle_data, m0, m1, gmres_tol=1e-12, maxiter=200):
    """Bundle potentials m_t making (u_t, m_t) a coupled geodesic.

    Solves the linear shooting problem for the constant complex-gauge
    velocity xi: integrate the transport ODE from m0 and match m1 at t = 1,
    with the affine-in-xi endpoint map inverted matrix-free by GMRES.
    Raises ShootingDiverged when GMRES stalls or the endpoint mismatch
    exceeds 1e-8 relative to the endpoint scale.
    """
    P, G = us[0].P, us[0].G
    M = G.nnodes
    udot = us[-1].phi - us[0].phi
    ops = fd.build_operators(G)
    terms = _all_transport_terms(us, bundle_data, P, G, udot, ops)
    zero = np.zeros(M)
    base = _integrate_m(G, ops, terms, m0, zero)
    # the g source makes the endpoint map affine; split off the linear part
    drift = _integrate_m(G, ops, terms, zero, zero)

    def endpoint_map(xi):
        return _integrate_m(G, ops, terms, zero, xi) - drift

    L = spla.LinearOperator((M, M), matvec=endpoint_map)
    rhs = m1 - base
    xi, info = spla.gmres(L, rhs, x0=rhs.copy(), rtol=gmres_tol, atol=0.0,
                          maxiter=maxiter)
    if info != 0:
        raise ShootingDiverged(f"GMRES did not converge (info={info})")
    path = _integrate_m(G, ops, terms, m0, xi, collect=True)
    scale = 1.0 + float(np.max(np.abs(m1)))
    mismatch = float(np.max(np.abs(path[-1] - m1)))
    if mismatch > 1e-8 * scale:
        raise ShootingDiverged(f"endpoint mismatch {mismatch:.3e}")
    path[-1] = m1.copy()
    return path


@dataclass
class GeodesicPath:
    """Sampled coupled geodesic: states at uniform t in [0, 1]."""

    states: list
    t: np.ndarray

    @property
    def N(self):
        return len(self.states)


def coupled_geodesic(b0, b1, N):
    """Geodesic in the reduced space between two pair states, N samples.

    Metric part linear in the symplectic potential, bundle part from the
    constant-xi shooting solve along that metric path.
    """
    require_same_class(b0, b1)
    us = metric_geodesic(b0.u, b1.u, N)
    ms = bundle_geodesic(us, b0.bp.bd, b0.m, b1.m)
    states = [
        PairState(u_t, b0.bp.with_m(m_t)) for u_t, m_t in zip(us, ms)
    ]
    return GeodesicPath(states=states, t=np.linspace(0.0, 1.0, N))


@dataclass
class ConvexityReport:
    min_second_difference: float
    threshold: float
    passed: bool
    energy: np.ndarray
    t: np.ndarray


def convexity_report(path, alpha, tc):
    """Minimum centered second difference of the energy along the path.

    Convexity of the reduced energy along geodesics is the uniqueness
    mechanism; the verdict passes when the minimum raw second difference is
    above -1e-6 * (energy range + 1).
    """
    from .invariants import k_energy_path

    Mvals = k_energy_path(path.states, alpha, tc)
    N = len(Mvals)
    dt = 1.0 / (N - 1)
    second = (Mvals[2:] - 2.0 * Mvals[1:-1] + Mvals[:-2]) / dt**2
    rng = float(np.max(Mvals) - np.min(Mvals))
    threshold = -1e-6 * (rng + 1.0)
    mn = float(np.min(second)) if len(second) else 0.0
    return ConvexityReport(
        min_second_difference=mn,
        threshold=threshold,
        passed=mn >= threshold,
        energy=Mvals,
        t=path.t,
    )


def _node_values(u):
    """Values of u = u_ref + phi at the nodes (l log l -> 0 at the boundary)."""
    G = u.G
    if u.reference == "flat":
        ref = 0.5 * np.einsum("ma,ma->m", G.xy, G.xy)
    else:
        lv = G.lv
        ref = np.sum(np.where(lv > 0, lv * np.log(np.maximum(lv, 1e-300)), 0.0), axis=1)
    return ref + u.phi


def geodesic_equation_residual(u0, u1, N, npts=40, seed=3):
    """Max violation of the Kaehler-side geodesic equation on the linear path.

    Checks phi_tt = (d phi_t, d phi_t) numerically: phi_t(y) is evaluated by
    the discrete Legendre transform max_x (<x, y> - u_t(x)) over grid nodes,
    phi_tt by centered t-differences in the Legendre values, and the right
    side as grad udot' U grad udot at the maximizing node (the envelope
    identity).  Expected O(h^2 * N^2 + N^-2): the node-snapping error of the
    discrete Legendre transform is O(h^2) per value and is amplified by the
    t-second-difference, so use modest N and interior probe momenta.
    """
    P, G = u0.P, u0.G
    ops = fd.build_operators(G)
    dt = 1.0 / (N - 1)
    udot = u1.phi - u0.phi

    # probe momenta y = grad u at interior nodes of the midpoint metric
    mid = u0.with_phi(0.5 * (u0.phi + u1.phi))
    interior = np.min(G.lv, axis=1) > 0.2 * np.max(G.lv)
    idx = np.flatnonzero(interior)
    rng = np.random.default_rng(seed)
    idx = rng.choice(idx, size=min(npts, len(idx)), replace=False)
    grad_mid = fd.gradient(ops, _node_values(mid))
    ys = grad_mid[idx]

    base = _node_values(u0)
    grad_udot = fd.gradient(ops, udot)
    mfields = hessian_fields(mid, P, G)
    worst = 0.0
    for y in ys:
        vals = np.empty(N)
        argmax_mid = 0
        for k in range(N):
            t = k / (N - 1)
            score = G.xy @ y - (base + t * udot)
            kk = int(np.argmax(score))
            vals[k] = score[kk]
            if k == N // 2:
                argmax_mid = kk
        gu = grad_udot[argmax_mid]
        rhs = float(gu @ (mfields.U[argmax_mid] @ gu))
        second = np.diff(vals, 2) / dt**2
        worst = max(worst, float(np.max(np.abs(second - rhs))))
    return worst
