"""Metric fields from symplectic potentials: Hessian, inverse, curvature."""

import numpy as np
import pytest

from ckym import fd
from ckym.errors import NotPositiveDefinite
from ckym.geometry import SymplecticPotential, abreu_scalar, hessian_fields
from ckym.polytope import Grid, build_polytope

from conftest import bump_field


def _square_ref(n=33):
    P = build_polytope("square(1,1)")
    G = Grid(P, n)
    return P, G, SymplecticPotential(P, G)


def test_reference_inverse_hessian_closed_form():
    # on the unit square u_ref factorizes, so U = diag(x(1-x), y(1-y))
    P, G, u = _square_ref()
    mf = hessian_fields(u, P, G)
    x, y = G.xy[:, 0], G.xy[:, 1]
    assert np.max(np.abs(mf.U[:, 0, 0] - x * (1 - x))) < 1e-10
    assert np.max(np.abs(mf.U[:, 1, 1] - y * (1 - y))) < 1e-10
    assert np.max(np.abs(mf.U[:, 0, 1])) < 1e-12


def test_reference_scalar_curvature_is_four():
    P, G, u = _square_ref(64)
    S = abreu_scalar(u, P, G)
    assert np.max(np.abs(S - 4.0)) < 5 * G.h**2


def test_scalar_curvature_smooth_perturbation_converges():
    errs = []
    for n in (32, 64):
        P, G, u = _square_ref(n)
        x, y = G.xy[:, 0], G.xy[:, 1]
        up = u.with_phi(0.05 * bump_field(G) * x * y)
        S = abreu_scalar(up, P, G)
        # against a fine-grid self-reference: just check boundedness + smoothness
        errs.append(float(np.max(np.abs(S))))
    assert errs[1] < 2.0 * errs[0] + 1.0  # no blow-up under refinement


def test_flat_reference_zero_curvature():
    P = build_polytope("square(1,1)")
    G = Grid(P, 32)
    u = SymplecticPotential(P, G, reference="flat")
    S = abreu_scalar(u, P, G)
    assert np.max(np.abs(S)) < 1e-8
    mf = hessian_fields(u, P, G)
    assert np.allclose(mf.U[:, 0, 0], 1.0) and np.allclose(mf.U[:, 0, 1], 0.0)


def test_positivity_loss_raises():
    P, G, u = _square_ref()
    bad = u.with_phi(-6.0 * bump_field(G))
    with pytest.raises(NotPositiveDefinite):
        hessian_fields(bad, P, G)


def test_affine_phi_leaves_hessian_unchanged():
    P, G, u = _square_ref()
    x, y = G.xy[:, 0], G.xy[:, 1]
    ua = u.with_phi(0.3 * x - 0.7 * y + 0.1)
    mf0 = hessian_fields(u, P, G)
    mfa = hessian_fields(ua, P, G)
    assert np.max(np.abs(mf0.H - mfa.H)) < 1e-9


def test_stencils_exact_on_quadratics():
    P = build_polytope("square(1,1)")
    G = Grid(P, 16)
    ops = fd.build_operators(G)
    x, y = G.xy[:, 0], G.xy[:, 1]
    f = 1.5 * x * x - 2.0 * x * y + 0.5 * y * y + x - 3.0 * y + 2.0
    g = fd.gradient(ops, f)
    assert np.max(np.abs(g[:, 0] - (3.0 * x - 2.0 * y + 1.0))) < 1e-9
    assert np.max(np.abs(g[:, 1] - (-2.0 * x + y - 3.0))) < 1e-9
    H = fd.hessian(ops, f)
    assert np.max(np.abs(H[:, 0, 0] - 3.0)) < 1e-8
    assert np.max(np.abs(H[:, 0, 1] + 2.0)) < 1e-8
    assert np.max(np.abs(H[:, 1, 1] - 1.0)) < 1e-8


def test_potential_fit_recovers_gradient():
    P = build_polytope("square(1,1)")
    G = Grid(P, 16)
    ops = fd.build_operators(G)
    x, y = G.xy[:, 0], G.xy[:, 1]
    g = x * x - 0.5 * y * y + x * y
    V = fd.gradient(ops, g)
    g_fit = fd.potential_fit(G, V)
    g0 = g - np.average(g, weights=G.w)
    fit0 = g_fit - np.average(g_fit, weights=G.w)
    assert np.max(np.abs(g0 - fit0)) < 1e-8
