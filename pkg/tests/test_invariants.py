"""Futaki character, energies, first-variation pairing."""

import numpy as np
import pytest

from ckym.bundle import BundleData
from ckym.errors import PathTooCoarse
from ckym.invariants import (ToricVectorField, base_point_independence,
                             coupling_inequality_holds, cym_functional,
                             extremal_vector_field, futaki, k_energy_path,
                             minimality_scale, sigma_pairing)
from ckym.polytope import Grid, build_polytope
from ckym.system import Coupling, PairState, topo_constants

from conftest import bump_field, make_product, smooth_perturbation


GENERATORS = [ToricVectorField((1.0, 0.0)), ToricVectorField((0.0, 1.0))]


def test_futaki_vanishes_on_square():
    st = make_product(1, 1, 33)
    alpha = Coupling(1.0, 0.1)
    tc = topo_constants(st, alpha)
    for zeta in GENERATORS:
        assert abs(futaki(st, alpha, tc, zeta)) < 1e-6 * (1 + abs(tc.c))


def test_futaki_base_point_independence():
    st = make_product(1, 1, 33)
    alpha = Coupling(1.0, 0.1)
    other = smooth_perturbation(st, 0.02, seed=7)
    for zeta in GENERATORS:
        assert base_point_independence(st, other, alpha, zeta) < 5 * st.G.h**2


def test_trapezoid_obstruction_positive():
    # cscK limit (alpha1 = 0): the trapezoid has a nonzero character
    P = build_polytope("trapezoid(1,2)")
    G = Grid(P, 64)
    st = PairState.reference(P, G, BundleData(P, (0, 0, 0, 0)))
    alpha = Coupling(1.0, 0.0)
    tc = topo_constants(st, alpha)
    zeta = extremal_vector_field(st, alpha, tc)
    val = futaki(st, alpha, tc, zeta)
    assert val > 1e-3  # squared-norm mechanism: strictly positive


def test_cym_at_product_below_perturbations():
    st = make_product(1, 1, 33)
    alpha0 = Coupling(1.0, 0.1)
    tc0 = topo_constants(st, alpha0)
    scale = minimality_scale(alpha0, tc0)
    alpha = alpha0.scaled(scale)
    tc = topo_constants(st, alpha)
    assert coupling_inequality_holds(alpha, tc)
    E0 = cym_functional(st, alpha, tc)
    for seed in range(5):
        Ep = cym_functional(smooth_perturbation(st, 0.03, seed=seed), alpha, tc)
        assert E0 <= Ep + 1e-12


def test_coupling_inequality_scaling():
    st = make_product(1, 1, 17)
    alpha = Coupling(1.0, 0.1)
    tc = topo_constants(st, alpha)
    assert not coupling_inequality_holds(alpha, tc)
    s = minimality_scale(alpha, tc)
    assert coupling_inequality_holds(alpha.scaled(s), topo_constants(st, alpha.scaled(s)))


def test_sigma_pairing_zero_at_solution():
    # first variation vanishes at the product solution up to discretization
    st = make_product(1, 1, 33)
    alpha = Coupling(1.0, 0.1)
    tc = topo_constants(st, alpha)
    G = st.G
    x, y = G.xy[:, 0], G.xy[:, 1]
    bump = bump_field(G)
    v = sigma_pairing(st, alpha, tc, bump * (x - y), bump * x * y)
    assert abs(v) < 5 * G.h**2


def test_sigma_pairing_matches_energy_difference():
    # directional derivative of the K-energy along a short linear path
    st = smooth_perturbation(make_product(1, 1, 33), 0.04, seed=11)
    alpha = Coupling(1.0, 1.0)
    tc = topo_constants(st, alpha)
    G = st.G
    x, y = G.xy[:, 0], G.xy[:, 1]
    bump = bump_field(G)
    udot, mdot = 0.02 * bump * (x * x - y), 0.02 * bump * np.sin(2 * x) * y
    N = 9
    states = [st.shifted(t * udot, t * mdot) for t in np.linspace(0, 1, N)]
    M = k_energy_path(states, alpha, tc)
    direct = sigma_pairing(st, alpha, tc, udot, mdot)
    dM0 = (-3 * M[0] + 4 * M[1] - M[2]) / (2.0 / (N - 1))
    assert dM0 == pytest.approx(direct, abs=1e-5 + 1e-3 * abs(direct))


def test_k_energy_path_too_coarse():
    st = make_product(1, 1, 17)
    alpha = Coupling(1.0, 1.0)
    tc = topo_constants(st, alpha)
    with pytest.raises(PathTooCoarse):
        k_energy_path([st, st], alpha, tc)


def test_extremal_field_zero_on_square():
    st = make_product(1, 1, 33)
    alpha = Coupling(1.0, 0.1)
    tc = topo_constants(st, alpha)
    zeta = extremal_vector_field(st, alpha, tc)
    assert np.max(np.abs(zeta.a)) < 5 * st.G.h**2
