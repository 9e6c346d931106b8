"""Jacobian assembly, finite-difference consistency, adjoint structure."""

import numpy as np
import pytest

from ckym.errors import NotAtHYM
from ckym.linearize import (adjoint_check, assemble_jacobian, fd_consistency,
                            kernel_basis, smooth_test_vectors)
from ckym.system import Coupling, topo_constants

from conftest import bump_field, make_product, smooth_perturbation


def test_fd_consistency_linear_in_eps():
    st = smooth_perturbation(make_product(1, 1, 17), 0.05, seed=5)
    alpha = Coupling(1.0, 0.1)
    tc = topo_constants(st, alpha)
    v = smooth_test_vectors(st, 1, seed=2)[0]
    ratios = fd_consistency(st, alpha, tc, v, profile=True)
    assert ratios[0] < 1e-1
    # linear decrease: each decade of eps shrinks the ratio ~10x
    assert ratios[1] < 0.3 * ratios[0]
    assert ratios[2] < 0.3 * ratios[1]


def test_jacobian_kills_kernel():
    st = make_product(1, 1, 17)
    alpha = Coupling(1.0, 0.1)
    tc = topo_constants(st, alpha)
    J = assemble_jacobian(st, alpha, tc)
    K = kernel_basis(st)
    assert K.shape[1] == 4
    v = np.max(np.abs(J.matrix @ K))
    assert v < 1e-8


def test_adjoint_check_small_at_solution():
    st = make_product(1, 1, 33)
    for alpha in (Coupling(1.0, 0.1), Coupling(1.0, 1.0)):
        asym = adjoint_check(st, alpha)
        assert asym <= 10 * st.G.h


def test_adjoint_check_rejects_non_solution():
    st = make_product(1, 1, 33)
    G = st.G
    x, y = G.xy[:, 0], G.xy[:, 1]
    bad = st.with_fields(m=st.m + 48.0 * bump_field(G) * (x * x - y))
    with pytest.raises(NotAtHYM):
        adjoint_check(bad, Coupling(1.0, 0.1))


def test_adjoint_asymmetry_large_off_shell():
    # bypassing the guard, the asymmetry at the strong control does not decay
    # with the mesh (O(1)), while the on-shell value decays O(h^2): at n = 65
    # the ratio exceeds 10x
    alpha = Coupling(1.0, 1.0)
    vals = {}
    for n in (33, 65):
        st = make_product(1, 1, n)
        G = st.G
        x, y = G.xy[:, 0], G.xy[:, 1]
        bad = st.with_fields(m=st.m + 48.0 * bump_field(G) * (x * x - y))
        vals[n] = adjoint_check(bad, alpha, hym_tol=np.inf)
    # mesh-stable off-shell asymmetry
    assert abs(vals[65] - vals[33]) < 0.5 * max(vals.values())
    on = adjoint_check(make_product(1, 1, 65), alpha)
    assert vals[65] > 10 * on
