"""Bundle data, curvature matrix and the derived curvature scalars."""

import numpy as np
import pytest

from ckym.bundle import (BundleData, curvature_matrix, det_B, lambda_F,
                         pointwise_norm_F, topform_FF)
from ckym.errors import NegativeNorm
from ckym.polytope import Grid, boundary_flux, build_polytope, integrate
from ckym.system import PairState

from conftest import bump_field, make_product


def test_from_degrees_labels():
    P = build_polytope("square(1,1)")
    data = BundleData.from_degrees(P, 1, 2)
    got = {tuple(nu): c for nu, c in zip(P.nu, data.labels)}
    assert got[(1, 0)] == 0 and got[(0, 1)] == 0
    assert got[(-1, 0)] == 1 and got[(0, -1)] == 2


def test_label_count_validated():
    P = build_polytope("square(1,1)")
    with pytest.raises(ValueError):
        BundleData(P, (1, 2, 3))


def test_product_curvature_matrix_constant():
    # sigma_ref = (p x, q y) on the unit square: B = diag(p, q) exactly
    for p, q in ((1, 0), (1, 1), (1, 2)):
        st = make_product(p, q, 17)
        _, _, B = st.fields()
        assert np.max(np.abs(B[:, 0, 0] - p)) < 1e-9
        assert np.max(np.abs(B[:, 1, 1] - q)) < 1e-9
        assert np.max(np.abs(B[:, 0, 1])) < 1e-9
        assert np.max(np.abs(lambda_F(B) - (p + q))) < 1e-9
        assert np.max(np.abs(topform_FF(B) - 4 * p * q)) < 1e-9


def test_chern_weil_flux_matches_trace_integral():
    # int tr B = boundary flux of sigma: discrete Chern-Weil consistency
    st = make_product(1, 2, 33)
    P, G = st.P, st.G
    _, _, B = st.fields()
    flux = boundary_flux(dict(enumerate(-st.bp.bd.labels.astype(float))), P, G)
    assert integrate(lambda_F(B), P, G) == pytest.approx(flux, abs=5 * G.h**2)


def test_flux_invariant_under_m_perturbation():
    st = make_product(1, 1, 33)
    P, G = st.P, st.G
    x, y = G.xy[:, 0], G.xy[:, 1]
    st2 = st.with_fields(m=st.m + 0.05 * bump_field(G) * (x * x - y))
    _, _, B = st.fields()
    _, _, B2 = st2.fields()
    drift = abs(integrate(lambda_F(B2), P, G) - integrate(lambda_F(B), P, G))
    assert drift < 5 * G.h**2


def test_pointwise_norm_nonnegative():
    st = make_product(1, 2, 17)
    _, _, B = st.fields()
    f2 = pointwise_norm_F(B)
    assert np.min(f2) > -1e-10
    assert np.max(np.abs(f2 - ((1 + 2) ** 2 - 2 * 1 * 2))) < 1e-8


def test_trivial_bundle_zero_curvature():
    P = build_polytope("square(1,1)")
    G = Grid(P, 17)
    st = PairState.reference(P, G, BundleData(P, (0, 0, 0, 0)))
    _, _, B = st.fields()
    assert np.max(np.abs(B)) < 1e-12
    assert np.max(np.abs(det_B(B))) < 1e-12


def test_general_polytope_sigma_ref_traces():
    # on the trapezoid the closed-form sigma_ref must reproduce facet traces
    P = build_polytope("trapezoid(1,2)")
    G = Grid(P, 33)
    data = BundleData(P, (0, 0, 1, 1))
    sig = data.sigma_ref(G)
    # near each facet, <sigma, nu_i> approaches -c_i
    for i in range(P.nfacets):
        near = G.lv[:, i] < 3 * G.h
        if not np.any(near):
            continue
        vals = sig[near] @ P.nu[i].astype(float)
        assert np.max(np.abs(vals - (-data.labels[i]))) < 0.2
