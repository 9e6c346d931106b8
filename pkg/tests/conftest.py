"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from ckym.bundle import BundleData
from ckym.polytope import Grid, build_polytope
from ckym.system import Coupling, PairState, topo_constants


def make_product(p=1, q=1, n=33, a=1.0, b=1.0):
    """Reference pair state on [0,a]x[0,b] with degrees (p, q): exact solution."""
    P = build_polytope(f"square({a},{b})")
    G = Grid(P, n)
    return PairState.reference(P, G, BundleData.from_degrees(P, p, q))


def bump_field(G):
    """Smooth facet-vanishing bump, normalized to max 1."""
    bump = np.prod(G.lv, axis=1)
    return bump / np.max(bump)


def smooth_perturbation(state, amp=0.05, seed=0):
    """Deterministic C2-small same-class perturbation of both potentials."""
    G = state.G
    rng = np.random.default_rng(seed)
    x, y = G.xy[:, 0], G.xy[:, 1]
    bump = bump_field(G)
    c = rng.uniform(-1.0, 1.0, size=6)
    dphi = amp * bump * (c[0] * x + c[1] * y + c[2] * x * y)
    dm = amp * bump * (c[3] * x + c[4] * y + c[5] * (x * x - y * y))
    return state.shifted(dphi, dm)


@pytest.fixture(scope="session")
def product_11_n33():
    return make_product(1, 1, 33)


@pytest.fixture(scope="session")
def product_12_n33():
    return make_product(1, 2, 33)


@pytest.fixture
def alpha_default():
    return Coupling(1.0, 0.1)
