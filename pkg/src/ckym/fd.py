"""Sparse finite-difference operators on polytope grids.

Builds first and second derivative matrices (Dx, Dy, Dxx, Dyy, Dxy) acting on
grid scalar fields.  Interior nodes get centered second-order stencils; nodes
missing a neighbour fall back to one-sided second-order stencils along the
axis; the few nodes near acute corners where no axis-aligned stencil fits use
a local least-squares quadratic fit over nearby nodes.  All operators are
exact on quadratic polynomials, which keeps the product-model oracles at
round-off level.
"""

import numpy as np
import scipy.sparse as sp

# one-sided stencils, offsets measured in +direction steps
_D1_ONESIDED = ([0, 1, 2], [-1.5, 2.0, -0.5])
_D2_ONESIDED = ([0, 1, 2, 3], [2.0, -5.0, 4.0, -1.0])


class Operators:
    """Container for the derivative matrices of one grid."""

    __slots__ = ("Dx", "Dy", "Dxx", "Dyy", "Dxy", "lsq_nodes")

    def __init__(self, Dx, Dy, Dxx, Dyy, Dxy, lsq_nodes):
        self.Dx, self.Dy = Dx, Dy
        self.Dxx, self.Dyy, self.Dxy = Dxx, Dyy, Dxy
        self.lsq_nodes = lsq_nodes


def _axis_rows(G, axis):
    """Stencil rows for first and second derivative along one axis.

    Returns (rows1, rows2, failed): lists of (cols, coeffs) per node, with
    None entries for nodes needing the least-squares fallback.
    """
    h = G.h
    rows1, rows2, failed = [], [], []
    for k in range(G.nnodes):
        i, j = int(G.ij[k, 0]), int(G.ij[k, 1])

        def nb(s):
            if axis == 0:
                return G.index.get((i + s, j))
            return G.index.get((i, j + s))

        km1, kp1 = nb(-1), nb(1)
        # first derivative
        if km1 is not None and kp1 is not None:
            rows1.append(([km1, kp1], [-0.5 / h, 0.5 / h]))
        else:
            for sgn in (1, -1):
                cols = [nb(sgn * o) for o in _D1_ONESIDED[0]]
                if all(c is not None for c in cols):
                    rows1.append((cols, [c * sgn / h for c in _D1_ONESIDED[1]]))
                    break
            else:
                rows1.append(None)
        # second derivative
        if km1 is not None and kp1 is not None:
            rows2.append(([km1, nb(0), kp1], [1.0 / h**2, -2.0 / h**2, 1.0 / h**2]))
        else:
            for sgn in (1, -1):
                cols = [nb(sgn * o) for o in _D2_ONESIDED[0]]
                if all(c is not None for c in cols):
                    rows2.append((cols, [c / h**2 for c in _D2_ONESIDED[1]]))
                    break
            else:
                rows2.append(None)
        if rows1[-1] is None or rows2[-1] is None:
            failed.append(k)
    return rows1, rows2, failed


def _lsq_functionals(G, k):
    """Derivative functionals at node k from a quadratic least-squares fit.

    Fits f ~ b0 + b1 dx + b2 dy + b3 dx^2 + b4 dx dy + b5 dy^2 over nearby
    nodes; returns cols and one coefficient row per derivative
    (fx, fy, fxx, fxy, fyy).  Exact for quadratics by construction.
    """
    h = G.h
    r = 2.6 * h
    while True:
        cols = G._tree.query_ball_point(G.xy[k], r)
        if len(cols) >= 8:
            break
        r *= 1.4
    cols = sorted(cols)
    d = (G.xy[cols] - G.xy[k]) / h
    A = np.stack(
        [np.ones(len(cols)), d[:, 0], d[:, 1], d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2],
        axis=1,
    )
    # weighted fit: nearer nodes count more
    wts = 1.0 / (1.0 + np.sum(d * d, axis=1))
    Aw = A * wts[:, None]
    # pinv rows give coefficient extraction functionals
    pinv = np.linalg.pinv(Aw) * wts[None, :]
    return cols, {
        "fx": pinv[1] / h,
        "fy": pinv[2] / h,
        "fxx": 2.0 * pinv[3] / h**2,
        "fxy": pinv[4] / h**2,
        "fyy": 2.0 * pinv[5] / h**2,
    }


def _assemble(nnodes, rows):
    data, ri, ci = [], [], []
    for k, row in enumerate(rows):
        cols, coeffs = row
        ri.extend([k] * len(cols))
        ci.extend(cols)
        data.extend(coeffs)
    return sp.csr_matrix((data, (ri, ci)), shape=(nnodes, nnodes))


def build_operators(G):
    """Build all derivative operators for grid G (cached on the grid)."""
    cached = getattr(G, "_ops", None)
    if cached is not None:
        return cached
    rx1, rx2, fx = _axis_rows(G, 0)
    ry1, ry2, fy = _axis_rows(G, 1)
    lsq_nodes = sorted(set(fx) | set(fy))
    lsq = {k: _lsq_functionals(G, k) for k in lsq_nodes}
    for k in lsq_nodes:
        cols, fns = lsq[k]
        if rx1[k] is None:
            rx1[k] = (cols, fns["fx"])
        if rx2[k] is None:
            rx2[k] = (cols, fns["fxx"])
        if ry1[k] is None:
            ry1[k] = (cols, fns["fy"])
        if ry2[k] is None:
            ry2[k] = (cols, fns["fyy"])
    Dx = _assemble(G.nnodes, rx1)
    Dy = _assemble(G.nnodes, ry1)
    Dxx = _assemble(G.nnodes, rx2)
    Dyy = _assemble(G.nnodes, ry2)
    Dxy = ((Dx @ Dy + Dy @ Dx) * 0.5).tocsr()
    if lsq_nodes:
        # replace composed rows at fallback nodes with the direct functional
        Dxy = Dxy.tolil()
        for k in lsq_nodes:
            cols, fns = lsq[k]
            Dxy.rows[k] = list(cols)
            Dxy.data[k] = list(fns["fxy"])
        Dxy = Dxy.tocsr()
    ops = Operators(Dx, Dy, Dxx, Dyy, Dxy, lsq_nodes)
    G._ops = ops
    return ops


def gradient(ops, f):
    """Node-wise gradient, shape (nnodes, 2)."""
    return np.stack([ops.Dx @ f, ops.Dy @ f], axis=1)


def hessian(ops, f):
    """Node-wise Hessian, shape (nnodes, 2, 2), symmetric by construction."""
    fxx = ops.Dxx @ f
    fyy = ops.Dyy @ f
    fxy = ops.Dxy @ f
    H = np.empty((len(f), 2, 2))
    H[:, 0, 0] = fxx
    H[:, 1, 1] = fyy
    H[:, 0, 1] = H[:, 1, 0] = fxy
    return H


def divergence(ops, v):
    """Node-wise divergence of a (nnodes, 2) vector field."""
    return ops.Dx @ v[:, 0] + ops.Dy @ v[:, 1]


def potential_fit(G, V):
    """Scalar potential g minimizing the weighted misfit ||grad g - V||.

    Solves the normal equations of the quadrature-weighted least-squares
    problem with a mean-zero constraint (bordered sparse solve, factorization
    cached on the grid).  Exact when V is a discrete gradient.
    """
    ops = build_operators(G)
    solver = getattr(G, "_potfit", None)
    if solver is None:
        import scipy.sparse.linalg as spla

        W = sp.diags(G.w)
        A = (ops.Dx.T @ W @ ops.Dx + ops.Dy.T @ W @ ops.Dy).tocsc()
        M = G.nnodes
        bordered = sp.bmat(
            [[A, G.w[:, None]], [G.w[None, :], None]], format="csc"
        )
        solver = spla.splu(bordered)
        G._potfit = solver
    rhs = ops.Dx.T @ (G.w * V[:, 0]) + ops.Dy.T @ (G.w * V[:, 1])
    sol = solver.solve(np.concatenate([rhs, [0.0]]))
    return sol[:-1]
