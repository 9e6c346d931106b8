"""Delzant moment polytopes of toric surfaces, interior grids, quadrature.

A polytope is stored by its facet data (nu_i, lambda_i) with facet function
l_i(x) = <nu_i, x> + lambda_i, positive inside.  The normals are primitive
integer vectors pointing inward.  Validation (boundedness, Delzant
unimodularity at vertices) runs on construction and uses exact integer
arithmetic on the normals.

The Grid holds the interior lattice nodes at spacing h together with
quadrature weights: each node owns the area of its h-cell clipped to the
polytope, and slivers belonging to exterior lattice points are reassigned to
the nearest interior node so the weights sum to the exact area.
"""

import math
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import Polygon, box

from .errors import MissingTrace, NonDelzant, Unbounded

# nodes must satisfy l_i > NODE_TOL to count as interior
NODE_TOL = 1e-9


class Polytope:
    """Validated Delzant polytope in the plane.

    Parameters
    ----------
    facets : list of (normal, offset)
        normal is an integer 2-vector, offset a real number.  The facet
        function is l_i(x) = <normal, x> + offset and the polytope is the
        region where every l_i is nonnegative.
    """

    def __init__(self, facets):
        nu = np.array([f[0] for f in facets], dtype=np.int64)
        lam = np.array([float(f[1]) for f in facets], dtype=float)
        if nu.ndim != 2 or nu.shape[1] != 2 or len(nu) < 3:
            raise NonDelzant("need at least three integer facet normals")
        for v in nu:
            if math.gcd(int(v[0]), int(v[1])) != 1:
                raise NonDelzant(f"normal {v} is not primitive")
        self.nu = nu
        self.lam = lam
        self._check_bounded()
        self.vertices = self._enumerate_vertices()
        self.polygon = Polygon(self.vertices)
        self.area = self.polygon.area
        self.edge_lengths = self._edge_lengths()

    # -- validation ------------------------------------------------------

    def _check_bounded(self):
        # The region is bounded iff the recession cone {d : <nu_i, d> >= 0}
        # is trivial.  In the plane every extreme ray of that cone is
        # orthogonal to some normal, so checking the rotated normals is exact.
        for v in self.nu:
            for d in ((-v[1], v[0]), (v[1], -v[0])):
                if all(int(n[0]) * d[0] + int(n[1]) * d[1] >= 0 for n in self.nu):
                    raise Unbounded(f"recession direction {d}")

    def _enumerate_vertices(self):
        nu, lam = self.nu, self.lam
        k = len(nu)
        cands = []
        for i in range(k):
            for j in range(i + 1, k):
                det = int(nu[i, 0]) * int(nu[j, 1]) - int(nu[i, 1]) * int(nu[j, 0])
                if det == 0:
                    continue
                x = (-lam[i] * nu[j, 1] + lam[j] * nu[i, 1]) / det
                y = (lam[i] * nu[j, 0] - lam[j] * nu[i, 0]) / det
                cands.append((x, y, i, j))
        scale = 1.0 + float(np.max(np.abs(lam)))
        verts = []
        for x, y, i, j in cands:
            l = nu @ (x, y) + lam
            if np.min(l) < -1e-9 * scale:
                continue
            if any(abs(x - vx) + abs(y - vy) < 1e-9 * scale for vx, vy, _ in verts):
                continue
            active = np.nonzero(np.abs(l) <= 1e-9 * scale)[0]
            if len(active) != 2:
                raise NonDelzant(f"vertex ({x},{y}) lies on {len(active)} facets")
            a, b = active
            det = int(nu[a, 0]) * int(nu[b, 1]) - int(nu[a, 1]) * int(nu[b, 0])
            if abs(det) != 1:
                raise NonDelzant(f"normals {nu[a]}, {nu[b]} at vertex ({x},{y}) have det {det}")
            verts.append((x, y, frozenset((int(a), int(b)))))
        if len(verts) < 3:
            raise NonDelzant("facet data does not cut out a polygon")
        cx = sum(v[0] for v in verts) / len(verts)
        cy = sum(v[1] for v in verts) / len(verts)
        verts.sort(key=lambda v: math.atan2(v[1] - cy, v[0] - cx))
        self._vertex_facets = [v[2] for v in verts]
        return np.array([(v[0], v[1]) for v in verts])

    def _edge_lengths(self):
        nv = len(self.vertices)
        lengths = np.zeros(len(self.nu))
        for e in range(nv):
            fa = self._vertex_facets[e]
            fb = self._vertex_facets[(e + 1) % nv]
            shared = fa & fb
            if len(shared) != 1:
                raise NonDelzant("adjacent vertices do not share exactly one facet")
            (i,) = shared
            lengths[i] = float(
                np.linalg.norm(self.vertices[(e + 1) % nv] - self.vertices[e])
            )
        return lengths

    # -- queries ---------------------------------------------------------

    @property
    def nfacets(self):
        return len(self.nu)

    def facet_values(self, xy):
        """l_i at points xy of shape (..., 2); returns shape (..., nfacets)."""
        return np.asarray(xy) @ self.nu.T.astype(float) + self.lam

    def contains(self, xy, tol=NODE_TOL):
        return np.min(self.facet_values(xy), axis=-1) > tol

    def bounding_box(self):
        v = self.vertices
        return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()

    def scaled(self, sx, sy):
        """Rescale the polytope by diag(sx, sy), keeping integer normals.

        The facet normals are unchanged; offsets are chosen so the vertex set
        maps by the same diagonal scaling.  Only valid when every normal is
        axis-aligned or the scaling is isotropic; otherwise the image of the
        polytope under diag(sx, sy) is still a polygon with the same normals
        only if each facet stays parallel, which requires sx = sy for slanted
        facets.
        """
        facets = []
        for v, l in zip(self.nu, self.lam):
            if v[0] != 0 and v[1] != 0 and not math.isclose(sx, sy):
                raise NonDelzant("anisotropic scaling of a slanted facet")
            s = sx if v[0] != 0 else sy
            if v[0] != 0 and v[1] != 0:
                s = sx
            facets.append(((int(v[0]), int(v[1])), float(l) * s))
        return Polytope(facets)

    def __repr__(self):
        fs = ", ".join(f"({int(v[0])},{int(v[1])};{l:g})" for v, l in zip(self.nu, self.lam))
        return f"Polytope[{fs}]"


def build_polytope(spec, **params):
    """Build a validated polytope from a facet list or a named model.

    Accepted named forms: "square(a,b)" (rectangle [0,a]x[0,b]),
    "triangle(a)" (simplex x>=0, x1+x2<=a), "trapezoid(t,s)"
    (x>=0, x1<=t, x1+x2<=s with s > t > 0).  A bare name uses `params`
    ("size" tuple) or defaults.
    """
    if isinstance(spec, str):
        name, args = _parse_named(spec, params)
        if name == "square":
            a, b = (args + [1.0, 1.0])[:2] if args else list(params.get("size", (1.0, 1.0)))
            facets = [((1, 0), 0.0), ((0, 1), 0.0), ((-1, 0), float(a)), ((0, -1), float(b))]
        elif name == "triangle":
            a = args[0] if args else float(params.get("size", (1.0,))[0])
            facets = [((1, 0), 0.0), ((0, 1), 0.0), ((-1, -1), float(a))]
        elif name == "trapezoid":
            t, s = (args + [1.0, 2.0])[:2] if args else (1.0, 2.0)
            facets = [((1, 0), 0.0), ((0, 1), 0.0), ((-1, 0), float(t)), ((-1, -1), float(s))]
        else:
            raise NonDelzant(f"unknown model name {name!r}")
        return Polytope(facets)
    return Polytope(list(spec))


def _parse_named(spec, params):
    s = spec.strip()
    if "(" in s:
        name, rest = s.split("(", 1)
        rest = rest.rstrip(") ")
        args = [float(t) for t in rest.split(",") if t.strip()]
        return name.strip(), args
    return s, []


class Grid:
    """Interior lattice nodes of a polytope at spacing h = 1/n.

    Nodes are the points (i*h, j*h) strictly inside P.  Refining n -> 2n
    nests the node set.  Quadrature weights are exact clipped-cell areas;
    cell area belonging to exterior lattice points is reassigned to the
    nearest interior node, so sum(w) equals area(P) to polygon-clipping
    accuracy.
    """

    def __init__(self, P, n):
        if n < 4:
            raise ValueError("grid too coarse: need n >= 4")
        self.P = P
        self.n = int(n)
        self.h = 1.0 / float(n)
        self._build_nodes()
        self._build_weights()
        self._tree = cKDTree(self.xy)

    def _build_nodes(self):
        P, h = self.P, self.h
        xmin, ymin, xmax, ymax = P.bounding_box()
        i0, i1 = math.floor(xmin / h) - 1, math.ceil(xmax / h) + 1
        j0, j1 = math.floor(ymin / h) - 1, math.ceil(ymax / h) + 1
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        ij = np.stack([ii.ravel(), jj.ravel()], axis=1)
        xy = ij * h
        lv = P.facet_values(xy)
        inside = np.min(lv, axis=1) > NODE_TOL
        self.ij = ij[inside]
        self.xy = xy[inside]
        self.lv = lv[inside]
        self.nnodes = len(self.ij)
        self.index = {(int(i), int(j)): k for k, (i, j) in enumerate(self.ij)}
        self._lattice_range = (i0, i1, j0, j1)

    def _build_weights(self):
        P, h = self.P, self.h
        w = np.zeros(self.nnodes)
        orphan_area = []
        orphan_pt = []
        i0, i1, j0, j1 = self._lattice_range
        corners = np.array([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]) * h
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                c = np.array([i * h, j * h])
                lv = P.facet_values(c + corners)
                if np.min(lv) >= 0.0:
                    area, cen = h * h, c
                elif np.max(np.min(lv, axis=1)) < 0.0 and np.min(
                    P.facet_values(c)
                ) < -h * np.max(np.sum(np.abs(P.nu), axis=1)):
                    continue  # cell safely outside
                else:
                    cell = box(c[0] - h / 2, c[1] - h / 2, c[0] + h / 2, c[1] + h / 2)
                    clip = cell.intersection(P.polygon)
                    if clip.is_empty or clip.area <= 0.0:
                        continue
                    area, cen = clip.area, np.array([clip.centroid.x, clip.centroid.y])
                k = self.index.get((i, j))
                if k is None:
                    orphan_area.append(area)
                    orphan_pt.append(cen)
                else:
                    w[k] += area
        if orphan_pt:
            tree = cKDTree(self.xy)
            _, near = tree.query(np.array(orphan_pt))
            np.add.at(w, near, np.array(orphan_area))
        self.w = w

    def has_node(self, i, j):
        return (i, j) in self.index

    def nearest_node(self, xy):
        _, k = self._tree.query(np.asarray(xy))
        return k


def integrate(field, P, G):
    """Quadrature approximation of the integral of a grid scalar over P.

    Compensated (exact) summation of w*field for run-to-run reproducibility.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (G.nnodes,):
        raise ValueError(f"field shape {field.shape} != ({G.nnodes},)")
    return math.fsum(G.w * field)


def boundary_flux(traces, P, G=None):
    """Outward flux of a vector field through the boundary of P.

    `traces` gives the constant value of <sigma, nu_i> on facet i, either as
    a sequence indexed like P.nu or a dict {facet index: value}.  The outward
    unit normal on facet i is -nu_i/|nu_i|, so the flux contribution is
    -trace_i * length_i / |nu_i|.  Exact for per-facet-constant traces.
    """
    k = P.nfacets
    if isinstance(traces, dict):
        vals = []
        for i in range(k):
            if i not in traces:
                raise MissingTrace(f"no trace for facet {i}")
            vals.append(float(traces[i]))
    else:
        vals = [float(t) for t in traces]
        if len(vals) != k:
            raise MissingTrace(f"got {len(vals)} traces for {k} facets")
    norms = np.linalg.norm(P.nu.astype(float), axis=1)
    return math.fsum(-vals[i] * P.edge_lengths[i] / norms[i] for i in range(k))
