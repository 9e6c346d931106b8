"""Serialization: state files, run configuration, JSON/CSV reports.

State files are versioned plain text: a header naming the polytope facets,
bundle labels and grid resolution, followed by decimal dumps of the two grid
fields using repr(), which round-trips IEEE doubles exactly.  The grid node
order is the deterministic construction order of Grid(P, n), so a file pins
the state completely and parse(serialize(state)) reproduces every value.

Run configuration is TOML with sections [polytope], [bundle], [coupling],
[solver] and optional [geodesic], [flow]; unknown sections or keys are
rejected with a message naming the offender.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import bundle as bd
from . import geometry
from .errors import ConfigError, CorruptState, InvalidInput
from .polytope import Grid, Polytope, build_polytope
from .system import PairState

STATE_MAGIC = "ckym-state"
STATE_VERSION = 1


def save_state(path, state):
    """Write a pair state as a versioned plain-text file."""
    P, G = state.P, state.G
    lines = [f"{STATE_MAGIC} {STATE_VERSION}"]
    lines.append(f"polytope {P.nfacets}")
    for nu, lam in zip(P.nu, P.lam):
        lines.append(f"{int(nu[0])} {int(nu[1])} {float(lam)!r}")
    lines.append("bundle " + " ".join(str(int(c)) for c in state.bp.bd.labels))
    lines.append(f"grid {G.n}")
    lines.append(f"nnodes {G.nnodes}")
    lines.append("fields phi m")
    for a, b in zip(state.phi, state.m):
        lines.append(f"{float(a)!r} {float(b)!r}")
    lines.append("end")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_state(path):
    """Parse a state file back into a PairState; CorruptState on any defect."""
    try:
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
    except OSError as e:
        raise CorruptState(f"cannot read state file: {e}")
    try:
        magic, version = lines[0].split()
        if magic != STATE_MAGIC:
            raise CorruptState(f"bad magic {magic!r}")
        if int(version) != STATE_VERSION:
            raise CorruptState(f"unsupported version {version}")
        tag, nfacets = lines[1].split()
        assert tag == "polytope"
        nfacets = int(nfacets)
        facets = []
        for ln in lines[2 : 2 + nfacets]:
            a, b, lam = ln.split()
            facets.append(((int(a), int(b)), float(lam)))
        k = 2 + nfacets
        parts = lines[k].split()
        assert parts[0] == "bundle"
        labels = [int(c) for c in parts[1:]]
        assert lines[k + 1].split()[0] == "grid"
        n = int(lines[k + 1].split()[1])
        assert lines[k + 2].split()[0] == "nnodes"
        nnodes = int(lines[k + 2].split()[1])
        assert lines[k + 3] == "fields phi m"
        rows = lines[k + 4 : k + 4 + nnodes]
        if len(rows) != nnodes or lines[k + 4 + nnodes] != "end":
            raise CorruptState("truncated field block")
        vals = np.array([[float(t) for t in ln.split()] for ln in rows])
        if vals.shape != (nnodes, 2) or not np.all(np.isfinite(vals)):
            raise CorruptState("malformed field values")
    except CorruptState:
        raise
    except (ValueError, IndexError, AssertionError) as e:
        raise CorruptState(f"state file parse error: {e}")
    try:
        P = Polytope(facets)
        G = Grid(P, n)
    except InvalidInput as e:
        raise CorruptState(f"invalid geometry in state file: {e}")
    if G.nnodes != nnodes:
        raise CorruptState(
            f"node count mismatch: file has {nnodes}, grid has {G.nnodes}"
        )
    u = geometry.SymplecticPotential(P, G, vals[:, 0])
    bp = bd.BundlePotential(bd.BundleData(P, labels), vals[:, 1], G=G)
    return PairState(u, bp)


@dataclass
class RunConfig:
    """Validated run configuration for the CLI front end."""

    polytope_spec: object
    labels: list
    alpha0: float
    alpha1: float
    path: list = field(default_factory=list)  # continuation targets
    grid: int = 33
    max_iter: int = 60
    tol: float = 1e-8
    seed: int = 0
    geodesic: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)


def _take(table, section, key, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"[{section}] missing required key '{key}'")
        return default
    return table.pop(key)


def _reject_leftovers(table, section):
    if table:
        bad = sorted(table)[0]
        raise ConfigError(f"unknown key '{bad}' in [{section}]")


def parse_config(text):
    """Parse and validate a TOML config string into a RunConfig."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"TOML parse error: {e}")

    known = {"polytope", "bundle", "coupling", "solver", "geodesic", "flow"}
    for sec in doc:
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    for sec in ("polytope", "bundle", "coupling"):
        if sec not in doc:
            raise ConfigError(f"missing required section [{sec}]")

    pol = dict(doc["polytope"])
    model = _take(pol, "polytope", "model")
    facets = _take(pol, "polytope", "facets")
    _reject_leftovers(pol, "polytope")
    if (model is None) == (facets is None):
        raise ConfigError("[polytope] needs exactly one of 'model' or 'facets'")
    if facets is not None:
        try:
            spec = [((int(f[0]), int(f[1])), float(f[2])) for f in facets]
        except (TypeError, ValueError, IndexError):
            raise ConfigError("[polytope] facets must be [nu_x, nu_y, lam] triples")
    else:
        spec = str(model)

    bun = dict(doc["bundle"])
    degrees = _take(bun, "bundle", "degrees")
    labels = _take(bun, "bundle", "labels")
    _reject_leftovers(bun, "bundle")
    if (degrees is None) == (labels is None):
        raise ConfigError("[bundle] needs exactly one of 'degrees' or 'labels'")

    cpl = dict(doc["coupling"])
    alpha0 = float(_take(cpl, "coupling", "alpha0", required=True))
    alpha1 = float(_take(cpl, "coupling", "alpha1", required=True))
    path = _take(cpl, "coupling", "path", default=[])
    _reject_leftovers(cpl, "coupling")
    targets = []
    for leg in path:
        leg = dict(leg)
        t_a0 = float(_take(leg, "coupling.path", "alpha0", required=True))
        t_a1 = float(_take(leg, "coupling.path", "alpha1", required=True))
        scale = _take(leg, "coupling.path", "scale", default=[1.0, 1.0])
        _reject_leftovers(leg, "coupling.path")
        targets.append({"alpha0": t_a0, "alpha1": t_a1, "scale": tuple(scale)})

    sol = dict(doc.get("solver", {}))
    grid = int(_take(sol, "solver", "grid", default=33))
    max_iter = int(_take(sol, "solver", "max_iter", default=60))
    tol = float(_take(sol, "solver", "tol", default=1e-8))
    seed = int(_take(sol, "solver", "seed", default=0))
    _reject_leftovers(sol, "solver")

    geo = dict(doc.get("geodesic", {}))
    g_out = {}
    if geo:
        g_out["endpoint0"] = str(_take(geo, "geodesic", "endpoint0", required=True))
        g_out["endpoint1"] = str(_take(geo, "geodesic", "endpoint1", required=True))
        g_out["samples"] = int(_take(geo, "geodesic", "samples", default=33))
        _reject_leftovers(geo, "geodesic")

    flw = dict(doc.get("flow", {}))
    f_out = {}
    if flw:
        f_out["steps"] = int(_take(flw, "flow", "steps", default=400))
        f_out["dt"] = float(_take(flw, "flow", "dt", default=1.0))
        f_out["grad_tol"] = float(_take(flw, "flow", "grad_tol", default=1e-8))
        _reject_leftovers(flw, "flow")

    # defer label count validation until the polytope is built
    cfg = RunConfig(
        polytope_spec=spec,
        labels=list(degrees) if degrees is not None else list(labels),
        alpha0=alpha0,
        alpha1=alpha1,
        path=targets,
        grid=grid,
        max_iter=max_iter,
        tol=tol,
        seed=seed,
        geodesic=g_out,
        flow=f_out,
    )
    cfg._labels_are_degrees = degrees is not None
    return cfg


def load_config(path):
    try:
        with open(path) as f:
            return parse_config(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}")


def build_reference_state(cfg):
    """Polytope + grid + bundle from a config; the solver seed state."""
    P = build_polytope(cfg.polytope_spec)
    G = Grid(P, cfg.grid)
    if getattr(cfg, "_labels_are_degrees", False):
        if len(cfg.labels) != 2:
            raise ConfigError("[bundle] degrees must be a pair [p, q]")
        data = bd.BundleData.from_degrees(P, *cfg.labels)
    else:
        if len(cfg.labels) != P.nfacets:
            raise ConfigError(
                f"[bundle] needs {P.nfacets} labels, got {len(cfg.labels)}"
            )
        data = bd.BundleData(P, cfg.labels)
    return PairState.reference(P, G, data)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_json_report(path, payload):
    """Deterministic JSON: sorted keys, fixed formatting."""
    with open(path, "w") as f:
        json.dump(_clean(payload), f, indent=2, sort_keys=True)
        f.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                         for v in row])


def write_field_dump(path, G, values):
    """Plain-text matrix dump of a grid scalar with geometry header.

    Header lines carry nx, ny, h and the bounding box; the matrix has one
    row per lattice y-line, 'nan' marking lattice points outside the grid.
    """
    i0 = int(np.min(G.ij[:, 0]))
    i1 = int(np.max(G.ij[:, 0]))
    j0 = int(np.min(G.ij[:, 1]))
    j1 = int(np.max(G.ij[:, 1]))
    nx, ny = i1 - i0 + 1, j1 - j0 + 1
    xmin, ymin, xmax, ymax = G.P.bounding_box()
    mat = np.full((ny, nx), np.nan)
    for k, (i, j) in enumerate(G.ij):
        mat[j - j0, i - i0] = values[k]
    with open(path, "w") as f:
        f.write(f"# nx {nx}\n# ny {ny}\n# h {G.h!r}\n")
        f.write(f"# bbox {xmin!r} {ymin!r} {xmax!r} {ymax!r}\n")
        for row in mat:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")
