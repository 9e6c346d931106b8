"""Command-line front end: run orchestration and report serialization.

Subcommands: solve, continue, invariants, geodesic, flow, check.  Exit codes:
0 success, 1 non-convergence (or a failed verdict), 2 invalid input.  All
JSON reports are deterministic for a fixed config and seed except for the
timestamp field.
"""

import argparse
import datetime
import os
import sys

import numpy as np

from . import stateio
from .errors import (
    CkymError,
    InvalidInput,
    MaxIterations,
    StepBudgetExhausted,
    StepUnderflow,
)
from .system import Coupling, PairState, identity_check, residual_norms, topo_constants


def _timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="ckym",
        description="coupled Kaehler-Yang-Mills solver on toric surfaces",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "continue", "invariants", "geodesic", "flow", "check"):
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="TOML run configuration")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")
        p.add_argument("--grid", type=int, metavar="N", help="override grid resolution")
        p.add_argument("--seed", type=int, metavar="U64", help="override RNG seed")
        p.add_argument("--tol", type=float, metavar="FLOAT", help="override solve tolerance")
        if name == "check":
            p.add_argument("state", metavar="STATEFILE", help="state file to audit")
    return ap.parse_args(argv)


def _load(args, need_config=True):
    if args.config is None:
        if need_config:
            raise InvalidInput("--config is required for this subcommand")
        return None
    cfg = stateio.load_config(args.config)
    if args.grid is not None:
        cfg.grid = int(args.grid)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.tol is not None:
        cfg.tol = float(args.tol)
    return cfg


def _perturbed_seed_state(ref, seed):
    """Deterministic smooth perturbation used by check/invariant drift tests."""
    G = ref.G
    rng = np.random.default_rng(seed)
    x, y = G.xy[:, 0], G.xy[:, 1]
    bump = np.prod(G.lv, axis=1)
    bump = bump / np.max(bump)
    c = rng.uniform(-1.0, 1.0, size=6)
    dphi = 0.05 * bump * (c[0] * x + c[1] * y + c[2] * x * y)
    dm = 0.05 * bump * (c[3] * x + c[4] * y + c[5] * (x * x - y * y))
    return ref.shifted(dphi, dm)


def _report_path(out, name):
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def cmd_solve(args):
    from .solver import NewtonOptions, newton_solve

    cfg = _load(args)
    ref = stateio.build_reference_state(cfg)
    alpha = Coupling(cfg.alpha0, cfg.alpha1)
    opts = NewtonOptions(max_iter=cfg.max_iter, tol_linf=cfg.tol)
    code = 0
    try:
        report, _ = newton_solve(ref, alpha, opts=opts)
    except MaxIterations as e:
        report = e.report
        code = 1
    payload = report.as_dict()
    payload["timestamp"] = _timestamp()
    payload["config"] = {
        "alpha0": cfg.alpha0, "alpha1": cfg.alpha1,
        "grid": cfg.grid, "seed": cfg.seed, "tol": cfg.tol,
    }
    stateio.write_json_report(_report_path(args.out, "report.json"), payload)
    stateio.write_csv(
        _report_path(args.out, "history.csv"),
        ["iteration", "residual_linf", "residual_l2", "damping"],
        report.history,
    )
    if report.state is not None:
        stateio.save_state(_report_path(args.out, "solution.state"), report.state)
        _, S, B = report.state.fields()
        stateio.write_field_dump(_report_path(args.out, "scalar_curvature.txt"),
                                 report.state.G, S)
    return code


def cmd_continue(args):
    from .solver import (ContinuationPath, ContinuationTarget, NewtonOptions,
                         continuation_run)

    cfg = _load(args)
    ref = stateio.build_reference_state(cfg)
    if not cfg.path:
        raise InvalidInput("[coupling] path is required for 'continue'")
    targets = [
        ContinuationTarget(Coupling(t["alpha0"], t["alpha1"]), t["scale"])
        for t in cfg.path
    ]
    path = ContinuationPath(
        targets, newton=NewtonOptions(max_iter=cfg.max_iter, tol_linf=cfg.tol)
    )
    code = 0
    try:
        reports = continuation_run(path, ref, alpha0=Coupling(cfg.alpha0, cfg.alpha1))
    except StepUnderflow as e:
        reports = []
        code = 1
        print(f"continuation failed: {e}", file=sys.stderr)
    if reports and not reports[-1].converged:
        code = 1
    payload = {
        "legs": [r.as_dict() for r in reports],
        "timestamp": _timestamp(),
    }
    stateio.write_json_report(_report_path(args.out, "continuation.json"), payload)
    if reports and reports[-1].state is not None:
        stateio.save_state(_report_path(args.out, "solution.state"), reports[-1].state)
    return code


def cmd_invariants(args):
    from .invariants import (ToricVectorField, coupling_inequality_holds,
                             cym_functional, futaki)

    cfg = _load(args)
    state = stateio.build_reference_state(cfg)
    alpha = Coupling(cfg.alpha0, cfg.alpha1)
    tc = topo_constants(state, alpha)
    gens = {"x1": ToricVectorField((1.0, 0.0)), "x2": ToricVectorField((0.0, 1.0))}
    payload = {
        "z": tc.z,
        "S_hat": tc.S_hat,
        "c_hat": tc.c_hat,
        "c": tc.c,
        "vol": tc.vol,
        "CYM": cym_functional(state, alpha, tc),
        "coupling_inequality": coupling_inequality_holds(alpha, tc),
        "futaki": {k: futaki(state, alpha, tc, zeta) for k, zeta in gens.items()},
        "timestamp": _timestamp(),
    }
    stateio.write_json_report(_report_path(args.out, "invariants.json"), payload)
    return 0


def cmd_geodesic(args):
    from .geodesics import convexity_report, coupled_geodesic

    cfg = _load(args)
    if not cfg.geodesic:
        raise InvalidInput("[geodesic] section is required for 'geodesic'")
    b0 = stateio.load_state(cfg.geodesic["endpoint0"])
    b1 = stateio.load_state(cfg.geodesic["endpoint1"])
    alpha = Coupling(cfg.alpha0, cfg.alpha1)
    tc = topo_constants(b0, alpha)
    N = cfg.geodesic["samples"]
    path = coupled_geodesic(b0, b1, N)
    rep = convexity_report(path, alpha, tc)
    dt = 1.0 / (N - 1)
    M = rep.energy
    dM = np.gradient(M, dt)
    d2M = np.zeros(N)
    d2M[1:-1] = (M[2:] - 2 * M[1:-1] + M[:-2]) / dt**2
    rows = [(float(t), M[k], dM[k], d2M[k]) for k, t in enumerate(rep.t)]
    stateio.write_csv(_report_path(args.out, "geodesic.csv"),
                      ["t", "energy", "denergy", "d2energy"], rows)
    verdict = "PASS" if rep.passed else "FAIL"
    payload = {
        "min_second_difference": rep.min_second_difference,
        "threshold": rep.threshold,
        "verdict": verdict,
        "samples": N,
        "timestamp": _timestamp(),
    }
    stateio.write_json_report(_report_path(args.out, "geodesic.json"), payload)
    print(f"convexity: {verdict} (min second difference "
          f"{rep.min_second_difference:.6e}, threshold {rep.threshold:.1e})")
    return 0 if rep.passed else 1


def cmd_flow(args):
    from .invariants import cym_functional
    from .solver import gradient_flow

    cfg = _load(args)
    ref = stateio.build_reference_state(cfg)
    state = _perturbed_seed_state(ref, cfg.seed) if cfg.seed else ref
    alpha = Coupling(cfg.alpha0, cfg.alpha1)
    steps = cfg.flow.get("steps", 400)
    dt = cfg.flow.get("dt", 1.0)
    grad_tol = cfg.flow.get("grad_tol", 1e-8)
    code = 0
    try:
        traj, energies = gradient_flow(state, alpha, steps=steps, dt=dt,
                                       grad_tol=grad_tol)
    except StepBudgetExhausted as e:
        traj, energies = e.trajectory
        code = 1
    rows = [(k, float(E)) for k, E in enumerate(energies)]
    stateio.write_csv(_report_path(args.out, "flow.csv"), ["step", "energy"], rows)
    tc = topo_constants(traj[-1], alpha)
    payload = {
        "steps_accepted": len(energies) - 1,
        "energy_initial": float(energies[0]),
        "energy_final": float(energies[-1]),
        "monotone": bool(np.all(np.diff(energies) <= 1e-14)),
        "energy_terminal_reference": float(cym_functional(traj[-1], alpha, tc)),
        "timestamp": _timestamp(),
    }
    stateio.write_json_report(_report_path(args.out, "flow.json"), payload)
    stateio.save_state(_report_path(args.out, "terminal.state"), traj[-1])
    return code


def _check_rows(state, alpha, seed):
    """PASS/FAIL audit rows for a loaded state."""
    from .invariants import ToricVectorField, futaki
    from .polytope import integrate
    from .system import residual

    rows = []
    trivial = not np.any(state.bp.bd.labels != 0)

    def row(name, fn, vacuous=False):
        if vacuous:
            rows.append((name, "vacuous-PASS", ""))
            return
        try:
            ok, detail = fn()
        except CkymError as e:
            ok, detail = False, f"{type(e).__name__}: {e}"
        rows.append((name, "PASS" if ok else "FAIL", detail))

    h2 = state.G.h ** 2

    def finite():
        ok = bool(np.all(np.isfinite(state.phi)) and np.all(np.isfinite(state.m)))
        return ok, ""

    def positivity():
        state.fields()
        return True, ""

    def identity():
        tc = topo_constants(state, alpha)
        v = identity_check(state, tc)
        return v <= 1e-8, f"max violation {v:.3e}"

    def constants_drift():
        tc = topo_constants(state, alpha)
        tcp = topo_constants(_perturbed_seed_state(state, seed + 1), alpha)
        drift = max(
            abs(tc.z - tcp.z), abs(tc.S_hat - tcp.S_hat),
            abs(tc.c_hat - tcp.c_hat), abs(tc.c - tcp.c),
        )
        scale = 1.0 + max(abs(tc.z), abs(tc.S_hat), abs(tc.c_hat), abs(tc.c))
        return drift <= 100.0 * h2 * scale, f"max drift {drift:.3e}"

    def mean_zero():
        tc = topo_constants(state, alpha)
        r_hym, r_scalar = residual(state, alpha, tc)
        P, G = state.P, state.G
        v = max(abs(integrate(r_hym, P, G)), abs(integrate(r_scalar, P, G)))
        return v <= 100.0 * h2 * (1.0 + abs(tc.c)), f"max mean {v:.3e}"

    def futaki_drift():
        tc = topo_constants(state, alpha)
        other = _perturbed_seed_state(state, seed + 2)
        worst = 0.0
        for a in ((1.0, 0.0), (0.0, 1.0)):
            zeta = ToricVectorField(a)
            worst = max(worst, abs(futaki(state, alpha, tc, zeta)
                                   - futaki(other, alpha, tc, zeta)))
        return worst <= 100.0 * h2 * (1.0 + abs(tc.c)), f"max drift {worst:.3e}"

    row("finite_fields", finite)
    row("metric_positivity", positivity)
    row("curvature_identity", identity, vacuous=trivial)
    row("constants_invariance", constants_drift)
    row("residual_mean_zero", mean_zero)
    row("futaki_base_point_independence", futaki_drift, vacuous=trivial)
    return rows


def cmd_check(args):
    cfg = _load(args, need_config=False)
    state = stateio.load_state(args.state)
    alpha = Coupling(cfg.alpha0, cfg.alpha1) if cfg else Coupling(1.0, 1.0)
    seed = cfg.seed if cfg else 0
    rows = _check_rows(state, alpha, seed)
    width = max(len(r[0]) for r in rows)
    for name, verdict, detail in rows:
        print(f"{name:<{width}}  {verdict:<12} {detail}")
    failed = any(v == "FAIL" for _, v, _ in rows)
    payload = {
        "rows": [{"name": n, "verdict": v, "detail": d} for n, v, d in rows],
        "timestamp": _timestamp(),
    }
    stateio.write_json_report(_report_path(args.out, "check.json"), payload)
    return 1 if failed else 0


_COMMANDS = {
    "solve": cmd_solve,
    "continue": cmd_continue,
    "invariants": cmd_invariants,
    "geodesic": cmd_geodesic,
    "flow": cmd_flow,
    "check": cmd_check,
}


def main(argv=None):
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    try:
        return _COMMANDS[args.command](args)
    except InvalidInput as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return 2
    except CkymError as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
