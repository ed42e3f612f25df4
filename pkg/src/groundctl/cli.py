"""Command-line entry points.

Subcommands ``spectrum``, ``null-control``, ``control-loop``,
``semiglobal``, ``sde`` and ``report`` each read a :class:`RunConfig`,
write CSV/JSON artifacts plus a ``manifest.json`` into ``--out`` and exit
with the code attached to the failure class (see :mod:`groundctl.errors`).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .config import ENV_PREFIX, SCHEMA_DOC, RunConfig, load_config
from .errors import EXIT_OK, GroundCtlError, LoopFailure, ValidationError
from .loop import (
    _jsonable,
    derive_constants,
    run_local_loop,
    run_semiglobal_cone,
    run_semiglobal_strip,
)
from .moment import (
    assemble_moment_problem,
    estimate_control_cost,
    solve_min_norm,
    verify_linear_null,
)
from .problems import build_problem, verify_hypotheses
from .sde import (
    DriftExtension,
    ParticleEnsemble,
    estimate_density,
    galerkin_density,
    l1_distance,
    sample_density,
    simulate_ensemble,
)
from .simulate import integrate_bilinear
from .spectral import norm_s

__all__ = ["main", "COMMANDS", "initial_state"]


# -- artifact helpers --------------------------------------------------------
def _write_csv(path: Path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    rows = list(rows)
    cols = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                         for k in cols})


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(out: Path, command: str, cfg: RunConfig, status: str, extra: Optional[dict] = None) -> None:
    from . import _kernels

    data = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": _kernels.get_backend(cfg.kernels).__name__.rsplit(".", 1)[-1],
        "seed": cfg.seed,
        "status": status,
        "config": cfg.as_dict(),
    }
    data.update(extra or {})
    _write_json(out / "manifest.json", data)
    (out / "config.txt").write_text(cfg.to_keyvalue())


def initial_state(cfg: RunConfig, es) -> np.ndarray:
    """``phi_g + delta`` as configured (coefficients in ``es``'s basis)."""
    ess = es.shifted()
    u0 = ess.ground_state()
    u0[ess.ground_index] += cfg.perturb_ground
    if cfg.perturb == "none" or cfg.perturb_size == 0:
        return u0
    if cfg.perturb == "mode":
        label = cfg.perturb_label if cfg.perturb_label is not None else int(es.labels[es.ground_index]) + 1
        hit = np.nonzero(es.labels == label)[0]
        if hit.size == 0:
            raise ValidationError(f"perturb_label {label} is not in the truncation")
        d = np.zeros(es.size)
        d[hit[0]] = 1.0
    else:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0xDE17A,)))
        d = rng.standard_normal(es.size) / np.sqrt(1.0 + ess.eigenvalues)
    d *= cfg.perturb_size / float(norm_s(d, 0.5, ess))
    return u0 + d


def _problem(cfg: RunConfig):
    return build_problem(cfg.problem_spec())


# -- commands ----------------------------------------------------------------
def cmd_spectrum(cfg: RunConfig, out: Path) -> dict:
    """Eigenvalues, ground couplings and hypothesis report."""
    es = _problem(cfg)
    rep = verify_hypotheses(es)
    lam = es.eigenvalues
    root = np.sqrt(np.maximum(lam, 0.0))
    rows = []
    for i in range(es.size):
        rows.append({
            "eigenvalue": float(lam[i]),
            "b_ground": float(es.ground_couplings[i]),
            "label": int(es.labels[i]),
            "sqrt_gap": float(root[i] - root[i - 1]) if i > 0 else None,
        })
    _write_csv(out / "spectrum.csv", rows, ["eigenvalue", "b_ground", "label", "sqrt_gap"])
    _write_json(out / "hypotheses.json", {"problem": cfg.problem_spec().describe(), **rep.as_dict()})
    return {"hypotheses_ok": rep.ok, "gap": rep.gap}


def cmd_null_control(cfg: RunConfig, out: Path) -> dict:
    """Empirical control cost over the horizon grid and the exponential-law fit."""
    es = _problem(cfg).shifted()
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            cost = estimate_control_cost(es, cfg.horizons, cfg.cost_trials, cfg.seed, cfg.precision, pool)
    else:
        cost = estimate_control_cost(es, cfg.horizons, cfg.cost_trials, cfg.seed, cfg.precision)
    # independent residual check of every control at every horizon
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0xC057,)))
    states = rng.standard_normal((cfg.cost_trials, es.size))
    states /= np.linalg.norm(states, axis=1, keepdims=True)
    rows = []
    for r in cost.rows():
        T = r["T"]
        worst = math.nan
        if math.isfinite(r["N_emp"]):
            worst = 0.0
            for y0 in states:
                p = solve_min_norm(assemble_moment_problem(y0, es, T), precision=cfg.precision)
                worst = max(worst, verify_linear_null(p, y0, es, T).relative)
        rows.append({**r, "verified_residual": worst})
    _write_csv(out / "cost_curve.csv", rows, ["T", "N_emp", "N_trunc", "residual", "verified_residual", "tail"])
    fit = {
        "nu_hat": cost.nu_hat, "intercept": cost.intercept, "r2": cost.r2, "nu_envelope": cost.nu_envelope,
        "nu_trunc": cost.nu_trunc, "failures": cost.failures,
    }
    _write_json(out / "cost_fit.json", fit)
    return fit


def _constants(cfg: RunConfig, es, T: float):
    if not cfg.bound_checks and cfg.mode == "empirical":
        return None
    return derive_constants(es, T, cfg.T0, cfg.nu, cfg.C_B, cfg.n_max)


def _loop_artifacts(out: Path, control, trace) -> None:
    trace.to_csv(out / "trace.csv")
    trace.to_json(out / "trace.json")
    if control is not None:
        _write_csv(out / "control.csv",
                   [{"t": float(t), "weight": float(w), "p": float(p)} for t, w, p in control.to_rows()])


def cmd_control_loop(cfg: RunConfig, out: Path) -> dict:
    """Local staged steering from the configured initial state."""
    es = _problem(cfg)
    consts = _constants(cfg, es, cfg.horizon)
    u0 = initial_state(cfg, es)
    try:
        control, trace = run_local_loop(u0, es, cfg.horizon, consts, cfg.stop_tol, cfg.n_max, cfg.mode, cfg.T0)
    except LoopFailure as exc:
        if exc.trace is not None:
            _loop_artifacts(out, None, exc.trace)
        raise
    _loop_artifacts(out, control, trace)
    if consts is not None:
        _write_json(out / "constants.json", consts.as_dict())
    return {"stages": len(trace.stages), "final_half": trace.final_residual, "converged": trace.converged,
            "bound_violations": trace.bound_violations()}


def cmd_semiglobal(cfg: RunConfig, out: Path) -> dict:
    """Dwell-then-steer run (strip) or normalised run (cone)."""
    es = _problem(cfg)
    consts = derive_constants(es, 1.0, cfg.T0, cfg.nu, cfg.C_B, cfg.n_max)
    ess = es.shifted()
    d = initial_state(cfg.replace(perturb_size=cfg.R, perturb_ground=0.0), es) - ess.ground_state()
    d[ess.ground_index] = 0.0
    if cfg.perturb != "none":
        d *= cfg.R / float(norm_s(d, 0.5, ess))
    u0 = ess.ground_state() + d
    u0[ess.ground_index] += cfg.perturb_ground
    kw = dict(stop_tol=cfg.stop_tol, n_max=cfg.n_max, mode=cfg.mode, T0=cfg.T0)
    try:
        if cfg.variant == "strip":
            res = run_semiglobal_strip(u0, es, cfg.R, consts, cfg.r1, **kw)
        else:
            res = run_semiglobal_cone(cfg.cone_scale * u0, es, cfg.R, consts, cfg.r1, **kw)
    except LoopFailure as exc:
        if exc.trace is not None:
            _loop_artifacts(out, None, exc.trace)
        raise
    _loop_artifacts(out, res.control, res.trace)
    _write_json(out / "semiglobal.json", res.to_dict())
    _write_json(out / "constants.json", consts.as_dict())
    return {"T_R": res.T_R, "T_dwell": res.T_dwell, "r1": res.r1, "final_half": res.trace.final_residual}


def cmd_sde(cfg: RunConfig, out: Path) -> dict:
    """Particle run against the Galerkin density."""
    spec = cfg.problem_spec()
    if spec.kind not in ("fp_neumann", "fp_dirichlet"):
        raise ValidationError("the particle model covers the Fokker-Planck kinds only")
    es = build_problem(spec)
    g = es.ground_index
    loop = cfg.sde_control == "loop"
    u0 = es.ground_state()
    u0[g + 1] = cfg.sde_loop_amp if loop else cfg.sde_init_amp
    control = None
    if loop:
        control, trace = run_local_loop(u0, es, cfg.sde_T, None, cfg.stop_tol, cfg.n_max)
        trace.to_json(out / "loop_trace.json")
    # unit mass for the particle picture; the dynamics are linear in u
    u0 = u0 / float(galerkin_density(u0, es, np.array([0.0, 1.0]))[0])
    x = sample_density(u0, es, cfg.n_particles, seed=cfg.seed)
    ens = ParticleEnsemble.from_positions(x, seed=cfg.seed)
    drift = DriftExtension.from_spec(spec)
    regime = cfg.regime if spec.kind == "fp_neumann" or cfg.regime != "partial_reflect" else "absorb"
    backend = None if cfg.kernels == "auto" else cfg.kernels
    simulate_ensemble(ens, control, drift, regime, cfg.dt, cfg.sde_T, threads=cfg.threads, backend=backend)
    dens = estimate_density(ens, cfg.bins, regime)
    uT = integrate_bilinear(u0, control, es, (0.0, cfg.sde_T), atol=1e-12).final
    gal = galerkin_density(uT, es, dens.edges)
    rows = [{**r, "galerkin": float(gv)} for r, gv in zip(dens.rows(), gal)]
    _write_csv(out / "histogram.csv", rows, ["bin_center", "density", "count", "galerkin"])
    result = {"l1": l1_distance(dens.density, gal, dens.edges), "regime": regime, "N_p": cfg.n_particles,
              "dt": cfg.dt, "T": cfg.sde_T, "ensemble": ens.manifest(), "valid": dens.valid}
    _write_json(out / "sde.json", result)
    return result


def cmd_report(cfg: RunConfig, out: Path) -> dict:
    """Collect the manifests below ``--out`` into ``report.json`` and ``report.md``."""
    entries = []
    for m in sorted(out.rglob("manifest.json")):
        if m.parent == out:
            continue
        data = json.loads(m.read_text())
        entries.append({"dir": str(m.parent.relative_to(out)), "command": data.get("command"),
                        "status": data.get("status"), "result": data.get("result", {})})
    _write_json(out / "report.json", {"runs": entries})
    lines = ["# Run report", "", "| directory | command | status | key results |", "|---|---|---|---|"]
    for e in entries:
        keys = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(e["result"].items()) if not isinstance(v, (dict, list)))
        lines.append(f"| {e['dir']} | {e['command']} | {e['status']} | {keys} |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    return {"runs": len(entries)}


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


COMMANDS: dict[str, Callable[[RunConfig, Path], dict]] = {
    "spectrum": cmd_spectrum,
    "null-control": cmd_null_control,
    "control-loop": cmd_control_loop,
    "semiglobal": cmd_semiglobal,
    "sde": cmd_sde,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundctl",
        description="Staged steering of bilinear parabolic systems to the ground state.",
        epilog=(f"Every configuration key can also be set through an environment variable "
                f"{ENV_PREFIX}<KEY> (for example {ENV_PREFIX}TRUNCATION=16). Keys: "
                + ", ".join(SCHEMA_DOC)),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", type=Path, help="key=value or JSON configuration file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        overrides.update({"seed": args.seed, "threads": args.threads,
                          "out": str(args.out) if args.out is not None else None})
        cfg = load_config(args.config, overrides)
    except GroundCtlError as exc:
        print(f"groundctl: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"groundctl: {exc}", file=sys.stderr)
        return ValidationError.exit_code

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.kernels != "auto":
        import os

        os.environ[f"{ENV_PREFIX}KERNELS"] = cfg.kernels
    try:
        result = COMMANDS[args.command](cfg, out)
    except GroundCtlError as exc:
        _manifest(out, args.command, cfg, "failed",
                  {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}})
        print(f"groundctl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    _manifest(out, args.command, cfg, "ok", {"result": result})
    print(json.dumps(_jsonable(result), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
