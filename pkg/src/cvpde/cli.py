"""Command-line front end: solve / compile / report.

One invocation runs one configured experiment end-to-end and writes its
artifacts (CSV tables, binary tree nodes, manifest, and for the report verb
PNG figures) into the output directory.  Output-directory precedence is
--out flag, then the CVPDE_OUT environment variable, then the config's out
key, then ./out-<experiment>.

Exit codes: 0 success, 2 configuration error, 3 divergence or convergence
failure, 4 I/O failure, 5 channel-verification failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import figures, reports
from .cavity import cavity_solve
from .config import ConfigError, ExperimentConfig, load_config, validate_config
from .evolve import ConvergenceError, DivergenceError, RunConfig, run
from .fock import (KrausSet, VerificationError, assemble_generator, build_fock,
                   coherent_state, compile_tree, kraus_pair, rank_analytics,
                   stencil_coefficients, verify_channel)
from .grid import Boundary, GridSpec, VelocityField, make_field
from .noise import mitigation_table, with_loss
from .rhs import BurgersRhs, FisherRhs, rhs_to_spec
from .sampling import stats_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4
EXIT_VERIFY = 5

ENV_OUT = "CVPDE_OUT"

_SOLVE_KINDS = ("burgers1d", "fisher2d", "cavity")
_REPORT_KINDS = ("rank-report", "stencil", "noise-sweep")


# ---------------------------------------------------------------------------
# Config-to-library assembly

def _grid1(p: dict) -> GridSpec:
    n = p["points"]
    bnd = Boundary.periodic() if p["boundary"] == "periodic" else Boundary.dirichlet(p["boundary_value"])
    dx = p["length"] / (n if p["boundary"] == "periodic" else n - 1)
    return GridSpec(extents=(n,), spacing=(dx,), boundary=bnd, origin=(p["origin"],))


def _grid2(p: dict) -> GridSpec:
    nx, ny = p["nx"], p["ny"]
    bnd = Boundary.periodic() if p["boundary"] == "periodic" else Boundary.dirichlet(p["boundary_value"])
    if p["cell_centered"]:
        dx, dy = p["length"] / nx, p["length"] / ny
    else:
        dx, dy = p["length"] / (nx - 1), p["length"] / (ny - 1)
    return GridSpec(extents=(nx, ny), spacing=(dx, dy), boundary=bnd,
                    origin=tuple(p["origin"]), cell_centered=p["cell_centered"])


def _initial1(grid: GridSpec, p: dict) -> np.ndarray:
    x = grid.coords(0)
    kind = p["profile"]
    if kind == "constant":
        return np.full(grid.npoints, p["amplitude"], dtype=np.complex128)
    if kind == "sine":
        span = grid.spacing[0] * (grid.extents[0] if grid.boundary.kind.value == "periodic"
                                  else grid.extents[0] - 1)
        return (p["offset"] + p["amplitude"]
                * np.sin(2.0 * np.pi * p["wavenumber"] * (x - grid.origin[0]) / span)
                ).astype(np.complex128)
    w = max(p["width"], 1e-300)
    return (p["offset"] + p["amplitude"] * np.exp(-0.5 * ((x - p["center"]) / w) ** 2)
            ).astype(np.complex128)


def _initial2(grid: GridSpec, p: dict) -> np.ndarray:
    xs, ys = grid.meshes()
    if p["profile"] == "constant":
        return np.full(grid.npoints, p["amplitude"], dtype=np.complex128)
    cx, cy = p["center"]
    w = max(p["width"], 1e-300)
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    return (p["offset"] + p["amplitude"] * np.exp(-0.5 * r2 / (w * w))).astype(np.complex128)


def _run_config(p: dict) -> RunConfig:
    return RunConfig(dt=p["dt"], t_end=p["t_end"], scheme=p["scheme"],
                     controller=p["controller"], epsilon=p["epsilon"],
                     save_times=p["save_times"] or None)


# ---------------------------------------------------------------------------
# solve

def _solve_pde(cfg: ExperimentConfig, outdir: Path) -> list[Path]:
    p = cfg.params
    if cfg.experiment == "burgers1d":
        grid = _grid1(p["grid"])
        rhs = BurgersRhs(p["re"])
        z0 = _initial1(grid, p["initial"])
    else:
        grid = _grid2(p["grid"])
        vel = (VelocityField.rotational(grid) if p["velocity"] == "rotational"
               else VelocityField(np.zeros(grid.npoints), np.zeros(grid.npoints)))
        rhs = FisherRhs(p["pe"], p["da"], vel)
        z0 = _initial2(grid, p["initial"])
    state0 = make_field(grid, z0, var=p["variance0"])
    result = run(state0, rhs, _run_config(p))

    artifacts = []
    for k, (snap, _) in enumerate(result.snapshots):
        artifacts.append(reports.write_field_csv(outdir / f"field_{k:03d}.csv", snap))
    artifacts.append(reports.write_run_summary(outdir / "run_summary.csv", result.steps))
    artifacts.append(reports.write_controller_csv(outdir / "controller.csv", result.steps))
    rows = stats_table(result.snapshots, p["shots"], cfg.seed)
    artifacts.append(reports.write_stats_csv(outdir / "stats.csv", rows))
    extra = {
        "save_times": [snap.t for snap, _ in result.snapshots],
        "cum_p_a": result.cum_p_a,
        "var_clamp_events": result.var_clamp_events,
        "p_a_clip_events": result.p_a_clip_events,
    }
    artifacts.append(reports.write_manifest(outdir, cfg, artifacts, extra))
    return artifacts


def _solve_cavity(cfg: ExperimentConfig, outdir: Path) -> list[Path]:
    p = cfg.params
    n = p["points"]
    h = 1.0 / (n - 1)
    grid = GridSpec(extents=(n, n), spacing=(h, h),
                    boundary=Boundary.cavity(p["lid_velocity"]))
    result = cavity_solve(grid, re=p["re"], dt_omega=p["dt_omega"], dtau_psi=p["dtau_psi"],
                          tol_frobenius=p["tol_frobenius"], scheme=p["scheme"],
                          inner_rel_tol=p["inner_rel_tol"],
                          inner_min_sweeps=p["inner_min_sweeps"],
                          inner_max_sweeps=p["inner_max_sweeps"],
                          max_steps=p["max_steps"])
    artifacts = [
        reports.write_scalar_csv(outdir / "psi.csv", grid, result.psi.z.real),
        reports.write_scalar_csv(outdir / "omega.csv", grid, result.omega.z.real),
        reports.write_scalar_csv(outdir / "u.csv", grid, result.velocity.vx),
        reports.write_scalar_csv(outdir / "v.csv", grid, result.velocity.vy),
    ]
    extra = {
        "steps": result.steps,
        "t_final": result.t,
        "final_delta_frobenius": result.final_delta,
        "poisson_residual_rel": result.poisson_residual_rel,
        "inner_sweeps_total": result.inner_sweeps_total,
        "converged": result.converged,
    }
    artifacts.append(reports.write_manifest(outdir, cfg, artifacts, extra))
    return artifacts


def cmd_solve(cfg: ExperimentConfig, outdir: Path) -> list[Path]:
    if cfg.experiment not in _SOLVE_KINDS:
        raise ConfigError(f"solve handles {_SOLVE_KINDS}, config selects {cfg.experiment!r}")
    if cfg.experiment == "cavity":
        return _solve_cavity(cfg, outdir)
    return _solve_pde(cfg, outdir)


# ---------------------------------------------------------------------------
# compile

def _compile_generator(p: dict, space) -> np.ndarray:
    kind = p["generator"]["kind"]
    if kind == "zero":
        return np.zeros((space.dim, space.dim), dtype=np.complex128)
    g = p["generator"]
    bnd = Boundary.periodic() if g["boundary"] == "periodic" else Boundary.dirichlet(0.0)
    grid = GridSpec(extents=(p["modes"],), spacing=(g["spacing"],), boundary=bnd)
    if kind == "burgers":
        spec = rhs_to_spec("burgers", grid, re=g["re"])
    else:
        spec = rhs_to_spec("generic-linear", grid)
    return assemble_generator(space, spec, grid).matrix


def cmd_compile(cfg: ExperimentConfig, outdir: Path) -> list[Path]:
    if cfg.experiment != "kraus-compile":
        raise ConfigError(f"compile handles kraus-compile, config selects {cfg.experiment!r}")
    p = cfg.params
    space = build_fock(p["modes"], p["levels"])
    A = _compile_generator(p, space)
    shift = "auto" if p["shift"] is None else p["shift"]
    kset = kraus_pair(A, p["dt"], shift=shift)
    if p["fault_injection"]:
        # Fault-injection knob for exercising the verification path end to end.
        broken = [op.copy() for op in kset.ops]
        broken[1] = broken[1] * (1.0 + p["fault_injection"])
        kset = KrausSet(ops=broken, a_index=kset.a_index, dt=kset.dt,
                        lambda_shift=kset.lambda_shift, generator=kset.generator)
    tree = compile_tree(kset, pad_to=p["pad_rank"])
    amp = p["probe_amplitude"]
    probes = [coherent_state(space, np.full(space.n_modes, amp)),
              coherent_state(space, amp * (-1.0) ** np.arange(space.n_modes))]
    check = verify_channel(tree, kset, probes)

    artifacts = list(reports.write_tree(outdir, tree))
    artifacts.append(reports.write_channel_check(outdir / "verification.csv", check))
    extra = {
        "lambda_shift": kset.lambda_shift,
        "completeness_defect": kset.completeness_defect(),
        "verification_ok": check.ok,
        "failed_checks": [it.name for it in check.failures()],
    }
    artifacts.append(reports.write_manifest(outdir, cfg, artifacts, extra))
    if not check.ok:
        worst = check.failures()[0]
        raise VerificationError(
            f"channel verification failed: {worst.name} = {worst.value:.3e} "
            f"(threshold {worst.threshold:.1e}); see verification.csv")
    return artifacts


# ---------------------------------------------------------------------------
# report

def _report_rank(cfg: ExperimentConfig, outdir: Path, render: bool) -> list[Path]:
    p = cfg.params
    rows = [rank_analytics(L, p["dims"], p["deriv_order"], p["degree"], p["self_coupling"])
            for L in p["l_values"]]
    artifacts = [reports.write_rank_csv(outdir / "rank.csv", rows)]
    if render:
        artifacts.append(figures.render_rank_figure(outdir / "rank.png", rows))
    return artifacts


def _report_stencil(cfg: ExperimentConfig, outdir: Path, render: bool) -> list[Path]:
    entries = []
    for row in cfg.params["rows"]:
        K, R = row["deriv_order"], row["radius"]
        try:
            entries.append((K, R, stencil_coefficients(K, R)))
        except ValueError as exc:
            raise ConfigError(f"stencil row (K={K}, R={R}): {exc}") from exc
    artifacts = [reports.write_stencil_csv(outdir / "stencil.csv", entries)]
    if render:
        artifacts.append(figures.render_stencil_figure(outdir / "stencil.png", entries))
    return artifacts


def _report_noise(cfg: ExperimentConfig, outdir: Path, render: bool) -> list[Path]:
    p = cfg.params
    grid = _grid1(p["grid"])
    rhs = BurgersRhs(p["re"])
    state0 = make_field(grid, _initial1(grid, p["initial"]))
    rc = _run_config(p)
    reference = [snap for snap, _ in run(state0, rhs, rc).snapshots]
    trajs = {}
    for gamma in p["gammas"]:
        noisy = with_loss(rhs, gamma)
        trajs[gamma] = [snap for snap, _ in run(state0, noisy, rc).snapshots]
    rows = mitigation_table(reference, trajs, calibration=p["calibration"], order=p["order"])
    artifacts = [reports.write_noise_csv(outdir / "noise.csv", rows)]
    if render:
        artifacts.append(figures.render_noise_figure(outdir / "noise.png", rows))
    return artifacts


def cmd_report(cfg: ExperimentConfig, outdir: Path, render_figures: bool = True) -> list[Path]:
    if cfg.experiment not in _REPORT_KINDS:
        raise ConfigError(f"report handles {_REPORT_KINDS}, config selects {cfg.experiment!r}")
    builders = {"rank-report": _report_rank, "stencil": _report_stencil,
                "noise-sweep": _report_noise}
    artifacts = builders[cfg.experiment](cfg, outdir, render_figures)
    artifacts.append(reports.write_manifest(outdir, cfg, artifacts))
    return artifacts


# ---------------------------------------------------------------------------
# entry point

def _apply_overrides(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    if seed is None:
        return cfg
    doc = cfg.resolved()
    doc["seed"] = seed
    return validate_config(doc)


def _resolve_outdir(cfg: ExperimentConfig, flag_out: str | None) -> Path:
    if flag_out:
        return Path(flag_out)
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env)
    if cfg.out:
        return Path(cfg.out)
    return Path(f"out-{cfg.experiment}")


def _limit_threads(n: int) -> None:
    # Best effort: cap BLAS pools if threadpoolctl is present, else hint via env.
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except Exception:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvpde",
        description="Coherent-amplitude emulation of Kraus-channel PDE evolution: "
                    "field solvers, channel compilation, and analytic reports.")
    sub = parser.add_subparsers(dest="verb", required=True)
    specs = {
        "solve": f"run a PDE experiment ({', '.join(_SOLVE_KINDS)})",
        "compile": "build and verify a binary-tree channel (kraus-compile)",
        "report": f"emit analytic tables and figures ({', '.join(_REPORT_KINDS)})",
    }
    for verb, help_text in specs.items():
        sp = sub.add_parser(verb, help=help_text)
        sp.add_argument("--config", required=True, help="path to the YAML experiment file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (beats CVPDE_OUT and config)")
        sp.add_argument("--threads", type=int, default=None, help="cap worker threads")
        if verb == "report":
            sp.add_argument("--no-figures", action="store_true",
                            help="skip PNG rendering, write CSVs only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            _limit_threads(args.threads)
        elif cfg.threads:
            _limit_threads(cfg.threads)
        outdir = _resolve_outdir(cfg, args.out)
        if args.verb == "solve":
            artifacts = cmd_solve(cfg, outdir)
        elif args.verb == "compile":
            artifacts = cmd_compile(cfg, outdir)
        else:
            artifacts = cmd_report(cfg, outdir, render_figures=not args.no_figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ConvergenceError) as exc:
        print(f"run failed to converge: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except reports.IOFailure as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(artifacts)} artifacts to {outdir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
