"""Coherent-amplitude emulation of Kraus-channel evolution for nonlinear PDEs.

The package tracks per-point coherent amplitudes z and their first-order
variances for finite-difference PDE right-hand sides (1D Burgers, 2D
Fisher-KPP with a prescribed flow, lid-driven cavity), models shot-noise
readout, lifts stencil RHSs to truncated-Fock-space generators, compiles the
short-time Kraus pair into a measurement-adaptive binary tree of unitaries,
reports Kraus-rank/depth analytics and minimal stencil coefficients, and
mitigates photon loss with a calibrated counterterm plus Richardson
extrapolation.  The `cvpde` CLI runs configured experiments end to end.
"""
from .cavity import CavityResult, cavity_solve, velocity_from_streamfunction
from .config import ConfigError, ExperimentConfig, config_digest, load_config, validate_config
from .evolve import (ConvergenceError, DivergenceError, RunConfig, RunResult,
                     StepReport, euler_step, run, step_controller, trotter2_step,
                     variance_step)
from .fock import (ChannelCheck, ChannelTree, FockSpace, GeneratorMatrix,
                   KrausSet, RankReport, VerificationError, assemble_generator,
                   build_fock, coherent_state, compile_tree, kraus_pair,
                   manhattan_ball, monomials_per_site, node_block, path_operator,
                   rank_analytics, stencil_coefficients, verify_channel)
from .grid import (Boundary, BoundaryKind, BoundaryValue, FieldState, GridSpec,
                   VelocityField, make_field, neighbor)
from .noise import (NoiseRow, NoisyRhs, apply_counterterm, counterterm,
                    counterterm_factor, l2_error, mitigation_table,
                    richardson_extrapolate, richardson_weights, with_loss)
from .rhs import (BurgersRhs, CavityVorticityRhs, FisherRhs, LinearRhs, Monomial,
                  RhsSpec, SigmaBreakdown, burgers_parts, burgers_rhs, cavity_rhs,
                  conv_bound, fisher_parts, fisher_rhs, full_stencil_spec,
                  jacobian_apply, read_spec_text, rhs_to_spec, sigma,
                  sigma_breakdown, streamfunction_rhs, thom_wall_vorticity,
                  write_spec_text)
from .sampling import ShotStats, StatsRow, sample_readout, stats_table

__version__ = "0.1.0"

__all__ = [
    "Boundary", "BoundaryKind", "BoundaryValue", "BurgersRhs", "CavityResult",
    "CavityVorticityRhs", "ChannelCheck", "ChannelTree", "ConfigError",
    "ConvergenceError", "DivergenceError", "ExperimentConfig", "FieldState",
    "FisherRhs", "FockSpace", "GeneratorMatrix", "GridSpec", "KrausSet",
    "LinearRhs", "Monomial", "NoiseRow", "NoisyRhs", "RankReport", "RhsSpec",
    "RunConfig", "RunResult", "ShotStats", "SigmaBreakdown", "StatsRow",
    "StepReport", "VelocityField", "VerificationError", "apply_counterterm",
    "assemble_generator", "build_fock", "burgers_parts", "burgers_rhs",
    "cavity_rhs", "cavity_solve", "coherent_state", "compile_tree",
    "config_digest", "conv_bound", "counterterm", "counterterm_factor",
    "euler_step", "fisher_parts", "fisher_rhs", "full_stencil_spec",
    "jacobian_apply", "kraus_pair", "l2_error", "load_config", "make_field",
    "manhattan_ball", "mitigation_table", "monomials_per_site", "neighbor",
    "node_block", "path_operator", "rank_analytics", "read_spec_text",
    "rhs_to_spec", "richardson_extrapolate", "richardson_weights", "run",
    "sample_readout", "sigma", "sigma_breakdown", "stats_table",
    "stencil_coefficients", "step_controller", "streamfunction_rhs",
    "thom_wall_vorticity", "trotter2_step", "validate_config",
    "variance_step", "velocity_from_streamfunction", "verify_channel",
    "with_loss",
]
