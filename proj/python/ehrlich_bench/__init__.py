"""Ehrlich test functions, GA and LLOME baselines, preference-loss numerics."""

from ._core import (
    EhrlichFunction,
    EhrlichParams,
    GAConfig,
    InvariantError,
    LoopConfig,
    LossRecord,
    PreferenceTriple,
    SolverAbort,
    adjust_temperatures,
    boltzmann_target,
    default_mutation_rate,
    dpo_loss,
    format_dataset,
    frekl_objective,
    hypervolume,
    kl_divergence,
    margin_reward,
    marge_loss,
    marge_loss_grad,
    measure_throughput,
    parse_name,
    reinforce_loss,
    reinforce_loss_grad,
    run_ga,
    run_llome,
    sample_dmp,
    solve_frekl,
    translation_invariance_deviation,
)

__all__ = [name for name in dir() if not name.startswith("_")]
