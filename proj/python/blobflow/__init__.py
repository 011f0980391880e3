"""Deterministic particle method for nonlinear diffusion equations."""

from ._core import (
    ConfigError,
    DeltaSchedule,
    EnergyFamily,
    MollifierKernel,
    ParticleEnsemble,
    RegularizedEnergy,
    SimConfig,
    barenblatt,
    cmd_converge,
    cmd_run,
    cmd_sample,
    h1_density,
    heat_kernel,
    mollified_density,
    moreau_value,
    prox,
    run_experiment,
    second_moment,
    selftest,
    steady_state_z,
    w1_1d,
    w2_1d,
)

__all__ = [
    "ConfigError",
    "DeltaSchedule",
    "EnergyFamily",
    "MollifierKernel",
    "ParticleEnsemble",
    "RegularizedEnergy",
    "SimConfig",
    "barenblatt",
    "cmd_converge",
    "cmd_run",
    "cmd_sample",
    "h1_density",
    "heat_kernel",
    "mollified_density",
    "moreau_value",
    "prox",
    "run_experiment",
    "second_moment",
    "selftest",
    "steady_state_z",
    "w1_1d",
    "w2_1d",
]
