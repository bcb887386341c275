"""Linear fixed-point estimation from a single Markovian trajectory."""

from .engine import (
    InstanceConstants,
    SAConfig,
    SATrace,
    instance_constants,
    prop1_bound,
    sa_run,
    sa_run_batch,
    solve_fixed_point,
    theorem1_bound,
    theorem1_schedule,
)
from .errors import (
    ConfigError,
    DegenerateFeatures,
    InsufficientData,
    MarkovLSAError,
    NonErgodic,
    NotMixedWithinCap,
    NumericalBlowup,
    SingularSystem,
    Unstable,
    UnstableSystem,
)
from .markov import (
    MixingCertificate,
    TransitionKernel,
    green_apply,
    load_kernel,
    sample_trajectory,
    stationary_distribution,
    tv_mixing_time,
)

__version__ = "0.1.0"
