"""Random walks on the strip Z x {1..d} in a random environment.

Submodules
----------
env          environment letters, models and windows
smallmat     small matrix helpers and scaled products
exitprob     exit-probability matrices, the absorbing-chain oracle, pi
asymptotics  Lyapunov exponent, speed, crossing moments, CLT variance
walker       quenched simulation, renewals, environment seen from the walker
experiments  scenario configs, report bundles and the validation suite
"""

from .asymptotics import (
    AsymptoticsReport,
    CrossingMoments,
    analyze,
    clt_sigma,
    condition_diagnostics,
    crossing_moments,
    left_exit_decay,
    lyapunov,
    speed,
    transience_verdict,
)
from .env import (
    ConditionReport,
    EnvironmentModel,
    EnvironmentWindow,
    LayerTriple,
    check_condition_C,
    embed_bounded_jump,
    embed_nearest_neighbor,
    load_model,
    persistent_walk_model,
    sample_window,
    save_model,
)
from .errors import (
    ConfigError,
    DegeneracyError,
    EmbeddingError,
    InsufficientWindow,
    ModelError,
    NearSingularError,
    NotTransient,
    NumericalFailure,
    SeriesDivergence,
    StripWalkError,
    TaskError,
    TruncationError,
    WindowExhausted,
)
from .exitprob import (
    EtaSequence,
    absorption_oracle,
    compute_pi,
    left_exit,
    solve_eta,
    verify_C4,
)
from .experiments import ReportBundle, ScenarioConfig, run_scenario
from .seeding import derive_seed
from .validation import validate_suite
from .walker import (
    EvfpHistogram,
    RenewalRecord,
    Trajectory,
    evfp_accumulate,
    evfp_replicas,
    extract_renewals,
    q_reference,
    select_istar,
    simulate,
    simulate_model,
)

__version__ = "0.1.0"
