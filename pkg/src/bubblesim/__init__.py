"""Two-group market simulator: rational investors vs herding noise traders.

Modules
-------
params         model constants and their defaults
market         one stochastic step of the full system
deterministic  shock-free reduction, fixed points, OU moments
stylized       tail exponent, autocorrelations, bubble episodes
runner         configs, seeded runs, ensembles, CSV/JSON files
"""

from .deterministic import (
    FixedPoint,
    SuperExpFit,
    classify_stability,
    deterministic_step,
    deterministic_trajectory,
    find_fixed_points,
    ou_reversion_time,
    ou_stationary_moments,
    predict_superexp_logprice,
    rational_only_price,
)
from .errors import *  # noqa: F401,F403
from .market import SimState, StepDraws, TrajectoryFrame, step
from .params import ModelParams
from .runner import (
    EnsembleSummary,
    RunConfig,
    Trajectory,
    load_config,
    run_ensemble,
    run_simulation,
)
from .stylized import AnalysisReport, BubbleEpisode, analyze

__version__ = "0.1.0"
