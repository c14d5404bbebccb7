from .mdp import MdpSpec, occupancy, solve_q, solve_value
from .levels import (
    GAPWORLD_HORIZON,
    GAPWORLD_LENGTH,
    EpisodeTrace,
    LevelHandle,
    Transition,
    export_level,
    generate_level,
    import_level,
    is_success,
    observation,
    optimal_path_length,
    step,
)
from .metrics import EpisodeOutcome, EvalMetrics, spl

__all__ = [
    "MdpSpec", "occupancy", "solve_q", "solve_value",
    "GAPWORLD_HORIZON", "GAPWORLD_LENGTH", "EpisodeTrace", "LevelHandle",
    "Transition", "export_level", "generate_level", "import_level",
    "is_success", "observation", "optimal_path_length", "step",
    "EpisodeOutcome", "EvalMetrics", "spl",
]
