"""Neural-guided synthesis of list-manipulation programs from examples."""

from .dsl import (
    FUNCTION_CLASSES,
    N_FUNCTION_CLASSES,
    OPERATORS,
    Failure,
    Kind,
    Program,
    Statement,
    StatementVocabulary,
    build_vocabulary,
    format_program,
    parse_program,
    run_program,
)
from .env import Example, Environment, init_environment, is_solved, step_environment
from .model import GuideModelParams, NeuralGuide, init_params, load_checkpoint, save_checkpoint
from .search import CABConfig, DFSConfig, SearchResult, SearchStatus, UniformGuide, cab, dfs
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "FUNCTION_CLASSES",
    "N_FUNCTION_CLASSES",
    "OPERATORS",
    "Failure",
    "Kind",
    "Program",
    "Statement",
    "StatementVocabulary",
    "build_vocabulary",
    "format_program",
    "parse_program",
    "run_program",
    "Example",
    "Environment",
    "init_environment",
    "is_solved",
    "step_environment",
    "GuideModelParams",
    "NeuralGuide",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "CABConfig",
    "DFSConfig",
    "SearchResult",
    "SearchStatus",
    "UniformGuide",
    "cab",
    "dfs",
    "TrainConfig",
    "fit",
    "__version__",
]
