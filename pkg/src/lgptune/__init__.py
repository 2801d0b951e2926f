"""Linear genetic programming with tunable primitives.

Evolution searches the structure of short register programs while least
squares and gradient steps keep every coefficient-bearing primitive fitted
to the training targets. Built for spectral regression (range-statistic
terminals over contiguous wavenumber bands) and usable on plain tabular
data.
"""

from .errors import ConfigError, LgpError, ParseError, StructuralError
from .evolution import (
    Evolution,
    EvolutionConfig,
    GenerationRecord,
    Individual,
    evolve,
    regression_metrics,
)
from .primitives import (
    FUNCTION_KINDS,
    GAMMA_KINDS,
    TERMINAL_KINDS,
    PrimitiveCatalog,
    eval_basic,
    eval_mvlr,
    eval_tunable_function,
    eval_tunable_terminal,
    gamma_eval,
)
from .program import (
    ExecutionTrace,
    Inp,
    Instruction,
    Program,
    Reg,
    TunablePrimitiveState,
    effective_instructions,
    execute,
    predict,
    program_from_text,
    program_to_text,
)
from .tuning import (
    solve_least_squares,
    tune_function,
    tune_function_gd,
    tune_mvlr,
    tune_terminal,
)
from .data import (
    SpectralDataset,
    augment,
    apply_treatment,
    first_derivative,
    grouped_kfold,
    linear_baseline,
    load_csv,
    save_csv,
    sliding_smooth,
    snv,
)
from .experiment import (
    RunConfig,
    export_dag,
    frequency_table,
    load_run_config,
    resolve_run_config,
    run_training,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Evolution",
    "EvolutionConfig",
    "ExecutionTrace",
    "FUNCTION_KINDS",
    "GAMMA_KINDS",
    "GenerationRecord",
    "Individual",
    "Inp",
    "Instruction",
    "LgpError",
    "ParseError",
    "PrimitiveCatalog",
    "Program",
    "Reg",
    "RunConfig",
    "SpectralDataset",
    "StructuralError",
    "TERMINAL_KINDS",
    "TunablePrimitiveState",
    "apply_treatment",
    "augment",
    "effective_instructions",
    "eval_basic",
    "eval_mvlr",
    "eval_tunable_function",
    "eval_tunable_terminal",
    "evolve",
    "execute",
    "export_dag",
    "first_derivative",
    "frequency_table",
    "gamma_eval",
    "grouped_kfold",
    "linear_baseline",
    "load_csv",
    "load_run_config",
    "predict",
    "program_from_text",
    "program_to_text",
    "regression_metrics",
    "resolve_run_config",
    "run_training",
    "save_csv",
    "sliding_smooth",
    "snv",
    "solve_least_squares",
    "tune_function",
    "tune_function_gd",
    "tune_mvlr",
    "tune_terminal",
]
