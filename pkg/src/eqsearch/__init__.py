"""Equation discovery by evolving symbolic skeletons and fitting their parameters."""

from .buffer import Candidate, ExperienceBuffer
from .data import Dataset
from .dsl import ParseError, SkeletonProgram, ValidationError, parse, render
from .engine import Ablations, BufferConfig, RunConfig, RunResult, run, search
from .estimator import EquationSearchRegressor
from .evaluation import EvalOutcome, evaluate, evaluate_with_gradient
from .hypothesis import GeneratorConfig, ProblemSpec, build_prompt, parse_response
from .optimize import FitConfig, FitResult, fit
from .score import Score, fitness, mse, nmse

__version__ = "0.1.0"

__all__ = [
    "Ablations",
    "BufferConfig",
    "Candidate",
    "Dataset",
    "EquationSearchRegressor",
    "EvalOutcome",
    "ExperienceBuffer",
    "FitConfig",
    "FitResult",
    "GeneratorConfig",
    "ParseError",
    "ProblemSpec",
    "RunConfig",
    "RunResult",
    "Score",
    "SkeletonProgram",
    "ValidationError",
    "build_prompt",
    "evaluate",
    "evaluate_with_gradient",
    "fit",
    "fitness",
    "mse",
    "nmse",
    "parse",
    "parse_response",
    "render",
    "run",
    "search",
]
