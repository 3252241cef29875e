"""Parameter fitting: multi-restart BFGS or Adam over a skeleton's MSE.

Structure search and parameter estimation are decoupled: the generator
proposes skeletons, this module fits their placeholder parameters to the
training split.  Restart 0 starts from all-ones; later restarts draw
standard-normal starts from a per-restart seeded stream, so a fit is
reproducible whenever all restarts finish inside the wall-clock budget
(the budget is checked between restarts, never mid-restart).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .dsl import SkeletonProgram
from .evaluation import evaluate_with_gradient
from .seeds import derive_rng

FIT_METHODS = ("bfgs", "adam")
INIT_SCHEMES = ("standard_normal", "all_ones")

# fun_grad(x) returns (value, gradient) or None when the point is invalid
FunGrad = Callable[[np.ndarray], "tuple[float, np.ndarray] | None"]


@dataclass
class FitConfig:
    method: str = "bfgs"
    restarts: int = 10
    init_scheme: str = "standard_normal"
    wall_clock_budget: float = 30.0
    adam_lr: float = 0.05
    adam_steps: int = 2000
    bfgs_tol: float = 1e-8
    bfgs_max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.method not in FIT_METHODS:
            raise ValueError(f"unknown fit method {self.method!r}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.wall_clock_budget <= 0:
            raise ValueError("wall clock budget must be positive")


@dataclass
class RestartDiagnostics:
    index: int
    iterations: int
    mse: float | None
    stop_reason: str  # tolerance | max_iterations | line_search_failed | steps | invalid


@dataclass
class FitResult:
    params: np.ndarray
    mse: float
    status: str  # converged | budget_exhausted | invalid_program
    restarts: list[RestartDiagnostics] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status != "invalid_program"


@dataclass
class _Minimized:
    x: np.ndarray
    f: float
    iterations: int
    stop_reason: str


def bfgs_minimize(fun_grad: FunGrad, x0: np.ndarray, tol: float = 1e-8, max_iter: int = 500) -> _Minimized | None:
    """BFGS with backtracking Armijo line search; None when x0 is invalid.

    Line-search failure or an invalid trial region terminates with the best
    iterate found so far.
    """
    out = fun_grad(x0)
    if out is None:
        return None
    x, (f, g) = np.asarray(x0, dtype=float), out
    hess_inv = np.eye(len(x))
    best_x, best_f = x.copy(), f
    for iteration in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= tol:
            return _Minimized(best_x, best_f, iteration - 1, "tolerance")
        direction = -hess_inv @ g
        slope = float(g @ direction)
        if slope >= 0:  # numerical breakdown: fall back to steepest descent
            hess_inv = np.eye(len(x))
            direction = -g
            slope = float(g @ direction)
            if slope >= 0:
                return _Minimized(best_x, best_f, iteration - 1, "line_search_failed")
        step = 1.0
        accepted = None
        for _ in range(40):
            trial = x + step * direction
            trial_out = fun_grad(trial)
            if trial_out is not None and trial_out[0] <= f + 1e-4 * step * slope:
                accepted = (trial, trial_out)
                break
            step *= 0.5
        if accepted is None:
            return _Minimized(best_x, best_f, iteration, "line_search_failed")
        x_new, (f_new, g_new) = accepted
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            left = np.eye(len(x)) - rho * np.outer(s, y)
            hess_inv = left @ hess_inv @ left.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_x, best_f = x.copy(), f
    return _Minimized(best_x, best_f, max_iter, "max_iterations")


def adam_minimize(fun_grad: FunGrad, x0: np.ndarray, lr: float = 0.05, steps: int = 2000,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> _Minimized | None:
    """Adam with bias correction; returns the best iterate seen, None if x0 invalid."""
    out = fun_grad(x0)
    if out is None:
        return None
    x = np.asarray(x0, dtype=float).copy()
    f, g = out
    best_x, best_f = x.copy(), f
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(1, steps + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        out = fun_grad(x)
        if out is None:
            return _Minimized(best_x, best_f, t, "invalid")
        f, g = out
        if f < best_f:
            best_x, best_f = x.copy(), f
    return _Minimized(best_x, best_f, steps, "steps")


def _initial_point(cfg: FitConfig, restart: int, dim: int) -> np.ndarray:
    if cfg.init_scheme == "all_ones" or restart == 0:
        return np.ones(dim)
    return derive_rng(cfg.seed, restart).standard_normal(dim)


def fit(program: SkeletonProgram, train: Dataset, cfg: FitConfig | None = None) -> FitResult:
    """Fit the parameter vector on the training split.

    Runs cfg.restarts independent optimizations and keeps the lowest-MSE
    finite iterate seen anywhere; the wall-clock budget covers all restarts
    together.  Numeric failure is reported through status, never raised.
    """
    cfg = cfg or FitConfig()
    dim = program.param_count
    fun_grad = lambda x: evaluate_with_gradient(program, x, train)

    if dim == 0:
        out = fun_grad(np.zeros(0))
        if out is None:
            return FitResult(np.zeros(0), float("inf"), "invalid_program")
        return FitResult(np.zeros(0), out[0], "converged",
                         [RestartDiagnostics(0, 0, out[0], "tolerance")])

    start = time.monotonic()
    best: tuple[np.ndarray, float] | None = None
    diagnostics: list[RestartDiagnostics] = []
    out_of_budget = False
    for restart in range(cfg.restarts):
        if restart > 0 and time.monotonic() - start > cfg.wall_clock_budget:
            out_of_budget = True
            break
        x0 = _initial_point(cfg, restart, dim)
        if cfg.method == "bfgs":
            res = bfgs_minimize(fun_grad, x0, cfg.bfgs_tol, cfg.bfgs_max_iter)
        else:
            res = adam_minimize(fun_grad, x0, cfg.adam_lr, cfg.adam_steps)
        if res is None:
            diagnostics.append(RestartDiagnostics(restart, 0, None, "invalid"))
            continue
        diagnostics.append(RestartDiagnostics(restart, res.iterations, res.f, res.stop_reason))
        if best is None or res.f < best[1]:
            best = (res.x, res.f)
    if best is None:
        return FitResult(np.ones(dim), float("inf"), "invalid_program", diagnostics)
    status = "budget_exhausted" if out_of_budget else "converged"
    return FitResult(best[0], best[1], status, diagnostics)
