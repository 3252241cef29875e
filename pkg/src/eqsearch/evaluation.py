"""Batch skeleton evaluation and exact parameter gradients.

Evaluation is vectorised over dataset rows under IEEE semantics; a
program whose output is non-finite on any row is an invalid hypothesis,
not an error.  Gradients are exact forward-mode duals: every value
carries an optional (P, n) matrix of derivatives with respect to the
parameter vector, cheap because P <= 10.

Kink conventions (documented, consistent): ``abs`` differentiates as +1
at zero; ``min``/``max`` take the right argument's derivative on ties.
``sigmoid`` clamps its argument to [-50, 50] before exponentiation --
the single silent clamp in the system, so that saturated sigmoids do not
invalidate otherwise sane programs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .dsl import Binary, Expr, Literal, Param, SkeletonProgram, Unary, Var, complexity

# Work bound per evaluation: each of the node_count nodes touches each of the
# n rows once, so node_count * n * 16 elementary operations is a safe cap.
STEP_FACTOR = 16


@dataclass(frozen=True)
class EvalOutcome:
    """Either predictions for every row or the reason the program is invalid."""

    predictions: np.ndarray | None = None
    invalid_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.predictions is not None


class _StepLimit(Exception):
    pass


class _Evaluator:
    """Single-pass tree walk; bindings are evaluated once and memoised."""

    def __init__(self, columns, params, n, with_grad, step_limit):
        self.columns = columns
        self.params = params
        self.n = n
        self.with_grad = with_grad
        self.step_limit = step_limit
        self.steps = 0
        self.env: dict[str, tuple[np.ndarray, np.ndarray | None]] = {}
        self._basis: dict[int, np.ndarray] = {}

    def param_dot(self, index: int) -> np.ndarray:
        if index not in self._basis:
            dot = np.zeros((len(self.params), self.n))
            dot[index] = 1.0
            self._basis[index] = dot
        return self._basis[index]

    def run(self, program: SkeletonProgram) -> tuple[np.ndarray, np.ndarray | None]:
        for name, expr in program.lines:
            self.env[name] = self.eval(expr)
        return self.eval(program.ret)

    def eval(self, expr: Expr) -> tuple[np.ndarray, np.ndarray | None]:
        self.steps += self.n
        if self.steps > self.step_limit:
            raise _StepLimit
        if isinstance(expr, Literal):
            return np.full(self.n, expr.value), None
        if isinstance(expr, Var):
            if expr.name in self.env:
                return self.env[expr.name]
            return self.columns[expr.name], None
        if isinstance(expr, Param):
            value = np.full(self.n, self.params[expr.index])
            return value, self.param_dot(expr.index) if self.with_grad else None
        if isinstance(expr, Unary):
            return self._unary(expr.op, *self.eval(expr.arg))
        if isinstance(expr, Binary):
            return self._binary(expr.op, self.eval(expr.left), self.eval(expr.right))
        raise TypeError(f"not an expression node: {expr!r}")

    def _unary(self, op, a, da):
        if op == "neg":
            return -a, None if da is None else -da
        if op == "sin":
            return np.sin(a), _scale(np.cos(a), da)
        if op == "cos":
            return np.cos(a), _scale(-np.sin(a), da)
        if op == "tan":
            return np.tan(a), _scale(1.0 / np.cos(a) ** 2, da)
        if op == "tanh":
            t = np.tanh(a)
            return t, _scale(1.0 - t * t, da)
        if op == "exp":
            e = np.exp(a)
            return e, _scale(e, da)
        if op == "log":
            return np.log(a), _scale(1.0 / a, da)
        if op == "sqrt":
            s = np.sqrt(a)
            return s, _scale(0.5 / s, da)
        if op == "abs":
            # right-branch convention: derivative +1 at the kink
            return np.abs(a), _scale(np.where(a >= 0, 1.0, -1.0), da)
        if op == "sigmoid":
            s = 1.0 / (1.0 + np.exp(-np.clip(a, -50.0, 50.0)))
            return s, _scale(s * (1.0 - s), da)
        raise ValueError(f"unknown unary op {op!r}")

    def _binary(self, op, left, right):
        a, da = left
        b, db = right
        if op == "+":
            return a + b, _add(da, db)
        if op == "-":
            return a - b, _add(da, None if db is None else -db)
        if op == "*":
            return a * b, _add(_scale(b, da), _scale(a, db))
        if op == "/":
            return a / b, _add(_scale(1.0 / b, da), _scale(-a / (b * b), db))
        if op == "^":
            value = np.power(a, b)
            dot = _add(
                _scale(b * np.power(a, b - 1.0), da),
                _scale(value * np.log(a), db),
            )
            return value, dot
        if op == "min":
            take_left = a < b  # ties take the right argument's derivative
            return np.minimum(a, b), _select(take_left, da, db)
        if op == "max":
            take_left = a > b
            return np.maximum(a, b), _select(take_left, da, db)
        raise ValueError(f"unknown binary op {op!r}")


def _scale(factor: np.ndarray, dot: np.ndarray | None) -> np.ndarray | None:
    return None if dot is None else factor * dot


def _add(x: np.ndarray | None, y: np.ndarray | None) -> np.ndarray | None:
    if x is None:
        return y
    if y is None:
        return x
    return x + y


def _select(take_left: np.ndarray, da, db) -> np.ndarray | None:
    if da is None and db is None:
        return None
    zero = 0.0
    return np.where(take_left, zero if da is None else da, zero if db is None else db)


def _check_shapes(program: SkeletonProgram, params, data: Dataset) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (program.param_count,):
        raise ValueError(f"expected {program.param_count} parameters, got shape {params.shape}")
    if data.input_names != program.inputs:
        raise ValueError(f"dataset columns {data.input_names} do not match program inputs {program.inputs}")
    return params


def _run(program, params, data, with_grad, step_limit):
    columns = {name: data.inputs[:, i] for i, name in enumerate(data.input_names)}
    if step_limit is None:
        step_limit = complexity(program)[0] * data.n * STEP_FACTOR
    ev = _Evaluator(columns, params, data.n, with_grad, step_limit)
    with np.errstate(all="ignore"):
        return ev.run(program)


def evaluate(program: SkeletonProgram, params, data: Dataset, step_limit: int | None = None) -> EvalOutcome:
    """Predict every row; non-finite output anywhere makes the outcome invalid."""
    params = _check_shapes(program, params, data)
    try:
        yhat, _ = _run(program, params, data, with_grad=False, step_limit=step_limit)
    except _StepLimit:
        return EvalOutcome(invalid_reason="step cap exceeded")
    if not np.isfinite(yhat).all():
        return EvalOutcome(invalid_reason="non-finite")
    return EvalOutcome(predictions=yhat)


def predict_rows(program: SkeletonProgram, params, inputs: np.ndarray, input_names) -> np.ndarray:
    """Raw per-row predictions with no validity gate (may contain NaN/inf)."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (program.param_count,):
        raise ValueError(f"expected {program.param_count} parameters, got shape {params.shape}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if tuple(input_names) != program.inputs:
        raise ValueError(f"columns {tuple(input_names)} do not match program inputs {program.inputs}")
    columns = {name: inputs[:, i] for i, name in enumerate(input_names)}
    n = inputs.shape[0]
    limit = complexity(program)[0] * n * STEP_FACTOR
    ev = _Evaluator(columns, params, n, False, limit)
    with np.errstate(all="ignore"):
        value, _ = ev.run(program)
    return value


def evaluate_with_gradient(
    program: SkeletonProgram, params, data: Dataset
) -> tuple[float, np.ndarray] | None:
    """Training MSE and its exact gradient w.r.t. params, or None when invalid."""
    params = _check_shapes(program, params, data)
    try:
        yhat, jac = _run(program, params, data, with_grad=True, step_limit=None)
    except _StepLimit:
        return None
    with np.errstate(all="ignore"):
        residual = yhat - data.targets
        mse = float(np.mean(residual**2))
        if jac is None:
            grad = np.zeros(len(params))
        else:
            grad = (2.0 / data.n) * (jac @ residual)
    if not (np.isfinite(mse) and np.isfinite(grad).all()):
        return None
    return mse, grad
