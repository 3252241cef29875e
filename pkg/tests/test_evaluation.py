import math

import numpy as np
import pytest

from eqsearch.data import Dataset
from eqsearch.dsl import parse
from eqsearch.evaluation import evaluate, evaluate_with_gradient, predict_rows
from eqsearch.hypothesis import GeneratorConfig, MockGenerator
from eqsearch.seeds import derive_rng

X = ("x",)
XV = ("x", "v")


def dataset(columns, names, y=None):
    inputs = np.column_stack(columns)
    y = np.zeros(inputs.shape[0]) if y is None else np.asarray(y, float)
    return Dataset(names, inputs, y)


def test_linear_evaluation():
    p = parse("return params[0]*x + params[1]", X)
    out = evaluate(p, [2.0, 1.0], dataset([[0.0, 1.0, 2.0]], X))
    assert out.ok
    np.testing.assert_array_equal(out.predictions, [1.0, 3.0, 5.0])


def test_log_of_zero_is_invalid():
    p = parse("return log(x)", X)
    out = evaluate(p, [], dataset([[0.0, 1.0]], X))
    assert not out.ok
    assert out.invalid_reason == "non-finite"


def test_oscillator_rhs_scalar_golden():
    # 0.8*sin(0.5) - 0.5*0.5^3 - 0.2*0.5^3 - 0.5*0.5*0.5 - 0.5*cos(0.5),
    # evaluated with math.* as the independent oracle
    expected = (0.8 * math.sin(0.5) - 0.5 * 0.125 - 0.2 * 0.125
                - 0.5 * 0.25 - 0.5 * math.cos(0.5))
    assert abs(expected - (-0.26775)) < 5e-6
    p = parse(
        "return params[0]*sin(params[1]*x) - params[2]*v^3 - params[3]*x^3"
        " - params[4]*x*v - x*cos(x)", XV)
    out = evaluate(p, [0.8, 1.0, 0.5, 0.2, 0.5], dataset([[0.5], [0.5]], XV))
    assert out.ok
    assert out.predictions[0] == pytest.approx(expected, abs=1e-12)


def test_gradient_linear_example():
    # mse(p) = ((p-2)^2 + (2p-4)^2)/2; at p=0: mse = (4+16)/2 = 10,
    # d(mse)/dp = (2(p-2) + 4(2p-4))/2 = -10 at p=0 (finite differences agree)
    p = parse("return params[0]*x", X)
    data = dataset([[1.0, 2.0]], X, y=[2.0, 4.0])
    out = evaluate_with_gradient(p, [0.0], data)
    assert out is not None
    mse, grad = out
    assert mse == pytest.approx(10.0)
    h = 1e-6
    fd = (evaluate_with_gradient(p, [h], data)[0]
          - evaluate_with_gradient(p, [-h], data)[0]) / (2 * h)
    assert grad[0] == pytest.approx(fd, rel=1e-6)
    assert grad[0] == pytest.approx(-10.0)


def test_gradient_zero_at_least_squares_optimum():
    rng = derive_rng("lsq-opt")
    x = rng.uniform(-2, 2, 40)
    y = 1.3 * x - 0.7 + 0.05 * rng.standard_normal(40)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)  # closed-form oracle
    p = parse("return params[0]*x + params[1]", X)
    _, grad = evaluate_with_gradient(p, coef, dataset([x], X, y))
    assert np.max(np.abs(grad)) <= 1e-9


def test_gradient_matches_finite_differences():
    """Standing property: exact duals vs central differences on random programs."""
    rng = derive_rng("fdsuite", 1)
    gen = MockGenerator(
        GeneratorConfig(fresh_weight=1.0, mutate_weight=0.0, crossover_weight=0.0),
        XV, rng)
    checked = 0
    while checked < 25:
        prog = gen.propose([])
        if prog.param_count == 0:
            continue
        data = dataset([rng.uniform(0.2, 2.0, 12), rng.uniform(0.2, 2.0, 12)],
                       XV, rng.standard_normal(12))
        params = rng.standard_normal(prog.param_count)
        out = evaluate_with_gradient(prog, params, data)
        if out is None:
            continue
        _, grad = out
        for j in range(len(params)):
            h = 1e-6 * max(1.0, abs(params[j]))
            up, down = params.copy(), params.copy()
            up[j] += h
            down[j] -= h
            o_up = evaluate_with_gradient(prog, up, data)
            o_down = evaluate_with_gradient(prog, down, data)
            if o_up is None or o_down is None:
                break
            fd = (o_up[0] - o_down[0]) / (2 * h)
            if abs(grad[j]) > 1e-8:
                assert abs(fd - grad[j]) / abs(grad[j]) <= 1e-5, prog.render()
        else:
            checked += 1


def test_determinism_bitwise():
    p = parse("return sin(params[0]*x) / (v + params[1])", XV)
    data = dataset([np.linspace(0.1, 2, 50), np.linspace(0.5, 1.5, 50)], XV)
    a = evaluate(p, [1.7, 0.3], data).predictions
    b = evaluate(p, [1.7, 0.3], data).predictions
    assert a.tobytes() == b.tobytes()


def test_abs_kink_right_branch():
    p = parse("return abs(params[0]*x)", X)
    _, grad = evaluate_with_gradient(p, [0.0], dataset([[1.0]], X, [1.0]))
    # at the kink |p*x| with p=0: d/dp from the right branch is x * sign(+) = 1
    # with residual -1 the mse gradient is 2*(0-1)*1 = -2
    assert grad[0] == pytest.approx(-2.0)


def test_min_tie_takes_right_derivative():
    p = parse("return min(params[0]*x, params[1]*x)", X)
    data = dataset([[1.0]], X, [0.0])
    _, grad = evaluate_with_gradient(p, [1.0, 1.0], data)
    # tie at 1.0: derivative flows to the right argument only; mse grad = 2*yhat*x
    assert grad[0] == pytest.approx(0.0)
    assert grad[1] == pytest.approx(2.0)


def test_sigmoid_clamp_keeps_large_arguments_finite():
    p = parse("return sigmoid(params[0]*x)", X)
    out = evaluate(p, [1.0], dataset([[1000.0, -1000.0]], X))
    assert out.ok
    np.testing.assert_allclose(out.predictions, [1.0, 0.0], atol=1e-20)


def test_step_cap():
    p = parse("return x + v", XV)
    data = dataset([[1.0] * 8, [2.0] * 8], XV)
    out = evaluate(p, [], data, step_limit=10)  # 3 nodes * 8 rows > 10
    assert not out.ok and out.invalid_reason == "step cap exceeded"
    assert evaluate(p, [], data).ok  # default cap is never binding


def test_shape_mismatch_raises():
    p = parse("return params[0]*x", X)
    with pytest.raises(ValueError):
        evaluate(p, [1.0, 2.0], dataset([[1.0]], X))
    with pytest.raises(ValueError):
        evaluate(p, [1.0], dataset([[1.0], [1.0]], XV))


def test_division_and_power_domain_violations():
    p = parse("return x / v", XV)
    assert not evaluate(p, [], dataset([[1.0], [0.0]], XV)).ok
    p = parse("return (0 - x) ^ 0.5", X)
    assert not evaluate(p, [], dataset([[4.0]], X)).ok


def test_predict_rows_allows_nonfinite():
    p = parse("return log(x)", X)
    out = predict_rows(p, [], np.array([[1.0], [0.0]]), X)
    assert out[0] == 0.0 and not np.isfinite(out[1])
