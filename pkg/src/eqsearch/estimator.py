"""Scikit-learn style front end for the equation search engine.

``EquationSearchRegressor`` runs the full skeleton-evolution loop inside
``fit(X, y)`` and evaluates the best discovered program in ``predict``,
so the search composes with pipelines, cross-validation and ``clone``.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import dsl
from .data import Dataset
from .engine import Ablations, BufferConfig, RunConfig, search
from .evaluation import predict_rows
from .hypothesis import GeneratorConfig, ProblemSpec, linear_seed
from .optimize import FitConfig


class EquationSearchRegressor(BaseEstimator, RegressorMixin):
    """Discover a symbolic equation for y = f(X) and predict with it.

    Parameters mirror the run configuration: the generator proposes
    skeleton programs (the offline ``mock`` generator by default, or an
    OpenAI-compatible ``remote`` endpoint), parameters are fitted per
    candidate, and a multi-island experience buffer drives refinement.
    """

    def __init__(self, iterations=200, islands=10, demos_per_prompt=2, samples_per_prompt=4,
                 generator="mock", fit_method="bfgs", restarts=4, max_fit_iterations=200,
                 wall_clock_budget=30.0, reset_period=500, seed=0, variable_names=None,
                 title=None, description=None, seed_skeleton=None,
                 base_url="http://localhost:8080/v1", model="local-model",
                 api_key_env="EQSEARCH_API_KEY"):
        self.iterations = iterations
        self.islands = islands
        self.demos_per_prompt = demos_per_prompt
        self.samples_per_prompt = samples_per_prompt
        self.generator = generator
        self.fit_method = fit_method
        self.restarts = restarts
        self.max_fit_iterations = max_fit_iterations
        self.wall_clock_budget = wall_clock_budget
        self.reset_period = reset_period
        self.seed = seed
        self.variable_names = variable_names
        self.title = title
        self.description = description
        self.seed_skeleton = seed_skeleton
        self.base_url = base_url
        self.model = model
        self.api_key_env = api_key_env

    def _problem(self, names: tuple[str, ...]) -> ProblemSpec:
        listing = ", ".join(names)
        return ProblemSpec(
            title=self.title or "Tabular regression target",
            description=self.description
            or f"A scalar response observed as a function of the inputs {listing}.",
            input_names=names,
            seed_skeleton=self.seed_skeleton or linear_seed(names),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.variable_names is not None:
            names = tuple(self.variable_names)
            if len(names) != X.shape[1]:
                raise ValueError(f"{len(names)} variable names for {X.shape[1]} columns")
        else:
            names = tuple(f"x{i}" for i in range(X.shape[1]))
        train = Dataset(names, X, y, "train", {})
        cfg = RunConfig(
            iterations=self.iterations,
            demos_per_prompt=self.demos_per_prompt,
            seed=self.seed,
            generator=GeneratorConfig(
                kind=self.generator,
                samples_per_prompt=self.samples_per_prompt,
                seed=self.seed,
                base_url=self.base_url,
                model=self.model,
                api_key_env=self.api_key_env,
            ),
            fit=FitConfig(
                method=self.fit_method,
                restarts=self.restarts,
                bfgs_max_iter=self.max_fit_iterations,
                adam_steps=self.max_fit_iterations,
                wall_clock_budget=self.wall_clock_budget,
            ),
            buffer=BufferConfig(islands=self.islands, reset_period=self.reset_period),
            ablations=Ablations(),
        )
        result = search(train, None, None, self._problem(names), cfg)
        self.n_features_in_ = X.shape[1]
        self.input_names_ = names
        self.best_program_ = result.best_text
        self.best_params_ = result.best_params
        self.best_fitness_ = result.best_fitness
        self.result_ = result
        self._program_ = dsl.parse(result.best_text, names)
        return self

    def predict(self, X):
        check_is_fitted(self, "best_program_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return predict_rows(self._program_, self.best_params_, X, self.input_names_)
