"""Hypothesis generation: prompts, the remote chat endpoint, the offline mock.

The remote generator speaks the OpenAI-compatible chat-completions wire
protocol and never aborts a run: transport failures surface as fewer (or
zero) responses and a logged failure count.  The mock generator stands in
for the language model so the whole engine can run offline and
deterministically; it mutates and crosses demo programs with operations
that are closed over the grammar, so its output always parses and
validates.
"""

from __future__ import annotations

import concurrent.futures
import logging
import os
import re
import time
from dataclasses import dataclass

import numpy as np
import requests

from . import dsl
from .buffer import Candidate
from .dsl import (
    Binary,
    Expr,
    Literal,
    Param,
    ParseError,
    SkeletonProgram,
    Unary,
    ValidationError,
    Var,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES_PER_PROMPT = 4  # b
DEFAULT_TEMPERATURE = 0.8
_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ProblemSpec:
    """What the generator is told about the system under study."""

    title: str
    description: str  # natural-language prior: the system, each variable, units
    input_names: tuple[str, ...]
    seed_skeleton: str

    def __post_init__(self):
        object.__setattr__(self, "input_names", tuple(self.input_names))

    def seed_program(self) -> SkeletonProgram:
        return dsl.parse(self.seed_skeleton, self.input_names)

    def without_prior(self) -> "ProblemSpec":
        """Strip the scientific description down to bare variable names."""
        listing = ", ".join(self.input_names)
        return ProblemSpec(
            title="Unknown system",
            description=f"An unknown system with input variables {listing} and a scalar output.",
            input_names=self.input_names,
            seed_skeleton=self.seed_skeleton,
        )


def linear_seed(input_names) -> str:
    terms = " + ".join(f"params[{i}]*{name}" for i, name in enumerate(input_names))
    return f"return {terms}"


@dataclass
class GeneratorConfig:
    kind: str = "mock"  # mock | remote
    samples_per_prompt: int = DEFAULT_SAMPLES_PER_PROMPT
    # remote endpoint
    base_url: str = "http://localhost:8080/v1"
    model: str = "local-model"
    api_key_env: str = "EQSEARCH_API_KEY"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 512
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: float = 1.0
    max_in_flight: int = 4
    # mock generator
    seed: int = 0
    mutate_weight: float = 0.55
    crossover_weight: float = 0.30
    fresh_weight: float = 0.15
    emit_literals: bool = False  # emit constants instead of params[i] placeholders
    inject_text: str | None = None
    inject_iteration: int | None = None

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.samples_per_prompt < 1:
            raise ValueError("samples_per_prompt must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


# ---------------------------------------------------------------------------
# Prompt construction

_FORMAT_SECTION = """\
## Equation program format
Write the equation as a tiny program: zero or more helper lines `name = expression`,
then a final `return expression`.  Allowed operators: + - * / ^ and the functions
sin, cos, tan, tanh, exp, log, sqrt, abs, sigmoid, min, max.  Use placeholder
parameters params[0] ... params[{max_param}] (at most {max_params}) for every unknown
constant; their numeric values are fitted to the data afterwards.
"""

_FORMAT_SECTION_LITERALS = """\
## Equation program format
Write the equation as a tiny program: zero or more helper lines `name = expression`,
then a final `return expression`.  Allowed operators: + - * / ^ and the functions
sin, cos, tan, tanh, exp, log, sqrt, abs, sigmoid, min, max.  Write explicit
numeric constants; do not use params[i] placeholders, because no parameter
fitting will be applied.
"""

_FORMAT_SECTION_SINGLE = """\
## Equation format
Write the equation as a single line `return expression` (no helper lines).
Allowed operators: + - * / ^ and the functions sin, cos, tan, tanh, exp, log,
sqrt, abs, sigmoid, min, max.  Use placeholder parameters params[0] ...
params[{max_param}] (at most {max_params}) for every unknown constant; their
numeric values are fitted to the data afterwards.
"""

_SCORING_SECTION = """\
## Scoring
Each proposed program is parsed, its parameters are fitted to the training data
by minimizing the mean squared error, and its score is the negative mean squared
error after fitting (higher is better, 0 is perfect).  Programs that fail to
evaluate are discarded.
"""


def build_prompt(spec: ProblemSpec, demos: list[Candidate], *,
                 single_expression: bool = False,
                 literals_only: bool = False,
                 max_chars: int | None = None) -> str:
    """Deterministic prompt: instruction, problem, format, scoring, demos, task.

    Demos must be sorted ascending by fitness; they render as equation_v0 ...
    and the model is asked for the next version.  If the prompt exceeds
    max_chars, demos are dropped oldest-first (never the problem text).
    """
    if not demos:
        raise ValueError("at least one demo is required")
    demos = list(demos)
    while True:
        text = _render_prompt(spec, demos, single_expression, literals_only)
        if max_chars is None or len(text) <= max_chars or len(demos) == 1:
            return text
        demos = demos[1:]


def _render_prompt(spec, demos, single_expression, literals_only) -> str:
    if literals_only:
        fmt = _FORMAT_SECTION_LITERALS
    elif single_expression:
        fmt = _FORMAT_SECTION_SINGLE.format(max_param=dsl.MAX_PARAMS - 1, max_params=dsl.MAX_PARAMS)
    else:
        fmt = _FORMAT_SECTION.format(max_param=dsl.MAX_PARAMS - 1, max_params=dsl.MAX_PARAMS)
    shown = []
    for j, cand in enumerate(demos):
        shown.append(f"# equation_v{j}, score={cand.fitness:.6e}\n{cand.text}")
    parts = [
        "Improve the equation program for the system described below.  Propose one",
        "new version that fits the data better than every version shown under",
        '"Previous versions".  Consider the physical meaning of each variable and',
        "how the variables could relate.",
        "",
        f"## Problem\n{spec.title}\n\n{spec.description}",
        f"Input variables, in this order: {', '.join(spec.input_names)}.",
        "",
        fmt,
        _SCORING_SECTION,
        "## Previous versions",
        "\n".join(shown),
        "",
        f"Write equation_v{len(demos)} as one fenced code block (```...```), in the format above.",
    ]
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Response parsing

_FENCE_RE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)
_BINDING_RE = re.compile(r"^\s*[A-Za-z_][A-Za-z0-9_]*\s*=[^=]")


def extract_program_text(raw: str) -> str | None:
    """First fenced block, else the first return-line plus preceding bindings."""
    m = _FENCE_RE.search(raw)
    if m:
        return m.group(1).strip()
    lines = raw.split("\n")
    for i, line in enumerate(lines):
        if line.strip().startswith("return"):
            start = i
            while start > 0 and _BINDING_RE.match(lines[start - 1]):
                start -= 1
            return "\n".join(lines[start : i + 1]).strip()
    return None


def parse_response(raw: str, input_names, *, single_expression: bool = False
                   ) -> tuple[SkeletonProgram | None, str | None]:
    """(program, None) on success, else (None, discard reason)."""
    text = extract_program_text(raw)
    if text is None:
        return None, "no program found"
    try:
        program = dsl.parse(text, input_names)
    except ParseError as exc:
        return None, f"syntax: {exc}"
    except ValidationError as exc:
        return None, f"validation: {exc}"
    if single_expression and program.lines:
        return None, "helper bindings not allowed"
    return program, None


# ---------------------------------------------------------------------------
# Generators

def make_generator(cfg: GeneratorConfig, input_names, rng: np.random.Generator | None = None):
    if cfg.kind == "remote":
        return RemoteGenerator(cfg)
    return MockGenerator(cfg, input_names, rng)


class RemoteGenerator:
    """Chat-completions client: b sampled completions per prompt with retries."""

    def __init__(self, cfg: GeneratorConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.session = session or requests.Session()
        self.failure_count = 0
        self.generator_id = cfg.model

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, body: dict) -> list[str] | None:
        """One request with retry/backoff; None signals 'n not supported'."""
        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        for attempt in range(self.cfg.max_retries + 1):
            try:
                resp = self.session.post(url, json=body, headers=self._headers(),
                                         timeout=self.cfg.timeout)
            except requests.RequestException as exc:
                logger.warning("generator request failed (%s), attempt %d", exc, attempt + 1)
                self.failure_count += 1
                self._sleep(attempt)
                continue
            if resp.status_code == 200:
                try:
                    choices = resp.json()["choices"]
                    return [c["message"]["content"] for c in choices]
                except (KeyError, TypeError, ValueError) as exc:
                    logger.warning("malformed generator response: %s", exc)
                    self.failure_count += 1
                    return []
            if resp.status_code in _RETRYABLE_STATUS:
                logger.warning("generator HTTP %d, attempt %d", resp.status_code, attempt + 1)
                self.failure_count += 1
                self._sleep(attempt)
                continue
            if resp.status_code == 400 and body.get("n", 1) > 1:
                return None  # endpoint likely rejects n>1; caller falls back
            logger.warning("generator HTTP %d: %s", resp.status_code, resp.text[:200])
            self.failure_count += 1
            return []
        return []

    def _sleep(self, attempt: int) -> None:
        if self.cfg.retry_backoff > 0:
            time.sleep(self.cfg.retry_backoff * (2**attempt))

    def generate(self, prompt: str, demos=(), iteration: int = 0) -> list[str]:
        b = self.cfg.samples_per_prompt
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "n": b,
            "max_tokens": self.cfg.max_tokens,
        }
        texts = self._post(body)
        if texts is not None:
            return texts
        # n>1 rejected: fall back to b parallel single-sample requests
        single = dict(body, n=1)
        out: list[str] = []
        with concurrent.futures.ThreadPoolExecutor(self.cfg.max_in_flight) as pool:
            for result in pool.map(lambda _: self._post(dict(single)), range(b)):
                if result:
                    out.extend(result)
        return out


class MockGenerator:
    """Offline stand-in for the language model.

    Proposes programs by mutating a demo's return expression, crossing
    subtrees between two demos, or growing a fresh small expression.  The
    mutation pool spans every operator in the language, so in principle any
    skeleton is reachable.  Deterministic under its seeded stream.
    """

    generator_id = "mock"

    def __init__(self, cfg: GeneratorConfig, input_names, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.input_names = tuple(input_names)
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    def generate(self, prompt: str, demos: list[Candidate], iteration: int = 0) -> list[str]:
        texts = []
        for slot in range(self.cfg.samples_per_prompt):
            if (self.cfg.inject_text is not None
                    and iteration == self.cfg.inject_iteration and slot == 0):
                texts.append(f"```\n{self.cfg.inject_text}\n```")
                continue
            program = self.propose(demos)
            texts.append(f"```\n{program.render()}\n```")
        return texts

    def propose(self, demos: list[Candidate]) -> SkeletonProgram:
        programs = [d.program for d in demos]
        if not programs:
            programs = [dsl.parse(linear_seed(self.input_names), self.input_names)]
        weights = np.array([self.cfg.mutate_weight, self.cfg.crossover_weight, self.cfg.fresh_weight])
        for _ in range(8):
            move = int(self.rng.choice(3, p=weights / weights.sum()))
            try:
                if move == 1 and len(programs) >= 2:
                    i, j = self.rng.choice(len(programs), size=2, replace=False)
                    candidate = self._crossover(programs[i], programs[j])
                elif move == 2:
                    candidate = self._fresh(programs[0].inputs)
                else:
                    candidate = self._mutate(programs[int(self.rng.integers(len(programs)))])
                return candidate
            except ValidationError:
                continue
        return programs[-1]  # fall back to the best demo unchanged

    # -- grammar-closed edits -------------------------------------------

    def _finish(self, base: SkeletonProgram, ret: Expr) -> SkeletonProgram:
        if self.cfg.emit_literals:
            ret = self._literalize(ret)
            lines = tuple((n, self._literalize(e)) for n, e in base.lines)
        else:
            parts = _compact_params(list(base.lines) + [("", ret)])
            lines, ret = tuple(parts[:-1]), parts[-1][1]
        return dsl.make_program(base.inputs, lines, ret)

    def _mutate(self, base: SkeletonProgram) -> SkeletonProgram:
        spots = dsl.subexpressions(base.ret)
        path, _ = spots[int(self.rng.integers(len(spots)))]
        names = base.inputs + tuple(n for n, _ in base.lines)
        new_ret = dsl.replace_at(base.ret, path, self._random_expr(names, depth=2))
        return self._finish(base, new_ret)

    def _crossover(self, a: SkeletonProgram, b: SkeletonProgram) -> SkeletonProgram:
        donor_spots = dsl.subexpressions(b.ret)
        _, graft = donor_spots[int(self.rng.integers(len(donor_spots)))]
        visible = a.inputs + tuple(n for n, _ in a.lines)
        graft = self._close_over(graft, visible)
        spots = dsl.subexpressions(a.ret)
        path, _ = spots[int(self.rng.integers(len(spots)))]
        return self._finish(a, dsl.replace_at(a.ret, path, graft))

    def _fresh(self, inputs: tuple[str, ...]) -> SkeletonProgram:
        empty = SkeletonProgram(inputs, 0, (), Literal(0.0))
        return self._finish(empty, self._random_expr(inputs, depth=3))

    def _close_over(self, expr: Expr, visible: tuple[str, ...]) -> Expr:
        """Replace identifiers the receiving program cannot see."""
        if isinstance(expr, Var) and expr.name not in visible:
            return Var(self.input_names[int(self.rng.integers(len(self.input_names)))])
        kids = [self._close_over(c, visible) for c in dsl.children(expr)]
        return dsl.with_children(expr, kids) if kids else expr

    def _random_expr(self, names: tuple[str, ...], depth: int) -> Expr:
        r = self.rng
        if depth <= 0 or r.random() < 0.35:
            pick = r.random()
            if pick < 0.45:
                return Var(names[int(r.integers(len(names)))])
            if pick < 0.85:
                return Param(int(r.integers(dsl.MAX_PARAMS)))
            return Literal(float(round(r.uniform(0.0, 3.0), 2)))
        pick = r.random()
        if pick < 0.55:
            op = ["+", "-", "*", "/"][int(r.integers(4))]
            return Binary(op, self._random_expr(names, depth - 1), self._random_expr(names, depth - 1))
        if pick < 0.70:
            return Binary("^", self._random_expr(names, depth - 1), Literal(float(int(r.integers(2, 4)))))
        if pick < 0.78:
            op = ("min", "max")[int(r.integers(2))]
            return Binary(op, self._random_expr(names, depth - 1), self._random_expr(names, depth - 1))
        ops = [o for o in dsl.UNARY_OPS if o != "neg"]
        return Unary(ops[int(r.integers(len(ops)))], self._random_expr(names, depth - 1))

    def _literalize(self, expr: Expr) -> Expr:
        if isinstance(expr, Param):
            return Literal(float(round(self.rng.uniform(0.0, 3.0), 2)))
        kids = [self._literalize(c) for c in dsl.children(expr)]
        return dsl.with_children(expr, kids) if kids else expr


def _compact_params(parts: list[tuple[str, Expr]]) -> list[tuple[str, Expr]]:
    """Renumber parameter indices to 0..P-1 in order of first appearance.

    Folds indices beyond the cap back into range so edits can never produce
    an invalid parameter set.
    """
    mapping: dict[int, int] = {}
    for _, expr in parts:
        for node in dsl.walk(expr):
            if isinstance(node, Param) and node.index not in mapping:
                mapping[node.index] = len(mapping) % dsl.MAX_PARAMS

    def rewrite(expr: Expr) -> Expr:
        if isinstance(expr, Param):
            return Param(mapping[expr.index])
        kids = [rewrite(c) for c in dsl.children(expr)]
        return dsl.with_children(expr, kids) if kids else expr

    return [(name, rewrite(expr)) for name, expr in parts]
