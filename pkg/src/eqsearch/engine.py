"""Search orchestration: sample demos, prompt, generate, fit, score, register.

One coordinator drives the loop; candidate fits may run on a small thread
pool, but buffer registration is applied strictly in candidate sample
order, so the evaluator count never changes results.  All randomness is
drawn from streams derived from the master seed by component name, which
makes seeded runs (with the mock generator) byte-for-byte reproducible,
checkpointable and resumable.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bench, dsl, score
from .buffer import Candidate, ExperienceBuffer
from .data import Dataset, load_metadata, load_splits
from .hypothesis import GeneratorConfig, ProblemSpec, build_prompt, make_generator, parse_response
from .optimize import FitConfig, fit
from .seeds import derive_rng, derive_seed

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_FILE = "checkpoint.json"
TRAJECTORY_FILE = "trajectory.jsonl"
RESULT_FILE = "result.json"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class Ablations:
    no_prior: bool = False  # strip the scientific description from prompts
    no_program: bool = False  # single-expression hypotheses only
    no_refinement: bool = False  # T independent shots from the initial prompt
    no_skeleton_optimizer: bool = False  # constants from the generator, no fitting
    single_island: bool = False  # one island, deterministic top-k demos


@dataclass
class BufferConfig:
    islands: int = 10
    t0: float = 0.1
    anneal_period: int = 10_000
    tau_p: float = 1.0
    reset_period: int = 500  # iterations between worst-half resets and checkpoints


@dataclass
class RunConfig:
    benchmark: str = "osc1"
    data_dir: str = ""
    output_dir: str = ""
    iterations: int = 2500  # T; iteration 0 scores the seed skeleton
    demos_per_prompt: int = 2  # k
    evaluators: int = 4  # e
    seed: int = 0
    max_prompt_chars: int = 8000
    record_timing: bool = False  # wall-clock in trajectory records breaks byte-identity
    discard_on_budget: bool = False  # drop candidates whose fit ran out of budget
    problem_title: str | None = None
    problem_description: str | None = None
    seed_skeleton: str | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    ablations: Ablations = field(default_factory=Ablations)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.evaluators < 1:
            raise ConfigError("evaluators must be >= 1")
        if self.demos_per_prompt < 1:
            raise ConfigError("demos_per_prompt must be >= 1")
        if self.ablations.no_refinement and self.ablations.single_island:
            raise ConfigError("no_refinement and single_island cannot be combined")


@dataclass
class RunResult:
    best_text: str
    best_params: tuple[float, ...]
    best_fitness: float
    scores: dict[str, dict[str, float | None]]
    iterations: int
    counts: dict[str, int]
    trajectory: list[dict]
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "best_text": self.best_text,
            "best_params": list(self.best_params),
            "best_fitness": self.best_fitness,
            "scores": self.scores,
            "iterations": self.iterations,
            "counts": self.counts,
        }


def run(cfg: RunConfig, resume_from: str | Path | None = None) -> RunResult:
    """Load the configured dataset directory and run the search."""
    if not cfg.data_dir:
        raise ConfigError("data_dir is required")
    splits = load_splits(cfg.data_dir)
    recorded = load_metadata(cfg.data_dir).get("benchmark")
    if recorded and recorded != cfg.benchmark:
        raise ConfigError(f"data_dir holds {recorded!r} data but the run is configured "
                          f"for {cfg.benchmark!r}")
    spec = _resolve_problem(cfg)
    return search(splits["train"], splits["id_valid"], splits["ood_valid"], spec, cfg,
                  resume_from=resume_from)


def _resolve_problem(cfg: RunConfig) -> ProblemSpec:
    spec = bench.problem_spec(cfg.benchmark)
    return ProblemSpec(
        title=cfg.problem_title or spec.title,
        description=cfg.problem_description or spec.description,
        input_names=spec.input_names,
        seed_skeleton=cfg.seed_skeleton or spec.seed_skeleton,
    )


def search(train: Dataset, id_valid: Dataset | None, ood_valid: Dataset | None,
           spec: ProblemSpec, cfg: RunConfig,
           resume_from: str | Path | None = None) -> RunResult:
    """Run the refinement loop on in-memory datasets; see module docstring."""
    flags = cfg.ablations
    if flags.no_prior:
        spec = spec.without_prior()
    if train.input_names != spec.input_names:
        raise ConfigError(f"training columns {train.input_names} do not match problem "
                          f"variables {spec.input_names}")

    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    counts = {"responses": 0, "parsed": 0, "discarded": 0, "invalid": 0,
              "registered": 0, "fit_calls": 0}
    state = _SearchState(train, spec, cfg, counts)

    if resume_from is not None:
        start_iter, trajectory = state.restore(Path(resume_from))
    else:
        start_iter, trajectory = state.start()

    traj_fh = open(out_dir / TRAJECTORY_FILE, "w") if out_dir else None
    try:
        for record in trajectory:  # already-completed records on resume
            _write_record(traj_fh, record)
        for t in range(start_iter, cfg.iterations):
            record = state.step(t)
            trajectory.append(record)
            _write_record(traj_fh, record)
            if state.buffer.num_islands >= 2 and not flags.no_refinement \
                    and cfg.buffer.reset_period > 0 and t % cfg.buffer.reset_period == 0:
                state.buffer.reset_worst()
            if out_dir and cfg.buffer.reset_period > 0 and t % cfg.buffer.reset_period == 0:
                state.checkpoint(out_dir, t + 1)
    finally:
        if traj_fh:
            traj_fh.close()

    if out_dir:
        state.checkpoint(out_dir, cfg.iterations)
    result = state.finish(id_valid, ood_valid, trajectory, out_dir)
    if out_dir:
        with open(out_dir / RESULT_FILE, "w") as fh:
            json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result


def _write_record(fh, record: dict) -> None:
    if fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


class _SearchState:
    """Mutable loop state: buffer, generator, best-so-far, counters."""

    def __init__(self, train: Dataset, spec: ProblemSpec, cfg: RunConfig, counts: dict):
        self.train = train
        self.spec = spec
        self.cfg = cfg
        self.counts = counts
        gen_cfg = cfg.generator
        if cfg.ablations.no_skeleton_optimizer and not gen_cfg.emit_literals:
            gen_cfg = dataclasses.replace(gen_cfg, emit_literals=True)
        self.generator = make_generator(gen_cfg, spec.input_names,
                                        derive_rng(cfg.seed, "generator", cfg.generator.seed))
        self.buffer: ExperienceBuffer | None = None
        self.seed_candidate: Candidate | None = None
        self.best: Candidate | None = None

    # -- lifecycle -------------------------------------------------------

    def start(self) -> tuple[int, list[dict]]:
        cfg, flags = self.cfg, self.cfg.ablations
        try:
            program = dsl.parse(self.spec.seed_skeleton, self.spec.input_names)
        except (dsl.ParseError, dsl.ValidationError) as exc:
            raise ConfigError(f"seed skeleton does not parse: {exc}") from exc
        if flags.no_program and program.lines:
            raise ConfigError("seed skeleton must be a single expression under no_program")
        if not flags.no_skeleton_optimizer:
            self.counts["fit_calls"] += 1
        cand, status = self._fit_candidate(program, iteration=0, slot=0, island=None)
        if cand is None:
            raise ConfigError(f"seed skeleton is not scoreable on the training data ({status})")
        self.seed_candidate = cand
        m = 1 if flags.single_island else cfg.buffer.islands
        self.buffer = ExperienceBuffer.initialize(
            cand, m, rng=derive_rng(cfg.seed, "buffer"),
            t0=cfg.buffer.t0, anneal_period=cfg.buffer.anneal_period, tau_p=cfg.buffer.tau_p)
        self.best = cand
        record = {
            "iteration": 0, "island": None,
            "candidates": [{"text": cand.text, "status": "seed",
                            "fitness": cand.fitness, "nmse": cand.nmse}],
            "best_text": self.best.text,
            "best_fitness": self.best.fitness, "best_nmse": self.best.nmse,
            "responses": 0, "parsed": 0, "discarded": 0,
            "wall_clock": None,
        }
        return 1, [record]

    def restore(self, path: Path) -> tuple[int, list[dict]]:
        if not path.exists():
            raise ConfigError(f"checkpoint not found: {path}")
        try:
            with open(path) as fh:
                ckpt = json.load(fh)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"corrupt checkpoint {path}: {exc}") from exc
        if not isinstance(ckpt, dict):
            raise ConfigError(f"corrupt checkpoint {path}: not a state record")
        if ckpt.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {ckpt.get('version')!r}")
        if ckpt["config_fingerprint"] != config_fingerprint(self.cfg):
            raise ConfigError("checkpoint was produced by an incompatible configuration")
        inputs = self.spec.input_names
        self.buffer = ExperienceBuffer.from_snapshot(ckpt["buffer"], inputs)
        self.seed_candidate = _candidate_from_dict(ckpt["seed_candidate"], inputs)
        self.best = _candidate_from_dict(ckpt["best"], inputs)
        self.counts.update(ckpt["counts"])
        if ckpt["generator_rng"] is not None and hasattr(self.generator, "rng"):
            self.generator.rng.bit_generator.state = ckpt["generator_rng"]
        return ckpt["next_iteration"], ckpt["trajectory"]

    def checkpoint(self, out_dir: Path, next_iteration: int) -> None:
        state = {
            "version": CHECKPOINT_VERSION,
            "config_fingerprint": config_fingerprint(self.cfg),
            "next_iteration": next_iteration,
            "counts": self.counts,
            "buffer": self.buffer.snapshot(),
            "seed_candidate": _candidate_to_dict(self.seed_candidate),
            "best": _candidate_to_dict(self.best),
            "generator_rng": (self.generator.rng.bit_generator.state
                              if hasattr(self.generator, "rng") else None),
            "trajectory": [],
        }
        # trajectory records already on disk are reloaded on resume
        traj_path = out_dir / TRAJECTORY_FILE
        if traj_path.exists():
            with open(traj_path) as fh:
                state["trajectory"] = [json.loads(line) for line in fh if line.strip()]
        tmp = out_dir / (CHECKPOINT_FILE + ".tmp")
        with open(tmp, "w") as fh:
            json.dump(state, fh, sort_keys=True)
        os.replace(tmp, out_dir / CHECKPOINT_FILE)

    # -- one iteration -----------------------------------------------------

    def step(self, t: int) -> dict:
        cfg, flags = self.cfg, self.cfg.ablations
        started = time.monotonic()
        if flags.no_refinement:
            demos, island = [self.seed_candidate], None
        elif flags.single_island:
            demos, island = self.buffer.sample_top_k(cfg.demos_per_prompt)
        else:
            demos, island = self.buffer.sample(cfg.demos_per_prompt)
        prompt = build_prompt(self.spec, demos,
                              single_expression=flags.no_program,
                              literals_only=flags.no_skeleton_optimizer,
                              max_chars=cfg.max_prompt_chars)
        texts = self.generator.generate(prompt, demos, t)
        self.counts["responses"] += len(texts)

        parsed: list[tuple[int, "dsl.SkeletonProgram | None", str | None]] = []
        for j, raw in enumerate(texts):
            program, reason = parse_response(raw, self.spec.input_names,
                                             single_expression=flags.no_program)
            parsed.append((j, program, reason))
            if program is None:
                self.counts["discarded"] += 1
            else:
                self.counts["parsed"] += 1

        jobs = [(j, prog) for j, prog, _ in parsed if prog is not None]
        if not flags.no_skeleton_optimizer:
            self.counts["fit_calls"] += len(jobs)  # counted here: workers must not touch counts
        if cfg.evaluators > 1 and len(jobs) > 1:
            with concurrent.futures.ThreadPoolExecutor(cfg.evaluators) as pool:
                fitted = list(pool.map(lambda jp: self._fit_candidate(jp[1], t, jp[0], island), jobs))
        else:
            fitted = [self._fit_candidate(prog, t, j, island) for j, prog in jobs]
        by_slot = {j: out for (j, _), out in zip(jobs, fitted)}

        cand_records = []
        for j, program, reason in parsed:  # registration in sample order
            if program is None:
                cand_records.append({"text": None, "status": f"discarded: {reason}",
                                     "fitness": None, "nmse": None})
                continue
            cand, status = by_slot[j]
            if cand is None:
                self.counts["invalid"] += 1
                cand_records.append({"text": program.render(), "status": status,
                                     "fitness": None, "nmse": None})
                continue
            if flags.no_refinement:
                status = "scored"
            else:
                accepted = self.buffer.register(cand, island)
                status = "registered" if accepted else "rejected"
                if accepted:
                    self.counts["registered"] += 1
            if self.best is None or cand.fitness > self.best.fitness:
                self.best = cand
            cand_records.append({"text": cand.text, "status": status,
                                 "fitness": cand.fitness, "nmse": cand.nmse})

        discarded = sum(1 for _, p, _ in parsed if p is None)
        if discarded:
            logger.debug("iteration %d: %d of %d responses discarded", t, discarded, len(texts))
        return {
            "iteration": t,
            "island": island,
            "candidates": cand_records,
            "best_text": self.best.text,
            "best_fitness": self.best.fitness,
            "best_nmse": self.best.nmse,
            "responses": len(texts),
            "parsed": sum(1 for _, p, _ in parsed if p is not None),
            "discarded": discarded,
            "wall_clock": round(time.monotonic() - started, 6) if cfg.record_timing else None,
        }

    def _fit_candidate(self, program: "dsl.SkeletonProgram", iteration: int, slot: int,
                       island: int | None) -> tuple[Candidate | None, str]:
        cfg = self.cfg
        if cfg.ablations.no_skeleton_optimizer:
            params = np.ones(program.param_count)
            sc = score.fitness(program, params, self.train)
            if sc is None:
                return None, "discarded: invalid evaluation"
            return self._candidate(program, params, -sc.fitness, iteration, island), "scored"
        fit_cfg = dataclasses.replace(cfg.fit, seed=derive_seed(cfg.seed, "fit", iteration, slot))
        result = fit(program, self.train, fit_cfg)
        if not result.ok:
            return None, "discarded: invalid program"
        if result.status == "budget_exhausted" and cfg.discard_on_budget:
            return None, "discarded: budget exhausted"
        return self._candidate(program, result.params, result.mse, iteration, island), result.status

    def _candidate(self, program, params, mse_value: float, iteration: int,
                   island: int | None) -> Candidate:
        return Candidate(
            program=program,
            text=program.render(),
            params=tuple(float(p) for p in np.atleast_1d(params)),
            fitness=-mse_value,
            nmse=score.nmse_from_mse(mse_value, self.train.targets),
            iteration=iteration,
            island=island,
            generator_id=getattr(self.generator, "generator_id", "seed") if iteration else "seed",
        )

    # -- wrap-up -----------------------------------------------------------

    def finish(self, id_valid, ood_valid, trajectory: list[dict], out_dir) -> RunResult:
        scores: dict[str, dict[str, float | None]] = {}
        for name, ds in (("train", self.train), ("id_valid", id_valid), ("ood_valid", ood_valid)):
            if ds is None:
                continue
            sc = score.fitness(self.best.program, np.array(self.best.params), ds)
            scores[name] = ({"mse": -sc.fitness, "nmse": sc.nmse} if sc is not None
                            else {"mse": None, "nmse": None})
        return RunResult(
            best_text=self.best.text,
            best_params=self.best.params,
            best_fitness=self.best.fitness,
            scores=scores,
            iterations=self.cfg.iterations,
            counts=dict(self.counts),
            trajectory=trajectory,
            output_dir=str(out_dir) if out_dir else None,
        )


# ---------------------------------------------------------------------------
# Candidate and config serialization

def _candidate_to_dict(cand: Candidate) -> dict:
    return {"text": cand.text, "params": list(cand.params), "fitness": cand.fitness,
            "nmse": cand.nmse, "iteration": cand.iteration, "island": cand.island,
            "generator_id": cand.generator_id}


def _candidate_from_dict(rec: dict, inputs) -> Candidate:
    return Candidate(program=dsl.parse(rec["text"], inputs), text=rec["text"],
                     params=tuple(rec["params"]), fitness=rec["fitness"], nmse=rec["nmse"],
                     iteration=rec["iteration"], island=rec["island"],
                     generator_id=rec["generator_id"])


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_fingerprint(cfg: RunConfig) -> str:
    """Hash of the fields that determine search behaviour (not run length or paths)."""
    payload = config_to_dict(cfg)
    for volatile in ("iterations", "output_dir", "data_dir", "record_timing", "evaluators"):
        payload.pop(volatile, None)
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def fit_and_report(program_text: str, splits: dict[str, Dataset],
                   fit_cfg: FitConfig | None = None) -> dict:
    """Fit a skeleton to the train split and score it on every split."""
    train = splits["train"]
    program = dsl.parse(program_text, train.input_names)
    result = fit(program, train, fit_cfg or FitConfig())
    if not result.ok:
        raise RuntimeError("program is not scoreable on the training data")
    report: dict = {"program": program.render(), "params": [float(p) for p in result.params],
                    "status": result.status, "scores": {}}
    for name, ds in splits.items():
        sc = score.fitness(program, result.params, ds)
        report["scores"][name] = ({"mse": -sc.fitness, "nmse": sc.nmse} if sc is not None
                                  else {"mse": None, "nmse": None})
    return report
