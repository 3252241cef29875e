"""Multi-island experience buffer with score clusters and annealed sampling.

Each island holds candidates grouped into clusters keyed by a score
signature (fitness rounded to 6 significant digits).  Prompt demos are
drawn in two stages: a uniformly random island, then per draw a cluster
by Boltzmann selection over cluster mean scores and a member by
length-biased selection favouring shorter programs.  Periodically the
worst half of the islands is discarded and reseeded with a surviving
island's best program.

All mutation (register, reset) must be serialized by the caller; the
engine applies registrations in candidate sample order so evaluator
parallelism cannot change buffer states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dsl import SkeletonProgram

DEFAULT_ISLANDS = 10
DEFAULT_T0 = 0.1
DEFAULT_ANNEAL_PERIOD = 10_000
DEFAULT_TAU_P = 1.0
MIN_TEMPERATURE = 1e-6
SIGNATURE_DIGITS = 6


@dataclass(frozen=True)
class Candidate:
    """A skeleton with fitted parameters, its score and provenance."""

    program: SkeletonProgram
    text: str  # canonical rendering; len(text) is the sampling length
    params: tuple[float, ...]
    fitness: float  # -train MSE
    nmse: float
    iteration: int
    island: int | None
    generator_id: str


def signature(fitness: float) -> str:
    """Cluster key: fitness rounded to 6 significant digits."""
    return f"{fitness:.{SIGNATURE_DIGITS}g}"


def cluster_probabilities(mean_scores: Sequence[float], u: int,
                          t0: float = DEFAULT_T0,
                          anneal_period: int = DEFAULT_ANNEAL_PERIOD) -> np.ndarray:
    """Boltzmann selection over cluster mean scores.

    The temperature anneals as the island fills: t0 * (1 - (u % N) / N),
    floored at a tiny positive value to keep the softmax defined.
    """
    scores = np.asarray(mean_scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no clusters to sample")
    tau = temperature(u, t0, anneal_period)
    z = scores / tau
    z = z - np.max(z)
    p = np.exp(z)
    return p / p.sum()


def temperature(u: int, t0: float = DEFAULT_T0, anneal_period: int = DEFAULT_ANNEAL_PERIOD) -> float:
    return max(t0 * (1.0 - (u % anneal_period) / anneal_period), MIN_TEMPERATURE)


def length_probabilities(char_lengths: Sequence[int], tau_p: float = DEFAULT_TAU_P) -> np.ndarray:
    """Within-cluster selection favouring shorter programs.

    Works on negative lengths l_i, normalised as (l_i - min l) / (max l + 1e-6),
    with weights exp(-l_norm / tau_p).
    """
    lengths = np.asarray(char_lengths, dtype=float)
    if lengths.size == 0:
        raise ValueError("no members to sample")
    neg = -lengths
    norm = (neg - neg.min()) / (neg.max() + 1e-6)
    w = np.exp(-norm / tau_p)
    return w / w.sum()


class Island:
    """Insertion-ordered clusters plus the island's best score and size."""

    def __init__(self, seed: Candidate):
        self.clusters: dict[str, list[tuple[int, Candidate]]] = {}
        self.best_fitness = -math.inf
        self.count = 0  # u: programs currently stored
        self._next_seq = 0
        self._insert(seed)

    def _insert(self, cand: Candidate) -> None:
        key = signature(cand.fitness)
        self.clusters.setdefault(key, []).append((self._next_seq, cand))
        self._next_seq += 1
        self.count += 1
        self.best_fitness = max(self.best_fitness, cand.fitness)

    def register(self, cand: Candidate) -> bool:
        if not cand.fitness > self.best_fitness:  # strict improvement only
            return False
        self._insert(cand)
        return True

    def best_member(self) -> Candidate:
        """Highest-scoring candidate, oldest on exact score ties."""
        entries = [e for members in self.clusters.values() for e in members]
        seq, cand = max(entries, key=lambda e: (e[1].fitness, -e[0]))
        return cand

    def members(self) -> list[tuple[int, Candidate]]:
        return [e for m in self.clusters.values() for e in m]


class ExperienceBuffer:
    def __init__(self, islands: list[Island], rng: np.random.Generator,
                 t0: float = DEFAULT_T0, anneal_period: int = DEFAULT_ANNEAL_PERIOD,
                 tau_p: float = DEFAULT_TAU_P):
        if t0 <= 0 or anneal_period <= 0 or tau_p <= 0:
            raise ValueError("buffer hyperparameters must be positive")
        self.islands = islands
        self.rng = rng
        self.t0 = t0
        self.anneal_period = anneal_period
        self.tau_p = tau_p

    @classmethod
    def initialize(cls, seed: Candidate, m: int = DEFAULT_ISLANDS,
                   rng: np.random.Generator | None = None, **hyper) -> "ExperienceBuffer":
        """Every island starts with a copy of the seed candidate."""
        if m != 1 and (m < 2 or m % 2 != 0):
            raise ValueError(f"island count must be even and >= 2 (or exactly 1), got {m}")
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls([Island(seed) for _ in range(m)], rng, **hyper)

    @property
    def num_islands(self) -> int:
        return len(self.islands)

    def register(self, cand: Candidate, island_index: int) -> bool:
        """Add to the source island iff it strictly improves the island's best."""
        return self.islands[island_index].register(cand)

    def sample(self, k: int) -> tuple[list[Candidate], int]:
        """k demos from a uniformly chosen island, sorted worst-to-best."""
        island_index = int(self.rng.integers(self.num_islands))
        island = self.islands[island_index]
        keys = list(island.clusters)
        means = [float(np.mean([c.fitness for _, c in island.clusters[key]])) for key in keys]
        cluster_p = cluster_probabilities(means, island.count, self.t0, self.anneal_period)
        demos = []
        for _ in range(k):
            key = keys[int(self.rng.choice(len(keys), p=cluster_p))]
            members = island.clusters[key]
            member_p = length_probabilities([len(c.text) for _, c in members], self.tau_p)
            demos.append(members[int(self.rng.choice(len(members), p=member_p))][1])
        demos.sort(key=lambda c: c.fitness)
        return demos, island_index

    def sample_top_k(self, k: int) -> tuple[list[Candidate], int]:
        """Deterministic alternative: best k overall from island 0, worst-to-best."""
        entries = sorted(self.islands[0].members(), key=lambda e: (-e[1].fitness, e[0]))
        demos = [cand for _, cand in entries[:k]]
        demos.reverse()
        return demos, 0

    def reset_worst(self) -> list[int]:
        """Discard the floor(m/2) worst islands; reseed each from a survivor's best.

        Islands are ranked by best fitness with ties broken towards lower index
        (the lower index counts as worse); reseeding copies a uniformly chosen
        surviving island's best program, oldest member on score ties.
        """
        m = self.num_islands
        if m < 2:
            return []
        order = sorted(range(m), key=lambda i: (self.islands[i].best_fitness, i))
        doomed = order[: m // 2]
        survivors = order[m // 2 :]
        for idx in doomed:
            donor = survivors[int(self.rng.integers(len(survivors)))]
            self.islands[idx] = Island(self.islands[donor].best_member())
        return sorted(doomed)

    def best_candidate(self) -> Candidate:
        best = [isl.best_member() for isl in self.islands]
        return max(best, key=lambda c: c.fitness)

    def check_invariants(self) -> None:
        """Validator walk; raises AssertionError on a broken island."""
        for i, island in enumerate(self.islands):
            assert island.clusters, f"island {i} has no clusters"
            total = 0
            best = -math.inf
            for key, members in island.clusters.items():
                assert members, f"island {i} cluster {key} empty"
                seqs = [seq for seq, _ in members]
                assert seqs == sorted(seqs), f"island {i} cluster {key} out of order"
                for _, cand in members:
                    assert signature(cand.fitness) == key, f"island {i}: member signature mismatch"
                    best = max(best, cand.fitness)
                total += len(members)
            assert total == island.count, f"island {i}: count {island.count} != members {total}"
            assert best == island.best_fitness, f"island {i}: stale best"

    # -- checkpointing --------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-serializable state including every candidate and the RNG stream."""
        return {
            "t0": self.t0,
            "anneal_period": self.anneal_period,
            "tau_p": self.tau_p,
            "rng_state": _encode_rng(self.rng),
            "islands": [
                {
                    "best_fitness": island.best_fitness,
                    "count": island.count,
                    "next_seq": island._next_seq,
                    "clusters": [
                        {
                            "signature": key,
                            "members": [
                                {
                                    "insertion_index": seq,
                                    "text": cand.text,
                                    "params": list(cand.params),
                                    "fitness": cand.fitness,
                                    "nmse": cand.nmse,
                                    "iteration": cand.iteration,
                                    "island": cand.island,
                                    "generator_id": cand.generator_id,
                                }
                                for seq, cand in members
                            ],
                        }
                        for key, members in island.clusters.items()
                    ],
                }
                for island in self.islands
            ],
        }

    @classmethod
    def from_snapshot(cls, state: dict, inputs: Sequence[str]) -> "ExperienceBuffer":
        from .dsl import parse

        rng = np.random.default_rng(0)
        rng.bit_generator.state = state["rng_state"]
        islands = []
        for irec in state["islands"]:
            island = Island.__new__(Island)
            island.clusters = {}
            island.best_fitness = irec["best_fitness"]
            island.count = irec["count"]
            island._next_seq = irec["next_seq"]
            for crec in irec["clusters"]:
                island.clusters[crec["signature"]] = [
                    (
                        mrec["insertion_index"],
                        Candidate(
                            program=parse(mrec["text"], inputs),
                            text=mrec["text"],
                            params=tuple(mrec["params"]),
                            fitness=mrec["fitness"],
                            nmse=mrec["nmse"],
                            iteration=mrec["iteration"],
                            island=mrec["island"],
                            generator_id=mrec["generator_id"],
                        ),
                    )
                    for mrec in crec["members"]
                ]
            islands.append(island)
        return cls(islands, rng, state["t0"], state["anneal_period"], state["tau_p"])


def _encode_rng(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state
