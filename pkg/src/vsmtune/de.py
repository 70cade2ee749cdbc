"""Differential Evolution over bounded soft-prompt matrices.

Current-to-best/1 mutation with binomial crossover and strict one-to-one
selection, minimizing an arbitrary black-box fitness. All randomness is
drawn from per-(generation, member) streams derived from the config seed,
so serial and parallel evaluation orders produce identical results.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .softprompt import ShapeMismatch, SoftPrompt

log = logging.getLogger(__name__)

FitnessFn = Callable[[SoftPrompt], float]
GenerationObserver = Callable[["GenerationRecord", SoftPrompt], None]


@dataclass(frozen=True)
class DEConfig:
    """Evolution hyperparameters. Defaults match the standard run settings."""

    population_size: int = 7
    max_generations: int = 50
    mutation_rate: float = 0.9
    recombination_rate: float = 0.9
    lower_bound: float = -5.0
    upper_bound: float = 5.0
    abs_tolerance: float = 1e-9
    rng_seed: int = 42

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population_size must be >= 4")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if not self.mutation_rate > 0:
            raise ValueError("mutation_rate must be > 0")
        if not 0.0 <= self.recombination_rate <= 1.0:
            raise ValueError("recombination_rate must be in [0, 1]")
        if not self.lower_bound < self.upper_bound:
            raise ValueError("lower_bound must be < upper_bound")
        if self.abs_tolerance < 0:
            raise ValueError("abs_tolerance must be >= 0")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


@dataclass
class Population:
    """Candidate soft prompts with their (possibly unevaluated) fitnesses."""

    members: list[SoftPrompt]
    fitnesses: list[Optional[float]]
    generation: int = 0

    def __post_init__(self):
        if len(self.members) != len(self.fitnesses):
            raise ValueError("members and fitnesses must have the same length")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def best_index(self) -> int:
        """Index of the lowest fitness; lowest index wins ties."""
        if any(f is None for f in self.fitnesses):
            raise ValueError("population has unevaluated members")
        return min(range(len(self.fitnesses)), key=lambda i: (self.fitnesses[i], i))


@dataclass(frozen=True)
class GenerationRecord:
    """Per-generation log line: population best/mean and best-member hash."""

    generation: int
    best_fitness: float
    mean_fitness: float
    best_member_digest: str

    def __post_init__(self):
        if not self.best_fitness <= self.mean_fitness:
            raise ValueError("best_fitness must be <= mean_fitness")


class Selection(enum.Enum):
    TRIAL = "trial"
    TARGET = "target"


class FitnessEvaluationFailed(RuntimeError):
    """The black-box fitness raised; carries generation and member context."""

    def __init__(self, generation: int, member_index: int, cause: BaseException):
        self.generation = generation
        self.member_index = member_index
        super().__init__(f"fitness evaluation failed at generation {generation}, member {member_index}: {cause}")


def member_rng(seed: int, generation: int, member_index: int) -> np.random.Generator:
    """Independent stream for one member of one generation (0 = initialization)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(generation, member_index))
    return np.random.default_rng(ss)


def draw_partner_indices(rng: np.random.Generator, population_size: int, exclude: int) -> tuple[int, int]:
    """Two distinct member indices, both different from `exclude`."""
    candidates = [j for j in range(population_size) if j != exclude]
    b, c = rng.choice(candidates, size=2, replace=False)
    return int(b), int(c)


def _check_shapes(reference: SoftPrompt, *others: SoftPrompt) -> None:
    shape = reference.values.shape
    for other in others:
        if other.values.shape != shape:
            raise ShapeMismatch(f"shape {other.values.shape} != {shape}")


def mutate(target: SoftPrompt, best: SoftPrompt, b: SoftPrompt, c: SoftPrompt, cfg: DEConfig) -> SoftPrompt:
    """Mutant = target + beta * (best - target + b - c), clamped to the bounds."""
    _check_shapes(target, best, b, c)
    beta = np.float32(cfg.mutation_rate)
    v = target.values + beta * (best.values - target.values + b.values - c.values)
    np.clip(v, np.float32(cfg.lower_bound), np.float32(cfg.upper_bound), out=v)
    return SoftPrompt(v)


def crossover(target: SoftPrompt, mutant: SoftPrompt, cfg: DEConfig, rng: np.random.Generator) -> SoftPrompt:
    """Binomial crossover on flattened components with one forced mutant index.

    Component i takes the mutant value when r_i < recombination_rate or when
    i is the forced index, so the trial always carries at least one mutant
    component.
    """
    _check_shapes(target, mutant)
    size = target.values.size
    draws = rng.random(size)
    forced = int(rng.integers(size))
    mask = draws < cfg.recombination_rate
    mask[forced] = True
    trial = np.where(mask, mutant.values.ravel(), target.values.ravel())
    return SoftPrompt(trial.reshape(target.values.shape))


def select(target_fitness: float, trial_fitness: float) -> Selection:
    """Trial replaces the incumbent only on strict improvement."""
    return Selection.TRIAL if trial_fitness < target_fitness else Selection.TARGET


def init_population(
    cfg: DEConfig,
    token_count: int,
    embed_dim: int,
    seeds: Sequence[SoftPrompt] | None = None,
) -> Population:
    """Seed members first (in order), then uniform-random matrices in bounds."""
    if token_count < 1:
        raise ValueError("token_count must be >= 1")
    if embed_dim < 1:
        raise ValueError("embed_dim must be >= 1")
    seeds = list(seeds or ())
    if len(seeds) > cfg.population_size:
        raise ValueError(f"got {len(seeds)} seeds for population_size {cfg.population_size}")
    for seed in seeds:
        if seed.values.shape != (token_count, embed_dim):
            raise ShapeMismatch(f"seed shape {seed.values.shape} != ({token_count}, {embed_dim})")

    members = list(seeds)
    for i in range(len(seeds), cfg.population_size):
        rng = member_rng(cfg.rng_seed, 0, i)
        values = rng.uniform(cfg.lower_bound, cfg.upper_bound, size=(token_count, embed_dim))
        members.append(SoftPrompt(values))
    return Population(members=members, fitnesses=[None] * cfg.population_size, generation=0)


def _coerced_fitness(fn: FitnessFn, candidate: SoftPrompt, generation: int, member_index: int) -> float:
    try:
        value = float(fn(candidate))
    except Exception as exc:
        raise FitnessEvaluationFailed(generation, member_index, exc) from exc
    if not math.isfinite(value):
        log.warning(
            "non-finite fitness %r at generation %d, member %d; treating as +inf",
            value, generation, member_index,
        )
        return math.inf
    return value


def evolve(
    initial: Population,
    fitness_fn: FitnessFn,
    cfg: DEConfig,
    on_generation: GenerationObserver | None = None,
) -> tuple[SoftPrompt, float, list[GenerationRecord]]:
    """Run DE for at most max_generations, returning the best-ever candidate.

    Stops early once the population fitness spread (max - min) is within
    abs_tolerance, checked at the end of each generation. Members with an
    unevaluated (None) fitness are evaluated first. Incumbent fitnesses are
    never re-evaluated, so for noisy fitness functions the stored values
    are the ones observed at selection time.
    """
    n = initial.size
    if n != cfg.population_size:
        raise ValueError(f"initial population size {n} != config population_size {cfg.population_size}")
    members = list(initial.members)
    _check_shapes(members[0], *members[1:])
    fitnesses: list[float] = []
    for i, stored in enumerate(initial.fitnesses):
        if stored is None:
            fitnesses.append(_coerced_fitness(fitness_fn, members[i], 0, i))
        else:
            fitnesses.append(float(stored))

    best_index = min(range(n), key=lambda i: (fitnesses[i], i))
    best_ever = members[best_index]
    best_ever_fitness = fitnesses[best_index]
    history: list[GenerationRecord] = []

    for generation in range(1, cfg.max_generations + 1):
        gen_best = members[best_index]
        next_members = list(members)
        next_fitnesses = list(fitnesses)
        for i in range(n):
            rng = member_rng(cfg.rng_seed, generation, i)
            b_idx, c_idx = draw_partner_indices(rng, n, exclude=i)
            mutant = mutate(members[i], gen_best, members[b_idx], members[c_idx], cfg)
            trial = crossover(members[i], mutant, cfg, rng)
            trial_fitness = _coerced_fitness(fitness_fn, trial, generation, i)
            if select(fitnesses[i], trial_fitness) is Selection.TRIAL:
                next_members[i] = trial
                next_fitnesses[i] = trial_fitness
        members, fitnesses = next_members, next_fitnesses

        best_index = min(range(n), key=lambda i: (fitnesses[i], i))
        if fitnesses[best_index] < best_ever_fitness:
            best_ever = members[best_index]
            best_ever_fitness = fitnesses[best_index]
        record = GenerationRecord(
            generation=generation,
            best_fitness=fitnesses[best_index],
            mean_fitness=sum(fitnesses) / n,
            best_member_digest=members[best_index].digest(),
        )
        history.append(record)
        if on_generation is not None:
            on_generation(record, members[best_index])

        worst = max(fitnesses)
        if math.isfinite(worst) and worst - fitnesses[best_index] <= cfg.abs_tolerance:
            log.info("early stop at generation %d: fitness spread within tolerance", generation)
            break

    return best_ever, best_ever_fitness, history
