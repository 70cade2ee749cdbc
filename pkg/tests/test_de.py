import logging
import math

import numpy as np
import pytest

from vsmtune.de import (
    DEConfig,
    FitnessEvaluationFailed,
    GenerationRecord,
    Population,
    Selection,
    crossover,
    draw_partner_indices,
    evolve,
    init_population,
    member_rng,
    mutate,
    select,
)
from vsmtune.softprompt import ShapeMismatch, SoftPrompt


def vec(*values) -> SoftPrompt:
    return SoftPrompt(np.array([values], dtype=np.float32))


def sphere(prompt: SoftPrompt) -> float:
    return float(np.sum(prompt.values.astype(np.float64) ** 2))


class TestDEConfig:
    def test_defaults_valid(self):
        cfg = DEConfig()
        assert cfg.population_size == 7 and cfg.max_generations == 50
        assert cfg.mutation_rate == cfg.recombination_rate == 0.9
        assert cfg.abs_tolerance == 1e-9 and cfg.rng_seed == 42

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"population_size": 3},
            {"max_generations": 0},
            {"mutation_rate": 0.0},
            {"recombination_rate": 1.5},
            {"recombination_rate": -0.1},
            {"lower_bound": 5.0, "upper_bound": -5.0},
            {"abs_tolerance": -1e-9},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            DEConfig(**kwargs)


class TestMutate:
    def test_hand_example(self):
        cfg = DEConfig(mutation_rate=0.9)
        v = mutate(vec(0.0), vec(1.0), vec(2.0), vec(0.0), cfg)
        assert v.values[0, 0] == pytest.approx(2.7, abs=1e-6)

    def test_step_vanishes(self):
        cfg = DEConfig()
        x = vec(1.25, -0.5)
        b = vec(0.75, 2.0)
        v = mutate(x, x, b, b, cfg)
        assert np.array_equal(v.values, x.values)

    def test_clamped_to_bounds(self):
        cfg = DEConfig(mutation_rate=1.0)
        v = mutate(vec(0.0), vec(10.0), vec(0.0), vec(0.0), cfg)
        assert v.values[0, 0] == 5.0

    def test_shape_mismatch(self):
        cfg = DEConfig()
        with pytest.raises(ShapeMismatch):
            mutate(vec(0.0), vec(0.0, 0.0), vec(0.0), vec(0.0), cfg)


class TestCrossover:
    def test_full_recombination_copies_mutant(self):
        cfg = DEConfig(recombination_rate=1.0)
        target = SoftPrompt(np.zeros((4, 5)))
        mutant = SoftPrompt(np.arange(20, dtype=np.float32).reshape(4, 5) / 10.0)
        trial = crossover(target, mutant, cfg, np.random.default_rng(0))
        assert np.array_equal(trial.values, mutant.values)

    def test_zero_recombination_keeps_single_forced_component(self):
        cfg = DEConfig(recombination_rate=0.0)
        target = SoftPrompt(np.zeros((2, 8)))
        mutant = SoftPrompt(np.ones((2, 8)))
        for case in range(1000):
            trial = crossover(target, mutant, cfg, np.random.default_rng(case))
            changed = np.flatnonzero(trial.values != target.values)
            assert changed.size == 1
            assert trial.values.ravel()[changed[0]] == 1.0

    def test_monte_carlo_rate(self):
        cfg = DEConfig(recombination_rate=0.5)
        target = SoftPrompt(np.zeros((1, 1000)))
        mutant = SoftPrompt(np.ones((1, 1000)))
        rng = np.random.default_rng(99)
        total = 0
        trials = 10_000
        for _ in range(trials):
            trial = crossover(target, mutant, cfg, rng)
            total += int(trial.values.sum())
        fraction = total / (trials * 1000)
        assert abs(fraction - 0.5) <= 0.02

    def test_shape_mismatch(self):
        cfg = DEConfig()
        with pytest.raises(ShapeMismatch):
            crossover(vec(0.0), SoftPrompt(np.zeros((2, 2))), cfg, np.random.default_rng(0))


class TestSelect:
    def test_strict_improvement(self):
        assert select(5.0, 4.9) is Selection.TRIAL

    def test_tie_keeps_incumbent(self):
        assert select(5.0, 5.0) is Selection.TARGET

    def test_sign_agnostic(self):
        assert select(-1.0, -2.0) is Selection.TRIAL

    def test_worse_trial_rejected(self):
        assert select(1.0, 2.0) is Selection.TARGET

    def test_semantics_over_random_pairs(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            a, b = rng.normal(size=2)
            expected = Selection.TRIAL if b < a else Selection.TARGET
            assert select(float(a), float(b)) is expected


class TestPartnerIndices:
    def test_distinctness(self):
        for case in range(1000):
            rng = np.random.default_rng(case)
            n = int(rng.integers(4, 12))
            exclude = int(rng.integers(n))
            b, c = draw_partner_indices(rng, n, exclude)
            assert b != c
            assert b != exclude and c != exclude
            assert 0 <= b < n and 0 <= c < n


class TestInitPopulation:
    def test_random_members_in_bounds(self):
        cfg = DEConfig(population_size=5, lower_bound=-2.0, upper_bound=3.0)
        pop = init_population(cfg, 4, 6)
        assert pop.size == 5
        for member in pop.members:
            assert member.values.shape == (4, 6)
            assert np.all(member.values >= -2.0) and np.all(member.values <= 3.0)
        assert pop.fitnesses == [None] * 5

    def test_all_seeds(self):
        cfg = DEConfig(population_size=7)
        seeds = [SoftPrompt(np.full((2, 3), float(i))) for i in range(7)]
        pop = init_population(cfg, 2, 3, seeds=seeds)
        assert all(m is s for m, s in zip(pop.members, seeds))

    def test_partial_seeds(self):
        cfg = DEConfig(population_size=7)
        seeds = [SoftPrompt(np.full((2, 3), float(i))) for i in range(3)]
        pop = init_population(cfg, 2, 3, seeds=seeds)
        assert all(m is s for m, s in zip(pop.members[:3], seeds))
        unseeded = init_population(cfg, 2, 3)
        for i in range(3, 7):
            assert pop.members[i].same_values(unseeded.members[i])

    def test_seed_shape_mismatch(self):
        cfg = DEConfig(population_size=7)
        with pytest.raises(ShapeMismatch):
            init_population(cfg, 2, 3, seeds=[SoftPrompt(np.zeros((2, 4)))])

    def test_too_many_seeds(self):
        cfg = DEConfig(population_size=4)
        seeds = [SoftPrompt(np.zeros((1, 1)))] * 5
        with pytest.raises(ValueError, match="seeds"):
            init_population(cfg, 1, 1, seeds=seeds)


class TestPopulation:
    def test_best_index_tie_break(self):
        members = [SoftPrompt(np.zeros((1, 1)))] * 3
        pop = Population(members=members, fitnesses=[2.0, 1.0, 1.0])
        assert pop.best_index == 1

    def test_best_index_requires_evaluation(self):
        pop = Population(members=[SoftPrompt(np.zeros((1, 1)))], fitnesses=[None])
        with pytest.raises(ValueError, match="unevaluated"):
            pop.best_index

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Population(members=[SoftPrompt(np.zeros((1, 1)))], fitnesses=[1.0, 2.0])


class TestGenerationRecord:
    def test_best_not_above_mean(self):
        GenerationRecord(1, 1.0, 2.0, "d")
        with pytest.raises(ValueError):
            GenerationRecord(1, 2.0, 1.0, "d")


class TestEvolve:
    def test_sphere_converges(self):
        cfg = DEConfig(
            population_size=20, max_generations=300, mutation_rate=0.7,
            recombination_rate=0.9, abs_tolerance=0.0, rng_seed=0,
        )
        pop = init_population(cfg, 1, 10)
        best, fitness, history = evolve(pop, sphere, cfg)
        assert fitness < 1e-3
        assert fitness == sphere(best)

    def test_constant_fitness_stops_immediately(self):
        cfg = DEConfig(population_size=6, max_generations=50, rng_seed=1)
        pop = init_population(cfg, 1, 4)
        best, fitness, history = evolve(pop, lambda p: 7.5, cfg)
        assert fitness == 7.5
        assert len(history) == 1
        assert history[0].best_fitness == history[0].mean_fitness == 7.5

    def test_bitwise_determinism(self):
        cfg = DEConfig(population_size=8, max_generations=40, abs_tolerance=0.0, rng_seed=5)
        runs = []
        for _ in range(2):
            pop = init_population(cfg, 2, 5)
            runs.append(evolve(pop, sphere, cfg))
        (best_a, fit_a, hist_a), (best_b, fit_b, hist_b) = runs
        assert best_a.to_bytes() == best_b.to_bytes()
        assert fit_a == fit_b
        assert hist_a == hist_b

    def test_monotonic_best_fitness(self):
        def rugged(prompt: SoftPrompt) -> float:
            x = prompt.values.astype(np.float64)
            return float(np.sum(x**2 - 3.0 * np.cos(2.0 * x)) + 3.0 * x.size)

        cfg = DEConfig(population_size=10, max_generations=120, abs_tolerance=0.0, rng_seed=2)
        pop = init_population(cfg, 1, 6)
        _, _, history = evolve(pop, rugged, cfg)
        bests = [record.best_fitness for record in history]
        assert all(later <= earlier for earlier, later in zip(bests, bests[1:]))
        means = [record.mean_fitness for record in history]
        assert all(b <= m for b, m in zip(bests, means))

    def test_all_candidates_within_bounds(self):
        cfg = DEConfig(
            population_size=10, max_generations=100, lower_bound=-1.0, upper_bound=2.0,
            abs_tolerance=0.0, rng_seed=3,
        )
        seen = []

        def checked(prompt: SoftPrompt) -> float:
            seen.append(prompt)
            assert np.all(prompt.values >= -1.0) and np.all(prompt.values <= 2.0)
            return sphere(prompt)

        pop = init_population(cfg, 2, 4)
        evolve(pop, checked, cfg)
        assert len(seen) >= 1000

    def test_fitness_failure_carries_context(self):
        cfg = DEConfig(population_size=4, max_generations=10, rng_seed=4)
        calls = []

        def flaky(prompt: SoftPrompt) -> float:
            calls.append(prompt)
            if len(calls) == 6:  # second generation, member index 1
                raise RuntimeError("backend down")
            return sphere(prompt)

        pop = init_population(cfg, 1, 3)
        with pytest.raises(FitnessEvaluationFailed) as excinfo:
            evolve(pop, flaky, cfg)
        assert excinfo.value.generation == 1
        assert excinfo.value.member_index == 1
        assert "backend down" in str(excinfo.value)

    def test_non_finite_fitness_never_selected(self, caplog):
        cfg = DEConfig(population_size=5, max_generations=20, abs_tolerance=0.0, rng_seed=6)
        count = [0]

        def poisoned(prompt: SoftPrompt) -> float:
            count[0] += 1
            if count[0] <= 5:
                return float(count[0])
            return math.nan

        pop = init_population(cfg, 1, 3)
        with caplog.at_level(logging.WARNING, logger="vsmtune.de"):
            best, fitness, history = evolve(pop, poisoned, cfg)
        assert fitness == 1.0  # the first initial member stays best forever
        assert all(record.best_fitness == 1.0 for record in history)
        assert any("non-finite" in record.message for record in caplog.records)

    def test_preevaluated_fitnesses_reused(self):
        cfg = DEConfig(population_size=4, max_generations=1, recombination_rate=1.0, rng_seed=7)
        pop = init_population(cfg, 1, 2)
        evaluations = []

        def counting(prompt: SoftPrompt) -> float:
            evaluations.append(prompt)
            return sphere(prompt)

        pop.fitnesses = [sphere(m) for m in pop.members]
        evolve(pop, counting, cfg)
        assert len(evaluations) == 4  # only the generation-1 trials

    def test_population_size_must_match_config(self):
        cfg = DEConfig(population_size=5)
        pop = init_population(DEConfig(population_size=4), 1, 2)
        with pytest.raises(ValueError, match="population"):
            evolve(pop, sphere, cfg)


def test_member_rng_streams_are_distinct():
    a = member_rng(0, 1, 0).random(4)
    b = member_rng(0, 1, 1).random(4)
    c = member_rng(0, 2, 0).random(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    again = member_rng(0, 1, 0).random(4)
    assert np.array_equal(a, again)
