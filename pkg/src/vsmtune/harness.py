"""End-to-end experiment orchestration.

Wires a respondent backend into the survey scorer to evaluate candidate
soft prompts, runs the Naive / ICL baselines and the DE optimization, and
drives hyperparameter sweeps. Artifacts are written under the configured
output directory: history.jsonl, report.json, best_prompt.bin, radar.csv,
ablation.csv.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .de import DEConfig, GenerationObserver, GenerationRecord, evolve, init_population
from .respondents import (
    RemoteEndpointConfig,
    RemoteRespondent,
    RespondentBackend,
    RespondentError,
    SyntheticRespondent,
    SyntheticRespondentConfig,
    UnknownCountry,
    UnparseableAnswer,
    ICL_EXAMPLES,
    build_icl_prompt,
    build_instruction,
)
from .softprompt import ShapeMismatch, SoftPrompt
from .survey import (
    CulturalDimensions,
    ResponseSet,
    SurveyDataset,
    SurveyQuestion,
    aggregate_responses,
    compute_dimensions,
    l1_fitness,
    load_dataset,
)

log = logging.getLogger(__name__)

METHOD_NAIVE = "Naive"
METHOD_ICL = "ICL"
METHOD_DE = "DEOptimized"

POLICY_RETRY_THEN_NEUTRAL = "retry_then_neutral"
POLICY_STRICT = "strict"

# Hyperparameter value lists swept by the default ablation grid.
ABLATION_TOKEN_COUNTS = (10, 20, 40, 60, 80, 100)
ABLATION_MUTATION_RATES = (0.2, 0.5, 0.7, 0.9)
ABLATION_RECOMBINATION_RATES = (0.2, 0.5, 0.7, 0.9)
ABLATION_POPULATION_SIZES = (5, 10, 20, 30)

HISTORY_FILE = "history.jsonl"
REPORT_FILE = "report.json"
BEST_PROMPT_FILE = "best_prompt.bin"
RADAR_FILE = "radar.csv"
ABLATION_FILE = "ablation.csv"


class BackendError(RuntimeError):
    """A backend failure, annotated with the question being asked."""

    def __init__(self, question_index: int, cause: BaseException):
        self.question_index = question_index
        super().__init__(f"backend failed on question {question_index}: {cause}")


@dataclass(frozen=True)
class EvaluationReport:
    """One method's survey outcome against the dataset target."""

    method: str
    dimensions: CulturalDimensions
    vsm13_loss: float
    responses: ResponseSet
    unparseable_count: int = 0


@dataclass(frozen=True)
class AblationGrid:
    """Hyperparameter lists plus how to sample combinations from them."""

    token_counts: tuple[int, ...] = ABLATION_TOKEN_COUNTS
    mutation_rates: tuple[float, ...] = ABLATION_MUTATION_RATES
    recombination_rates: tuple[float, ...] = ABLATION_RECOMBINATION_RATES
    population_sizes: tuple[int, ...] = ABLATION_POPULATION_SIZES
    trials: int = 15
    sampling: str = "random"  # "random" or "exhaustive"
    sweep_seed: int = 0

    def __post_init__(self):
        for name in ("token_counts", "mutation_rates", "recombination_rates", "population_sizes"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, values)
        if self.sampling not in ("random", "exhaustive"):
            raise ValueError(f"sampling must be 'random' or 'exhaustive', got {self.sampling!r}")
        if self.sampling == "random" and self.trials < 1:
            raise ValueError("trials must be >= 1 for random sampling")

    @classmethod
    def from_dict(cls, d: dict) -> "AblationGrid":
        kwargs = {}
        for name in ("token_counts", "mutation_rates", "recombination_rates", "population_sizes"):
            if name in d:
                kwargs[name] = tuple(d[name])
        for name in ("trials", "sweep_seed"):
            if name in d:
                kwargs[name] = int(d[name])
        if "sampling" in d:
            kwargs["sampling"] = str(d["sampling"])
        return cls(**kwargs)

    def settings(self) -> list[dict]:
        """The sampled (tokens, beta, C_r, N) combinations, in run order."""
        if self.sampling == "exhaustive":
            combos = itertools.product(
                self.token_counts, self.mutation_rates, self.recombination_rates, self.population_sizes
            )
            return [
                {"tokens": int(t), "mutation_rate": float(b), "recombination_rate": float(c), "population_size": int(n)}
                for t, b, c, n in combos
            ]
        rng = np.random.default_rng(self.sweep_seed)
        out = []
        for _ in range(self.trials):
            out.append(
                {
                    "tokens": int(self.token_counts[rng.integers(len(self.token_counts))]),
                    "mutation_rate": float(self.mutation_rates[rng.integers(len(self.mutation_rates))]),
                    "recombination_rate": float(self.recombination_rates[rng.integers(len(self.recombination_rates))]),
                    "population_size": int(self.population_sizes[rng.integers(len(self.population_sizes))]),
                }
            )
        return out


@dataclass
class ExperimentConfig:
    """A fully resolved run configuration (dataset and backend constructed)."""

    dataset: SurveyDataset
    backend: RespondentBackend
    de: DEConfig
    token_count: int
    embed_dim: int
    persona_text: str = ""
    unparseable_policy: str = POLICY_RETRY_THEN_NEUTRAL
    output_dir: Path = Path("out")
    workers: int = 1
    samples_per_question: int = 1
    seed_prompts: tuple[SoftPrompt, ...] = ()
    ablation: AblationGrid = field(default_factory=AblationGrid)
    overrides: tuple[str, ...] = ()

    def __post_init__(self):
        if self.token_count < 1:
            raise ValueError("token_count must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.unparseable_policy not in (POLICY_RETRY_THEN_NEUTRAL, POLICY_STRICT):
            raise ValueError(f"unknown unparseable_policy {self.unparseable_policy!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.samples_per_question < 1:
            raise ValueError("samples_per_question must be >= 1")
        self.output_dir = Path(self.output_dir)


def build_backend(config: dict, base_dir: Path | None = None) -> RespondentBackend:
    """Construct a backend from its config dict ({"type": "synthetic"|"remote", ...})."""
    config = dict(config)
    kind = config.pop("type", None)
    if kind == "synthetic":
        planted = config.pop("planted_optimum", None)
        if isinstance(planted, str):
            path = Path(planted)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            planted = SoftPrompt.load(path)
        return SyntheticRespondent(SyntheticRespondentConfig(planted_optimum=planted, **config))
    if kind == "remote":
        return RemoteRespondent(RemoteEndpointConfig(**config))
    raise ValueError(f"unknown backend type {kind!r}")


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply dotted key=value override strings, last one wins.

    Values are parsed as JSON when possible, else taken as strings.
    """
    out = json.loads(json.dumps(raw))  # deep copy, JSON types only
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"override must look like key=value, got {item!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = parsed
    return out


def load_experiment_config(
    path: str | Path,
    overrides: Sequence[str] = (),
    output_dir: str | Path | None = None,
) -> ExperimentConfig:
    """Read a JSON run config, apply overrides, and resolve referenced files."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    raw = apply_overrides(raw, overrides)
    base_dir = path.parent

    dataset_path = Path(raw["dataset"])
    if not dataset_path.is_absolute():
        dataset_path = base_dir / dataset_path
    dataset = load_dataset(dataset_path)

    backend = build_backend(raw.get("backend") or {"type": "synthetic"}, base_dir=base_dir)
    de = DEConfig(**(raw.get("de") or {}))

    seed_prompts = []
    for seed_path in raw.get("seed_prompts") or ():
        seed_path = Path(seed_path)
        if not seed_path.is_absolute():
            seed_path = base_dir / seed_path
        seed_prompts.append(SoftPrompt.load(seed_path))

    ablation = AblationGrid.from_dict(raw.get("ablation") or {})
    resolved_output = Path(output_dir) if output_dir is not None else Path(raw.get("output_dir", "out"))

    return ExperimentConfig(
        dataset=dataset,
        backend=backend,
        de=de,
        token_count=int(raw["token_count"]),
        embed_dim=int(raw["embed_dim"]),
        persona_text=str(raw.get("persona_text", "")),
        unparseable_policy=str(raw.get("unparseable_policy", POLICY_RETRY_THEN_NEUTRAL)),
        output_dir=resolved_output,
        workers=int(raw.get("workers", 1)),
        samples_per_question=int(raw.get("samples_per_question", 1)),
        seed_prompts=tuple(seed_prompts),
        ablation=ablation,
        overrides=tuple(overrides),
    )


def _ask_question(
    cfg: ExperimentConfig,
    candidate: SoftPrompt,
    instruction,
    question: SurveyQuestion,
) -> tuple[list[tuple[int, float]], int]:
    """All samples for one question, honoring the unparseable policy."""
    samples: list[tuple[int, float]] = []
    substitutions = 0
    for _ in range(cfg.samples_per_question):
        try:
            try:
                value = cfg.backend.answer(candidate, instruction, question)
            except UnparseableAnswer as exc:
                if cfg.unparseable_policy == POLICY_STRICT:
                    raise UnparseableAnswer(f"question {question.index}: {exc}") from exc
                try:
                    value = cfg.backend.answer(candidate, instruction, question)
                except UnparseableAnswer:
                    value = question.midpoint
                    substitutions += 1
        except UnparseableAnswer:
            raise
        except (RespondentError, ShapeMismatch) as exc:
            raise BackendError(question.index, exc) from exc
        samples.append((question.index, value))
    return samples, substitutions


def evaluate_candidate(
    candidate: SoftPrompt,
    cfg: ExperimentConfig,
    method: str = METHOD_DE,
    question_transform: Callable[[SurveyQuestion], SurveyQuestion] | None = None,
) -> tuple[float, EvaluationReport]:
    """Ask all 24 questions, score the six dimensions, return the L1 loss."""
    instruction = build_instruction(cfg.persona_text)
    questions = cfg.dataset.questions
    asked = [question_transform(q) if question_transform else q for q in questions]

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda q: _ask_question(cfg, candidate, instruction, q), asked))
    else:
        results = [_ask_question(cfg, candidate, instruction, q) for q in asked]

    raw: list[tuple[int, float]] = []
    unparseable = 0
    for samples, substitutions in results:
        raw.extend(samples)
        unparseable += substitutions

    responses = aggregate_responses(raw, questions=questions)
    dimensions = compute_dimensions(responses, cfg.dataset.constants)
    loss = l1_fitness(dimensions, cfg.dataset.target)
    report = EvaluationReport(
        method=method,
        dimensions=dimensions,
        vsm13_loss=loss,
        responses=responses,
        unparseable_count=unparseable,
    )
    return loss, report


def run_naive_baseline(cfg: ExperimentConfig) -> EvaluationReport:
    """Evaluate with zero virtual tokens (an empty soft prompt on the wire)."""
    _, report = evaluate_candidate(SoftPrompt.empty(cfg.embed_dim), cfg, method=METHOD_NAIVE)
    return report


def run_icl_baseline(cfg: ExperimentConfig) -> EvaluationReport:
    """Evaluate with country example sentences prepended to every question."""
    country = cfg.dataset.country_code
    if country not in ICL_EXAMPLES:
        raise UnknownCountry(country)

    def wrap(q: SurveyQuestion) -> SurveyQuestion:
        return replace(q, text=build_icl_prompt(country, q))

    _, report = evaluate_candidate(SoftPrompt.empty(cfg.embed_dim), cfg, method=METHOD_ICL, question_transform=wrap)
    return report


def _record_to_json(record: GenerationRecord) -> str:
    return json.dumps(dataclasses.asdict(record))


def make_fitness_fn(cfg: ExperimentConfig) -> Callable[[SoftPrompt], float]:
    """The DE black box: candidate -> survey loss.

    Deterministic backends get a digest-keyed cache so duplicate candidates
    are not re-asked. Under the strict unparseable policy a failing
    candidate scores +inf instead of aborting the run.
    """
    cache: Optional[dict[str, float]] = {} if cfg.backend.deterministic else None

    def fitness(candidate: SoftPrompt) -> float:
        key = candidate.digest() if cache is not None else None
        if key is not None and key in cache:
            return cache[key]
        try:
            loss, _ = evaluate_candidate(candidate, cfg)
        except UnparseableAnswer as exc:
            log.warning("candidate failed strict parse policy, scoring +inf: %s", exc)
            loss = float("inf")
        if key is not None:
            cache[key] = loss
        return loss

    return fitness


def run_de_experiment(
    cfg: ExperimentConfig,
    on_generation: GenerationObserver | None = None,
) -> tuple[SoftPrompt, EvaluationReport, list[GenerationRecord]]:
    """Optimize the soft prompt and persist history, best prompt, and report.

    The returned report re-evaluates the best candidate once; for
    deterministic backends this equals the optimizer's best fitness, and
    for stochastic ones both numbers appear in report.json.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    population = init_population(cfg.de, cfg.token_count, cfg.embed_dim, seeds=cfg.seed_prompts)
    fitness = make_fitness_fn(cfg)

    history_path = out / HISTORY_FILE
    with open(history_path, "w", encoding="utf-8") as history_file:

        def observer(record: GenerationRecord, best_member: SoftPrompt) -> None:
            history_file.write(_record_to_json(record) + "\n")
            history_file.flush()
            best_member.save(out / BEST_PROMPT_FILE)  # checkpoint for interrupted runs
            if on_generation is not None:
                on_generation(record, best_member)

        best, best_fitness, history = evolve(population, fitness, cfg.de, on_generation=observer)

    final_loss, report = evaluate_candidate(best, cfg, method=METHOD_DE)
    best.save(out / BEST_PROMPT_FILE)
    write_report(out / REPORT_FILE, report, cfg, extra={
        "optimizer": {
            "best_fitness": best_fitness,
            "generations": len(history),
            "best_prompt_digest": best.digest(),
        },
    })
    write_radar_csv(out / RADAR_FILE, cfg.dataset, [report])
    return best, report, history


def run_ablation(grid: AblationGrid, cfg: ExperimentConfig) -> list[dict]:
    """One DE run per sampled setting; rows land in ablation.csv.

    A failed row records the error category and the sweep continues.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for exp_no, setting in enumerate(grid.settings(), start=1):
        sub_cfg = replace(
            cfg,
            token_count=setting["tokens"],
            de=replace(
                cfg.de,
                mutation_rate=setting["mutation_rate"],
                recombination_rate=setting["recombination_rate"],
                population_size=setting["population_size"],
            ),
            output_dir=out / "ablation" / f"exp_{exp_no:02d}",
            seed_prompts=(),
        )
        row = {"exp_no": exp_no, **setting}
        try:
            _, report, _ = run_de_experiment(sub_cfg)
            row["vsm13_loss"] = report.vsm13_loss
        except Exception as exc:
            log.warning("ablation row %d failed: %s", exp_no, exc)
            row["vsm13_loss"] = f"ERROR:{type(exc).__name__}"
        rows.append(row)
    write_ablation_csv(out / ABLATION_FILE, rows)
    return rows


def write_ablation_csv(path: str | Path, rows: Sequence[dict]) -> None:
    columns = ["exp_no", "tokens", "mutation_rate", "recombination_rate", "population_size", "vsm13_loss"]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def write_radar_csv(path: str | Path, dataset: SurveyDataset, reports: Sequence[EvaluationReport]) -> None:
    """Six-dimension rows per method (plus the target) for external plotting."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "pdi", "idv", "mas", "uai", "lto", "ivr"])
        writer.writerow(["Target", *dataset.target.as_tuple()])
        for report in reports:
            writer.writerow([report.method, *report.dimensions.as_tuple()])


def report_to_dict(report: EvaluationReport, cfg: ExperimentConfig) -> dict:
    return {
        "method": report.method,
        "country_code": cfg.dataset.country_code,
        "dimensions": report.dimensions.to_dict(),
        "target": cfg.dataset.target.to_dict(),
        "vsm13_loss": report.vsm13_loss,
        "unparseable_count": report.unparseable_count,
        "responses": {str(i): list(v) for i, v in sorted(report.responses.per_question.items())},
        "overrides": list(cfg.overrides),
    }


def write_report(path: str | Path, report: EvaluationReport, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    payload = report_to_dict(report, cfg)
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
