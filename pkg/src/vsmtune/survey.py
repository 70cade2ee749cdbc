"""VSM13 survey model: questions, response aggregation, dimension scores, L1 fitness.

The six cultural-dimension scores (PDI, IDV, MAS, UAI, LTO, IVR) are fixed
weighted differences of per-question response means plus a per-dimension
offset constant. Everything here is a pure function of its inputs; all
values are immutable after construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

QUESTION_COUNT = 24
QUESTION_INDICES = tuple(range(1, QUESTION_COUNT + 1))

DIMENSION_NAMES = ("pdi", "idv", "mas", "uai", "lto", "ivr")

# Per dimension: two (weight, plus_question, minus_question) terms.
# score = w1*(mean[p1] - mean[m1]) + w2*(mean[p2] - mean[m2]) + offset
DIMENSION_TERMS: dict[str, tuple[tuple[float, int, int], tuple[float, int, int]]] = {
    "pdi": ((35.0, 7, 2), (25.0, 20, 23)),
    "idv": ((35.0, 4, 1), (35.0, 9, 6)),
    "mas": ((35.0, 5, 3), (25.0, 8, 10)),
    "uai": ((40.0, 18, 15), (25.0, 21, 24)),
    "lto": ((40.0, 13, 14), (25.0, 19, 22)),
    "ivr": ((35.0, 12, 11), (40.0, 17, 16)),
}


class MissingQuestion(ValueError):
    """A content-question index 1..24 has no responses."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"MissingQuestion: {index}")


class OutOfScale(ValueError):
    """A response falls outside its question's scale bounds."""

    def __init__(self, index: int, value: float, lo: float, hi: float):
        self.index = index
        self.value = value
        super().__init__(f"response {value!r} for question {index} outside scale [{lo}, {hi}]")


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SurveyQuestion:
    """One VSM13 content question, answered on a Likert scale."""

    index: int
    text: str
    scale_min: int = 1
    scale_max: int = 5

    def __post_init__(self):
        if not 1 <= self.index <= QUESTION_COUNT:
            raise ValueError(f"question index must be in 1..{QUESTION_COUNT}, got {self.index}")
        if not 1 <= self.scale_min < self.scale_max:
            raise ValueError(f"need 1 <= scale_min < scale_max, got [{self.scale_min}, {self.scale_max}]")

    @property
    def midpoint(self) -> float:
        return (self.scale_min + self.scale_max) / 2.0


@dataclass(frozen=True)
class DimensionConstants:
    """Per-dimension additive offsets (the adjustment constants). Default 0."""

    pdi: float = 0.0
    idv: float = 0.0
    mas: float = 0.0
    uai: float = 0.0
    lto: float = 0.0
    ivr: float = 0.0

    def __post_init__(self):
        for name in DIMENSION_NAMES:
            object.__setattr__(self, name, _require_finite(f"constants.{name}", getattr(self, name)))

    @classmethod
    def zero(cls) -> "DimensionConstants":
        return cls()

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "DimensionConstants":
        unknown = set(d) - set(DIMENSION_NAMES)
        if unknown:
            raise ValueError(f"unknown constant keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in DIMENSION_NAMES}


@dataclass(frozen=True)
class CulturalDimensions:
    """The six VSM13 dimension scores."""

    pdi: float
    idv: float
    mas: float
    uai: float
    lto: float
    ivr: float

    def __post_init__(self):
        for name in DIMENSION_NAMES:
            object.__setattr__(self, name, _require_finite(name, getattr(self, name)))

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.pdi, self.idv, self.mas, self.uai, self.lto, self.ivr)

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "CulturalDimensions":
        missing = set(DIMENSION_NAMES) - set(d)
        if missing:
            raise ValueError(f"missing dimension keys: {sorted(missing)}")
        unknown = set(d) - set(DIMENSION_NAMES)
        if unknown:
            raise ValueError(f"unknown dimension keys: {sorted(unknown)}")
        return cls(**{k: float(d[k]) for k in DIMENSION_NAMES})

    def to_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in DIMENSION_NAMES}


@dataclass(frozen=True)
class ResponseSet:
    """Per-question Likert responses and their arithmetic means.

    Scale enforcement happens at aggregation time, where the question
    objects (and so their bounds) are known; this type only guarantees
    coverage, finiteness, and mean consistency.
    """

    per_question: Mapping[int, tuple[float, ...]]
    means: Mapping[int, float]

    def __post_init__(self):
        per_q = {int(k): tuple(float(x) for x in v) for k, v in self.per_question.items()}
        means = {int(k): float(v) for k, v in self.means.items()}
        for idx in QUESTION_INDICES:
            if not per_q.get(idx):
                raise MissingQuestion(idx)
        if set(per_q) != set(QUESTION_INDICES):
            extra = sorted(set(per_q) - set(QUESTION_INDICES))
            raise ValueError(f"unexpected question indices: {extra}")
        for idx, values in per_q.items():
            for v in values:
                _require_finite(f"response[{idx}]", v)
            expected = sum(values) / len(values)
            if means.get(idx) != expected:
                raise ValueError(f"means[{idx}] inconsistent with responses")
        object.__setattr__(self, "per_question", per_q)
        object.__setattr__(self, "means", means)


def aggregate_responses(
    raw: Iterable[tuple[int, float]],
    questions: Sequence[SurveyQuestion] | None = None,
) -> ResponseSet:
    """Group (question_index, response) pairs and compute per-question means.

    When `questions` is given, each response is checked against that
    question's scale bounds; otherwise the default 1..5 scale applies.
    Raises MissingQuestion if any index 1..24 ends up with no responses,
    OutOfScale for a response outside its question's bounds.
    """
    if questions is not None:
        bounds = {q.index: (float(q.scale_min), float(q.scale_max)) for q in questions}
    else:
        bounds = {i: (1.0, 5.0) for i in QUESTION_INDICES}

    collected: dict[int, list[float]] = {i: [] for i in QUESTION_INDICES}
    for index, response in raw:
        index = int(index)
        if index not in collected:
            raise ValueError(f"unexpected question index: {index}")
        value = _require_finite(f"response[{index}]", response)
        lo, hi = bounds[index]
        if not lo <= value <= hi:
            raise OutOfScale(index, value, lo, hi)
        collected[index].append(value)

    for index in QUESTION_INDICES:
        if not collected[index]:
            raise MissingQuestion(index)

    means = {i: sum(v) / len(v) for i, v in collected.items()}
    return ResponseSet(per_question={i: tuple(v) for i, v in collected.items()}, means=means)


def compute_dimensions(rs: ResponseSet, constants: DimensionConstants) -> CulturalDimensions:
    """Map question means to the six dimension scores."""
    m = rs.means
    pdi = 35.0 * (m[7] - m[2]) + 25.0 * (m[20] - m[23]) + constants.pdi
    idv = 35.0 * (m[4] - m[1]) + 35.0 * (m[9] - m[6]) + constants.idv
    mas = 35.0 * (m[5] - m[3]) + 25.0 * (m[8] - m[10]) + constants.mas
    uai = 40.0 * (m[18] - m[15]) + 25.0 * (m[21] - m[24]) + constants.uai
    lto = 40.0 * (m[13] - m[14]) + 25.0 * (m[19] - m[22]) + constants.lto
    ivr = 35.0 * (m[12] - m[11]) + 40.0 * (m[17] - m[16]) + constants.ivr
    return CulturalDimensions(pdi=pdi, idv=idv, mas=mas, uai=uai, lto=lto, ivr=ivr)


def l1_fitness(d: CulturalDimensions, target: CulturalDimensions) -> float:
    """Mean absolute difference over the six dimensions (lower is better)."""
    return (
        abs(d.pdi - target.pdi)
        + abs(d.idv - target.idv)
        + abs(d.mas - target.mas)
        + abs(d.uai - target.uai)
        + abs(d.lto - target.lto)
        + abs(d.ivr - target.ivr)
    ) / 6.0


@dataclass(frozen=True)
class SurveyDataset:
    """The 24 ordered content questions plus the target country profile."""

    questions: tuple[SurveyQuestion, ...]
    country_code: str
    target: CulturalDimensions
    constants: DimensionConstants = field(default_factory=DimensionConstants)

    def __post_init__(self):
        questions = tuple(self.questions)
        if len(questions) != QUESTION_COUNT:
            raise ValueError(f"dataset needs exactly {QUESTION_COUNT} questions, got {len(questions)}")
        indices = sorted(q.index for q in questions)
        if indices != list(QUESTION_INDICES):
            seen: set[int] = set()
            for q in questions:
                if q.index in seen:
                    raise ValueError(f"duplicate question index: {q.index}")
                seen.add(q.index)
            for idx in QUESTION_INDICES:
                if idx not in seen:
                    raise MissingQuestion(idx)
        object.__setattr__(self, "questions", tuple(sorted(questions, key=lambda q: q.index)))

    def question(self, index: int) -> SurveyQuestion:
        return self.questions[index - 1]

    @classmethod
    def from_dict(cls, d: Mapping) -> "SurveyDataset":
        questions = tuple(
            SurveyQuestion(index=int(q["index"]), text=str(q["text"])) for q in d["questions"]
        )
        constants = DimensionConstants.from_dict(d.get("constants") or {})
        return cls(
            questions=questions,
            country_code=str(d["country_code"]),
            target=CulturalDimensions.from_dict(d["target"]),
            constants=constants,
        )

    def to_dict(self) -> dict:
        return {
            "country_code": self.country_code,
            "target": self.target.to_dict(),
            "constants": self.constants.to_dict(),
            "questions": [{"index": q.index, "text": q.text} for q in self.questions],
        }

    def with_target(self, target: CulturalDimensions) -> "SurveyDataset":
        return replace(self, target=target)


def load_dataset(path: str | Path) -> SurveyDataset:
    with open(path, "r", encoding="utf-8") as f:
        return SurveyDataset.from_dict(json.load(f))


def load_placeholder_dataset() -> SurveyDataset:
    """The shipped 24-question placeholder dataset (generic wording)."""
    return load_dataset(data_path("placeholder_dataset.json"))


def data_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(__file__).parent / "data" / name


def example_config_path() -> Path:
    """The shipped synthetic-backend run config, usable as a starting point."""
    return data_path("example_config.json")
