"""Shared test helpers: scripted backends and dataset builders."""
from __future__ import annotations

import threading

from vsmtune.respondents import RespondentBackend, UnparseableAnswer
from vsmtune.survey import CulturalDimensions, DimensionConstants, SurveyDataset, SurveyQuestion


ZERO_DIMS = CulturalDimensions(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def make_dataset(
    target: CulturalDimensions = ZERO_DIMS,
    constants: DimensionConstants | None = None,
    country_code: str = "US",
) -> SurveyDataset:
    questions = tuple(SurveyQuestion(index=i, text=f"test question {i}") for i in range(1, 25))
    return SurveyDataset(
        questions=questions,
        country_code=country_code,
        target=target,
        constants=constants or DimensionConstants(),
    )


class ScriptedBackend(RespondentBackend):
    """Answers from a fixed value or callable; records everything it is asked."""

    deterministic = True

    def __init__(self, script):
        self._script = script if callable(script) else (lambda sp, instr, q: script)
        self._lock = threading.Lock()
        self.calls: list[tuple] = []

    def answer(self, soft_prompt, instruction, question):
        with self._lock:
            self.calls.append((soft_prompt, instruction, question))
        value = self._script(soft_prompt, instruction, question)
        if value is None:
            raise UnparseableAnswer("scripted unparseable reply")
        if isinstance(value, Exception):
            raise value
        return float(value)


def transcribe_dimensions(means: dict[int, float], constants: DimensionConstants) -> tuple:
    """Independent line-by-line transcription of the six score formulas."""
    pdi = 35.0 * (means[7] - means[2]) + 25.0 * (means[20] - means[23]) + constants.pdi
    idv = 35.0 * (means[4] - means[1]) + 35.0 * (means[9] - means[6]) + constants.idv
    mas = 35.0 * (means[5] - means[3]) + 25.0 * (means[8] - means[10]) + constants.mas
    uai = 40.0 * (means[18] - means[15]) + 25.0 * (means[21] - means[24]) + constants.uai
    lto = 40.0 * (means[13] - means[14]) + 25.0 * (means[19] - means[22]) + constants.lto
    ivr = 35.0 * (means[12] - means[11]) + 40.0 * (means[17] - means[16]) + constants.ivr
    return (pdi, idv, mas, uai, lto, ivr)
