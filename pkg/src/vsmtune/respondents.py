"""Backends that answer survey questions given a soft prompt and an instruction.

Two implementations of the same contract: a deterministic synthetic
respondent for desk-scale verification, and an HTTP client for a model
served behind the embedded-completion wire protocol. Plus the numeric
answer parser and the instruction / in-context-example prompt builders.
"""
from __future__ import annotations

import abc
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Optional

import httpx
import numpy as np

from .softprompt import ShapeMismatch, SoftPrompt
from .survey import SurveyQuestion

log = logging.getLogger(__name__)

AUTH_TOKEN_ENV = "VSMTUNE_AUTH_TOKEN"

COMPLETION_PATH = "/v1/embedded-completion"
MODEL_INFO_PATH = "/v1/model-info"

# Llama-3 chat framing; the {prompt} slot carries the persona line.
INSTRUCTION_TEMPLATE = (
    "<|start_header_id|>system<|end_header_id|>\n"
    "You are an assistant that can only\n"
    "reply with 1, 2, 3, 4, or 5 \n"
    "based on a persona given to you.\n"
    "{prompt}\n"
    "Numerical Answer:<|eot_id|>"
)
ANSWER_CUE = "Numerical Answer"
_SLOT = "{prompt}"
_TEMPLATE_PREFIX, _TEMPLATE_SUFFIX = INSTRUCTION_TEMPLATE.split(_SLOT)

# Two fixed example sentences per registered country, prepended to each
# question for the in-context-learning baseline.
ICL_EXAMPLES: dict[str, tuple[str, str]] = {
    "SA": (
        "In Saudi Arabia, family is highly valued, and decisions are often made "
        "with the family's best interest in mind.",
        "Hospitality is a key cultural value in Saudi Arabia, and guests are "
        "treated with great respect and generosity.",
    ),
    "CN": (
        "In China, collectivism is emphasized, and people often prioritize group "
        "harmony over individual needs.",
        "Respect for elders and authority is a deeply ingrained cultural value in China.",
    ),
    "US": (
        "In the United States, individualism is highly valued, and personal "
        "freedom and independence are often prioritized.",
        "The US culture values diversity and equality, and people are encouraged "
        "to express their unique identities.",
    ),
    "IN": (
        "In India, family and community play a central role in decision-making, "
        "and interdependence is valued.",
        "Respect for traditions and religious practices is a significant cultural "
        "value in India.",
    ),
}


class RespondentError(RuntimeError):
    """Base class for backend failures."""


class TransportError(RespondentError):
    """The endpoint could not be reached or returned an error response."""


class DimMismatch(RespondentError):
    """The served embedding width differs from the soft prompt's."""


class UnparseableAnswer(RespondentError):
    """No Likert digit could be extracted from the generated text."""


class UnknownCountry(ValueError):
    """No in-context example set registered for the country code."""

    def __init__(self, country_code: str):
        self.country_code = country_code
        super().__init__(f"no ICL examples registered for country {country_code!r}")


@dataclass(frozen=True)
class InstructionPrompt:
    """The fixed system instruction with the persona slot filled in."""

    system_text: str
    persona_text: str

    def __post_init__(self):
        if "reply with 1, 2, 3, 4, or 5" not in self.system_text:
            raise ValueError("instruction must contain the reply-constraint sentence")
        if ANSWER_CUE + ":" not in self.system_text:
            raise ValueError("instruction must contain the 'Numerical Answer:' cue")


def build_instruction(persona: str) -> InstructionPrompt:
    """Fill the persona slot of the fixed instruction template verbatim."""
    return InstructionPrompt(system_text=INSTRUCTION_TEMPLATE.replace(_SLOT, persona), persona_text=persona)


def extract_persona(system_text: str) -> str:
    """Inverse of build_instruction: recover the persona slot contents."""
    if not (system_text.startswith(_TEMPLATE_PREFIX) and system_text.endswith(_TEMPLATE_SUFFIX)):
        raise ValueError("text does not match the instruction template")
    return system_text[len(_TEMPLATE_PREFIX) : len(system_text) - len(_TEMPLATE_SUFFIX)]


def build_icl_prompt(country_code: str, question: SurveyQuestion) -> str:
    """The country's two example sentences followed by the question text."""
    try:
        examples = ICL_EXAMPLES[country_code]
    except KeyError:
        raise UnknownCountry(country_code) from None
    return "\n".join((*examples, question.text))


_STANDALONE_DIGIT = re.compile(r"(?<![0-9A-Za-z])([1-5])(?![0-9A-Za-z])")


def parse_numeric_answer(text: str) -> Optional[float]:
    """Extract the Likert digit from generated text; None when unparseable.

    Looks for the first standalone digit 1-5 after the last "Numerical
    Answer" cue; if the cue is absent or nothing follows it, falls back to
    the first standalone digit anywhere in the text. A digit is standalone
    when not adjacent to another digit or letter ("2." counts, "10" and
    "option3" do not).
    """
    cue_pos = text.rfind(ANSWER_CUE)
    if cue_pos >= 0:
        match = _STANDALONE_DIGIT.search(text, cue_pos + len(ANSWER_CUE))
        if match:
            return float(match.group(1))
    match = _STANDALONE_DIGIT.search(text)
    return float(match.group(1)) if match else None


class RespondentBackend(abc.ABC):
    """Turns (soft prompt, instruction, question) into a Likert response."""

    #: identical inputs always produce identical outputs
    deterministic: bool = False

    @abc.abstractmethod
    def answer(self, soft_prompt: SoftPrompt, instruction: InstructionPrompt, question: SurveyQuestion) -> float:
        """A response within the question's scale, or a typed RespondentError."""


@dataclass(frozen=True)
class SyntheticRespondentConfig:
    projection_seed: int = 0
    mode: str = "continuous"  # "continuous" or "quantized"
    planted_optimum: Optional[SoftPrompt] = None

    def __post_init__(self):
        if self.mode not in ("continuous", "quantized"):
            raise ValueError(f"mode must be 'continuous' or 'quantized', got {self.mode!r}")


class SyntheticRespondent(RespondentBackend):
    """Deterministic stand-in for a served model.

    Each question projects the (prompt - optimum) offset onto a fixed
    unit-norm direction and squashes through tanh around the scale
    midpoint: r = clip(3 + 2*tanh(w_q . flatten(v - v0)), 1, 5). With a
    planted optimum the answer at v0 is exactly 3 for every question,
    which makes the composed survey loss zero there.
    """

    SCALE = 2.0

    deterministic = True

    def __init__(self, config: SyntheticRespondentConfig):
        self.config = config
        self._weights: dict[tuple[int, int], np.ndarray] = {}

    def _weight(self, question_index: int, size: int) -> np.ndarray:
        key = (question_index, size)
        w = self._weights.get(key)
        if w is None:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=self.config.projection_seed, spawn_key=(question_index,))
            )
            w = rng.standard_normal(size)
            w /= np.linalg.norm(w)
            w = self._weights.setdefault(key, w)
        return w

    def answer(self, soft_prompt: SoftPrompt, instruction: InstructionPrompt, question: SurveyQuestion) -> float:
        values = soft_prompt.values
        if values.size == 0:
            z = 0.0
        else:
            planted = self.config.planted_optimum
            if planted is None:
                delta = values.astype(np.float64).ravel()
            else:
                if planted.values.shape != values.shape:
                    raise ShapeMismatch(
                        f"planted optimum shape {planted.values.shape} != prompt shape {values.shape}"
                    )
                delta = (values.astype(np.float64) - planted.values.astype(np.float64)).ravel()
            z = float(self._weight(question.index, delta.size) @ delta)
        response = 3.0 + self.SCALE * math.tanh(z)
        response = min(5.0, max(1.0, response))
        if self.config.mode == "quantized":
            response = float(min(5, max(1, round(response))))
        return response


@dataclass(frozen=True)
class RemoteEndpointConfig:
    base_url: str
    model_name: str
    timeout: float = 30.0
    max_retries: int = 3
    auth_token: Optional[str] = None
    max_new_tokens: int = 16
    temperature: float = 0.0
    backoff_base: float = 0.5
    max_inflight: int = 8

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")


class RemoteRespondent(RespondentBackend):
    """HTTP client for a model served behind the embedded-completion protocol.

    POST {base_url}/v1/embedded-completion with the soft prompt as a nested
    float array; the served embedding width is checked once against a GET
    {base_url}/v1/model-info handshake. Transport failures, 5xx responses
    and unparseable generations are retried with exponential backoff, at
    most 1 + max_retries completion requests per call.
    """

    def __init__(self, config: RemoteEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        token = config.auth_token or os.environ.get(AUTH_TOKEN_ENV)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.timeout,
            headers=headers,
            transport=transport,
        )
        self._inflight = threading.BoundedSemaphore(config.max_inflight)
        self._handshake_lock = threading.Lock()
        self._served_dim: Optional[int] = None

    @property
    def deterministic(self) -> bool:  # type: ignore[override]
        return self.config.temperature == 0.0

    def close(self) -> None:
        self._client.close()

    def served_embed_dim(self) -> int:
        """The embedding width reported by the server (cached)."""
        with self._handshake_lock:
            if self._served_dim is None:
                try:
                    resp = self._client.get(MODEL_INFO_PATH)
                except httpx.HTTPError as exc:
                    raise TransportError(f"handshake failed: {exc}") from exc
                if resp.status_code != 200:
                    raise TransportError(f"handshake failed: HTTP {resp.status_code}")
                try:
                    self._served_dim = int(resp.json()["embed_dim"])
                except (ValueError, KeyError, TypeError) as exc:
                    raise TransportError(f"handshake returned malformed body: {exc}") from exc
            return self._served_dim

    def answer(self, soft_prompt: SoftPrompt, instruction: InstructionPrompt, question: SurveyQuestion) -> float:
        served = self.served_embed_dim()
        if served != soft_prompt.embed_dim:
            raise DimMismatch(f"served embedding dim {served} != prompt dim {soft_prompt.embed_dim}")
        payload = {
            "model": self.config.model_name,
            "virtual_tokens": soft_prompt.values.tolist(),
            "instruction": instruction.system_text,
            "question": question.text,
            "max_new_tokens": self.config.max_new_tokens,
            "temperature": self.config.temperature,
        }
        last_error: RespondentError = TransportError("no request issued")
        for attempt in range(self.config.max_retries + 1):
            if attempt and self.config.backoff_base > 0:
                time.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                with self._inflight:
                    resp = self._client.post(COMPLETION_PATH, json=payload)
            except httpx.HTTPError as exc:
                last_error = TransportError(f"request failed: {exc}")
                log.debug("attempt %d transport error: %s", attempt, exc)
                continue
            if resp.status_code != 200:
                detail = self._error_detail(resp)
                if resp.status_code < 500:
                    raise TransportError(f"HTTP {resp.status_code}: {detail}")
                last_error = TransportError(f"HTTP {resp.status_code}: {detail}")
                continue
            try:
                text = resp.json()["text"]
            except (ValueError, KeyError, TypeError) as exc:
                last_error = TransportError(f"malformed response body: {exc}")
                continue
            value = parse_numeric_answer(text)
            if value is None:
                last_error = UnparseableAnswer(f"no Likert digit in reply: {text[:120]!r}")
                continue
            return value
        raise last_error

    @staticmethod
    def _error_detail(resp: httpx.Response) -> str:
        try:
            body = resp.json()
        except ValueError:
            return resp.text[:120]
        if isinstance(body, dict):
            return str(body.get("error", ""))
        return str(body)[:120]
