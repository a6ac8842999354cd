"""Prompt rendering, token-budget truncation and the annotate/feedback loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from typing import Callable

from .corpus import CaseReport
from .errors import (BudgetTooSmall, EmptyTimeline, MissingField, PipelineError,
                     TemperatureRejected, TransientTransportError, TransportError)
from .timeline import Timeline, parse_llm_timeline
from .transport import ChatTransport, ExchangeCache, sha256_text

logger = logging.getLogger(__name__)

FEEDBACK_PROMPT = "are you sure?"
RESPONSE_RESERVE_FRACTION = 0.25


def load_base_prompt() -> str:
    return resources.files("casetimelines").joinpath("resources/base_prompt.txt").read_text(
        encoding="utf-8")


BASE_PROMPT = load_base_prompt()
PROMPT_DIGEST = sha256_text(BASE_PROMPT)


def exemplar_output_block(base_prompt: str = BASE_PROMPT) -> str:
    """The fenced ``event | time`` example embedded in the base prompt."""
    _, _, rest = base_prompt.partition("```\n")
    block, _, _ = rest.partition("```")
    return block


@dataclass(frozen=True)
class PromptBundle:
    original_text: str
    base_prompt: str = BASE_PROMPT
    response: str | None = None
    feedback_prompt: str | None = None


def _render(base_prompt: str, original_text: str, response: str | None,
            feedback_prompt: str | None) -> str:
    text = f"{base_prompt}\n\nOriginal Text: {original_text}"
    if response is not None:
        text += f"\n\nUpdates: {response} {feedback_prompt}"
    return text


def render_prompt(b: PromptBundle) -> str:
    if not b.base_prompt:
        raise MissingField("base_prompt is empty")
    if not b.original_text:
        raise MissingField("original_text is empty")
    if (b.response is None) != (b.feedback_prompt is None):
        raise MissingField("response and feedback_prompt must be given together")
    return _render(b.base_prompt, b.original_text, b.response, b.feedback_prompt)


class CharHeuristicEstimator:
    name = "ceil(chars/4)"

    def __call__(self, text: str) -> int:
        return math.ceil(len(text) / 4)


TokenEstimator = Callable[[str], int]
DEFAULT_ESTIMATOR = CharHeuristicEstimator()


def estimator_name(estimator: TokenEstimator) -> str:
    return getattr(estimator, "name", getattr(estimator, "__name__", type(estimator).__name__))


def response_reserve(token_limit: int) -> int:
    return int(token_limit * RESPONSE_RESERVE_FRACTION)


def truncate_to_budget(b: PromptBundle, token_limit: int,
                       estimator: TokenEstimator = DEFAULT_ESTIMATOR,
                       reserve: int | None = None) -> PromptBundle:
    """Right-truncate ``original_text`` until the rendered prompt plus the
    response reserve fits ``token_limit``. Nothing else is shortened."""
    reserve = response_reserve(token_limit) if reserve is None else reserve
    budget = token_limit - reserve

    def cost(n_chars: int) -> int:
        return estimator(_render(b.base_prompt, b.original_text[:n_chars],
                                 b.response, b.feedback_prompt))

    if cost(len(b.original_text)) <= budget:
        return b
    if cost(0) > budget:
        raise BudgetTooSmall(f"fixed prompt parts need {cost(0)} tokens; budget is {budget}")
    lo, hi = 0, len(b.original_text)  # cost(lo) fits, cost(hi) does not
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cost(mid) <= budget:
            lo = mid
        else:
            hi = mid
    if lo == 0:
        raise BudgetTooSmall("no room left for any of the original text")
    return dataclasses.replace(b, original_text=b.original_text[:lo])


@dataclass(frozen=True)
class LlmConfig:
    model_name: str
    temperature: float = 0.0
    token_limit: int = 8192
    feedback_rounds: int = 0
    endpoint_url: str = ""
    max_retries: int = 3
    request_timeout: float = 120.0
    backoff_base: float = 1.0
    strategy: str = ""

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.token_limit <= 0:
            raise ValueError("token_limit must be positive")
        if self.feedback_rounds < 0 or self.max_retries < 0:
            raise ValueError("feedback_rounds and max_retries must be >= 0")

    @property
    def tag(self) -> str:
        return self.strategy or self.model_name

    def digest(self) -> str:
        fields = dataclasses.asdict(self)
        fields.pop("endpoint_url")
        return sha256_text(json.dumps(fields, sort_keys=True))


STRATEGIES: dict[str, LlmConfig] = {
    "gpt-4": LlmConfig("gpt-4-0613", temperature=0.0, token_limit=8192,
                       feedback_rounds=0, strategy="gpt-4"),
    "gpt-4-feedback": LlmConfig("gpt-4-0613", temperature=0.0, token_limit=8192,
                                feedback_rounds=2, strategy="gpt-4-feedback"),
    "o1-preview": LlmConfig("o1-preview-2024-09-12", temperature=1.0, token_limit=32768,
                            feedback_rounds=0, strategy="o1-preview"),
}


@dataclass(frozen=True)
class ChatExchange:
    request_text: str
    response_text: str
    round_index: int
    model_name: str
    latency: float
    cached: bool = False


def chat_once(prompt: str, config: LlmConfig, transport: ChatTransport,
              sleep: Callable[[float], None] = time.sleep) -> str:
    """One user-message request with retries and exponential backoff.

    A temperature rejection is retried once at temperature 1.
    """
    temperature = config.temperature
    temperature_fallback_used = False
    attempt = 0
    while True:
        try:
            return transport.complete(prompt, config.model_name, temperature,
                                      config.request_timeout)
        except TemperatureRejected:
            if temperature_fallback_used:
                raise
            logger.warning("%s rejected temperature %s; retrying at 1",
                           config.model_name, temperature)
            temperature, temperature_fallback_used = 1.0, True
        except TransientTransportError as exc:
            if attempt >= config.max_retries:
                if isinstance(exc, TimeoutError):
                    raise
                raise TransportError(f"gave up after {attempt + 1} attempts: {exc}") from exc
            wait = config.backoff_base * 2 ** attempt
            logger.warning("transient failure (%s); retry %d/%d in %.1fs",
                           exc, attempt + 1, config.max_retries, wait)
            sleep(wait)
            attempt += 1


def annotate_report(report: CaseReport, config: LlmConfig, transport: ChatTransport,
                    cache: ExchangeCache | None = None,
                    estimator: TokenEstimator = DEFAULT_ESTIMATOR,
                    sleep: Callable[[float], None] = time.sleep,
                    ) -> tuple[Timeline, list[ChatExchange]]:
    """Round 0 plus ``feedback_rounds`` "are you sure?" rounds; the last
    response is parsed into the returned Timeline."""
    if not report.body:
        raise EmptyTimeline(f"{report.id}: empty body")
    exchanges: list[ChatExchange] = []
    response: str | None = None
    for round_index in range(config.feedback_rounds + 1):
        bundle = PromptBundle(
            original_text=report.body,
            response=response,
            feedback_prompt=None if response is None else FEEDBACK_PROMPT,
        )
        bundle = truncate_to_budget(bundle, config.token_limit, estimator)
        prompt = render_prompt(bundle)

        doc = (cache.get(report.id, config.model_name, config.tag, round_index, prompt)
               if cache else None)
        if doc is not None:
            exchanges.append(ChatExchange(prompt, doc["response_text"], round_index,
                                          config.model_name, doc.get("latency_s", 0.0), True))
        else:
            t0 = time.monotonic()
            text = chat_once(prompt, config, transport, sleep=sleep)
            latency = time.monotonic() - t0
            exchanges.append(ChatExchange(prompt, text, round_index, config.model_name, latency))
            if cache is not None:
                cache.put({
                    "report_id": report.id,
                    "model": config.model_name,
                    "strategy": config.tag,
                    "round_index": round_index,
                    "request_text": prompt,
                    "response_text": text,
                    "prompt_digest": PROMPT_DIGEST,
                    "config_digest": config.digest(),
                    "token_estimator": estimator_name(estimator),
                    "latency_s": latency,
                    "created_at": datetime.now(timezone.utc).isoformat(),
                })
        response = exchanges[-1].response_text

    timeline = parse_llm_timeline(response, report.id, config.tag)
    return timeline, exchanges


@dataclass
class AnnotationOutcome:
    report_id: str
    timeline: Timeline | None = None
    exchanges: list[ChatExchange] = dataclasses.field(default_factory=list)
    error: PipelineError | None = None


def annotate_many(reports: list[CaseReport], config: LlmConfig, transport: ChatTransport,
                  cache: ExchangeCache | None = None, max_workers: int = 4,
                  estimator: TokenEstimator = DEFAULT_ESTIMATOR) -> list[AnnotationOutcome]:
    """Annotate reports concurrently; rounds within a report stay sequential.
    Failures are captured per report, results keep input order."""

    def one(report: CaseReport) -> AnnotationOutcome:
        try:
            timeline, exchanges = annotate_report(report, config, transport, cache, estimator)
            return AnnotationOutcome(report.id, timeline, exchanges)
        except PipelineError as exc:
            logger.error("%s: %s: %s", report.id, exc.kind, exc)
            return AnnotationOutcome(report.id, error=exc)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(one, reports))
