"""Answer generation over evidence bundles.

Two generator kinds sit behind one interface: a remote chat-completion
client with a fixed prompt template and temperature-0 decoding, and a
deterministic oracle that answers only when a gold alias literally
appears in the evidence. The oracle makes harness-level properties
(grounding, CB vs coverage bounds) exactly testable with no model.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Protocol

import httpx

from .corpus import QAItem
from .errors import TransportError
from .metrics import find_contained_alias, normalize_answer
from .retrieve import EvidenceBundle

INSTRUCTION = (
    "Answer the question with a short phrase. "
    "Use the provided context when it is given; do not explain."
)
SYSTEM_MESSAGE = "You are a concise question answering assistant."
_TEMPLATE_SHAPE = INSTRUCTION + "\n\nContext:\n{context}\n\nQuestion: {question}\nAnswer:"


def prompt_template_digest() -> str:
    return hashlib.sha256(_TEMPLATE_SHAPE.encode("utf-8")).hexdigest()


def render_prompt(question: str, bundle: EvidenceBundle | None) -> str:
    """Fixed template: instruction, optional context block, question,
    answer cue. Identical inputs render identical bytes; an empty bundle
    (closed-book) omits the context section entirely."""
    parts = [INSTRUCTION]
    if bundle is not None and bundle.rendered_context:
        parts.append("Context:\n" + bundle.rendered_context)
    parts.append(f"Question: {question}\nAnswer:")
    return "\n\n".join(parts)


@dataclass(frozen=True)
class GeneratorSpec:
    """One generator in the model family; model_id is a size tier label."""

    model_id: str
    kind: str = "oracle"  # "remote" | "oracle"
    endpoint: str = ""
    api_token: str = ""
    temperature: float = 0.0
    max_tokens: int = 64

    def __post_init__(self):
        if self.kind not in ("remote", "oracle"):
            raise ValueError(f"kind must be 'remote' or 'oracle', got {self.kind!r}")

    def decoding_params(self) -> tuple[float, int]:
        return (self.temperature, self.max_tokens)


@dataclass(frozen=True)
class GenerationRecord:
    query_id: str
    model_id: str
    n: int
    order: str
    prediction: str
    abstained: bool
    latency_ms: float
    raw_response: str
    bundle_digest: str

    @property
    def key(self) -> tuple[str, str, int, str]:
        return (self.query_id, self.model_id, self.n, self.order)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "model_id": self.model_id,
            "n": self.n,
            "order": self.order,
            "prediction": self.prediction,
            "abstained": self.abstained,
            "latency_ms": self.latency_ms,
            "raw_response": self.raw_response,
            "bundle_digest": self.bundle_digest,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRecord":
        return cls(**data)


def _postprocess(completion: str) -> tuple[str, bool]:
    """Trim whitespace and keep the first line; empty means abstention."""
    first_line = completion.strip().splitlines()[0].strip() if completion.strip() else ""
    return first_line, first_line == ""


def _record(
    qa: QAItem, bundle: EvidenceBundle, model_id: str, prediction: str,
    abstained: bool, latency_ms: float, raw_response: str,
) -> GenerationRecord:
    return GenerationRecord(
        query_id=qa.query_id,
        model_id=model_id,
        n=bundle.n,
        order=bundle.order,
        prediction=prediction,
        abstained=abstained,
        latency_ms=latency_ms,
        raw_response=raw_response,
        bundle_digest="" if bundle.n == 0 else bundle.digest(),
    )


class Generator(Protocol):
    spec: GeneratorSpec

    def generate(self, qa: QAItem, bundle: EvidenceBundle) -> GenerationRecord: ...


def oracle_answer(qa: QAItem, bundle: EvidenceBundle) -> str | None:
    """Scan chunks in rank order and, within each chunk, the gold aliases
    in list order; return the first alias whose normalized tokens occur
    contiguously in the normalized chunk, or None to abstain."""
    for chunk in bundle.chunks:
        alias = find_contained_alias(normalize_answer(chunk.text), qa.gold_answers)
        if alias is not None:
            return alias
    return None


class OracleGenerator:
    """Answer-grounded test double: correct only when the evidence
    contains a gold alias, abstains otherwise (always closed-book)."""

    def __init__(self, spec: GeneratorSpec | None = None):
        self.spec = spec or GeneratorSpec(model_id="oracle", kind="oracle")

    def generate(self, qa: QAItem, bundle: EvidenceBundle) -> GenerationRecord:
        started = time.perf_counter()
        answer = oracle_answer(qa, bundle)
        latency_ms = (time.perf_counter() - started) * 1000.0
        if answer is None:
            return _record(qa, bundle, self.spec.model_id, "", True, latency_ms, "")
        return _record(qa, bundle, self.spec.model_id, answer, False, latency_ms, answer)


class RemoteGenerator:
    """Chat-style completion client (system + user message, single
    completion). Raw response bodies are kept verbatim on the record so
    analysis can replay without re-calling the service."""

    def __init__(
        self,
        spec: GeneratorSpec,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        endpoint = spec.endpoint or os.environ.get("RAGSCALE_GEN_ENDPOINT", "")
        if not endpoint:
            raise ValueError("remote generator needs an endpoint (RAGSCALE_GEN_ENDPOINT)")
        token = spec.api_token or os.environ.get("RAGSCALE_GEN_TOKEN", "")
        self.spec = spec
        self.endpoint = endpoint
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def generate(self, qa: QAItem, bundle: EvidenceBundle) -> GenerationRecord:
        prompt = render_prompt(qa.question, bundle)
        payload = {
            "model": self.spec.model_id,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
        }
        started = time.perf_counter()
        raw = self._complete(payload)
        latency_ms = (time.perf_counter() - started) * 1000.0
        completion = ""
        choices = json.loads(raw).get("choices") or []
        if choices:
            completion = (choices[0].get("message") or {}).get("content") or ""
        prediction, abstained = _postprocess(completion)
        return _record(qa, bundle, self.spec.model_id, prediction, abstained, latency_ms, raw)

    def _complete(self, payload: dict) -> str:
        attempts = 0
        while True:
            attempts += 1
            try:
                response = self._client.post(self.endpoint, json=payload)
            except httpx.HTTPError as exc:
                if attempts > self.max_retries:
                    raise TransportError(f"generation request failed: {exc}", attempts) from exc
                time.sleep(self.backoff_base * 2 ** (attempts - 1))
                continue
            if response.status_code == 200:
                return response.text
            if response.status_code in (429, 500, 502, 503, 504) and attempts <= self.max_retries:
                time.sleep(self.backoff_base * 2 ** (attempts - 1))
                continue
            raise TransportError(
                f"generation request failed with status {response.status_code}", attempts
            )

    def close(self) -> None:
        self._client.close()


def make_generator(spec: GeneratorSpec, transport: httpx.BaseTransport | None = None) -> Generator:
    if spec.kind == "oracle":
        return OracleGenerator(spec)
    return RemoteGenerator(spec, transport=transport)


def generate(generator: Generator, qa: QAItem, bundle: EvidenceBundle) -> GenerationRecord:
    return generator.generate(qa, bundle)
