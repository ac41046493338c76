"""Provider abstraction: prompt rendering, completion, structured parsing.

The gateway is the only place the engine talks to a language-model
provider. Everything above it sees three operations: render a template,
complete a prompt, parse the completion. A cassette can interpose on
completion for record/replay, which is what makes whole episodes
network-free and deterministic in tests.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

from .errors import ConfigurationError, EpisodeError, FormatError, ProviderError, ReplayMissError
from .records import read_jsonl, text_hash, write_jsonl

DEFAULT_MAX_RETRIES = 5

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required_slots: tuple[str, ...]

    def __post_init__(self):
        undeclared = set(_PLACEHOLDER.findall(self.body)) - set(self.required_slots)
        if undeclared:
            raise ConfigurationError(
                f"template {self.template_id!r} has undeclared placeholders: {sorted(undeclared)}")


def render_prompt(template: PromptTemplate, slots: Mapping[str, str]) -> str:
    """Single-pass substitution: slot content is inserted verbatim and never
    re-scanned, so content containing ``{other}`` cannot expand."""
    missing = [s for s in set(_PLACEHOLDER.findall(template.body)) if s not in slots]
    if missing:
        raise ConfigurationError(
            f"template {template.template_id!r} missing slot {missing[0]!r}")
    return _PLACEHOLDER.sub(lambda m: str(slots[m.group(1)]), template.body)


@dataclass(frozen=True)
class ParseSpec:
    kind: str  # fenced_code_block | structured_mapping | raw_text
    required_keys: tuple[str, ...] = ()
    max_retries: int = DEFAULT_MAX_RETRIES

    def __post_init__(self):
        if self.kind not in ("fenced_code_block", "structured_mapping", "raw_text"):
            raise ValueError(f"unknown parse kind {self.kind!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


_FENCE = re.compile(r"```[^\n]*\n(.*?)(?:```|\Z)", re.DOTALL)


def extract_fenced_block(text: str) -> str:
    match = _FENCE.search(text)
    if match is None:
        raise ValueError("no fenced code block found")
    return match.group(1).rstrip("\n")


def extract_mapping(text: str, required_keys: Sequence[str]) -> dict:
    candidates = [text.strip()]
    try:
        candidates.append(extract_fenced_block(text))
    except ValueError:
        pass
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        candidates.append(text[start:end + 1])
    for candidate in candidates:
        try:
            value = json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            continue
        if isinstance(value, dict):
            missing = [k for k in required_keys if k not in value]
            if missing:
                raise ValueError(f"mapping missing required keys: {missing}")
            return value
    raise ValueError("no JSON mapping found in response")


def parse_once(raw: str, spec: ParseSpec):
    if spec.kind == "fenced_code_block":
        return extract_fenced_block(raw)
    if spec.kind == "structured_mapping":
        return extract_mapping(raw, spec.required_keys)
    if not raw:
        raise ValueError("empty response")
    return raw


class Provider(Protocol):
    def complete(self, prompt: str) -> str: ...


class ScriptedProvider:
    """Answers from a fixed queue, in order. For tests and demos."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self.calls = 0

    def complete(self, prompt: str) -> str:
        if not self._responses:
            raise ProviderError("scripted provider exhausted")
        self.calls += 1
        return self._responses.pop(0)


class RuleProvider:
    """Answers by matching the prompt against ordered (pattern, responses) rules.

    The first rule whose regex matches wins; its responses are consumed in
    order and the last one repeats. Deterministic by construction.
    """

    def __init__(self, rules: Sequence[tuple[str, Sequence[str]]] | None = None):
        self._rules: list[tuple[re.Pattern, list[str]]] = []
        self.calls = 0
        for pattern, responses in rules or []:
            self.add(pattern, responses)

    def add(self, pattern: str, responses: Sequence[str] | str) -> "RuleProvider":
        if isinstance(responses, str):
            responses = [responses]
        self._rules.append((re.compile(pattern, re.DOTALL), list(responses)))
        return self

    def complete(self, prompt: str) -> str:
        self.calls += 1
        for pattern, responses in self._rules:
            if pattern.search(prompt):
                return responses.pop(0) if len(responses) > 1 else responses[0]
        raise ProviderError(f"no rule matches prompt starting {prompt[:80]!r}")


@dataclass
class ProviderConfig:
    """Connection settings for a chat-completions-compatible endpoint.

    Sampling defaults are deterministic so recorded cassettes stay valid.
    The credential is read from the named environment variable only.
    """

    endpoint_url: str = ""
    model: str = "default"
    temperature: float = 0.0
    api_key_env: str = "EXPAGENT_API_KEY"
    timeout: float = 60.0
    transport_retries: int = 2
    requests_per_minute: Optional[int] = None

    def digest_fields(self) -> dict:
        return {"endpoint_url": self.endpoint_url, "model": self.model,
                "temperature": self.temperature}


class HTTPChatProvider:
    """Message-list request, choice-list response over HTTP."""

    def __init__(self, config: ProviderConfig):
        self.config = config

    def complete(self, prompt: str) -> str:
        body = json.dumps({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        request = urllib.request.Request(self.config.endpoint_url, data=body, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=self.config.timeout) as response:
                payload = json.loads(response.read().decode("utf-8"))
        except Exception as exc:
            raise ProviderError(f"transport failure: {exc}") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {payload!r}") from exc


class RetrievalProvider(Protocol):
    def retrieve(self, query: str) -> Optional[str]: ...


class NullRetrieval:
    """Default retrieval hook: nothing is ever retrieved."""

    def retrieve(self, query: str) -> Optional[str]:
        return None


class StaticRetrieval:
    """Serves one exemplar per call from a fixed list, then nothing."""

    def __init__(self, exemplars: Sequence[str]):
        self._exemplars = list(exemplars)

    def retrieve(self, query: str) -> Optional[str]:
        return self._exemplars.pop(0) if self._exemplars else None


class Cassette:
    """Ordered recording of request fingerprints to responses.

    Fingerprints are content hashes of rendered prompts, so identical
    prompts fingerprint identically across processes. Repeated requests
    for one fingerprint replay in recorded order; the last entry repeats.
    """

    def __init__(self, mode: str = "replay", path: Optional[str] = None):
        if mode not in ("record", "replay", "passthrough"):
            raise ValueError(f"unknown cassette mode {mode!r}")
        self.mode = mode
        self.path = path
        self._responses: dict[str, list[str]] = {}
        self._cursors: dict[str, int] = {}
        if path and mode == "replay":
            self.load(path)

    @staticmethod
    def fingerprint(prompt: str) -> str:
        return text_hash(prompt)

    def record(self, prompt: str, response: str) -> None:
        self._responses.setdefault(self.fingerprint(prompt), []).append(response)

    def replay(self, prompt: str) -> str:
        fp = self.fingerprint(prompt)
        recorded = self._responses.get(fp)
        if not recorded:
            raise ReplayMissError(fp)
        cursor = self._cursors.get(fp, 0)
        response = recorded[min(cursor, len(recorded) - 1)]
        self._cursors[fp] = cursor + 1
        return response

    def reset_cursors(self) -> None:
        self._cursors.clear()

    def save(self, path: Optional[str] = None) -> None:
        target = path or self.path
        if target is None:
            raise ConfigurationError("cassette has no path to save to")
        rows = [{"fingerprint": fp, "response": r}
                for fp, responses in self._responses.items() for r in responses]
        write_jsonl(target, rows)

    def load(self, path: str) -> None:
        self._responses.clear()
        self._cursors.clear()
        for row in read_jsonl(path):
            self._responses.setdefault(row["fingerprint"], []).append(row["response"])


_DEFAULT_ACTION_SPECS = {
    "emit_code": ParseSpec("fenced_code_block"),
    "emit_structured": ParseSpec("structured_mapping"),
    "emit_text": ParseSpec("raw_text"),
    "select_subset": ParseSpec("structured_mapping", required_keys=("selected",)),
}


class Gateway:
    """Template registry + provider + cassette + transcript, in one handle.

    Safe for concurrent use: the transcript and rate limiter are guarded by
    a lock, and all other state is read-only after construction.
    """

    def __init__(self, provider: Optional[Provider] = None,
                 cassette: Optional[Cassette] = None,
                 config: Optional[ProviderConfig] = None,
                 retrieval: Optional[RetrievalProvider] = None):
        self.provider = provider
        self.cassette = cassette
        self.config = config or ProviderConfig()
        self.retrieval = retrieval or NullRetrieval()
        self.templates: dict[str, PromptTemplate] = {}
        self.transcript: list[dict] = []
        self._lock = threading.Lock()
        self._last_request = 0.0

    def register(self, template: PromptTemplate) -> "Gateway":
        self.templates[template.template_id] = template
        return self

    def register_all(self, templates: Sequence[PromptTemplate]) -> "Gateway":
        for template in templates:
            self.register(template)
        return self

    def template(self, template_id: str) -> PromptTemplate:
        try:
            return self.templates[template_id]
        except KeyError:
            raise ConfigurationError(f"template {template_id!r} is not registered") from None

    def render(self, template_id: str, slots: Mapping[str, str]) -> str:
        return render_prompt(self.template(template_id), slots)

    def _throttle(self) -> None:
        ceiling = self.config.requests_per_minute
        if not ceiling:
            return
        interval = 60.0 / ceiling
        now = time.monotonic()
        wait = self._last_request + interval - now
        if wait > 0:
            time.sleep(wait)
        self._last_request = time.monotonic()

    def complete(self, rendered: str) -> str:
        """Raw completion for a rendered prompt, through the cassette."""
        started = time.monotonic()
        if self.cassette is not None and self.cassette.mode == "replay":
            response = self.cassette.replay(rendered)
        else:
            if self.provider is None:
                raise ConfigurationError("no provider configured and cassette not in replay mode")
            with self._lock:
                self._throttle()
            response = self._complete_with_retries(rendered)
            if self.cassette is not None and self.cassette.mode == "record":
                self.cassette.record(rendered, response)
        with self._lock:
            self.transcript.append({
                "prompt_hash": text_hash(rendered),
                "response_hash": text_hash(response),
                "latency": time.monotonic() - started,
            })
        return response

    def _complete_with_retries(self, rendered: str) -> str:
        last: Exception | None = None
        for _ in range(self.config.transport_retries + 1):
            try:
                return self.provider.complete(rendered)
            except ProviderError as exc:
                last = exc
        raise EpisodeError(f"provider failed after retries: {last}") from last

    def complete_template(self, template_id: str, slots: Mapping[str, str]) -> str:
        return self.complete(self.render(template_id, slots))

    def parse_structured(self, raw: str, spec: ParseSpec,
                         reprompt: Callable[[str], str]):
        """Parse, reprompting with the formatting error up to max_retries times.

        Total requests are bounded by 1 + max_retries (the initial call that
        produced ``raw`` plus one per retry).
        """
        attempt_digests = [text_hash(raw)]
        current = raw
        for _ in range(spec.max_retries):
            try:
                return current, parse_once(current, spec)
            except ValueError as exc:
                current = reprompt(f"Formatting error in previous response: {exc}")
                attempt_digests.append(text_hash(current))
        try:
            return current, parse_once(current, spec)
        except ValueError as exc:
            raise FormatError(
                f"output still malformed after {spec.max_retries} retries: {exc}",
                attempt_digests)

    def complete_action(self, template_id: str, slots: Mapping[str, str],
                        request_kind: str, parse_spec: Optional[ParseSpec] = None):
        """Render, complete, and parse an extrinsic action request."""
        spec = parse_spec or _DEFAULT_ACTION_SPECS[request_kind]
        rendered = self.render(template_id, slots)
        raw = self.complete(rendered)

        def reprompt(error: str) -> str:
            return self.complete(rendered + "\n\n" + error)

        content, parsed = self.parse_structured(raw, spec, reprompt)
        return content, parsed
