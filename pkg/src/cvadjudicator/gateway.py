"""Uniform model-backend contract.

Every pipeline stage talks to a model through one of two backends: an HTTP
chat-completion client for live runs, or a scripted backend that resolves each
request from recorded fixtures for deterministic offline runs. Both enforce
the context window before doing any work, estimate token usage, and append an
entry to a thread-safe audit log for every call.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

_ROLES = ("system", "user", "assistant")
_TRANSIENT_STATUS = frozenset({429, 500, 502, 503, 504})


class GatewayError(Exception):
    """Base class for model-backend failures."""


class ContextWindowExceededError(GatewayError):
    """Request would not fit the backend's context window. Caller must chunk."""


class RetriesExhaustedError(GatewayError):
    def __init__(self, message: str, retries: int):
        super().__init__(message)
        self.retries = retries


class FixtureMissError(GatewayError):
    """No recorded response for a request fingerprint: a test-fixture gap."""

    def __init__(self, fingerprint: str):
        super().__init__(f"no scripted response for fingerprint {fingerprint!r}")
        self.fingerprint = fingerprint


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass
class LlmRequest:
    messages: list[Message]
    max_output_tokens: int
    temperature: float = 0.0
    tag: str = "untagged"

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    input_token_estimate: int
    output_token_estimate: int
    backend_id: str


def simple_request(prompt: str, *, tag: str, max_output_tokens: int) -> LlmRequest:
    """Single user-message request, the shape every pipeline stage uses."""
    return LlmRequest(messages=[Message("user", prompt)], max_output_tokens=max_output_tokens, tag=tag)


def estimate_tokens(text: str) -> int:
    """Deterministic upper-bound token estimate: ceil(len/3), monotone in length."""
    return -(-len(text) // 3)


def request_tokens(request: LlmRequest) -> int:
    return sum(estimate_tokens(m.content) for m in request.messages)


def fingerprint(request: LlmRequest) -> str:
    """Stage tag plus a hash of the message contents.

    Only the tag and the concatenated contents matter, so fixtures survive
    field reordering but break (deliberately) when prompt text changes.
    """
    joined = "\x1e".join(m.content for m in request.messages)
    digest = hashlib.sha256(joined.encode("utf-8")).hexdigest()
    return f"{request.tag}:{digest[:16]}"


class BackendKind(Enum):
    HTTP_ENDPOINT = "http_endpoint"
    SCRIPTED = "scripted"


@dataclass
class BackendDescriptor:
    kind: BackendKind
    context_window_tokens: int = 8000
    endpoint_url: str | None = None
    model_name: str | None = None
    credential_env_var: str | None = None
    script_path: str | None = None
    max_retries: int = 3
    retry_backoff_s: float = 0.5
    timeout_s: float = 30.0
    max_in_flight: int = 4

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = BackendKind(self.kind)
        if self.context_window_tokens <= 0:
            raise ValueError("context_window_tokens must be positive")
        if self.kind is BackendKind.HTTP_ENDPOINT:
            missing = [
                name
                for name, value in (
                    ("endpoint_url", self.endpoint_url),
                    ("model_name", self.model_name),
                    ("credential_env_var", self.credential_env_var),
                )
                if not value
            ]
            if missing:
                raise ValueError(f"http_endpoint backend requires {', '.join(missing)}")
        elif not self.script_path:
            raise ValueError("scripted backend requires script_path")

    @property
    def backend_id(self) -> str:
        if self.kind is BackendKind.HTTP_ENDPOINT:
            return f"http:{self.model_name}"
        return f"scripted:{Path(self.script_path).name}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "context_window_tokens": self.context_window_tokens,
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "credential_env_var": self.credential_env_var,
            "script_path": self.script_path,
            "max_retries": self.max_retries,
            "retry_backoff_s": self.retry_backoff_s,
            "timeout_s": self.timeout_s,
            "max_in_flight": self.max_in_flight,
        }

    @classmethod
    def from_dict(cls, values: dict) -> BackendDescriptor:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown backend fields: {sorted(unknown)}")
        coerced = dict(values)
        for name in ("context_window_tokens", "max_retries", "max_in_flight"):
            if name in coerced and coerced[name] is not None:
                coerced[name] = int(coerced[name])
        for name in ("retry_backoff_s", "timeout_s"):
            if name in coerced and coerced[name] is not None:
                coerced[name] = float(coerced[name])
        return cls(**coerced)


@dataclass(frozen=True)
class AuditEntry:
    tag: str
    fingerprint: str
    input_tokens: int
    output_tokens: int
    latency_s: float
    retries: int
    ok: bool
    error: str | None = None


class AuditLog:
    """Append-only, internally synchronized call log."""

    def __init__(self):
        self._entries: list[AuditEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: AuditEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def entries(self) -> list[AuditEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class ScriptedFixtures:
    """Fingerprint -> response-text table backing the scripted backend."""

    def __init__(self, responses: dict[str, str] | None = None):
        self.responses: dict[str, str] = dict(responses or {})

    def add(self, request: LlmRequest, response_text: str) -> None:
        self.responses[fingerprint(request)] = response_text

    def get(self, fp: str) -> str | None:
        return self.responses.get(fp)

    def __len__(self) -> int:
        return len(self.responses)

    @classmethod
    def load(cls, path: str | Path) -> ScriptedFixtures:
        responses: dict[str, str] = {}
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                responses[row["fingerprint"]] = row["response_text"]
        return cls(responses)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for fp in sorted(self.responses):
                row = {"fingerprint": fp, "response_text": self.responses[fp]}
                handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


class _Backend:
    """Shared context-window gate and audit bookkeeping."""

    backend_id: str
    context_window_tokens: int

    def __init__(self):
        self.audit = AuditLog()

    def complete(self, request: LlmRequest) -> LlmResponse:
        fp = fingerprint(request)
        input_tokens = request_tokens(request)
        start = time.perf_counter()
        text = ""
        retries = 0
        error: str | None = None
        try:
            if input_tokens + request.max_output_tokens > self.context_window_tokens:
                raise ContextWindowExceededError(
                    f"request {fp} needs ~{input_tokens + request.max_output_tokens} tokens "
                    f"but the context window is {self.context_window_tokens}"
                )
            text, retries = self._send(request)
            return LlmResponse(text, input_tokens, estimate_tokens(text), self.backend_id)
        except RetriesExhaustedError as exc:
            retries = exc.retries
            error = str(exc)
            raise
        except GatewayError as exc:
            error = str(exc)
            raise
        finally:
            self.audit.append(
                AuditEntry(
                    tag=request.tag,
                    fingerprint=fp,
                    input_tokens=input_tokens,
                    output_tokens=estimate_tokens(text),
                    latency_s=time.perf_counter() - start,
                    retries=retries,
                    ok=error is None,
                    error=error,
                )
            )

    def _send(self, request: LlmRequest) -> tuple[str, int]:
        raise NotImplementedError


class ScriptedBackend(_Backend):
    """Deterministic replay backend; never touches the network."""

    def __init__(
        self,
        fixtures: ScriptedFixtures,
        context_window_tokens: int = 8000,
        backend_id: str = "scripted:inline",
    ):
        super().__init__()
        self.fixtures = fixtures
        self.context_window_tokens = context_window_tokens
        self.backend_id = backend_id

    def _send(self, request: LlmRequest) -> tuple[str, int]:
        text = self.fixtures.get(fingerprint(request))
        if text is None:
            raise FixtureMissError(fingerprint(request))
        return text, 0


class HttpBackend(_Backend):
    """Chat-completion endpoint client with bounded retries and backoff.

    The bearer credential is read from the environment variable named in the
    descriptor, never from configuration files.
    """

    def __init__(self, descriptor: BackendDescriptor):
        super().__init__()
        if descriptor.kind is not BackendKind.HTTP_ENDPOINT:
            raise ValueError("HttpBackend requires an http_endpoint descriptor")
        self.descriptor = descriptor
        self.context_window_tokens = descriptor.context_window_tokens
        self.backend_id = descriptor.backend_id
        credential = os.environ.get(descriptor.credential_env_var or "")
        if not credential:
            raise GatewayError(
                f"environment variable {descriptor.credential_env_var!r} is not set"
            )
        self._credential = credential
        self._inflight = threading.Semaphore(descriptor.max_in_flight)

    def _send(self, request: LlmRequest) -> tuple[str, int]:
        payload = {
            "model": self.descriptor.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {
            "Authorization": f"Bearer {self._credential}",
            "Content-Type": "application/json",
        }
        retries = 0
        last_error = "no attempt made"
        for attempt in range(self.descriptor.max_retries + 1):
            if attempt:
                time.sleep(self.descriptor.retry_backoff_s * (2 ** (attempt - 1)))
                retries += 1
            try:
                with self._inflight:
                    response = requests.post(
                        self.descriptor.endpoint_url,
                        json=payload,
                        headers=headers,
                        timeout=self.descriptor.timeout_s,
                    )
            except requests.RequestException as exc:
                last_error = f"connection failure: {exc}"
                logger.warning("transient failure for %s: %s", request.tag, last_error)
                continue
            if response.status_code in _TRANSIENT_STATUS:
                last_error = f"transient status {response.status_code}"
                logger.warning("transient failure for %s: %s", request.tag, last_error)
                continue
            if response.status_code != 200:
                raise GatewayError(f"endpoint returned status {response.status_code}")
            return self._extract_text(response), retries
        raise RetriesExhaustedError(
            f"gave up after {retries} retries: {last_error}", retries=retries
        )

    @staticmethod
    def _extract_text(response: requests.Response) -> str:
        try:
            choice = response.json()["choices"][0]
        except (ValueError, KeyError, IndexError) as exc:
            raise GatewayError(f"malformed endpoint response: {exc}") from exc
        if "message" in choice:
            return choice["message"]["content"]
        if "text" in choice:
            return choice["text"]
        raise GatewayError("endpoint response has neither message nor text")


class RecordingBackend(_Backend):
    """Wraps a live backend and captures its responses as scripted fixtures."""

    def __init__(self, inner: _Backend, sink: ScriptedFixtures):
        super().__init__()
        self.inner = inner
        self.sink = sink
        self.context_window_tokens = inner.context_window_tokens
        self.backend_id = inner.backend_id
        self.audit = inner.audit  # one log per underlying backend

    def complete(self, request: LlmRequest) -> LlmResponse:
        response = self.inner.complete(request)
        self.sink.responses[fingerprint(request)] = response.text
        return response


def build_backend(descriptor: BackendDescriptor) -> _Backend:
    if descriptor.kind is BackendKind.SCRIPTED:
        return ScriptedBackend(
            ScriptedFixtures.load(descriptor.script_path),
            context_window_tokens=descriptor.context_window_tokens,
            backend_id=descriptor.backend_id,
        )
    return HttpBackend(descriptor)
