"""Chat-completion boundary with tool calling and replayable transcripts.

Three backends share one request/response shape: a live OpenAI-compatible
HTTP client with retry, a recorder that wraps any backend and appends
(fingerprint, response) lines to a JSON Lines transcript, and a replayer
that serves transcript entries deterministically. Requests are fingerprinted
over a canonical serialization so replay can verify it is answering the
conversation it was recorded for.

Sampling parameters are pinned (temperature 0, top_p 1, zero penalties,
16383 max tokens) so live calls are as repeatable as the provider allows;
overrides are possible but change the fingerprint.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

from .errors import ConfigError, MorphoforgeError

MAX_IMAGE_BYTES = 4 * 1024 * 1024
DEFAULT_MAX_TOKENS = 16383
RETRY_BACKOFF_SECONDS = (1.0, 4.0, 16.0)
ENV_URL = "MORPHOFORGE_VLM_URL"
ENV_KEY = "MORPHOFORGE_VLM_KEY"


class GatewayError(MorphoforgeError):
    pass


class TransportError(GatewayError):
    pass


class RateLimited(TransportError):
    pass


class ImageTooLarge(GatewayError):
    pass


class TranscriptError(GatewayError):
    pass


class TranscriptExhausted(TranscriptError):
    pass


class FingerprintMismatch(TranscriptError):
    pass


class NoJsonFound(GatewayError):
    pass


class MalformedJson(GatewayError):
    pass


class ToolCallInvalid(GatewayError):
    pass


# ---------------------------------------------------------------------------
# Messages, tools, requests
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TextPart:
    text: str


@dataclass(frozen=True, slots=True)
class ImagePart:
    data: bytes
    media_type: str = "image/png"


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True, slots=True)
class ChatMessage:
    """One turn. Images are only allowed on user turns."""

    role: str  # system | user | assistant | tool
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant", "tool"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.parts:
            raise ValueError("message needs at least one part")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("images are only allowed in user messages")

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


def system_message(text: str) -> ChatMessage:
    return ChatMessage("system", (TextPart(text),))


def user_message(text: str, images: Sequence[ImagePart] = ()) -> ChatMessage:
    return ChatMessage("user", (TextPart(text), *images))


def assistant_message(text: str) -> ChatMessage:
    return ChatMessage("assistant", (TextPart(text),))


@dataclass(frozen=True, slots=True)
class ParamSpec:
    name: str
    type: str  # string | number | integer | boolean | array | object
    required: bool = True
    description: str = ""


@dataclass(frozen=True, slots=True)
class ToolSchema:
    name: str
    description: str
    params: tuple[ParamSpec, ...] = ()

    def __post_init__(self) -> None:
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate parameter names in tool {self.name!r}")

    def to_wire(self) -> dict:
        properties = {
            p.name: {"type": p.type, "description": p.description} for p in self.params
        }
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": [p.name for p in self.params if p.required],
                },
            },
        }


@dataclass(frozen=True, slots=True)
class ToolCall:
    name: str
    arguments: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": self.arguments}


_JSON_TYPES: dict[str, tuple[type, ...]] = {
    "string": (str,),
    "number": (int, float),
    "integer": (int,),
    "boolean": (bool,),
    "array": (list,),
    "object": (dict,),
}


def validate_tool_call(call: ToolCall, schemas: Sequence[ToolSchema]) -> None:
    """Raise ToolCallInvalid unless the call matches a registered schema."""
    schema = next((s for s in schemas if s.name == call.name), None)
    if schema is None:
        raise ToolCallInvalid(f"unknown tool {call.name!r}")
    known = {p.name for p in schema.params}
    for key in call.arguments:
        if key not in known:
            raise ToolCallInvalid(f"{call.name}: unexpected argument {key!r}")
    for p in schema.params:
        if p.name not in call.arguments:
            if p.required:
                raise ToolCallInvalid(f"{call.name}: missing required argument {p.name!r}")
            continue
        value = call.arguments[p.name]
        expected = _JSON_TYPES.get(p.type)
        if expected is None:
            continue
        if isinstance(value, bool) and p.type in ("number", "integer"):
            raise ToolCallInvalid(f"{call.name}: argument {p.name!r} must be {p.type}")
        if not isinstance(value, expected):
            raise ToolCallInvalid(f"{call.name}: argument {p.name!r} must be {p.type}")


@dataclass(frozen=True, slots=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    tools: tuple[ToolSchema, ...] = ()
    model: str = "gpt-4o"
    temperature: float = 0.0
    top_p: float = 1.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS


@dataclass(frozen=True, slots=True)
class CompletionResponse:
    text: str = ""
    tool_calls: tuple[ToolCall, ...] = ()

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
        }

    @staticmethod
    def from_dict(payload: dict) -> CompletionResponse:
        calls = tuple(
            ToolCall(c["name"], dict(c["arguments"])) for c in payload.get("tool_calls", ())
        )
        return CompletionResponse(text=payload.get("text", ""), tool_calls=calls)


# ---------------------------------------------------------------------------
# Fingerprinting
# ---------------------------------------------------------------------------


def _canonical_part(part: Part) -> dict:
    if isinstance(part, TextPart):
        # whitespace normalization at the edges only: content edits must
        # change the digest, serialization noise must not
        return {"text": part.text.strip()}
    digest = hashlib.sha256(part.data).hexdigest()
    return {"image_sha256": digest, "media_type": part.media_type}


def _canonical_request(request: CompletionRequest) -> dict:
    return {
        "model": request.model,
        "sampling": {
            "temperature": request.temperature,
            "top_p": request.top_p,
            "frequency_penalty": request.frequency_penalty,
            "presence_penalty": request.presence_penalty,
            "max_tokens": request.max_tokens,
        },
        "messages": [
            {"role": m.role, "parts": [_canonical_part(p) for p in m.parts]}
            for m in request.messages
        ],
        "tools": [
            {
                "name": t.name,
                "description": t.description,
                "params": [
                    {"name": p.name, "type": p.type, "required": p.required}
                    for p in t.params
                ],
            }
            for t in sorted(request.tools, key=lambda t: t.name)
        ],
    }


def fingerprint(request: CompletionRequest) -> str:
    """Stable hex digest of the canonical request serialization."""
    blob = json.dumps(_canonical_request(request), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# JSON extraction from prose
# ---------------------------------------------------------------------------


def extract_json(text: str):
    """First balanced JSON object or array in `text`.

    Tolerates Markdown fences and surrounding prose; performs no repair.
    """
    decoder = json.JSONDecoder()
    saw_candidate = False
    for i, ch in enumerate(text):
        if ch not in "{[":
            continue
        saw_candidate = True
        try:
            value, _ = decoder.raw_decode(text, i)
            return value
        except ValueError:
            continue
    if saw_candidate:
        raise MalformedJson("braced content present but no balanced JSON parses")
    raise NoJsonFound("no JSON object or array in text")


# ---------------------------------------------------------------------------
# Transcripts (JSON Lines)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TranscriptEntry:
    fingerprint: str
    response: CompletionResponse


def load_transcript(path: str | Path) -> list[TranscriptEntry]:
    entries: list[TranscriptEntry] = []
    raw = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            entries.append(
                TranscriptEntry(payload["fingerprint"], CompletionResponse.from_dict(payload["response"]))
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise TranscriptError(f"{path}:{lineno}: bad transcript line: {exc}") from exc
    return entries


def append_transcript_entry(path: str | Path, fp: str, response: CompletionResponse) -> None:
    line = json.dumps({"fingerprint": fp, "response": response.to_dict()}, sort_keys=True)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(line + "\n")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def _wire_messages(messages: Sequence[ChatMessage], max_image_bytes: int) -> list[dict]:
    wire = []
    for m in messages:
        content: list[dict] = []
        for part in m.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                if len(part.data) > max_image_bytes:
                    raise ImageTooLarge(
                        f"image is {len(part.data)} bytes, cap is {max_image_bytes}"
                    )
                encoded = base64.b64encode(part.data).decode("ascii")
                content.append({
                    "type": "image_url",
                    "image_url": {"url": f"data:{part.media_type};base64,{encoded}"},
                })
        wire.append({"role": m.role, "content": content})
    return wire


class LiveBackend:
    """OpenAI-compatible chat-completions client.

    Retries timeouts, 429, and 5xx with 1 s / 4 s / 16 s backoff before
    giving up. Refuses to send any image above the byte cap.
    """

    def __init__(
        self,
        url: str,
        api_key: str = "",
        timeout: float = 120.0,
        max_image_bytes: int = MAX_IMAGE_BYTES,
        post: Optional[Callable] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if post is None:
            import requests

            post = requests.post
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.max_image_bytes = max_image_bytes
        self._post = post
        self._sleep = sleep

    @staticmethod
    def from_env() -> "LiveBackend":
        url = os.environ.get(ENV_URL)
        if not url:
            raise ConfigError(f"{ENV_URL} is not set")
        return LiveBackend(url, os.environ.get(ENV_KEY, ""))

    def _payload(self, request: CompletionRequest) -> dict:
        payload = {
            "model": request.model,
            "messages": _wire_messages(request.messages, self.max_image_bytes),
            "temperature": request.temperature,
            "top_p": request.top_p,
            "frequency_penalty": request.frequency_penalty,
            "presence_penalty": request.presence_penalty,
            "max_tokens": request.max_tokens,
        }
        if request.tools:
            payload["tools"] = [t.to_wire() for t in request.tools]
        return payload

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload = self._payload(request)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Optional[Exception] = None
        rate_limited = False
        attempts = len(RETRY_BACKOFF_SECONDS) + 1
        for attempt in range(attempts):
            try:
                resp = self._post(self.url, json=payload, headers=headers, timeout=self.timeout)
            except Exception as exc:  # timeout / connection failure
                last_error = exc
                rate_limited = False
            else:
                if resp.status_code == 200:
                    return self._decode(resp.json())
                if resp.status_code == 429 or resp.status_code >= 500:
                    rate_limited = resp.status_code == 429
                    last_error = TransportError(f"HTTP {resp.status_code}")
                else:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:500]}")
            if attempt < attempts - 1:
                self._sleep(RETRY_BACKOFF_SECONDS[attempt])
        if rate_limited:
            raise RateLimited(f"rate limited after {attempts} attempts") from last_error
        raise TransportError(f"gave up after {attempts} attempts: {last_error}") from last_error

    @staticmethod
    def _decode(body: dict) -> CompletionResponse:
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc
        calls = []
        for call in message.get("tool_calls") or ():
            fn = call.get("function", {})
            try:
                arguments = json.loads(fn.get("arguments", "{}"))
            except ValueError as exc:
                raise ToolCallInvalid(f"tool arguments are not valid JSON: {exc}") from exc
            if not isinstance(arguments, dict):
                raise ToolCallInvalid("tool arguments must be a JSON object")
            calls.append(ToolCall(fn.get("name", ""), arguments))
        return CompletionResponse(text=message.get("content") or "", tool_calls=tuple(calls))


class RecordBackend:
    """Delegates to another backend and appends each exchange to a transcript."""

    def __init__(self, inner: Backend, path: str | Path) -> None:
        self.inner = inner
        self.path = Path(path)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self.inner.complete(request)
        append_transcript_entry(self.path, fingerprint(request), response)
        return response


class ReplayBackend:
    """Serves transcript entries in order.

    strict mode verifies each request's fingerprint against the recorded one
    (and requires recorded fingerprints to be pairwise distinct); ordered
    mode replays blindly.
    """

    def __init__(self, path: str | Path, mode: str = "strict") -> None:
        if mode not in ("strict", "ordered"):
            raise ValueError(f"bad replay mode {mode!r}")
        self.entries = load_transcript(path)
        self.mode = mode
        self.cursor = 0
        if mode == "strict":
            seen = [e.fingerprint for e in self.entries]
            if len(seen) != len(set(seen)):
                raise TranscriptError("strict transcript has duplicate fingerprints")

    def seek(self, cursor: int) -> None:
        if not 0 <= cursor <= len(self.entries):
            raise TranscriptError(f"cursor {cursor} outside transcript")
        self.cursor = cursor

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if self.cursor >= len(self.entries):
            raise TranscriptExhausted(
                f"transcript exhausted after {len(self.entries)} exchanges"
            )
        entry = self.entries[self.cursor]
        if self.mode == "strict":
            got = fingerprint(request)
            if got != entry.fingerprint:
                raise FingerprintMismatch(
                    f"entry {self.cursor}: transcript recorded {entry.fingerprint[:12]}..., "
                    f"request hashes to {got[:12]}..."
                )
        self.cursor += 1
        return entry.response


def complete(backend: Backend, request: CompletionRequest) -> CompletionResponse:
    """Single entry point used by the pipeline; dispatches to the backend."""
    return backend.complete(request)
