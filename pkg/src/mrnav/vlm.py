"""VLM clients: live chat-completions endpoint, scripted replies, and a greedy mock.

All clients expose ``complete(request) -> VlmReply`` and raise :class:`VlmError`
subclasses on failure. Failures are data for the planner's fallback chain.
"""

from __future__ import annotations

import base64
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import httpx
import numpy as np

from .prompt import robot_key, to_png


class VlmError(RuntimeError):
    category = "vlm-error"


class VlmTimeout(VlmError):
    category = "timeout"


class VlmHttpError(VlmError):
    category = "http-error"

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class VlmCredentialError(VlmError):
    category = "credential-error"


class VlmTransportError(VlmError):
    category = "transport-error"


class ScriptExhausted(VlmError):
    category = "script-exhausted"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    timeout: float = 60.0
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_retries: int = 1


@dataclass
class VlmRequest:
    system: str
    user: str
    images: list[np.ndarray]
    model: str = "gpt-4o"
    temperature: float = 0.0
    # planner-side state for offline clients; never sent over the wire
    context: Any = field(default=None, repr=False, compare=False)

    def png_images(self) -> list[bytes]:
        return [to_png(img) for img in self.images]


@dataclass
class VlmReply:
    text: str
    latency: float = 0.0
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    attempts: int = 1


class VlmClient(Protocol):
    def complete(self, request: VlmRequest) -> VlmReply: ...


def build_payload(request: VlmRequest) -> dict:
    content: list[dict] = [{"type": "text", "text": request.user}]
    for png in request.png_images():
        url = "data:image/png;base64," + base64.b64encode(png).decode("ascii")
        content.append({"type": "image_url", "image_url": {"url": url}})
    return {
        "model": request.model,
        "temperature": request.temperature,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": content},
        ],
    }


class LiveClient:
    """Blocking chat-completions client; one retry on transport errors."""

    def __init__(self, config: EndpointConfig = EndpointConfig(), transport: httpx.BaseTransport | None = None):
        self.config = config
        self._transport = transport

    def complete(self, request: VlmRequest) -> VlmReply:
        cfg = self.config
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise VlmCredentialError(f"environment variable {cfg.api_key_env} is not set")
        payload = build_payload(request)
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {key}"}
        attempts = 0
        t0 = time.perf_counter()
        with httpx.Client(timeout=cfg.timeout, transport=self._transport) as http:
            while True:
                attempts += 1
                try:
                    resp = http.post(url, json=payload, headers=headers)
                    break
                except httpx.TimeoutException as e:
                    if attempts > cfg.max_retries:
                        raise VlmTimeout(str(e)) from e
                except httpx.TransportError as e:
                    if attempts > cfg.max_retries:
                        raise VlmTransportError(f"{e} (after {attempts} attempts)") from e
        latency = time.perf_counter() - t0
        if resp.status_code in (401, 403):
            raise VlmCredentialError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise VlmHttpError(resp.status_code, resp.text)
        try:
            doc = resp.json()
            text = doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise VlmHttpError(resp.status_code, f"unexpected response body: {e}") from e
        usage = doc.get("usage") or {}
        return VlmReply(text or "", latency, usage.get("prompt_tokens"), usage.get("completion_tokens"), attempts)


class ScriptedClient:
    """Canned replies from a JSON-lines file, consumed in order.

    Each line is either a JSON string or an object with a ``reply`` string.
    """

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.cursor = 0

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedClient:
        replies = []
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                item = json.loads(line)
                if isinstance(item, dict):
                    item = item.get("reply")
                if not isinstance(item, str):
                    raise ValueError(f"{path}:{i + 1}: expected a string or {{\"reply\": string}}")
                replies.append(item)
        return cls(replies)

    def complete(self, request: VlmRequest) -> VlmReply:
        if self.cursor >= len(self.replies):
            raise ScriptExhausted(f"scripted replies exhausted after {self.cursor}")
        text = self.replies[self.cursor]
        self.cursor += 1
        return VlmReply(text)


class MockGreedyClient:
    """Answers with the greedy nearest-unassigned-frontier choice.

    Reads the planner input from ``request.context``. Robots left over once the
    frontiers run out get their nearest frontier.
    """

    def complete(self, request: VlmRequest) -> VlmReply:
        from .planners import assign_greedy, frontier_distances

        inp = request.context
        if inp is None:
            raise VlmError("mock client needs the planner input as request context")
        dist = frontier_distances(inp)
        a = assign_greedy(inp, distances=dist)
        out = {}
        for rid in inp.robot_ids:
            fid = a.goals[rid].frontier_id
            if fid is None:
                fid = int(np.argmin(dist[rid]))
            out[robot_key(rid)] = fid
        return VlmReply(json.dumps(out))


def vlm_call(request: VlmRequest, config: EndpointConfig = EndpointConfig(), client: VlmClient | None = None) -> VlmReply:
    """One request to ``client`` (default: the live endpoint described by ``config``)."""
    return (client or LiveClient(config)).complete(request)


def make_client(spec: str, config: EndpointConfig = EndpointConfig()) -> VlmClient:
    """``live``, ``mock-greedy`` or ``scripted:<file>``."""
    if spec == "live":
        return LiveClient(config)
    if spec == "mock-greedy":
        return MockGreedyClient()
    if spec.startswith("scripted:"):
        return ScriptedClient.from_file(spec.split(":", 1)[1])
    raise ValueError(f"unknown VLM client {spec!r}")
