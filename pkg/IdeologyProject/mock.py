import re
import json
import time
import hashlib
import threading
from typing import Callable, Optional, Union

from IdeologyProject.logger import logging
from IdeologyProject.exception import ContentFilteredError
from IdeologyProject.config import MockConfig
from IdeologyProject.providers import ChatProvider, ChatRequest

ENGLISH_SCALE = ["very negative", "negative", "neutral", "positive", "very positive"]
MOCK_REFUSAL = "I'm sorry, but I can't share information about this person."
MOCK_DEFLECTION = "This is a complex subject. Perhaps we could talk about something else?"

Scripted = Union[str, Exception]


class MockProvider(ChatProvider):
    """Deterministic stand-in for a chat endpoint.

    Replies are a pure function of (seed, model, request text). Scripted replies and
    exceptions are consumed first, then `responder` if given, then the built-in behavior
    that recognizes judge, tagging, Stage-1 and Stage-2 prompts.
    """

    def __init__(self, model: str, options: Optional[MockConfig] = None, scales: Optional[list[list[str]]] = None,
                 script: Optional[list[Scripted]] = None, responder: Optional[Callable[[ChatRequest], str]] = None,
                 latency: float = 0.0):
        self.model = model
        self.key = f"mock:{model}"
        self.options = options or MockConfig()
        self.scales = sorted(scales or [ENGLISH_SCALE], key=len, reverse=True)
        self.script = list(script or [])
        self.responder = responder
        self.latency = latency
        self._lock = threading.Lock()
        self.calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0
        self.requests: list[ChatRequest] = []

    def _unit(self, *parts: str) -> float:
        digest = hashlib.sha256("|".join([str(self.options.seed), self.model, *parts]).encode("utf-8")).hexdigest()
        return int(digest[:13], 16) / float(16 ** 13)

    def complete(self, request: ChatRequest) -> tuple[str, dict]:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            self.requests.append(request)
            scripted = self.script.pop(0) if self.script else None
        try:
            if self.latency:
                time.sleep(self.latency)
            if isinstance(scripted, Exception):
                raise scripted
            if scripted is not None:
                text = scripted
            elif self.responder is not None:
                text = self.responder(request)
            else:
                text = self._reply(request)
            return text, {"mock": True, "model": self.model, "content": text}
        finally:
            with self._lock:
                self.in_flight -= 1

    def _reply(self, request: ChatRequest) -> str:
        system = next((m.content for m in request.messages if m.role == "system"), "")
        user = next((m.content for m in reversed(request.messages) if m.role == "user"), "")
        if "TEST Description" in system:
            return self._judge_description(user)
        if "extracting the label" in system:
            return self._judge_label(user)
        if "tell me what tags apply" in user:
            return self._tag(user)
        scale = next((labels for labels in self.scales if all(label in user for label in labels)), None)
        if scale is not None:
            return self._stage2(user, scale)
        return self._stage1(user)

    def _stage1(self, prompt: str) -> str:
        draw = self._unit("stage1", prompt)
        if draw < self.options.refusal_rate / 2:
            raise ContentFilteredError(f"Mock content filter for {self.model}")
        if draw < self.options.refusal_rate:
            return MOCK_REFUSAL
        return (f"{prompt.strip()} This person is a public figure known for political activity. "
                f"[{self.model} description {self._unit('text', prompt):.6f}]")

    def _stage2(self, prompt: str, scale: list[str]) -> str:
        # model and language shift the label distribution
        lean = self._unit("lean", scale[0]) - 0.5
        position = min(0.999, max(0.0, self._unit("label", prompt) + 0.4 * lean + 0.1))
        label = scale[int(position * len(scale))]
        wrap = self._unit("wrap", prompt)
        if wrap < self.options.deflection_rate:
            return MOCK_DEFLECTION
        if wrap < 0.15:
            return f"{label}."
        if wrap < 0.22:
            return f"The author likely thinks {label} of them."
        if wrap < 0.3:
            return f"  {label.capitalize()} "
        return label

    def _judge_description(self, user: str) -> str:
        test = _between(user, "### TEST Description:\n", "\n### REFERENCE Description:\n")
        reference = _between(user, "### REFERENCE Description:\n", "\n### Response:")
        if test.strip() == reference.strip():
            return "yes"
        if MOCK_REFUSAL in reference or not reference.strip():
            return "refusal"
        return "no" if self._unit("match", reference) < self.options.mismatch_rate else "yes"

    def _judge_label(self, user: str) -> str:
        options_line = _between(user, "Options: ", "\n")
        options = [option for option in re.findall(r"'([^']*)'", options_line) if option != "unknown"]
        message = _between(user, "### Input:\n", "\n### Response:").casefold()
        found = [option for option in options if option.casefold() in message]
        return max(found, key=len) if found else "unknown"

    def _tag(self, user: str) -> str:
        codes = re.findall(r'"([0-9]{3}[a-z_]*)":\s*\{', user)
        summary = user.split("Summary:", 1)[-1]
        categories = {code: {"result": self._unit("tag", code, summary) < 0.15} for code in codes}
        return json.dumps({"categories": categories}, ensure_ascii=False)


def _between(text: str, start: str, end: str) -> str:
    head, found, rest = text.partition(start)
    if not found:
        return ""
    body, _, _ = rest.partition(end)
    return body


def peak_in_flight(providers: dict) -> int:
    return max((getattr(p, "peak_in_flight", 0) for p in providers.values()), default=0)


def mock_calls(providers: dict) -> int:
    seen, total = set(), 0
    for provider in providers.values():
        if isinstance(provider, MockProvider) and id(provider) not in seen:
            seen.add(id(provider))
            total += provider.calls
    if total:
        logging.info(f"Mock providers answered {total} requests")
    return total
