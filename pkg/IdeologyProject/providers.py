import time
import threading
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Callable, Literal, Optional

import httpx
from pydantic import BaseModel, Field

from IdeologyProject.logger import logging
from IdeologyProject.exception import (ConfigurationError, ContentFilteredError, MalformedReplyError, ProviderError,
                                       RateLimitedError, TransportError)
from IdeologyProject.config import LANGUAGES, ConcurrencyConfig, EndpointSpec, RetryConfig
from IdeologyProject.utils import digest_payload, read_json

BLOCS = ("Arabic Countries", "China", "Russia", "Western")
TERMINAL_OUTCOMES = ("ok", "refusal")
CONTENT_FILTER_MARKERS = ("content_filter", "content_policy", "safety", "responsible_ai_policy", "blocked")

Outcome = Literal["ok", "refusal", "rate_limited", "transport", "malformed"]


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class ModelSpec(BaseModel):
    model_id: str
    variant: str
    organization: str
    country: str
    bloc: Literal["Arabic Countries", "China", "Russia", "Western"]
    listed_languages: list[str]
    extra_languages: list[str] = Field(default_factory=list)
    endpoint: EndpointSpec
    size_note: Optional[str] = None
    release: Optional[str] = None
    provider_name: Optional[str] = None
    collection_dates: Optional[str] = None

    @property
    def supported_languages(self) -> list[str]:
        merged = set(self.listed_languages) | set(self.extra_languages)
        return [language for language in LANGUAGES if language in merged]


class Roster(BaseModel):
    models: list[ModelSpec]
    blocs: dict[str, str]

    def get(self, model_id: str) -> ModelSpec:
        for model in self.models:
            if model.model_id == model_id:
                return model
        raise ConfigurationError(f"Model {model_id!r} is not in the roster")

    def subset(self, model_ids: Optional[list[str]]) -> "Roster":
        if not model_ids:
            return self
        return Roster(models=[self.get(model_id) for model_id in model_ids], blocs=self.blocs)

    def supporting_models(self, language: str) -> list[str]:
        return [model.model_id for model in self.models if language in model.supported_languages]

    def support(self, languages=LANGUAGES) -> dict[str, set[str]]:
        return {language: set(self.supporting_models(language)) for language in languages}


class ChatMessage(BaseModel):
    role: Literal["system", "user", "assistant"]
    content: str


class ChatRequest(BaseModel):
    model: str
    messages: list[ChatMessage]
    max_tokens: int = 2048
    temperature: Optional[float] = None

    def is_fresh(self) -> bool:
        """No assistant turn carried over from an earlier exchange."""
        return all(message.role != "assistant" for message in self.messages)


class ChatReply(BaseModel):
    text: Optional[str] = None
    outcome: Outcome = "ok"
    error: Optional[str] = None
    status_code: Optional[int] = None
    attempt: int = 1
    latency_seconds: float = 0.0
    started_at: Optional[str] = None
    finished_at: Optional[str] = None
    cached: bool = False
    body: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.outcome == "ok" and bool(self.text)

    @property
    def terminal(self) -> bool:
        return self.outcome in TERMINAL_OUTCOMES


def load_roster(path) -> Roster:
    raw = read_json(path)
    blocs = raw.get("blocs", {})
    models = []
    for entry in raw.get("models", []):
        country = entry.get("country")
        if country not in blocs:
            raise ConfigurationError(f"No bloc known for country {country!r} of model {entry.get('model_id')!r}")
        listed = entry.get("languages", [])
        extra = entry.get("extra_languages", [])
        if not listed or not set(listed) | set(extra) <= set(LANGUAGES):
            raise ConfigurationError(f"Model {entry.get('model_id')!r} has invalid languages {listed + extra}")
        models.append(ModelSpec(model_id=entry["model_id"],
                                variant=entry.get("variant", entry["model_id"]),
                                organization=entry.get("organization", ""),
                                country=country,
                                bloc=blocs[country],
                                listed_languages=listed,
                                extra_languages=extra,
                                endpoint=EndpointSpec(**entry["endpoint"]),
                                size_note=entry.get("size_note"),
                                release=entry.get("release"),
                                provider_name=entry.get("provider_name"),
                                collection_dates=entry.get("collection_dates")))
    ids = [model.model_id for model in models]
    if not models or len(set(ids)) != len(ids):
        raise ConfigurationError(f"Roster {path} is empty or has duplicate model ids")
    logging.info(f"Roster loaded from {path}: {len(models)} models")
    return Roster(models=models, blocs=blocs)



####################################################################################################################
                                                ## Adapters ##
####################################################################################################################



class ChatProvider:
    """One endpoint; `complete` returns (text, raw body) or raises a ProviderError."""
    key = "provider"

    def complete(self, request: ChatRequest) -> tuple[str, dict]:
        raise NotImplementedError

    def close_connection(self):
        pass


def _looks_filtered(body_text: str) -> bool:
    lowered = body_text.lower()
    return any(marker in lowered for marker in CONTENT_FILTER_MARKERS)


class HttpChatProvider(ChatProvider):

    def __init__(self, endpoint: EndpointSpec, timeout: float = 120.0, transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self.key = f"{endpoint.kind}:{endpoint.base_url}"
        self._client = httpx.Client(base_url=endpoint.base_url.rstrip("/"),
                                    headers=self._headers(endpoint.api_key()),
                                    timeout=httpx.Timeout(timeout, connect=10.0),
                                    transport=transport)

    def _headers(self, api_key: Optional[str]) -> dict:
        return {"Authorization": f"Bearer {api_key}"} if api_key else {}

    def _post(self, path: str, body: dict) -> dict:
        try:
            response = self._client.post(path, json=body)
        except httpx.TimeoutException as e:
            raise TransportError(f"Timeout calling {self.key}: {e}") from e
        except httpx.HTTPError as e:
            raise TransportError(f"Transport error calling {self.key}: {e}") from e

        text = response.text
        if response.status_code == 429:
            raise RateLimitedError(f"Rate limited by {self.key}", status_code=429, body=text)
        if response.status_code >= 500:
            raise TransportError(f"Server error {response.status_code} from {self.key}", status_code=response.status_code, body=text)
        if response.status_code >= 400:
            if _looks_filtered(text):
                raise ContentFilteredError(f"Content filtered by {self.key}", status_code=response.status_code, body=text)
            raise MalformedReplyError(f"Request rejected by {self.key} ({response.status_code})",
                                      status_code=response.status_code, body=text)
        try:
            return response.json()
        except ValueError as e:
            raise MalformedReplyError(f"Non-JSON body from {self.key}", status_code=response.status_code, body=text) from e

    def close_connection(self):
        self._client.close()


class OpenAICompatibleProvider(HttpChatProvider):
    """OpenAI-style /chat/completions, as served by most hosted and local endpoints."""

    def complete(self, request: ChatRequest) -> tuple[str, dict]:
        body = {"model": self.endpoint.model,
                "messages": [message.model_dump() for message in request.messages],
                "max_tokens": request.max_tokens}
        if request.temperature is not None:
            body["temperature"] = request.temperature
        data = self._post("/chat/completions", body)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedReplyError(f"No choices in reply from {self.key}", body=str(data)) from e
        if choice.get("finish_reason") == "content_filter":
            raise ContentFilteredError(f"Content filtered by {self.key}", body=str(data))
        content = (choice.get("message") or {}).get("content")
        if not isinstance(content, str):
            raise MalformedReplyError(f"Reply from {self.key} has no text content", body=str(data))
        return content, data


class AnthropicProvider(HttpChatProvider):

    def _headers(self, api_key: Optional[str]) -> dict:
        headers = {"anthropic-version": "2023-06-01"}
        if api_key:
            headers["x-api-key"] = api_key
        return headers

    def complete(self, request: ChatRequest) -> tuple[str, dict]:
        system = "\n".join(message.content for message in request.messages if message.role == "system")
        body = {"model": self.endpoint.model,
                "max_tokens": request.max_tokens,
                "messages": [message.model_dump() for message in request.messages if message.role != "system"]}
        if system:
            body["system"] = system
        if request.temperature is not None:
            body["temperature"] = request.temperature
        data = self._post("/messages", body)
        if data.get("stop_reason") == "refusal":
            raise ContentFilteredError(f"Refusal stop from {self.key}", body=str(data))
        blocks = [block.get("text", "") for block in data.get("content", []) if block.get("type") == "text"]
        if not blocks:
            raise MalformedReplyError(f"Reply from {self.key} has no text block", body=str(data))
        return "".join(blocks), data


def build_http_provider(endpoint: EndpointSpec, timeout: float) -> ChatProvider:
    if endpoint.kind == "anthropic":
        return AnthropicProvider(endpoint, timeout)
    if endpoint.kind == "openai":
        return OpenAICompatibleProvider(endpoint, timeout)
    raise ConfigurationError(f"Endpoint kind {endpoint.kind!r} needs a mock provider")



####################################################################################################################
                                                ## Client ##
####################################################################################################################



class ProviderGate:
    """Bounded in-flight requests plus a minimum spacing between request starts."""

    def __init__(self, max_in_flight: int, min_interval: float = 0.0, sleep: Callable[[float], None] = time.sleep):
        self._semaphore = threading.BoundedSemaphore(max_in_flight)
        self._min_interval = min_interval
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_start = 0.0

    def _wait_turn(self):
        if self._min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next_start)
            self._next_start = start + self._min_interval
        if start > now:
            self._sleep(start - now)

    @contextmanager
    def slot(self):
        self._semaphore.acquire()
        try:
            self._wait_turn()
            yield
        finally:
            self._semaphore.release()


class ChatClient:
    """Routes requests by model id to providers, with per-provider gates and retries."""

    def __init__(self, providers: dict[str, ChatProvider], retry: RetryConfig, concurrency: ConcurrencyConfig,
                 store=None, sleep: Callable[[float], None] = time.sleep):
        self.providers = providers
        self.retry = retry
        self.store = store
        self._sleep = sleep
        self._gates: dict[str, ProviderGate] = {}
        for provider in providers.values():
            if provider.key not in self._gates:
                self._gates[provider.key] = ProviderGate(concurrency.per_provider_inflight,
                                                         concurrency.min_interval_seconds, sleep)
        self._calls_lock = threading.Lock()
        self.provider_calls: dict[str, int] = {}

    def _provider(self, model_id: str) -> ChatProvider:
        if model_id not in self.providers:
            raise ConfigurationError(f"No provider configured for model {model_id!r}")
        return self.providers[model_id]

    def _count(self, model_id: str):
        with self._calls_lock:
            self.provider_calls[model_id] = self.provider_calls.get(model_id, 0) + 1

    def send_chat(self, model_id: str, request: ChatRequest, first_attempt: int = 1) -> ChatReply:
        """Send with exponential backoff on transient failures; content filtering is returned as a refusal."""
        provider = self._provider(model_id)
        gate = self._gates[provider.key]
        for tries in range(self.retry.max_retries + 1):
            attempt = first_attempt + tries
            started_at = utc_now()
            clock = time.perf_counter()
            try:
                self._count(model_id)
                with gate.slot():
                    text, body = provider.complete(request)
                return ChatReply(text=text, outcome="ok", attempt=attempt, body=body,
                                 latency_seconds=time.perf_counter() - clock,
                                 started_at=started_at, finished_at=utc_now())
            except ProviderError as e:
                failure = ChatReply(text=None, outcome=e.outcome, error=str(e), status_code=e.status_code,
                                    attempt=attempt, latency_seconds=time.perf_counter() - clock,
                                    started_at=started_at, finished_at=utc_now())
                if not e.transient or tries == self.retry.max_retries:
                    if e.outcome == "refusal":
                        logging.info(f"{model_id} refused via content filter (attempt {attempt})")
                    else:
                        logging.warning(f"{model_id} failed with {e.outcome} after attempt {attempt}: {e}")
                    return failure
                delay = self.retry.backoff(tries + 1)
                logging.warning(f"{model_id} {e.outcome} on attempt {attempt}, retrying in {delay:.1f}s")
                self._sleep(delay)
        raise AssertionError("unreachable")

    def complete(self, model_id: str, request: ChatRequest, respondent: str, topic_id: str, stage: str,
                 nonce: int = 0) -> ChatReply:
        if self.store is None:
            return self.send_chat(model_id, request)
        return record_and_replay(self.store, request,
                                 lambda req, first: self.send_chat(model_id, req, first_attempt=first),
                                 respondent=respondent, topic_id=topic_id, stage=stage, nonce=nonce)

    @property
    def total_calls(self) -> int:
        return sum(self.provider_calls.values())

    def close_connection(self):
        for provider in self.providers.values():
            provider.close_connection()


def exchange_key(request: ChatRequest, stage: str, topic_id: str, nonce: int = 0) -> str:
    return digest_payload({"model": request.model,
                           "stage": stage,
                           "topic_id": topic_id,
                           "messages": [message.model_dump() for message in request.messages],
                           "max_tokens": request.max_tokens,
                           "temperature": request.temperature,
                           "nonce": nonce})


def record_and_replay(store, request: ChatRequest, send: Callable[[ChatRequest, int], ChatReply],
                      respondent: str, topic_id: str, stage: str, nonce: int = 0) -> ChatReply:
    """Serve a terminal reply from the exchange store, otherwise send and persist."""
    key = exchange_key(request, stage, topic_id, nonce)
    hit = store.fetch_exchange(key)
    if hit is not None and hit.reply.terminal:
        return hit.reply.model_copy(update={"cached": True})
    reply = send(request, store.next_attempt(respondent, topic_id, stage))
    store.save_exchange(key=key, respondent=respondent, topic_id=topic_id, stage=stage, request=request, reply=reply)
    return reply
