'''
Chat-completions client shared by the generator, judge and text-baseline stages.
Speaks the OpenAI-compatible `POST {endpoint}/chat/completions` subset: model, messages,
temperature and max_tokens in; `choices[0].message.content` out.
'''
import os, json, time, random, logging, threading
from collections import deque
from dataclasses import dataclass
from typing import Optional, Tuple

import httpx
from pydantic import BaseModel, ConfigDict, Field

from chatintent.errors import GatewayTransportError, GatewayProtocolError

ROLES = ("system", "user", "assistant")
RETRY_STATUS = frozenset([429, 500, 502, 503, 504])
STATS_WINDOW = 1024


@dataclass(frozen = True)
class ChatRequest:
    model: str
    messages: Tuple[Tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 256

    def __post_init__(self):
        messages = tuple((str(role), str(content)) for role, content in self.messages)
        object.__setattr__(self, "messages", messages)
        if not self.model:
            raise ValueError("ChatRequest needs a model name")
        for role, _ in messages:
            if role not in ROLES:
                raise ValueError("Unknown message role `%s`" % (role))
        if not any(role == "user" for role, _ in messages):
            raise ValueError("ChatRequest needs at least one user message")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative, got %s" % (self.temperature))
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive, got %s" % (self.max_tokens))


class GatewayConfig(BaseModel):
    model_config = ConfigDict(frozen = True, extra = "forbid")

    endpoint: str
    model: str
    api_key_env: Optional[str] = "OPENAI_API_KEY"
    timeout: float = Field(60.0, gt = 0)
    max_retries: int = Field(3, ge = 0)
    backoff_base: float = Field(0.5, ge = 0)
    max_in_flight: int = Field(4, ge = 1)
    max_tokens: int = Field(256, ge = 1)
    jitter_seed: Optional[int] = None


def serialize_request(req):
    '''
    Request body with fixed field order and compact separators. An integral temperature
    is written as an integer (`"temperature":0`).
    '''
    temperature = int(req.temperature) if float(req.temperature).is_integer() else float(req.temperature)
    body = {"model": req.model,
            "messages": [{"role": role, "content": content} for role, content in req.messages],
            "temperature": temperature,
            "max_tokens": req.max_tokens}
    return json.dumps(body, ensure_ascii = False, separators = (",", ":")).encode("utf-8")


class GatewayClient:
    '''
    Thread-safe chat-completions client with bounded in-flight requests and retries.
    Params:
     - cfg: GatewayConfig
     - transport: optional httpx transport (tests)
     - sleep: callable used for backoff waits
    `delays` and `attempt_counts` keep the most recent STATS_WINDOW entries.
    '''

    def __init__(self, cfg, transport = None, sleep = time.sleep, logger = None):
        self.cfg = cfg
        self.log = logger or logging.getLogger(__name__ + ".GatewayClient")
        self.url = cfg.endpoint.rstrip("/") + "/chat/completions"
        self._client = httpx.Client(timeout = cfg.timeout, transport = transport)
        self._gate = threading.BoundedSemaphore(cfg.max_in_flight)
        self._lock = threading.Lock()
        self._jitter = random.Random(cfg.jitter_seed)
        self._sleep = sleep
        self.delays = deque(maxlen = STATS_WINDOW)
        self.attempt_counts = deque(maxlen = STATS_WINDOW)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._client.close()

    def headers(self):
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key_env:
            key = os.environ.get(self.cfg.api_key_env)
            if key:
                headers["Authorization"] = "Bearer " + key
        return headers

    def backoff_delay(self, attempt):
        '''
        base * 2^attempt plus uniform jitter in [0, base); non-decreasing in attempt.
        '''
        with self._lock:
            jitter = self._jitter.uniform(0, self.cfg.backoff_base)
        return self.cfg.backoff_base * (2 ** attempt) + jitter

    def chat_complete(self, req):
        '''
        POST one request and return the first choice's message content.
        Retries 429, 5xx and transport failures up to `max_retries` times. The in-flight
        slot is held per attempt and released during the backoff wait.
        '''
        body = serialize_request(req)
        attempts = 0
        last_error, last_status = None, None
        while True:
            attempts += 1
            with self._gate:
                try:
                    resp = self._client.post(self.url, content = body, headers = self.headers())
                except httpx.TransportError as err:
                    resp = None
                    last_error, last_status = "%s: %s" % (type(err).__name__, str(err)), None
            if resp is not None:
                if 200 <= resp.status_code < 300:
                    self._record_attempts(attempts)
                    return self._parse_response(resp)
                last_error, last_status = "HTTP %d: %s" % (resp.status_code, resp.text[:200]), resp.status_code
                if resp.status_code not in RETRY_STATUS:
                    self._record_attempts(attempts)
                    raise GatewayTransportError("Error while calling `%s`: `%s`" % (self.url, last_error), attempts, last_status)
            if attempts > self.cfg.max_retries:
                self._record_attempts(attempts)
                raise GatewayTransportError("Error while calling `%s` after %d attempts: `%s`" % (self.url, attempts, last_error), attempts, last_status)
            delay = self.backoff_delay(attempts - 1)
            with self._lock:
                self.delays.append(delay)
            self.log.warning("Attempt %d to `%s` failed (%s); retrying in %.2f s" % (attempts, self.url, last_error, delay))
            self._sleep(delay)

    def _record_attempts(self, attempts):
        with self._lock:
            self.attempt_counts.append(attempts)

    def _parse_response(self, resp):
        try:
            data = resp.json()
        except ValueError as err:
            raise GatewayProtocolError("Error while decoding response from `%s`: `%s`" % (self.url, str(err)))
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise GatewayProtocolError("Error while reading response from `%s`: no `choices[0].message.content` in `%s`" % (self.url, str(data)[:200]))
        if not isinstance(content, str):
            raise GatewayProtocolError("Error while reading response from `%s`: content is not a string" % (self.url))
        return content


def chat_complete(cfg, req):
    with GatewayClient(cfg) as client:
        return client.chat_complete(req)
