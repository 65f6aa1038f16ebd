"""
Zero-shot transliteration through a chat-completion HTTP service.

One sentence goes into one request built from a versioned prompt template.
Requests run on a thread pool and the transcript keeps input order. For
offline runs :func:`mock_transport` replays canned responses from a JSONL
fixture as an ``httpx.MockTransport``, so no request can leave the process.
"""
import json
import logging
import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import httpx

from .errors import TranslitError
from .finetune import Direction
from .metrics import evaluate

logger = logging.getLogger(__name__)

PROMPT_TEMPLATES = {
    "translit-v1": ("Transliterate the following {source_script} sentence into {target_script}. "
                    "Output only the transliteration."),
}
SCRIPT_NAMES = {"roman2ur": ("Roman Urdu", "Urdu script"), "ur2roman": ("Urdu script", "Roman Urdu")}
RETRYABLE = {408, 429, 500, 502, 503, 504}
LATENCY_HEADER = "x-mock-latency-ms"


class LlmError(TranslitError):
    pass


class LlmAuthError(LlmError):
    """The service rejected the credentials, or no API key is available."""


class TranscriptAlignmentError(LlmError):
    """A transcript and its references have different lengths."""


@dataclass
class LlmConfig:
    """Defaults replicate the zero-shot baseline: temperature 1, top_p 1, nothing else overridden."""
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o-mini"
    temperature: float = 1.0
    top_p: float = 1.0
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 1.0
    template_id: str = "translit-v1"
    max_in_flight: int = 4

    def validate(self):
        if self.template_id not in PROMPT_TEMPLATES:
            raise LlmError("Unknown prompt template '{}'.".format(self.template_id))
        if self.max_retries < 0 or self.max_in_flight < 1 or self.timeout <= 0 or self.backoff_base < 0:
            raise LlmError("max_retries, backoff_base must be >= 0; max_in_flight and timeout > 0.")


@dataclass
class TranscriptItem:
    input: str
    direction: str
    raw_response: Optional[str]
    output: str
    latency_ms: float
    retries: int
    failed: bool
    error: Optional[str] = None


@dataclass
class Transcript:
    template_id: str
    model: str
    items: List[TranscriptItem] = field(default_factory=list)

    def outputs(self):
        """Hypotheses for scoring: failed items count as empty strings."""
        return ["" if item.failed else item.output for item in self.items]

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps({"template_id": self.template_id, "model": self.model}) + "\n")
            for item in self.items:
                f.write(json.dumps(asdict(item), ensure_ascii=False) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = [line for line in f.read().split("\n") if line]
        header = json.loads(lines[0])
        items = [TranscriptItem(**json.loads(line)) for line in lines[1:]]
        return cls(header["template_id"], header["model"], items)


def build_prompt(direction, template_id="translit-v1"):
    source_script, target_script = SCRIPT_NAMES[Direction(direction).value]
    return PROMPT_TEMPLATES[template_id].format(source_script=source_script, target_script=target_script)


def build_request(text, direction, config):
    """Chat-completion payload; sampling is limited to temperature and top_p."""
    return {
        "model": config.model,
        "messages": [{"role": "system", "content": build_prompt(direction, config.template_id)},
                     {"role": "user", "content": text}],
        "temperature": config.temperature,
        "top_p": config.top_p,
    }


def extract_transliteration(content):
    """
    Strip a model preamble down to the transliteration line.

    >>> extract_transliteration('Here is the transliteration:\\n"kya haal hai"')
    'kya haal hai'
    """
    lines = [line.strip() for line in (content or "").splitlines()]
    lines = [line for line in lines if line and not line.endswith(":")]
    if not lines:
        raise ValueError("empty response")
    text = lines[-1].strip("`\"'“”").strip()
    if not text:
        raise ValueError("empty response")
    return text


def mock_transport(fixture_path):
    """
    ``httpx.MockTransport`` replaying a JSONL fixture of
    ``{input, response, latency_ms, fail}`` entries.

    Entries for the same input are consumed in order and the last one repeats.
    A failing entry answers 503; an unknown input answers 404. The latency is
    reported through the ``x-mock-latency-ms`` header, never slept.
    """
    queues = {}
    with open(fixture_path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entry = json.loads(line)
                queues.setdefault(entry["input"], deque()).append(entry)
    lock = threading.Lock()

    def handler(request):
        payload = json.loads(request.content)
        text = payload["messages"][-1]["content"]
        with lock:
            queue = queues.get(text)
            if not queue:
                return httpx.Response(404, json={"error": {"message": "no fixture for input"}})
            entry = queue.popleft() if len(queue) > 1 else queue[0]
        headers = {LATENCY_HEADER: str(entry.get("latency_ms", 0))}
        if entry.get("fail"):
            return httpx.Response(503, headers=headers, json={"error": {"message": "mock failure"}})
        return httpx.Response(200, headers=headers, json={
            "model": payload["model"],
            "choices": [{"index": 0, "message": {"role": "assistant", "content": entry.get("response", "")}}],
        })

    return httpx.MockTransport(handler)


class LlmClient:
    """ Synchronous chat-completion client with retries and exponential backoff.

    INPUTS
    =======
    config: LlmConfig.
    transport (optional): an httpx transport; when omitted requests go over the
                          network and the API key is read from ``config.api_key_env``.
    sleep (optional, default time.sleep): called with the backoff delay in seconds.
    """

    def __init__(self, config, transport=None, sleep=time.sleep):
        config.validate()
        self.config = config
        self.sleep = sleep
        headers = {"Content-Type": "application/json"}
        if transport is None:
            key = os.environ.get(config.api_key_env)
            if not key:
                raise LlmAuthError("Environment variable {} holds no API key.".format(config.api_key_env))
            headers["Authorization"] = "Bearer " + key
        self.client = httpx.Client(transport=transport, timeout=config.timeout, headers=headers)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self.client.close()

    def _item(self, text, direction, raw, output, latency, retries, error=None):
        return TranscriptItem(text, direction.value, raw, output, latency, retries, error is not None, error)

    def transliterate(self, text, direction):
        """One request (plus retries) for one sentence; returns a TranscriptItem."""
        direction = Direction(direction)
        payload = build_request(text, direction, self.config)
        error = None
        latency = 0.0
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            started = time.perf_counter()
            try:
                response = self.client.post(self.config.endpoint, json=payload)
            except httpx.TransportError as e:
                latency = (time.perf_counter() - started) * 1000
                error = "{}: {}".format(type(e).__name__, e)
                logger.warning("Request for %r failed (%s), attempt %d", text, error, attempt + 1)
                continue
            latency = float(response.headers.get(LATENCY_HEADER, (time.perf_counter() - started) * 1000))
            if response.status_code in (401, 403):
                raise LlmAuthError("The service rejected the credentials (HTTP {}).".format(response.status_code))
            if response.status_code in RETRYABLE:
                error = "HTTP {}".format(response.status_code)
                logger.warning("Request for %r got %s, attempt %d", text, error, attempt + 1)
                continue
            if response.status_code >= 400:
                return self._item(text, direction, response.text, "", latency, attempt,
                                  "HTTP {}".format(response.status_code))
            raw = response.text
            try:
                content = response.json()["choices"][0]["message"]["content"]
                return self._item(text, direction, raw, extract_transliteration(content), latency, attempt)
            except (ValueError, KeyError, IndexError, TypeError) as e:
                return self._item(text, direction, raw, "", latency, attempt, "unparseable response: {}".format(e))
        return self._item(text, direction, None, "", latency, self.config.max_retries,
                          "gave up after {} retries ({})".format(self.config.max_retries, error))


def transliterate_batch(items, config, transport="http", fixture=None, sleep=time.sleep):
    """
    Transliterate (text, direction) items, up to ``config.max_in_flight`` at a time.

    INPUTS
    =======
    items: list of (text, direction).
    config: LlmConfig.
    transport (optional): "http" or "mock"; "mock" needs ``fixture``.
    fixture (optional): JSONL fixture for the mock transport.

    RETURNS
    ========
    Transcript in input order. Failed items are flagged; authentication
    failures raise LlmAuthError.
    """
    if transport == "mock":
        if fixture is None:
            raise LlmError("The mock transport needs a fixture file.")
        transport_obj = mock_transport(fixture)
    elif transport == "http":
        transport_obj = None
    else:
        raise LlmError("Unknown transport '{}'.".format(transport))
    with LlmClient(config, transport_obj, sleep) as client:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            results = list(pool.map(lambda item: client.transliterate(*item), items))
    failed = sum(item.failed for item in results)
    logger.info("Transliterated %d items with %s (%d failed)", len(results), config.model, failed)
    return Transcript(config.template_id, config.model, results)


def score_transcript(transcript, refs):
    """MetricReport of a transcript against references; failed items score as empty hypotheses."""
    if len(transcript.items) != len(refs):
        raise TranscriptAlignmentError("Transcript has {} items but {} references were given.".format(
            len(transcript.items), len(refs)))
    return evaluate(transcript.outputs(), refs)
