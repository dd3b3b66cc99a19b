"""Zero-shot prompt rendering, chat-completion client and privacy boundary.

Two fixed templates (with and without the object-label anchor) are rendered
byte-exactly: all probabilities and cosine scores use 4 decimal places and
the token block lists one "token (score)" per line. Every outbound request
must pass the privacy check before transmission; the only numeric content
allowed out is the bag-of-words scores plus the object confidence.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx

from .errors import NetworkError, PrivacyError, UsageError
from .retrieval import BagOfWords

log = logging.getLogger(__name__)

FIXED_TEMPERATURE = 0.2
CAPTION_MIN_WORDS = 8
CAPTION_MAX_WORDS = 20
MAX_OUTBOUND_FLOATS = 16  # 15 bag-of-words scores + 1 object confidence

WITH_OBJ_TEMPLATE = """You are given an object label and a noisy bag-of-words (BoW). Both object label and BoW will be accompanied with numbers, the numbers with object labels are the softmax probabilities of correctly guessing the object label, and the BoW are cosine similarities of the words to our embedding.

Your goal is to regenerate the most likely original image caption.

Instructions:
- Use the object label as a possible anchor.
- Use the similarity scores to infer which words are relevant.
- Ignore or remove garbage, irrelevant, contradictory, or low-signal words.
- Use only a small, coherent subset of the BoW plus the object label.
- Do NOT invent new objects not supported by the label or high-similarity words.

Output:
Return ONLY one natural-language caption (8–20 words). No explanations, no lists, no formatting.

Input:
Object label: {pred_obj} (prob: {pred_conf:.4f})

BoW tokens with scores:
{words_str}"""

WITHOUT_OBJ_TEMPLATE = """You are given a noisy bag-of-words (BoW). BoW will be accompanied with numbers, the numbers with BoW are cosine similarities of the words to our embedding.

Your goal is to regenerate the most likely original image caption.

Instructions:
- Use the similarity scores to infer which words are relevant.
- Ignore or remove garbage, irrelevant, contradictory, or low-signal words.
- Use only a small, coherent subset of the BoW.
- Do NOT invent new objects not supported by the high-similarity words.

Output:
Return ONLY one natural-language caption (8–20 words). No explanations, no lists, no formatting.

Input:
BoW tokens with scores:
{words_str}"""


@dataclass
class PromptInput:
    object_label: str
    object_confidence: float
    bow: BagOfWords

    def __post_init__(self):
        if not 0.0 <= self.object_confidence <= 1.0:
            raise UsageError("object confidence must lie in [0, 1]")
        if len(self.bow) > 15:
            raise UsageError("bag-of-words longer than 15 entries")


def words_block(bow: BagOfWords) -> str:
    """One "token (0.xxxx)" line per bag-of-words entry, in order."""
    return "\n".join(f"{token} ({score:.4f})" for token, score in bow.entries)


def render_prompt_with_obj(inp: PromptInput) -> str:
    if len(inp.bow) == 0:
        log.warning("rendering with-object prompt for an empty bag-of-words")
    return WITH_OBJ_TEMPLATE.format(
        pred_obj=inp.object_label,
        pred_conf=inp.object_confidence,
        words_str=words_block(inp.bow),
    )


def render_prompt_without_obj(bow: BagOfWords) -> str:
    if len(bow) == 0:
        log.warning("rendering without-object prompt for an empty bag-of-words")
    return WITHOUT_OBJ_TEMPLATE.format(words_str=words_block(bow))


@dataclass
class LLMConfig:
    endpoint_url: str
    model: str
    temperature: float = FIXED_TEMPERATURE
    allow_temperature_override: bool = False
    max_retries: int = 3
    timeout_s: float = 30.0
    api_key_env: str = "EMBOW_API_KEY"
    max_concurrency: int = 4
    backoff_base_s: float = 0.5

    def __post_init__(self):
        if self.temperature != FIXED_TEMPERATURE and not self.allow_temperature_override:
            raise UsageError(
                f"temperature is fixed at {FIXED_TEMPERATURE}; pass the explicit override flag to change it"
            )
        if self.max_retries < 0 or self.timeout_s <= 0 or self.max_concurrency < 1:
            raise UsageError("invalid LLM client limits")


@dataclass
class GeneratedCaption:
    text: str
    word_count: int
    length_ok: bool
    model: str
    latency_s: float
    retries: int = 0


_FLOAT_RE = re.compile(r"-?\d+\.\d+")


@dataclass
class PrivacyReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    float_literal_count: int = 0


def _coordinate_triples(values, label: str) -> dict[tuple[str, str, str], str]:
    rendered = [f"{float(v):.4f}" for v in values]
    return {
        (rendered[i], rendered[i + 1], rendered[i + 2]): label
        for i in range(len(rendered) - 2)
    }


def assert_privacy(
    request_payload: bytes,
    x: Optional[object] = None,
    z: Optional[object] = None,
) -> PrivacyReport:
    """Check an outbound request body against the privacy boundary.

    Violations: any three consecutive coordinates of the sample's raw
    embedding x or refined latent z appearing (at 4-decimal rendering) as
    consecutive numeric literals anywhere in the payload, or more than 16
    float literals inside the message contents.
    """
    text = request_payload.decode("utf-8", errors="replace")
    violations: list[str] = []

    banned: dict[tuple[str, str, str], str] = {}
    if x is not None and len(x) >= 3:
        banned.update(_coordinate_triples(x, "embedding x"))
    if z is not None and len(z) >= 3:
        banned.update(_coordinate_triples(z, "latent z"))
    if banned:
        literals = [f"{float(m):.4f}" for m in _FLOAT_RE.findall(text)]
        hits = set()
        for i in range(len(literals) - 2):
            label = banned.get((literals[i], literals[i + 1], literals[i + 2]))
            if label:
                hits.add(label)
        for label in sorted(hits):
            violations.append(f"payload leaks consecutive coordinates of {label}")

    try:
        body = json.loads(text)
        contents = "\n".join(
            str(m.get("content", "")) for m in body.get("messages", [])
        )
    except (json.JSONDecodeError, AttributeError):
        contents = text
    count = len(_FLOAT_RE.findall(contents))
    if count > MAX_OUTBOUND_FLOATS:
        violations.append(
            f"message content carries {count} float literals (limit {MAX_OUTBOUND_FLOATS})"
        )
    return PrivacyReport(ok=not violations, violations=violations, float_literal_count=count)


def build_request_body(prompt: str, cfg: LLMConfig) -> dict:
    return {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    }


def _auth_headers(cfg: LLMConfig, environ: dict) -> dict:
    key = environ.get(cfg.api_key_env, "")
    return {"Authorization": f"Bearer {key}"} if key else {}


def generate_caption(
    prompt: str,
    cfg: LLMConfig,
    *,
    transport: Optional[httpx.BaseTransport] = None,
    environ: Optional[dict] = None,
    privacy_x: Optional[object] = None,
    privacy_z: Optional[object] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> GeneratedCaption:
    """Send one chat-completion request and return the first completion.

    The privacy check runs on the exact outbound bytes before transmission;
    a violation aborts the call. Transient failures (connection errors, 429,
    5xx) are retried with exponential backoff, honoring Retry-After. The
    8-20 word instruction is soft: out-of-range captions are flagged, never
    truncated or rejected.
    """
    import os

    environ = environ if environ is not None else dict(os.environ)
    body = build_request_body(prompt, cfg)
    payload = json.dumps(body).encode("utf-8")

    report = assert_privacy(payload, x=privacy_x, z=privacy_z)
    if not report.ok:
        raise PrivacyError("; ".join(report.violations))

    headers = {"Content-Type": "application/json", **_auth_headers(cfg, environ)}
    t0 = time.perf_counter()
    last_error: Optional[str] = None
    with httpx.Client(transport=transport, timeout=cfg.timeout_s) as client:
        for attempt in range(cfg.max_retries + 1):
            try:
                resp = client.post(cfg.endpoint_url, content=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
                if attempt < cfg.max_retries:
                    sleep(cfg.backoff_base_s * 2**attempt)
                    continue
                break
            if resp.status_code in (401, 403):
                raise NetworkError(f"authentication failed ({resp.status_code}) at {cfg.endpoint_url}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                if attempt < cfg.max_retries:
                    retry_after = resp.headers.get("Retry-After")
                    delay = float(retry_after) if retry_after else cfg.backoff_base_s * 2**attempt
                    sleep(delay)
                    continue
                break
            if resp.status_code != 200:
                raise NetworkError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"]
            except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                raise NetworkError(f"malformed completion response: {exc}") from exc
            words = len(str(text).split())
            return GeneratedCaption(
                text=str(text),
                word_count=words,
                length_ok=CAPTION_MIN_WORDS <= words <= CAPTION_MAX_WORDS,
                model=cfg.model,
                latency_s=time.perf_counter() - t0,
                retries=attempt,
            )
    raise NetworkError(f"request failed after {cfg.max_retries + 1} attempts: {last_error}")


_BOW_LINE_RE = re.compile(r"^(\S+) \(-?\d+\.\d{4}\)$", re.MULTILINE)
_OBJ_RE = re.compile(r"^Object label: (.+) \(prob: ", re.MULTILINE)

_MOCK_PATTERNS = (
    "A {0} and a {1} near a {2} in a quiet {3} scene.",
    "A {0} with a {1} beside the {2} under a {3} sky.",
    "The {0} sits by a {1} while a {2} rests on the {3}.",
)


def mock_caption_for_prompt(prompt: str) -> str:
    """Deterministic stand-in completion derived from the prompt's tokens."""
    tokens = _BOW_LINE_RE.findall(prompt)
    obj = _OBJ_RE.findall(prompt)
    words = (obj[:1] + tokens + ["object", "shape", "surface", "background"])[:4]
    pattern = _MOCK_PATTERNS[len(prompt) % len(_MOCK_PATTERNS)]
    return pattern.format(*words)


def mock_transport(status_sequence: Optional[list[int]] = None) -> httpx.MockTransport:
    """In-process chat-completion endpoint for offline runs and tests.

    Replays `status_sequence` (e.g. [429, 200]) before settling on 200.
    """
    remaining = list(status_sequence or [])

    def handler(request: httpx.Request) -> httpx.Response:
        if remaining:
            status = remaining.pop(0)
            if status != 200:
                return httpx.Response(status, headers={"Retry-After": "0"})
        body = json.loads(request.content.decode("utf-8"))
        prompt = body["messages"][0]["content"]
        caption = mock_caption_for_prompt(prompt)
        return httpx.Response(200, json={
            "model": body.get("model", "mock"),
            "choices": [{"message": {"role": "assistant", "content": caption}}],
        })

    return httpx.MockTransport(handler)
