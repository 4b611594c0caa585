"""Client for OpenAI-compatible audio-LLM judge endpoints.

Requests go to ``{base_url}/chat/completions`` with the WAV attached as a
base64 ``input_audio`` content part. Every successful reply is cached on disk
under a content-addressed key, so re-running an evaluation is network-silent.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

import httpx

from .dataset import Manifest, SampleRecord
from .errors import HarnessError, ParseError, TransportError, ValidationError
from .protocol import (
    DIMENSION_WISE,
    DiagnosisReport,
    PromptBundle,
    PromptMode,
    ReportEntry,
    build_prompt,
    build_rsc_prompt,
    load_templates,
    parse_interleaved,
    parse_single_dimension,
)
from .schema import Schema, validate_score

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
BACKOFF_START_S = 1.0


@dataclass(frozen=True)
class JudgeEndpoint:
    name: str
    base_url: str
    model_name: str
    api_key_env: Optional[str] = None
    max_concurrency: int = 4
    timeout_s: float = 120.0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise ValidationError(f"endpoint {self.name}: max_concurrency must be >= 1")
        if self.timeout_s <= 0:
            raise ValidationError(f"endpoint {self.name}: timeout_s must be > 0")

    @property
    def key_env(self) -> str:
        if self.api_key_env:
            return self.api_key_env
        return "PRISM_API_KEY_" + re.sub(r"[^A-Za-z0-9]", "_", self.name).upper()

    def api_key(self) -> Optional[str]:
        return os.environ.get(self.key_env)

    @classmethod
    def from_mapping(cls, name: str, d: dict) -> "JudgeEndpoint":
        known = {"base_url", "model_name", "api_key_env", "max_concurrency", "timeout_s", "temperature"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"endpoint {name}: unknown fields {sorted(unknown)}")
        if "base_url" not in d or "model_name" not in d:
            raise ValidationError(f"endpoint {name}: base_url and model_name are required")
        return cls(name=name, **d)


class JudgeHTTPError(TransportError):
    def __init__(self, status: int, body: str):
        super().__init__(f"judge returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class JudgeParseError(ParseError):
    """The judge replied but the reply did not parse; ``raw_text`` keeps it."""

    def __init__(self, cause: Exception, raw_text: str):
        super().__init__(str(cause))
        self.cause = cause
        self.raw_text = raw_text


class UnparsableVerdict(JudgeParseError):
    def __init__(self, raw_text: str):
        super().__init__(ValueError("verifier reply has no SUPPORTS/CONTRADICTS keyword"), raw_text)


def cache_key(model_name: str, template_hash: str, prompt_text: str, audio_digest: str,
              mode: str, temperature: float = 0.0) -> str:
    payload = json.dumps(
        [model_name, template_hash, prompt_text, audio_digest, mode, temperature],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per key under ``root/<first 2 hex>/<key>.json``."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        p = self.path(key)
        try:
            with open(p, encoding="utf-8") as fh:
                return json.load(fh)["reply"]
        except FileNotFoundError:
            return None
        except (json.JSONDecodeError, KeyError):
            log.warning("ignoring corrupt cache entry %s", p)
            return None

    def put(self, key: str, reply: str, meta: Optional[dict] = None) -> None:
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            p = self.path(key)
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
            doc = {"key": key, **(meta or {}), "reply": reply}
            tmp.write_text(json.dumps(doc, ensure_ascii=False, sort_keys=True), encoding="utf-8")
            os.replace(tmp, p)


@dataclass(frozen=True)
class RSCVerdict:
    sample_id: str
    dimension_id: int
    verdict: str  # "Supports" | "Contradicts"
    raw_text: str = field(default="", compare=False)

    @property
    def supports(self) -> bool:
        return self.verdict == "Supports"


_VERDICT = re.compile(r"\b(SUPPORTS|CONTRADICTS)\b")


def parse_verdict(text: str) -> str:
    found = _VERDICT.findall(text)
    if not found:
        raise UnparsableVerdict(text)
    return "Supports" if found[-1] == "SUPPORTS" else "Contradicts"


@dataclass
class BatchItem:
    sample_id: str
    report: Optional[DiagnosisReport] = None
    error: Optional[HarnessError] = None

    @property
    def ok(self) -> bool:
        return self.report is not None


class JudgeClient:
    """Talks to one endpoint; safe to share between worker threads."""

    def __init__(
        self,
        endpoint: JudgeEndpoint,
        cache_dir: Union[str, Path, None] = None,
        http: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
        templates: Optional[dict] = None,
    ):
        self.endpoint = endpoint
        self.cache = ResponseCache(cache_dir) if cache_dir is not None else None
        self._http = http or httpx.Client(timeout=endpoint.timeout_s)
        self._sleep = sleep
        self.templates = templates or load_templates()
        self._gate = threading.BoundedSemaphore(endpoint.max_concurrency)
        self._count_lock = threading.Lock()
        self.request_count = 0
        self.cache_hits = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "JudgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------ transport

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self.endpoint.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, body: dict) -> str:
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        delay = BACKOFF_START_S
        last: Optional[Exception] = None
        for attempt in range(1, MAX_ATTEMPTS + 1):
            with self._count_lock:
                self.request_count += 1
            try:
                with self._gate:
                    resp = self._http.post(url, json=body, headers=self._headers(),
                                           timeout=self.endpoint.timeout_s)
            except httpx.TransportError as exc:
                last = TransportError(f"{url}: {exc}")
                wait = delay
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"] or ""
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"{url}: malformed completion payload ({exc})") from exc
                err = JudgeHTTPError(resp.status_code, resp.text)
                if resp.status_code != 429 and resp.status_code < 500:
                    raise err
                last = err
                wait = delay
                retry_after = resp.headers.get("Retry-After")
                if resp.status_code == 429 and retry_after:
                    try:
                        wait = max(0.0, float(retry_after))
                    except ValueError:
                        pass
            if attempt < MAX_ATTEMPTS:
                log.warning("judge %s attempt %d failed (%s); retrying in %.1fs",
                            self.endpoint.name, attempt, last, wait)
                self._sleep(wait)
                delay *= 2
        assert last is not None
        raise last

    def complete(self, system_text: str, user_text: str, audio_b64: Optional[str] = None) -> str:
        content: list[dict[str, Any]] = [{"type": "text", "text": user_text}]
        if audio_b64 is not None:
            content.append({"type": "input_audio", "input_audio": {"data": audio_b64, "format": "wav"}})
        messages = []
        if system_text:
            messages.append({"role": "system", "content": system_text})
        messages.append({"role": "user", "content": content})
        body = {"model": self.endpoint.model_name, "temperature": self.endpoint.temperature,
                "messages": messages}
        return self._post(body)

    # ------------------------------------------------------------ cached calls

    def _cached_reply(self, key: str, call: Callable[[], str],
                      parse: Callable[[str], Any], meta: dict) -> Any:
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._count_lock:
                    self.cache_hits += 1
                try:
                    return parse(hit)
                except ParseError:
                    log.warning("cached reply %s no longer parses; refetching", key)
        raw = call()
        try:
            result = parse(raw)
        except JudgeParseError:
            raise
        except ParseError as exc:
            raise JudgeParseError(exc, raw) from exc
        if self.cache is not None:
            self.cache.put(key, raw, meta)
        return result

    def _ask(self, bundle: PromptBundle, parse: Callable[[str], Any]) -> Any:
        key = cache_key(self.endpoint.model_name, bundle.template_hash,
                        bundle.system_text + "\n" + bundle.user_text, bundle.audio_ref,
                        str(bundle.mode), self.endpoint.temperature)

        def call() -> str:
            audio = base64.b64encode(Path(bundle.audio_path).read_bytes()).decode("ascii")
            return self.complete(bundle.system_text, bundle.user_text, audio)

        meta = {"model": self.endpoint.model_name, "mode": str(bundle.mode)}
        return self._cached_reply(key, call, parse, meta)

    def score_sample(self, sample: SampleRecord, mode: PromptMode, schema: Schema,
                     audio_path: Union[str, Path, None] = None) -> DiagnosisReport:
        """Score one sample.

        Single-pass modes issue one request. Dimension-wise mode without a
        dimension issues one request per schema dimension and assembles them
        into a single report.
        """
        if mode.kind == DIMENSION_WISE:
            dims = [mode.dimension] if mode.dimension is not None else schema.ids
            entries, raws = [], []
            for did in dims:
                bundle = build_prompt(sample, PromptMode.dimension_wise(did), schema,
                                      audio_path=audio_path, templates=self.templates)

                def parse(text: str, did=did):
                    return parse_single_dimension(text, did, schema), text

                (rationale, score), raw = self._ask(bundle, parse)
                entries.append(ReportEntry(did, rationale, score))
                raws.append(raw)
            return DiagnosisReport(tuple(entries), mode, "\n\n".join(raws))
        bundle = build_prompt(sample, mode, schema, audio_path=audio_path, templates=self.templates)
        return self._ask(bundle, lambda text: parse_interleaved(text, schema, mode))

    def rsc_verify(self, dimension, rationale: str, gt_score: int, schema: Schema,
                   sample_id: str = "") -> RSCVerdict:
        """Ask the verifier whether ``rationale`` supports ``gt_score``."""
        did = schema.dimension(dimension).id
        if not rationale or not rationale.strip():
            raise ValidationError("rsc_verify needs a nonempty rationale")
        if not validate_score(schema, did, gt_score):
            raise ValidationError(f"ground-truth score {gt_score!r} invalid for dimension {did}")
        text, thash = build_rsc_prompt(did, rationale, gt_score, schema, self.templates)
        key = cache_key(self.endpoint.model_name, thash, text, "", f"rsc:{did}",
                        self.endpoint.temperature)

        def parse(raw: str) -> RSCVerdict:
            return RSCVerdict(sample_id, did, parse_verdict(raw), raw)

        meta = {"model": self.endpoint.model_name, "mode": f"rsc:{did}"}
        return self._cached_reply(key, lambda: self.complete("", text), parse, meta)

    def run_batch(self, manifest: Manifest, mode: PromptMode, schema: Schema) -> list[BatchItem]:
        """Score every manifest row; results keep manifest order.

        Row failures are recorded in the result and do not stop the batch.
        """

        def one(rec: SampleRecord) -> BatchItem:
            try:
                report = self.score_sample(rec, mode, schema, audio_path=manifest.resolve(rec))
                return BatchItem(rec.id, report=report)
            except HarnessError as exc:
                log.info("row %s failed: %s", rec.id, exc)
                return BatchItem(rec.id, error=exc)
            except OSError as exc:
                return BatchItem(rec.id, error=ValidationError(f"row {rec.id}: {exc}"))

        if not manifest.records:
            return []
        workers = min(self.endpoint.max_concurrency, len(manifest.records))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, manifest.records))
