"""Prompted synthesis against any chat-completion HTTP endpoint.

The client POSTs the de-facto chat shape ({model, messages, temperature,
top_p, max_tokens}) with bounded parallelism and per-job retry state.
Every state transition is appended to a jsonl job ledger before the next
dispatch, so a killed run resumes without re-emitting completed outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import requests

from .corpus import CorpusHandle, Document, corpus_from_documents
from .prompts import PromptTemplate, render_prompt
from .tokenize import Tokenizer, WhitespacePunctTokenizer

MAX_SOURCE_TOKENS = 2048
TARGET_LENGTHS = {"HQ": 550, "QA": 550, "TXBK_OUTLINE": 450, "TXBK_CHAPTER": 450}
CHAPTERS_PER_BOOK = 10
MIN_CHAPTERS_ACCEPTED = 8


class GenerationError(Exception):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.7
    top_p: float = 0.95
    max_new_tokens: int = 2048
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff_seconds: float = 1.0
    auth_env_var: Optional[str] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise GenerationError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise GenerationError("top_p must be in (0,1]")
        if self.max_in_flight < 1:
            raise GenerationError("max_in_flight must be >= 1")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "endpoint_url": self.endpoint_url,
                "model_name": self.model_name,
                "temperature": self.temperature,
                "top_p": self.top_p,
                "max_new_tokens": self.max_new_tokens,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class FilterPolicy:
    min_tokens: int = 50
    max_tokens: Optional[int] = None  # default 4x the paradigm target length

    def __post_init__(self):
        if self.min_tokens <= 0:
            raise GenerationError("min_tokens must be positive")
        if self.max_tokens is not None and self.max_tokens <= self.min_tokens:
            raise GenerationError("max_tokens must exceed min_tokens")

    def bounds_for(self, kind: str) -> Tuple[int, int]:
        upper = self.max_tokens or 4 * TARGET_LENGTHS[kind]
        return self.min_tokens, upper


@dataclass
class GenerationJob:
    job_id: str
    source_doc_id: str
    kind: str
    audience: Optional[str] = None
    chapter_index: Optional[int] = None
    status: str = "pending"  # pending | done | filtered | failed
    output_text: Optional[str] = None
    failure_reason: Optional[str] = None
    attempt_count: int = 0

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "source_doc_id": self.source_doc_id,
            "kind": self.kind,
            "audience": self.audience,
            "chapter_index": self.chapter_index,
            "status": self.status,
            "output_text": self.output_text,
            "failure_reason": self.failure_reason,
            "attempt_count": self.attempt_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationJob":
        return cls(**d)


class JobStore:
    """Append-only jsonl ledger of job state transitions."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._latest: Dict[str, GenerationJob] = {}
        if self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        job = GenerationJob.from_dict(json.loads(line))
                        self._latest[job.job_id] = job

    def record(self, job: GenerationJob) -> None:
        self._latest[job.job_id] = job
        with open(self.path, "a") as fh:
            fh.write(json.dumps(job.to_dict(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def latest(self, job_id: str) -> Optional[GenerationJob]:
        return self._latest.get(job_id)

    def terminal(self, job_id: str) -> Optional[GenerationJob]:
        job = self._latest.get(job_id)
        if job is not None and job.status in ("done", "filtered", "failed"):
            return job
        return None


class ChatClient:
    """Minimal chat-completion client with retry and backoff."""

    def __init__(self, config: GenerationConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.session = session or requests.Session()

    def complete(self, system: str, user: str) -> Tuple[str, int]:
        """Returns (text, attempts); raises GenerationError after retries."""
        body = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_new_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env_var:
            token = os.environ.get(self.config.auth_env_var, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        last_error = "no attempt made"
        for attempt in range(1, self.config.max_attempts + 1):
            try:
                resp = self.session.post(
                    self.config.endpoint_url, json=body, headers=headers, timeout=120
                )
                if resp.status_code == 200:
                    data = resp.json()
                    return data["choices"][0]["message"]["content"], attempt
                last_error = f"HTTP {resp.status_code}"
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            if attempt < self.config.max_attempts:
                time.sleep(self.config.backoff_seconds * (2 ** (attempt - 1)))
        raise GenerationError(
            f"endpoint failed after {self.config.max_attempts} attempts: {last_error}"
        )


def truncate_source(text: str, tokenizer: Tokenizer, limit: int = MAX_SOURCE_TOKENS) -> Tuple[str, bool]:
    """Truncate over-long sources at the last sentence boundary before the
    token limit (falling back to a hard token cut)."""
    tokens = tokenizer.tokenize(text)
    if len(tokens) <= limit:
        return text, False
    # walk sentence-ending punctuation backwards until within limit
    cut = len(text)
    while cut > 0:
        boundary = max(text.rfind(p, 0, cut) for p in (". ", "! ", "? ", ".\n"))
        if boundary <= 0:
            break
        candidate = text[: boundary + 1]
        if len(tokenizer.tokenize(candidate)) <= limit:
            return candidate, True
        cut = boundary
    # no usable sentence boundary: hard cut on whitespace
    words = text.split()
    while words and len(tokenizer.tokenize(" ".join(words))) > limit:
        words = words[: max(1, int(len(words) * 0.9)) - 1]
    return " ".join(words), True


def _apply_filter(
    job: GenerationJob, text: str, policy: FilterPolicy, tokenizer: Tokenizer
) -> GenerationJob:
    lo, hi = policy.bounds_for(job.kind)
    n = len(tokenizer.tokenize(text))
    if n < lo or n > hi:
        return replace(
            job,
            status="filtered",
            failure_reason=f"length {n} outside [{lo},{hi}]",
        )
    return replace(job, status="done", output_text=text)


def _execute(
    job: GenerationJob,
    prompt: Tuple[str, str],
    client: ChatClient,
    policy: FilterPolicy,
    tokenizer: Tokenizer,
    store: Optional[JobStore],
) -> GenerationJob:
    if store is not None:
        prior = store.terminal(job.job_id)
        if prior is not None:
            return prior
        store.record(job)  # persist before dispatch
    try:
        text, attempts = client.complete(*prompt)
        job = replace(job, attempt_count=attempts)
        job = _apply_filter(job, text, policy, tokenizer)
    except GenerationError as exc:
        job = replace(
            job,
            status="failed",
            failure_reason=str(exc),
            attempt_count=client.config.max_attempts,
        )
    if store is not None:
        store.record(job)
    return job


def rephrase(
    doc: Document,
    kind: str,
    config: GenerationConfig,
    policy: FilterPolicy = FilterPolicy(),
    store: Optional[JobStore] = None,
    client: Optional[ChatClient] = None,
    tokenizer: Optional[Tokenizer] = None,
) -> GenerationJob:
    """One HQ or QA rephrasing call with retries and post-filtering."""
    if kind not in ("HQ", "QA"):
        raise GenerationError(f"rephrase kind must be HQ or QA, got {kind!r}")
    tokenizer = tokenizer or WhitespacePunctTokenizer()
    client = client or ChatClient(config)
    source, _truncated = truncate_source(doc.text, tokenizer)
    prompt = render_prompt(PromptTemplate(kind=kind), source)
    job = GenerationJob(
        job_id=f"{kind}:{doc.id}", source_doc_id=doc.id, kind=kind
    )
    return _execute(job, prompt, client, policy, tokenizer, store)


def generate_textbook(
    seed_doc: Document,
    audience: str,
    config: GenerationConfig,
    policy: FilterPolicy = FilterPolicy(),
    store: Optional[JobStore] = None,
    client: Optional[ChatClient] = None,
    tokenizer: Optional[Tokenizer] = None,
) -> List[GenerationJob]:
    """Two-stage book: one outline job, then ten chapters conditioned on
    the full outline. Outline failure aborts the book; the book is
    accepted when the outline and at least eight chapters pass."""
    tokenizer = tokenizer or WhitespacePunctTokenizer()
    client = client or ChatClient(config)
    source, _ = truncate_source(seed_doc.text, tokenizer)

    outline_tpl = PromptTemplate(kind="TXBK_OUTLINE", audience=audience)
    outline_job = GenerationJob(
        job_id=f"TXBK_OUTLINE:{seed_doc.id}:{audience}",
        source_doc_id=seed_doc.id,
        kind="TXBK_OUTLINE",
        audience=audience,
    )
    outline_job = _execute(
        outline_job, render_prompt(outline_tpl, source), client, policy,
        tokenizer, store,
    )
    if outline_job.status != "done":
        return [outline_job]

    chapter_tpl = PromptTemplate(kind="TXBK_CHAPTER", audience=audience)
    chapter_jobs = []
    for i in range(1, CHAPTERS_PER_BOOK + 1):
        job = GenerationJob(
            job_id=f"TXBK_CHAPTER:{seed_doc.id}:{audience}:{i}",
            source_doc_id=seed_doc.id,
            kind="TXBK_CHAPTER",
            audience=audience,
            chapter_index=i,
        )
        prompt = render_prompt(chapter_tpl, outline_job.output_text, chapter_index=i)
        chapter_jobs.append((job, prompt))

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        done = list(
            pool.map(
                lambda jp: _execute(jp[0], jp[1], client, policy, tokenizer, store),
                chapter_jobs,
            )
        )
    return [outline_job] + done


def book_accepted(jobs: Sequence[GenerationJob]) -> bool:
    outline_ok = any(j.kind == "TXBK_OUTLINE" and j.status == "done" for j in jobs)
    chapters_ok = sum(
        1 for j in jobs if j.kind == "TXBK_CHAPTER" and j.status == "done"
    )
    return outline_ok and chapters_ok >= MIN_CHAPTERS_ACCEPTED


def run_batch(
    docs: Sequence[Document],
    kind: str,
    config: GenerationConfig,
    policy: FilterPolicy = FilterPolicy(),
    store: Optional[JobStore] = None,
    client: Optional[ChatClient] = None,
    tokenizer: Optional[Tokenizer] = None,
) -> List[GenerationJob]:
    """Rephrase a batch with at most max_in_flight outstanding requests."""
    tokenizer = tokenizer or WhitespacePunctTokenizer()
    client = client or ChatClient(config)

    def _one(doc: Document) -> GenerationJob:
        return rephrase(
            doc, kind, config, policy=policy, store=store, client=client,
            tokenizer=tokenizer,
        )

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        return list(pool.map(_one, docs))


def export(
    jobs: Sequence[GenerationJob],
    out_path: str | Path,
    config: GenerationConfig,
    label: str = "synthetic",
    tokenizer: Optional[Tokenizer] = None,
) -> CorpusHandle:
    """Write accepted outputs as an ingestible jsonl corpus plus a
    generation manifest (config digest, per-kind counts)."""
    tokenizer = tokenizer or WhitespacePunctTokenizer()
    accepted = [j for j in jobs if j.status == "done"]
    if not accepted:
        raise GenerationError("no accepted jobs to export")
    out_path = Path(out_path)
    docs: List[Document] = []
    with open(out_path, "w") as fh:
        for job in accepted:
            rec = {
                "id": job.job_id,
                "text": job.output_text,
                "source_id": job.source_doc_id,
                "kind": job.kind,
                "model_name": config.model_name,
                "temperature": config.temperature,
                "top_p": config.top_p,
            }
            if job.audience is not None:
                rec["audience"] = job.audience
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            docs.append(
                Document(
                    id=job.job_id,
                    text=job.output_text,
                    source_label=label,
                    token_count=len(tokenizer.tokenize(job.output_text)),
                )
            )
    kind_counts: Dict[str, int] = {}
    for job in accepted:
        kind_counts[job.kind] = kind_counts.get(job.kind, 0) + 1
    manifest = {
        "config_digest": config.digest(),
        "kind_counts": kind_counts,
        "accepted": len(accepted),
        "total_jobs": len(jobs),
        "tokenizer_id": tokenizer.identifier,
    }
    out_path.with_suffix(out_path.suffix + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True)
    )
    handle = corpus_from_documents(label, docs, tokenizer.identifier)
    handle.path = str(out_path)
    handle.format = "jsonl"
    return handle
