"""Labeled corpora and deterministic token-ratio mixtures.

Mixing selects documents per component by seeded sampling without
replacement until each component's token sub-budget is met (the last
document may overshoot and is kept), then applies a seeded global shuffle
of the union. All randomness comes from counter-based Philox streams keyed
by (seed, purpose) so the result is reproducible across platforms and
library versions; the generator id is pinned in every manifest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .tokenize import (
    DOC_SEPARATOR_ID,
    Tokenizer,
    WhitespacePunctTokenizer,
    get_tokenizer,
    token_id,
)

PRNG_ID = "philox4x64-numpy"
FRACTION_TOL = 1e-9


class CorpusError(Exception):
    """Raised for unreadable, empty, or inconsistent corpora."""


class MixtureError(Exception):
    """Raised when a mixture spec cannot be satisfied."""


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    source_label: str
    token_count: int


@dataclass
class CorpusHandle:
    """Immutable after construction; safe to share across threads."""

    label: str
    path: str
    format: str
    doc_count: int
    total_tokens: int
    tokenizer_id: str
    warning_count: int = 0
    documents: List[Document] = field(default_factory=list, repr=False)

    def doc_by_id(self, doc_id: str) -> Document:
        if not hasattr(self, "_index"):
            object.__setattr__(self, "_index", {d.id: d for d in self.documents})
        try:
            return self._index[doc_id]  # type: ignore[attr-defined]
        except KeyError:
            raise CorpusError(
                f"document {doc_id!r} missing from corpus {self.label!r} "
                "(manifest/corpus drift)"
            ) from None


@dataclass(frozen=True)
class MixtureSpec:
    components: Tuple[Tuple[str, float], ...]
    seed: int
    token_budget: int

    def __post_init__(self):
        labels = [lbl for lbl, _ in self.components]
        if len(set(labels)) != len(labels):
            raise MixtureError("component labels must be distinct")
        total = sum(frac for _, frac in self.components)
        if abs(total - 1.0) > FRACTION_TOL:
            raise MixtureError(f"fractions sum to {total}, expected 1.0")
        for lbl, frac in self.components:
            if not 0.0 <= frac <= 1.0:
                raise MixtureError(f"fraction for {lbl!r} out of [0,1]: {frac}")
        if self.token_budget <= 0:
            raise MixtureError("token_budget must be positive")

    def to_dict(self) -> dict:
        return {
            "components": [[lbl, frac] for lbl, frac in self.components],
            "seed": self.seed,
            "token_budget": self.token_budget,
        }


@dataclass
class MixtureManifest:
    spec: MixtureSpec
    tokenizer_id: str
    prng_id: str
    selected_doc_ids: Dict[str, List[str]]
    global_order: List[Tuple[str, str]]  # (corpus_label, doc_id)
    achieved_fractions: Dict[str, float]
    output_digest: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "spec": self.spec.to_dict(),
                "tokenizer_id": self.tokenizer_id,
                "prng_id": self.prng_id,
                "selected_doc_ids": self.selected_doc_ids,
                "global_order": [list(p) for p in self.global_order],
                "achieved_fractions": self.achieved_fractions,
                "output_digest": self.output_digest,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MixtureManifest":
        d = json.loads(text)
        spec = MixtureSpec(
            components=tuple((lbl, frac) for lbl, frac in d["spec"]["components"]),
            seed=d["spec"]["seed"],
            token_budget=d["spec"]["token_budget"],
        )
        return cls(
            spec=spec,
            tokenizer_id=d["tokenizer_id"],
            prng_id=d["prng_id"],
            selected_doc_ids=d["selected_doc_ids"],
            global_order=[tuple(p) for p in d["global_order"]],
            achieved_fractions=d["achieved_fractions"],
            output_digest=d["output_digest"],
        )


def _component_rng(seed: int, purpose: str) -> np.random.Generator:
    # Philox keyed by a digest of (seed, purpose): counter-based, stream
    # stability guaranteed by numpy across releases.
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def ingest(
    path: str | Path,
    format: str,
    label: str,
    tokenizer: Optional[Tokenizer] = None,
) -> CorpusHandle:
    """Load a labeled corpus and count tokens under the active tokenizer.

    Malformed jsonl records are skipped and counted, never silently dropped.
    """
    tokenizer = tokenizer or WhitespacePunctTokenizer()
    path = Path(path)
    docs: List[Document] = []
    warnings = 0

    if format == "jsonl":
        if not path.is_file():
            raise CorpusError(f"not a readable file: {path}")
        with open(path, "rb") as fh:
            for ordinal, raw in enumerate(fh):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    rec = json.loads(raw.decode("utf-8"))
                    text = rec["text"]
                    if not isinstance(text, str) or not text:
                        raise ValueError("empty or non-string text")
                except (ValueError, KeyError, UnicodeDecodeError):
                    warnings += 1
                    continue
                doc_id = str(rec.get("id", ordinal))
                docs.append(
                    Document(
                        id=doc_id,
                        text=text,
                        source_label=label,
                        token_count=len(tokenizer.tokenize(text)),
                    )
                )
    elif format == "plain-text-per-file":
        if not path.is_dir():
            raise CorpusError(f"not a readable directory: {path}")
        for fp in sorted(path.glob("*.txt")):
            try:
                text = fp.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError):
                warnings += 1
                continue
            if not text:
                warnings += 1
                continue
            docs.append(
                Document(
                    id=fp.stem,
                    text=text,
                    source_label=label,
                    token_count=len(tokenizer.tokenize(text)),
                )
            )
    else:
        raise CorpusError(f"unsupported format: {format!r}")

    if not docs:
        raise CorpusError(f"empty corpus at {path} (label {label!r})")
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise CorpusError(f"duplicate document ids in corpus {label!r}")

    return CorpusHandle(
        label=label,
        path=str(path),
        format=format,
        doc_count=len(docs),
        total_tokens=sum(d.token_count for d in docs),
        tokenizer_id=tokenizer.identifier,
        warning_count=warnings,
        documents=docs,
    )


def corpus_from_documents(label: str, docs: Sequence[Document], tokenizer_id: str) -> CorpusHandle:
    """In-memory handle for fixture corpora and generated exports."""
    if not docs:
        raise CorpusError(f"empty corpus (label {label!r})")
    return CorpusHandle(
        label=label,
        path="<memory>",
        format="memory",
        doc_count=len(docs),
        total_tokens=sum(d.token_count for d in docs),
        tokenizer_id=tokenizer_id,
        documents=list(docs),
    )


def mix(spec: MixtureSpec, corpora: Sequence[CorpusHandle]) -> MixtureManifest:
    """Materialize a mixture deterministically.

    Achieved fractions are reported against the token budget; the last
    selected document of a component may overshoot its sub-budget, so each
    achieved fraction deviates by at most (longest selected doc)/budget.
    """
    by_label = {c.label: c for c in corpora}
    tokenizer_ids = {c.tokenizer_id for c in corpora}
    if len(tokenizer_ids) != 1:
        raise MixtureError(f"corpora tokenized inconsistently: {tokenizer_ids}")
    tokenizer_id = tokenizer_ids.pop()

    selected: Dict[str, List[Document]] = {}
    for label, frac in spec.components:
        if label not in by_label:
            raise MixtureError(f"component label {label!r} not found")
        sub_budget = frac * spec.token_budget
        handle = by_label[label]
        if handle.total_tokens < sub_budget:
            raise MixtureError(
                f"component {label!r} has {handle.total_tokens} tokens, "
                f"needs {sub_budget:.0f}"
            )
        chosen: List[Document] = []
        if sub_budget > 0:
            rng = _component_rng(spec.seed, f"component:{label}")
            perm = rng.permutation(handle.doc_count)
            acc = 0
            for idx in perm:
                doc = handle.documents[int(idx)]
                chosen.append(doc)
                acc += doc.token_count
                if acc >= sub_budget:
                    break
        selected[label] = chosen

    union: List[Tuple[str, Document]] = [
        (label, doc) for label, _ in spec.components for doc in selected[label]
    ]
    rng = _component_rng(spec.seed, "shuffle")
    order = rng.permutation(len(union))
    global_order = [union[int(i)] for i in order]

    achieved = {
        label: sum(d.token_count for d in selected[label]) / spec.token_budget
        for label, _ in spec.components
    }

    hasher = hashlib.sha256()
    for _, doc in global_order:
        tokenizer = get_tokenizer(tokenizer_id)
        for tok in tokenizer.tokenize(doc.text):
            hasher.update(struct.pack("<Q", token_id(tok)))
        hasher.update(struct.pack("<Q", DOC_SEPARATOR_ID))

    return MixtureManifest(
        spec=spec,
        tokenizer_id=tokenizer_id,
        prng_id=PRNG_ID,
        selected_doc_ids={lbl: [d.id for d in docs] for lbl, docs in selected.items()},
        global_order=[(lbl, d.id) for lbl, d in global_order],
        achieved_fractions=achieved,
        output_digest=hasher.hexdigest(),
    )


def token_stream(
    manifest: MixtureManifest,
    corpora: Sequence[CorpusHandle],
    include_separators: bool = False,
) -> Iterator[str]:
    """Yield tokens in manifest order.

    Separator tokens mark document boundaries when requested; they are
    excluded by default so stream length equals the sum of selected
    document token counts.
    """
    by_label = {c.label: c for c in corpora}
    tokenizer = get_tokenizer(manifest.tokenizer_id)
    from .tokenize import DOC_SEPARATOR_TOKEN

    for label, doc_id in manifest.global_order:
        if label not in by_label:
            raise CorpusError(f"corpus {label!r} missing (manifest/corpus drift)")
        doc = by_label[label].doc_by_id(doc_id)
        yield from tokenizer.tokenize(doc.text)
        if include_separators:
            yield DOC_SEPARATOR_TOKEN
