"""Interpolated n-gram language models used as a fast stand-in trainer.

Smoothing is absolute discounting with a fixed discount of 0.75,
interpolated down to a uniform distribution over the vocabulary plus one
reserved unknown symbol:

    p_k(w | h) = max(c(h,w) - d, 0) / c(h)
                 + (d * distinct(h) / c(h)) * p_{k-1}(w | h[1:])
    p_0(w)     = 1 / (vocab_size + 1)

Unseen contexts back off with full mass. The stored-entry count after
pruning plays the role of model size for scaling fits.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .stats import TokenLossRecord

DISCOUNT = 0.75
MODEL_MAGIC = b"SMNG"
MODEL_VERSION = 1


class SurrogateError(Exception):
    pass


@dataclass
class NGramModel:
    order: int
    discount: float
    vocab: Tuple[str, ...]
    # counts[k] maps context tuple (length k) -> {token: count}; k in 0..order-1
    counts: List[Dict[Tuple[str, ...], Dict[str, int]]] = field(repr=False, default_factory=list)
    parameter_count: int = 0

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def prob(self, token: str, context: Sequence[str]) -> float:
        """p(token | context) under the interpolated discounting recursion."""
        context = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        return self._prob(token, context, len(context))

    def _prob(self, token: str, context: Tuple[str, ...], k: int) -> float:
        if k < 0:
            return 1.0 / (self.vocab_size + 1)
        if len(context) >= k:
            table = self.counts[k].get(context[len(context) - k:])
        else:
            table = None
        lower = self._prob(token, context, k - 1)
        if not table:
            return lower
        total = sum(table.values())
        distinct = len(table)
        c = table.get(token, 0)
        return max(c - self.discount, 0.0) / total + (
            self.discount * distinct / total
        ) * lower

    def logprob(self, token: str, context: Sequence[str]) -> float:
        return math.log(self.prob(token, context))


@dataclass
class EvalResult:
    cross_entropy_nats_per_token: float
    token_count: int
    per_token_losses: Optional[List[TokenLossRecord]] = None


def train(
    stream: Iterable[str],
    order: int,
    prune_min_count: int = 1,
    discount: float = DISCOUNT,
) -> NGramModel:
    """Count n-grams up to `order` and prune high-order entries below
    `prune_min_count`. Unigram entries are never pruned, so the vocabulary
    is stable across pruning levels."""
    if order < 1:
        raise SurrogateError("order must be >= 1")
    if prune_min_count < 1:
        raise SurrogateError("prune_min_count must be >= 1")
    tokens = list(stream)
    if len(tokens) < order:
        raise SurrogateError(f"stream of {len(tokens)} tokens shorter than order {order}")

    raw: List[Counter] = [Counter() for _ in range(order)]
    for k in range(order):  # k = context length
        for i in range(k, len(tokens)):
            raw[k][(tuple(tokens[i - k:i]), tokens[i])] += 1

    counts: List[Dict[Tuple[str, ...], Dict[str, int]]] = []
    for k in range(order):
        table: Dict[Tuple[str, ...], Dict[str, int]] = {}
        for (ctx, tok), c in raw[k].items():
            if k > 0 and c < prune_min_count:
                continue
            table.setdefault(ctx, {})[tok] = c
        counts.append(table)

    vocab = tuple(sorted(counts[0].get((), {})))
    n_entries = sum(len(t) for table in counts for t in table.values())
    return NGramModel(
        order=order,
        discount=discount,
        vocab=vocab,
        counts=counts,
        parameter_count=n_entries,
    )


def evaluate(
    model: NGramModel, eval_stream: Iterable[str], emit_per_token: bool = False
) -> EvalResult:
    """Mean negative log probability in nats; OOV tokens score via the
    reserved unknown symbol (they never get zero probability)."""
    vocab = set(model.vocab)
    history: List[str] = []
    total = 0.0
    n = 0
    per_token: Optional[List[TokenLossRecord]] = [] if emit_per_token else None
    for tok in eval_stream:
        scored = tok if tok in vocab else "\x00<unk>"
        loss = -model.logprob(scored, history)
        total += loss
        if per_token is not None:
            per_token.append(TokenLossRecord(position=n, token=tok, loss_nats=loss))
        history.append(tok)
        if model.order > 1:
            history = history[-(model.order - 1):]
        else:
            history = []
        n += 1
    if n == 0:
        raise SurrogateError("empty eval stream")
    return EvalResult(
        cross_entropy_nats_per_token=total / n,
        token_count=n,
        per_token_losses=per_token,
    )


def save_model(model: NGramModel, path: str | Path) -> None:
    """Versioned binary container: fixed header + compressed JSON payload."""
    payload = json.dumps(
        {
            "vocab": list(model.vocab),
            "counts": [
                {"\x1f".join(ctx): table for ctx, table in level.items()}
                for level in model.counts
            ],
        }
    ).encode("utf-8")
    vocab_hash = zlib.crc32("\x1f".join(model.vocab).encode("utf-8"))
    header = MODEL_MAGIC + struct.pack(
        "<HHdIQ", MODEL_VERSION, model.order, model.discount, vocab_hash,
        model.parameter_count,
    )
    Path(path).write_bytes(header + zlib.compress(payload, 6))


def load_model(path: str | Path) -> NGramModel:
    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise SurrogateError("not a model file")
    version, order, discount, vocab_hash, parameter_count = struct.unpack(
        "<HHdIQ", blob[4:4 + struct.calcsize("<HHdIQ")]
    )
    if version != MODEL_VERSION:
        raise SurrogateError(f"unsupported model version {version}")
    payload = json.loads(zlib.decompress(blob[4 + struct.calcsize("<HHdIQ"):]))
    counts = [
        {
            tuple(ctx.split("\x1f")) if ctx else (): {t: int(c) for t, c in table.items()}
            for ctx, table in level.items()
        }
        for level in payload["counts"]
    ]
    model = NGramModel(
        order=order,
        discount=discount,
        vocab=tuple(payload["vocab"]),
        counts=counts,
        parameter_count=parameter_count,
    )
    actual_hash = zlib.crc32("\x1f".join(model.vocab).encode("utf-8"))
    if actual_hash != vocab_hash:
        raise SurrogateError("vocab hash mismatch")
    return model


def run_curve(
    mixture_specs,
    budgets: Sequence[int],
    orders_or_prunes: Sequence[Tuple[int, int]],
    eval_stream: Sequence[str],
    corpora,
    mixture_ids: Optional[Sequence[str]] = None,
):
    """Train/evaluate one surrogate per (mixture, budget, capacity).

    Budgets are nested: each mixture is materialized once at the largest
    budget and smaller budgets consume prefixes of the same stream, so the
    seed determines all of them jointly.
    """
    from . import corpus as corpus_mod
    from .scaling import RunRecord

    if list(budgets) != sorted(set(budgets)):
        raise SurrogateError("budgets must be strictly increasing")
    eval_tokens = list(eval_stream)
    records: List[RunRecord] = []
    for mi, spec in enumerate(mixture_specs):
        mixture_id = mixture_ids[mi] if mixture_ids else f"mixture-{mi}"
        full_spec = corpus_mod.MixtureSpec(
            components=spec.components, seed=spec.seed, token_budget=max(budgets)
        )
        manifest = corpus_mod.mix(full_spec, corpora)
        tokens = list(corpus_mod.token_stream(manifest, corpora))
        for budget in budgets:
            prefix = tokens[:budget]
            for order, prune in orders_or_prunes:
                model = train(prefix, order=order, prune_min_count=prune)
                result = evaluate(model, eval_tokens)
                records.append(
                    RunRecord(
                        mixture_id=mixture_id,
                        n_params=model.parameter_count,
                        d_tokens=budget,
                        loss_nats=result.cross_entropy_nats_per_token,
                    )
                )
    return records
