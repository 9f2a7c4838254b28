"""Unigram statistics: frequency tables, Zipf fits, smoothed KL-divergence,
coverage gaps, and rolling per-token loss averages."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

DEFAULT_KL_EPS = 0.5  # Jeffreys-style add-eps smoothing


class StatsError(Exception):
    pass


@dataclass
class UnigramTable:
    counts: Dict[str, int]
    total: int
    vocab_size: int
    corpus_label: str = ""

    @classmethod
    def from_counts(cls, counts: Dict[str, int], corpus_label: str = "") -> "UnigramTable":
        counts = {t: c for t, c in counts.items() if c > 0}
        return cls(
            counts=counts,
            total=sum(counts.values()),
            vocab_size=len(counts),
            corpus_label=corpus_label,
        )

    def merge(self, other: "UnigramTable") -> "UnigramTable":
        merged = Counter(self.counts)
        merged.update(other.counts)
        return UnigramTable.from_counts(dict(merged), self.corpus_label)


@dataclass(frozen=True)
class ZipfFit:
    exponent_s: float
    log_intercept: float
    r_squared: float
    rank_range: Tuple[int, int]


@dataclass(frozen=True)
class DivergenceReport:
    kl_nats: float
    smoothing_eps: float
    union_vocab: int
    test_only_tokens: int
    train_only_tokens: int


@dataclass(frozen=True)
class TokenLossRecord:
    position: int
    token: str
    loss_nats: float


@dataclass(frozen=True)
class CoverageGap:
    token: str
    test_frequency: float
    train_frequency: float
    ratio: float


def count_unigrams(stream: Iterable[str], corpus_label: str = "") -> UnigramTable:
    counts = Counter(stream)
    if not counts:
        raise StatsError("empty stream")
    return UnigramTable.from_counts(dict(counts), corpus_label)


def ranked_counts(table: UnigramTable) -> List[Tuple[str, int]]:
    """Tokens by descending count, ties broken lexicographically."""
    return sorted(table.counts.items(), key=lambda kv: (-kv[1], kv[0]))


def fit_zipf(table: UnigramTable, top_k: int | None = None) -> ZipfFit:
    """OLS of log(count) on log(rank) over ranks 1..top_k."""
    if top_k is None:
        top_k = min(10000, table.vocab_size)
    if top_k < 10:
        raise StatsError("need top_k >= 10 ranks to fit")
    if table.vocab_size < top_k:
        raise StatsError(f"vocab_size {table.vocab_size} < top_k {top_k}")
    ranked = ranked_counts(table)[:top_k]
    log_r = np.log(np.arange(1, top_k + 1, dtype=float))
    log_c = np.log(np.array([c for _, c in ranked], dtype=float))
    if np.ptp(log_c) == 0.0:
        raise StatsError("degenerate: zero variance in log-count")
    slope, intercept = np.polyfit(log_r, log_c, 1)
    pred = slope * log_r + intercept
    ss_res = float(np.sum((log_c - pred) ** 2))
    ss_tot = float(np.sum((log_c - log_c.mean()) ** 2))
    return ZipfFit(
        exponent_s=-float(slope),
        log_intercept=float(intercept),
        r_squared=1.0 - ss_res / ss_tot,
        rank_range=(1, top_k),
    )


def _smoothed(table: UnigramTable, vocab: Sequence[str], eps: float) -> np.ndarray:
    c = np.array([table.counts.get(t, 0) for t in vocab], dtype=float) + eps
    return c / c.sum()


def kl_divergence(
    test: UnigramTable, train: UnigramTable, eps: float = DEFAULT_KL_EPS
) -> DivergenceReport:
    """KL(test || train) in nats, add-eps smoothing over the union vocab."""
    if eps <= 0:
        raise StatsError("eps must be positive")
    if test.vocab_size == 0 and train.vocab_size == 0:
        raise StatsError("both tables empty")
    vocab = sorted(set(test.counts) | set(train.counts))
    p = _smoothed(test, vocab, eps)
    q = _smoothed(train, vocab, eps)
    kl = float(np.sum(p * np.log(p / q)))
    return DivergenceReport(
        kl_nats=max(kl, 0.0),
        smoothing_eps=eps,
        union_vocab=len(vocab),
        test_only_tokens=sum(1 for t in vocab if t not in train.counts),
        train_only_tokens=sum(1 for t in vocab if t not in test.counts),
    )


def coverage_gaps(
    test: UnigramTable,
    train: UnigramTable,
    min_test_freq: float,
    max_train_freq: float,
    eps: float = DEFAULT_KL_EPS,
) -> List[CoverageGap]:
    """Tokens frequent in test but rare/absent in train, by descending ratio."""
    if not (0 < min_test_freq < 1 and 0 < max_train_freq < 1):
        raise StatsError("thresholds must lie in (0,1)")
    vocab = sorted(set(test.counts) | set(train.counts))
    p = _smoothed(test, vocab, eps)
    q = _smoothed(train, vocab, eps)
    gaps = [
        CoverageGap(token=t, test_frequency=pi, train_frequency=qi, ratio=pi / qi)
        for t, pi, qi in zip(vocab, p, q)
        if pi >= min_test_freq and qi <= max_train_freq
    ]
    gaps.sort(key=lambda g: (-g.ratio, g.token))
    return gaps


def rolling_loss(
    records: Sequence[TokenLossRecord], window: int
) -> List[Tuple[int, float]]:
    """Centered moving average; windows shrink at the boundaries."""
    if window < 1:
        raise StatsError("window must be >= 1")
    if not records:
        raise StatsError("records empty")
    positions = [r.position for r in records]
    if any(b <= a for a, b in zip(positions, positions[1:])):
        raise StatsError("positions must be strictly increasing")
    losses = [r.loss_nats for r in records]
    n = len(losses)
    left = (window - 1) // 2
    right = window // 2
    out = []
    # plain left-to-right window sums: bit-for-bit reproducible against a
    # naive recomputation (a cumulative-sum difference is not)
    for i in range(n):
        lo = max(0, i - left)
        hi = min(n, i + right + 1)
        out.append((positions[i], sum(losses[lo:hi]) / (hi - lo)))
    return out


def load_loss_log(path: str | Path) -> List[TokenLossRecord]:
    """Read a per-token loss log (jsonl or CSV with header, by extension)."""
    path = Path(path)
    records: List[TokenLossRecord] = []
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    TokenLossRecord(
                        position=int(row["position"]),
                        token=row["token"],
                        loss_nats=float(row["loss"]),
                    )
                )
    else:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                records.append(
                    TokenLossRecord(
                        position=int(d["position"]),
                        token=str(d["token"]),
                        loss_nats=float(d["loss"]),
                    )
                )
    return records


def save_loss_log(records: Sequence[TokenLossRecord], path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if path.suffix == ".csv":
            writer = csv.writer(fh)
            writer.writerow(["position", "token", "loss"])
            for r in records:
                writer.writerow([r.position, r.token, repr(r.loss_nats)])
        else:
            for r in records:
                fh.write(
                    json.dumps(
                        {"position": r.position, "token": r.token, "loss": r.loss_nats}
                    )
                    + "\n"
                )
