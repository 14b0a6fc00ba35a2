"""Consensus keyword extraction and release.

Words that keep reappearing across independently rewritten versions of a
prompt are treated as leakage signals: either they carry the meaning or they
are identifiers the rewriting failed to disguise. This module aggregates the
group into a word histogram and releases the top K entries, by pure
post-processing (free under the composition total) or through an epsilon-DP
top-K mechanism that charges its budget to the ledger.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .mechanisms import INFINITE_EPSILON, PrivacyLedger, Stage
from .normalization import tokenize
from .stopwords import DEFAULT_STOP_LIST_ID, stop_words

if TYPE_CHECKING:  # pragma: no cover
    from .rewriting import ParaphraseGroup


class ReleaseMethod(str, Enum):
    NDP = "NDP"  # post-processing release, no added budget
    DP = "DP"  # epsilon-DP top-K mechanism


def tokenize_normalize(text: str, stop_list_id: str = DEFAULT_STOP_LIST_ID) -> list[str]:
    """Whitespace split, punctuation strip, case fold, stop-word removal."""
    return tokenize(text, stop_words(stop_list_id))


@dataclass(frozen=True)
class KeywordHistogram:
    """Word -> occurrence count over a whole paraphrase group."""

    counts: Mapping[str, int]
    total_words: int
    stop_list_id: str = DEFAULT_STOP_LIST_ID
    normalization: tuple[str, ...] = ("whitespace-split", "strip-punctuation", "case-fold")

    def __post_init__(self) -> None:
        if sum(self.counts.values()) != self.total_words:
            raise ValueError("total_words must equal the sum of counts")
        stops = stop_words(self.stop_list_id)
        for word, count in self.counts.items():
            if not word:
                raise ValueError("histogram keys must be nonempty")
            if word in stops:
                raise ValueError(f"stop word {word!r} must not appear in the histogram")
            if count < 0:
                raise ValueError("counts must be nonnegative")

    def distinct_words(self) -> int:
        return len(self.counts)

    def to_json_dict(self) -> dict[str, int]:
        return dict(sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0])))


@dataclass(frozen=True)
class ReleasedKeywords:
    words: tuple[str, ...]
    method: ReleaseMethod
    epsilon: float  # INFINITE_EPSILON for NDP
    seed: int | None = None

    def __post_init__(self) -> None:
        if len(set(self.words)) != len(self.words):
            raise ValueError("released keywords must be distinct")

    def to_json_dict(self) -> dict:
        return {
            "words": list(self.words),
            "method": self.method.value,
            "epsilon": None if math.isinf(self.epsilon) else self.epsilon,
        }


def build_histogram(
    group: "ParaphraseGroup", stop_list_id: str = DEFAULT_STOP_LIST_ID
) -> KeywordHistogram:
    """Count word occurrences over every rewrite in the group.

    Counts accumulate globally across rewrites (every occurrence, not
    per-document presence); the original prompt is never counted.
    """
    counts: dict[str, int] = {}
    total = 0
    for rewrite in group.rewrites:
        for word in tokenize_normalize(rewrite.text, stop_list_id):
            counts[word] = counts.get(word, 0) + 1
            total += 1
    return KeywordHistogram(counts=counts, total_words=total, stop_list_id=stop_list_id)


def _ranked(counts: Mapping[str, int]) -> list[str]:
    # Descending count, ascending word as deterministic tie-break.
    return [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def topk_ndp(
    hist: KeywordHistogram, k: int, ledger: PrivacyLedger | None = None
) -> ReleasedKeywords:
    """Release the K highest-count words by post-processing (zero added budget)."""
    if k < 1:
        raise ValueError("k must be positive")
    if not hist.counts:
        warnings.warn("empty histogram: releasing no keywords", stacklevel=2)
    words = tuple(_ranked(hist.counts)[:k])
    if ledger is not None:
        ledger.record(Stage.POST_PROCESS, INFINITE_EPSILON, 1, "keyword release (NDP)")
    return ReleasedKeywords(words=words, method=ReleaseMethod.NDP, epsilon=INFINITE_EPSILON)


def _peel_step_probs(
    counts: Mapping[str, int], remaining: list[str], epsilon_per_draw: float
) -> np.ndarray:
    """Exponential-mechanism selection probabilities over the remaining words.

    Utility is the raw count with sensitivity 1, so scores are eps*c/2;
    max-subtraction keeps huge epsilons finite.
    """
    scores = np.array([epsilon_per_draw * counts[w] / 2.0 for w in remaining], dtype=np.float64)
    scores -= scores.max()
    weights = np.exp(scores)
    return weights / weights.sum()


def topk_dp(
    hist: KeywordHistogram,
    k: int,
    epsilon: float,
    rng: np.random.Generator,
    strategy: str = "peel",
    ledger: PrivacyLedger | None = None,
) -> ReleasedKeywords:
    """Release K distinct words under an epsilon-DP top-K mechanism.

    The default "peel" strategy runs K sequential exponential-mechanism draws
    without replacement, each with budget epsilon/K; the composed release is
    epsilon-DP for count sensitivity 1. The "joint" one-shot strategy is a
    reserved slot and raises until an implementation is wired in.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if k < 1:
        raise ValueError("k must be positive")
    if k > hist.distinct_words():
        raise ValueError(
            f"k={k} exceeds the {hist.distinct_words()} distinct words in the histogram"
        )
    if strategy == "joint":
        raise NotImplementedError(
            "joint one-shot top-K release is not available; use strategy='peel'"
        )
    if strategy != "peel":
        raise ValueError(f"unknown top-K strategy: {strategy!r}")

    eps_per_draw = epsilon / k
    remaining = sorted(hist.counts)
    chosen: list[str] = []
    for _ in range(k):
        probs = _peel_step_probs(hist.counts, remaining, eps_per_draw)
        idx = int(rng.choice(len(remaining), p=probs))
        chosen.append(remaining.pop(idx))
    if ledger is not None:
        ledger.record(Stage.KEYWORD_RELEASE, epsilon, 1, f"keyword release (peel, K={k})")
    return ReleasedKeywords(words=tuple(chosen), method=ReleaseMethod.DP, epsilon=epsilon)


def peel_sequence_distribution(
    counts: Mapping[str, int], k: int, epsilon: float
) -> dict[tuple[str, ...], float]:
    """Exact output-sequence distribution of the peel mechanism.

    Enumerates every ordered K-tuple the sampler in :func:`topk_dp` can emit,
    using the same per-draw probability rule; intended for audits and for
    verifying the e^epsilon neighboring bound by enumeration.
    """
    if k < 1 or k > len(counts):
        raise ValueError("k must be in [1, distinct words]")
    eps_per_draw = epsilon / k
    dist: dict[tuple[str, ...], float] = {}

    def descend(remaining: list[str], prefix: tuple[str, ...], prob: float) -> None:
        if len(prefix) == k:
            dist[prefix] = prob
            return
        probs = _peel_step_probs(counts, remaining, eps_per_draw)
        for i, word in enumerate(remaining):
            descend(remaining[:i] + remaining[i + 1 :], prefix + (word,), prob * float(probs[i]))

    descend(sorted(counts), (), 1.0)
    return dist
