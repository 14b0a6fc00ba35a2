"""Lowest-perplexity exemplar selection from a paraphrase group.

Selecting among already-released rewrites is post-processing, so the choice
costs nothing; the module only needs a total order over texts. The scorer is
injectable: any callable text -> positive float works. The bundled fallback
fits an add-one-smoothed unigram model on the whole group, which keeps the
toolkit runnable and exactly testable without language-model weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable

from .mechanisms import INFINITE_EPSILON, PrivacyLedger, Stage
from .normalization import tokenize

if TYPE_CHECKING:  # pragma: no cover
    from .rewriting import ParaphraseGroup

PerplexityScorer = Callable[[str], float]


class ScoringError(ValueError):
    pass


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoredParaphrase:
    index: int
    text: str
    perplexity: float

    def to_json_dict(self) -> dict:
        return {"index": self.index, "text": self.text, "perplexity": self.perplexity}


class UnigramPerplexityScorer:
    """Perplexity under an add-one-smoothed unigram model fit on the group.

    p(token) = (count + 1) / (total + |vocab|); perplexity is the exponential
    of the mean negative log-probability, hence always >= 1.
    """

    def __init__(self, group_texts: Iterable[str]) -> None:
        self.counts: dict[str, int] = {}
        self.total = 0
        for text in group_texts:
            for tok in tokenize(text):
                self.counts[tok] = self.counts.get(tok, 0) + 1
                self.total += 1

    def __call__(self, text: str) -> float:
        tokens = tokenize(text)
        if not tokens:
            raise ScoringError("cannot score an empty token stream")
        denom = self.total + len(self.counts)
        log_sum = 0.0
        for tok in tokens:
            log_sum += math.log((self.counts.get(tok, 0) + 1) / denom)
        return math.exp(-log_sum / len(tokens))


def score_perplexity(text: str, scorer: PerplexityScorer) -> float:
    tokens = tokenize(text)
    if not tokens:
        raise ScoringError("cannot score an empty token stream")
    return float(scorer(text))


def select_exemplar(
    group: "ParaphraseGroup",
    scorer: PerplexityScorer | None = None,
    ledger: PrivacyLedger | None = None,
) -> ScoredParaphrase:
    """Return the rewrite with minimal perplexity; ties go to the lowest index.

    Rewrites the scorer rejects are skipped; if nothing is scorable the
    selection fails. A zero-cost post-processing entry is appended when a
    ledger is supplied.
    """
    if not group.rewrites:
        raise SelectionError("cannot select from an empty group")
    if scorer is None:
        scorer = UnigramPerplexityScorer(r.text for r in group.rewrites)
    best: ScoredParaphrase | None = None
    for index, rewrite in enumerate(group.rewrites):
        try:
            ppl = score_perplexity(rewrite.text, scorer)
        except ScoringError:
            continue
        if best is None or ppl < best.perplexity:
            best = ScoredParaphrase(index=index, text=rewrite.text, perplexity=ppl)
    if best is None:
        raise SelectionError("no rewrite in the group was scorable")
    if ledger is not None:
        ledger.record(Stage.POST_PROCESS, INFINITE_EPSILON, 1, "exemplar selection")
    return best
