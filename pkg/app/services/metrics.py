"""
Metrics Service - CIDEr (plain and CIDEr-D), corpus BLEU-4 and ROUGE-L.

Sentences are token lists; special tokens are stripped before scoring.
IDF is ln(M / df) over the reference corpus the table was built from.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from app.core.exceptions import UsageError

MAX_N = 4
SPECIAL_TOKENS = {"<pad>", "<bos>", "<eos>"}
CIDER_D_SIGMA = 6.0

NGram = Tuple[str, ...]


@dataclass(frozen=True)
class CaptionSet:
    video_id: str
    references: Tuple[Tuple[str, ...], ...]

    @classmethod
    def of(cls, video_id: str, references: Sequence[Sequence[str]]) -> "CaptionSet":
        refs = tuple(tuple(strip_special(r)) for r in references)
        if not refs or any(len(r) == 0 for r in refs):
            raise UsageError(f"{video_id}: every reference must be nonempty")
        return cls(video_id, refs)


@dataclass
class IdfTable:
    n_docs: int
    idf: Dict[int, Dict[NGram, float]] = field(default_factory=dict)

    def weight(self, gram: NGram) -> float:
        # unseen n-grams count as df = 1
        return self.idf.get(len(gram), {}).get(gram, math.log(self.n_docs))


def strip_special(tokens: Sequence[str]) -> List[str]:
    return [t for t in tokens if t not in SPECIAL_TOKENS]


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    if not 1 <= n <= MAX_N:
        raise UsageError(f"n-gram order {n} outside 1..{MAX_N}")
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# =============================================================================
# CIDEr
# =============================================================================

def build_idf(corpus: Sequence[CaptionSet]) -> IdfTable:
    if not corpus:
        raise UsageError("idf needs at least one video")
    table = IdfTable(n_docs=len(corpus))
    for n in range(1, MAX_N + 1):
        df: Counter = Counter()
        for caption_set in corpus:
            seen = set()
            for ref in caption_set.references:
                seen.update(ngram_counts(ref, n))
            df.update(seen)
        table.idf[n] = {g: math.log(table.n_docs / d) for g, d in df.items()}
    return table


def _tfidf(tokens: Sequence[str], n: int, idf: IdfTable, normalize_tf: bool) -> Dict[NGram, float]:
    counts = ngram_counts(tokens, n)
    total = sum(counts.values())
    if total == 0:
        return {}
    scale = 1.0 / total if normalize_tf else 1.0
    return {g: c * scale * idf.weight(g) for g, c in counts.items()}


def _norm(vec: Dict[NGram, float]) -> float:
    return math.sqrt(sum(x * x for x in vec.values()))


def cider(candidate: Sequence[str], refs: CaptionSet, idf: IdfTable, variant: str = "cider") -> float:
    """CIDEr in [0, 10]; ``variant="cider-d"`` adds clipping and the length penalty."""
    if variant not in ("cider", "cider-d"):
        raise UsageError(f"unknown CIDEr variant: {variant}")
    cand = strip_special(candidate)
    if not cand:
        return 0.0
    clipped = variant == "cider-d"
    per_order = []
    for n in range(1, MAX_N + 1):
        vc = _tfidf(cand, n, idf, normalize_tf=not clipped)
        nc = _norm(vc)
        sims = []
        for ref in refs.references:
            vr = _tfidf(ref, n, idf, normalize_tf=not clipped)
            nr = _norm(vr)
            if nc == 0.0 or nr == 0.0:
                sims.append(0.0)
                continue
            if clipped:
                dot = sum(min(w, vr[g]) * vr[g] for g, w in vc.items() if g in vr)
                delta = len(cand) - len(ref)
                penalty = math.exp(-(delta * delta) / (2.0 * CIDER_D_SIGMA ** 2))
            else:
                dot = sum(w * vr[g] for g, w in vc.items() if g in vr)
                penalty = 1.0
            sims.append(min(1.0, dot / (nc * nr)) * penalty)
        per_order.append(sum(sims) / len(sims))
    return 10.0 * sum(per_order) / MAX_N


def corpus_cider(candidates: Sequence[Sequence[str]], refsets: Sequence[CaptionSet],
                 idf: IdfTable, variant: str = "cider") -> Tuple[float, List[float]]:
    scores = [cider(c, r, idf, variant) for c, r in zip(candidates, refsets)]
    return (sum(scores) / len(scores) if scores else 0.0), scores


# =============================================================================
# BLEU-4
# =============================================================================

def bleu4(candidates: Sequence[Sequence[str]], refsets: Sequence[CaptionSet]) -> float:
    """Corpus BLEU, clipped counts, uniform weights, brevity penalty, no smoothing."""
    if len(candidates) != len(refsets):
        raise UsageError("candidates and reference sets are not aligned")
    matched = [0] * MAX_N
    possible = [0] * MAX_N
    cand_len = ref_len = 0
    for candidate, refs in zip(candidates, refsets):
        cand = strip_special(candidate)
        cand_len += len(cand)
        # closest reference length, ties to the shorter
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs.references)[1]
        for n in range(1, MAX_N + 1):
            counts = ngram_counts(cand, n)
            max_ref: Counter = Counter()
            for r in refs.references:
                max_ref |= ngram_counts(r, n)
            matched[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            possible[n - 1] += sum(counts.values())
    if cand_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_precision = sum(math.log(m / p) for m, p in zip(matched, possible)) / MAX_N
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision)


# =============================================================================
# ROUGE-L
# =============================================================================

def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], refs: CaptionSet, beta: float = 1.2) -> float:
    cand = strip_special(candidate)
    if not refs.references:
        raise UsageError("ROUGE-L needs at least one reference")
    best = 0.0
    for ref in refs.references:
        lcs = _lcs(cand, ref)
        if lcs == 0:
            continue
        precision, recall = lcs / len(cand), lcs / len(ref)
        f = ((1 + beta ** 2) * precision * recall) / (recall + beta ** 2 * precision)
        best = max(best, f)
    return best


def corpus_rouge_l(candidates: Sequence[Sequence[str]], refsets: Sequence[CaptionSet]) -> float:
    scores = [rouge_l(c, r) for c, r in zip(candidates, refsets)]
    return sum(scores) / len(scores) if scores else 0.0
