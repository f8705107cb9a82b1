import logging
import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from enum import Enum

from app.errors import ConfigurationError, DatasetError

log = logging.getLogger("metrics")


class TextMode(Enum):
    GERMAN = "german"
    CHINESE = "chinese"


@dataclass
class ScoredPair:
    hypothesis: list
    references: list

    def __post_init__(self):
        if not self.references:
            raise DatasetError("A scored pair needs at least one reference")


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l_p: float
    rouge_l_r: float
    rouge_l_f: float
    corpus_size: int

    def to_dict(self) -> dict:
        return asdict(self)

    def render_table(self) -> str:
        header = f"{'B-1':>7} {'B-2':>7} {'B-3':>7} {'B-4':>7} {'R-L':>7}"
        values = (self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l_f)
        return header + "\n" + " ".join(f"{100 * v:7.2f}" for v in values)


# Dropped inside a word ("geht's" -> "gehts"); elsewhere they are punctuation
APOSTROPHES = "'’ʼ"


def _is_punctuation(char: str) -> bool:
    return unicodedata.category(char).startswith("P")


def normalize_text(text: str, mode="german") -> list[str]:
    """german: lowercase, drop in-word apostrophes, turn other Unicode P*
    characters into spaces, split on whitespace.
    chinese: one token per non-space character, punctuation kept."""
    mode = TextMode(mode) if not isinstance(mode, TextMode) else mode
    if mode is TextMode.GERMAN:
        lowered = text.lower()
        chars = []
        for i, c in enumerate(lowered):
            inside_word = 0 < i < len(lowered) - 1 and lowered[i - 1].isalnum() and lowered[i + 1].isalnum()
            if c in APOSTROPHES and inside_word:
                continue
            chars.append(" " if _is_punctuation(c) else c)
        return "".join(chars).split()
    return [c for c in text if not c.isspace()]


def _ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(hyp_len, references) -> int:
    return min((abs(len(r) - hyp_len), len(r)) for r in references)[1]


def bleu_n(corpus: list[ScoredPair], max_n=4) -> dict[int, float]:
    """Corpus BLEU-1..BLEU-max_n with clipped counts and closest-reference brevity penalty."""
    if not corpus:
        raise DatasetError("Cannot score an empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for pair in corpus:
        hyp = list(pair.hypothesis)
        hyp_len += len(hyp)
        ref_len += _closest_ref_length(len(hyp), pair.references)
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            max_ref = Counter()
            for ref in pair.references:
                max_ref |= _ngrams(list(ref), n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += sum(counts.values())

    if hyp_len == 0:
        return {n: 0.0 for n in range(1, max_n + 1)}
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    scores = {}
    for n in range(1, max_n + 1):
        head = precisions[:n]
        if min(head) == 0:
            scores[n] = 0.0
        else:
            scores[n] = bp * math.exp(sum(math.log(p) for p in head) / n)
    return scores


def lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b):
            row.append(prev[j] + 1 if x == y else max(prev[j + 1], row[j]))
        prev = row
    return prev[-1]


def rouge_l(pair: ScoredPair) -> tuple[float, float, float]:
    """(P, R, F) against the reference giving the best F."""
    best = (0.0, 0.0, 0.0)
    hyp = list(pair.hypothesis)
    if not hyp:
        return best
    for ref in pair.references:
        ref = list(ref)
        if not ref:
            raise DatasetError("Empty reference")
        lcs = lcs_length(hyp, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(hyp), lcs / len(ref)
        f = 2 * p * r / (p + r)
        if f > best[2]:
            best = (p, r, f)
    return best


def score_corpus(hypotheses: list[str], references: list, mode="german") -> MetricReport:
    """references[i] is a string or a list of alternative strings."""
    if len(hypotheses) != len(references):
        raise ConfigurationError(
            f"{len(hypotheses)} hypotheses but {len(references)} references"
        )
    corpus = [
        ScoredPair(
            normalize_text(h, mode),
            [normalize_text(r, mode) for r in ([refs] if isinstance(refs, str) else refs)],
        )
        for h, refs in zip(hypotheses, references)
    ]
    bleu = bleu_n(corpus)
    rouge = [rouge_l(pair) for pair in corpus]
    n = len(corpus)
    report = MetricReport(
        bleu1=bleu[1],
        bleu2=bleu[2],
        bleu3=bleu[3],
        bleu4=bleu[4],
        rouge_l_p=sum(r[0] for r in rouge) / n,
        rouge_l_r=sum(r[1] for r in rouge) / n,
        rouge_l_f=sum(r[2] for r in rouge) / n,
        corpus_size=n,
    )
    log.info(f"Scored {n} sentences: BLEU-4={100 * report.bleu4:.2f} ROUGE-L={100 * report.rouge_l_f:.2f}")
    return report
