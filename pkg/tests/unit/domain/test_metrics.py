import itertools
import math
import random

import pytest

from app.domain.metrics import (
    ScoredPair,
    bleu_n,
    lcs_length,
    normalize_text,
    rouge_l,
    score_corpus,
)
from app.errors import ConfigurationError, DatasetError


def brute_lcs(a, b):
    def is_subsequence(sub, seq):
        it = iter(seq)
        return all(x in it for x in sub)

    for k in range(len(a), 0, -1):
        if any(is_subsequence(sub, b) for sub in itertools.combinations(a, k)):
            return k
    return 0


def brute_bleu(corpus, max_n=4):
    hyp_len = sum(len(hyp) for hyp, _ in corpus)
    ref_len = 0
    for hyp, refs in corpus:
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
    if hyp_len == 0:
        return {n: 0.0 for n in range(1, max_n + 1)}
    precisions = []
    for n in range(1, max_n + 1):
        matched = total = 0
        for hyp, refs in corpus:
            grams = [tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1)]
            total += len(grams)
            for gram in set(grams):
                in_refs = max(
                    sum(1 for i in range(len(r) - n + 1) if tuple(r[i : i + n]) == gram) for r in refs
                )
                matched += min(grams.count(gram), in_refs)
        precisions.append(matched / total if total else 0.0)
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return {
        n: 0.0 if 0.0 in precisions[:n] else bp * math.prod(precisions[:n]) ** (1 / n)
        for n in range(1, max_n + 1)
    }


def brute_rouge_f(hyp, refs):
    best = 0.0
    for ref in refs:
        lcs = brute_lcs(hyp, ref)
        if lcs:
            p, r = lcs / len(hyp), lcs / len(ref)
            best = max(best, 2 * p * r / (p + r))
    return best


def random_corpus(rng, size, alphabet="abcd", max_len=8):
    """(hypothesis, references) pairs; hypotheses may be empty, references never."""

    def words(min_len):
        return [rng.choice(alphabet) for _ in range(rng.randrange(min_len, max_len + 1))]

    return [(words(0), [words(1) for _ in range(rng.randrange(1, 4))]) for _ in range(size)]


def test_normalize_german():
    assert normalize_text("Guten Tag!") == ["guten", "tag"]
    assert normalize_text("„Hallo“, sagte sie.") == ["hallo", "sagte", "sie"]
    assert normalize_text("   ") == []


def test_normalize_german_apostrophes():
    assert normalize_text("Wie geht's?") == ["wie", "gehts"]
    assert normalize_text("Don’t stop") == ["dont", "stop"]
    assert normalize_text("'zitiert'") == ["zitiert"]
    assert normalize_text(normalize_text("Wie geht's?")[1]) == ["gehts"]


def test_normalize_chinese():
    assert normalize_text("我 爱你。", "chinese") == ["我", "爱", "你", "。"]


def test_normalize_unknown_mode():
    with pytest.raises(ValueError):
        normalize_text("hallo", "klingon")


def test_bleu_identity():
    sentence = "morgen wird das wetter schoen".split()
    scores = bleu_n([ScoredPair(sentence, [sentence])])
    assert scores == {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0}


def test_bleu_clips_repeated_unigrams():
    scores = bleu_n([ScoredPair(["a", "a", "a"], [["a", "b"]])])
    assert scores[1] == pytest.approx(1 / 3)
    assert scores[2] == 0.0


def test_bleu_brevity_penalty():
    scores = bleu_n([ScoredPair(["a", "b"], [["a", "b", "c", "d"]])])
    assert scores[1] == pytest.approx(math.exp(-1))


def test_bleu_uses_closest_reference_length():
    hyp = ["a", "b", "c"]
    scores = bleu_n([ScoredPair(hyp, [["a", "b", "c", "d", "e", "f"], ["a", "b", "c"]])])
    assert scores[1] == 1.0


def test_bleu_empty_hypothesis_and_corpus():
    assert bleu_n([ScoredPair([], [["a"]])]) == {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
    with pytest.raises(DatasetError):
        bleu_n([])
    with pytest.raises(DatasetError):
        ScoredPair(["a"], [])


def test_rouge_l_oracle():
    p, r, f = rouge_l(ScoredPair(["a", "b", "c"], [["a", "c"]]))
    assert (p, r) == (pytest.approx(2 / 3), 1.0)
    assert f == pytest.approx(0.8)


def test_rouge_l_picks_best_reference():
    _, _, f = rouge_l(ScoredPair(["a", "b"], [["x", "y"], ["a", "b"]]))
    assert f == 1.0
    assert rouge_l(ScoredPair(["a"], [["b"]])) == (0.0, 0.0, 0.0)


def test_lcs_matches_enumeration():
    rng = random.Random(0)
    for _ in range(200):
        a = [rng.randrange(3) for _ in range(rng.randrange(11))]
        b = [rng.randrange(3) for _ in range(rng.randrange(11))]
        assert lcs_length(a, b) == brute_lcs(a, b)


def test_lcs_edge_cases():
    x = list("abcdefghij")
    assert lcs_length(x, x) == 10
    assert lcs_length(x, x[::-1]) == 1
    assert lcs_length([], x) == 0


def test_bleu_matches_counting_oracle():
    rng = random.Random(3)
    for _ in range(500):
        corpus = random_corpus(rng, rng.randrange(1, 5))
        scores = bleu_n([ScoredPair(hyp, refs) for hyp, refs in corpus])
        expected = brute_bleu(corpus)
        for n in range(1, 5):
            assert scores[n] == pytest.approx(expected[n], abs=1e-9)


def test_rouge_l_matches_enumeration_oracle():
    rng = random.Random(4)
    for _ in range(500):
        for hyp, refs in random_corpus(rng, 2):
            assert rouge_l(ScoredPair(hyp, refs))[2] == pytest.approx(brute_rouge_f(hyp, refs), abs=1e-9)


def test_rouge_l_zero_exactly_without_common_subsequence():
    rng = random.Random(5)
    for _ in range(1000):
        for hyp, refs in random_corpus(rng, 1, alphabet="abcdefgh", max_len=3):
            no_overlap = max(lcs_length(hyp, ref) for ref in refs) == 0
            assert (rouge_l(ScoredPair(hyp, refs))[2] == 0.0) == no_overlap


def test_bleu_orders_decrease_on_random_text():
    rng = random.Random(6)
    checked = 0
    for _ in range(200):
        corpus = [
            ScoredPair(
                [rng.choice("abc") for _ in range(rng.randrange(6, 11))],
                [[rng.choice("abc") for _ in range(rng.randrange(6, 11))]],
            )
            for _ in range(10)
        ]
        scores = bleu_n(corpus)
        if scores[4] == 0.0:
            continue
        checked += 1
        assert scores[1] >= scores[2] >= scores[3] >= scores[4]
    assert checked >= 100


def test_scores_invariant_to_relabelling():
    rng = random.Random(1)
    words = ["ich", "bin", "froh", "traurig", "heute", "sehr"]
    relabel = dict(zip(words, ["w1", "w2", "w3", "w4", "w5", "w6"]))
    hyps = [" ".join(rng.choice(words) for _ in range(rng.randrange(1, 7))) for _ in range(10)]
    refs = [" ".join(rng.choice(words) for _ in range(rng.randrange(1, 7))) for _ in range(10)]
    plain = score_corpus(hyps, refs)
    mapped = score_corpus(
        [" ".join(relabel[w] for w in h.split()) for h in hyps],
        [" ".join(relabel[w] for w in r.split()) for r in refs],
    )
    assert plain.to_dict() == mapped.to_dict()


def test_scores_are_bounded():
    rng = random.Random(2)
    for _ in range(1000):
        hyps = [" ".join(rng.choice("abcd") for _ in range(rng.randrange(0, 6))) for _ in range(4)]
        refs = [" ".join(rng.choice("abcd") for _ in range(rng.randrange(1, 6))) for _ in range(4)]
        scores = score_corpus(hyps, refs).to_dict()
        scores.pop("corpus_size")
        assert all(0.0 <= value <= 1.0 for value in scores.values())


def test_score_corpus_multi_reference_and_table():
    report = score_corpus(["ich bin heute sehr froh"], [["ich bin froh", "ich bin heute sehr froh"]])
    assert report.bleu4 == 1.0
    assert report.corpus_size == 1
    table = report.render_table()
    assert "B-4" in table
    assert "100.00" in table


def test_score_corpus_length_mismatch():
    with pytest.raises(ConfigurationError):
        score_corpus(["a"], ["a", "b"])
