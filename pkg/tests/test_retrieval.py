import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embow import numerics, retrieval
from embow.errors import DegenerateInputError, UsageError
from embow.vocabulary import TargetVector, Vocabulary


def unit_rows(rng, v, dim):
    e = rng.normal(size=(v, dim))
    return (e / np.linalg.norm(e, axis=1, keepdims=True)).astype(np.float32)


class TestNaiveLogits:
    def test_matching_row_is_maximum(self):
        e = unit_rows(np.random.default_rng(0), 8, 16)
        logits = retrieval.naive_logits(e[3], e)
        assert logits[3] == pytest.approx(1.0, abs=1e-6)
        assert np.argmax(logits) == 3

    def test_orthogonal_input(self):
        e = np.eye(4, dtype=np.float32)[:3]
        logits = retrieval.naive_logits(np.array([0, 0, 0, 2.0], np.float32), e)
        np.testing.assert_allclose(logits, np.zeros(3), atol=1e-7)

    def test_tiny_hand_case(self):
        e = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], dtype=np.float64)
        logits = retrieval.naive_logits(np.array([2.0, 0.0]), e)
        np.testing.assert_allclose(logits, [1.0, 0.0, 1.0 / np.sqrt(2)], rtol=1e-12)

    def test_degenerate_input(self):
        with pytest.raises(DegenerateInputError):
            retrieval.naive_logits(np.zeros(4), np.eye(4))

    def test_same_kernel_as_refiner(self, monkeypatch):
        """Both retrieval paths must route through numerics.cosine_logits."""
        from embow import refiner

        calls = []
        original = numerics.cosine_logits

        def spy(z, e):
            calls.append(np.atleast_2d(z).shape)
            return original(z, e)

        monkeypatch.setattr(numerics, "cosine_logits", spy)
        rng = np.random.default_rng(1)
        e = unit_rows(rng, 5, 4)
        retrieval.naive_logits(rng.normal(size=4), e)
        params = refiner.init_params(0, dim=4, hidden=8)
        refiner.forward(params, rng.normal(size=4), e)
        assert len(calls) == 2


class TestTopKBow:
    def test_one_hot(self):
        logits = np.zeros(6)
        logits[4] = 0.9
        bow = retrieval.top_k_bow(logits, [f"t{i}" for i in range(6)], k=1)
        assert bow.entries == [("t4", 0.9)]

    def test_all_equal_takes_lowest_indices(self):
        bow = retrieval.top_k_bow(np.full(6, 0.5), [f"t{i}" for i in range(6)], k=3)
        assert bow.tokens == ["t0", "t1", "t2"]

    def test_tie_hand_case(self):
        bow = retrieval.top_k_bow(np.array([0.9, 0.1, 0.8, 0.9]), ["a", "b", "c", "d"], k=2)
        assert bow.tokens == ["a", "d"]

    def test_k_exceeding_vocab_clamps_with_flag(self, caplog):
        with caplog.at_level("WARNING"):
            bow = retrieval.top_k_bow(np.array([0.3, 0.1]), ["a", "b"], k=15)
        assert len(bow) == 2 and bow.clamped
        assert any("clamping" in r.message for r in caplog.records)

    def test_scores_non_increasing_always(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            logits = rng.uniform(-1, 1, size=30)
            bow = retrieval.top_k_bow(logits, [f"t{i}" for i in range(30)], k=15)
            scores = [s for _, s in bow.entries]
            assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_requires_positive_k(self):
        with pytest.raises(UsageError):
            retrieval.top_k_bow(np.ones(3), ["a", "b", "c"], k=0)

    def test_works_with_vocabulary_object(self):
        vocab = Vocabulary.from_tokens(["a", "b", "c"])
        bow = retrieval.top_k_bow(np.array([0.1, 0.5, 0.3]), vocab, k=2)
        assert bow.tokens == ["b", "c"]


def brute_force_top_k(logits, tokens, k):
    """Independent oracle: sort by (-score, vocabulary index), take k."""
    order = sorted(range(len(tokens)), key=lambda i: (-logits[i], i))[:k]
    return [(tokens[i], float(np.clip(logits[i], -1, 1))) for i in order]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_top_k_matches_brute_force_oracle_under_ties(seed):
    """The selection is a pure function of (score, index) with the index
    tie-break; evaluation order and tie multiplicity never matter."""
    rng = np.random.default_rng(seed)
    v = 12
    logits = rng.choice([0.1, 0.5, 0.9], size=v)  # plenty of exact ties
    tokens = [f"t{i:02d}" for i in range(v)]
    base = retrieval.top_k_bow(logits, tokens, k=5)
    assert base.entries == brute_force_top_k(logits, tokens, 5)
    # re-evaluation is identical, and equal-score value swaps are no-ops
    perm_within_ties = logits.copy()
    for value in (0.1, 0.5, 0.9):
        idx = np.flatnonzero(logits == value)
        perm_within_ties[rng.permutation(idx)] = value
    again = retrieval.top_k_bow(perm_within_ties, tokens, k=5)
    assert base.entries == again.entries


class TestBagOfWords:
    def test_invariants_enforced(self):
        with pytest.raises(UsageError):
            retrieval.BagOfWords(entries=[("a", 0.2), ("b", 0.5)])  # increasing
        with pytest.raises(UsageError):
            retrieval.BagOfWords(entries=[("a", 0.5), ("a", 0.2)])  # duplicate
        with pytest.raises(UsageError):
            retrieval.BagOfWords(entries=[("a", 1.5)])  # out of range

    def test_json_round_trip(self):
        bow = retrieval.BagOfWords(entries=[("piano", 0.8121), ("black", 0.7040)])
        again = retrieval.BagOfWords.from_json(bow.to_json())
        assert again.entries == bow.entries


class TestRetrievalMetrics:
    def target(self, v, positives):
        bits = np.zeros(v, dtype=np.uint8)
        bits[list(positives)] = 1
        return TargetVector(bits=bits)

    def test_all_positives_found(self):
        got = retrieval.retrieval_metrics(set(range(15)), self.target(30, range(5)), k=15)
        assert got == (pytest.approx(5 / 15), pytest.approx(1.0))

    def test_disjoint(self):
        got = retrieval.retrieval_metrics({10, 11}, self.target(30, {1, 2}), k=15)
        assert got == (0.0, 0.0)

    def test_three_of_five(self):
        got = retrieval.retrieval_metrics(
            {0, 1, 2, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 19, 18},
            self.target(30, {0, 1, 2, 3, 4}), k=15)
        assert got == (pytest.approx(0.2), pytest.approx(0.6))

    def test_no_positives_excluded(self):
        assert retrieval.retrieval_metrics({1, 2}, self.target(10, set()), k=15) is None

    def test_too_many_indices(self):
        with pytest.raises(UsageError):
            retrieval.retrieval_metrics(set(range(16)), self.target(30, {0}), k=15)
