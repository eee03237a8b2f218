import math
from functools import partial

import numpy as np
import pytest
from sklearn.feature_extraction.text import TfidfVectorizer

from simulation.config import with_overrides
from simulation.errors import ConfigValidationError, CorruptArtifactError, VocabularyError
from simulation.featurize import (
    Vocabulary,
    corpus_matrix,
    fit_vocabulary,
    tfidf_matrix,
    tfidf_vectorize,
    tokenize,
)
from tests.helpers import make_config, make_split


@pytest.fixture
def cfg(tmp_path):
    return make_config(tmp_path)


class TestTokenize:
    @pytest.mark.parametrize("text, order, expected", [
        ("It's good!", 1, ["it", "s", "good"]),
        ("a b", 2, ["a", "b", "a b"]),
        ("", 1, []),
        ("x y z", 3, ["x", "y", "z", "x y", "y z", "x y z"]),
        ("snake_case ÄÖ", 1, ["snake", "case", "äö"]),
    ])
    def test_examples(self, text, order, expected):
        assert tokenize(text, order) == expected

    def test_order_out_of_range(self):
        with pytest.raises(ValueError):
            tokenize("a", 4)


class TestFitVocabulary:
    def test_document_frequencies(self, cfg):
        vocab = fit_vocabulary(["a b", "a"], cfg)
        assert vocab.terms == ("a", "b")
        assert vocab.document_frequency == (2, 1)
        assert vocab.document_count == 2

    def test_cap_keeps_most_frequent(self, cfg):
        vocab = fit_vocabulary(["a b", "a"], with_overrides(cfg, ["trainer.vocabulary_cap=1"]))
        assert vocab.terms == ("a",)

    def test_ties_broken_lexicographically(self, cfg):
        vocab = fit_vocabulary(["c b a", "b c"], cfg)
        assert vocab.terms == ("b", "c", "a")

    def test_cap_zero_rejected(self, cfg):
        with pytest.raises(ConfigValidationError, match="vocabulary_cap"):
            with_overrides(cfg, ["trainer.vocabulary_cap=0"])

    def test_empty_documents(self, cfg):
        with pytest.raises(VocabularyError):
            fit_vocabulary([], cfg)

    def test_counts_documents_not_tokens(self, cfg):
        vocab = fit_vocabulary(["a a a", "b"], cfg)
        assert dict(zip(vocab.terms, vocab.document_frequency)) == {"a": 1, "b": 1}

    def test_persisted_form(self, cfg):
        vocab = fit_vocabulary(["a b", "a"], cfg)
        assert Vocabulary.decode(vocab.encode()) == vocab
        with pytest.raises(CorruptArtifactError):
            Vocabulary.decode(b"# documents=2 ngram_order=1\na\t1\t2\n")


class TestTfidf:
    def test_no_known_tokens(self, cfg):
        vector = tfidf_vectorize("zzz", fit_vocabulary(["a b"], cfg))
        assert len(vector) == 0
        assert vector.norm() == 0.0

    def test_idf_of_ubiquitous_term(self, cfg):
        vocab = fit_vocabulary(["a b", "a"], cfg)
        assert vocab.idf()[vocab.index["a"]] == 1.0

    def test_weight_table(self, cfg):
        docs = ["apple banana apple", "banana cherry", "cherry cherry durian"]
        vocab = fit_vocabulary(docs, cfg)
        n = 3
        df = {"apple": 1, "banana": 2, "cherry": 2, "durian": 1}
        for doc in docs:
            counts = {}
            for token in doc.split():
                counts[token] = counts.get(token, 0) + 1
            raw = {t: c * (1 + math.log((1 + n) / (1 + df[t]))) for t, c in counts.items()}
            norm = math.sqrt(sum(w * w for w in raw.values()))
            vector = tfidf_vectorize(doc, vocab)
            got = {vocab.terms[i]: w for i, w in zip(vector.indices, vector.weights)}
            assert set(got) == set(raw)
            for term, weight in raw.items():
                assert got[term] == pytest.approx(weight / norm, abs=1e-12)

    def test_norm_is_zero_or_one(self, split, small_cfg):
        vocab = fit_vocabulary(split.train, small_cfg)
        for doc in split.documents():
            norm = tfidf_vectorize(doc, vocab).norm()
            assert abs(norm - 1.0) < 1e-12 or norm == 0.0

    def test_indices_sorted_without_zeros(self, split, small_cfg):
        vocab = fit_vocabulary(split.train, small_cfg)
        vector = tfidf_vectorize(split.train[0], vocab)
        assert np.all(np.diff(vector.indices) > 0)
        assert np.all(vector.weights != 0)

    def test_bag_semantics(self, cfg):
        vocab = fit_vocabulary(["a b c", "a"], cfg)
        one = tfidf_vectorize("a b c a", vocab)
        two = tfidf_vectorize("c a a b", vocab)
        np.testing.assert_array_equal(one.indices, two.indices)
        np.testing.assert_array_equal(one.weights, two.weights)

    def test_matrix_rows_match_vectors(self, split, small_cfg):
        vocab = fit_vocabulary(split.train, small_cfg)
        matrix = tfidf_matrix(split.train, vocab)
        for row, doc in enumerate(split.train[:10]):
            expected = tfidf_vectorize(doc, vocab).to_dense(len(vocab))
            np.testing.assert_array_equal(matrix[row].toarray().ravel(), expected)

    def test_corpus_matrix_is_id_indexed(self, cfg):
        split = make_split([("b", 0)], dev=[("a", 1)])
        vocab = fit_vocabulary(["a b"], cfg)
        matrix = corpus_matrix(list(reversed(split.documents())), vocab)
        assert matrix[0, vocab.index["b"]] == pytest.approx(1.0)
        assert matrix[1, vocab.index["a"]] == pytest.approx(1.0)

    def test_matches_a_fitted_sklearn_vectorizer(self, split, small_cfg):
        vocab = fit_vocabulary(split.train, small_cfg)
        reference = TfidfVectorizer(
            tokenizer=partial(tokenize, ngram_order=1),
            lowercase=False,
            token_pattern=None,
            vocabulary=vocab.index,
            smooth_idf=True,
            norm="l2",
        ).fit([doc.text for doc in split.train])
        np.testing.assert_allclose(vocab.idf(), reference.idf_, rtol=1e-12)
        expected = reference.transform([doc.text for doc in split.test]).toarray()
        np.testing.assert_allclose(tfidf_matrix(split.test, vocab).toarray(), expected, atol=1e-12)
