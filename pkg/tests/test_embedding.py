import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from casetimelines.embedding import (EmbeddingVector, RemoteEmbedder, TrigramEmbedder,
                                     cosine_distance, trigrams)
from casetimelines.errors import DimensionMismatch, TransportError, ZeroVector


def test_trigram_determinism():
    e = TrigramEmbedder()
    a, b = e.embed(["fever and rash", "fever and rash"])
    np.testing.assert_array_equal(a.components, b.components)
    assert a.backend_tag == "trigram-fallback"


def test_single_trigram_one_hot():
    v = TrigramEmbedder().embed(["abc"])[0].components
    assert trigrams("abc") == {"abc": 1}
    assert np.count_nonzero(v) == 1 and v.max() == 1.0


def test_lowercased():
    e = TrigramEmbedder()
    np.testing.assert_array_equal(e.vector("Fever"), e.vector("fever"))


@given(st.text(min_size=1, max_size=50))
def test_never_zero_for_nonempty(text):
    v = TrigramEmbedder().vector(text)
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_cosine_anchors():
    u = np.array([1.0, 0.0])
    assert cosine_distance(u, u) == 0.0
    assert cosine_distance(u, np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert cosine_distance(u, -u) == pytest.approx(2.0)


def test_cosine_errors():
    with pytest.raises(ZeroVector):
        cosine_distance(np.zeros(2), np.ones(2))
    with pytest.raises(DimensionMismatch):
        cosine_distance(np.ones(2), np.ones(3))


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
       st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_cosine_range(u, v):
    u, v = np.array(u), np.array(v)
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    assert 0.0 <= cosine_distance(u, v) <= 2.0


class FakeResp:
    def __init__(self, status, doc):
        self.status_code, self._doc, self.text = status, doc, json.dumps(doc)

    def json(self):
        return self._doc


class FakeSession:
    def __init__(self, vectors, statuses=()):
        self.vectors = vectors
        self.statuses = list(statuses)
        self.batches = []

    def post(self, url, json=None, headers=None, timeout=None):
        if self.statuses:
            return FakeResp(self.statuses.pop(0), {"error": "x"})
        self.batches.append(json["input"])
        return FakeResp(200, {"data": [{"index": i, "embedding": self.vectors[t]}
                                       for i, t in enumerate(json["input"])]})


VECS = {"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [1.0, 1.0]}


def test_remote_batches_and_caches():
    s = FakeSession(VECS)
    e = RemoteEmbedder("https://emb.test", model="m", batch_size=2, session=s, backoff_base=0)
    out = e.embed(["a", "b", "c", "a"])
    assert [v.components.tolist() for v in out] == [VECS[t] for t in "abca"]
    assert s.batches == [["a", "b"], ["c"]]
    e.embed(["b"])
    assert len(s.batches) == 2
    assert out[0].backend_tag == "m"


def test_remote_retries_then_succeeds():
    s = FakeSession(VECS, statuses=[503])
    e = RemoteEmbedder("https://emb.test", session=s, backoff_base=0, max_retries=1)
    assert e.embed(["a"])[0].components.tolist() == VECS["a"]


def test_remote_gives_up_after_retries():
    s = FakeSession(VECS, statuses=[503, 503])
    e = RemoteEmbedder("https://emb.test", session=s, backoff_base=0, max_retries=1)
    with pytest.raises(TransportError):
        e.embed(["a"])


def test_remote_bad_shape_is_transport_error():
    s = FakeSession(VECS, statuses=[200])
    e = RemoteEmbedder("https://emb.test", session=s, backoff_base=0, max_retries=0)
    with pytest.raises(TransportError):
        e.embed(["a"])


def test_remote_requires_endpoint(monkeypatch):
    monkeypatch.delenv("CASETIMELINES_EMBED_ENDPOINT", raising=False)
    with pytest.raises(TransportError):
        RemoteEmbedder()


def test_embedding_vector_validation():
    with pytest.raises(ValueError):
        EmbeddingVector(np.array([]), "x")
