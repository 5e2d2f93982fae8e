import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chatrecall.vectors import EmbedError, HashingEmbedder, HttpEmbedder, VectorIndex, cosine, imbue_metadata_text


def test_hashing_embedder_is_deterministic_and_seeded():
    a, b = HashingEmbedder(seed=1), HashingEmbedder(seed=1)
    assert np.array_equal(a.embed("video games with my partner"), b.embed("video games with my partner"))
    assert not np.array_equal(a.embed("video games"), HashingEmbedder(seed=2).embed("video games"))


def test_hashing_embedder_shared_words_score_higher():
    e = HashingEmbedder()
    q = e.embed("what video game did you play")
    near = e.embed("I played a video game with my partner")
    far = e.embed("the sourdough starter needs feeding")
    assert cosine(q, near) > cosine(q, far)


def test_embed_empty_text_fails():
    with pytest.raises(EmbedError):
        HashingEmbedder().embed("   ")
    with pytest.raises(EmbedError):
        HashingEmbedder().embed("!!!")


def test_top_k_orders_by_cosine_and_breaks_ties_by_index():
    vecs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.6, 0.8]])
    index = VectorIndex([3, 1, 2, 0], vecs)
    hits = index.top_k(np.array([1.0, 0.0]), k=3)
    # ids 3 and 2 tie exactly; the lower id wins
    assert [h[0] for h in hits] == [2, 3, 0]


def test_top_k_respects_candidates_and_k():
    index = VectorIndex([0, 1, 2], np.eye(3))
    assert [i for i, _ in index.top_k(np.array([1.0, 1.0, 1.0]), [2, 1], k=10)] == [1, 2]
    assert index.top_k(np.array([1.0, 0, 0]), [], k=10) == []
    with pytest.raises(IndexError):
        index.top_k(np.array([1.0, 0, 0]), [7])
    with pytest.raises(ValueError):
        index.top_k(np.array([1.0, 0, 0]), k=0)


def test_index_rejects_bad_input():
    with pytest.raises(ValueError):
        VectorIndex([0, 0], np.eye(2))
    with pytest.raises(ValueError):
        VectorIndex([0, 1], np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_index_save_load(tmp_path):
    e = HashingEmbedder(dim=32)
    index = VectorIndex.build([5, 7, 9], ["alpha beta", "beta gamma", "gamma delta"], e)
    path = tmp_path / "idx.bin"
    index.save(path)
    loaded = VectorIndex.load(path)
    q = e.embed("beta")
    assert loaded.top_k(q, k=3) == index.top_k(q, k=3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4), min_size=1, max_size=30),
       st.integers(1, 40))
def test_top_k_matches_brute_force(rows, k):
    vecs = np.array(rows) + 1e-3  # keep norms away from zero
    ids = list(range(len(rows)))
    index = VectorIndex(ids, vecs)
    q = np.array([0.3, -0.2, 0.9, 0.1])
    got = [i for i, _ in index.top_k(q, k=k)]
    scores = [cosine(q, v) for v in vecs]
    expected = sorted(ids, key=lambda i: (-round(scores[i], 12), i))[:k]
    assert got == expected


def test_imbued_text_carries_metadata(small_conv):
    text = imbue_metadata_text(small_conv.responses[4])
    assert text.startswith("On Friday, January 27, 2023 at 14:00 (session 2), Jolene said:")


def test_http_embedder_parses_openai_shape():
    import httpx

    def handler(request):
        return httpx.Response(200, json={"data": [{"embedding": [1.0, 2.0]}, {"embedding": [3.0, 4.0]}]})

    e = HttpEmbedder("http://embed.test/v1/embeddings", client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert e.embed_many(["a", "b"]).tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_http_embedder_raises_after_retry():
    import httpx

    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    e = HttpEmbedder("http://embed.test", retries=1, client=httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(EmbedError) as info:
        e.embed("x")
    assert info.value.retries == 1 and len(calls) == 2
