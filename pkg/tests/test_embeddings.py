import numpy as np
import pytest

from copydst.autodiff import ContractError
from copydst.embeddings import (
    PAD, EmbeddingConfig, EmbeddingFormatError, EmbeddingTable, Vocabulary,
    char_ngrams, hashed_vector, load_word_vectors, tokenize,
)


@pytest.mark.parametrize(
    "text,tokens",
    [
        ("I want Thai food!", ["i", "want", "thai", "food"]),
        ("don't, please", ["don't", "please"]),
        ("North-American", ["north", "american"]),
        ("  ", []),
        ("modern_european", ["modern", "european"]),
    ],
)
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_vocabulary_pad_is_zero():
    v = Vocabulary(["a", "b", "a"])
    assert v.index(PAD) == 0
    assert v.itos == [PAD, "a", "b"]
    assert len(v) == 3


def _write(tmp_path, text):
    p = tmp_path / "vecs.txt"
    p.write_text(text, encoding="utf-8")
    return p


def test_load_word_vectors_counts_and_last_duplicate_wins(tmp_path):
    p = _write(tmp_path, "thai 1 2 3\nfood 0 0 1\n\nthai 4 5 6\n")
    wv = load_word_vectors(p, 3)
    assert wv.loaded == 2
    assert wv.duplicates == 1
    np.testing.assert_array_equal(wv.vectors["thai"], [4, 5, 6])


def test_load_word_vectors_wrong_width_names_line(tmp_path):
    p = _write(tmp_path, "thai 1 2 3\nfood 1 2\n")
    with pytest.raises(EmbeddingFormatError) as exc:
        load_word_vectors(p, 3)
    assert exc.value.lineno == 2
    assert ":2:" in str(exc.value)


def test_load_word_vectors_skip_malformed(tmp_path):
    p = _write(tmp_path, "thai 1 2 3\nfood 1 x 3\nbad 1\n")
    wv = load_word_vectors(p, 3, skip_malformed=True)
    assert wv.loaded == 1 and wv.malformed == 2


def test_char_ngrams():
    assert char_ngrams("ab") == ["<ab", "ab>", "<ab>"]
    assert char_ngrams("thai")[:3] == ["<th", "tha", "hai"]


def test_hashed_vector_deterministic_and_scaled():
    a = hashed_vector("burmese", 50, "n0", 0.1)
    b = hashed_vector("burmese", 50, "n0", 0.1)
    assert np.array_equal(a, b)
    assert a.sum() == pytest.approx(0.1)
    assert np.all(a >= 0)


def test_distinct_tokens_rarely_collide():
    rng = np.random.default_rng(0)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    tokens = {"".join(rng.choice(letters, size=rng.integers(3, 10))) for _ in range(10000)}
    cfg = EmbeddingConfig(word_dim=32, ngram_dim=32, hash_scale=1.0)
    table = EmbeddingTable(cfg)
    seen = {}
    for tok in tokens:
        key = table.embed_token(tok).tobytes()
        assert key not in seen, f"{tok!r} collides with {seen[key]!r}"
        seen[key] = tok


def test_embed_token_total_and_cached():
    table = EmbeddingTable(EmbeddingConfig(8, 4, 0.1))
    for tok in ["", "ü", "日本", "<pad>", "x" * 200]:
        v = table.embed_token(tok)
        assert v.shape == (12,) and np.all(np.isfinite(v))
    assert table.embed_token("thai") is table.embed_token("thai")
    with pytest.raises(ValueError):
        table.embed_token("thai")[0] = 1.0


def test_pretrained_word_part_used_when_present(tmp_path):
    p = _write(tmp_path, "thai 1 2\n")
    cfg = EmbeddingConfig(word_dim=2, ngram_dim=3, hash_scale=0.1)
    table = EmbeddingTable.from_word_vectors(load_word_vectors(p, 2), cfg)
    v = table.embed_token("thai")
    np.testing.assert_array_equal(v[:2], [1, 2])
    np.testing.assert_array_equal(v[2:], hashed_vector("thai", 3, "n0", 0.1))
    w = table.embed_token("lao")
    np.testing.assert_array_equal(w[:2], hashed_vector("lao", 2, "w0", 0.1))


def test_embed_value_sums_tokens_and_is_order_invariant():
    table = EmbeddingTable(EmbeddingConfig(6, 6, 1.0))
    assert np.array_equal(table.embed_value("italian"), table.embed_token("italian"))
    np.testing.assert_allclose(
        table.embed_value("north american"),
        table.embed_token("north") + table.embed_token("american"),
        rtol=0, atol=0,
    )
    np.testing.assert_array_equal(table.embed_value("a b"), table.embed_value("b a"))


def test_embed_value_without_tokens():
    table = EmbeddingTable(EmbeddingConfig(4, 4))
    with pytest.raises(ContractError):
        table.embed_value("!!")


def test_default_dims():
    assert EmbeddingConfig().dim == 400
