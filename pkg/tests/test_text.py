import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drex.text import (STOPWORDS, EmbeddingFormatError, EmbeddingProvider, Vocab, embed, fnv1a_64,
                       lemmatize, load_embedding_file, load_stopwords, normalize, write_embedding_file)


def test_normalize_examples():
    assert normalize("") == []
    assert normalize("The GAME is great!") == ["game", "great"]
    assert normalize("stories Stories STORIES") == ["story", "story", "story"]


def test_lemmatizer_rules():
    assert lemmatize("classes") == "class"      # sses -> ss
    assert lemmatize("games") == "game"         # trailing s, length > 3
    assert lemmatize("bus") == "bus"            # too short for the s rule
    assert lemmatize("playing") == "play"       # ing, length > 5
    assert lemmatize("sing") == "sing"
    assert lemmatize("jumped") == "jump"        # ed, length > 4
    assert lemmatize("red") == "red"
    assert lemmatize("glass") == "glass"        # no stripping after another s


def test_stopword_list_size():
    assert len(STOPWORDS) == 127
    assert {"the", "is", "and"} <= STOPWORDS


def test_short_tokens_dropped_and_truncation():
    assert normalize("x y zz") == ["zz"]
    long = " ".join(["word"] * 600)
    assert len(normalize(long)) == 512


def test_custom_stopwords(tmp_path):
    path = tmp_path / "stop.txt"
    path.write_text("game\n")
    stop = load_stopwords(path)
    assert normalize("the game", stopwords=stop) == ["the"]


words = st.text(alphabet="abcdefghijklmnopqrstuvwxyzSEI !,.-'0123456789", max_size=80)


@settings(max_examples=300, deadline=None)
@given(words)
def test_normalize_idempotent(text):
    once = normalize(text)
    assert normalize(" ".join(once)) == once


def test_vocab_bijective_and_frozen():
    v = Vocab(["a", "b"])
    assert v.encode(["b", "c", "a"]) == [1, 2, 0]
    assert v.decode([2, 0]) == ["c", "a"]
    v.frozen = True
    with pytest.raises(KeyError):
        v.add("d")


def test_fnv1a_reference_values():
    # published FNV-1a 64 test vectors
    assert fnv1a_64("") == 0xCBF29CE484222325
    assert fnv1a_64("a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64("foobar") == 0x85944171F73967E8


def test_embed_shapes_and_lookup():
    prov = EmbeddingProvider.from_mapping({"game": np.array([1.0, 0.0, 0.0]), "fun": np.array([0.0, 2.0, 0.0])})
    assert embed([], prov).shape == (0, 3)
    E = embed(["game", "game"], prov)
    np.testing.assert_array_equal(E[0], E[1])
    np.testing.assert_array_equal(E[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(embed(["unknown"], prov), np.zeros((1, 3)))


def test_file_table_read_only():
    prov = EmbeddingProvider.from_mapping({"a": np.ones(2)})
    with pytest.raises(ValueError):
        prov.table[0, 0] = 5.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(min_size=1, max_size=8), max_size=20))
def test_hashed_lookup_shape_and_stability(tokens):
    prov = EmbeddingProvider.hashed(b=4, table_size=64, seed=1)
    assert prov.trainable
    E = embed(tokens, prov)
    assert E.shape == (len(tokens), 4)
    for tok, row in zip(tokens, prov.rows(tokens)):
        assert row == fnv1a_64(tok) % 64


def test_load_embedding_file(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("2 3\ngame 1 0 0\nfun 0 1 0.5\n")
    prov = load_embedding_file(path)
    assert prov.dim == 3 and len(prov.words) == 2
    np.testing.assert_array_equal(prov.embed(["fun"]), [[0.0, 1.0, 0.5]])


def test_load_embedding_count_mismatch(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("5 2\n" + "".join(f"w{j} 1 2\n" for j in range(4)))
    with pytest.raises(EmbeddingFormatError):
        load_embedding_file(path)


@pytest.mark.parametrize("body", ["2\na 1\n", "1 2\na 1\n", "1 2\na 1 x\n", "x 2\na 1 2\n"])
def test_load_embedding_malformed(tmp_path, body):
    path = tmp_path / "emb.txt"
    path.write_text(body)
    with pytest.raises(EmbeddingFormatError):
        load_embedding_file(path)


def test_duplicate_token_last_wins(tmp_path, caplog):
    path = tmp_path / "emb.txt"
    path.write_text("2 2\na 1 1\na 3 4\n")
    with caplog.at_level(logging.WARNING):
        prov = load_embedding_file(path)
    np.testing.assert_array_equal(prov.embed(["a"]), [[3.0, 4.0]])
    assert "duplicate" in caplog.text


def test_embedding_round_trip(tmp_path, rng):
    prov = EmbeddingProvider.from_mapping({f"w{j}": rng.normal(size=5) for j in range(7)})
    path = tmp_path / "emb.txt"
    write_embedding_file(path, prov)
    back = load_embedding_file(path)
    toks = ["w3", "w0", "nope", "w6"]
    np.testing.assert_array_equal(back.embed(toks), prov.embed(toks))
