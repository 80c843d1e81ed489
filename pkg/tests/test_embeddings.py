import numpy as np
import pytest

from injectbert.datasets import Instance
from injectbert.embeddings import (
    EmbeddingStore,
    PairLexicon,
    load_embeddings,
    load_lexicon,
    lookup,
    partition_instances,
)
from injectbert.errors import DataError


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# embedding files
# ---------------------------------------------------------------------------


def test_load_three_rows_dim_two(tmp_path):
    path = write(tmp_path, "emb.txt", "cat 1.0 2.0\ndog 3.0 4.0\nbird 5.0 6.0\n")
    store = load_embeddings(path)
    assert len(store) == 3
    assert store.dim == 2
    assert np.array_equal(store.vectors[store.index["dog"]], [3.0, 4.0])


def test_header_line_is_consumed(tmp_path):
    path = write(tmp_path, "emb.txt", "2 300\n" + "w1 " + " ".join(["0.5"] * 300) + "\n"
                 + "w2 " + " ".join(["0.25"] * 300) + "\n")
    store = load_embeddings(path)
    assert store.dim == 300
    assert len(store) == 2
    assert "2" not in store.index


def test_word_that_looks_like_one_int_is_not_a_header(tmp_path):
    path = write(tmp_path, "emb.txt", "cat 1.5\ndog 2.5\n")
    store = load_embeddings(path)
    assert len(store) == 2
    assert store.dim == 1


def test_ragged_row_names_line(tmp_path):
    rows = ["w%d %s" % (i, " ".join(["0.1"] * 300)) for i in range(3)]
    rows[2] = "w2 " + " ".join(["0.1"] * 299)
    path = write(tmp_path, "emb.txt", "\n".join(rows) + "\n")
    with pytest.raises(DataError, match=":3"):
        load_embeddings(path)


def test_empty_file_is_error(tmp_path):
    path = write(tmp_path, "emb.txt", "")
    with pytest.raises(DataError):
        load_embeddings(path)


def test_duplicates_keep_first_and_count(tmp_path):
    path = write(tmp_path, "emb.txt", "cat 1.0\ncat 9.0\ndog 2.0\n")
    store = load_embeddings(path)
    assert store.duplicates_skipped == 1
    assert lookup(store, "cat")[0] == 1.0


def test_lookup_bit_exact_after_parse(tmp_path):
    values = "0.12345678901234567 -3.5e-4 7.25"
    path = write(tmp_path, "emb.txt", f"cat {values}\n")
    store = load_embeddings(path)
    expected = np.array([float(v) for v in values.split()])
    assert np.array_equal(lookup(store, "cat"), expected)


def test_lookup_known_unknown_zero_policy(tmp_path):
    path = write(tmp_path, "emb.txt", "cat 1.0 2.0\n")
    store = load_embeddings(path)
    assert np.array_equal(lookup(store, "CAT"), [1.0, 2.0])  # lowercase match
    assert np.array_equal(lookup(store, "dog"), [0.0, 0.0])


def test_lookup_mean_policy(tmp_path):
    path = write(tmp_path, "emb.txt", "cat 1.0 2.0\ndog 3.0 6.0\n")
    store = load_embeddings(path, oov_policy="mean")
    assert np.array_equal(lookup(store, "mouse"), [2.0, 4.0])


def test_unknown_oov_policy_rejected():
    with pytest.raises(DataError):
        EmbeddingStore(index={}, vectors=np.zeros((1, 1)), dim=1, oov_policy="random")


# ---------------------------------------------------------------------------
# lexicons
# ---------------------------------------------------------------------------


def test_load_lexicon_both_orders(tmp_path):
    path = write(tmp_path, "lex.tsv", "husband\twife\tantonym\n")
    lex = load_lexicon(path)
    assert PairLexicon.canonical("wife", "husband") in lex.antonyms
    assert PairLexicon.canonical("husband", "wife") in lex.antonyms
    assert len(lex.synonyms) == 0


def test_duplicate_lexicon_line_collapses(tmp_path):
    path = write(tmp_path, "lex.tsv", "big\tlarge\tsynonym\nlarge\tbig\tsynonym\n")
    lex = load_lexicon(path)
    assert len(lex.synonyms) == 1


def test_unknown_relation_is_error(tmp_path):
    path = write(tmp_path, "lex.tsv", "dog\tanimal\thypernym\n")
    with pytest.raises(DataError):
        load_lexicon(path)


def test_conflicting_tags_are_error(tmp_path):
    path = write(tmp_path, "lex.tsv", "hot\tcold\tsynonym\nhot\tcold\tantonym\n")
    with pytest.raises(DataError):
        load_lexicon(path)


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------


def make_lexicon():
    return PairLexicon(
        synonyms=frozenset({PairLexicon.canonical("airways", "airlines")}),
        antonyms=frozenset({PairLexicon.canonical("husband", "wife")}),
    )


def inst(i, s1, s2, label=0):
    return Instance(id=str(i), sentence1=s1, sentence2=s2, label=label)


def test_partition_straddling_synonym():
    tags = partition_instances(
        [inst(0, "qatar airways lost my points", "first class airlines no care")],
        make_lexicon(),
    )
    assert tags[0].has_synonym and not tags[0].has_antonym


def test_partition_requires_straddle():
    tags = partition_instances(
        [inst(0, "airways and airlines compete", "nothing related here")],
        make_lexicon(),
    )
    assert tags[0].neither


def test_partition_fixture_counts():
    lex = make_lexicon()
    fixture = [
        inst(0, "qatar airways is slow", "these airlines are slow"),  # synonym
        inst(1, "the airlines called", "call qatar airways now"),  # synonym, swapped roles
        inst(2, "my husband has a visa", "my wife has a visa"),  # antonym
        inst(3, "just some words", "other words entirely"),  # neither
        inst(4, "husband and wife together", "no pair words here"),  # neither (same side)
        inst(5, "hello there", "hello there"),  # neither
    ]
    tags = partition_instances(fixture, lex)
    assert sum(t.has_synonym for t in tags) == 2
    assert sum(t.has_antonym for t in tags) == 1
    assert sum(t.neither for t in tags) == 3


def test_partition_swap_invariant():
    lex = make_lexicon()
    a = [inst(0, "the husband left", "the wife stayed")]
    b = [inst(0, "the wife stayed", "the husband left")]
    assert partition_instances(a, lex) == partition_instances(b, lex)


def test_partition_empty_lexicon_all_neither():
    instances = [inst(i, "some airways text", "some airlines text") for i in range(4)]
    tags = partition_instances(instances, PairLexicon.empty())
    assert all(t.neither for t in tags)


def test_instance_can_carry_both_tags():
    lex = make_lexicon()
    tags = partition_instances(
        [inst(0, "the husband flew airways", "the wife flew airlines")], lex
    )
    assert tags[0].has_synonym and tags[0].has_antonym
