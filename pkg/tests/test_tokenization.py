import numpy as np
import pytest

from injectbert.errors import ConfigError, DataError
from injectbert.tokenization import (
    CONTINUATION,
    WordPieceVocab,
    build_injection_sequence,
    encode_pair,
    pack_pair,
    pre_tokenize,
    wordpiece_tokenize,
)


def pieces_of(vocab, tokenized):
    return [vocab.id_to_piece[i] for i in tokenized.piece_ids]


# ---------------------------------------------------------------------------
# pre-tokenization
# ---------------------------------------------------------------------------


def test_pre_tokenize_lowercases_and_splits_punct():
    assert pre_tokenize("Hello, World!") == ["hello", ",", "world", "!"]


def test_pre_tokenize_each_punct_is_its_own_token():
    assert pre_tokenize("a...b") == ["a", ".", ".", ".", "b"]


def test_pre_tokenize_empty():
    assert pre_tokenize("   ") == []


# ---------------------------------------------------------------------------
# wordpiece
# ---------------------------------------------------------------------------


def test_split_word_into_two_pieces(tiny_vocab):
    out = wordpiece_tokenize("prompt", tiny_vocab)
    assert pieces_of(tiny_vocab, out) == ["pro", "##mpt"]
    assert out.tokens == ("prompt",)
    assert out.token_spans == ((0, 2),)


def test_whole_word_single_piece(tiny_vocab):
    out = wordpiece_tokenize("hello", tiny_vocab)
    assert pieces_of(tiny_vocab, out) == ["hello"]
    assert out.token_spans == ((0, 1),)


def test_unmatchable_token_becomes_unk(tiny_vocab):
    out = wordpiece_tokenize("qqq", tiny_vocab)
    assert out.piece_ids == (tiny_vocab.unk_id,)
    assert out.token_spans == ((0, 1),)


def test_greedy_longest_match_first(tiny_vocab):
    # "xyz" -> x ##y ##z via single-letter fallback
    out = wordpiece_tokenize("xyz", tiny_vocab)
    assert pieces_of(tiny_vocab, out) == ["x", "##y", "##z"]


def test_vocab_requires_specials():
    with pytest.raises(DataError):
        WordPieceVocab.from_pieces(["[CLS]", "[SEP]", "[UNK]"])


def test_vocab_rejects_duplicates():
    with pytest.raises(DataError):
        WordPieceVocab.from_pieces(["[CLS]", "[SEP]", "[UNK]", "[PAD]", "a", "a"])


def test_vocab_file_round_trip(tmp_path, tiny_vocab):
    path = tmp_path / "vocab.txt"
    path.write_text("\n".join(tiny_vocab.id_to_piece) + "\n", encoding="utf-8")
    loaded = WordPieceVocab.from_file(path)
    assert loaded.id_to_piece == tiny_vocab.id_to_piece
    assert loaded.cls_id == tiny_vocab.cls_id


# ---------------------------------------------------------------------------
# pack_pair
# ---------------------------------------------------------------------------


def test_pack_pair_layout_and_segments(tiny_vocab):
    t1 = wordpiece_tokenize("a b", tiny_vocab)
    t2 = wordpiece_tokenize("c d e", tiny_vocab)
    seq = pack_pair(t1, t2, tiny_vocab, max_seq_len=16)
    assert len(seq) == 16
    assert seq.num_real == 8  # 1 + 2 + 1 + 3 + 1
    assert seq.segment_ids[:8].tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    assert seq.piece_ids[0] == tiny_vocab.cls_id
    assert (seq.piece_ids == tiny_vocab.sep_id).sum() == 2
    assert all(seq.piece_ids[8:] == tiny_vocab.pad_id)
    assert seq.attention_mask.tolist() == [1] * 8 + [0] * 8


def test_pack_pair_empty_second_sentence(tiny_vocab):
    t1 = wordpiece_tokenize("a b", tiny_vocab)
    t2 = wordpiece_tokenize("", tiny_vocab)
    seq = pack_pair(t1, t2, tiny_vocab, max_seq_len=8)
    real = [tiny_vocab.id_to_piece[i] for i in seq.piece_ids[: seq.num_real]]
    assert real == ["[CLS]", "a", "b", "[SEP]", "[SEP]"]


def test_pack_pair_truncates_longer_sentence_first(tiny_vocab):
    t1 = wordpiece_tokenize("a b c d e", tiny_vocab)
    t2 = wordpiece_tokenize("a b", tiny_vocab)
    seq = pack_pair(t1, t2, tiny_vocab, max_seq_len=8)  # budget 5
    real = [tiny_vocab.id_to_piece[i] for i in seq.piece_ids[: seq.num_real]]
    # sentence 1 loses its last two pieces
    assert real == ["[CLS]", "a", "b", "c", "[SEP]", "a", "b", "[SEP]"]
    assert seq.num_real == 8


def test_pack_pair_tie_trims_second_sentence(tiny_vocab):
    t1 = wordpiece_tokenize("a b c", tiny_vocab)
    t2 = wordpiece_tokenize("d e a", tiny_vocab)
    seq = pack_pair(t1, t2, tiny_vocab, max_seq_len=8)  # budget 5, trims tied pair
    real = [tiny_vocab.id_to_piece[i] for i in seq.piece_ids[: seq.num_real]]
    assert real == ["[CLS]", "a", "b", "c", "[SEP]", "d", "e", "[SEP]"]


def test_pack_pair_rejects_tiny_max_len(tiny_vocab):
    t = wordpiece_tokenize("a", tiny_vocab)
    with pytest.raises(ConfigError):
        pack_pair(t, t, tiny_vocab, max_seq_len=2)


def test_alignment_marks_exactly_the_specials(tiny_vocab):
    seq, _ = encode_pair("a prompt", "b", tiny_vocab, 12)
    for j, entry in enumerate(seq.alignment):
        piece = tiny_vocab.id_to_piece[int(seq.piece_ids[j])]
        if piece in ("[CLS]", "[SEP]", "[PAD]"):
            assert entry is None
        else:
            assert entry is not None


# ---------------------------------------------------------------------------
# injection sequence
# ---------------------------------------------------------------------------


def test_injection_rows_copied_across_pieces(tiny_vocab, tiny_store):
    seq, tokens = encode_pair("a prompt", "", tiny_vocab, 12)
    inj = build_injection_sequence(seq, tokens, tiny_store).matrix
    pieces = [tiny_vocab.id_to_piece[i] for i in seq.piece_ids[: seq.num_real]]
    assert pieces == ["[CLS]", "a", "pro", "##mpt", "[SEP]", "[SEP]"]
    assert np.array_equal(inj[0], np.zeros(8))  # [CLS]
    assert np.array_equal(inj[1], tiny_store.vectors[0])  # "a"
    assert np.array_equal(inj[2], tiny_store.vectors[7])  # "prompt" on "pro"
    assert np.array_equal(inj[3], tiny_store.vectors[7])  # "prompt" on "##mpt"
    assert np.array_equal(inj[4], np.zeros(8))  # [SEP]
    assert np.array_equal(inj[5:], np.zeros((7, 8)))  # [SEP] + padding


def test_injection_all_oov_is_zero_matrix(tiny_vocab, tiny_store):
    seq, tokens = encode_pair("x y", "z", tiny_vocab, 12)
    inj = build_injection_sequence(seq, tokens, tiny_store).matrix
    assert np.array_equal(inj, np.zeros_like(inj))


def test_injection_matches_per_token_lookup_oracle(tiny_vocab, tiny_store):
    from injectbert.embeddings import lookup

    seq, tokens = encode_pair("hello world", "a b c", tiny_vocab, 12)
    inj = build_injection_sequence(seq, tokens, tiny_store).matrix
    assert inj.shape[0] == len(seq)
    for j, entry in enumerate(seq.alignment):
        if entry is None:
            assert np.array_equal(inj[j], np.zeros(8))
        else:
            sent, tok = entry
            assert np.array_equal(inj[j], lookup(tiny_store, tokens[sent - 1][tok]))


# ---------------------------------------------------------------------------
# properties over random sentences
# ---------------------------------------------------------------------------


def random_sentence(rng, words, max_words=6):
    n = int(rng.integers(1, max_words + 1))
    return " ".join(words[i] for i in rng.integers(0, len(words), size=n))


def test_round_trip_alignment_property(tiny_vocab):
    words = ["a", "b", "c", "hello", "world", "prompt", "xyz", "zzz"]
    rng = np.random.default_rng(9)
    for _ in range(200):
        s1 = random_sentence(rng, words)
        s2 = random_sentence(rng, words)
        seq, tokens = encode_pair(s1, s2, tiny_vocab, 32)
        spans: dict[tuple[int, int], list[str]] = {}
        for j, entry in enumerate(seq.alignment):
            if entry is not None:
                spans.setdefault(entry, []).append(tiny_vocab.id_to_piece[int(seq.piece_ids[j])])
        for (sent, tok), pieces in spans.items():
            if tiny_vocab.id_to_piece[tiny_vocab.unk_id] in pieces:
                continue  # [UNK] fallback loses the surface form
            joined = "".join(p.removeprefix(CONTINUATION) for p in pieces)
            assert joined == tokens[sent - 1][tok]


def test_repetition_and_length_properties(tiny_vocab, tiny_store):
    words = ["a", "b", "hello", "world", "prompt", "xyz"]
    rng = np.random.default_rng(10)
    for _ in range(200):
        s1 = random_sentence(rng, words)
        s2 = random_sentence(rng, words)
        seq, tokens = encode_pair(s1, s2, tiny_vocab, 32)
        inj = build_injection_sequence(seq, tokens, tiny_store).matrix
        assert inj.shape == (len(seq), tiny_store.dim)
        by_token: dict[tuple[int, int], np.ndarray] = {}
        for j, entry in enumerate(seq.alignment):
            if entry is None:
                continue
            if entry in by_token:
                assert np.array_equal(inj[j], by_token[entry])
            else:
                by_token[entry] = inj[j]
