"""WordPiece tokenization, sentence-pair packing, and injection alignment.

A sentence pair is lowercased, split on whitespace and punctuation, broken
into word pieces by greedy longest-match-first lookup, and packed as
``[CLS] s1 [SEP] s2 [SEP] [PAD]...``. Alongside the piece ids we keep an
alignment map from each piece back to its source token, which is what lets
external word embeddings be copied onto every piece of a split word.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "[UNK]"
PAD_TOKEN = "[PAD]"
CONTINUATION = "##"

_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]", re.UNICODE)

# tokens longer than this go straight to [UNK] instead of piece search
MAX_CHARS_PER_TOKEN = 100


def pre_tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace; each punctuation mark is its own token."""
    return _WORD_OR_PUNCT.findall(text.lower())


@dataclass(frozen=True)
class WordPieceVocab:
    """Piece-to-id map with the four special tokens pinned."""

    piece_to_id: dict[str, int]
    id_to_piece: tuple[str, ...]
    cls_id: int
    sep_id: int
    unk_id: int
    pad_id: int

    @classmethod
    def from_pieces(cls, pieces: list[str]) -> "WordPieceVocab":
        mapping: dict[str, int] = {}
        for i, piece in enumerate(pieces):
            if piece in mapping:
                raise DataError(f"duplicate word piece {piece!r} at id {i}")
            mapping[piece] = i
        for special in (CLS_TOKEN, SEP_TOKEN, UNK_TOKEN, PAD_TOKEN):
            if special not in mapping:
                raise DataError(f"vocab is missing special token {special}")
        return cls(
            piece_to_id=mapping,
            id_to_piece=tuple(pieces),
            cls_id=mapping[CLS_TOKEN],
            sep_id=mapping[SEP_TOKEN],
            unk_id=mapping[UNK_TOKEN],
            pad_id=mapping[PAD_TOKEN],
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "WordPieceVocab":
        """One piece per line; the line number is the id."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        pieces = [line.rstrip("\n") for line in lines if line.strip() != ""]
        if not pieces:
            raise DataError(f"empty word-piece vocab file: {path}")
        return cls.from_pieces(pieces)

    def __len__(self) -> int:
        return len(self.id_to_piece)

    def __contains__(self, piece: str) -> bool:
        return piece in self.piece_to_id


@dataclass(frozen=True)
class TokenizedText:
    """Pre-tokenized source tokens with their word-piece decomposition.

    ``token_spans[t]`` is the half-open range of piece indices produced by
    source token ``t``.
    """

    tokens: tuple[str, ...]
    piece_ids: tuple[int, ...]
    token_spans: tuple[tuple[int, int], ...]


def wordpiece_tokenize(text: str, vocab: WordPieceVocab) -> TokenizedText:
    """Greedy longest-match-first decomposition of a raw string.

    Every source token yields at least one piece; a token with no valid
    decomposition collapses to a single [UNK] piece.
    """
    tokens = pre_tokenize(text)
    piece_ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for token in tokens:
        start_piece = len(piece_ids)
        pieces = _split_token(token, vocab)
        piece_ids.extend(pieces)
        spans.append((start_piece, len(piece_ids)))
    return TokenizedText(tuple(tokens), tuple(piece_ids), tuple(spans))


def _split_token(token: str, vocab: WordPieceVocab) -> list[int]:
    if len(token) > MAX_CHARS_PER_TOKEN:
        return [vocab.unk_id]
    pieces: list[int] = []
    start = 0
    while start < len(token):
        end = len(token)
        found = None
        while start < end:
            sub = token[start:end]
            if start > 0:
                sub = CONTINUATION + sub
            if sub in vocab.piece_to_id:
                found = vocab.piece_to_id[sub]
                break
            end -= 1
        if found is None:
            return [vocab.unk_id]
        pieces.append(found)
        start = end
    return pieces


# alignment entry: None for [CLS]/[SEP]/[PAD], else (sentence 1|2, token index)
Alignment = Optional[tuple[int, int]]


@dataclass(frozen=True)
class WordPieceSequence:
    """A packed sentence pair, always padded to the full sequence length."""

    piece_ids: np.ndarray  # int64, length max_seq_len
    segment_ids: np.ndarray  # int64, 0 through the first [SEP], 1 after
    attention_mask: np.ndarray  # int64, 1 for real pieces, 0 for [PAD]
    alignment: tuple[Alignment, ...]

    def __len__(self) -> int:
        return int(self.piece_ids.shape[0])

    @property
    def num_real(self) -> int:
        return int(self.attention_mask.sum())


def pack_pair(
    first: TokenizedText,
    second: TokenizedText,
    vocab: WordPieceVocab,
    max_seq_len: int,
) -> WordPieceSequence:
    """Pack two tokenized sentences as [CLS] s1 [SEP] s2 [SEP] plus padding.

    When the pair does not fit, the final piece of the currently longer
    sentence is trimmed repeatedly (ties trim the second sentence) until it
    does.
    """
    if max_seq_len < 3:
        raise ConfigError(f"max_seq_len must be at least 3, got {max_seq_len}")
    s1 = [(pid, tok) for tok, (a, b) in enumerate(first.token_spans) for pid in first.piece_ids[a:b]]
    s2 = [(pid, tok) for tok, (a, b) in enumerate(second.token_spans) for pid in second.piece_ids[a:b]]
    budget = max_seq_len - 3
    while len(s1) + len(s2) > budget:
        if len(s1) > len(s2):
            s1.pop()
        else:
            s2.pop()

    ids: list[int] = [vocab.cls_id]
    alignment: list[Alignment] = [None]
    for pid, tok in s1:
        ids.append(pid)
        alignment.append((1, tok))
    ids.append(vocab.sep_id)
    alignment.append(None)
    first_sep = len(ids) - 1
    for pid, tok in s2:
        ids.append(pid)
        alignment.append((2, tok))
    ids.append(vocab.sep_id)
    alignment.append(None)

    num_real = len(ids)
    pad = max_seq_len - num_real
    ids.extend([vocab.pad_id] * pad)
    alignment.extend([None] * pad)
    segment_ids = [0 if j <= first_sep else 1 for j in range(max_seq_len)]
    mask = [1] * num_real + [0] * pad
    return WordPieceSequence(
        piece_ids=np.asarray(ids, dtype=np.int64),
        segment_ids=np.asarray(segment_ids, dtype=np.int64),
        attention_mask=np.asarray(mask, dtype=np.int64),
        alignment=tuple(alignment),
    )


@dataclass(frozen=True)
class InjectionSequence:
    """External embedding rows aligned one-to-one with a packed sequence."""

    matrix: np.ndarray  # float64, len(seq) x store.dim


def build_injection_sequence(seq, source_tokens, store) -> InjectionSequence:
    """Copy each source token's external embedding onto all of its pieces.

    ``source_tokens`` is the pair (tokens of sentence 1, tokens of sentence 2).
    [CLS]/[SEP]/[PAD] positions get the zero vector; out-of-vocabulary words
    get the store's OOV policy vector. Pieces that share a source token share
    a bit-identical row.
    """
    from .embeddings import lookup  # local import to keep modules acyclic

    rows = np.zeros((len(seq), store.dim), dtype=np.float64)
    cache: dict[tuple[int, int], np.ndarray] = {}
    for j, entry in enumerate(seq.alignment):
        if entry is None:
            continue
        if entry not in cache:
            sent, tok = entry
            tokens = source_tokens[sent - 1]
            if not 0 <= tok < len(tokens):
                raise DataError(f"alignment references token {tok} of sentence {sent}")
            cache[entry] = lookup(store, tokens[tok])
        rows[j] = cache[entry]
    return InjectionSequence(matrix=rows)


def encode_pair(
    sentence1: str,
    sentence2: str,
    vocab: WordPieceVocab,
    max_seq_len: int,
) -> tuple[WordPieceSequence, tuple[tuple[str, ...], tuple[str, ...]]]:
    """Tokenize and pack a raw sentence pair; returns the source tokens too."""
    t1 = wordpiece_tokenize(sentence1, vocab)
    t2 = wordpiece_tokenize(sentence2, vocab)
    return pack_pair(t1, t2, vocab, max_seq_len), (t1.tokens, t2.tokens)
