"""Loading and serving external word embeddings and synonym/antonym lexicons.

Embedding files are plain text, one ``word v1 ... vE`` row per line, with an
optional ``count dim`` header (auto-detected when the first line is exactly
two integer fields). Lexicons are TSV rows ``word1<TAB>word2<TAB>relation``
with relation in {synonym, antonym}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .tokenization import pre_tokenize

OOV_POLICIES = ("zero", "mean")


@dataclass
class EmbeddingStore:
    """Word-to-row index over an in-memory embedding matrix."""

    index: dict[str, int]
    vectors: np.ndarray  # |V| x dim, float64
    dim: int
    oov_policy: str = "zero"
    duplicates_skipped: int = 0
    _oov_vector: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.oov_policy not in OOV_POLICIES:
            raise DataError(f"unknown OOV policy {self.oov_policy!r}; expected one of {OOV_POLICIES}")

    def oov_vector(self) -> np.ndarray:
        if self._oov_vector is None:
            if self.oov_policy == "zero":
                self._oov_vector = np.zeros(self.dim, dtype=np.float64)
            else:
                self._oov_vector = self.vectors.mean(axis=0)
        return self._oov_vector

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.index


def load_embeddings(path: str | Path, oov_policy: str = "zero") -> EmbeddingStore:
    """Parse a text embedding file into a store.

    Duplicate words keep their first occurrence (the skip count is recorded
    on the store); ragged rows and empty files are errors naming the line.
    """
    path = Path(path)
    index: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim: int | None = None
    duplicates = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and _is_int(parts[0]) and _is_int(parts[1]):
                continue  # "count dim" header
            word, values = parts[0], parts[1:]
            if not values:
                raise DataError(f"{path}:{lineno}: no embedding values for {word!r}")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values, found {len(values)}"
                )
            try:
                vec = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if word in index:
                duplicates += 1
                continue
            index[word] = len(rows)
            rows.append(vec)
    if not rows:
        raise DataError(f"{path}: no embedding rows found")
    return EmbeddingStore(
        index=index,
        vectors=np.vstack(rows),
        dim=int(dim or 0),
        oov_policy=oov_policy,
        duplicates_skipped=duplicates,
    )


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def lookup(store: EmbeddingStore, word: str) -> np.ndarray:
    """Exact lowercase match; unknown words get the store's OOV policy vector."""
    row = store.index.get(word.lower())
    if row is None:
        return store.oov_vector().copy()
    return store.vectors[row].copy()


def save_embeddings(path: str | Path, words: list[str], vectors: np.ndarray) -> None:
    """Write a plain-text embedding file (no header)."""
    if len(words) != vectors.shape[0]:
        raise DataError(f"{len(words)} words but {vectors.shape[0]} vector rows")
    with Path(path).open("w", encoding="utf-8") as fh:
        for word, vec in zip(words, vectors):
            fh.write(word + " " + " ".join(format(v, ".8g") for v in vec) + "\n")


# ---------------------------------------------------------------------------
# synonym/antonym lexicons and instance partitioning
# ---------------------------------------------------------------------------

RELATIONS = ("synonym", "antonym")


@dataclass(frozen=True)
class PairLexicon:
    """Unordered lowercase word pairs tagged synonym or antonym."""

    synonyms: frozenset[tuple[str, str]]
    antonyms: frozenset[tuple[str, str]]

    @staticmethod
    def canonical(w1: str, w2: str) -> tuple[str, str]:
        a, b = sorted((w1.lower(), w2.lower()))
        return a, b

    def __len__(self) -> int:
        return len(self.synonyms) + len(self.antonyms)

    @classmethod
    def empty(cls) -> "PairLexicon":
        return cls(frozenset(), frozenset())


def load_lexicon(path: str | Path) -> PairLexicon:
    """Parse a relation TSV; conflicting or unknown relation tags are errors."""
    path = Path(path)
    synonyms: set[tuple[str, str]] = set()
    antonyms: set[tuple[str, str]] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            w1, w2, relation = parts
            if relation not in RELATIONS:
                raise DataError(f"{path}:{lineno}: unknown relation {relation!r}")
            pair = PairLexicon.canonical(w1, w2)
            target = synonyms if relation == "synonym" else antonyms
            other = antonyms if relation == "synonym" else synonyms
            if pair in other:
                raise DataError(f"{path}:{lineno}: pair {pair} tagged both synonym and antonym")
            target.add(pair)
    return PairLexicon(synonyms=frozenset(synonyms), antonyms=frozenset(antonyms))


@dataclass(frozen=True)
class PartitionTags:
    has_synonym: bool
    has_antonym: bool

    @property
    def neither(self) -> bool:
        return not (self.has_synonym or self.has_antonym)


def _straddles(pair: tuple[str, str], set1: set[str], set2: set[str]) -> bool:
    a, b = pair
    return (a in set1 and b in set2) or (a in set2 and b in set1)


def partition_instances(instances, lexicon: PairLexicon) -> list[PartitionTags]:
    """Tag each sentence pair by lexicon pairs straddling the two sentences.

    A pair straddles when one word appears among sentence 1's tokens and the
    other among sentence 2's (either way round). Synonym and antonym tags
    are independent; an instance may carry both.
    """
    tags: list[PartitionTags] = []
    for inst in instances:
        set1 = set(pre_tokenize(inst.sentence1))
        set2 = set(pre_tokenize(inst.sentence2))
        has_syn = any(_straddles(p, set1, set2) for p in lexicon.synonyms)
        has_ant = any(_straddles(p, set1, set2) for p in lexicon.antonyms)
        tags.append(PartitionTags(has_synonym=has_syn, has_antonym=has_ant))
    return tags
