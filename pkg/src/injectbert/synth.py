"""Synthetic paraphrase-style task generator with oracle embeddings.

The task: sentence 2 is a copy of sentence 1 with one word swapped. Swapping
for a lexicon synonym keeps the pair positive, swapping for an antonym or a
random word makes it negative; exact copies are positive and unrelated
sentences negative. Crucially, the synonym/antonym pairs used for the dev
and test splits are held out from training, so a model can only solve the
swap instances by consulting external knowledge about the word pair.

Two embedding files are emitted over the same vocabulary: an "oracle" file
whose synonym pairs sit at near-identical vectors and antonym pairs at
near-opposite ones (the structural property counter-fitting enforces), and
a shape-matched "control" file of independent random vectors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Instance, write_dataset_tsv
from .embeddings import save_embeddings
from .errors import DataError
from .tokenization import CLS_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN

KINDS = ("syn_swap", "copy", "ant_swap", "rand_swap", "unrelated")
POSITIVE_KINDS = ("syn_swap", "copy")

# relative frequency of each kind within its label class
_POSITIVE_WEIGHTS = {"syn_swap": 0.7, "copy": 0.3}
_NEGATIVE_WEIGHTS = {"ant_swap": 0.4, "rand_swap": 0.4, "unrelated": 0.2}

SPLITS = ("train", "dev", "test")

CONFIG_NAME = "synth_config.txt"
META_NAME = "meta.tsv"
VOCAB_NAME = "wordpiece_vocab.txt"
LEXICON_NAME = "lexicon.tsv"
ORACLE_NAME = "oracle_embeddings.txt"
CONTROL_NAME = "control_embeddings.txt"


@dataclass
class SynthSpec:
    n_pairs: int = 1000  # training instances; dev and test get n_pairs // 5 each
    vocab_size: int = 500  # distinct words, lexicon words included
    n_synonym_pairs: int = 50
    n_antonym_pairs: int = 50
    noise_rate: float = 0.05
    positive_fraction: float = 0.5
    embedding_dim: int = 16
    min_sentence_len: int = 5
    max_sentence_len: int = 9
    holdout_fraction: float = 0.3  # lexicon pairs reserved for dev/test swaps
    seed: int = 7

    def __post_init__(self):
        pair_words = 2 * (self.n_synonym_pairs + self.n_antonym_pairs)
        if self.n_pairs < 1 or self.vocab_size < 1:
            raise DataError("n_pairs and vocab_size must be positive")
        if self.n_synonym_pairs < 1 or self.n_antonym_pairs < 1:
            raise DataError("need at least one synonym and one antonym pair")
        if self.vocab_size < pair_words + 10:
            raise DataError(
                f"vocab_size {self.vocab_size} too small for {pair_words} lexicon words"
                " plus at least 10 filler words"
            )
        if not 0.0 <= self.noise_rate < 0.5:
            raise DataError(f"noise_rate must be in [0, 0.5), got {self.noise_rate}")
        if not 0.0 < self.positive_fraction < 1.0:
            raise DataError(f"positive_fraction must be in (0, 1), got {self.positive_fraction}")
        if self.min_sentence_len < 2 or self.max_sentence_len < self.min_sentence_len:
            raise DataError("sentence length bounds are inconsistent")


@dataclass
class MetaRow:
    id: str
    kind: str
    word1: str  # swapped-out word ("" when the kind swaps nothing)
    word2: str  # swapped-in word
    flipped: bool  # label inverted by noise


@dataclass
class SynthData:
    spec: SynthSpec
    words: list[str]
    fillers: list[str]
    synonym_pairs: list[tuple[str, str]]
    antonym_pairs: list[tuple[str, str]]
    train_synonyms: list[tuple[str, str]]
    train_antonyms: list[tuple[str, str]]
    heldout_synonyms: list[tuple[str, str]]
    heldout_antonyms: list[tuple[str, str]]
    splits: dict[str, list[Instance]]
    meta: dict[str, MetaRow] = field(default_factory=dict)
    oracle_vectors: np.ndarray | None = None
    control_vectors: np.ndarray | None = None


def _random_word(rng: np.random.Generator, taken: set[str]) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    while True:
        length = int(rng.integers(3, 9))
        word = "".join(letters[i] for i in rng.integers(0, 26, size=length))
        if word not in taken:
            taken.add(word)
            return word


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate(spec: SynthSpec) -> SynthData:
    """Build the full task in memory, deterministically from spec.seed."""
    rng = np.random.default_rng(spec.seed)
    taken: set[str] = set()
    words = [_random_word(rng, taken) for _ in range(spec.vocab_size)]

    cursor = 0

    def take_pairs(n: int) -> list[tuple[str, str]]:
        nonlocal cursor
        pairs = [(words[cursor + 2 * i], words[cursor + 2 * i + 1]) for i in range(n)]
        cursor += 2 * n
        return pairs

    synonym_pairs = take_pairs(spec.n_synonym_pairs)
    antonym_pairs = take_pairs(spec.n_antonym_pairs)
    fillers = words[cursor:]

    def split_pool(pairs: list[tuple[str, str]]) -> tuple[list, list]:
        if len(pairs) < 2:
            return list(pairs), list(pairs)
        heldout = max(1, int(round(len(pairs) * spec.holdout_fraction)))
        heldout = min(heldout, len(pairs) - 1)
        return pairs[:-heldout], pairs[-heldout:]

    train_syn, heldout_syn = split_pool(synonym_pairs)
    train_ant, heldout_ant = split_pool(antonym_pairs)

    def sentence() -> list[str]:
        length = int(rng.integers(spec.min_sentence_len, spec.max_sentence_len + 1))
        return [fillers[i] for i in rng.integers(0, len(fillers), size=length)]

    def pick_kind() -> str:
        if rng.random() < spec.positive_fraction:
            names, weights = zip(*_POSITIVE_WEIGHTS.items())
        else:
            names, weights = zip(*_NEGATIVE_WEIGHTS.items())
        probs = np.asarray(weights) / sum(weights)
        return str(names[rng.choice(len(names), p=probs)])

    def make_instance(split: str, index: int, syn_pool, ant_pool) -> tuple[Instance, MetaRow]:
        kind = pick_kind()
        s1 = sentence()
        w1 = w2 = ""
        if kind == "copy":
            s2 = list(s1)
            label = 1
        elif kind == "unrelated":
            s2 = sentence()
            label = 0
        else:
            position = int(rng.integers(0, len(s1)))
            s2 = list(s1)
            if kind == "syn_swap":
                w1, w2 = syn_pool[rng.integers(0, len(syn_pool))]
                label = 1
            elif kind == "ant_swap":
                w1, w2 = ant_pool[rng.integers(0, len(ant_pool))]
                label = 0
            else:  # rand_swap
                w1 = s1[position]
                w2 = fillers[int(rng.integers(0, len(fillers)))]
                while w2 == w1:
                    w2 = fillers[int(rng.integers(0, len(fillers)))]
                label = 0
            if rng.random() < 0.5 and kind != "rand_swap":
                w1, w2 = w2, w1  # lexicon pairs straddle in either direction
            s1[position] = w1
            s2[position] = w2
        flipped = bool(rng.random() < spec.noise_rate)
        if flipped:
            label = 1 - label
        rid = f"{split}-{index:05d}"
        inst = Instance(id=rid, sentence1=" ".join(s1), sentence2=" ".join(s2), label=label)
        return inst, MetaRow(id=rid, kind=kind, word1=w1, word2=w2, flipped=flipped)

    sizes = {"train": spec.n_pairs, "dev": max(1, spec.n_pairs // 5), "test": max(1, spec.n_pairs // 5)}
    splits: dict[str, list[Instance]] = {}
    meta: dict[str, MetaRow] = {}
    for split in SPLITS:
        syn_pool = train_syn if split == "train" else heldout_syn
        ant_pool = train_ant if split == "train" else heldout_ant
        rows = []
        for i in range(sizes[split]):
            inst, row = make_instance(split, i, syn_pool, ant_pool)
            rows.append(inst)
            meta[inst.id] = row
        splits[split] = rows

    data = SynthData(
        spec=spec,
        words=words,
        fillers=fillers,
        synonym_pairs=synonym_pairs,
        antonym_pairs=antonym_pairs,
        train_synonyms=train_syn,
        train_antonyms=train_ant,
        heldout_synonyms=heldout_syn,
        heldout_antonyms=heldout_ant,
        splits=splits,
        meta=meta,
    )
    data.oracle_vectors = _oracle_vectors(data, rng)
    data.control_vectors = np.vstack(
        [_unit(rng.normal(size=spec.embedding_dim)) for _ in words]
    )
    return data


def _oracle_vectors(data: SynthData, rng: np.random.Generator) -> np.ndarray:
    """Synonyms near-identical, antonyms near-opposite, fillers independent."""
    dim = data.spec.embedding_dim
    jitter = 0.01
    rows = {word: None for word in data.words}
    for w1, w2 in data.synonym_pairs:
        base = _unit(rng.normal(size=dim))
        rows[w1] = _unit(base + jitter * rng.normal(size=dim))
        rows[w2] = _unit(base + jitter * rng.normal(size=dim))
    for w1, w2 in data.antonym_pairs:
        base = _unit(rng.normal(size=dim))
        rows[w1] = _unit(base + jitter * rng.normal(size=dim))
        rows[w2] = _unit(-base + jitter * rng.normal(size=dim))
    for word in data.fillers:
        rows[word] = _unit(rng.normal(size=dim))
    return np.vstack([rows[w] for w in data.words])


def wordpiece_vocab_lines(data: SynthData) -> list[str]:
    """Specials, every generated word, then single letters as a split fallback."""
    letters = list("abcdefghijklmnopqrstuvwxyz")
    return (
        [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN]
        + sorted(data.words)
        + letters
        + ["##" + c for c in letters]
    )


def lexicon_lines(data: SynthData) -> list[str]:
    lines = [f"{w1}\t{w2}\tsynonym" for w1, w2 in data.synonym_pairs]
    lines += [f"{w1}\t{w2}\tantonym" for w1, w2 in data.antonym_pairs]
    return lines


def write_files(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    """Write all task files; rerunning with the same spec is byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for split, instances in data.splits.items():
        paths[split] = out / f"{split}.tsv"
        write_dataset_tsv(paths[split], instances)
    paths["vocab"] = out / VOCAB_NAME
    paths["vocab"].write_text("\n".join(wordpiece_vocab_lines(data)) + "\n", encoding="utf-8")
    paths["lexicon"] = out / LEXICON_NAME
    paths["lexicon"].write_text("\n".join(lexicon_lines(data)) + "\n", encoding="utf-8")
    paths["oracle"] = out / ORACLE_NAME
    save_embeddings(paths["oracle"], data.words, data.oracle_vectors)
    paths["control"] = out / CONTROL_NAME
    save_embeddings(paths["control"], data.words, data.control_vectors)
    paths["meta"] = out / META_NAME
    with paths["meta"].open("w", encoding="utf-8") as fh:
        fh.write("id\tkind\tword1\tword2\tflipped\n")
        for split in SPLITS:
            for inst in data.splits[split]:
                row = data.meta[inst.id]
                fh.write(f"{row.id}\t{row.kind}\t{row.word1}\t{row.word2}\t{int(row.flipped)}\n")
    paths["config"] = out / CONFIG_NAME
    lines = [f"{f.name}={getattr(data.spec, f.name)}" for f in dataclasses.fields(SynthSpec)]
    paths["config"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


def read_spec(out_dir: str | Path) -> SynthSpec:
    path = Path(out_dir) / CONFIG_NAME
    if not path.exists():
        raise DataError(f"missing generator config: {path}")
    raw: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            raw[key] = value
    kwargs = {}
    for f in dataclasses.fields(SynthSpec):
        if f.name not in raw:
            raise DataError(f"generator config missing {f.name}")
        if f.type in ("int",):
            kwargs[f.name] = int(raw[f.name])
        elif f.type in ("float",):
            kwargs[f.name] = float(raw[f.name])
        else:
            kwargs[f.name] = raw[f.name]
    return SynthSpec(**kwargs)


def audit_files(out_dir: str | Path) -> dict[str, int]:
    """Re-derive the task from its recorded spec and check the written files.

    Verifies that every instance's label matches its construction rule (kind
    plus recorded noise flip), that regeneration reproduces the sentences
    exactly, and that oracle synonym/antonym rows meet their cosine bounds.
    """
    from .datasets import load_dataset_tsv

    out = Path(out_dir)
    spec = read_spec(out)
    regen = generate(spec)
    checked = 0
    for split in SPLITS:
        written = load_dataset_tsv(out / f"{split}.tsv")
        expected = regen.splits[split]
        if len(written) != len(expected):
            raise DataError(f"{split}: {len(written)} rows written, {len(expected)} regenerated")
        for got, want in zip(written, expected):
            if got != want:
                raise DataError(f"{split}: row {got.id} differs from regeneration")
            row = regen.meta[got.id]
            base_label = 1 if row.kind in POSITIVE_KINDS else 0
            if row.flipped:
                base_label = 1 - base_label
            if got.label != base_label:
                raise DataError(f"{split}: row {got.id} label violates construction rule")
            checked += 1
    index = {w: i for i, w in enumerate(regen.words)}
    vectors = regen.oracle_vectors
    for w1, w2 in regen.synonym_pairs:
        cos = float(vectors[index[w1]] @ vectors[index[w2]])
        if cos < 0.95:
            raise DataError(f"oracle synonym pair ({w1}, {w2}) cosine {cos:.3f} < 0.95")
    for w1, w2 in regen.antonym_pairs:
        cos = float(vectors[index[w1]] @ vectors[index[w2]])
        if cos > -0.95:
            raise DataError(f"oracle antonym pair ({w1}, {w2}) cosine {cos:.3f} > -0.95")
    return {"instances_checked": checked, "synonym_pairs": len(regen.synonym_pairs),
            "antonym_pairs": len(regen.antonym_pairs)}
