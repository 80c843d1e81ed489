"""Sentence-pair dataset rows and their TSV serialization.

Rows are ``id<TAB>sentence1<TAB>sentence2<TAB>label`` with binary labels and
ids unique within a split.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import DataError


@dataclass(frozen=True)
class Instance:
    id: str
    sentence1: str
    sentence2: str
    label: int


def load_dataset_tsv(path: str | Path) -> list[Instance]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    instances: list[Instance] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            rid, s1, s2, label = parts
            if label not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            if rid in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {rid!r}")
            seen.add(rid)
            instances.append(Instance(id=rid, sentence1=s1, sentence2=s2, label=int(label)))
    if not instances:
        raise DataError(f"{path}: empty dataset")
    return instances


def write_dataset_tsv(path: str | Path, instances: list[Instance]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(f"{inst.id}\t{inst.sentence1}\t{inst.sentence2}\t{inst.label}\n")
