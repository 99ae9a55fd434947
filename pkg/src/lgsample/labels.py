"""Labels CSV loading and assembly into labeled feature sets.

CSV contract: UTF-8, LF line endings, header ``id,label,split``; split is
train, val, or test. Labels are arbitrary strings mapped to dense class
indices by sorted name.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fewshot import LabeledFeatureSet
from .linprobe import ProbeSplit
from .store import EmbeddingMatrix

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class LabelRow:
    record_id: str
    label: str
    split: str


def read_labels_csv(path) -> list[LabelRow]:
    rows: list[LabelRow] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty labels file") from None
        if [h.strip() for h in header] != ["id", "label", "split"]:
            raise ValidationError(
                f"{path}: expected header 'id,label,split', got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(
                    f"{path}: line {lineno}: expected 3 fields, got {len(row)}"
                )
            rid, label, split = row
            if split not in SPLITS:
                raise ValidationError(
                    f"{path}: line {lineno}: unknown split tag {split!r} "
                    f"(expected one of {', '.join(SPLITS)})"
                )
            if rid in seen:
                raise ValidationError(f"{path}: line {lineno}: duplicate id {rid!r}")
            seen.add(rid)
            rows.append(LabelRow(rid, label, split))
    if not rows:
        raise ValidationError(f"{path}: no label rows")
    return rows


def class_table(rows: list[LabelRow]) -> dict[str, int]:
    """Label name -> dense class index, by sorted name."""
    return {name: i for i, name in enumerate(sorted({r.label for r in rows}))}


def gather_features(
    matrix: EmbeddingMatrix, rows: list[LabelRow]
) -> np.ndarray:
    row_by_id = {rid: i for i, rid in enumerate(matrix.ids)}
    missing = [r.record_id for r in rows if r.record_id not in row_by_id]
    if missing:
        raise ValidationError(
            f"{len(missing)} label ids missing from the feature store, "
            f"first: {missing[0]!r}"
        )
    take = np.array([row_by_id[r.record_id] for r in rows], dtype=np.intp)
    return matrix.vectors[take]


def fewshot_set(
    matrix: EmbeddingMatrix, rows: list[LabelRow]
) -> tuple[LabeledFeatureSet, int]:
    """Train/test feature set for few-shot evaluation.

    The few-shot protocol has no validation role; val rows are dropped and
    their count returned for reporting.
    """
    kept = [r for r in rows if r.split in ("train", "test")]
    dropped = len(rows) - len(kept)
    if not kept:
        raise ValidationError("no train/test rows in the labels file")
    table = class_table(rows)
    features = gather_features(matrix, kept)
    fset = LabeledFeatureSet(
        features=features,
        labels=np.array([table[r.label] for r in kept], dtype=np.int64),
        split=np.array([r.split for r in kept]),
        class_names=tuple(sorted(table, key=table.get)),
        ids=tuple(r.record_id for r in kept),
    )
    return fset, dropped


def probe_splits(
    matrix: EmbeddingMatrix, rows: list[LabelRow]
) -> tuple[ProbeSplit, ProbeSplit, ProbeSplit, tuple[str, ...]]:
    """(train, val, test) probe splits plus the class-name table."""
    table = class_table(rows)
    splits = {}
    for name in SPLITS:
        subset = [r for r in rows if r.split == name]
        if not subset:
            raise ValidationError(f"labels file has no {name!r} rows")
        splits[name] = ProbeSplit(
            features=gather_features(matrix, subset),
            labels=np.array([table[r.label] for r in subset], dtype=np.int64),
        )
    return (
        splits["train"],
        splits["val"],
        splits["test"],
        tuple(sorted(table, key=table.get)),
    )
