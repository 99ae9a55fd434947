"""Extraction jobs: captions JSONL in, normalized .lgem + sidecar out."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .encoders import ENCODER_NAMES, EncoderError, make_encoder
from .lgem import write_lgem


@dataclass(frozen=True)
class CaptionRecord:
    record_id: str
    text: str
    scope: str | None = None


@dataclass
class ExtractionJob:
    captions_path: str | Path
    encoder: str
    output_path: str | Path
    batch_size: int = 64
    word_vectors: str | None = None  # fasttext-bow only

    def __post_init__(self) -> None:
        if self.encoder not in ENCODER_NAMES:
            raise EncoderError(
                f"unknown encoder {self.encoder!r}; supported: "
                f"{', '.join(ENCODER_NAMES)}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def read_captions(path) -> list[CaptionRecord]:
    records: list[CaptionRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
                text = obj["text"]
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if rid in seen:
                raise ValueError(f"{path}: line {lineno}: duplicate id {rid!r}")
            seen.add(rid)
            records.append(CaptionRecord(rid, text, obj.get("scope")))
    if not records:
        raise ValueError(f"{path}: no caption records")
    return records


def extract(job: ExtractionJob) -> dict:
    """Run the job; returns the sidecar manifest dict (also written to
    ``<output>.manifest.json``).

    Blank captions embed as a single space so id alignment with image-side
    files survives; their ids are flagged in the sidecar.
    """
    started = datetime.now(timezone.utc).isoformat()
    records = read_captions(job.captions_path)

    scoped = [r for r in records if r.scope is not None]
    if scoped and len(scoped) != len(records):
        raise ValueError(
            "either every caption carries a scope or none do; got "
            f"{len(scoped)} of {len(records)}"
        )

    texts = []
    empty_ids = []
    for r in records:
        if r.text.strip():
            texts.append(r.text)
        else:
            texts.append(" ")
            empty_ids.append(r.record_id)

    encoder = make_encoder(job.encoder, job.word_vectors)
    vectors = encoder.encode(texts, batch_size=job.batch_size)
    normalized = _l2_normalize_rows(vectors)

    write_lgem(
        job.output_path,
        ids=[r.record_id for r in records],
        vectors=normalized,
        scopes=[r.scope for r in records] if scoped else None,
        normalized=True,
    )
    manifest = {
        "encoder": job.encoder,
        "version": encoder.version,
        "n": len(records),
        "dim": int(normalized.shape[1]),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "empty_captions": empty_ids,
        "oov_only_captions": [
            records[i].record_id for i in getattr(encoder, "oov_only_rows", [])
        ],
    }
    manifest_path = Path(str(job.output_path) + ".manifest.json")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as out:
        out.write(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return manifest


def _l2_normalize_rows(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", v, v))
    zero = norms == 0.0
    if zero.any():
        raise ValueError(
            f"encoder produced a zero vector at row {int(np.flatnonzero(zero)[0])}"
        )
    return (v / norms[:, None]).astype(np.float32)
