"""Text encoders producing caption embeddings.

Supported names: mpnet (all-mpnet-base-v2, 768-d), minilm
(all-MiniLM-L12-v2, 384-d), clip-text (CLIP ViT-B/32 text tower, 512-d),
and fasttext-bow (mean of word vectors from a local .vec table).

Transformer encoders load lazily and need their checkpoints available
locally or downloadable; the BoW encoder only needs a word2vec-format text
file (path argument or LGEXTRACT_WORD_VECTORS environment variable).
"""

from __future__ import annotations

import os
import re
from typing import Sequence

import numpy as np

ENCODER_NAMES = ("mpnet", "minilm", "clip-text", "fasttext-bow")

_MODEL_IDS = {
    "mpnet": "sentence-transformers/all-mpnet-base-v2",
    "minilm": "sentence-transformers/all-MiniLM-L12-v2",
}
_CLIP_ID = "openai/clip-vit-base-patch32"
_TOKEN_RE = re.compile(r"[a-z0-9']+")

WORD_VECTORS_ENV = "LGEXTRACT_WORD_VECTORS"


class EncoderError(RuntimeError):
    pass


class SentenceTransformerEncoder:
    """SBERT-family encoder (mpnet, minilm)."""

    def __init__(self, name: str):
        self.name = name
        try:
            import sentence_transformers
        except ImportError as exc:
            raise EncoderError(
                f"encoder {name!r} needs the sentence-transformers package: {exc}"
            ) from None
        try:
            self._model = sentence_transformers.SentenceTransformer(
                _MODEL_IDS[name]
            )
        except Exception as exc:
            raise EncoderError(
                f"could not load {_MODEL_IDS[name]!r} (assets unavailable?): {exc}"
            ) from None
        self.version = (
            f"{_MODEL_IDS[name]}@sentence-transformers-"
            f"{sentence_transformers.__version__}"
        )

    @property
    def dim(self) -> int:
        return int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
        out = self._model.encode(
            list(texts),
            batch_size=batch_size,
            convert_to_numpy=True,
            normalize_embeddings=False,
            show_progress_bar=False,
        )
        return np.asarray(out, dtype=np.float32)


class ClipTextEncoder:
    """Text tower of CLIP ViT-B/32."""

    name = "clip-text"

    def __init__(self):
        try:
            import torch
            import transformers
        except ImportError as exc:
            raise EncoderError(
                f"encoder 'clip-text' needs transformers and torch: {exc}"
            ) from None
        try:
            self._model = transformers.CLIPModel.from_pretrained(_CLIP_ID)
            self._tokenizer = transformers.CLIPProcessor.from_pretrained(_CLIP_ID)
        except Exception as exc:
            raise EncoderError(
                f"could not load {_CLIP_ID!r} (assets unavailable?): {exc}"
            ) from None
        self._torch = torch
        self._model.eval()
        self.version = f"{_CLIP_ID}@transformers-{transformers.__version__}"

    @property
    def dim(self) -> int:
        return int(self._model.config.projection_dim)

    def encode(self, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(texts), batch_size):
                batch = list(texts[start : start + batch_size])
                tokens = self._tokenizer(
                    text=batch, return_tensors="pt", padding=True, truncation=True
                )
                feats = self._model.get_text_features(**tokens)
                chunks.append(feats.cpu().numpy().astype(np.float32))
        return np.vstack(chunks)


class FasttextBowEncoder:
    """Bag-of-words encoder: mean of word vectors, one per known token.

    Reads a word2vec text-format table (``count dim`` header line, then
    ``word v1 v2 ...`` rows). Unknown tokens are skipped; captions with no
    known token embed as the vocabulary mean and are reported by
    ``oov_only_rows`` after each encode call.
    """

    name = "fasttext-bow"

    def __init__(self, vectors_path: str | None = None):
        path = vectors_path or os.environ.get(WORD_VECTORS_ENV)
        if not path:
            raise EncoderError(
                "encoder 'fasttext-bow' needs a word-vector file: pass "
                f"vectors_path or set {WORD_VECTORS_ENV}"
            )
        self._table: dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise EncoderError(
                    f"{path}: expected 'count dim' header, got {header!r}"
                )
            self._dim = int(header[1])
            for lineno, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != self._dim + 1:
                    raise EncoderError(
                        f"{path}: line {lineno}: expected {self._dim} values"
                    )
                self._table[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
        if not self._table:
            raise EncoderError(f"{path}: empty vector table")
        self._vocab_mean = np.mean(list(self._table.values()), axis=0)
        self.version = f"word-vectors[{len(self._table)}x{self._dim}]@{path}"
        self.oov_only_rows: list[int] = []

    @property
    def dim(self) -> int:
        return self._dim

    def encode(self, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
        del batch_size  # table lookups; no batching needed
        self.oov_only_rows = []
        out = np.empty((len(texts), self._dim), dtype=np.float64)
        for row, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            known = [self._table[t] for t in tokens if t in self._table]
            if known:
                out[row] = np.mean(known, axis=0)
            else:
                out[row] = self._vocab_mean
                self.oov_only_rows.append(row)
        return out.astype(np.float32)


def make_encoder(name: str, word_vectors: str | None = None):
    if name in ("mpnet", "minilm"):
        return SentenceTransformerEncoder(name)
    if name == "clip-text":
        return ClipTextEncoder()
    if name == "fasttext-bow":
        return FasttextBowEncoder(word_vectors)
    raise EncoderError(
        f"unknown encoder {name!r}; supported: {', '.join(ENCODER_NAMES)}"
    )
