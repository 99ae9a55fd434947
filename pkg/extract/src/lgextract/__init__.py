"""Caption embedding extraction into .lgem stores, plus synthetic corpora."""

__version__ = "0.1.0"

from .extract import CaptionRecord, ExtractionJob, extract, read_captions
from .corpus import synth_corpus

__all__ = [
    "CaptionRecord",
    "ExtractionJob",
    "extract",
    "read_captions",
    "synth_corpus",
    "__version__",
]
