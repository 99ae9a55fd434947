"""lgextract command line: run extraction jobs, generate synthetic corpora."""

from __future__ import annotations

import sys

import click

from . import __version__
from .corpus import synth_corpus, write_corpus
from .encoders import ENCODER_NAMES, EncoderError
from .extract import ExtractionJob, extract


@click.group()
@click.version_option(version=__version__, prog_name="lgextract")
def main() -> None:
    """Caption embedding extraction into .lgem stores."""


@main.command()
@click.option("--captions", required=True, type=click.Path())
@click.option("--encoder", required=True, type=click.Choice(ENCODER_NAMES))
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--word-vectors", type=click.Path(), default=None,
              help="word2vec-format table for fasttext-bow.")
@click.option("-o", "--out", required=True, type=click.Path())
def run(captions, encoder, batch_size, word_vectors, out):
    """Embed a captions JSONL file into OUT (.lgem) plus a sidecar manifest."""
    try:
        job = ExtractionJob(
            captions_path=captions,
            encoder=encoder,
            output_path=out,
            batch_size=batch_size,
            word_vectors=word_vectors,
        )
        manifest = extract(job)
    except (EncoderError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        raise SystemExit(2)
    print(
        f"embedded {manifest['n']} captions at dim {manifest['dim']} "
        f"with {manifest['encoder']}"
    )


@main.command()
@click.option("--concepts", type=int, required=True)
@click.option("--per-concept", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-captions", required=True, type=click.Path())
@click.option("--out-labels", required=True, type=click.Path())
def synth(concepts, per_concept, seed, out_captions, out_labels):
    """Generate a labeled synthetic caption corpus."""
    try:
        corpus = synth_corpus(concepts, per_concept, seed)
        write_corpus(corpus, out_captions, out_labels)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        raise SystemExit(2)
    print(f"wrote {len(corpus.records)} captions over {concepts} concepts")


if __name__ == "__main__":
    main()
