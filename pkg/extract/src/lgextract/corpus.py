"""Synthetic labeled caption corpora for pair-purity testing.

Captions are template-generated around concept phrases, so captions of the
same concept read like paraphrases of each other while captions of
different concepts share only incidental words. The generator is
deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass

from .extract import CaptionRecord

CONCEPTS = [
    "snowy owl", "aston martin", "sourdough loaf", "maple bonsai",
    "humpback whale", "cast iron skillet", "monarch butterfly",
    "electric unicycle", "persian rug", "gibson guitar", "siamese cat",
    "redwood canopy", "ceramic teapot", "carbon splitboard", "neon jellyfish",
    "vintage typewriter", "alpine marmot", "walnut workbench",
    "basalt column", "paper wasp nest", "copper kettle", "tidal pool",
    "prairie falcon", "mechanical keyboard", "terracotta planter",
    "fennel frond", "limestone arch", "velvet armchair", "glacier lagoon",
    "street mural", "oak barrel", "pine marten", "brass telescope",
    "coral outcrop", "linen quilt", "granite boulder", "honeybee swarm",
    "birch grove", "steel footbridge", "wicker basket", "lava field",
    "silk kimono", "clay amphora", "fog bank", "cedar sauna",
    "marble fountain", "kelp forest", "slate rooftop",
]

TEMPLATES = [
    "a photo of a {concept} {context}",
    "my {concept} {context}",
    "spotted this {concept} {context}",
    "the {concept} we found {context}",
    "itap of a {concept} {context}",
    "finally captured the {concept} {context}",
    "a close look at the {concept} {context}",
    "proud of this {concept} {context}",
]

CONTEXTS = [
    "this morning", "at sunset", "after the rain", "on our trip last week",
    "in the backyard", "near the harbor", "during golden hour",
    "on a foggy day", "yesterday evening", "just before the storm",
    "in perfect light", "over the weekend",
]


@dataclass(frozen=True)
class SynthCorpus:
    records: tuple[CaptionRecord, ...]
    labels: dict[str, str]  # record id -> concept


def synth_corpus(
    n_concepts: int, captions_per_concept: int, seed: int
) -> SynthCorpus:
    if n_concepts < 2:
        raise ValueError(f"n_concepts must be >= 2, got {n_concepts}")
    if n_concepts > len(CONCEPTS):
        raise ValueError(
            f"at most {len(CONCEPTS)} concepts available, got {n_concepts}"
        )
    if captions_per_concept < 1:
        raise ValueError("captions_per_concept must be >= 1")
    rng = random.Random(seed)
    records: list[CaptionRecord] = []
    labels: dict[str, str] = {}
    for ci in range(n_concepts):
        concept = CONCEPTS[ci]
        slug = concept.replace(" ", "-")
        for j in range(captions_per_concept):
            text = rng.choice(TEMPLATES).format(
                concept=concept, context=rng.choice(CONTEXTS)
            )
            rid = f"{slug}-{j}"
            records.append(CaptionRecord(rid, text))
            labels[rid] = concept
    return SynthCorpus(records=tuple(records), labels=labels)


def write_corpus(corpus: SynthCorpus, captions_path, labels_path) -> None:
    """Captions as JSONL; ground-truth labels as CSV (id,concept)."""
    with open(captions_path, "w", encoding="utf-8", newline="\n") as out:
        for rec in corpus.records:
            out.write(
                json.dumps(
                    {"id": rec.record_id, "text": rec.text}, ensure_ascii=False
                )
                + "\n"
            )
    with open(labels_path, "w", encoding="utf-8", newline="\n") as out:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["id", "concept"])
        for rec in corpus.records:
            writer.writerow([rec.record_id, corpus.labels[rec.record_id]])


def vocabulary() -> set[str]:
    """Every token the generator can emit (used to build test fixtures)."""
    import re

    words: set[str] = set()
    for template in TEMPLATES:
        words |= set(re.findall(r"[a-z']+", template))
    for pool in (CONCEPTS, CONTEXTS):
        for phrase in pool:
            words |= set(re.findall(r"[a-z']+", phrase))
    words.discard("concept")
    words.discard("context")
    return words
