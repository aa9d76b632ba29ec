"""Synthetic nested-entity corpora from a small fixed stochastic grammar.

Sentences are sequences of chunks: filler words, bare cities (GPE), directed
regions ("north calder" — a GPE containing a GPE), and councils
("north calder council" — an ORG over a region, nesting depth 3). The
surface string determines the labels, so the corpora are learnable, and the
grammar is fully seeded, so they are reproducible.
"""

from __future__ import annotations

import numpy as np

from nestner.core import Mention, Sentence, Span, Token
from nestner.corpus import TaggedCorpus

CITIES = ("avalon", "brimford", "calder", "dorwin", "elmsey", "farrow")
FILLER = ("people", "walked", "near", "the", "yesterday", "quietly", "again", "market")
DIRECTIONS = ("north", "south")


def _pick(rng: np.random.Generator, items: tuple[str, ...]) -> str:
    return items[int(rng.integers(len(items)))]


def _chunk(rng: np.random.Generator) -> tuple[list[str], list[tuple[str, int, int]]]:
    roll = rng.random()
    if roll < 0.45:
        return [_pick(rng, FILLER)], []
    if roll < 0.65:
        return [_pick(rng, CITIES)], [("GPE", 0, 1)]
    if roll < 0.80:
        direction, city = _pick(rng, DIRECTIONS), _pick(rng, CITIES)
        return [direction, city], [("GPE", 0, 2), ("GPE", 1, 2)]
    if roll < 0.90:
        city = _pick(rng, CITIES)
        return [city, "council"], [("ORG", 0, 2), ("GPE", 0, 1)]
    direction, city = _pick(rng, DIRECTIONS), _pick(rng, CITIES)
    return (
        [direction, city, "council"],
        [("ORG", 0, 3), ("GPE", 0, 2), ("GPE", 1, 2)],
    )


def generate(n_sentences: int, seed: int) -> TaggedCorpus:
    rng = np.random.default_rng(seed)
    sentences = []
    for _ in range(n_sentences):
        n_chunks = int(rng.integers(2, 6))
        tokens: list[Token] = []
        mentions: list[Mention] = []
        for _ in range(n_chunks):
            chunk_tokens, chunk_mentions = _chunk(rng)
            base = len(tokens)
            tokens.extend(Token(form) for form in chunk_tokens)
            mentions.extend(
                Mention(t, Span(base + s, base + e)) for t, s, e in chunk_mentions
            )
        sentences.append(Sentence(tuple(tokens), frozenset(mentions)))
    return TaggedCorpus(tuple(sentences))
