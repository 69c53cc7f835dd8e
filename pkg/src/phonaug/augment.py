"""Phoneme-space augmentation: recognizer-noise swaps and similar-phone
substitution driven by a cosine-similarity map over per-phone feature
vectors.

Both transforms preserve utterance labels and token counts, and only emit
symbols already present in the vocabulary. Identical (input, policy, map,
seed) always produces an identical result.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .corpus import PAD, Dataset, PhoneCandidate, PhoneToken, Transcript
from .errors import CapacityError, ConfigError
from .seeding import derive_seed

EXPANSION_MODES = ("replace", "append")
AUG_SUFFIX = "#aug1"


@dataclass(frozen=True)
class SimilarityMap:
    """phone -> nearest distinct phone under cosine similarity, plus the score."""

    neighbor: dict[str, str]
    score: dict[str, float]

    def __post_init__(self):
        for p, q in self.neighbor.items():
            if p == q:
                raise ValueError(f"phone {p!r} mapped to itself")
            if PAD in (p, q):
                raise ValueError("similarity map must not involve the PAD symbol")
        for p, s in self.score.items():
            if not -1.0 - 1e-9 <= s <= 1.0 + 1e-9:
                raise ValueError(f"cosine score {s} for {p!r} outside [-1, 1]")


@dataclass(frozen=True)
class AugmentPolicy:
    noise_swaps: int = 1  # 0 disables recognizer-noise swaps
    similar_rate: float = 0.1
    use_voice: bool = False
    expansion_mode: str = "replace"

    def __post_init__(self):
        if self.noise_swaps not in (0, 1, 2):
            raise ValueError(f"noise_swaps must be 0, 1 or 2, got {self.noise_swaps}")
        if not 0.0 <= self.similar_rate <= 1.0:
            raise ValueError(f"similar_rate must be in [0, 1], got {self.similar_rate}")
        if self.expansion_mode not in EXPANSION_MODES:
            raise ValueError(f"expansion_mode must be one of {EXPANSION_MODES}")


def build_similarity_map(phone_vectors: Mapping[str, np.ndarray]) -> SimilarityMap:
    """Nearest-neighbor map under cosine similarity.

    neighbor[p] = argmax over q != p of cos(v_p, v_q), ties broken by
    ascending symbol order; score[p] is that maximum.
    """
    symbols = sorted(phone_vectors)
    if len(symbols) < 2:
        raise CapacityError(f"need at least 2 phones, got {len(symbols)}")
    vectors = {}
    dim = None
    for sym in symbols:
        v = np.asarray(phone_vectors[sym], dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"vector for {sym!r} must be one-dimensional")
        if dim is None:
            dim = v.shape[0]
        elif v.shape[0] != dim:
            raise ValueError(f"vector for {sym!r} has dimension {v.shape[0]}, expected {dim}")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ValueError(f"zero vector for phone {sym!r}")
        vectors[sym] = v / norm

    neighbor: dict[str, str] = {}
    score: dict[str, float] = {}
    for p in symbols:
        best_sym, best_cos = None, -math.inf
        for q in symbols:
            if q == p:
                continue
            c = float(np.dot(vectors[p], vectors[q]))
            if c > best_cos:  # ascending-symbol iteration keeps the first of a tie
                best_sym, best_cos = q, c
        neighbor[p] = best_sym
        score[p] = best_cos
    return SimilarityMap(neighbor, score)


def save_similarity_map(m: SimilarityMap, path) -> None:
    obj = {"neighbors": dict(sorted(m.neighbor.items())), "scores": dict(sorted(m.score.items()))}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_similarity_map(path) -> SimilarityMap:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return SimilarityMap(dict(obj["neighbors"]), {k: float(v) for k, v in obj["scores"].items()})


def allosaurus_noise(t: Transcript, n_swaps: int, seed: int) -> Transcript:
    """Promote the rank-2 candidate to rank-1 at seeded positions.

    Picks min(n_swaps, #tokens with >= 2 candidates) distinct eligible
    positions and swaps the first two candidates there (log-probabilities
    travel with their symbols). Every other token is returned unchanged.
    """
    if n_swaps not in (1, 2):
        raise ValueError(f"n_swaps must be 1 or 2, got {n_swaps}")
    if not t.tokens:
        raise ValueError("transcript is empty")
    eligible = [i for i, tok in enumerate(t.tokens) if tok.has_alternative]
    if not eligible:
        return t
    chosen = set(random.Random(seed).sample(eligible, min(n_swaps, len(eligible))))
    tokens = list(t.tokens)
    for i in chosen:
        c = tokens[i].candidates
        tokens[i] = PhoneToken((c[1], c[0]) + c[2:])
    return Transcript(tuple(tokens))


def similar_phone_augment(t: Transcript, m: SimilarityMap, rate: float, seed: int) -> Transcript:
    """Replace each token's top-1 symbol with its map neighbor, with seeded
    probability `rate` per token. Tokens without a map entry never change.

    One uniform draw is consumed per token in order, so the substitution
    pattern can be re-derived from the seed alone.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    rng = random.Random(seed)
    tokens = []
    for tok in t.tokens:
        draw = rng.random()
        target = m.neighbor.get(tok.top1)
        if target is None or draw >= rate:
            tokens.append(tok)
            continue
        head = PhoneCandidate(target, tok.candidates[0].logprob)
        # drop a lower-rank duplicate of the new symbol, if any
        rest = tuple(c for c in tok.candidates[1:] if c.symbol != target)
        tokens.append(PhoneToken((head,) + rest))
    return Transcript(tuple(tokens))


def _augment_transcript(
    t: Transcript, policy: AugmentPolicy, m: SimilarityMap | None, seed: int
) -> Transcript:
    if policy.noise_swaps > 0:
        t = allosaurus_noise(t, policy.noise_swaps, derive_seed(seed, 0))
    if policy.similar_rate > 0.0:
        t = similar_phone_augment(t, m, policy.similar_rate, derive_seed(seed, 1))
    return t


def expand_dataset(
    d: Dataset, policy: AugmentPolicy, m: SimilarityMap | None, seed: int
) -> Dataset:
    """Append one augmented copy of every train utterance (ids + "#aug1").

    Valid/test utterances pass through untouched. Replace-mode policies
    are handled online by the training loop, not here.
    """
    if policy.expansion_mode != "append":
        raise ConfigError("expand_dataset requires expansion_mode='append'")
    if policy.similar_rate > 0.0 and m is None:
        raise ConfigError("similar_rate > 0 requires a similarity map")
    copies = []
    for idx, u in enumerate(u for u in d.utterances if u.split == "train"):
        t = _augment_transcript(u.transcript, policy, m, derive_seed(seed, idx))
        copies.append(replace(u, id=u.id + AUG_SUFFIX, transcript=t))
    return Dataset(d.utterances + tuple(copies), d.vocabulary)
