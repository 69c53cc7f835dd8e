"""Utterance/transcript data model, JSONL ingestion, and corpus subsampling.

A transcript is a sequence of phone tokens; each token keeps the
recognizer's top-k candidate phones with natural-log probabilities.
Datasets are immutable after loading: every operation returns new values.

Transcript file format (UTF-8 JSON Lines), one utterance per line:

    {"id": str, "speaker": str, "intent": str,
     "split": "train"|"valid"|"test", "audio": str|null,
     "phones": [{"cands": [[symbol, logprob], ...]}, ...]}
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    CapacityError,
    IntegrityError,
    ParseError,
    RangeError,
    VocabularyError,
)

PAD = "<pad>"
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class PhoneCandidate:
    """One entry of a token's phone posterior: symbol plus log-probability."""

    symbol: str
    logprob: float

    def __post_init__(self):
        if not self.symbol or any(c.isspace() for c in self.symbol):
            raise ValueError(f"bad phone symbol {self.symbol!r}")
        if self.logprob > 0.0:
            raise RangeError(f"logprob {self.logprob} > 0 for symbol {self.symbol!r}")


@dataclass(frozen=True)
class PhoneToken:
    """Ordered candidate list for one phone position.

    At ingestion candidates are sorted by descending logprob (ties by
    ascending symbol). Augmentation may later permute the list; the head
    of the list is always the token's effective top-1 symbol.
    """

    candidates: tuple[PhoneCandidate, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("token needs at least one candidate")
        symbols = [c.symbol for c in self.candidates]
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"duplicate candidate symbols in token: {symbols}")

    @property
    def top1(self) -> str:
        return self.candidates[0].symbol

    @property
    def has_alternative(self) -> bool:
        return len(self.candidates) >= 2


def make_token(pairs: Iterable[tuple[str, float]]) -> PhoneToken:
    """Build a token from (symbol, logprob) pairs, applying the ingestion sort."""
    cands = sorted(
        (PhoneCandidate(s, lp) for s, lp in pairs),
        key=lambda c: (-c.logprob, c.symbol),
    )
    return PhoneToken(tuple(cands))


@dataclass(frozen=True)
class Transcript:
    tokens: tuple[PhoneToken, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def top1_symbols(self) -> list[str]:
        return [t.top1 for t in self.tokens]


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker: str
    intent: str
    split: str
    transcript: Transcript
    audio_path: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class Dataset:
    """Labeled utterances plus the phone vocabulary (PAD reserved at index 0)."""

    utterances: tuple[Utterance, ...]
    vocabulary: tuple[str, ...]

    def split(self, name: str) -> list[Utterance]:
        return [u for u in self.utterances if u.split == name]

    def intents(self, split: str = "train") -> list[str]:
        return sorted({u.intent for u in self.utterances if u.split == split})

    def speakers(self, split: str = "train") -> list[str]:
        return sorted({u.speaker for u in self.utterances if u.split == split})


@dataclass(frozen=True)
class GridSpec:
    """Experiment axes: intent counts x speaker counts x recordings-per-speaker."""

    intents_counts: tuple[int, ...]
    speakers_counts: tuple[int, ...]
    recordings_counts: tuple[int, ...]
    trials: int = 3
    base_seed: int = 0

    def __post_init__(self):
        for axis in (self.intents_counts, self.speakers_counts, self.recordings_counts):
            if not axis or any(v < 1 for v in axis):
                raise ValueError("all grid counts must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def build_vocabulary(utterances: Iterable[Utterance]) -> tuple[str, ...]:
    """PAD followed by every candidate symbol, sorted for reproducibility."""
    symbols: set[str] = set()
    for u in utterances:
        for tok in u.transcript.tokens:
            for cand in tok.candidates:
                symbols.add(cand.symbol)
    return (PAD,) + tuple(sorted(symbols))


def _parse_line(obj, line_no: int) -> Utterance:
    if not isinstance(obj, dict):
        raise ParseError(f"line {line_no}: expected a JSON object")
    allowed = {"id", "speaker", "intent", "split", "audio", "phones"}
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"line {line_no}: unknown keys {sorted(unknown)}")
    try:
        uid = obj["id"]
        speaker = obj["speaker"]
        intent = obj["intent"]
        split = obj["split"]
        phones = obj["phones"]
    except KeyError as e:
        raise ParseError(f"line {line_no}: missing key {e.args[0]!r}") from None
    audio = obj.get("audio")
    if not all(isinstance(v, str) and v for v in (uid, speaker, intent, split)):
        raise ParseError(f"line {line_no}: id/speaker/intent/split must be non-empty strings")
    if split not in SPLITS:
        raise ParseError(f"line {line_no}: split {split!r} not in {SPLITS}")
    if audio is not None and not isinstance(audio, str):
        raise ParseError(f"line {line_no}: audio must be a string or null")
    if not isinstance(phones, list) or not phones:
        raise ParseError(f"line {line_no}: phones must be a non-empty list")

    tokens = []
    for pos, entry in enumerate(phones):
        if not isinstance(entry, dict) or set(entry) != {"cands"}:
            raise ParseError(f"line {line_no}: token {pos} must be an object with key 'cands'")
        cands = entry["cands"]
        if not isinstance(cands, list) or not cands:
            raise ParseError(f"line {line_no}: token {pos} needs at least one candidate")
        pairs = []
        for c in cands:
            if (
                not isinstance(c, list)
                or len(c) != 2
                or not isinstance(c[0], str)
                or not isinstance(c[1], (int, float))
            ):
                raise ParseError(f"line {line_no}: token {pos} candidate must be [symbol, logprob]")
            pairs.append((c[0], float(c[1])))
        try:
            tokens.append(make_token(pairs))
        except RangeError as e:
            raise RangeError(f"line {line_no}: {e}") from None
        except ValueError as e:
            raise ParseError(f"line {line_no}: {e}") from None
        if any(cand.symbol == PAD for cand in tokens[-1].candidates):
            raise ParseError(f"line {line_no}: reserved symbol {PAD!r} in transcript")

    return Utterance(uid, speaker, intent, split, Transcript(tuple(tokens)), audio)


def load_dataset(path) -> Dataset:
    """Read a JSONL transcript file into a Dataset.

    Utterance order follows file order; candidate lists are re-sorted to
    descending logprob. Raises ParseError (with the line number) on
    malformed lines, RangeError on positive logprobs, IntegrityError on
    duplicate ids.
    """
    utterances: list[Utterance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ParseError(f"line {line_no}: invalid JSON ({e.msg})") from None
            utt = _parse_line(obj, line_no)
            if utt.id in seen:
                raise IntegrityError(f"line {line_no}: duplicate utterance id {utt.id!r}")
            seen.add(utt.id)
            utterances.append(utt)
    return Dataset(tuple(utterances), build_vocabulary(utterances))


def _utterance_to_obj(u: Utterance) -> dict:
    return {
        "id": u.id,
        "speaker": u.speaker,
        "intent": u.intent,
        "split": u.split,
        "audio": u.audio_path,
        "phones": [
            {"cands": [[c.symbol, c.logprob] for c in tok.candidates]}
            for tok in u.transcript.tokens
        ],
    }


def save_dataset(dataset: Dataset, path) -> None:
    """Write a Dataset back to JSONL (inverse of load_dataset)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in dataset.utterances:
            fh.write(json.dumps(_utterance_to_obj(u), ensure_ascii=False))
            fh.write("\n")


def subsample(
    dataset: Dataset, n_intents: int, n_speakers: int, n_recordings: int, seed: int
) -> Dataset:
    """Draw an I x S x K training subset; filter valid/test to the drawn intents.

    Intents, speakers, and per-(speaker, intent) recordings are drawn
    uniformly without replacement over lexicographically sorted labels, so
    the selection depends only on (dataset, I, S, K, seed). The valid and
    test splits keep every utterance of the selected intents (no
    down-sampling). The vocabulary is inherited unchanged.
    """
    rng = random.Random(seed)
    train = dataset.split("train")

    intents = sorted({u.intent for u in train})
    if len(intents) < n_intents:
        raise CapacityError(
            f"intents: need {n_intents}, train split has {len(intents)}"
        )
    chosen_intents = set(rng.sample(intents, n_intents))

    speakers = sorted({u.speaker for u in train})
    if len(speakers) < n_speakers:
        raise CapacityError(
            f"speakers: need {n_speakers}, train split has {len(speakers)}"
        )
    chosen_speakers = set(rng.sample(speakers, n_speakers))

    chosen_ids: set[str] = set()
    for intent in sorted(chosen_intents):
        for speaker in sorted(chosen_speakers):
            ids = sorted(
                u.id for u in train if u.intent == intent and u.speaker == speaker
            )
            if len(ids) < n_recordings:
                raise CapacityError(
                    f"recordings: need {n_recordings} for speaker {speaker!r} / "
                    f"intent {intent!r}, have {len(ids)}"
                )
            chosen_ids.update(rng.sample(ids, n_recordings))

    kept = tuple(
        u
        for u in dataset.utterances
        if (u.split == "train" and u.id in chosen_ids)
        or (u.split != "train" and u.intent in chosen_intents)
    )
    return Dataset(kept, dataset.vocabulary)


def encode(transcript: Transcript, vocabulary: Sequence[str]) -> list[int]:
    """Map top-1 symbols to vocabulary ids. PAD (id 0) is never emitted."""
    index = {sym: i for i, sym in enumerate(vocabulary)}
    ids = []
    for tok in transcript.tokens:
        try:
            ids.append(index[tok.top1])
        except KeyError:
            raise VocabularyError(f"symbol {tok.top1!r} not in vocabulary") from None
    return ids


def decode(ids: Sequence[int], vocabulary: Sequence[str]) -> list[str]:
    """Inverse of encode over top-1 symbols."""
    return [vocabulary[i] for i in ids]
