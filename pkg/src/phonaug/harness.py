"""Training loop with augmentation hooks, evaluation, the speakers x
recordings x intents experiment grid, synthetic-corpus generation, and
CSV/SVG result emission.

Everything is a pure function of (inputs, seeds): grid cells derive their
seeds by mixing the base seed with the cell coordinates, so cells can run
in any order (or in parallel) and still produce byte-identical output
files.
"""

from __future__ import annotations

import concurrent.futures
import math
import os
import random
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import nn
from .audio import Waveform, write_wav
from .augment import (
    AUG_SUFFIX,
    AugmentPolicy,
    SimilarityMap,
    allosaurus_noise,
    similar_phone_augment,
)
from .corpus import (
    Dataset,
    GridSpec,
    Transcript,
    Utterance,
    build_vocabulary,
    encode,
    make_token,
    subsample,
)
from .errors import CapacityError, ConfigError, DataError
from .model import Model, ModelConfig, build
from .seeding import derive_seed

METHODS = ("baseline", "voice", "phone_noise", "voice+phone_noise", "similar_phone")
VOICE_SUFFIX = "#voice"

# derive_seed stream tags inside one training run
_S_SHUFFLE = 1
_S_AUGMENT = 2

# grid per-cell streams
_S_SUBSAMPLE = 1
_S_BUILD = 2
_S_TRAIN = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    patience: int = 20
    method: str = "baseline"
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: float | None


@dataclass(frozen=True)
class ResultRow:
    method: str
    n_intents: int
    n_speakers: int
    n_recordings: int
    trial: int
    seed: int
    accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


def _argmax_label(probs: np.ndarray, labels) -> str:
    best = min(range(len(probs)), key=lambda i: (-probs[i], labels[i]))
    return labels[best]


def _build_pool(dataset: Dataset, cfg: TrainConfig) -> list[tuple[Utterance, bool]]:
    """Training pool entries: (utterance, refresh_noise_each_epoch).

    phone_noise methods double the pool: originals stay clean and the
    appended copies get a fresh rank-2 swap every epoch.
    """
    train = dataset.split("train")
    if not train:
        raise DataError("train split is empty")
    pool = [(u, False) for u in train]
    if cfg.method in ("phone_noise", "voice+phone_noise"):
        if cfg.policy.noise_swaps < 1:
            raise ConfigError(f"method {cfg.method!r} requires policy.noise_swaps >= 1")
        pool += [(replace(u, id=u.id + AUG_SUFFIX), True) for u in train]
    return pool


def train(
    model: Model,
    dataset: Dataset,
    cfg: TrainConfig,
    similarity_map: SimilarityMap | None = None,
) -> tuple[Model, list[EpochStats]]:
    """Train with per-method augmentation and early stopping on valid accuracy.

    Stops once valid accuracy has not strictly improved for `patience`
    epochs and restores the best checkpoint (ties on valid accuracy go to
    the epoch with the lower train loss, so a fully fitted model wins).
    Without a valid split all epochs run and the final parameters stand.
    """
    if cfg.method == "similar_phone" and similarity_map is None:
        raise ConfigError("method 'similar_phone' requires a similarity map")
    pool = _build_pool(dataset, cfg)
    vocab = dataset.vocabulary
    labels = model.intent_labels
    label_index = {lab: i for i, lab in enumerate(labels)}
    for u, _ in pool:
        if u.intent not in label_index:
            raise DataError(f"utterance {u.id!r} has unknown intent {u.intent!r}")

    valid = [(encode(u.transcript, vocab), u.intent) for u in dataset.split("valid")]
    params = model.parameters()
    shuffle_rng = random.Random(derive_seed(cfg.seed, _S_SHUFFLE))
    order = list(range(len(pool)))

    history: list[EpochStats] = []
    best_state: list[np.ndarray] | None = None
    best_valid = -1.0
    best_loss = math.inf
    since_improve = 0

    # sequences of small matmuls run faster on one BLAS thread
    with threadpool_limits(limits=1, user_api="blas"):
        for epoch in range(cfg.epochs):
            shuffle_rng.shuffle(order)
            losses = []
            correct = 0
            in_batch = 0
            for pos in order:
                u, refresh = pool[pos]
                t = u.transcript
                if refresh:
                    t = allosaurus_noise(
                        t, cfg.policy.noise_swaps, derive_seed(cfg.seed, _S_AUGMENT, epoch, pos)
                    )
                elif cfg.method == "similar_phone" and cfg.policy.similar_rate > 0:
                    t = similar_phone_augment(
                        t,
                        similarity_map,
                        cfg.policy.similar_rate,
                        derive_seed(cfg.seed, _S_AUGMENT, epoch, pos),
                    )
                target = np.zeros(len(labels))
                target[label_index[u.intent]] = 1.0
                loss, probs = model.forward_backward(encode(t, vocab), target)
                losses.append(loss)
                correct += _argmax_label(probs, labels) == u.intent
                in_batch += 1
                if in_batch == cfg.batch_size:
                    _apply_batch(params, in_batch, cfg.lr)
                    in_batch = 0
            if in_batch:
                _apply_batch(params, in_batch, cfg.lr)
            nn.check_finite(params)

            train_loss = float(np.mean(losses))
            train_acc = correct / len(pool)
            valid_acc = None
            if valid:
                hits = sum(
                    _argmax_label(model.forward(ids), labels) == intent
                    for ids, intent in valid
                )
                valid_acc = hits / len(valid)
            history.append(EpochStats(epoch, train_loss, train_acc, valid_acc))

            if valid:
                improved = valid_acc > best_valid
                if improved or (valid_acc == best_valid and train_loss < best_loss):
                    best_state = [p.value.copy() for p in params]
                    best_valid = valid_acc
                    best_loss = train_loss
                since_improve = 0 if improved else since_improve + 1
                if since_improve >= cfg.patience:
                    break

    if best_state is not None:
        for p, value in zip(params, best_state):
            p.value = value.copy()
    return model, history


def _apply_batch(params, count: int, lr: float) -> None:
    for p in params:
        nn.adam_step(p, lr=lr, grad_scale=1.0 / count)


def evaluate(model: Model, dataset: Dataset, split: str) -> float:
    """Fraction of utterances in `split` whose prediction matches the label."""
    from .model import predict

    items = dataset.split(split)
    if not items:
        raise DataError(f"split {split!r} is empty")
    hits = sum(predict(model, u.transcript, dataset.vocabulary) == u.intent for u in items)
    return hits / len(items)


def merge_voice_variants(dataset: Dataset, voice_dataset: Dataset) -> Dataset:
    """Add the voice-augmented variant of every train utterance.

    Variants are matched by id (source id + "#voice") from the companion
    transcript file produced offline from augmented recordings. Valid and
    test splits stay untouched; the vocabulary becomes the union.
    """
    by_id = {u.id: u for u in voice_dataset.utterances}
    variants = []
    for u in dataset.split("train"):
        v = by_id.get(u.id + VOICE_SUFFIX)
        if v is not None:
            variants.append(replace(v, split="train"))
    if not variants:
        raise DataError("no voice variants matched the train split")
    merged = dataset.utterances + tuple(variants)
    vocab = dataset.vocabulary
    if not {s for u in variants for t in u.transcript.tokens for s in
            (c.symbol for c in t.candidates)} <= set(vocab):
        vocab = build_vocabulary(merged)
    return Dataset(merged, vocab)


# -- experiment grid ---------------------------------------------------------

_WORKER: dict = {}


def _cell_seed(base_seed: int, method: str, i: int, s: int, k: int, trial: int) -> int:
    return derive_seed(base_seed, METHODS.index(method), i, s, k, trial)


def _run_cell(args):
    method, i, s, k, trial = args
    dataset: Dataset = _WORKER["dataset"]
    voice: Dataset | None = _WORKER["voice"]
    sim_map: SimilarityMap | None = _WORKER["map"]
    cfg_template: TrainConfig = _WORKER["cfg"]
    model_kwargs: dict = _WORKER["model_kwargs"]

    seed = _cell_seed(_WORKER["base_seed"], method, i, s, k, trial)
    try:
        sub = subsample(dataset, i, s, k, derive_seed(seed, _S_SUBSAMPLE))
    except CapacityError as e:
        raise CapacityError(f"cell (I={i}, S={s}, K={k}): {e}") from None
    if method in ("voice", "voice+phone_noise"):
        sub = merge_voice_variants(sub, voice)
    labels = sub.intents("train")
    config = ModelConfig(
        vocab_size=len(sub.vocabulary), n_intents=len(labels), **model_kwargs
    )
    mdl = build(config, labels, derive_seed(seed, _S_BUILD))
    cfg = replace(cfg_template, method=method, seed=derive_seed(seed, _S_TRAIN))
    train(mdl, sub, cfg, sim_map)
    return ResultRow(method, i, s, k, trial, seed, evaluate(mdl, sub, "test"))


def _init_worker(dataset, voice, sim_map, cfg, model_kwargs, base_seed):
    _WORKER.update(
        dataset=dataset, voice=voice, map=sim_map, cfg=cfg,
        model_kwargs=model_kwargs, base_seed=base_seed,
    )


def run_grid(
    dataset: Dataset,
    grid: GridSpec,
    methods,
    train_cfg_template: TrainConfig,
    similarity_map: SimilarityMap | None = None,
    voice_dataset: Dataset | None = None,
    model_kwargs: dict | None = None,
    jobs: int = 1,
) -> list[ResultRow]:
    """Run every (method, I, S, K, trial) cell and return sorted rows.

    Each cell's seed mixes the base seed with the cell coordinates
    (method index in the canonical METHODS order), so results do not
    depend on which methods run together or in what order.
    """
    methods = tuple(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; choose from {METHODS}")
    if any(m in ("voice", "voice+phone_noise") for m in methods) and voice_dataset is None:
        raise ConfigError("voice methods require a voice-augmented transcript dataset")
    if "similar_phone" in methods and similarity_map is None:
        raise ConfigError("method 'similar_phone' requires a similarity map")
    model_kwargs = dict(model_kwargs or {})

    cells = [
        (m, i, s, k, trial)
        for m in methods
        for i in grid.intents_counts
        for s in grid.speakers_counts
        for k in grid.recordings_counts
        for trial in range(grid.trials)
    ]
    _init_worker(dataset, voice_dataset, similarity_map, train_cfg_template,
                 model_kwargs, grid.base_seed)
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(dataset, voice_dataset, similarity_map, train_cfg_template,
                      model_kwargs, grid.base_seed),
        ) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    rows.sort(key=lambda r: (r.method, r.n_intents, r.n_speakers, r.n_recordings, r.trial))
    return rows


# -- synthetic corpus --------------------------------------------------------

ALPHABET = (
    "a", "b", "d", "e", "f", "g", "i", "k", "l", "m",
    "n", "o", "p", "r", "s", "t", "u", "v", "w", "z",
    "ɑ", "ɔ", "ə", "ɛ", "ɪ", "ʃ", "ʊ", "ʒ", "ŋ", "θ",
)

_ACCENT_PROB = 0.15  # fraction of the alphabet each speaker consistently shifts
_RECORDING_NOISE = 0.05  # per-token random substitution per recording
_PHONE_SECONDS = 0.08
_WAV_RATE = 16000

# corpus generator streams
_S_CANON = 1
_S_ACCENT = 2
_S_REALIZE = 3


def _split_sizes(n: int) -> tuple[int, int, int]:
    """train/valid/test counts per (intent, speaker): 70/15/15, >= 1 test."""
    n_test = max(1, round(0.15 * n))
    n_valid = min(round(0.15 * n), n - n_test)
    return n - n_valid - n_test, n_valid, n_test


def _choose_other(rng: random.Random, pool, current: str) -> str:
    other = rng.choice(pool)
    while other == current:
        other = rng.choice(pool)
    return other


def generate_synthetic_corpus(
    n_intents: int,
    n_speakers: int,
    n_recordings: int,
    seed: int,
    wav_dir=None,
) -> Dataset:
    """Separable stand-in corpus shaped like a robot-command dataset.

    Every intent gets a canonical 6-12 phone string over a 30-phone
    alphabet. Each (speaker, recording) realization applies the speaker's
    consistent accent substitutions plus light per-recording noise, and
    carries a 2-candidate posterior per token whose rank-2 entry is the
    canonical phone whenever the top-1 was perturbed. With wav_dir set,
    each utterance also gets a tonal WAV (one sine chord per phone).
    """
    if min(n_intents, n_speakers, n_recordings) < 1:
        raise ValueError("all counts must be >= 1")

    canon_rng = random.Random(derive_seed(seed, _S_CANON))
    canonical = {}
    for i in range(n_intents):
        length = canon_rng.randint(6, 12)
        canonical[f"intent{i:02d}"] = [canon_rng.choice(ALPHABET) for _ in range(length)]

    accents = {}
    for j in range(n_speakers):
        rng = random.Random(derive_seed(seed, _S_ACCENT, j))
        accents[f"spk{j:02d}"] = {
            p: _choose_other(rng, ALPHABET, p) for p in ALPHABET if rng.random() < _ACCENT_PROB
        }

    n_train, n_valid, _ = _split_sizes(n_recordings)
    utterances = []
    for i, (intent, phones) in enumerate(sorted(canonical.items())):
        for j, (speaker, accent) in enumerate(sorted(accents.items())):
            for r in range(n_recordings):
                rng = random.Random(derive_seed(seed, _S_REALIZE, i, j, r))
                tokens = []
                for true_sym in phones:
                    sym = accent.get(true_sym, true_sym)
                    if rng.random() < _RECORDING_NOISE:
                        sym = _choose_other(rng, ALPHABET, sym)
                    p1 = rng.uniform(0.55, 0.95)
                    second = true_sym if sym != true_sym else _choose_other(rng, ALPHABET, sym)
                    p2 = rng.uniform(0.05, 1.0 - p1)
                    tokens.append(make_token([(sym, math.log(p1)), (second, math.log(p2))]))
                split = "train" if r < n_train else ("valid" if r < n_train + n_valid else "test")
                uid = f"{intent}_{speaker}_r{r:02d}"
                audio_path = None
                if wav_dir is not None:
                    audio_path = _write_phone_wav(wav_dir, uid, [t.top1 for t in tokens])
                utterances.append(
                    Utterance(uid, speaker, intent, split, Transcript(tuple(tokens)), audio_path)
                )
    return Dataset(tuple(utterances), build_vocabulary(utterances))


def _write_phone_wav(wav_dir, uid: str, symbols: list[str]) -> str:
    os.makedirs(wav_dir, exist_ok=True)
    n = int(_PHONE_SECONDS * _WAV_RATE)
    t = np.arange(n) / _WAV_RATE
    pieces = []
    for sym in symbols:
        p = ALPHABET.index(sym)
        f1 = 220.0 * 2.0 ** (p / 12.0)
        chord = 0.25 * np.sin(2 * np.pi * f1 * t) + 0.25 * np.sin(2 * np.pi * 1.5 * f1 * t)
        pieces.append(chord)
    path = os.path.join(str(wav_dir), f"{uid}.wav")
    write_wav(path, Waveform(np.concatenate(pieces), _WAV_RATE))
    return path


_VOICE_SUB_PROB = 0.12


def generate_voice_companion(dataset: Dataset, seed: int) -> Dataset:
    """Simulate re-transcribing voice-augmented recordings.

    Each utterance gets a "#voice" variant whose top-1 phones are
    re-drawn with light substitution noise (pool = the dataset's own
    vocabulary, so closure is preserved). Stands in for the offline
    augment-audio -> phone-recognizer pipeline.
    """
    pool = list(dataset.vocabulary[1:])
    variants = []
    for idx, u in enumerate(dataset.utterances):
        rng = random.Random(derive_seed(seed, idx))
        tokens = []
        for tok in u.transcript.tokens:
            if rng.random() < _VOICE_SUB_PROB:
                old = tok.candidates[0]
                new_sym = _choose_other(rng, pool, old.symbol)
                drop = old.logprob - rng.uniform(0.1, 1.5)
                tokens.append(make_token([(new_sym, old.logprob), (old.symbol, drop)]))
            else:
                tokens.append(tok)
        variants.append(
            replace(u, id=u.id + VOICE_SUFFIX, transcript=Transcript(tuple(tokens)))
        )
    return Dataset(tuple(variants), dataset.vocabulary)


# -- result emission ---------------------------------------------------------

CSV_HEADER = "method,intents,speakers,recordings,trial,seed,accuracy"


def emit_csv(rows, path) -> None:
    """Write rows sorted by (method, I, S, K, trial), accuracy at 6 decimals."""
    ordered = sorted(
        rows, key=lambda r: (r.method, r.n_intents, r.n_speakers, r.n_recordings, r.trial)
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in ordered:
            fh.write(
                f"{r.method},{r.n_intents},{r.n_speakers},{r.n_recordings},"
                f"{r.trial},{r.seed},{r.accuracy:.6f}\n"
            )


_SVG_W, _SVG_H = 960, 540
_PLOT = (70, 30, 700, 470)  # x0, y0, x1, y1
_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
)


def emit_svg(rows, path) -> None:
    """Mean accuracy vs K, one polyline per (method, I, S) series.

    Output is byte-deterministic: series and points are sorted and all
    coordinates use fixed two-decimal formatting.
    """
    rows = list(rows)
    if not rows:
        raise DataError("no rows to plot")
    series: dict[tuple, dict[int, list[float]]] = {}
    for r in rows:
        series.setdefault((r.method, r.n_intents, r.n_speakers), {}).setdefault(
            r.n_recordings, []
        ).append(r.accuracy)

    ks = sorted({r.n_recordings for r in rows})
    x0, y0, x1, y1 = _PLOT
    span = max(ks) - min(ks)

    def sx(k):
        if span == 0:
            return (x0 + x1) / 2.0
        return x0 + (k - min(ks)) * (x1 - x0) / span

    def sy(acc):
        return y1 - acc * (y1 - y0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_SVG_W} {_SVG_H}" '
        f'font-family="sans-serif" font-size="13">',
        f'<rect x="0" y="0" width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for k in ks:
        x = sx(k)
        out.append(f'<line x1="{x:.2f}" y1="{y1}" x2="{x:.2f}" y2="{y1 + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y1 + 20}" text-anchor="middle">{k}</text>')
    for tick in range(6):
        acc = tick / 5.0
        y = sy(acc)
        out.append(f'<line x1="{x0 - 5}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        out.append(
            f'<text x="{x0 - 9}" y="{y + 4:.2f}" text-anchor="end">{acc:.1f}</text>'
        )
    out.append(
        f'<text x="{(x0 + x1) / 2:.2f}" y="{y1 + 45}" text-anchor="middle">'
        "recordings per speaker (K)</text>"
    )
    out.append(
        f'<text x="18" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2:.2f})">accuracy</text>'
    )

    for idx, key in enumerate(sorted(series)):
        method, i, s = key
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join(
            f"{sx(k):.2f},{sy(float(np.mean(series[key][k]))):.2f}"
            for k in sorted(series[key])
        )
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>'
        )
        ly = y0 + 18 + idx * 20
        out.append(
            f'<line x1="{x1 + 20}" y1="{ly - 4}" x2="{x1 + 46}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(f'<text x="{x1 + 52}" y="{ly}">{method} I={i} S={s}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out))
        fh.write("\n")
