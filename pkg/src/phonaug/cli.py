"""Single executable: corpus synthesis, audio/phoneme augmentation,
similarity-map building, training, evaluation, and grid runs.

Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .audio import (
    SpecAugmentConfig,
    apply_gain_db,
    change_speed,
    invert_spectrogram,
    mel_spectrogram,
    read_wav,
    spec_augment,
    voice_augment,
    write_wav,
)
from .augment import (
    AugmentPolicy,
    build_similarity_map,
    expand_dataset,
    load_similarity_map,
    save_similarity_map,
)
from .corpus import GridSpec, load_dataset, save_dataset
from .errors import ConfigError, PhonaugError
from .harness import (
    TrainConfig,
    emit_csv,
    emit_svg,
    evaluate,
    generate_synthetic_corpus,
    generate_voice_companion,
    merge_voice_variants,
    run_grid,
    train,
)
from .model import (
    ModelConfig,
    build,
    extract_phone_vectors,
    load_checkpoint,
    save_checkpoint,
)

_CONFIG_KEYS = {
    "model": {"vocab_size", "n_intents", "embedding_size", "kernel_size",
              "n_filters", "lstm_layers", "hidden_size"},
    "train": {"epochs", "batch_size", "lr", "patience", "method", "seed"},
    "aug": {"noise_swaps", "similar_rate", "use_voice", "expansion_mode",
            "n_freq_masks", "n_time_masks", "max_freq_width", "max_time_width"},
    "grid": {"intents_counts", "speakers_counts", "recordings_counts",
             "trials", "base_seed", "methods"},
}


def _default_seed() -> int:
    return int(os.environ.get("PHONAUG_SEED", "0"))


def load_config(path) -> dict:
    """Parse the JSON config; unknown sections or keys are rejected."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    for section, keys in _CONFIG_KEYS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        bad = set(body) - keys
        if bad:
            raise ConfigError(f"{path}: unknown keys in {section!r}: {sorted(bad)}")
    return raw


def _train_config(cfg: dict) -> TrainConfig:
    try:
        policy = AugmentPolicy(**{
            k: v for k, v in cfg.get("aug", {}).items()
            if k in ("noise_swaps", "similar_rate", "use_voice", "expansion_mode")
        })
        # validate the mask settings even though only augment-audio consumes them
        SpecAugmentConfig(**{
            k: v for k, v in cfg.get("aug", {}).items()
            if k in ("n_freq_masks", "n_time_masks", "max_freq_width", "max_time_width")
        })
        return TrainConfig(**cfg.get("train", {}), policy=policy)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad config value: {e}") from None


def _model_config(cfg: dict, vocab_size: int, n_intents: int) -> ModelConfig:
    section = dict(cfg.get("model", {}))
    stated_vocab = section.pop("vocab_size", None)
    stated_intents = section.pop("n_intents", None)
    if stated_vocab is not None and stated_vocab != vocab_size:
        raise ConfigError(f"config vocab_size={stated_vocab}, data has {vocab_size}")
    if stated_intents is not None and stated_intents != n_intents:
        raise ConfigError(f"config n_intents={stated_intents}, data has {n_intents}")
    try:
        return ModelConfig(vocab_size=vocab_size, n_intents=n_intents, **section)
    except TypeError as e:
        raise ConfigError(f"bad model config: {e}") from None


def _cmd_synth(args) -> int:
    dataset = generate_synthetic_corpus(
        args.intents, args.speakers, args.recordings, args.seed, wav_dir=args.wav_dir
    )
    save_dataset(dataset, args.out)
    if args.voice_out:
        save_dataset(generate_voice_companion(dataset, args.seed), args.voice_out)
    return 0


def _cmd_augment_audio(args) -> int:
    w = read_wav(args.infile)
    if args.speed is None and args.gain is None and not args.specaugment:
        w = voice_augment(w, args.seed)
    else:
        if args.speed is not None:
            w = change_speed(w, args.speed)
        if args.gain is not None:
            w = apply_gain_db(w, args.gain)
        if args.specaugment:
            spec = spec_augment(mel_spectrogram(w), SpecAugmentConfig(), args.seed)
            w = invert_spectrogram(spec)
    write_wav(args.out, w)
    return 0


def _cmd_augment_phones(args) -> int:
    if args.mode == "similar" and not args.map:
        print("augment-phones: --mode similar requires --map", file=sys.stderr)
        return 1
    dataset = load_dataset(args.infile)
    if args.mode == "noise":
        policy = AugmentPolicy(noise_swaps=args.swaps, similar_rate=0.0,
                               expansion_mode="append")
        sim_map = None
    else:
        policy = AugmentPolicy(noise_swaps=0, similar_rate=args.rate,
                               expansion_mode="append")
        sim_map = load_similarity_map(args.map)
    save_dataset(expand_dataset(dataset, policy, sim_map, args.seed), args.out)
    return 0


def _cmd_simmap(args) -> int:
    mdl = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    if len(dataset.vocabulary) != mdl.config.vocab_size:
        raise ConfigError(
            f"checkpoint vocab_size={mdl.config.vocab_size}, "
            f"data vocabulary has {len(dataset.vocabulary)} symbols"
        )
    save_similarity_map(
        build_similarity_map(extract_phone_vectors(mdl, dataset.vocabulary)), args.out
    )
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_cfg = _train_config(cfg)
    dataset = load_dataset(args.data)
    if train_cfg.method in ("voice", "voice+phone_noise"):
        if not args.voice_data:
            raise ConfigError(f"method {train_cfg.method!r} requires --voice-data")
        dataset = merge_voice_variants(dataset, load_dataset(args.voice_data))
    sim_map = load_similarity_map(args.map) if args.map else None
    labels = dataset.intents("train")
    mdl = build(
        _model_config(cfg, len(dataset.vocabulary), len(labels)), labels, train_cfg.seed
    )
    _, history = train(mdl, dataset, train_cfg, sim_map)
    for st in history:
        valid = "" if st.valid_accuracy is None else f" valid_acc={st.valid_accuracy:.6f}"
        print(f"epoch={st.epoch} train_loss={st.train_loss:.6f} "
              f"train_acc={st.train_accuracy:.6f}{valid}")
    save_checkpoint(mdl, args.out)
    return 0


def _cmd_eval(args) -> int:
    mdl = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    print(f"accuracy={evaluate(mdl, dataset, args.split):.6f}")
    return 0


def _cmd_grid(args) -> int:
    cfg = load_config(args.config)
    train_cfg = _train_config(cfg)
    section = dict(cfg.get("grid", {}))
    methods = section.pop("methods", ["baseline"])
    try:
        grid = GridSpec(
            intents_counts=tuple(section.get("intents_counts", [2])),
            speakers_counts=tuple(section.get("speakers_counts", [1, 2, 6, 7])),
            recordings_counts=tuple(section.get("recordings_counts", list(range(1, 8)))),
            trials=section.get("trials", 3),
            base_seed=section.get("base_seed", 0),
        )
    except ValueError as e:
        raise ConfigError(f"bad grid config: {e}") from None
    model_section = dict(cfg.get("model", {}))
    for derived in ("vocab_size", "n_intents"):
        if derived in model_section:
            raise ConfigError(f"model.{derived} is derived per grid cell; remove it")
    dataset = load_dataset(args.data)
    voice = load_dataset(args.voice_data) if args.voice_data else None
    sim_map = load_similarity_map(args.map) if args.map else None
    rows = run_grid(
        dataset, grid, methods, train_cfg,
        similarity_map=sim_map, voice_dataset=voice,
        model_kwargs=model_section, jobs=args.jobs,
    )
    emit_csv(rows, args.out_csv)
    emit_svg(rows, args.out_svg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phonaug",
        description="Phoneme-transcript intent classification with "
                    "voice- and phoneme-level augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic transcript corpus")
    p.add_argument("--intents", type=int, required=True)
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--recordings", type=int, required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.add_argument("--wav-dir", default=None)
    p.add_argument("--voice-out", default=None,
                   help="also write a voice-augmented companion transcript file")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("augment-audio", help="apply voice-level augmentation to a WAV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--speed", type=float, default=None)
    p.add_argument("--gain", type=float, default=None)
    p.add_argument("--specaugment", action="store_true")
    p.set_defaults(func=_cmd_augment_audio)

    p = sub.add_parser("augment-phones", help="append-mode phoneme augmentation")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("noise", "similar"), required=True)
    p.add_argument("--swaps", type=int, choices=(1, 2), default=1)
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--map", default=None)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=_cmd_augment_phones)

    p = sub.add_parser("simmap", help="build a similarity map from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simmap)

    p = sub.add_parser("train", help="train a classifier on a transcript file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--voice-data", default=None)
    p.add_argument("--map", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="report accuracy of a checkpoint on one split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grid", help="run the full experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--voice-data", default=None)
    p.add_argument("--map", default=None)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-svg", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"phonaug {args.command}: {e}", file=sys.stderr)
        return 2
    except (PhonaugError, OSError, ValueError) as e:
        print(f"phonaug {args.command}: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
