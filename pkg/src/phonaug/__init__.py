"""Spoken-intent classification over phoneme transcripts, with voice-level
and phoneme-level data augmentation and a reproducible experiment grid."""

from .audio import (
    MelSpec,
    SpecAugmentConfig,
    Waveform,
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
    SimilarityMap,
    allosaurus_noise,
    build_similarity_map,
    expand_dataset,
    similar_phone_augment,
)
from .corpus import (
    PAD,
    Dataset,
    GridSpec,
    PhoneCandidate,
    PhoneToken,
    Transcript,
    Utterance,
    decode,
    encode,
    load_dataset,
    save_dataset,
    subsample,
)
from .harness import (
    METHODS,
    EpochStats,
    ResultRow,
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
    Model,
    ModelConfig,
    build,
    extract_phone_vectors,
    load_checkpoint,
    predict,
    save_checkpoint,
)

__version__ = "0.1.0"
