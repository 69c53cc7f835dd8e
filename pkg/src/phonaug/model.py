"""The baseline intent classifier: embedding -> conv1d -> ReLU -> LSTM ->
linear + sigmoid, plus checkpointing and per-phone feature extraction for
the similarity map.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .corpus import PAD, Transcript, encode
from .errors import ConfigError, FormatError
from .seeding import derive_seed

CHECKPOINT_MAGIC = b"PHAUG1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_intents: int
    embedding_size: int = 256
    kernel_size: int = 3
    n_filters: int = 256
    lstm_layers: int = 1
    hidden_size: int = 256

    def __post_init__(self):
        dims = (
            self.vocab_size,
            self.n_intents,
            self.embedding_size,
            self.kernel_size,
            self.n_filters,
            self.hidden_size,
        )
        if any(d < 1 for d in dims):
            raise ConfigError(f"model dimensions must be positive: {self}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.lstm_layers not in (1, 2):
            raise ConfigError(f"lstm_layers must be 1 or 2, got {self.lstm_layers}")


class Model:
    """Assembled classifier; build() with equal (config, labels, seed) is
    parameter-identical."""

    def __init__(self, config: ModelConfig, intent_labels: Sequence[str], seed: int):
        if len(intent_labels) != config.n_intents:
            raise ConfigError(
                f"{len(intent_labels)} intent labels for n_intents={config.n_intents}"
            )
        if len(set(intent_labels)) != len(intent_labels):
            raise ConfigError("intent labels must be distinct")
        self.config = config
        self.intent_labels = tuple(intent_labels)
        rs = np.random.RandomState(derive_seed(seed) & 0xFFFFFFFF)
        self.embedding = nn.Embedding(rs, config.vocab_size, config.embedding_size)
        self.conv = nn.Conv1d(rs, config.embedding_size, config.n_filters, config.kernel_size)
        self.relu = nn.ReLU()
        self.lstm = nn.LSTM(rs, config.n_filters, config.hidden_size, config.lstm_layers)
        self.head = nn.Linear(rs, config.hidden_size, config.n_intents)

    def parameters(self) -> list[nn.Parameter]:
        return (
            self.embedding.parameters()
            + self.conv.parameters()
            + self.lstm.parameters()
            + self.head.parameters()
        )

    def forward(self, ids: Sequence[int], train: bool = False) -> np.ndarray:
        """Per-intent probabilities in (0, 1) for a phone-id sequence."""
        if len(ids) == 0:
            raise ValueError("cannot classify an empty phone sequence")
        ids = np.asarray(ids, dtype=np.intp)
        x = self.embedding.forward(ids, train=train)
        x = self.conv.forward(x, train=train)
        x = self.relu.forward(x, train=train)
        states, (h_last, _) = self.lstm.forward(x, train=train)
        logits = self.head.forward(h_last, train=train)
        return nn.sigmoid(logits)

    def forward_backward(self, ids: Sequence[int], target: np.ndarray):
        """One training example: returns (loss, probs), accumulates grads."""
        probs = self.forward(ids, train=True)
        loss, d_probs = nn.bce_loss(probs, target)
        d_logits = d_probs * probs * (1.0 - probs)
        d_h = self.head.backward(d_logits)
        t_len = len(ids)
        d_states = np.zeros((t_len, self.config.hidden_size))
        d_x = self.lstm.backward(d_states, d_h, np.zeros(self.config.hidden_size))
        d_x = self.relu.backward(d_x)
        d_x = self.conv.backward(d_x)
        self.embedding.backward(d_x)
        return loss, probs


def build(config: ModelConfig, intent_labels: Sequence[str], seed: int) -> Model:
    return Model(config, intent_labels, seed)


def predict(model: Model, transcript: Transcript, vocabulary: Sequence[str]) -> str:
    """Argmax intent; exact ties go to the lexicographically smaller label."""
    probs = model.forward(encode(transcript, vocabulary))
    best = min(range(len(probs)), key=lambda i: (-probs[i], model.intent_labels[i]))
    return model.intent_labels[best]


def extract_phone_vectors(model: Model, vocabulary: Sequence[str]) -> dict[str, np.ndarray]:
    """Context-free CNN feature vector per non-PAD phone.

    Each phone is fed as a length-1 sequence, so same-padding places its
    embedding between zero frames; the single ReLU-activated conv frame is
    the phone's representation.
    """
    vectors = {}
    for idx, sym in enumerate(vocabulary):
        if sym == PAD:
            continue
        x = model.embedding.forward(np.array([idx], dtype=np.intp))
        x = model.relu.forward(model.conv.forward(x))
        vectors[sym] = x[0].copy()
    return vectors


def _layer_specs(model: Model) -> list[dict]:
    """Per-layer kinds and parameter shapes, in array declaration order."""
    c = model.config
    specs = [
        {"kind": "embedding", "shapes": [[c.vocab_size, c.embedding_size]]},
        {"kind": "conv1d",
         "shapes": [[c.kernel_size * c.embedding_size, c.n_filters], [c.n_filters]]},
    ]
    for i in range(c.lstm_layers):
        in_dim = c.n_filters if i == 0 else c.hidden_size
        specs.append({"kind": "lstm", "shapes": [
            [4 * c.hidden_size, in_dim],
            [4 * c.hidden_size, c.hidden_size],
            [4 * c.hidden_size],
        ]})
    specs.append({"kind": "linear", "shapes": [[c.n_intents, c.hidden_size], [c.n_intents]]})
    return specs


def save_checkpoint(model: Model, path) -> None:
    """magic, u32-length-prefixed JSON header (config, labels, layer specs),
    then float64-LE arrays in declaration order."""
    header = json.dumps(
        {
            "config": asdict(model.config),
            "intent_labels": list(model.intent_labels),
            "layers": _layer_specs(model),
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in model.parameters():
            fh.write(p.value.astype("<f8").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
        model = Model(config, header["intent_labels"], seed=0)
        stated = [tuple(s) for spec in header["layers"] for s in spec["shapes"]]
        actual = [p.value.shape for p in model.parameters()]
        if stated != actual:
            raise FormatError(f"{path}: layer specs disagree with the model config")
        for p in model.parameters():
            raw = fh.read(8 * p.value.size)
            if len(raw) != 8 * p.value.size:
                raise FormatError(f"{path}: truncated checkpoint")
            p.value = np.frombuffer(raw, dtype="<f8").reshape(p.value.shape).copy()
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after parameter data")
    return model
