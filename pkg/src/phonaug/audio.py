"""WAV I/O and voice-level augmentation.

The augmentation chain mirrors the recording-level pipeline: speed
perturbation by resampling (pitch shifts with speed), decibel gain with
hard clipping, and spectrogram masking with Griffin-Lim reconstruction so
masked audio can be fed back to an external phone recognizer.

All randomized operations are pure functions of (inputs, seed).
"""

from __future__ import annotations

import random
import wave
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError

SPEED_FACTOR = 1.6
GAIN_DB = 5.0

# 25 ms window / 10 ms hop at 16 kHz
DEFAULT_N_MELS = 80
DEFAULT_FFT_SIZE = 512
DEFAULT_WIN = 400
DEFAULT_HOP = 160
DEFAULT_GRIFFIN_LIM_ITERS = 32

_LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if s.size and (np.max(s) > 1.0 or np.min(s) < -1.0):
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class MelSpec:
    """Time-major log-mel energies plus the analysis geometry.

    sample_rate is carried so the spectrogram can be inverted without
    outside context.
    """

    frames: np.ndarray  # (n_frames, n_mels)
    n_mels: int
    hop: int
    win: int
    fft_size: int
    sample_rate: int

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != self.n_mels:
            raise ValueError("frames must be (n_frames, n_mels)")
        if not (0 < self.hop <= self.win <= self.fft_size):
            raise ValueError("need 0 < hop <= win <= fft_size")
        object.__setattr__(self, "frames", f)


@dataclass(frozen=True)
class SpecAugmentConfig:
    n_freq_masks: int = 2
    n_time_masks: int = 2
    max_freq_width: int = 8
    max_time_width: int = 16

    def __post_init__(self):
        if min(self.n_freq_masks, self.n_time_masks) < 0:
            raise ValueError("mask counts must be >= 0")
        if min(self.max_freq_width, self.max_time_width) < 0:
            raise ValueError("mask widths must be >= 0")


def read_wav(path) -> Waveform:
    """Read a RIFF/PCM16/mono WAV file; samples become raw values / 32768."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            if w.getcomptype() != "NONE":
                raise FormatError(f"{path}: compressed WAV not supported")
            n = w.getnframes()
            rate = w.getframerate()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as e:
        raise FormatError(f"{path}: {e}") from None
    if len(raw) != 2 * n:
        raise FormatError(f"{path}: truncated data chunk")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write PCM16 mono; read_wav(write_wav(w)) agrees within 1/32768."""
    q = np.clip(np.rint(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(w.sample_rate)
        out.writeframes(q.tobytes())


def change_speed(w: Waveform, factor: float) -> Waveform:
    """Resample so playback is `factor` times faster at the same nominal rate.

    Linear interpolation; output length = round(len / factor). Pitch
    scales with the factor.
    """
    if factor <= 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    n_out = round(len(w) / factor)
    if n_out == 0:
        return Waveform(np.zeros(0), w.sample_rate)
    positions = np.arange(n_out) * factor
    resampled = np.interp(positions, np.arange(len(w)), w.samples)
    return Waveform(np.clip(resampled, -1.0, 1.0), w.sample_rate)


def apply_gain_db(w: Waveform, db: float) -> Waveform:
    """Scale by 10^(db/20) and clamp to [-1, 1]."""
    scaled = w.samples * (10.0 ** (db / 20.0))
    return Waveform(np.clip(scaled, -1.0, 1.0), w.sample_rate)


def voice_augment(w: Waveform, seed: int) -> Waveform:
    """Seeded choice among: speed x1.6, gain +5 dB, or speed then gain."""
    variant = random.Random(seed).randrange(3)
    if variant == 0:
        return change_speed(w, SPEED_FACTOR)
    if variant == 1:
        return apply_gain_db(w, GAIN_DB)
    return apply_gain_db(change_speed(w, SPEED_FACTOR), GAIN_DB)


def _hann(win: int) -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)


def _hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    linear = f / (200.0 / 3.0)
    log_step = np.log(6.4) / 27.0
    mel = np.where(f < 1000.0, linear, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / log_step)
    return mel


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    log_step = np.log(6.4) / 27.0
    return np.where(m < 15.0, m * (200.0 / 3.0), 1000.0 * np.exp(log_step * (m - 15.0)))


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the Slaney mel scale spanning 0 .. sample_rate/2.

    Returns (n_mels, fft_size//2 + 1) weights. Triangles peak at 1 (no
    area normalization) so that pseudo-inversion does not amplify the log
    floor of silent spectrograms.
    """
    n_bins = fft_size // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / fft_size
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)

    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


def filterbank_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return _mel_to_hz(mel_points)[1:-1]


def _frame(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(samples) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def mel_spectrogram(
    w: Waveform,
    n_mels: int = DEFAULT_N_MELS,
    fft_size: int = DEFAULT_FFT_SIZE,
    win: int = DEFAULT_WIN,
    hop: int = DEFAULT_HOP,
) -> MelSpec:
    """Log-mel power spectrogram (natural log, floor 1e-10), Hann window."""
    if len(w) < win:
        raise DataError(f"waveform has {len(w)} samples, need at least win={win}")
    frames = _frame(w.samples, win, hop) * _hann(win)
    spectrum = np.fft.rfft(frames, n=fft_size, axis=1)
    power = np.abs(spectrum) ** 2
    mel = power @ mel_filterbank(n_mels, fft_size, w.sample_rate).T
    return MelSpec(np.log(np.maximum(mel, _LOG_FLOOR)), n_mels, hop, win, fft_size, w.sample_rate)


def spec_augment(spec: MelSpec, cfg: SpecAugmentConfig, seed: int) -> MelSpec:
    """Mask seeded frequency bands and time spans with the spectrogram mean.

    Draw sequence (reproducible from the seed alone): for each frequency
    mask then each time mask, width ~ uniform{0..max_width}, then start ~
    uniform{0..dim - width}. Unmasked cells are bit-identical to the input.
    """
    n_frames, n_mels = spec.frames.shape
    if cfg.max_freq_width > n_mels or cfg.max_time_width > n_frames:
        raise ValueError("mask widths exceed spectrogram dimensions")
    rng = random.Random(seed)
    out = spec.frames.copy()
    fill = float(spec.frames.mean())
    for _ in range(cfg.n_freq_masks):
        width = rng.randint(0, cfg.max_freq_width)
        start = rng.randint(0, n_mels - width)
        out[:, start : start + width] = fill
    for _ in range(cfg.n_time_masks):
        width = rng.randint(0, cfg.max_time_width)
        start = rng.randint(0, n_frames - width)
        out[start : start + width, :] = fill
    return MelSpec(out, spec.n_mels, spec.hop, spec.win, spec.fft_size, spec.sample_rate)


def _overlap_add(spectrum: np.ndarray, win: int, hop: int, fft_size: int) -> np.ndarray:
    """Weighted overlap-add synthesis; output length (n_frames-1)*hop + win."""
    window = _hann(win)
    n_frames = spectrum.shape[0]
    length = (n_frames - 1) * hop + win
    signal = np.zeros(length)
    norm = np.zeros(length)
    frames = np.fft.irfft(spectrum, n=fft_size, axis=1)[:, :win]
    for t in range(n_frames):
        start = t * hop
        signal[start : start + win] += frames[t] * window
        norm[start : start + win] += window**2
    return signal / np.maximum(norm, 1e-8)


def invert_spectrogram(spec: MelSpec, iterations: int = DEFAULT_GRIFFIN_LIM_ITERS) -> Waveform:
    """Griffin-Lim reconstruction from a log-mel spectrogram.

    The mel filterbank is pseudo-inverted to a linear power spectrum, then
    `iterations` rounds of phase estimation run against the fixed
    magnitudes (zero initial phase, so the result is deterministic).
    """
    bank = mel_filterbank(spec.n_mels, spec.fft_size, spec.sample_rate)
    mel_power = np.exp(spec.frames)
    power = np.maximum(mel_power @ np.linalg.pinv(bank).T, 0.0)
    magnitude = np.sqrt(power)

    window = _hann(spec.win)
    phase = np.zeros_like(magnitude)
    for _ in range(iterations):
        signal = _overlap_add(magnitude * np.exp(1j * phase), spec.win, spec.hop, spec.fft_size)
        reframed = _frame(signal, spec.win, spec.hop) * window
        phase = np.angle(np.fft.rfft(reframed, n=spec.fft_size, axis=1))
    signal = _overlap_add(magnitude * np.exp(1j * phase), spec.win, spec.hop, spec.fft_size)
    return Waveform(np.clip(signal, -1.0, 1.0), spec.sample_rate)
