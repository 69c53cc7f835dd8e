"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`. The grid criterion trains
the full-size classifier over every (method, K, trial) cell twice and
dominates the suite's runtime (tens of minutes on two cores).
"""

import json
import math
import os
import time

import numpy as np
import pytest
from gradcheck import finite_diff_arrays, finite_diff_params

from phonaug import nn
from phonaug.audio import (
    DEFAULT_FFT_SIZE,
    SpecAugmentConfig,
    Waveform,
    apply_gain_db,
    change_speed,
    invert_spectrogram,
    mel_spectrogram,
    spec_augment,
)
from phonaug.augment import (
    AugmentPolicy,
    SimilarityMap,
    allosaurus_noise,
    build_similarity_map,
    expand_dataset,
    similar_phone_augment,
)
from phonaug.cli import main
from phonaug.corpus import GridSpec, Transcript, make_token
from phonaug.harness import (
    METHODS,
    TrainConfig,
    emit_csv,
    evaluate,
    generate_synthetic_corpus,
    generate_voice_companion,
    run_grid,
    train,
)
from phonaug.model import ModelConfig, build, extract_phone_vectors, load_checkpoint, save_checkpoint

TOL_GRAD = 1e-4
SR = 16000


def report(criterion: str, ok: bool, detail: str = ""):
    print(f"\n[acceptance] {criterion}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{criterion}: {detail}"


def sine(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return Waveform(amp * np.sin(2 * np.pi * freq * t), SR)


def fft_peak_hz(w: Waveform) -> float:
    return float(np.argmax(np.abs(np.fft.rfft(w.samples))) * w.sample_rate / len(w))


# -- criterion 1: gradient suite ------------------------------------------------

def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}

    def rs():
        return np.random.RandomState(int(rng.integers(0, 2**31)))

    errs = []
    for _ in range(5):  # embedding
        vocab, dim, t_len = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 6)
        emb = nn.Embedding(rs(), int(vocab), int(dim))
        ids = rng.integers(0, vocab, size=int(t_len))
        r = rng.normal(size=(int(t_len), int(dim)))
        out = emb.forward(ids, train=True)
        emb.backward(r)
        errs.append(finite_diff_params(
            emb.parameters(), lambda: float(np.sum(emb.forward(ids) * r))))
    worst["embedding"] = max(errs)

    errs = []
    for _ in range(5):  # conv1d
        t_len, cin, cout = int(rng.integers(2, 7)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        conv = nn.Conv1d(rs(), cin, cout, 3)
        x = rng.normal(size=(t_len, cin))
        r = rng.normal(size=(t_len, cout))
        conv.forward(x, train=True)
        dx = conv.backward(r.copy())
        loss = lambda: float(np.sum(conv.forward(x) * r))
        errs.append(finite_diff_params(conv.parameters(), loss))
        errs.append(finite_diff_arrays([x], [dx], loss))
    worst["conv1d"] = max(errs)

    errs = []
    for _ in range(5):  # relu path (conv -> relu)
        t_len, cin, cout = int(rng.integers(2, 7)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        conv = nn.Conv1d(rs(), cin, cout, 3)
        relu = nn.ReLU()
        x = rng.normal(size=(t_len, cin))
        r = rng.normal(size=(t_len, cout))
        relu.forward(conv.forward(x, train=True), train=True)
        conv.backward(relu.backward(r.copy()))
        errs.append(finite_diff_params(
            conv.parameters(), lambda: float(np.sum(relu.forward(conv.forward(x)) * r))))
    worst["relu-path"] = max(errs)

    for layers in (1, 2):  # lstm, both depths
        errs = []
        for _ in range(5):
            t_len, inp, hidden = int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 7))
            lstm = nn.LSTM(rs(), inp, hidden, layers)
            x = rng.normal(size=(t_len, inp))
            r1 = rng.normal(size=(t_len, hidden))
            r2, r3 = rng.normal(size=hidden), rng.normal(size=hidden)

            def loss():
                out, (hl, cl) = lstm.forward(x)
                return float(np.sum(out * r1) + hl @ r2 + cl @ r3)

            lstm.forward(x, train=True)
            dx = lstm.backward(r1.copy(), r2.copy(), r3.copy())
            errs.append(finite_diff_params(lstm.parameters(), loss))
            errs.append(finite_diff_arrays([x], [dx], loss))
        worst[f"lstm-{layers}layer"] = max(errs)

    errs = []
    for _ in range(5):  # linear + sigmoid head
        inp, out_dim = int(rng.integers(2, 9)), int(rng.integers(2, 6))
        lin = nn.Linear(rs(), inp, out_dim)
        h = rng.normal(size=inp)
        r = rng.normal(size=out_dim)
        probs = nn.sigmoid(lin.forward(h, train=True))
        lin.backward(r * probs * (1 - probs))
        errs.append(finite_diff_params(
            lin.parameters(), lambda: float(nn.sigmoid(lin.forward(h)) @ r)))
    worst["linear+sigmoid"] = max(errs)

    errs = []
    for _ in range(5):  # bce loss wrt inputs
        dim = int(rng.integers(2, 9))
        probs = rng.uniform(0.05, 0.95, size=dim)
        target = np.zeros(dim)
        target[int(rng.integers(0, dim))] = 1.0
        _, grad = nn.bce_loss(probs, target)
        errs.append(finite_diff_arrays(
            [probs], [grad], lambda: nn.bce_loss(probs, target)[0]))
    worst["bce_loss"] = max(errs)

    elapsed = time.perf_counter() - t0
    detail = " ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f" time={elapsed:.1f}s"
    report("criterion 1 (gradient suite)",
           max(worst.values()) < TOL_GRAD and elapsed < 60.0, detail)


# -- criterion 2: DSP suite -------------------------------------------------------

def test_criterion_2_dsp_suite():
    w = sine(440, amp=0.1)
    gained = apply_gain_db(w, 5.0)
    rms_ratio = float(np.sqrt(np.mean(gained.samples**2) / np.mean(w.samples**2)))
    ok_gain = abs(rms_ratio - 1.778279) <= 1e-3

    fast = change_speed(sine(440), 1.6)
    ok_len = len(fast) == 10000
    ok_pitch = abs(fft_peak_hz(fast) - 704.0) <= SR / len(fast)

    spec = mel_spectrogram(sine(440))
    cfg0 = SpecAugmentConfig(n_freq_masks=2, n_time_masks=2,
                             max_freq_width=0, max_time_width=0)
    ok_identity = np.array_equal(spec_augment(spec, cfg0, seed=3).frames, spec.frames)

    rec = invert_spectrogram(spec, iterations=32)
    ok_gl = abs(fft_peak_hz(rec) - 440.0) <= SR / DEFAULT_FFT_SIZE

    report("criterion 2 (DSP suite)",
           ok_gain and ok_len and ok_pitch and ok_identity and ok_gl,
           f"rms={rms_ratio:.6f} len={len(fast)} peak_fast={fft_peak_hz(fast):.1f} "
           f"identity={ok_identity} peak_gl={fft_peak_hz(rec):.1f}")


# -- criterion 3: augmentation suite -------------------------------------------------

def test_criterion_3_augmentation_suite():
    ds = generate_synthetic_corpus(10, 10, 5, seed=33)
    assert len(ds.utterances) == 500
    policy = AugmentPolicy(noise_swaps=1, similar_rate=0.0, expansion_mode="append")
    expanded = expand_dataset(ds, policy, None, seed=5)
    n = len(ds.split("train"))
    ok_double = len(expanded.split("train")) == 2 * n
    vocab = set(expanded.vocabulary)
    originals = {u.id: u for u in ds.utterances}
    ok_labels = ok_closure = True
    for u in expanded.utterances:
        src = originals[u.id.removesuffix("#aug1")]
        if (u.speaker, u.intent, u.split) != (src.speaker, src.intent, src.split):
            ok_labels = False
        for tok in u.transcript.tokens:
            if any(c.symbol not in vocab for c in tok.candidates):
                ok_closure = False

    t = Transcript(tuple(make_token([("a", -0.1), ("b", -1.0)]) for _ in range(12)))
    noised = allosaurus_noise(t, 1, seed=8)
    ok_one_swap = sum(
        noised.tokens[i].top1 != t.tokens[i].top1 for i in range(12)
    ) == 1

    ab = SimilarityMap({"a": "b", "b": "a"}, {"a": 0.9, "b": 0.9})
    ok_rate0 = similar_phone_augment(t, ab, 0.0, seed=1) == t
    ok_rate1 = [tok.top1 for tok in similar_phone_augment(t, ab, 1.0, seed=1).tokens] == ["b"] * 12

    # similarity map equals the brute-force oracle: 100 random sets, P <= 12
    rng = np.random.default_rng(99)
    ok_map = True
    for trial in range(100):
        p = 2 + trial % 11
        vectors = {f"s{i:02d}": rng.normal(size=8) for i in range(p)}
        got = build_similarity_map(vectors)
        for sym in vectors:
            best, best_cos = None, -math.inf
            for other in sorted(vectors):
                if other == sym:
                    continue
                c = sum(x * y for x, y in zip(vectors[sym], vectors[other]))
                c /= math.sqrt(sum(x * x for x in vectors[sym]))
                c /= math.sqrt(sum(y * y for y in vectors[other]))
                if c > best_cos:
                    best, best_cos = other, c
            if got.neighbor[sym] != best or abs(got.score[sym] - best_cos) > 1e-9:
                ok_map = False

    report("criterion 3 (augmentation suite)",
           ok_double and ok_labels and ok_closure and ok_one_swap
           and ok_rate0 and ok_rate1 and ok_map,
           f"2N={ok_double} labels={ok_labels} closure={ok_closure} "
           f"one_swap={ok_one_swap} rate0={ok_rate0} rate1={ok_rate1} map={ok_map}")


# -- criterion 4: overfit check --------------------------------------------------------

def test_criterion_4_overfit():
    t0 = time.perf_counter()
    ds = generate_synthetic_corpus(2, 1, 5, seed=44)  # 10 utterances, 2 intents
    assert len(ds.utterances) == 10
    labels = ds.intents("train")
    model = build(ModelConfig(vocab_size=len(ds.vocabulary), n_intents=2), labels, seed=4)
    model, history = train(model, ds, TrainConfig(epochs=200, patience=200, seed=4))
    elapsed = time.perf_counter() - t0
    acc = evaluate(model, ds, "train")
    reached = any(h.train_accuracy == 1.0 for h in history)
    report("criterion 4 (overfit)",
           acc == 1.0 and reached and len(history) <= 200 and elapsed < 120.0,
           f"train_acc={acc} epochs={len(history)} time={elapsed:.1f}s")


# -- criterion 5: grid reproduction ------------------------------------------------------

GRID_SEED = 20250810


@pytest.fixture(scope="module")
def grid_inputs():
    ds = generate_synthetic_corpus(4, 7, 11, seed=GRID_SEED)
    voice = generate_voice_companion(ds, seed=GRID_SEED)
    labels = ds.intents("train")
    warm = build(ModelConfig(vocab_size=len(ds.vocabulary), n_intents=len(labels)),
                 labels, seed=99)
    warm, _ = train(warm, ds, TrainConfig(epochs=8, patience=8, seed=99))
    sim_map = build_similarity_map(extract_phone_vectors(warm, ds.vocabulary))
    return ds, voice, sim_map


def test_criterion_5_grid(grid_inputs, tmp_path):
    ds, voice, sim_map = grid_inputs
    grid = GridSpec(intents_counts=(4,), speakers_counts=(7,),
                    recordings_counts=tuple(range(1, 8)), trials=3, base_seed=GRID_SEED)
    cfg = TrainConfig(epochs=30, patience=8, seed=0)
    jobs = min(2, os.cpu_count() or 1)

    t0 = time.perf_counter()
    rows = run_grid(ds, grid, METHODS, cfg, similarity_map=sim_map,
                    voice_dataset=voice, jobs=jobs)
    elapsed = time.perf_counter() - t0
    csv1, csv2 = tmp_path / "run1.csv", tmp_path / "run2.csv"
    emit_csv(rows, csv1)

    rows2 = run_grid(ds, grid, METHODS, cfg, similarity_map=sim_map,
                     voice_dataset=voice, jobs=jobs)
    emit_csv(rows2, csv2)
    ok_bytes = csv1.read_bytes() == csv2.read_bytes()

    def mean_low_k(method):
        vals = [r.accuracy for r in rows
                if r.method == method and r.n_recordings in (1, 2)]
        return float(np.mean(vals))

    base, combo = mean_low_k("baseline"), mean_low_k("voice+phone_noise")
    ok_claim = combo >= base - 0.02
    ok_rows = len(rows) == len(METHODS) * 7 * 3
    ok_time = elapsed < 30 * 60
    # the corpus is built to be separable: plenty of data must classify well
    base_k7 = float(np.mean([r.accuracy for r in rows
                             if r.method == "baseline" and r.n_recordings == 7]))
    ok_separable = base_k7 >= 0.9
    report("criterion 5 (grid reproduction)",
           ok_claim and ok_rows and ok_time and ok_bytes and ok_separable,
           f"baseline@K12={base:.4f} voice+noise@K12={combo:.4f} "
           f"baseline@K7={base_k7:.4f} rows={len(rows)} "
           f"time={elapsed/60:.1f}min deterministic={ok_bytes}")


# -- criterion 6: CLI determinism -----------------------------------------------------------

def test_criterion_6_cli_determinism(tmp_path):
    results = {}

    def twice(name, args_fn):
        outs = []
        for tag in ("x", "y"):
            paths = args_fn(tag)
            outs.append(b"".join(p.read_bytes() for p in paths))
        results[name] = outs[0] == outs[1]

    def synth(tag):
        out = tmp_path / f"synth_{tag}.jsonl"
        assert main(["synth", "--intents", "2", "--speakers", "2", "--recordings", "4",
                     "--seed", "6", "--out", str(out)]) == 0
        return [out]

    twice("synth", synth)
    corpus = tmp_path / "synth_x.jsonl"

    wav_in = tmp_path / "in.wav"
    from phonaug.audio import write_wav
    t = np.arange(SR // 2) / SR
    write_wav(wav_in, Waveform(0.3 * np.sin(2 * np.pi * 300 * t), SR))

    def aaudio(tag):
        out = tmp_path / f"aa_{tag}.wav"
        assert main(["augment-audio", "--in", str(wav_in), "--out", str(out),
                     "--specaugment", "--seed", "7"]) == 0
        return [out]

    twice("augment-audio", aaudio)

    def aphones(tag):
        out = tmp_path / f"ap_{tag}.jsonl"
        assert main(["augment-phones", "--in", str(corpus), "--out", str(out),
                     "--mode", "noise", "--swaps", "2", "--seed", "8"]) == 0
        return [out]

    twice("augment-phones", aphones)

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "model": {"embedding_size": 16, "kernel_size": 3, "n_filters": 16,
                  "lstm_layers": 1, "hidden_size": 16},
        "train": {"epochs": 3, "patience": 3, "seed": 5},
        "grid": {"intents_counts": [2], "speakers_counts": [2],
                 "recordings_counts": [1, 2], "trials": 1, "base_seed": 5,
                 "methods": ["baseline", "phone_noise"]},
    }), encoding="utf-8")

    def trainer(tag):
        out = tmp_path / f"train_{tag}.ckpt"
        assert main(["train", "--config", str(cfg), "--data", str(corpus),
                     "--out", str(out)]) == 0
        return [out]

    twice("train", trainer)

    def grid(tag):
        csv_p = tmp_path / f"grid_{tag}.csv"
        svg_p = tmp_path / f"grid_{tag}.svg"
        assert main(["grid", "--config", str(cfg), "--data", str(corpus),
                     "--out-csv", str(csv_p), "--out-svg", str(svg_p)]) == 0
        return [csv_p, svg_p]

    twice("grid", grid)

    report("criterion 6 (CLI determinism)",
           all(results.values()),
           " ".join(f"{k}={v}" for k, v in results.items()))


# -- criterion 7: checkpoint round trip ----------------------------------------------------

def test_criterion_7_checkpoint_roundtrip(tmp_path):
    cfg = ModelConfig(vocab_size=24, n_intents=4)
    model = build(cfg, ["a", "b", "c", "d"], seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        ids = list(rng.integers(1, 24, size=int(rng.integers(1, 15))))
        worst = max(worst, float(np.max(np.abs(back.forward(ids) - model.forward(ids)))))
    report("criterion 7 (checkpoint round trip)", worst <= 1e-12, f"max_diff={worst:.2e}")
