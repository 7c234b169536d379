"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The training-based
criteria share one deterministic toy corpus and train real models, so this
module takes tens of minutes on a laptop-class machine.
"""

import itertools
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from speechmtl.evaluate.decode import greedy_ctc_decode
from speechmtl.evaluate.metrics import edit_distance, mel_mse, sisdr, wer
from speechmtl.evaluate.report import improvement_graph
from speechmtl.features.audio import SAMPLE_RATE, Waveform, measure_snr_db, mix_noise
from speechmtl.model import ModelConfig, SpeechModel, init_parameters
from speechmtl.model.conformer import lengths_to_mask
from speechmtl.model.network import length_regulate
from speechmtl.optim.balance import LossBalancer, balance_losses
from speechmtl.optim.pcgrad import pcgrad
from speechmtl.runner.checkpoint import load_checkpoint
from speechmtl.runner.config import from_dict
from speechmtl.runner.trainer import (
    TrainingRun,
    _other_same_speaker,
    evaluate_tasks,
    restore_for_eval,
)
from speechmtl.tasks.ctc import ctc_loss, min_frames_required
from speechmtl.tasks.graphs import tts_infer

from gradcheck import fd_vs_backprop

torch.set_num_threads(2)

TOY_DATA = {"toy_seed": 11, "toy_speakers": 4, "toy_utts": 32,
            "overfit_utterances": 8}


@contextmanager
def criterion(num: int, description: str):
    try:
        yield
    except BaseException:
        print(f"\n[criterion {num:02d}] FAIL - {description}")
        raise
    print(f"\n[criterion {num:02d}] PASS - {description}")


def overfit_config(tasks, steps=300, strategy="none", **options):
    raw = {
        "scale": "toy", "run_name": "acc", "tasks": list(tasks),
        "strategy": strategy, "seed": 0, "max_steps": steps,
        "data": dict(TOY_DATA),
    }
    if options:
        raw["options"] = options
    return from_dict(raw)


# -- 1. gradient correctness ---------------------------------------------------

def miniature(seed: int) -> SpeechModel:
    cfg = ModelConfig(
        d_model=32, d_ff=48, heads=2, unit_heads=2, conv_kernel=7,
        content_enc_layers=2, speaker_enc_layers=2, content_dec_layers=2,
        merge_dec_layers=2, unit_enc_layers=2, s2s_dec_layers=2,
        prosody_enc_layers=2, prosody_pred_layers=2,
    )
    model = SpeechModel(cfg, text_vocab=12, phoneme_vocab=10, n_speakers=4)
    init_parameters(model, seed)
    model.double()
    model.eval()
    return model


def module_checks(model, rng):
    """Yields (name, make_scalar, tensors-to-check) triples per module."""
    d = 32

    def t(shape, grad=True):
        return torch.tensor(rng.normal(size=shape), requires_grad=grad)

    x1 = t((1, 9, 240))
    w1 = t((1, 9, d), grad=False)
    yield "prosody_encoder", lambda: (model.prosody_encode(x1) * w1).sum(), [x1]

    x2 = t((1, 7, d))
    w2 = t((1, d), grad=False)
    yield "speaker_encoder", lambda: (model.speaker_encode(x2) * w2).sum(), [x2]

    x3 = t((1, 9, 240))
    w3 = t((1, 3, d), grad=False)
    yield ("content_encoder",
           lambda: (model.content_encode(x3, torch.tensor([9]))[0] * w3).sum(), [x3])

    vp = t((1, 8, d))
    vc = t((1, 2, d))
    w4 = t((1, 8, 240), grad=False)
    yield "audio_decoder", lambda: (model.audio_decode(vp, vc) * w4).sum(), [vp, vc]

    tokens = torch.tensor([[1, 4, 2]])
    vs = t((1, d))
    durs = torch.tensor([[2, 3, 3]])
    w5a = t((1, 2, d), grad=False)
    w5b = t((1, 3), grad=False)
    emb = model.text_encoder.embed.weight

    def text_enc_scalar():
        content, _, logd, _ = model.text_encode(tokens, torch.tensor([3]), vs, durs)
        return (content * w5a).sum() + (logd * w5b).sum()

    yield "text_encoder", text_enc_scalar, [vs, emb]

    vc6 = t((1, 5, d))
    teacher = torch.tensor([[3, 1]])
    w6a = t((1, 5, 13), grad=False)
    w6b = t((1, 3, 13), grad=False)

    def text_dec_scalar():
        ctc = model.text_decoder.ctc_logits(vc6)
        s2s = model.text_decoder.s2s_logits(vc6, None, teacher)
        return (torch.log_softmax(ctc, -1) * w6a).sum() + (torch.log_softmax(s2s, -1) * w6b).sum()

    yield "text_decoder", text_dec_scalar, [vc6]

    vc7 = t((1, 3, d))
    vs7 = t((1, d))
    w7 = t((1, 12, d), grad=False)
    yield "prosody_predictor", lambda: (model.prosody_predict(vc7, vs7) * w7).sum(), [vc7, vs7]


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    with criterion(1, "backprop matches central differences for all seven modules"):
        worst = {}
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            model = miniature(seed)
            for name, make_scalar, tensors in module_checks(model, rng):
                err = fd_vs_backprop(make_scalar, tensors, rng, n_coords=3)
                worst[name] = max(worst.get(name, 0.0), err)
        print({k: f"{v:.2e}" for k, v in worst.items()})
        assert all(v < 1e-4 for v in worst.values()), worst
        elapsed = time.time() - t0
        print(f"gradient checks in {elapsed:.0f}s")
        assert elapsed < 300


# -- 2. CTC oracle ---------------------------------------------------------------

def collapse(path, blank):
    out, prev = [], None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return tuple(x for x in out if x != blank)


def test_criterion_2_ctc_matches_exhaustive_enumeration():
    t0 = time.time()
    with criterion(2, "alignment loss equals exhaustive path enumeration"):
        rng = np.random.default_rng(7)
        checked = 0
        for t_frames in range(1, 7):
            for v in range(1, 5):
                paths = np.array(list(itertools.product(range(v + 1), repeat=t_frames)))
                buckets: dict[tuple, list[int]] = {}
                for idx, p in enumerate(paths):
                    buckets.setdefault(collapse(p, v), []).append(idx)
                buckets = {k: np.array(ids) for k, ids in buckets.items()}
                for l in range(1, 4):
                    for _ in range(100):
                        target = tuple(int(x) for x in rng.integers(0, v, size=l))
                        raw = rng.gamma(1.0, 1.0, size=(t_frames, v + 1))
                        post = raw / raw.sum(axis=1, keepdims=True)
                        path_probs = post[np.arange(t_frames)[:, None], paths.T].prod(axis=0)
                        total = float(path_probs[buckets[target]].sum()) \
                            if target in buckets else 0.0
                        loss = float(ctc_loss(torch.tensor(post), list(target)))
                        if total == 0.0:
                            assert math.isinf(loss)
                        else:
                            assert loss == pytest.approx(-math.log(total), abs=1e-6)
                        checked += 1
        elapsed = time.time() - t0
        print(f"{checked} oracle comparisons in {elapsed:.0f}s")
        assert checked >= 100
        assert elapsed < 120


# -- 3. length regulator -----------------------------------------------------------

def test_criterion_3_length_regulation():
    with criterion(3, "length regulation worked example plus 1000 randomized checks"):
        va, vb, vc = (torch.full((8,), float(i + 1)) for i in range(3))
        out = length_regulate(torch.stack([va, vb, vc]), torch.tensor([1, 2, 1]))
        assert torch.equal(out, torch.stack([va, vb, vb, vc]))
        rng = np.random.default_rng(3)
        for _ in range(1000):
            l = int(rng.integers(1, 16))
            vu = torch.tensor(rng.normal(size=(l, 8)))
            durs = torch.tensor(rng.integers(1, 6, size=l))
            reg = length_regulate(vu, durs)
            assert reg.shape[0] == int(durs.sum())
            rows = {tuple(np.round(r, 12)) for r in vu.numpy()}
            pos = 0
            for i in range(l):
                for _ in range(int(durs[i])):
                    assert torch.equal(reg[pos], vu[i])
                    pos += 1
            assert {tuple(np.round(r, 12)) for r in reg.numpy()} == rows


# -- 4. gradient surgery geometry ------------------------------------------------

def test_criterion_4_pcgrad_geometry():
    with criterion(4, "surgery removes conflicts: dot products, pass-through, hand example"):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            dim = int(rng.integers(2, 12))
            g1 = torch.tensor(rng.normal(size=dim))
            g2 = torch.tensor(rng.normal(size=dim))
            conflicting = float(torch.dot(g1, g2)) < 0
            combined, nproj = pcgrad({"a": {"w": g1}, "b": {"w": g2}}, seed=5)
            if not conflicting:
                assert nproj == 0
                assert torch.equal(combined["w"], g1 + g2)
            else:
                p1 = g1 - (torch.dot(g1, g2) / torch.dot(g2, g2)) * g2
                p2 = g2 - (torch.dot(g2, g1) / torch.dot(g1, g1)) * g1
                assert float(torch.dot(p1, g2)) >= -1e-9
                assert float(torch.dot(p2, g1)) >= -1e-9
                assert torch.allclose(combined["w"], p1 + p2, atol=1e-9)
        hand, nproj = pcgrad({
            "a": {"w": torch.tensor([1.0, 0.0], dtype=torch.float64)},
            "b": {"w": torch.tensor([-1.0, 1.0], dtype=torch.float64)},
        }, seed=0)
        assert torch.allclose(hand["w"], torch.tensor([0.5, 1.5], dtype=torch.float64),
                              atol=1e-12)


# -- 5. uncertainty balancing ------------------------------------------------------

def test_criterion_5_loss_balancing():
    with criterion(5, "unit sigmas reduce to plain sum; analytic gradient; positivity"):
        losses = {"a": torch.tensor(2.5), "b": torch.tensor(0.75)}
        total = balance_losses(losses, {k: torch.tensor(1.0) for k in losses})
        assert float(total) == float(sum(losses.values()))

        sigma = torch.tensor(2.0, dtype=torch.float64, requires_grad=True)
        out = balance_losses({"t": torch.tensor(4.0, dtype=torch.float64)}, {"t": sigma})
        out.backward()
        analytic = -2 * 4.0 / 2.0 ** 3 + 1 / 2.0
        step = 1e-6
        fd = (float(balance_losses({"t": torch.tensor(4.0, dtype=torch.float64)},
                                   {"t": torch.tensor(2.0 + step, dtype=torch.float64)}))
              - float(balance_losses({"t": torch.tensor(4.0, dtype=torch.float64)},
                                     {"t": torch.tensor(2.0 - step, dtype=torch.float64)}))) / (2 * step)
        assert float(sigma.grad) == pytest.approx(analytic, abs=1e-9)
        assert fd == pytest.approx(analytic, abs=1e-6)

        balancer = LossBalancer(["x", "y"])
        w = torch.nn.Parameter(torch.tensor(1.5))
        opt = torch.optim.AdamW(list(balancer.parameters()) + [w], lr=0.03,
                                weight_decay=0.0)
        for _ in range(1000):
            opt.zero_grad()
            balancer.total({"x": (w - 2.0) ** 2, "y": 5.0 * w.abs()}).backward()
            opt.step()
            assert all(s > 0.0 for s in balancer.sigmas().values())


# -- 6..8 and 11: training-based criteria ------------------------------------------

@pytest.fixture(scope="module")
def overfit_runs(tmp_path_factory):
    """Train the five single-task toy overfits once; reused across criteria."""
    base = tmp_path_factory.mktemp("overfit")
    runs = {}
    t0 = time.time()
    for task in ("asr", "se", "sc", "tts", "vc"):
        cfg = overfit_config([task])
        run = TrainingRun(cfg, base / task)
        run.train()
        lines = [json.loads(l) for l in open(base / task / "metrics.jsonl")]
        runs[task] = {"run": run, "first": lines[0], "last": lines[-1],
                      "dir": base / task}
    runs["elapsed"] = time.time() - t0
    return runs


def test_criterion_6_single_task_overfit(overfit_runs):
    with criterion(6, "300-step toy overfit: losses <= 10%, SC exact, ASR transcripts"):
        for task in ("asr", "se", "tts", "vc"):
            first = overfit_runs[task]["first"][f"{task}_total"]
            last = overfit_runs[task]["last"][f"{task}_total"]
            ratio = last / first
            print(f"{task}: step1={first:.3f} step300={last:.4f} ratio={ratio:.4f}")
            assert ratio <= 0.10, f"{task} ratio {ratio}"
        assert overfit_runs["sc"]["last"]["sc_accuracy"] == 1.0

        run = overfit_runs["asr"]["run"]
        model, corpus = run.model, run.corpus
        model.eval()
        records = corpus.records("train", subset=8)
        for i, rec in enumerate(records):
            item = corpus.tensors(rec, "train", i)
            with torch.no_grad():
                vc, clens = model.content_encode(
                    item.feats[None], torch.tensor([item.feats.shape[0]]))
                post = torch.softmax(
                    model.text_decoder.ctc_logits(vc)[0, :int(clens[0])], dim=-1)
            hyp = "".join(corpus.vocab[j] for j in greedy_ctc_decode(post.numpy()))
            assert hyp == rec.transcript, (hyp, rec.transcript)
        print(f"five overfit runs in {overfit_runs['elapsed']:.0f}s")
        assert overfit_runs["elapsed"] < 900


def test_criterion_7_five_task_smoke(tmp_path_factory):
    t0 = time.time()
    with criterion(7, "200 five-task steps finish finite under all four strategies"):
        base = tmp_path_factory.mktemp("smoke")
        for strategy in ("autoloss+pcgrad", "autoloss", "pcgrad", "none"):
            cfg = overfit_config(["asr", "se", "sc", "tts", "vc"], steps=200,
                                 strategy=strategy)
            cfg.data.overfit_utterances = 16
            run = TrainingRun(cfg, base / strategy.replace("+", "_"))
            run.train()
            lines = [json.loads(l) for l in
                     open(base / strategy.replace("+", "_") / "metrics.jsonl")]
            assert len(lines) == 200
            for line in lines:
                assert line["strategy"] == strategy
                for key, value in line.items():
                    if isinstance(value, float):
                        assert math.isfinite(value), (strategy, line["step"], key)
                if "autoloss" in strategy:
                    sigmas = [v for k, v in line.items() if k.startswith("sigma_")]
                    assert sigmas and all(s > 0 for s in sigmas)
            print(f"{strategy}: 200 steps ok")
        elapsed = time.time() - t0
        print(f"four smoke runs in {elapsed:.0f}s")
        assert elapsed < 1200


def test_criterion_8_prosody_predictor_direction(tmp_path_factory, overfit_runs):
    with criterion(8, "predictor-trained synthesis beats mismatched-prosody regime"):
        base = tmp_path_factory.mktemp("regime")
        cfg_off = overfit_config(["tts"], prosody_predictor=False)
        run_off = TrainingRun(cfg_off, base / "off")
        run_off.train()

        def infer_mse(run, use_predictor):
            model, corpus = run.model, run.corpus
            model.eval()
            records = corpus.records("train", subset=8)
            total = 0.0
            for i, rec in enumerate(records):
                item = corpus.tensors(rec, "train", i)
                tokens = item.phoneme_ids[None]
                tl = torch.tensor([len(item.phoneme_ids)])
                spk = torch.tensor([item.speaker_index])
                durs = item.durations[None]
                if use_predictor:
                    out, _ = tts_infer(model, tokens, tl, spk, teacher_durations=durs)
                else:
                    ref = _other_same_speaker(corpus, records, i, "train")
                    out, _ = tts_infer(
                        model, tokens, tl, spk, teacher_durations=durs,
                        use_predictor=False, reference_feats=ref.feats[None],
                        reference_lengths=torch.tensor([ref.feats.shape[0]]))
                total += mel_mse(out[0].numpy(), item.feats.numpy())
            return total / len(records)

        mse_on = infer_mse(overfit_runs["tts"]["run"], True)
        mse_off = infer_mse(run_off, False)
        print(f"predictor regime mse={mse_on:.4f}; mismatched-prosody regime mse={mse_off:.4f}")
        assert mse_on < mse_off


# -- 9. metric sanity ---------------------------------------------------------------

def test_criterion_9_metric_sanity():
    with criterion(9, "scale-invariant SDR, exhaustive WER domain, SNR round trips"):
        rng = np.random.default_rng(9)
        ref = Waveform(0.3 * np.sin(2 * np.pi * 440 * np.arange(8000) / SAMPLE_RATE))
        noisy = Waveform(ref.samples + 0.02 * rng.normal(size=8000))
        base_value = sisdr(noisy, ref)
        for scale in (0.1, 0.5, 2.0, 13.7):
            scaled = Waveform(scale * noisy.samples)
            assert sisdr(scaled, ref) == pytest.approx(base_value, abs=1e-6)

        alphabet = ["a", "b", "c", "d"]
        hyps = [()] + [t for n in range(1, 6)
                       for t in itertools.product(alphabet, repeat=n)]
        refs = [t for n in range(1, 6)
                for t in itertools.product(alphabet, repeat=n)]

        def oracle_matrix(ref_seq):
            # Vectorized DP over every hypothesis at once.
            max_h = 5
            padded = np.zeros((len(hyps), max_h), dtype=np.int64)
            hyp_lens = np.array([len(h) for h in hyps])
            sym = {s: i for i, s in enumerate(alphabet)}
            for i, h in enumerate(hyps):
                for j, s in enumerate(h):
                    padded[i, j] = sym[s]
            ref_ids = np.array([sym[s] for s in ref_seq])
            prev = np.tile(np.arange(len(ref_seq) + 1), (len(hyps), 1))
            rows = [prev]
            for i in range(1, max_h + 1):
                cur = np.zeros_like(prev)
                cur[:, 0] = i
                for j in range(1, len(ref_seq) + 1):
                    sub = prev[:, j - 1] + (padded[:, i - 1] != ref_ids[j - 1])
                    cur[:, j] = np.minimum(np.minimum(sub, prev[:, j] + 1),
                                           cur[:, j - 1] + 1)
                rows.append(cur)
                prev = cur
            return np.stack(rows), hyp_lens

        checked = 0
        for ref_seq in refs:
            table, hyp_lens = oracle_matrix(ref_seq)
            expected = table[hyp_lens, np.arange(len(hyps)), len(ref_seq)]
            for i, hyp in enumerate(hyps):
                assert wer(list(hyp), list(ref_seq)) == expected[i] / len(ref_seq)
                checked += 1
        print(f"exhaustive WER domain: {checked} pairs")

        clean = Waveform(0.25 * np.sin(2 * np.pi * 250 * np.arange(8000) / SAMPLE_RATE))
        noise = Waveform(rng.normal(size=8000) * 0.2)
        for snr in (3, 6, 9, -8, -6, -4, -2, 0, 2, 4, 6, 8):
            mixed = mix_noise(clean, noise, snr)
            residual = Waveform(mixed.samples - clean.samples)
            assert measure_snr_db(clean, residual) == pytest.approx(snr, abs=1e-6)


# -- 10. reporting fidelity -----------------------------------------------------------

def test_criterion_10_reporting_fidelity():
    with criterion(10, "reference two-task results reproduce the known edge set"):
        from test_decode_report import MULTI, SINGLE
        edges = improvement_graph(SINGLE, MULTI)
        by_pair = {(e.from_task, e.to_task): e for e in edges}
        assert set(by_pair) == {
            ("se", "asr"), ("sc", "asr"), ("tts", "asr"), ("vc", "asr"),
            ("asr", "se"), ("tts", "sc"), ("asr", "vc"),
        }
        assert by_pair[("asr", "se")].dashed
        assert sum(e.dashed for e in edges) == 1
        assert by_pair[("sc", "asr")].relative_improvement == pytest.approx(0.067, abs=1e-3)


# -- 11. reproducibility ----------------------------------------------------------------

def test_criterion_11_reproducibility(tmp_path_factory, overfit_runs):
    with criterion(11, "identical seeds give identical logs; checkpoints reload bitwise"):
        base = tmp_path_factory.mktemp("repro")
        for name in ("a", "b"):
            cfg = overfit_config(["sc"])
            TrainingRun(cfg, base / name).train()
        log_a = (base / "a" / "metrics.jsonl").read_bytes()
        log_b = (base / "b" / "metrics.jsonl").read_bytes()
        assert log_a == log_b

        asr = overfit_runs["asr"]
        run = asr["run"]
        run.model.eval()
        cfg = overfit_config(["asr"])
        before = evaluate_tasks(run.model, run.corpus, ["asr"], "valid", cfg.options)
        payload = load_checkpoint(asr["dir"] / "last.pt")
        model, corpus, run_cfg = restore_for_eval(payload, asr["dir"])
        after = evaluate_tasks(model, corpus, ["asr"], "valid", run_cfg.options)
        assert before == after
