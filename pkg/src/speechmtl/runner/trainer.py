"""Training, evaluation and inference orchestration for one run directory."""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from filelock import FileLock, Timeout

from ..evaluate.decode import greedy_ctc_decode
from ..evaluate.metrics import edit_distance, mel_mse, sisdr, stoi
from ..evaluate.vocoder import mel_to_waveform
from ..features.audio import Waveform, load_wav
from ..features.toy import build_toy_corpus
from ..model import SpeechModel, init_parameters
from ..model.config import ModelConfig
from ..model.conformer import lengths_to_mask
from ..optim.engine import MultiTaskEngine
from ..optim.schedule import LrSchedule
from ..tasks.data import CorpusData, TaskSampler
from ..tasks.graphs import sc_infer, se_infer, tts_infer, vc_infer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash

log = logging.getLogger(__name__)

# Validation metric per task used for best-checkpoint tracking.
BEST_METRIC = {
    "asr": ("wer", False),
    "se": ("sisdr", True),
    "sc": ("acc", True),
    "tts": ("mse", False),
    "vc": ("mse", False),
}


def corpus_dir(cfg: ExperimentConfig, run_dir: Path) -> Path:
    return Path(cfg.data.root) if cfg.data.root else run_dir / "corpus"


def prepare_corpus(cfg: ExperimentConfig, run_dir: Path) -> CorpusData:
    root = corpus_dir(cfg, run_dir)
    if not (root / "meta.json").exists():
        if cfg.data.toy_seed is None:
            raise FileNotFoundError(f"no corpus at {root}")
        build_toy_corpus(root, seed=cfg.data.toy_seed,
                         n_speakers=cfg.data.toy_speakers,
                         n_train=cfg.data.toy_utts)
    return CorpusData(root, shared_cmvn=cfg.data.shared_cmvn)


def build_model(cfg: ExperimentConfig, corpus: CorpusData) -> SpeechModel:
    model = SpeechModel(ModelConfig(**cfg.model.to_dict()),
                        corpus.text_vocab_size, corpus.phoneme_vocab_size,
                        corpus.n_speakers)
    init_parameters(model, cfg.seed)
    return model


class TrainingRun:
    def __init__(self, cfg: ExperimentConfig, run_dir):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.corpus = prepare_corpus(cfg, self.run_dir)
        torch.manual_seed(cfg.seed)
        self.model = build_model(cfg, self.corpus)
        self.engine = MultiTaskEngine(
            self.model, cfg.tasks, cfg.strategy,
            LrSchedule(cfg.optim.lr, cfg.optim.warmup_steps, cfg.optim.decay_steps),
            seed=cfg.seed, betas=tuple(cfg.optim.betas), eps=cfg.optim.eps,
            weight_decay=cfg.optim.weight_decay, clip_norm=cfg.optim.clip_norm,
            asr_alpha=cfg.options.asr_alpha,
            tts_teacher_prosody=cfg.options.tts_teacher_prosody,
            use_prosody_predictor=cfg.options.prosody_predictor,
            per_term_sigma=cfg.options.per_term_sigma)
        self.samplers = {
            task: TaskSampler(task, self.corpus, cfg.optim.batch_size,
                              seed=cfg.seed * 1009 + i, split="train",
                              subset=cfg.data.overfit_utterances)
            for i, task in enumerate(cfg.tasks)
        }
        self.decoder_choice = "ctc"
        self.best: dict[str, float] = {}

    # -- persistence -------------------------------------------------------

    def _sampler_states(self) -> dict:
        return {task: {"rng": s.rng.bit_generator.state, "order": list(s._order)}
                for task, s in self.samplers.items()}

    def _restore_samplers(self, states: dict) -> None:
        for task, state in states.items():
            if task in self.samplers:
                self.samplers[task].rng.bit_generator.state = state["rng"]
                self.samplers[task]._order = list(state["order"])

    def save(self, path) -> None:
        save_checkpoint(path, config_dict=self.cfg.to_dict(),
                        config_digest=config_hash(self.cfg),
                        step=self.engine.global_step, seed=self.cfg.seed,
                        model=self.model, engine=self.engine,
                        sampler_states=self._sampler_states(),
                        decoder_choice=self.decoder_choice)

    def restore(self, payload: dict) -> None:
        if payload["config_hash"] != config_hash(self.cfg):
            raise ValueError("checkpoint was produced by a different configuration")
        self.model.load_state_dict(payload["model_state"])
        self.engine.load_state_dict(payload["engine_state"])
        torch.set_rng_state(payload["torch_rng"])
        self._restore_samplers(payload["sampler_states"])
        self.decoder_choice = payload.get("decoder_choice", "ctc")

    # -- training ------------------------------------------------------------

    def train(self, resume_path=None) -> Path:
        lock = FileLock(self.run_dir / "run.lock")
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise RuntimeError(f"run directory {self.run_dir} is locked by another process")
        try:
            return self._train_locked(resume_path)
        finally:
            lock.release()

    def _train_locked(self, resume_path=None) -> Path:
        if resume_path is not None:
            self.restore(load_checkpoint(resume_path))
        metrics_path = self.run_dir / "metrics.jsonl"
        mode = "a" if resume_path is not None else "w"
        self.model.train()
        with open(metrics_path, mode, encoding="utf-8") as metrics_file:
            while self.engine.global_step < self.cfg.max_steps:
                batches = {t: s.next_batch() for t, s in self.samplers.items()}
                record = self.engine.step(batches)
                metrics_file.write(json.dumps(record.flat(), sort_keys=True) + "\n")
                if self.cfg.eval_every and record.step % self.cfg.eval_every == 0:
                    self._validate_and_track()
        self._validate_and_track()
        last = self.run_dir / "last.pt"
        self.save(last)
        return last

    def _validate_and_track(self) -> None:
        self.model.eval()
        rows = evaluate_tasks(self.model, self.corpus, self.cfg.tasks, "valid",
                              self.cfg.options, decoder_choice=None,
                              corpus_root=corpus_dir(self.cfg, self.run_dir))
        by_task = {(r["task"], r["metric"]): r["value"] for r in rows}
        if "asr" in self.cfg.tasks:
            wer_ctc = by_task.get(("asr", "wer_ctc"), 1.0)
            wer_s2s = by_task.get(("asr", "wer_s2s"), 1.0)
            self.decoder_choice = "ctc" if wer_ctc <= wer_s2s else "s2s"
        for task in self.cfg.tasks:
            metric, higher = BEST_METRIC[task]
            value = by_task.get((task, metric))
            if value is None:
                continue
            current = self.best.get(task)
            improved = current is None or (value > current if higher else value < current)
            if improved:
                self.best[task] = value
                self.save(self.run_dir / f"best_{task}.pt")
        self.model.train()


def restore_for_eval(payload: dict, run_dir: Path):
    """Model + corpus + config rebuilt from a checkpoint payload."""
    from .config import from_dict

    cfg = from_dict(payload["config"])
    corpus = CorpusData(corpus_dir(cfg, run_dir), shared_cmvn=cfg.data.shared_cmvn)
    model = build_model(cfg, corpus)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, corpus, cfg


# ---------------------------------------------------------------------------
# Evaluation.
# ---------------------------------------------------------------------------

def ids_to_words(ids: list[int], corpus: CorpusData) -> list[str]:
    text = "".join(corpus.vocab[i] for i in ids)
    return text.split()


def _pesq_score(cmd: str, ref_path: Path, est_path: Path) -> float:
    out = subprocess.run([cmd, str(ref_path), str(est_path)],
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


@torch.no_grad()
def evaluate_tasks(model: SpeechModel, corpus: CorpusData, tasks, split: str,
                   options, decoder_choice: str | None = None,
                   corpus_root: Path | None = None,
                   pesq_cmd: str | None = None) -> list[dict]:
    """Metric rows for every configured task on one split (deterministic)."""
    model.eval()
    rows: list[dict] = []
    root = Path(corpus_root) if corpus_root else corpus.root

    def add(task, metric, value):
        rows.append({"task": task, "metric": metric, "value": float(value),
                     "split": split})

    if "asr" in tasks:
        edits = {"ctc": 0, "s2s": 0}
        ref_words_total = 0
        for i, rec in enumerate(corpus.records(split)):
            item = corpus.tensors(rec, split, i)
            feats = item.feats[None]
            lengths = torch.tensor([item.feats.shape[0]])
            vc, clens = model.content_encode(feats, lengths)
            cmask = lengths_to_mask(clens, vc.shape[1])
            post = torch.softmax(model.text_decoder.ctc_logits(vc)[0, :int(clens[0])], dim=-1)
            hyp_ctc = ids_to_words(greedy_ctc_decode(post.numpy()), corpus)
            hyp_s2s = ids_to_words(
                model.text_decoder.greedy_s2s(vc, cmask, max_len=2 * len(item.bpe_ids) + 8)[0],
                corpus)
            ref = rec.transcript.split()
            edits["ctc"] += edit_distance(hyp_ctc, ref)
            edits["s2s"] += edit_distance(hyp_s2s, ref)
            ref_words_total += len(ref)
        add("asr", "wer_ctc", edits["ctc"] / ref_words_total)
        add("asr", "wer_s2s", edits["s2s"] / ref_words_total)
        choice = decoder_choice or ("ctc" if edits["ctc"] <= edits["s2s"] else "s2s")
        add("asr", "wer", edits[choice] / ref_words_total)

    if "se" in tasks:
        mae_sum, sisdr_sum, stoi_sum, pesq_sum, n = 0.0, 0.0, 0.0, 0.0, 0
        pesq_n = 0
        for i, rec in enumerate(corpus.records(split)):
            item = corpus.tensors(rec, split, i)
            denoised = se_infer(model, item.noisy_feats[None],
                                torch.tensor([item.noisy_feats.shape[0]]))[0]
            mae_sum += float((denoised - item.feats).abs().mean())
            mean, scale = item.mel_stats
            est = mel_to_waveform(denoised.numpy(), mean, scale)
            ref = load_wav(root / rec.audio_path)
            sisdr_sum += sisdr(est, ref)
            stoi_sum += stoi(est, ref)
            n += 1
            if pesq_cmd:
                import tempfile

                from ..features.audio import save_wav
                with tempfile.TemporaryDirectory() as td:
                    rp, ep = Path(td) / "ref.wav", Path(td) / "est.wav"
                    save_wav(rp, ref)
                    save_wav(ep, est)
                    pesq_sum += _pesq_score(pesq_cmd, rp, ep)
                    pesq_n += 1
        add("se", "mae", mae_sum / n)
        add("se", "sisdr", sisdr_sum / n)
        add("se", "stoi", stoi_sum / n)
        if pesq_n:
            add("se", "pesq", pesq_sum / pesq_n)

    if "sc" in tasks:
        correct, n = 0, 0
        for i, rec in enumerate(corpus.records(split)):
            item = corpus.tensors(rec, split, i)
            pred = sc_infer(model, item.feats[None],
                            torch.tensor([item.feats.shape[0]]))
            correct += int(pred[0]) == item.speaker_index
            n += 1
        add("sc", "acc", correct / n)

    if "tts" in tasks:
        total, n = 0.0, 0
        records = corpus.records(split)
        for i, rec in enumerate(records):
            item = corpus.tensors(rec, split, i)
            tokens = item.phoneme_ids[None]
            tlens = torch.tensor([len(item.phoneme_ids)])
            speaker = torch.tensor([item.speaker_index])
            if options.prosody_predictor:
                out, _ = tts_infer(model, tokens, tlens, speaker)
            else:
                ref_item = _other_same_speaker(corpus, records, i, split)
                out, _ = tts_infer(model, tokens, tlens, speaker,
                                   use_predictor=False,
                                   reference_feats=ref_item.feats[None],
                                   reference_lengths=torch.tensor(
                                       [ref_item.feats.shape[0]]))
            total += mel_mse(out[0].numpy(), item.feats.numpy())
            n += 1
        add("tts", "mse", total / n)

    if "vc" in tasks:
        total, n = 0.0, 0
        for i, (a, b) in enumerate(corpus.pairs(split)):
            src = corpus.tensors(a, split, i)
            ref = corpus.tensors(b, split, i)
            out = vc_infer(model, src.feats[None],
                           torch.tensor([src.feats.shape[0]]),
                           ref.feats[None], torch.tensor([ref.feats.shape[0]]),
                           use_predictor=options.prosody_predictor)
            total += mel_mse(out[0].numpy(), ref.feats.numpy())
            n += 1
        if n:
            add("vc", "mse", total / n)

    return rows


def _other_same_speaker(corpus: CorpusData, records, index: int, split: str):
    """Deterministic mismatched-prosody reference: another utterance by the
    same speaker (falls back to the record itself if it is the only one)."""
    rec = records[index]
    for offset in range(1, len(records)):
        cand = records[(index + offset) % len(records)]
        if cand.speaker_id == rec.speaker_id and cand.utterance_id != rec.utterance_id:
            return corpus.tensors(cand, split, index + offset)
    return corpus.tensors(rec, split, index)
