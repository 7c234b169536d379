"""Command-line surface: train, eval, infer, matrix.

Every failure path exits nonzero after printing one machine-parsable line to
stderr: ``ERROR <CODE>: <message>``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from ..evaluate.decode import greedy_ctc_decode
from ..evaluate.vocoder import mel_to_waveform
from ..features.audio import cmvn, add_deltas, load_wav, mel_spectrogram, save_wav
from ..features.text import encode_phonemes
from ..model.conformer import lengths_to_mask
from ..tasks.data import TASKS
from ..tasks.graphs import se_infer, tts_infer, vc_infer
from .checkpoint import load_checkpoint
from .config import ConfigError, config_hash, load_config
from .matrix import load_grid, run_matrix
from .trainer import TrainingRun, evaluate_tasks, restore_for_eval

RUN_ROOT_ENV = "SPEECHMTL_RUN_ROOT"


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def fail(code: str, message: str) -> int:
    print(f"ERROR {code}: {message}", file=sys.stderr)
    return 1


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _features_for(path):
    wav = load_wav(path)
    return cmvn(add_deltas(mel_spectrogram(wav)))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir) if args.run_dir else run_root() / cfg.run_name
    torch.set_num_threads(int(os.environ.get("SPEECHMTL_THREADS", "2")))
    run = TrainingRun(cfg, run_dir)
    ckpt = run.train(resume_path=args.resume)
    print(f"trained {cfg.max_steps} steps -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    payload = load_checkpoint(args.ckpt)
    if payload["config_hash"] != config_hash(cfg):
        raise CliError("CKPT_HASH", "checkpoint/config hash mismatch")
    ckpt_path = Path(args.ckpt)
    model, corpus, run_cfg = restore_for_eval(payload, ckpt_path.parent)
    rows = evaluate_tasks(model, corpus, run_cfg.tasks, args.split, run_cfg.options,
                          decoder_choice=payload.get("decoder_choice"),
                          corpus_root=corpus.root, pesq_cmd=run_cfg.data.pesq_cmd)
    out = Path(args.out) if args.out else ckpt_path.parent / "results.tsv"
    with open(out, "a", encoding="utf-8") as f:
        for r in rows:
            line = (f"{r['task']}\t{r['metric']}\t{r['value']:.6g}"
                    f"\t{r['split']}\t{ckpt_path.name}")
            f.write(line + "\n")
            print(line)
    return 0


def cmd_infer(args) -> int:
    if args.task not in TASKS:
        raise CliError("TASK", f"unknown task {args.task!r}")
    payload = load_checkpoint(args.ckpt)
    model, corpus, cfg = restore_for_eval(payload, Path(args.ckpt).parent)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    task = args.task

    if task in ("asr", "sc", "se"):
        if not args.inputs:
            raise CliError("INPUT", "audio input required (--in)")
        feats_obj = _features_for(args.inputs[0])
        feats = torch.tensor(feats_obj.frames, dtype=torch.float32)[None]
        lengths = torch.tensor([feats.shape[1]])
        if task == "asr":
            with torch.no_grad():
                vc, clens = model.content_encode(feats, lengths)
                if payload.get("decoder_choice", "ctc") == "s2s":
                    ids = model.text_decoder.greedy_s2s(
                        vc, lengths_to_mask(clens, vc.shape[1]), max_len=128)[0]
                else:
                    post = torch.softmax(
                        model.text_decoder.ctc_logits(vc)[0, :int(clens[0])], dim=-1)
                    ids = greedy_ctc_decode(post.numpy())
            text = "".join(corpus.vocab[i] for i in ids)
            (out_dir / "transcript.txt").write_text(text + "\n")
            print(text)
        elif task == "sc":
            from ..tasks.graphs import sc_infer
            label = corpus.speakers[int(sc_infer(model, feats, lengths)[0])]
            (out_dir / "speaker.txt").write_text(label + "\n")
            print(label)
        else:
            denoised = se_infer(model, feats, lengths)[0].numpy()
            np.save(out_dir / "enhanced.npy", denoised)
            wav = mel_to_waveform(denoised, feats_obj.mean, feats_obj.scale)
            save_wav(out_dir / "enhanced.wav", wav)
            print(out_dir / "enhanced.wav")
        return 0

    if task == "tts":
        if args.text:
            text = args.text
        elif args.inputs:
            text = Path(args.inputs[0]).read_text().strip()
        else:
            raise CliError("INPUT", "text input required (--text or --in)")
        if args.speaker not in corpus.speaker_index:
            raise CliError("SPEAKER", f"unknown speaker id {args.speaker!r}")
        seq = encode_phonemes(text, corpus.lexicon())
        tokens = torch.tensor(seq.ids, dtype=torch.long)[None]
        tlens = torch.tensor([len(seq)])
        speaker = torch.tensor([corpus.speaker_index[args.speaker]])
        out, out_lengths = tts_infer(model, tokens, tlens, speaker,
                                     use_predictor=cfg.options.prosody_predictor)
        feats = out[0, :int(out_lengths[0])].numpy()
        np.save(out_dir / "tts.npy", feats)
        mean, scale = corpus.global_stats()
        save_wav(out_dir / "tts.wav", mel_to_waveform(feats, mean, scale))
        print(out_dir / "tts.wav")
        return 0

    # voice conversion: source content, reference speaker
    if len(args.inputs) < 2:
        raise CliError("INPUT", "conversion needs source and reference audio (--in SRC REF)")
    src = _features_for(args.inputs[0])
    ref = _features_for(args.inputs[1])
    src_t = torch.tensor(src.frames, dtype=torch.float32)[None]
    ref_t = torch.tensor(ref.frames, dtype=torch.float32)[None]
    out = vc_infer(model, src_t, torch.tensor([src_t.shape[1]]),
                   ref_t, torch.tensor([ref_t.shape[1]]),
                   use_predictor=cfg.options.prosody_predictor)
    feats = out[0].numpy()
    np.save(out_dir / "converted.npy", feats)
    save_wav(out_dir / "converted.wav", mel_to_waveform(feats, ref.mean, ref.scale))
    print(out_dir / "converted.wav")
    return 0


def cmd_matrix(args) -> int:
    grid = load_grid(args.grid)
    torch.set_num_threads(int(os.environ.get("SPEECHMTL_THREADS", "2")))
    run_matrix(grid, args.out)
    print(f"matrix complete -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speechmtl",
        description="Multi-task speech processing: train, evaluate, infer, grid runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--run-dir", default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_infer = sub.add_parser("infer", help="run one task on supplied inputs")
    p_infer.add_argument("--task", required=True)
    p_infer.add_argument("--ckpt", required=True)
    p_infer.add_argument("--in", dest="inputs", nargs="*", default=[])
    p_infer.add_argument("--text", default=None, help="inline text for synthesis")
    p_infer.add_argument("--speaker", default=None, help="speaker id for synthesis")
    p_infer.add_argument("--out", required=True)
    p_infer.set_defaults(func=cmd_infer)

    p_matrix = sub.add_parser("matrix", help="run an experiment grid")
    p_matrix.add_argument("--grid", required=True)
    p_matrix.add_argument("--out", required=True)
    p_matrix.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return fail(exc.code, str(exc))
    except ConfigError as exc:
        return fail("CONFIG", "; ".join(exc.problems))
    except FileNotFoundError as exc:
        return fail("IO", str(exc))
    except RuntimeError as exc:
        if "locked" in str(exc):
            return fail("LOCKED", str(exc))
        return fail("RUNTIME", str(exc))
    except ValueError as exc:
        return fail("INVALID", str(exc))


if __name__ == "__main__":
    sys.exit(main())
