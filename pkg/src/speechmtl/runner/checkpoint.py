"""Checkpoint container.

A checkpoint file is a torch-serialized dict with exactly these fields:

  format_version   int, currently 1
  config           full experiment config dict (see runner.config)
  config_hash      sha256 of the canonical config JSON
  step             global optimization step count
  seed             experiment seed
  model_state      model state_dict (all named parameter/buffer tensors)
  engine_state     optimizer moments/step plus balancing sigmas
  torch_rng        torch global RNG state (dropout reproducibility)
  sampler_states   per-task numpy bit-generator states
  decoder_choice   "ctc" or "s2s": the recognition head that won on validation

Reloading restores every field, so evaluation after a round trip is
bit-identical to evaluation before saving.
"""

from __future__ import annotations

from pathlib import Path

import torch

FORMAT_VERSION = 1


def save_checkpoint(path, *, config_dict: dict, config_digest: str, step: int,
                    seed: int, model, engine, sampler_states: dict,
                    decoder_choice: str = "ctc") -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config_dict,
        "config_hash": config_digest,
        "step": step,
        "seed": seed,
        "model_state": model.state_dict(),
        "engine_state": engine.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "sampler_states": sampler_states,
        "decoder_choice": decoder_choice,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ValueError(f"unreadable checkpoint {path!r}: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path!r}")
    return payload
