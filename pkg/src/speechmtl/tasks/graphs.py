"""The five task compositions and their loss terms.

Each forward takes the shared model and one task batch and returns a
``LossReport`` whose ``total`` is the documented combination of its named
terms:

  asr: total = alpha * asr_ctc + (1 - alpha) * asr_s2s + asr_recon
  se:  total = se_mae
  sc:  total = sc_ce
  tts: total = tts_mel + tts_dur + tts_speaker + tts_prosody
  vc:  total = vc_conv + vc_rec1 + vc_rec2 + vc_prosody

All frame-level losses are masked means over valid frames. Cross-length
comparisons (voice conversion, predicted prosody) are evaluated on the
per-item overlap of the two sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..model.conformer import lengths_to_mask
from ..model.network import SpeechModel, durations_from_log
from ..model.samplers import match_length
from .ctc import ctc_neg_log_likelihood, min_frames_required

ASR_ALPHA = 0.3
IGNORE_INDEX = -100


@dataclass
class TaskBatch:
    """One task's minibatch; unused fields stay None.

    ``feats`` is the primary speech input (noisy speech for enhancement,
    the target speech for synthesis); ``feats_2`` is the clean reference for
    enhancement and the second utterance of a conversion pair.
    """

    task: str
    feats: torch.Tensor | None = None
    feat_lengths: torch.Tensor | None = None
    feats_2: torch.Tensor | None = None
    feat_lengths_2: torch.Tensor | None = None
    tokens: torch.Tensor | None = None
    token_lengths: torch.Tensor | None = None
    durations: torch.Tensor | None = None
    speaker_ids: torch.Tensor | None = None
    utterance_ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        for t in (self.feats, self.tokens):
            if t is not None:
                return t.shape[0]
        raise ValueError("empty batch")


@dataclass
class LossReport:
    """Named scalar loss terms plus their combined total."""

    task: str
    terms: dict[str, torch.Tensor]
    total: torch.Tensor
    extras: dict[str, float] = field(default_factory=dict)

    def scalars(self) -> dict[str, float]:
        out = {name: float(t.detach()) for name, t in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out


def masked_mean(err: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of per-frame error over valid frames (and any trailing dims)."""
    m = mask.to(err.dtype)
    while m.ndim < err.ndim:
        m = m[..., None]
    denom = m.expand_as(err).sum()
    return (err * m).sum() / torch.clamp(denom, min=1.0)


def masked_mse(pred, target, mask):
    return masked_mean((pred - target) ** 2, mask)


def masked_mae(pred, target, mask):
    return masked_mean((pred - target).abs(), mask)


def overlap_mask(lengths_a, lengths_b, max_len: int) -> torch.Tensor:
    joint = torch.minimum(torch.as_tensor(lengths_a), torch.as_tensor(lengths_b))
    return lengths_to_mask(joint, max_len)


def batch_ctc_loss(log_probs, content_lengths, tokens, token_lengths, blank):
    """Mean per-item alignment loss; infeasible items are skipped and counted."""
    losses = []
    skipped = 0
    for b in range(log_probs.shape[0]):
        t = int(content_lengths[b])
        l = int(token_lengths[b])
        target = tokens[b, :l]
        if t < min_frames_required(target):
            skipped += 1
            continue
        losses.append(ctc_neg_log_likelihood(log_probs[b, :t], target, blank))
    if not losses:
        zero = log_probs.sum() * 0.0
        return zero, skipped
    return torch.stack(losses).mean(), skipped


def s2s_cross_entropy(logits, tokens, token_lengths, eos: int):
    """Teacher-forced cross entropy with the end marker appended per item."""
    b, l_plus_1, _ = logits.shape
    targets = torch.full((b, l_plus_1), IGNORE_INDEX, dtype=torch.long,
                         device=logits.device)
    for i in range(b):
        l = int(token_lengths[i])
        targets[i, :l] = tokens[i, :l]
        targets[i, l] = eos
    return torch.nn.functional.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
        ignore_index=IGNORE_INDEX)


def asr_forward(model: SpeechModel, batch: TaskBatch, alpha: float = ASR_ALPHA) -> LossReport:
    feats, lengths = batch.feats, batch.feat_lengths
    mask = lengths_to_mask(lengths, feats.shape[1])
    vc, clens = model.content_encode(feats, lengths)
    cmask = lengths_to_mask(clens, vc.shape[1])

    ctc_logp = torch.log_softmax(model.text_decoder.ctc_logits(vc), dim=-1)
    ctc, skipped = batch_ctc_loss(ctc_logp, clens, batch.tokens,
                                  batch.token_lengths, model.text_decoder.vocab)
    s2s_logits = model.text_decoder.s2s_logits(vc, cmask, batch.tokens)
    s2s = s2s_cross_entropy(s2s_logits, batch.tokens, batch.token_lengths,
                            model.text_decoder.bos)

    vp = model.prosody_encode(feats, mask)
    recon = masked_mse(model.audio_decode(vp, vc, mask, cmask), feats, mask)

    total = alpha * ctc + (1.0 - alpha) * s2s + recon
    report = LossReport("asr", {"asr_ctc": ctc, "asr_s2s": s2s, "asr_recon": recon}, total)
    if skipped:
        report.extras["asr_ctc_skipped"] = float(skipped)
    return report


def se_forward(model: SpeechModel, batch: TaskBatch) -> LossReport:
    noisy, clean = batch.feats, batch.feats_2
    if noisy.shape[1] != clean.shape[1]:
        raise ValueError("noisy/clean feature length mismatch")
    lengths = batch.feat_lengths
    mask = lengths_to_mask(lengths, noisy.shape[1])
    vp = model.prosody_encode(noisy, mask)
    vc, clens = model.content_encode(noisy, lengths)
    cmask = lengths_to_mask(clens, vc.shape[1])
    denoised = model.audio_decode(vp, vc, mask, cmask)
    mae = masked_mae(denoised, clean, mask)
    return LossReport("se", {"se_mae": mae}, mae)


def sc_forward(model: SpeechModel, batch: TaskBatch) -> LossReport:
    labels = batch.speaker_ids
    if int(labels.max()) >= model.n_speakers or int(labels.min()) < 0:
        raise ValueError("speaker label outside classifier range")
    mask = lengths_to_mask(batch.feat_lengths, batch.feats.shape[1])
    vs = model.speaker_encode(model.prosody_encode(batch.feats, mask), mask)
    logits = model.speaker_classifier(vs)
    ce = torch.nn.functional.cross_entropy(logits, labels)
    accuracy = float((logits.argmax(dim=1) == labels).float().mean())
    return LossReport("sc", {"sc_ce": ce}, ce, extras={"sc_accuracy": accuracy})


def tts_forward(model: SpeechModel, batch: TaskBatch,
                teacher_prosody: bool = False,
                use_predictor: bool = True) -> LossReport:
    """Synthesis training loss.

    With ``use_predictor`` off (the ordinary regime without the prosody
    estimator) the decoder consumes the target's own encoded prosody and
    there is no prosody regression term.
    """
    if batch.durations is None:
        raise ValueError("synthesis training requires ground-truth durations")
    feats, lengths = batch.feats, batch.feat_lengths
    mask = lengths_to_mask(lengths, feats.shape[1])
    token_mask = lengths_to_mask(batch.token_lengths, batch.tokens.shape[1])
    table_vs = model.speaker_table(batch.speaker_ids)

    content, clens, log_dur, _ = model.text_encode(
        batch.tokens, batch.token_lengths, table_vs, batch.durations)
    cmask = lengths_to_mask(clens, content.shape[1])

    dur_target = torch.log(batch.durations.to(log_dur.dtype).clamp(min=1.0))
    dur_loss = masked_mae(log_dur, dur_target, token_mask)

    vp_target = model.prosody_encode(feats, mask)
    vs_enc = model.speaker_encode(vp_target, mask)
    speaker_loss = torch.mean((vs_enc - table_vs) ** 2)

    terms = {"tts_mel": None, "tts_dur": dur_loss, "tts_speaker": speaker_loss}
    if use_predictor:
        vp_pred = match_length(model.prosody_predict(content, table_vs, cmask),
                               feats.shape[1])
        terms["tts_prosody"] = masked_mse(vp_pred, vp_target, mask)
        dec_prosody = vp_target if teacher_prosody else vp_pred
    else:
        dec_prosody = vp_target
    predicted = model.audio_decode(dec_prosody, content, mask, cmask)
    terms["tts_mel"] = masked_mse(predicted, feats, mask)

    total = None
    for t in terms.values():
        total = t if total is None else total + t
    return LossReport("tts", terms, total)


def vc_forward(model: SpeechModel, batch: TaskBatch,
               use_predictor: bool = True) -> LossReport:
    """Conversion training loss over parallel pairs.

    Without the prosody estimator the conversion path consumes the target
    utterance's own prosody (feasible only because the pair is parallel)
    and the prosody regression term is dropped.
    """
    x1, l1 = batch.feats, batch.feat_lengths
    x2, l2 = batch.feats_2, batch.feat_lengths_2
    if x2 is None:
        raise ValueError("conversion requires parallel utterance pairs")
    m1 = lengths_to_mask(l1, x1.shape[1])
    m2 = lengths_to_mask(l2, x2.shape[1])

    vp1 = model.prosody_encode(x1, m1)
    vp2 = model.prosody_encode(x2, m2)
    vs2 = model.speaker_encode(vp2, m2)
    vc1, c1 = model.content_encode(x1, l1)
    vc2, c2 = model.content_encode(x2, l2)
    c1mask = lengths_to_mask(c1, vc1.shape[1])
    c2mask = lengths_to_mask(c2, vc2.shape[1])

    # Conversion follows the source content length; compare on the overlap.
    t_overlap = min(x1.shape[1], x2.shape[1])
    omask = overlap_mask(l1, l2, t_overlap)
    terms = {}
    if use_predictor:
        vp12 = match_length(model.prosody_predict(vc1, vs2, c1mask), x1.shape[1])
        terms["vc_prosody"] = masked_mse(vp12[:, :t_overlap], vp2[:, :t_overlap], omask)
    else:
        vp12 = _tile_to_length(vp2, x1.shape[1])
    converted = model.audio_decode(vp12, vc1, m1, c1mask)
    conv_loss = masked_mse(converted[:, :t_overlap], x2[:, :t_overlap], omask)

    rec1 = masked_mse(model.audio_decode(vp1, vc1, m1, c1mask), x1, m1)
    rec2 = masked_mse(model.audio_decode(vp2, vc2, m2, c2mask), x2, m2)

    ordered = {"vc_conv": conv_loss, "vc_rec1": rec1, "vc_rec2": rec2}
    ordered.update(terms)
    total = None
    for t in ordered.values():
        total = t if total is None else total + t
    return LossReport("vc", ordered, total)


def task_forward(model: SpeechModel, batch: TaskBatch, *,
                 asr_alpha: float = ASR_ALPHA,
                 tts_teacher_prosody: bool = False,
                 use_prosody_predictor: bool = True) -> LossReport:
    if batch.task == "asr":
        return asr_forward(model, batch, asr_alpha)
    if batch.task == "se":
        return se_forward(model, batch)
    if batch.task == "sc":
        return sc_forward(model, batch)
    if batch.task == "tts":
        return tts_forward(model, batch, tts_teacher_prosody, use_prosody_predictor)
    if batch.task == "vc":
        return vc_forward(model, batch, use_prosody_predictor)
    raise ValueError(f"unknown task {batch.task!r}")


# ---------------------------------------------------------------------------
# Inference-time compositions.
# ---------------------------------------------------------------------------

def _tile_to_length(x: torch.Tensor, target_len: int) -> torch.Tensor:
    """Loop a (mismatched) reference sequence along time to the target length."""
    if x.shape[1] >= target_len:
        return x[:, :target_len]
    reps = -(-target_len // x.shape[1])
    return x.repeat(1, reps, 1)[:, :target_len]


@torch.no_grad()
def tts_infer(model: SpeechModel, tokens: torch.Tensor, token_lengths: torch.Tensor,
              speaker_ids: torch.Tensor, *, use_predictor: bool = True,
              reference_feats: torch.Tensor | None = None,
              reference_lengths: torch.Tensor | None = None,
              teacher_durations: torch.Tensor | None = None):
    """Text + speaker id -> feature frames.

    With the prosody predictor enabled the whole pipeline runs from text
    alone. Otherwise the prosody comes from ``reference_feats`` (some other
    utterance, typically by the same speaker), mirroring the degraded
    inference mode the predictor was introduced to fix.
    """
    table_vs = model.speaker_table(speaker_ids)
    content, clens, log_dur, flens = model.text_encode(
        tokens, token_lengths, table_vs, teacher_durations)
    cmask = lengths_to_mask(clens, content.shape[1])
    out_len = int(content.shape[1]) * model.audio_decoder.upsampler.rate
    if use_predictor:
        vp = model.prosody_predict(content, table_vs, cmask)[:, :out_len]
    else:
        if reference_feats is None:
            raise ValueError("predictor-disabled synthesis needs reference speech")
        ref_mask = None
        if reference_lengths is not None:
            ref_mask = lengths_to_mask(reference_lengths, reference_feats.shape[1])
        vp = _tile_to_length(model.prosody_encode(reference_feats, ref_mask), out_len)
    frame_lengths = torch.minimum(
        torch.as_tensor(flens), torch.full_like(torch.as_tensor(flens), out_len))
    mask = lengths_to_mask(frame_lengths, out_len)
    return model.audio_decode(vp, content, mask, cmask), frame_lengths


@torch.no_grad()
def vc_infer(model: SpeechModel, src_feats, src_lengths, ref_feats, ref_lengths, *,
             use_predictor: bool = True):
    """Convert source content to the reference utterance's speaker."""
    src_mask = lengths_to_mask(src_lengths, src_feats.shape[1])
    ref_mask = lengths_to_mask(ref_lengths, ref_feats.shape[1])
    vc, clens = model.content_encode(src_feats, src_lengths)
    cmask = lengths_to_mask(clens, vc.shape[1])
    vp_ref = model.prosody_encode(ref_feats, ref_mask)
    if use_predictor:
        vs = model.speaker_encode(vp_ref, ref_mask)
        vp = match_length(model.prosody_predict(vc, vs, cmask), src_feats.shape[1])
    else:
        vp = match_length(vp_ref, src_feats.shape[1])
    return model.audio_decode(vp, vc, src_mask, cmask)


@torch.no_grad()
def se_infer(model: SpeechModel, noisy_feats, lengths):
    mask = lengths_to_mask(lengths, noisy_feats.shape[1])
    vp = model.prosody_encode(noisy_feats, mask)
    vc, clens = model.content_encode(noisy_feats, lengths)
    return model.audio_decode(vp, vc, mask, lengths_to_mask(clens, vc.shape[1]))


@torch.no_grad()
def sc_infer(model: SpeechModel, feats, lengths):
    mask = lengths_to_mask(lengths, feats.shape[1])
    vs = model.speaker_encode(model.prosody_encode(feats, mask), mask)
    return model.speaker_classifier(vs).argmax(dim=1)


def expected_tts_frames(durations: torch.Tensor, rate: int = 4) -> int:
    """Output frame count implied by per-token frame durations."""
    total = int(torch.as_tensor(durations).sum())
    return math.ceil(total / rate) * rate
