"""The seven neural modules and their composition into one trainable network.

Latent spaces:
  prosody   (B, T, d)   frame rate, carries speaker/prosodic detail
  speaker   (B, d)      utterance level, pooled from prosody
  content   (B, T', d)  rate-4 downsampled, carries linguistic content

The audio decoder consumes (prosody, content) and emits feature frames; the
text side maps token sequences into the same content space via duration
prediction and length regulation, and decodes content back to tokens with a
per-frame head and an autoregressive head.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .conformer import ConformerStack, lengths_to_mask, sinusoidal_positions
from .samplers import Downsampler, Upsampler, match_length

FEAT_DIM = 240

# 1-D parameters whose names match these patterns keep their magnitude
# meaningful (offsets, norm gains) and are excluded from weight decay.
DECAY_EXEMPT_PATTERNS = (
    "bias",
    "norm_ff.weight",
    "norm_mha.weight",
    "norm_conv.weight",
    "norm_final.weight",
)


def decay_exempt(name: str) -> bool:
    return any(p in name for p in DECAY_EXEMPT_PATTERNS)


class ProsodyEncoder(nn.Module):
    """Feature frames -> frame-level prosody embeddings."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.prenet = nn.Linear(FEAT_DIM, cfg.d_model)
        self.stack = ConformerStack(cfg.prosody_enc_layers, cfg.d_model, cfg.d_ff,
                                    cfg.heads, cfg.conv_kernel, cfg.dropout,
                                    use_positions=cfg.use_positions)

    def forward(self, feats, mask=None):
        return self.stack(self.prenet(feats), mask)


class SpeakerEncoder(nn.Module):
    """Prosody embeddings -> one utterance-level speaker vector.

    Convolution-free attention blocks followed by learned attention pooling,
    so apart from the optional position table the output is invariant to
    frame order.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.stack = ConformerStack(cfg.speaker_enc_layers, cfg.d_model, cfg.d_ff,
                                    cfg.heads, cfg.conv_kernel, cfg.dropout,
                                    use_conv=False, use_positions=cfg.use_positions)
        self.pool_logits = nn.Linear(cfg.d_model, 1)

    def transform(self, vp, mask=None):
        return self.stack(vp, mask)

    def pool(self, h, mask=None):
        logits = self.pool_logits(h).squeeze(-1)
        if mask is not None:
            logits = logits.masked_fill(~mask, float("-inf"))
        w = torch.softmax(logits, dim=1)
        return torch.einsum("bt,btd->bd", w, h)

    def forward(self, vp, mask=None):
        return self.pool(self.transform(vp, mask), mask)


class ContentEncoder(nn.Module):
    """Feature frames -> rate-4 content embeddings of length ceil(T/4)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.downsampler = Downsampler(FEAT_DIM, cfg.d_model, cfg.sampler_blocks)
        self.stack = ConformerStack(cfg.content_enc_layers, cfg.d_model, cfg.d_ff,
                                    cfg.heads, cfg.conv_kernel, cfg.dropout,
                                    use_positions=cfg.use_positions)

    def forward(self, feats, lengths):
        if feats.shape[1] < self.downsampler.rate:
            raise ValueError("input shorter than the downsampling receptive field")
        vc = self.downsampler(feats)
        out_lengths = self.downsampler.out_lengths(lengths)
        mask = lengths_to_mask(out_lengths, vc.shape[1])
        return self.stack(vc, mask), out_lengths


class AudioDecoder(nn.Module):
    """(prosody, content) -> feature frames.

    Content passes through its own decoder stack and is upsampled back to
    frame rate, aligned to the prosody length (trim, or pad up to 3 frames),
    concatenated with prosody, and merged.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.content_decoder = ConformerStack(cfg.content_dec_layers, cfg.d_model, cfg.d_ff,
                                              cfg.heads, cfg.conv_kernel, cfg.dropout,
                                              use_positions=cfg.use_positions)
        self.upsampler = Upsampler(cfg.d_model, cfg.sampler_blocks)
        self.merge_in = nn.Linear(2 * cfg.d_model, cfg.d_model)
        self.merge_decoder = ConformerStack(cfg.merge_dec_layers, cfg.d_model, cfg.d_ff,
                                            cfg.heads, cfg.conv_kernel, cfg.dropout,
                                            use_positions=cfg.use_positions)
        self.out_proj = nn.Linear(cfg.d_model, FEAT_DIM)

    def forward(self, vp, vc, vp_mask=None, vc_mask=None):
        h = self.content_decoder(vc, vc_mask)
        h = self.upsampler(h)
        h = match_length(h, vp.shape[1])
        merged = self.merge_in(torch.cat([vp, h], dim=-1))
        merged = self.merge_decoder(merged, vp_mask)
        return self.out_proj(merged)


class DurationPredictor(nn.Module):
    """Per-token log-durations from unit vectors concatenated with the speaker vector."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.conv1 = nn.Conv1d(2 * d, d, 3, padding=1)
        self.norm1 = nn.LayerNorm(d)
        self.conv2 = nn.Conv1d(d, d, 3, padding=1)
        self.norm2 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.duration_dropout)
        self.proj = nn.Linear(d, 1)

    def forward(self, vu, vs, mask=None):
        x = torch.cat([vu, vs[:, None, :].expand(-1, vu.shape[1], -1)], dim=-1)
        y = x.transpose(1, 2)
        y = torch.nn.functional.silu(self.conv1(y)).transpose(1, 2)
        y = self.dropout(self.norm1(y)).transpose(1, 2)
        y = torch.nn.functional.silu(self.conv2(y)).transpose(1, 2)
        y = self.dropout(self.norm2(y))
        logd = self.proj(y).squeeze(-1)
        if mask is not None:
            logd = logd.masked_fill(~mask, 0.0)
        return logd


def durations_from_log(log_durations: torch.Tensor) -> torch.Tensor:
    """Inference rounding: round(exp(x)) clamped to at least one frame."""
    return torch.clamp(torch.round(torch.exp(log_durations)), min=1.0).long()


def length_regulate(vu: torch.Tensor, durations: torch.Tensor) -> torch.Tensor:
    """Repeat row i of ``vu`` durations[i] times, in order.

    vu: (L, d); durations: (L,) positive ints. Returns (sum(durations), d).
    """
    durations = torch.as_tensor(durations, dtype=torch.long, device=vu.device)
    if durations.ndim != 1 or durations.shape[0] != vu.shape[0]:
        raise ValueError("one duration per token required")
    if (durations < 1).any():
        raise ValueError("durations must be >= 1")
    return torch.repeat_interleave(vu, durations, dim=0)


class TextEncoder(nn.Module):
    """Token ids -> content embeddings at the shared rate-4 resolution.

    The speaker vector only conditions duration prediction; the regulated
    content rows themselves carry no speaker term.
    """

    def __init__(self, cfg: ModelConfig, token_vocab: int):
        super().__init__()
        self.embed = nn.Embedding(token_vocab, cfg.d_model)
        self.unit_encoder = ConformerStack(cfg.unit_enc_layers, cfg.d_model, cfg.d_ff,
                                           cfg.unit_heads, cfg.conv_kernel, cfg.dropout,
                                           use_positions=cfg.use_positions)
        self.duration_predictor = DurationPredictor(cfg)
        self.downsampler = Downsampler(cfg.d_model, cfg.d_model, cfg.sampler_blocks)

    def encode_units(self, tokens, mask=None):
        return self.unit_encoder(self.embed(tokens), mask)

    def forward(self, tokens, token_lengths, vs, teacher_durations=None):
        """Returns (content, content_lengths, log_durations, frame_lengths).

        ``teacher_durations`` (B, L) drives length regulation when given
        (training); otherwise the predicted durations are rounded and used.
        """
        token_mask = lengths_to_mask(token_lengths, tokens.shape[1])
        vu = self.encode_units(tokens, token_mask)
        log_durations = self.duration_predictor(vu, vs, token_mask)
        if teacher_durations is not None:
            durations = torch.as_tensor(teacher_durations, dtype=torch.long,
                                        device=tokens.device)
        else:
            durations = durations_from_log(log_durations)
        durations = durations * token_mask.long()
        regulated = []
        for b in range(tokens.shape[0]):
            n = int(token_lengths[b])
            regulated.append(length_regulate(vu[b, :n], durations[b, :n]))
        frame_lengths = torch.tensor([r.shape[0] for r in regulated], dtype=torch.long)
        frames = torch.nn.utils.rnn.pad_sequence(regulated, batch_first=True)
        content = self.downsampler(frames)
        content_lengths = self.downsampler.out_lengths(frame_lengths)
        return content, content_lengths, log_durations, frame_lengths


class TextDecoder(nn.Module):
    """Content embeddings -> token posteriors via two heads.

    The per-frame head emits ``vocab + 1`` classes (the extra class is the
    alignment blank); the autoregressive head shares the vocabulary and uses
    the extra index as start/end-of-sequence.
    """

    def __init__(self, cfg: ModelConfig, vocab: int):
        super().__init__()
        self.vocab = vocab
        self.bos = vocab  # shared start/end index
        self.ctc_head = nn.Linear(cfg.d_model, vocab + 1)
        self.embed = nn.Embedding(vocab + 1, cfg.d_model)
        layer = nn.TransformerDecoderLayer(
            cfg.d_model, cfg.heads, dim_feedforward=cfg.d_ff, dropout=cfg.dropout,
            activation="gelu", batch_first=True, norm_first=True)
        self.s2s = nn.TransformerDecoder(layer, cfg.s2s_dec_layers,
                                         norm=nn.LayerNorm(cfg.d_model))
        self.s2s_proj = nn.Linear(cfg.d_model, vocab + 1)
        self.use_positions = cfg.use_positions

    def ctc_logits(self, content):
        return self.ctc_head(content)

    def s2s_logits(self, content, content_mask, teacher_tokens):
        """Teacher-forced logits of shape (B, L + 1, vocab + 1)."""
        b, l = teacher_tokens.shape
        inputs = torch.cat([
            torch.full((b, 1), self.bos, dtype=torch.long, device=teacher_tokens.device),
            teacher_tokens,
        ], dim=1)
        h = self.embed(inputs)
        if self.use_positions:
            h = h + sinusoidal_positions(h.shape[1], h.shape[2], h.dtype, h.device)
        causal = nn.Transformer.generate_square_subsequent_mask(l + 1, device=h.device,
                                                                dtype=h.dtype)
        pad = None if content_mask is None else ~content_mask
        out = self.s2s(h, content, tgt_mask=causal, memory_key_padding_mask=pad)
        return self.s2s_proj(out)

    def greedy_s2s(self, content, content_mask, max_len: int) -> list[list[int]]:
        """Autoregressive argmax decoding until end-of-sequence or max_len."""
        b = content.shape[0]
        device = content.device
        tokens = torch.full((b, 1), self.bos, dtype=torch.long, device=device)
        finished = torch.zeros(b, dtype=torch.bool, device=device)
        outputs: list[list[int]] = [[] for _ in range(b)]
        pad = None if content_mask is None else ~content_mask
        for _ in range(max_len):
            h = self.embed(tokens)
            if self.use_positions:
                h = h + sinusoidal_positions(h.shape[1], h.shape[2], h.dtype, h.device)
            causal = nn.Transformer.generate_square_subsequent_mask(
                tokens.shape[1], device=device, dtype=h.dtype)
            out = self.s2s(h, content, tgt_mask=causal, memory_key_padding_mask=pad)
            nxt = self.s2s_proj(out[:, -1]).argmax(dim=-1)
            for i in range(b):
                if not finished[i]:
                    if int(nxt[i]) == self.bos:
                        finished[i] = True
                    else:
                        outputs[i].append(int(nxt[i]))
            if bool(finished.all()):
                break
            tokens = torch.cat([tokens, nxt[:, None]], dim=1)
        return outputs


class ProsodyPredictor(nn.Module):
    """Estimate frame-level prosody from content plus a speaker vector."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.in_proj = nn.Linear(2 * cfg.d_model, cfg.d_model)
        self.stack = ConformerStack(cfg.prosody_pred_layers, cfg.d_model, cfg.d_ff,
                                    cfg.heads, cfg.conv_kernel, cfg.dropout,
                                    use_positions=cfg.use_positions)
        self.upsampler = Upsampler(cfg.d_model, cfg.sampler_blocks)
        self.out_proj = nn.Linear(cfg.d_model, cfg.d_model)

    def forward(self, vc, vs, vc_mask=None):
        x = torch.cat([vc, vs[:, None, :].expand(-1, vc.shape[1], -1)], dim=-1)
        h = self.stack(self.in_proj(x), vc_mask)
        return self.out_proj(self.upsampler(h))


class SpeechModel(nn.Module):
    """All modules plus the trainable speaker table and classifier head."""

    def __init__(self, cfg: ModelConfig, text_vocab: int, phoneme_vocab: int,
                 n_speakers: int):
        super().__init__()
        self.cfg = cfg
        self.text_vocab = text_vocab
        self.phoneme_vocab = phoneme_vocab
        self.n_speakers = n_speakers
        self.prosody_encoder = ProsodyEncoder(cfg)
        self.speaker_encoder = SpeakerEncoder(cfg)
        self.content_encoder = ContentEncoder(cfg)
        self.audio_decoder = AudioDecoder(cfg)
        self.text_encoder = TextEncoder(cfg, phoneme_vocab)
        self.text_decoder = TextDecoder(cfg, text_vocab)
        self.prosody_predictor = ProsodyPredictor(cfg)
        self.speaker_table = nn.Embedding(n_speakers, cfg.d_model)
        self.speaker_classifier = nn.Linear(cfg.d_model, n_speakers)

    # Convenience wrappers named after the seven operations.
    def prosody_encode(self, feats, mask=None):
        return self.prosody_encoder(feats, mask)

    def speaker_encode(self, vp, mask=None):
        return self.speaker_encoder(vp, mask)

    def content_encode(self, feats, lengths):
        return self.content_encoder(feats, lengths)

    def audio_decode(self, vp, vc, vp_mask=None, vc_mask=None):
        return self.audio_decoder(vp, vc, vp_mask, vc_mask)

    def text_encode(self, tokens, token_lengths, vs, teacher_durations=None):
        return self.text_encoder(tokens, token_lengths, vs, teacher_durations)

    def prosody_predict(self, vc, vs, vc_mask=None):
        return self.prosody_predictor(vc, vs, vc_mask)


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic initialization: fan-in-scaled uniform for weight matrices,
    ones for 1-D gains, zeros for offsets."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.ndim >= 2:
                fan_in = 1
                for s in p.shape[1:]:
                    fan_in *= s
                bound = fan_in ** -0.5
                p.uniform_(-bound, bound, generator=gen)
            elif name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()


def parameter_flags(model: nn.Module) -> dict[str, bool]:
    """Map of parameter name -> decay-exempt flag."""
    return {name: decay_exempt(name) for name, _ in model.named_parameters()}
