"""Greedy decoding for both text heads."""

from __future__ import annotations

import numpy as np
import torch


def collapse_alignment(frame_labels, blank: int) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for label in frame_labels:
        label = int(label)
        if label != prev:
            out.append(label)
        prev = label
    return [l for l in out if l != blank]


def greedy_ctc_decode(posteriors, blank: int | None = None) -> list[int]:
    """Per-frame argmax, collapsed. ``posteriors`` is (T, V+1); blank defaults
    to the last class."""
    post = np.asarray(posteriors.detach() if torch.is_tensor(posteriors) else posteriors)
    if blank is None:
        blank = post.shape[1] - 1
    return collapse_alignment(post.argmax(axis=1), blank)


@torch.no_grad()
def greedy_s2s_decode(model, content: torch.Tensor, content_mask, max_len: int) -> list[list[int]]:
    """Autoregressive argmax until the end marker or ``max_len`` tokens."""
    return model.text_decoder.greedy_s2s(content, content_mask, max_len)
