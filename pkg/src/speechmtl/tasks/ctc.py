"""Alignment-free sequence loss via the blank-augmented forward algorithm.

Works in log space on a (T, V+1) matrix of per-frame log-probabilities where
the last class index is the blank. Infeasible target/frame combinations
(too few frames to emit the labels with mandatory blanks between repeats)
yield +inf so callers can skip those items.
"""

from __future__ import annotations

import torch

# Stand-in for log(0) that keeps logsumexp gradients finite.
NEG_INF = -1.0e30


def min_frames_required(targets: torch.Tensor) -> int:
    """Labels plus one mandatory blank between each adjacent repeat."""
    t = targets.tolist()
    repeats = sum(1 for a, b in zip(t[:-1], t[1:]) if a == b)
    return len(t) + repeats


def ctc_neg_log_likelihood(log_probs: torch.Tensor, targets: torch.Tensor,
                           blank: int) -> torch.Tensor:
    """-log P(targets | log_probs) summed over all monotonic alignments.

    log_probs: (T, C) per-frame log-distributions; targets: (L,) label ids.
    """
    t_frames, n_classes = log_probs.shape
    targets = torch.as_tensor(targets, dtype=torch.long, device=log_probs.device)
    if targets.ndim != 1 or len(targets) == 0:
        raise ValueError("targets must be a non-empty 1-D id sequence")
    if int(targets.max()) >= n_classes or int(targets.min()) < 0 or blank in targets.tolist():
        raise ValueError("target ids must be non-blank classes")
    if t_frames < min_frames_required(targets):
        return torch.tensor(float("inf"), dtype=log_probs.dtype, device=log_probs.device)

    # Extended sequence: blank, y1, blank, y2, ..., blank.
    l = len(targets)
    s = 2 * l + 1
    ext = torch.full((s,), blank, dtype=torch.long, device=log_probs.device)
    ext[1::2] = targets
    # A label state may also arrive from two states back, unless that state
    # holds the same label (the repeat case needs the blank in between).
    can_skip = torch.zeros(s, dtype=torch.bool, device=log_probs.device)
    can_skip[3::2] = targets[1:] != targets[:-1]

    neg = torch.tensor(NEG_INF, dtype=log_probs.dtype, device=log_probs.device)
    alpha = torch.full((s,), NEG_INF, dtype=log_probs.dtype, device=log_probs.device)
    alpha = alpha.clone()
    alpha[0] = log_probs[0, blank]
    alpha[1] = log_probs[0, ext[1]]
    for t in range(1, t_frames):
        stay = alpha
        step1 = torch.cat([neg.view(1), alpha[:-1]])
        step2 = torch.cat([neg.view(1), neg.view(1), alpha[:-2]])
        step2 = torch.where(can_skip, step2, neg)
        alpha = torch.logsumexp(torch.stack([stay, step1, step2]), dim=0) + log_probs[t, ext]
    return -torch.logsumexp(alpha[-2:], dim=0)


def ctc_loss(posteriors: torch.Tensor, target_ids, blank: int | None = None) -> torch.Tensor:
    """Loss from per-frame posterior probabilities (rows summing to one).

    The blank defaults to the last class. Training code should prefer
    :func:`ctc_neg_log_likelihood` on log-softmax outputs directly.
    """
    posteriors = torch.as_tensor(posteriors)
    if posteriors.ndim != 2:
        raise ValueError("expected a (T, C) posterior matrix")
    if blank is None:
        blank = posteriors.shape[1] - 1
    tiny = torch.finfo(posteriors.dtype).tiny
    log_probs = torch.log(torch.clamp(posteriors, min=tiny))
    targets = torch.as_tensor(target_ids, dtype=torch.long)
    return ctc_neg_log_likelihood(log_probs, targets, blank)
