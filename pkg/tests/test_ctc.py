import itertools
import math

import numpy as np
import pytest
import torch

from speechmtl.tasks.ctc import ctc_loss, ctc_neg_log_likelihood, min_frames_required


def collapse(path, blank):
    """Independent collapse rule: merge repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return tuple(x for x in out if x != blank)


def enumerate_ctc_probability(posteriors: np.ndarray, target: tuple, blank: int) -> float:
    """Sum path probabilities over every frame labeling that collapses to target."""
    t, c = posteriors.shape
    total = 0.0
    for path in itertools.product(range(c), repeat=t):
        if collapse(path, blank) == target:
            p = 1.0
            for step, label in enumerate(path):
                p *= posteriors[step, label]
            total += p
    return total


def random_posteriors(rng, t, c):
    raw = rng.gamma(1.0, 1.0, size=(t, c))
    return raw / raw.sum(axis=1, keepdims=True)


def test_single_frame_single_label():
    post = np.array([[0.2, 0.7, 0.1]])  # classes: a, b, blank(2)
    loss = ctc_loss(torch.tensor(post), [1])
    assert float(loss) == pytest.approx(-math.log(0.7), abs=1e-9)


def test_uniform_three_frames_matches_enumeration():
    post = np.full((3, 3), 1.0 / 3.0)  # V=2 plus blank
    target = (0, 1)
    loss = ctc_loss(torch.tensor(post), list(target))
    expected = enumerate_ctc_probability(post, target, blank=2)
    assert float(loss) == pytest.approx(-math.log(expected), abs=1e-9)


def test_repeat_needs_separating_blank():
    assert min_frames_required(torch.tensor([0, 0])) == 3
    post = torch.full((2, 2), 0.5, dtype=torch.float64)
    assert math.isinf(float(ctc_loss(post, [0, 0])))
    post3 = torch.full((3, 2), 0.5, dtype=torch.float64)
    assert math.isfinite(float(ctc_loss(post3, [0, 0])))


def test_matches_enumeration_over_grid():
    rng = np.random.default_rng(0)
    blank_configs = [(t, l, v) for t in range(1, 7) for l in range(1, 4) for v in range(1, 5)]
    checked = 0
    for t, l, v in blank_configs:
        for _ in range(3):
            target = tuple(int(x) for x in rng.integers(0, v, size=l))
            if t < min_frames_required(torch.tensor(target)):
                continue
            post = random_posteriors(rng, t, v + 1)
            total = enumerate_ctc_probability(post, target, blank=v)
            loss = ctc_loss(torch.tensor(post), list(target))
            assert float(loss) == pytest.approx(-math.log(total), abs=1e-6)
            checked += 1
    assert checked > 100


def test_gradient_is_finite():
    rng = np.random.default_rng(1)
    logits = torch.tensor(rng.normal(size=(6, 4)), requires_grad=True)
    log_probs = torch.log_softmax(logits, dim=1)
    loss = ctc_neg_log_likelihood(log_probs, torch.tensor([0, 2, 1]), blank=3)
    loss.backward()
    assert torch.all(torch.isfinite(logits.grad))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    logits = torch.tensor(rng.normal(size=(5, 4)), dtype=torch.float64, requires_grad=True)

    def compute():
        return ctc_neg_log_likelihood(torch.log_softmax(logits, dim=1),
                                      torch.tensor([1, 0]), blank=3)

    loss = compute()
    loss.backward()
    step = 1e-6
    with torch.no_grad():
        for i, j in [(0, 1), (2, 3), (4, 0)]:
            orig = logits[i, j].item()
            logits[i, j] = orig + step
            hi = compute().item()
            logits[i, j] = orig - step
            lo = compute().item()
            logits[i, j] = orig
            fd = (hi - lo) / (2 * step)
            assert fd == pytest.approx(logits.grad[i, j].item(), abs=1e-6)


def test_rejects_blank_in_target():
    post = torch.full((3, 3), 1 / 3)
    with pytest.raises(ValueError):
        ctc_loss(post, [2])  # blank is last class


def test_rejects_empty_target():
    post = torch.full((3, 3), 1 / 3)
    with pytest.raises(ValueError):
        ctc_loss(post, [])
