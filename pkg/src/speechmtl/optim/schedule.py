"""Linear warmup followed by linear decay to zero."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class LrSchedule:
    peak_lr: float = 3.0e-4
    warmup_steps: int = 10_000
    decay_steps: int = 100_000

    def __call__(self, step: int) -> float:
        return lr_schedule(step, self.peak_lr, self.warmup_steps, self.decay_steps)


def lr_schedule(step: int, peak_lr: float = 3.0e-4, warmup_steps: int = 10_000,
                decay_steps: int = 100_000) -> float:
    """lr ramps 0 -> peak over warmup, then decays linearly to 0."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if step <= warmup_steps:
        return peak_lr * step / warmup_steps
    if step <= warmup_steps + decay_steps:
        return peak_lr * (1.0 - (step - warmup_steps) / decay_steps)
    return 0.0
