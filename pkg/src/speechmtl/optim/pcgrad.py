"""Gradient surgery: project conflicting task gradients, tensor by tensor.

For every named parameter tensor shared by two or more tasks, each task's
gradient is walked against the other tasks' ORIGINAL gradients in a seeded
random order; whenever the dot product is negative the component along the
other gradient is removed. The per-tensor results are summed. Tensors seen
by only one task pass through unchanged.
"""

from __future__ import annotations

import random

import torch


def project_pair(g_i: torch.Tensor, g_j: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Remove from g_i its component along g_j when they conflict."""
    dot = torch.dot(g_i.flatten(), g_j.flatten())
    if float(dot) >= 0.0:
        return g_i
    denom = torch.dot(g_j.flatten(), g_j.flatten())
    if float(denom) <= eps:
        return g_i
    return g_i - (dot / denom) * g_j


def pcgrad(task_grads: dict[str, dict[str, torch.Tensor]], seed: int = 0
           ) -> tuple[dict[str, torch.Tensor], int]:
    """Combine per-task gradient maps into one, removing pairwise conflicts.

    ``task_grads`` maps task name -> {parameter name -> gradient tensor}.
    Returns the combined map and the number of projections performed.
    """
    tasks = list(task_grads)
    rng = random.Random(seed)
    combined: dict[str, torch.Tensor] = {}
    projections = 0
    all_keys: list[str] = []
    for grads in task_grads.values():
        for key in grads:
            if key not in all_keys:
                all_keys.append(key)
    for key in all_keys:
        owners = [t for t in tasks if key in task_grads[t]]
        if len(owners) == 1:
            combined[key] = task_grads[owners[0]][key].clone()
            continue
        originals = {t: task_grads[t][key] for t in owners}
        summed = None
        for t_i in owners:
            g = originals[t_i].clone()
            others = [t for t in owners if t != t_i]
            rng.shuffle(others)
            for t_j in others:
                projected = project_pair(g, originals[t_j])
                if projected is not g:
                    projections += 1
                g = projected
            summed = g if summed is None else summed + g
        combined[key] = summed
    return combined, projections


def sum_gradients(task_grads: dict[str, dict[str, torch.Tensor]]) -> dict[str, torch.Tensor]:
    """Plain accumulation across tasks, no surgery."""
    combined: dict[str, torch.Tensor] = {}
    for grads in task_grads.values():
        for key, g in grads.items():
            combined[key] = g.clone() if key not in combined else combined[key] + g
    return combined
