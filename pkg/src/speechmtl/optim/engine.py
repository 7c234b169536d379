"""Multi-task training engine.

One step = one round-robin pass over the active tasks: each task's batch is
run forward, its (optionally sigma-scaled) loss backpropagated into a
per-task gradient map, the maps are combined (plain sum, or gradient
surgery), and a single decoupled-weight-decay adaptive update is applied to
the model and the balancing sigmas together.

Sigma gradients bypass the surgery: they belong to single tasks only, so
there is nothing to de-conflict.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch

from ..model.network import decay_exempt
from ..tasks.graphs import LossReport, TaskBatch, task_forward
from .balance import LossBalancer
from .pcgrad import pcgrad, sum_gradients
from .schedule import LrSchedule

log = logging.getLogger(__name__)

STRATEGIES = ("none", "autoloss", "pcgrad", "autoloss+pcgrad")

# Documented combination weights used when balancing per term instead of per task.
TASK_TERM_WEIGHTS = {
    "asr": {"asr_ctc": 0.3, "asr_s2s": 0.7, "asr_recon": 1.0},
    "se": {"se_mae": 1.0},
    "sc": {"sc_ce": 1.0},
    "tts": {"tts_mel": 1.0, "tts_dur": 1.0, "tts_speaker": 1.0, "tts_prosody": 1.0},
    "vc": {"vc_conv": 1.0, "vc_rec1": 1.0, "vc_rec2": 1.0, "vc_prosody": 1.0},
}


@dataclass
class GradientSet:
    """Per-parameter gradients from one task's backward pass."""

    task: str
    grads: dict[str, torch.Tensor]


@dataclass
class StepRecord:
    """Everything logged about one optimization step."""

    step: int
    lr: float
    strategy: str
    losses: dict[str, dict[str, float]]
    sigmas: dict[str, float]
    projected_pairs: int
    surgery_seed: int
    skipped_tasks: list[str] = field(default_factory=list)
    applied: bool = True

    def flat(self) -> dict:
        row: dict = {"step": self.step, "lr": self.lr, "strategy": self.strategy,
                     "projected_pairs": self.projected_pairs,
                     "surgery_seed": self.surgery_seed, "applied": self.applied}
        for task, scalars in self.losses.items():
            for name, value in scalars.items():
                key = name if name != "total" else f"{task}_total"
                row[key] = value
        for name, sigma in self.sigmas.items():
            row[f"sigma_{name}"] = sigma
        if self.skipped_tasks:
            row["skipped_tasks"] = ",".join(self.skipped_tasks)
        return row


def build_optimizer(model: torch.nn.Module, balancer: LossBalancer | None,
                    betas=(0.9, 0.999), eps: float = 1e-12,
                    weight_decay: float = 0.01) -> torch.optim.AdamW:
    """AdamW with decay applied only to non-exempt model parameters.

    Balancing sigmas never decay; they are regularized by their own log term.
    """
    decayed, exempt = [], []
    for name, p in model.named_parameters():
        (exempt if decay_exempt(name) else decayed).append(p)
    if balancer is not None:
        exempt.extend(balancer.parameters())
    groups = [
        {"params": decayed, "weight_decay": weight_decay},
        {"params": exempt, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=0.0, betas=betas, eps=eps)


class MultiTaskEngine:
    def __init__(self, model: torch.nn.Module, tasks: list[str], strategy: str,
                 schedule: LrSchedule, *, seed: int = 0, betas=(0.9, 0.999),
                 eps: float = 1e-12, weight_decay: float = 0.01,
                 clip_norm: float | None = None,
                 asr_alpha: float = 0.3, tts_teacher_prosody: bool = False,
                 use_prosody_predictor: bool = True,
                 per_term_sigma: bool = False):
        if strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        self.model = model
        self.tasks = list(tasks)
        self.strategy = strategy
        self.schedule = schedule
        self.seed = seed
        self.clip_norm = clip_norm
        self.asr_alpha = asr_alpha
        self.tts_teacher_prosody = tts_teacher_prosody
        self.use_prosody_predictor = use_prosody_predictor
        self.per_term_sigma = per_term_sigma
        self.use_autoloss = "autoloss" in strategy
        self.use_pcgrad = "pcgrad" in strategy
        if per_term_sigma:
            names = [t for task in self.tasks for t in TASK_TERM_WEIGHTS[task]]
        else:
            names = self.tasks
        self.balancer = LossBalancer(names) if self.use_autoloss else None
        self.optimizer = build_optimizer(model, self.balancer, betas, eps, weight_decay)
        self.global_step = 0

    # -- loss scaling ---------------------------------------------------

    def _scaled_loss(self, report: LossReport) -> torch.Tensor:
        if not self.use_autoloss:
            return report.total
        if not self.per_term_sigma:
            return self.balancer.scaled(report.task, report.total)
        weights = TASK_TERM_WEIGHTS[report.task]
        total = None
        for name, term in report.terms.items():
            contrib = self.balancer.scaled(name, weights[name] * term)
            total = contrib if total is None else total + contrib
        return total

    # -- gradient plumbing ------------------------------------------------

    def _collect_gradients(self, loss: torch.Tensor, task: str) -> GradientSet:
        self.model.zero_grad(set_to_none=True)
        loss.backward()
        grads = {name: p.grad.detach().clone()
                 for name, p in self.model.named_parameters() if p.grad is not None}
        self.model.zero_grad(set_to_none=True)
        return GradientSet(task, grads)

    def _assign_gradients(self, combined: dict[str, torch.Tensor]) -> None:
        for name, p in self.model.named_parameters():
            # Absent keys mean a zero gradient: decoupled decay still applies.
            p.grad = combined.get(name, torch.zeros_like(p))

    def _gradients_finite(self, combined: dict[str, torch.Tensor]) -> bool:
        for g in combined.values():
            if not torch.all(torch.isfinite(g)):
                return False
        if self.balancer is not None:
            for p in self.balancer.parameters():
                if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
                    return False
        return True

    def _set_lr(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    # -- the step ---------------------------------------------------------

    def step(self, batches: dict[str, TaskBatch]) -> StepRecord:
        """Run one round-robin multi-task update over the provided batches."""
        self.global_step += 1
        lr = self.schedule(self.global_step)
        surgery_seed = self.seed + self.global_step
        if self.balancer is not None:
            self.balancer.zero_grad(set_to_none=True)

        losses: dict[str, dict[str, float]] = {}
        task_grads: dict[str, dict[str, torch.Tensor]] = {}
        skipped: list[str] = []
        for task in self.tasks:
            batch = batches[task]
            report = task_forward(self.model, batch, asr_alpha=self.asr_alpha,
                                  tts_teacher_prosody=self.tts_teacher_prosody,
                                  use_prosody_predictor=self.use_prosody_predictor)
            if not torch.isfinite(report.total):
                log.warning("step %d: non-finite %s loss, task skipped",
                            self.global_step, task)
                skipped.append(task)
                continue
            losses[task] = report.scalars()
            losses[task].update(report.extras)
            gradset = self._collect_gradients(self._scaled_loss(report), task)
            task_grads[task] = gradset.grads

        record = StepRecord(
            step=self.global_step, lr=lr, strategy=self.strategy, losses=losses,
            sigmas=self.balancer.sigmas() if self.balancer else {},
            projected_pairs=0, surgery_seed=surgery_seed, skipped_tasks=skipped)

        if not task_grads:
            record.applied = False
            return record

        if self.use_pcgrad and len(task_grads) > 1:
            combined, record.projected_pairs = pcgrad(task_grads, seed=surgery_seed)
        else:
            combined = sum_gradients(task_grads)

        if not self._gradients_finite(combined):
            log.warning("step %d: non-finite gradient, update skipped", self.global_step)
            record.applied = False
            self.model.zero_grad(set_to_none=True)
            return record

        if self.clip_norm is not None:
            total = torch.sqrt(sum((g ** 2).sum() for g in combined.values()))
            if float(total) > self.clip_norm:
                scale = self.clip_norm / float(total)
                combined = {k: g * scale for k, g in combined.items()}
        self._assign_gradients(combined)
        self._set_lr(lr)
        self.optimizer.step()
        self.model.zero_grad(set_to_none=True)
        if self.balancer is not None:
            self.balancer.zero_grad(set_to_none=True)
            record.sigmas = self.balancer.sigmas()
        return record

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict:
        state = {
            "optimizer": self.optimizer.state_dict(),
            "global_step": self.global_step,
        }
        if self.balancer is not None:
            state["balancer"] = self.balancer.state_dict()
        return state

    def load_state_dict(self, state: dict) -> None:
        self.optimizer.load_state_dict(state["optimizer"])
        self.global_step = state["global_step"]
        if self.balancer is not None and "balancer" in state:
            self.balancer.load_state_dict(state["balancer"])
