from .balance import LossBalancer, balance_losses
from .engine import GradientSet, MultiTaskEngine, StepRecord
from .pcgrad import pcgrad
from .schedule import LrSchedule, lr_schedule

__all__ = [
    "LossBalancer",
    "balance_losses",
    "pcgrad",
    "GradientSet",
    "MultiTaskEngine",
    "StepRecord",
    "LrSchedule",
    "lr_schedule",
]
