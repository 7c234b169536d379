from .ctc import ctc_loss, ctc_neg_log_likelihood, min_frames_required
from .graphs import (
    LossReport,
    asr_forward,
    sc_forward,
    se_forward,
    task_forward,
    tts_forward,
    vc_forward,
)

__all__ = [
    "ctc_loss",
    "ctc_neg_log_likelihood",
    "min_frames_required",
    "LossReport",
    "asr_forward",
    "se_forward",
    "sc_forward",
    "tts_forward",
    "vc_forward",
    "task_forward",
]
