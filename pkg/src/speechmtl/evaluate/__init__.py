from .decode import collapse_alignment, greedy_ctc_decode, greedy_s2s_decode
from .metrics import mel_mse, sisdr, stoi, wer
from .report import EvalReport, ImprovementEdge, format_results_table, improvement_graph
from .vocoder import griffin_lim, mel_to_waveform

__all__ = [
    "greedy_ctc_decode",
    "greedy_s2s_decode",
    "collapse_alignment",
    "wer",
    "sisdr",
    "stoi",
    "mel_mse",
    "griffin_lim",
    "mel_to_waveform",
    "EvalReport",
    "ImprovementEdge",
    "improvement_graph",
    "format_results_table",
]
