from .config import ModelConfig, paper_config, toy_config
from .network import SpeechModel, decay_exempt, init_parameters

__all__ = [
    "ModelConfig",
    "paper_config",
    "toy_config",
    "SpeechModel",
    "init_parameters",
    "decay_exempt",
]
