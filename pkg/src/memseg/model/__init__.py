from .checkpoint import Checkpoint
from .gradcheck import BLOCKS, GradCheckReport, grad_check, grad_check_block
from .loss import inverse_frequency_weights, seg_loss
from .memory import MemoryBank, MemoryEntry, bank_push
from .network import MemSegModel, ModelConfig, parameter_count, stack_prompts
from .optim import AdamState, PlateauSchedule, adam_step

__all__ = [
    "AdamState",
    "BLOCKS",
    "Checkpoint",
    "GradCheckReport",
    "MemSegModel",
    "MemoryBank",
    "MemoryEntry",
    "ModelConfig",
    "PlateauSchedule",
    "adam_step",
    "bank_push",
    "grad_check",
    "grad_check_block",
    "inverse_frequency_weights",
    "parameter_count",
    "seg_loss",
    "stack_prompts",
]
