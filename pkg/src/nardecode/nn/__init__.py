from .checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from .encoder import CtcEncoder, EncoderOutput
from .gradcheck import grad_check
from .optim import AdamState, adam_step, noam_lr

__all__ = [
    "AdamState",
    "CtcEncoder",
    "EncoderOutput",
    "adam_step",
    "average_checkpoints",
    "grad_check",
    "load_checkpoint",
    "noam_lr",
    "save_checkpoint",
]
