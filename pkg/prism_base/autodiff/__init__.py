""" Minimal reverse-mode tensor engine used by the PRISM model """
from .gradcheck import GradCheckReport, grad_check
from .nn import ffn, masked_attention, multi_head_attention, transformer_encoder_layer
from .ops import stop_gradient
from .optim import AdamState, adam_step
from .rng import Rng
from .tensor import Tape, Tensor, as_tensor, zero_grads
