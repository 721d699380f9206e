from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numeric_grad, relative_error
from .tensor import Tensor, as_tensor, backward, no_grad

__all__ = [
    "Tensor", "as_tensor", "backward", "no_grad", "ops",
    "check_gradients", "numeric_grad", "relative_error",
    "load_checkpoint", "save_checkpoint",
]
