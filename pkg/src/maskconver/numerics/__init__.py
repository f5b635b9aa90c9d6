from .autograd import GradTape, NonFiniteError, Tensor, as_tensor, set_debug
from .gradcheck import check_gradients, relative_error
from . import ops

__all__ = [
    "GradTape",
    "NonFiniteError",
    "Tensor",
    "as_tensor",
    "check_gradients",
    "ops",
    "relative_error",
    "set_debug",
]
