"""Robust variational contrastive learning on a small numpy autodiff core."""

from vcl.autograd import DomainError, ShapeError, Tensor, grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "ShapeError", "DomainError", "grad_check", "__version__"]
