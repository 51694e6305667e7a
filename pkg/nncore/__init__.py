"""
A small float64 reverse-mode differentiation tape with the layers a point
cloud tracker needs. No Django imports live here.
"""
from nncore.exceptions import InvalidArgument, NNCoreError, NonFiniteError, ShapeError  # noqa: F401
from nncore.tensor import Tensor, constant  # noqa: F401
