"""Sum-of-squares tensor norms, agnostic completion/sensing learners,
a planted 3-XOR lab, and the small conic solver underneath them."""

__version__ = "0.1.0"

from .tensors import (
    OrthogonalTensor,
    SubspaceProjector,
    as_tensor3,
    flatten,
    frobenius,
    linf,
    load_tensor,
    matrix_nuclear,
    matrix_op,
    multilinear_rank,
    outer3,
    project_parallel,
    project_perp,
    random_orthogonal,
    save_tensor,
    tensor_inner,
)

__all__ = [
    "__version__",
    "OrthogonalTensor",
    "SubspaceProjector",
    "as_tensor3",
    "flatten",
    "frobenius",
    "linf",
    "load_tensor",
    "matrix_nuclear",
    "matrix_op",
    "multilinear_rank",
    "outer3",
    "project_parallel",
    "project_perp",
    "random_orthogonal",
    "save_tensor",
    "tensor_inner",
]
