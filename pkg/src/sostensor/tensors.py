"""Dense order-3 tensor arithmetic.

Everything operates on plain numpy arrays of shape (d, d, d). The two
classes are thin containers: a factored orthogonal tensor and the subspace
projectors derived from one. All values are immutable after construction
and all operations are pure functions.

Tensor text format: a header line holding d, then d**3 whitespace-separated
values in lexicographic (i, j, k) order, written with 17 significant digits
so that a write/read round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-10


def as_tensor3(T) -> np.ndarray:
    """Validate and return T as a float (d, d, d) array."""
    arr = np.asarray(T, dtype=float)
    if arr.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got ndim={arr.ndim}")
    d = arr.shape[0]
    if arr.shape != (d, d, d):
        raise ValueError(f"expected cubic shape (d, d, d), got {arr.shape}")
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor entries must be finite")
    return arr


def outer3(u, v, w) -> np.ndarray:
    """Rank-one tensor with entry (i, j, k) equal to u_i * v_j * w_k."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.ndim != 1 or v.ndim != 1 or w.ndim != 1:
        raise ValueError("outer3 expects three vectors")
    if not (u.shape == v.shape == w.shape):
        raise ValueError(f"length mismatch: {u.shape}, {v.shape}, {w.shape}")
    if u.shape[0] < 1:
        raise ValueError("vectors must have length at least 1")
    return np.einsum("i,j,k->ijk", u, v, w)


def tensor_inner(A, B) -> float:
    """Entrywise inner product of two equally shaped tensors."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def frobenius(T) -> float:
    """Elementwise l2 norm."""
    return float(np.linalg.norm(np.asarray(T, dtype=float).ravel()))


def linf(T) -> float:
    """Largest absolute entry."""
    return float(np.max(np.abs(np.asarray(T, dtype=float))))


def matrix_nuclear(M) -> float:
    """Sum of singular values."""
    return float(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False).sum())


def matrix_op(M) -> float:
    """Largest singular value."""
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return float(sv[0]) if sv.size else 0.0


@dataclass(frozen=True)
class OrthogonalTensor:
    """Factored tensor sum_i lambdas[i] * U[:,i] (x) V[:,i] (x) W[:,i].

    The factor blocks are d x r with orthonormal columns (checked to
    1e-10 on construction). r must not exceed d.
    """

    d: int
    r: int
    lambdas: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lambdas", np.asarray(self.lambdas, dtype=float))
        for name in ("U", "V", "W"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.r > self.d:
            raise ValueError(f"rank r={self.r} exceeds dimension d={self.d}")
        if self.lambdas.shape != (self.r,):
            raise ValueError("lambdas must have length r")
        for name in ("U", "V", "W"):
            F = getattr(self, name)
            if F.shape != (self.d, self.r):
                raise ValueError(f"{name} must be d x r")
            gram = F.T @ F
            err = np.max(np.abs(gram - np.eye(self.r)))
            if err > ORTHO_TOL:
                raise ValueError(f"{name} columns not orthonormal (defect {err:.2e})")
        if not np.all(np.isfinite(self.lambdas)):
            raise ValueError("weights must be finite")

    def densify(self) -> np.ndarray:
        """Dense (d, d, d) array equal to the factored sum."""
        return np.einsum("r,ir,jr,kr->ijk", self.lambdas, self.U, self.V, self.W)


def random_orthogonal(d: int, r: int, lambdas, seed) -> OrthogonalTensor:
    """Draw factor blocks by QR-orthonormalizing Gaussian matrices.

    Deterministic for a fixed seed.
    """
    if r > d:
        raise ValueError(f"rank r={r} exceeds dimension d={d}")
    lam = np.asarray(lambdas, dtype=float)
    if lam.shape != (r,):
        raise ValueError("lambdas must have length r")
    rng = np.random.default_rng(seed)
    factors = []
    for _ in range(3):
        G = rng.standard_normal((d, r))
        Q, _ = np.linalg.qr(G)
        factors.append(Q[:, :r])
    return OrthogonalTensor(d=d, r=r, lambdas=lam, U=factors[0], V=factors[1], W=factors[2])


@dataclass(frozen=True)
class SubspaceProjector:
    """The six projection matrices onto a factored tensor's mode subspaces.

    P_U, P_V, P_W project onto the column spans of the factor blocks,
    P_Uc, P_Vc, P_Wc onto the orthogonal complements.
    """

    d: int
    P_U: np.ndarray
    P_V: np.ndarray
    P_W: np.ndarray
    P_Uc: np.ndarray
    P_Vc: np.ndarray
    P_Wc: np.ndarray

    def __post_init__(self):
        eye = np.eye(self.d)
        pairs = [(self.P_U, self.P_Uc), (self.P_V, self.P_Vc), (self.P_W, self.P_Wc)]
        for P, Pc in pairs:
            for M in (P, Pc):
                if M.shape != (self.d, self.d):
                    raise ValueError("projector shape mismatch")
                if np.max(np.abs(M - M.T)) > ORTHO_TOL:
                    raise ValueError("projector not symmetric")
                if np.max(np.abs(M @ M - M)) > ORTHO_TOL:
                    raise ValueError("projector not idempotent")
            if np.max(np.abs(P + Pc - eye)) > ORTHO_TOL:
                raise ValueError("projector pair does not sum to identity")

    @classmethod
    def from_orthogonal(cls, t: OrthogonalTensor) -> "SubspaceProjector":
        eye = np.eye(t.d)
        P_U = t.U @ t.U.T
        P_V = t.V @ t.V.T
        P_W = t.W @ t.W.T
        return cls(d=t.d, P_U=P_U, P_V=P_V, P_W=P_W,
                   P_Uc=eye - P_U, P_Vc=eye - P_V, P_Wc=eye - P_W)


def multilinear_apply(A1, A2, A3, X) -> np.ndarray:
    """Apply (A1 (x) A2 (x) A3) to X, acting matrix-by-mode."""
    X = as_tensor3(X)
    return np.einsum("ai,bj,ck,ijk->abc", A1, A2, A3, X, optimize=True)


def _proj_terms_parallel(p: SubspaceProjector):
    return (
        (p.P_U, p.P_V, p.P_W),
        (p.P_Uc, p.P_V, p.P_W),
        (p.P_U, p.P_Vc, p.P_W),
        (p.P_U, p.P_V, p.P_Wc),
    )


def _proj_terms_perp(p: SubspaceProjector):
    return (
        (p.P_Uc, p.P_Vc, p.P_Wc),
        (p.P_U, p.P_Vc, p.P_Wc),
        (p.P_Uc, p.P_V, p.P_Wc),
        (p.P_Uc, p.P_Vc, p.P_W),
    )


def project_parallel(p: SubspaceProjector, X) -> np.ndarray:
    """Sum of the four triple-projections that keep at least two modes
    inside the factor subspaces."""
    X = as_tensor3(X)
    if X.shape[0] != p.d:
        raise ValueError("projector dimension does not match tensor")
    out = np.zeros_like(X)
    for A1, A2, A3 in _proj_terms_parallel(p):
        out += multilinear_apply(A1, A2, A3, X)
    return out


def project_perp(p: SubspaceProjector, X) -> np.ndarray:
    """Complementary sum of triple-projections; annihilates any rank-one
    tensor with at least two factors inside the subspaces."""
    X = as_tensor3(X)
    if X.shape[0] != p.d:
        raise ValueError("projector dimension does not match tensor")
    out = np.zeros_like(X)
    for A1, A2, A3 in _proj_terms_perp(p):
        out += multilinear_apply(A1, A2, A3, X)
    return out


def flatten(T, mode: int) -> np.ndarray:
    """Mode-m reshaping of T into a d x d**2 matrix.

    The column index pair (a, b) is linearized as a*d + b, 0-based:
    mode 1 keeps rows i and columns (j, k); mode 2 rows j, columns (i, k);
    mode 3 rows k, columns (i, j).
    """
    T = as_tensor3(T)
    d = T.shape[0]
    if mode == 1:
        return T.reshape(d, d * d)
    if mode == 2:
        return T.transpose(1, 0, 2).reshape(d, d * d)
    if mode == 3:
        return T.transpose(2, 0, 1).reshape(d, d * d)
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def unflatten(M, mode: int) -> np.ndarray:
    """Inverse of flatten: rebuild the cubic tensor from a d x d**2
    matrix using the same column convention."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] ** 2 != M.shape[1]:
        raise ValueError(f"expected a d x d^2 matrix, got shape {M.shape}")
    d = M.shape[0]
    cube = M.reshape(d, d, d)
    if mode == 1:
        return cube
    if mode == 2:
        return cube.transpose(1, 0, 2)
    if mode == 3:
        return cube.transpose(1, 2, 0)
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def multilinear_rank(T, tol: float = 1e-8):
    """Ranks of the three flattenings; singular values are counted
    relative to the largest one."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    T = as_tensor3(T)
    ranks = []
    for mode in (1, 2, 3):
        sv = np.linalg.svd(flatten(T, mode), compute_uv=False)
        if sv.size == 0 or sv[0] <= 0.0:
            ranks.append(0)
        else:
            ranks.append(int(np.sum(sv > tol * sv[0])))
    return tuple(ranks)


def tensor_to_text(T) -> str:
    T = as_tensor3(T)
    d = T.shape[0]
    lines = [str(d)]
    flat = T.reshape(d * d, d)
    for row in flat:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def tensor_from_text(text: str) -> np.ndarray:
    tokens = text.split()
    if not tokens:
        raise ValueError("empty tensor text")
    d = int(tokens[0])
    vals = tokens[1:]
    if len(vals) != d ** 3:
        raise ValueError(f"expected {d ** 3} values for d={d}, got {len(vals)}")
    arr = np.array([float(v) for v in vals], dtype=float).reshape(d, d, d)
    return as_tensor3(arr)


def save_tensor(path, T) -> None:
    with open(path, "w") as fh:
        fh.write(tensor_to_text(T))


def load_tensor(path) -> np.ndarray:
    with open(path) as fh:
        return tensor_from_text(fh.read())
