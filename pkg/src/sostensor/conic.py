"""Small embedded conic solver.

Solves problems of the form

    minimize    c'x
    subject to  A x + s = b,   s in K

where K is an ordered product of zero, nonnegative, second-order and
positive-semidefinite cones.  The algorithm is ADMM applied to the
homogeneous self-dual embedding, which handles optimality, primal
infeasibility and unboundedness in one iteration scheme.  The intended
workload is the moment-matrix programs built elsewhere in this package:
a handful of PSD blocks plus many sparse equality rows, solved to
moderate accuracy, with bitwise-deterministic behaviour.

PSD slack blocks use symmetric vectorization: row-major upper triangle
with off-diagonal entries scaled by sqrt(2), so a block of side s
occupies s*(s+1)//2 slack coordinates and the vectorization is an
isometry for the Frobenius inner product.

The KKT-type linear system solved each iteration is constant per
problem; its factorization lives in a :class:`ConicWorkspace` and can
be shared across solves that differ only in b and c.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.sparse.linalg import splu

_CONE_KINDS = ("zero", "nonneg", "soc", "psd")

# above this many variables the I + A'A system is factored sparsely;
# a dense Cholesky would not fit in memory for the largest moment programs
_DENSE_LIMIT = 8000

_RUIZ_MIN = 1e-10
_RUIZ_MAX = 1e10


def svec_len(side: int) -> int:
    """Number of coordinates used by a PSD block of the given side."""
    return side * (side + 1) // 2


def _triu_diag_positions(side):
    p = np.arange(side)
    return p * side - p * (p - 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    """Symmetric vectorization of a square symmetric matrix.

    :param M: symmetric (side, side) array.
    :returns: length side*(side+1)//2 vector, row-major upper triangle,
        off-diagonal entries multiplied by sqrt(2).
    """
    M = np.asarray(M, dtype=float)
    side = M.shape[0]
    if M.shape != (side, side):
        raise ValueError("svec expects a square matrix")
    v = M[np.triu_indices(side)] * np.sqrt(2.0)
    v[_triu_diag_positions(side)] = np.diag(M)
    return v


def smat(v: np.ndarray, side: int) -> np.ndarray:
    """Inverse of :func:`svec`.

    :param v: vector of length side*(side+1)//2.
    :param side: side of the reconstructed matrix.
    :returns: the symmetric matrix M with svec(M) == v.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (svec_len(side),):
        raise ValueError("smat: vector length does not match side")
    M = np.zeros((side, side))
    M[np.triu_indices(side)] = v
    M = (M + M.T) / np.sqrt(2.0)
    d = np.arange(side)
    M[d, d] = v[_triu_diag_positions(side)]
    return M


@dataclass(frozen=True)
class ConeSpec:
    """Ordered cone blocks for the slack variable.

    :param blocks: sequence of (kind, size) pairs.  Kind is one of
        "zero", "nonneg", "soc", "psd".  For psd blocks the size is the
        matrix side; such a block occupies side*(side+1)//2 slack
        coordinates.  For the others the size is the block dimension.
    """

    blocks: tuple = ()

    def __post_init__(self):
        blocks = tuple((str(k), int(n)) for k, n in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        for kind, n in blocks:
            if kind not in _CONE_KINDS:
                raise ValueError(f"unknown cone kind {kind!r}")
            if n <= 0:
                raise ValueError("cone block dimensions must be positive")

    @property
    def dim(self) -> int:
        """Total slack dimension."""
        total = 0
        for kind, n in self.blocks:
            total += svec_len(n) if kind == "psd" else n
        return total

    def slices(self):
        """Yield (kind, size, slice) triples over the slack vector."""
        off = 0
        for kind, n in self.blocks:
            width = svec_len(n) if kind == "psd" else n
            yield kind, n, slice(off, off + width)
            off += width


def _project_soc(v):
    t, z = v[0], v[1:]
    nz = np.linalg.norm(z)
    if nz <= t:
        return v
    if nz <= -t:
        return np.zeros_like(v)
    a = 0.5 * (1.0 + t / nz)
    out = np.empty_like(v)
    out[0] = a * nz
    out[1:] = a * z
    return out


def _project_psd(v, side):
    w, Q = eigh(smat(v, side))
    if w[0] >= 0.0:
        return v
    wp = np.clip(w, 0.0, None)
    M = (Q * wp) @ Q.T
    return svec((M + M.T) / 2.0)


def project_onto_cone(spec: ConeSpec, v: np.ndarray, dual: bool = False) -> np.ndarray:
    """Euclidean projection onto K (or onto its dual cone).

    The nonnegative, second-order and PSD cones are self-dual; the dual
    of a zero block is the free cone, so with ``dual=True`` zero blocks
    are left untouched.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (spec.dim,):
        raise ValueError("vector length does not match cone spec")
    out = v.copy()
    for kind, size, sl in spec.slices():
        if kind == "zero":
            if not dual:
                out[sl] = 0.0
        elif kind == "nonneg":
            np.clip(out[sl], 0.0, None, out=out[sl])
        elif kind == "soc":
            out[sl] = _project_soc(out[sl])
        else:
            out[sl] = _project_psd(out[sl], size)
    return out


def cone_violation(spec: ConeSpec, s: np.ndarray) -> float:
    """Worst membership violation of s with respect to K.

    Zero for points inside the cone; used by tests and by the solver's
    final membership check.
    """
    s = np.asarray(s, dtype=float)
    if s.shape != (spec.dim,):
        raise ValueError("vector length does not match cone spec")
    worst = 0.0
    for kind, size, sl in spec.slices():
        blk = s[sl]
        if kind == "zero":
            v = float(np.max(np.abs(blk))) if blk.size else 0.0
        elif kind == "nonneg":
            v = float(max(0.0, -np.min(blk))) if blk.size else 0.0
        elif kind == "soc":
            v = float(max(0.0, np.linalg.norm(blk[1:]) - blk[0]))
        else:
            w = eigh(smat(blk, size), eigvals_only=True)
            v = float(max(0.0, -w[0]))
        worst = max(worst, v)
    return worst


@dataclass(frozen=True)
class ConicProblem:
    """Immutable problem data for min c'x s.t. Ax + s = b, s in K.

    A may be passed dense or scipy-sparse; it is stored in CSC form.
    All data must be finite.
    """

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        A = self.A
        if not sp.issparse(A):
            A = sp.csc_matrix(np.atleast_2d(np.asarray(A, dtype=float)))
        else:
            A = A.tocsc().astype(float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        m, n = A.shape
        if c.shape != (n,):
            raise ValueError("c length does not match number of columns of A")
        if b.shape != (m,):
            raise ValueError("b length does not match number of rows of A")
        if self.cones.dim != m:
            raise ValueError("cone spec dimension does not match rows of A")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))
                and np.all(np.isfinite(A.data))):
            raise ValueError("problem data contains NaN or Inf")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class SolverSettings:
    """Termination tolerances and iteration controls."""

    eps_primal: float = 1e-7
    eps_dual: float = 1e-7
    eps_gap: float = 1e-7
    max_iters: int = 50000
    check_every: int = 25
    alpha: float = 1.5
    ruiz_passes: int = 10
    verbose: bool = False


@dataclass(frozen=True)
class ConicSolution:
    """Result of a solve.

    For status "optimal" the residuals meet the requested tolerances.
    For "infeasible" y holds a Farkas certificate (b'y = -1, A'y ~ 0,
    y in K*); for "unbounded" x holds a ray (c'x = -1, Ax + s ~ 0).
    For "max_iters" the best iterate is returned with its residuals.
    """

    status: str
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    obj: float
    pres: float
    dres: float
    gap: float
    iters: int
    solve_time: float = 0.0

    def __post_init__(self):
        if self.status not in ("optimal", "infeasible", "unbounded",
                               "max_iters", "numerical_error"):
            raise ValueError(f"unknown status {self.status!r}")


def residuals(problem: ConicProblem, x, y, s):
    """KKT residuals of a candidate triple, as used for termination.

    :returns: dict with keys "primal", "dual", "gap":
        primal = ||Ax + s - b|| / (1 + ||b||),
        dual   = ||A'y + c|| / (1 + ||c||),
        gap    = |c'x + b'y| / (1 + |c'x| + |b'y|).
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if x.shape != (problem.n,) or y.shape != (problem.m,) or s.shape != (problem.m,):
        raise ValueError("dimension mismatch in residual evaluation")
    A, b, c = problem.A, problem.b, problem.c
    pres = np.linalg.norm(A @ x + s - b) / (1.0 + np.linalg.norm(b))
    dres = np.linalg.norm(A.T @ y + c) / (1.0 + np.linalg.norm(c))
    ctx = float(c @ x)
    bty = float(b @ y)
    gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
    return {"primal": float(pres), "dual": float(dres), "gap": float(gap)}


def _block_uniform(norms, cones):
    """Replace row norms inside each soc/psd block by the block maximum.

    A uniform scaling per block keeps the scaled slack inside the same
    cone, which projection-based unscaling relies on.
    """
    out = norms.copy()
    for kind, _size, sl in cones.slices():
        if kind in ("soc", "psd") and out[sl].size:
            out[sl] = np.max(out[sl])
    return out


class ConicWorkspace:
    """Equilibrated matrix data plus a cached factorization.

    Construction runs Ruiz equilibration on A and factors I + A'A once;
    :meth:`solve` may then be called repeatedly with different (c, b)
    pairs sharing that matrix, which is how the norm programs reuse work
    across tensors.
    """

    def __init__(self, A, cones: ConeSpec, ruiz_passes: int = 10):
        if not sp.issparse(A):
            A = sp.csc_matrix(np.atleast_2d(np.asarray(A, dtype=float)))
        else:
            A = A.tocsc().astype(float)
        m, n = A.shape
        if cones.dim != m:
            raise ValueError("cone spec dimension does not match rows of A")
        self.cones = cones
        self.m, self.n = m, n
        self.A_orig = A

        d = np.ones(m)
        e = np.ones(n)
        Ah = A.copy()
        for _ in range(ruiz_passes):
            if Ah.nnz == 0:
                break
            absA = abs(Ah)
            rn = np.asarray(absA.max(axis=1).todense()).ravel()
            rn = _block_uniform(rn, cones)
            cn = np.asarray(absA.max(axis=0).todense()).ravel()
            rn[rn == 0.0] = 1.0
            cn[cn == 0.0] = 1.0
            dr = 1.0 / np.sqrt(np.clip(rn, _RUIZ_MIN, _RUIZ_MAX))
            dc = 1.0 / np.sqrt(np.clip(cn, _RUIZ_MIN, _RUIZ_MAX))
            Ah = sp.diags(dr) @ Ah @ sp.diags(dc)
            d *= dr
            e *= dc
        self.Ah = Ah.tocsc()
        self.d = d
        self.e = e
        if m > 0 and Ah.nnz > 0:
            cols = np.sqrt(np.asarray(self.Ah.multiply(self.Ah).sum(axis=0))).ravel()
            self.norm_scale = float(np.mean(cols)) if cols.size else 1.0
        else:
            self.norm_scale = 1.0
        if self.norm_scale <= 0.0:
            self.norm_scale = 1.0

        F = (self.Ah.T @ self.Ah).tocsc()
        F = F + sp.identity(n, format="csc")
        if n <= _DENSE_LIMIT:
            self._chol = cho_factor(F.toarray(), lower=True,
                                    overwrite_a=True, check_finite=False)
            self._lu = None
        else:
            self._chol = None
            self._lu = splu(F.tocsc(), permc_spec="COLAMD")

    def _fsolve(self, rhs):
        if self._chol is not None:
            return cho_solve(self._chol, rhs, check_finite=False)
        return self._lu.solve(rhs)

    def _kkt_solve(self, a1, a2):
        # [[I, A'], [-A, I]] [hx; hy] = [a1; a2]
        hx = self._fsolve(a1 - self.Ah.T @ a2)
        hy = a2 + self.Ah @ hx
        return hx, hy

    def solve(self, c, b, settings: SolverSettings | None = None) -> ConicSolution:
        """Run ADMM on the self-dual embedding for this matrix.

        :param c: objective vector, length n.
        :param b: right-hand side, length m.
        :param settings: termination controls; defaults used when None.
        """
        if settings is None:
            settings = SolverSettings()
        t0 = time.perf_counter()
        c = np.asarray(c, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        if c.shape != (self.n,) or b.shape != (self.m,):
            raise ValueError("c or b length does not match workspace")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))):
            raise ValueError("problem data contains NaN or Inf")
        prob = ConicProblem(c=c, A=self.A_orig, b=b, cones=self.cones)

        db = self.d * b
        ec = self.e * c
        sigma_b = self.norm_scale / max(np.linalg.norm(db), 1e-8)
        sigma_c = self.norm_scale / max(np.linalg.norm(ec), 1e-8)
        sigma_b = float(np.clip(sigma_b, 1e-6, 1e6))
        sigma_c = float(np.clip(sigma_c, 1e-6, 1e6))
        bh = sigma_b * db
        ch = sigma_c * ec

        gx, gy = self._kkt_solve(ch, bh)
        gdot = 1.0 + float(ch @ gx) + float(bh @ gy)

        n, m = self.n, self.m
        ux = np.zeros(n)
        uy = np.zeros(m)
        utau = 1.0
        vs = np.zeros(m)
        vkappa = 1.0
        alpha = settings.alpha

        def unscale(tau):
            x = self.e * ux / (tau * sigma_b)
            y = self.d * uy / (tau * sigma_c)
            s = vs / self.d / (tau * sigma_b)
            return x, y, s

        status = "max_iters"
        it = 0
        for it in range(1, settings.max_iters + 1):
            wx = ux
            wy = uy + vs
            wtau = utau + vkappa
            px, py = self._kkt_solve(wx, wy)
            htau = (wtau + float(ch @ px) + float(bh @ py)) / gdot
            hx = px - htau * gx
            hy = py - htau * gy
            if not (np.isfinite(htau) and np.all(np.isfinite(hx))
                    and np.all(np.isfinite(hy))):
                el = time.perf_counter() - t0
                return ConicSolution(
                    status="numerical_error", x=np.full(n, np.nan),
                    y=np.full(m, np.nan), s=np.full(m, np.nan), obj=np.nan,
                    pres=np.nan, dres=np.nan, gap=np.nan, iters=it,
                    solve_time=el)

            rx = alpha * hx + (1.0 - alpha) * ux
            ry = alpha * hy + (1.0 - alpha) * uy
            rtau = alpha * htau + (1.0 - alpha) * utau

            ux = rx
            uy_new = project_onto_cone(self.cones, ry - vs, dual=True)
            utau_new = max(rtau - vkappa, 0.0)
            vs = vs - ry + uy_new
            vkappa = vkappa - rtau + utau_new
            uy = uy_new
            utau = utau_new

            if it % settings.check_every != 0 and it != settings.max_iters:
                continue

            if utau > 1e-12 * max(vkappa, 1.0):
                x, y, s = unscale(utau)
                r = residuals(prob, x, y, s)
                if settings.verbose:
                    print(f"iter {it}: pres {r['primal']:.2e} "
                          f"dres {r['dual']:.2e} gap {r['gap']:.2e}")
                if (r["primal"] <= settings.eps_primal
                        and r["dual"] <= settings.eps_dual
                        and r["gap"] <= settings.eps_gap):
                    status = "optimal"
                    break

            # certificate checks, meaningful as tau -> 0
            yc = self.d * uy / sigma_c
            bty = float(b @ yc)
            if bty < -1e-12:
                ycert = yc / (-bty)
                if np.linalg.norm(self.A_orig.T @ ycert) <= settings.eps_dual:
                    el = time.perf_counter() - t0
                    return ConicSolution(
                        status="infeasible", x=np.full(n, np.nan), y=ycert,
                        s=np.full(m, np.nan), obj=np.nan, pres=np.nan,
                        dres=np.nan, gap=np.nan, iters=it, solve_time=el)
            xc = self.e * ux / sigma_b
            ctx = float(c @ xc)
            if ctx < -1e-12:
                xcert = xc / (-ctx)
                scert = (vs / self.d / sigma_b) / (-ctx)
                if np.linalg.norm(self.A_orig @ xcert + scert) <= settings.eps_primal:
                    el = time.perf_counter() - t0
                    return ConicSolution(
                        status="unbounded", x=xcert, y=np.full(m, np.nan),
                        s=scert, obj=np.nan, pres=np.nan, dres=np.nan,
                        gap=np.nan, iters=it, solve_time=el)

        tau_eff = max(utau, 1e-12)
        x, y, s = unscale(tau_eff)
        r = residuals(prob, x, y, s)
        el = time.perf_counter() - t0
        return ConicSolution(status=status, x=x, y=y, s=s, obj=float(c @ x),
                             pres=r["primal"], dres=r["dual"], gap=r["gap"],
                             iters=it, solve_time=el)


def solve(problem: ConicProblem, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve a conic problem from scratch (fresh workspace)."""
    if settings is None:
        settings = SolverSettings()
    ws = ConicWorkspace(problem.A, problem.cones, ruiz_passes=settings.ruiz_passes)
    return ws.solve(problem.c, problem.b, settings)


def problem_to_text(problem: ConicProblem) -> str:
    """Serialize a problem to the documented plain-text dump format.

    Layout: a header line "conic-problem 1", a dimension line
    "m <m> n <n>", the line "c" followed by one line of n values, the
    line "b" followed by one line of m values, the line "cones"
    followed by one "<kind> <size>" line per block, then "A" followed
    by m rows of n values.  Values use 17 significant digits.
    """
    lines = ["conic-problem 1", f"m {problem.m} n {problem.n}"]
    lines.append("c")
    lines.append(" ".join(f"{v:.17g}" for v in problem.c))
    lines.append("b")
    lines.append(" ".join(f"{v:.17g}" for v in problem.b))
    lines.append("cones")
    for kind, size in problem.cones.blocks:
        lines.append(f"{kind} {size}")
    lines.append("A")
    dense = problem.A.toarray()
    for i in range(problem.m):
        lines.append(" ".join(f"{v:.17g}" for v in dense[i]))
    return "\n".join(lines) + "\n"


def problem_from_text(text: str) -> ConicProblem:
    """Parse the dump format written by :func:`problem_to_text`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split() != ["conic-problem", "1"]:
        raise ValueError("not a conic problem dump")
    hdr = lines[1].split()
    if len(hdr) != 4 or hdr[0] != "m" or hdr[2] != "n":
        raise ValueError("malformed dimension line")
    m, n = int(hdr[1]), int(hdr[3])
    idx = 2
    if lines[idx] != "c":
        raise ValueError("expected c section")
    c = np.array([float(v) for v in lines[idx + 1].split()])
    idx += 2
    if lines[idx] != "b":
        raise ValueError("expected b section")
    if m:
        b = np.array([float(v) for v in lines[idx + 1].split()])
        idx += 2
    else:
        # the empty value line is dropped by the blank-line filter
        b = np.zeros(0)
        idx += 1
    if lines[idx] != "cones":
        raise ValueError("expected cone section")
    idx += 1
    blocks = []
    while idx < len(lines) and lines[idx] != "A":
        kind, size = lines[idx].split()
        blocks.append((kind, int(size)))
        idx += 1
    if idx >= len(lines) or lines[idx] != "A":
        raise ValueError("expected A section")
    idx += 1
    rows = []
    for i in range(m):
        rows.append([float(v) for v in lines[idx + i].split()])
    A = np.array(rows) if m else np.zeros((0, n))
    if A.size and A.shape != (m, n):
        raise ValueError("A section has wrong shape")
    return ConicProblem(c=c, A=A, b=b, cones=ConeSpec(tuple(blocks)))


def save_problem(path, problem: ConicProblem) -> None:
    with open(path, "w") as fh:
        fh.write(problem_to_text(problem))


def load_problem(path) -> ConicProblem:
    with open(path) as fh:
        return problem_from_text(fh.read())
