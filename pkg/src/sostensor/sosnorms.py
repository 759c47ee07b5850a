"""Sum-of-squares relaxations of the tensor injective and nuclear norms.

Both norms are computed from degree-k pseudomoment matrices over three
variable groups x, y, z of d indeterminates each.  A matrix M indexed
by monomials of degree <= k/2 represents the pseudoexpectation
E[m_p * m_q] = M[p, q]; feasibility means M is PSD, entries agree
wherever two index pairs multiply to the same monomial, and the sphere
constraints hold in ideal form, E[(|x|^2 - 1) q] = 0 for every
admissible monomial q (likewise for y and z).

The injective norm maximizes <X, E[x (x) y (x) z]> over normalized
(E[1] = 1) feasible matrices.  The nuclear norm is solved in
homogenized form: minimize t = E[1] over feasible matrices whose
degree-(1,1,1) moments equal T exactly; the optimal t is the gauge of
the pseudomoment body, so the witness certifies T's membership in
t times the unit ball.

An optional parity reduction block-diagonalizes M under the sign
symmetries (x, y, z) -> (sx*x, sy*y, sz*z) with sx*sy*sz = 1, which fix
every trilinear objective; it is exact for these programs and makes
degree 6 tractable at d = 4.  Default off at k = 4, on at k = 6.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp

from . import conic
from .tensors import (OrthogonalTensor, SubspaceProjector, as_tensor3,
                      outer3, project_perp, tensor_inner)

# single published slack for all norm-value comparisons
SOLVER_TOL = 1e-5

_SQ2 = np.sqrt(2.0)

# parity classes closed under {(sx,sy,sz): sx*sy*sz = 1}: each class is a
# coset of {(0,0,0),(1,1,1)} in (Z/2)^3
_CLASS_OF_CANONICAL = {(0, 0, 0): 0, (0, 1, 1): 1, (1, 0, 1): 2, (1, 1, 0): 3}


class SolverFailure(RuntimeError):
    """Raised when the conic solver does not reach optimality.

    Carries the offending ConicSolution in the ``solution`` attribute.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class InconsistentMomentWarning(UserWarning):
    """Emitted when duplicated moments of a matrix disagree beyond 1e-6."""


def _parity(mono, d):
    px = py = pz = 0
    for v in mono:
        if v < d:
            px ^= 1
        elif v < 2 * d:
            py ^= 1
        else:
            pz ^= 1
    return px, py, pz


def _parity_class(p):
    q = (p[0] + p[1] + p[2]) % 2
    return _CLASS_OF_CANONICAL[(p[0] ^ q, p[1] ^ q, p[2] ^ q)]


@dataclass(frozen=True)
class MonomialBasis:
    """Ordered monomial basis for degree-k pseudomoment matrices.

    Monomials are tuples of sorted variable ids: x_i -> i, y_j -> d + j,
    z_k -> 2d + k.  Without parity reduction the order is graded
    lexicographic; with it, monomials are grouped into the four parity
    classes (class of the constant first) keeping graded-lex order
    inside each block, and the moment matrix is block-diagonal.
    """

    d: int
    k: int
    parity_reduced: bool
    monomials: tuple
    index: dict
    blocks: tuple  # (start, stop) per diagonal block

    @property
    def size(self) -> int:
        return len(self.monomials)

    @property
    def block_sides(self):
        return tuple(stop - start for start, stop in self.blocks)

    def lookup(self, mono) -> int:
        """Index of a monomial; raises KeyError outside the basis."""
        key = tuple(sorted(mono))
        if key not in self.index:
            raise KeyError(f"monomial {key} not in basis (d={self.d}, k={self.k})")
        return self.index[key]


def _all_monomials(d, max_deg):
    out = []
    for deg in range(max_deg + 1):
        out.extend(combinations_with_replacement(range(3 * d), deg))
    return out


def build_basis(d: int, k: int, parity_reduce=None) -> MonomialBasis:
    """Monomial basis of degree <= k/2 over x, y, z blocks of size d.

    parity_reduce=None resolves to the per-degree default: off for k=4,
    on for k=6.
    """
    if k not in (4, 6):
        raise ValueError(f"unsupported degree k={k}; only 4 and 6 are available")
    if d < 1:
        raise ValueError("d must be at least 1")
    if parity_reduce is None:
        parity_reduce = (k == 6)
    monos = _all_monomials(d, k // 2)
    if parity_reduce:
        groups = [[], [], [], []]
        for m in monos:
            groups[_parity_class(_parity(m, d))].append(m)
        ordered = []
        blocks = []
        for g in groups:
            blocks.append((len(ordered), len(ordered) + len(g)))
            ordered.extend(g)
        monos = ordered
    else:
        blocks = [(0, len(monos))]
    index = {m: i for i, m in enumerate(monos)}
    return MonomialBasis(d=d, k=k, parity_reduced=bool(parity_reduce),
                         monomials=tuple(monos), index=index,
                         blocks=tuple(blocks))


class _Skeleton:
    """Assembled structure shared by every program over one basis.

    The decision variables are the pseudomoments themselves, one per
    distinct monomial reachable as a product of two same-block basis
    elements; duplicate matrix cells then agree by construction and the
    PSD constraint couples the moment vector to the cone through a
    sparse svec map.  The skeleton records that map, the cell locations
    of every monomial (for extraction and audits), and the sphere-ideal
    rows common to all programs.  Conic workspaces for the two norm
    programs are built lazily and cached; their matrices do not depend
    on the tensor, so repeated solves share one factorization.
    """

    def __init__(self, basis: MonomialBasis):
        self.basis = basis
        d, k = basis.d, basis.k
        sides = basis.block_sides
        self.sides = sides

        table = {}      # monomial -> [(slot, coeff)]  svec slot, smat weight
        cells = {}      # monomial -> [(gp, gq)] global matrix positions
        slot = 0
        for bi, (start, stop) in enumerate(basis.blocks):
            side = stop - start
            for p in range(side):
                mp = basis.monomials[start + p]
                for q in range(p, side):
                    prod = tuple(sorted(mp + basis.monomials[start + q]))
                    coeff = 1.0 if q == p else _SQ2
                    table.setdefault(prod, []).append((slot, coeff))
                    cells.setdefault(prod, []).append((start + p, start + q))
                    slot += 1
        self.n_slots = slot
        self.table = table
        self.cells = cells

        # graded-lex over distinct monomials; the constant comes first,
        # so c = e_0 prices E[1] in the homogenized program
        self.mu_monos = sorted(table.keys(), key=lambda m: (len(m), m))
        self.mu_index = {m: i for i, m in enumerate(self.mu_monos)}
        self.nvars = len(self.mu_monos)
        assert self.mu_monos[0] == ()

        # sphere ideals: E[|x|^2 q] = E[q] for every monomial q of
        # degree <= k - 2 whose moments survive the parity symmetry
        rows, cols, vals = [], [], []
        r = 0
        for q in _all_monomials(d, k - 2):
            if basis.parity_reduced and _parity_class(_parity(q, d)) != 0:
                continue  # both sides vanish by symmetry
            acc = {}
            ok = True
            for g0 in (0, d, 2 * d):
                acc.clear()
                for i in range(g0, g0 + d):
                    key = tuple(sorted(q + (i, i)))
                    if key not in self.mu_index:
                        raise AssertionError(f"sphere moment {key} unrepresentable")
                    acc[self.mu_index[key]] = acc.get(self.mu_index[key], 0.0) + 1.0
                qi = self.mu_index[q]
                acc[qi] = acc.get(qi, 0.0) - 1.0
                for var, coeff in sorted(acc.items()):
                    rows.append(r)
                    cols.append(var)
                    vals.append(coeff)
                r += 1
        self.sphere = (rows, cols, vals, r)

        # svec coupling: s_psd = B mu lands in the product of PSD cones
        prows, pcols, pvals = [], [], []
        for mono, locs in table.items():
            col = self.mu_index[mono]
            for s, coeff in locs:
                prows.append(s)
                pcols.append(col)
                pvals.append(-coeff)
        self.psd_triplets = (prows, pcols, pvals)

        self.xyz_mu = {}
        for i in range(d):
            for j in range(d):
                for kk in range(d):
                    self.xyz_mu[(i, j, kk)] = self.mu_index[(i, d + j, 2 * d + kk)]

        self._lock = threading.Lock()
        self._workspaces = {}

    def assemble(self, extra_rows, n_extra, extra_cones, n_extra_vars=0):
        """Full (A, cones) with rows ordered sphere, extra, psd.

        extra_rows are (row, col, val) triplets with rows counted from
        zero up to n_extra; columns may address n_extra_vars auxiliaries
        appended after the moment variables.  Used by the norm programs
        here and by the risk-minimization programs elsewhere in the
        package.
        """
        srows, scols, svals, ns = self.sphere
        erows, ecols, evals = extra_rows
        r0 = ns + n_extra
        rows = list(srows) + [r + ns for r in erows] + \
            [r0 + s for s in self.psd_triplets[0]]
        cols = list(scols) + list(ecols) + list(self.psd_triplets[1])
        vals = list(svals) + list(evals) + list(self.psd_triplets[2])
        n = self.nvars + n_extra_vars
        m = r0 + self.n_slots
        A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
        blocks = [("zero", ns)] + list(extra_cones) + \
            [("psd", s) for s in self.sides]
        return A, conic.ConeSpec(tuple(blocks)), ns

    def program(self, kind: str):
        """(workspace, meta) for 'nuclear' or 'injective'; cached."""
        with self._lock:
            if kind in self._workspaces:
                return self._workspaces[kind]
        d = self.basis.d
        erows, ecols, evals = [], [], []
        if kind == "nuclear":
            r = 0
            for i in range(d):
                for j in range(d):
                    for kk in range(d):
                        erows.append(r)
                        ecols.append(self.xyz_mu[(i, j, kk)])
                        evals.append(1.0)
                        r += 1
            n_extra = d ** 3
        elif kind == "injective":
            erows, ecols, evals = [0], [0], [1.0]
            n_extra = 1
        else:
            raise ValueError(kind)
        A, cones, ns = self.assemble((erows, ecols, evals), n_extra,
                                     [("zero", n_extra)])
        ws = conic.ConicWorkspace(A, cones)
        meta = {"m": A.shape[0], "row0": ns}
        with self._lock:
            self._workspaces[kind] = (ws, meta)
        return self._workspaces[kind]

    def matrix_from_vars(self, mu):
        """Assemble the full symmetric moment matrix from the moment
        vector (cells sharing a monomial are exactly equal)."""
        N = self.basis.size
        M = np.zeros((N, N))
        for mono, locs in self.cells.items():
            val = mu[self.mu_index[mono]]
            for gp, gq in locs:
                M[gp, gq] = val
                M[gq, gp] = val
        return M


_skeletons = {}
_skeleton_lock = threading.Lock()


def _skeleton(d, k, parity_reduce=None) -> _Skeleton:
    if parity_reduce is None:
        parity_reduce = (k == 6)
    key = (d, k, bool(parity_reduce))
    with _skeleton_lock:
        sk = _skeletons.get(key)
    if sk is None:
        sk = _Skeleton(build_basis(d, k, parity_reduce))
        with _skeleton_lock:
            sk = _skeletons.setdefault(key, sk)
    return sk


@dataclass(frozen=True)
class PseudoMomentMatrix:
    """A (possibly homogenized) pseudomoment matrix over a basis.

    normalization is E[1] = M[0, 0]; a normalized pseudodistribution has
    normalization 1, nuclear-norm witnesses carry E[1] = value.
    """

    basis: MonomialBasis
    M: np.ndarray
    normalization: float

    def moment(self, mono) -> float:
        """Pseudoexpectation of a monomial of degree <= k, averaged over
        the matrix cells representing it."""
        sk = _skeleton(self.basis.d, self.basis.k, self.basis.parity_reduced)
        key = tuple(sorted(mono))
        if key not in sk.cells:
            if (self.basis.parity_reduced
                    and _parity_class(_parity(key, self.basis.d)) != 0):
                return 0.0
            raise KeyError(f"monomial {key} not representable at degree {self.basis.k}")
        vals = [self.M[p, q] for p, q in sk.cells[key]]
        return float(np.mean(vals))

    def psd_violation(self) -> float:
        """max(0, -lambda_min) / ||M||_op; invariant bound is 1e-7."""
        w = np.linalg.eigvalsh((self.M + self.M.T) / 2.0)
        top = max(abs(w[0]), abs(w[-1]))
        if top == 0.0:
            return 0.0
        return max(0.0, -w[0]) / top

    def consistency_violation(self) -> float:
        """Largest spread among matrix cells sharing one monomial."""
        sk = _skeleton(self.basis.d, self.basis.k, self.basis.parity_reduced)
        worst = 0.0
        for locs in sk.cells.values():
            if len(locs) < 2:
                continue
            vals = [self.M[p, q] for p, q in locs]
            worst = max(worst, max(vals) - min(vals))
        return worst

    def sphere_violation(self) -> float:
        """Worst |E[|x|^2 q] - E[q]| over basis monomials q of degree
        <= k/2 - 1 and all three variable groups."""
        d = self.basis.d
        half = self.basis.k // 2
        worst = 0.0
        for q in self.basis.monomials:
            if len(q) > half - 1:
                continue
            if self.basis.parity_reduced and _parity_class(_parity(q, d)) != 0:
                continue
            rhs = self.moment(q)
            for g0 in (0, d, 2 * d):
                lhs = sum(self.moment(q + (i, i)) for i in range(g0, g0 + d))
                worst = max(worst, abs(lhs - rhs))
        return worst


@dataclass(frozen=True)
class NormResult:
    """Norm value, optimizing pseudomoment matrix, solver diagnostics."""

    value: float
    certificate: PseudoMomentMatrix
    diagnostics: dict


def _default_settings(k: int) -> conic.SolverSettings:
    # norm values are consumed with SOLVER_TOL slack, so the default
    # stop sits well inside it; degenerate instances (noisy near-rank-1
    # tensors) plateau below the conic default of 1e-7
    if k == 4:
        return conic.SolverSettings(eps_primal=1e-6, eps_dual=1e-6,
                                    eps_gap=1e-6)
    return conic.SolverSettings(eps_primal=5e-7, eps_dual=5e-7, eps_gap=5e-7,
                                max_iters=100000)


def _run(ws, c, b, settings, what):
    sol = ws.solve(c, b, settings)
    if sol.status != "optimal":
        raise SolverFailure(
            f"{what}: solver returned {sol.status} "
            f"(pres={sol.pres:.2e}, dres={sol.dres:.2e}, gap={sol.gap:.2e}, "
            f"iters={sol.iters})", sol)
    return sol


def _diag(sol, settings):
    return {"status": sol.status, "pres": sol.pres, "dres": sol.dres,
            "gap": sol.gap, "iters": sol.iters, "solve_time": sol.solve_time,
            "eps": (settings.eps_primal, settings.eps_dual, settings.eps_gap)}


def _injective_cb(sk, meta, X):
    c = np.zeros(sk.nvars)
    for (i, j, kk), var in sk.xyz_mu.items():
        c[var] = -X[i, j, kk]
    b = np.zeros(meta["m"])
    b[meta["row0"]] = 1.0
    return c, b


def _nuclear_cb(sk, meta, T):
    c = np.zeros(sk.nvars)
    c[0] = 1.0
    b = np.zeros(meta["m"])
    r0 = meta["row0"]
    b[r0:r0 + T.size] = T.ravel()
    return c, b


def injective_norm(X, k: int, parity_reduce=None,
                   settings: conic.SolverSettings | None = None) -> NormResult:
    """SoS injective norm: max <X, E[x (x) y (x) z]> over normalized
    degree-k pseudomoment matrices with sphere ideals for x, y, z."""
    X = as_tensor3(X)
    sk = _skeleton(X.shape[0], k, parity_reduce)
    if settings is None:
        settings = _default_settings(k)
    ws, meta = sk.program("injective")
    c, b = _injective_cb(sk, meta, X)
    sol = _run(ws, c, b, settings, "injective_norm")
    M = sk.matrix_from_vars(sol.x)
    cert = PseudoMomentMatrix(basis=sk.basis, M=M, normalization=float(M[0, 0]))
    return NormResult(value=max(0.0, -sol.obj), certificate=cert,
                      diagnostics=_diag(sol, settings))


def nuclear_norm(T, k: int, parity_reduce=None,
                 settings: conic.SolverSettings | None = None) -> NormResult:
    """SoS nuclear norm, homogenized: min E[1] subject to the moment
    matrix being feasible and E[x_i y_j z_k] = T_ijk entrywise."""
    T = as_tensor3(T)
    sk = _skeleton(T.shape[0], k, parity_reduce)
    if settings is None:
        settings = _default_settings(k)
    ws, meta = sk.program("nuclear")
    c, b = _nuclear_cb(sk, meta, T)
    sol = _run(ws, c, b, settings, "nuclear_norm")
    M = sk.matrix_from_vars(sol.x)
    cert = PseudoMomentMatrix(basis=sk.basis, M=M, normalization=float(M[0, 0]))
    return NormResult(value=max(0.0, sol.obj), certificate=cert,
                      diagnostics=_diag(sol, settings))


def build_injective_problem(X, k: int, parity_reduce=None) -> conic.ConicProblem:
    """The injective-norm program as an explicit conic problem (for
    dumps and debugging; value = -optimal objective)."""
    X = as_tensor3(X)
    sk = _skeleton(X.shape[0], k, parity_reduce)
    ws, meta = sk.program("injective")
    c, b = _injective_cb(sk, meta, X)
    return conic.ConicProblem(c=c, A=ws.A_orig, b=b, cones=ws.cones)


def build_nuclear_problem(T, k: int, parity_reduce=None) -> conic.ConicProblem:
    """The homogenized nuclear-norm program as an explicit conic problem."""
    T = as_tensor3(T)
    sk = _skeleton(T.shape[0], k, parity_reduce)
    ws, meta = sk.program("nuclear")
    c, b = _nuclear_cb(sk, meta, T)
    return conic.ConicProblem(c=c, A=ws.A_orig, b=b, cones=ws.cones)


def extract_moment_tensor(pm: PseudoMomentMatrix) -> np.ndarray:
    """Read E[x_i y_j z_k] into a tensor, averaging duplicate cells.

    Warns (InconsistentMomentWarning) when duplicates disagree by more
    than 1e-6.
    """
    basis = pm.basis
    d = basis.d
    sk = _skeleton(d, basis.k, basis.parity_reduced)
    T = np.empty((d, d, d))
    worst = 0.0
    for i in range(d):
        for j in range(d):
            for kk in range(d):
                locs = sk.cells[(i, d + j, 2 * d + kk)]
                vals = [pm.M[p, q] for p, q in locs]
                T[i, j, kk] = np.mean(vals)
                if len(vals) > 1:
                    worst = max(worst, max(vals) - min(vals))
    if worst > 1e-6:
        warnings.warn(f"moment inconsistency {worst:.2e} while extracting "
                      "E[x (x) y (x) z]", InconsistentMomentWarning)
    return T


def moment_matrix_from_point(basis: MonomialBasis, x, y, z) -> PseudoMomentMatrix:
    """Dirac pseudomoment matrix at (x, y, z).

    With a parity-reduced basis the four sign copies with sx*sy*sz = 1
    are averaged, which zeroes the cross-class entries without touching
    any trilinear moment.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    d = basis.d
    if x.shape != (d,) or y.shape != (d,) or z.shape != (d,):
        raise ValueError("point dimensions do not match basis")
    signs = [(1, 1, 1)] if not basis.parity_reduced else \
        [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    N = basis.size
    M = np.zeros((N, N))
    for sx, sy, sz in signs:
        point = np.concatenate([sx * x, sy * y, sz * z])
        v = np.empty(N)
        for idx, mono in enumerate(basis.monomials):
            val = 1.0
            for var in mono:
                val *= point[var]
            v[idx] = val
        M += np.outer(v, v)
    M /= len(signs)
    return PseudoMomentMatrix(basis=basis, M=M, normalization=float(M[0, 0]))


def mix_moment_matrices(mats, weights) -> PseudoMomentMatrix:
    """Convex-cone combination of pseudomoment matrices on one basis."""
    weights = np.asarray(weights, dtype=float)
    if len(mats) == 0 or weights.shape != (len(mats),):
        raise ValueError("need matching nonempty matrices and weights")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    basis = mats[0].basis
    M = np.zeros_like(mats[0].M)
    for pm, w in zip(mats, weights):
        if pm.basis is not basis and pm.basis != basis:
            raise ValueError("mixed bases")
        M = M + w * pm.M
    return PseudoMomentMatrix(basis=basis, M=M, normalization=float(M[0, 0]))


def subgradient_dual(T: OrthogonalTensor, X) -> np.ndarray:
    """The dual certificate X* + Q_perp(X) at an orthogonal tensor.

    X* = sum_i sign(lambda_i) u_i (x) v_i (x) w_i; the perp projection
    is the exact linear map built from the factor subspaces.  No solve.
    """
    X = as_tensor3(X)
    if X.shape[0] != T.d:
        raise ValueError("X dimension does not match the orthogonal tensor")
    Xstar = np.zeros_like(X)
    for i in range(T.r):
        s = np.sign(T.lambdas[i])
        if s != 0.0:
            Xstar += s * outer3(T.U[:, i], T.V[:, i], T.W[:, i])
    proj = SubspaceProjector.from_orthogonal(T)
    return Xstar + project_perp(proj, X)


def check_subgradient_inequality(T: OrthogonalTensor, Tprime, X, k: int,
                                 settings: conic.SolverSettings | None = None,
                                 nuclear_T: float | None = None) -> float:
    """Signed slack of the subgradient inequality at degree k + 2:

        |T'|_nuc(k+2) - |T|_nuc(k+2) - <X* + Q_perp(X), T' - T>

    The caller is responsible for scaling X to |X|_inj(k) <= 1/64.
    nuclear_T short-circuits the benchmark solve when already known.
    """
    if k != 4:
        raise ValueError("the subgradient certificate needs degree k + 2; "
                         "only k = 4 (solves at degree 6) is supported")
    Tprime = as_tensor3(Tprime)
    G = subgradient_dual(T, X)
    dense = T.densify()
    if nuclear_T is None:
        nuclear_T = nuclear_norm(dense, k + 2, settings=settings).value
    nuc_prime = nuclear_norm(Tprime, k + 2, settings=settings).value
    return float(nuc_prime - nuclear_T - tensor_inner(G, Tprime - dense))


def check_norm_comparison(T: OrthogonalTensor, Tprime,
                          settings: conic.SolverSettings | None = None,
                          parity_reduce=None) -> float:
    """|Delta|_nuc4 / |Delta|_F for Delta = T' - densify(T); 0 when
    Delta vanishes.  The caller certifies |T'|_nuc6 <= |T|_nuc6."""
    Tprime = as_tensor3(Tprime)
    delta = Tprime - T.densify()
    fro = float(np.linalg.norm(delta))
    if fro == 0.0:
        return 0.0
    val = nuclear_norm(delta, 4, parity_reduce=parity_reduce,
                       settings=settings).value
    return val / fro


def pseudo_cs_check(pm: PseudoMomentMatrix, f: dict, g: dict) -> bool:
    """Pseudo-Cauchy-Schwarz: E[fg] <= sqrt(E[f^2] E[g^2]) + 1e-8.

    f and g map monomials (tuples of variable ids, degree <= k/2) to
    coefficients.
    """
    basis = pm.basis
    half = basis.k // 2

    def vec(poly):
        v = np.zeros(basis.size)
        for mono, coeff in poly.items():
            key = tuple(sorted(mono))
            if len(key) > half:
                raise ValueError(f"monomial {key} exceeds degree {half}")
            v[basis.lookup(key)] += coeff
        return v

    fv, gv = vec(f), vec(g)
    efg = float(fv @ pm.M @ gv)
    ef2 = max(float(fv @ pm.M @ fv), 0.0)
    eg2 = max(float(gv @ pm.M @ gv), 0.0)
    return efg <= np.sqrt(ef2 * eg2) + 1e-8
