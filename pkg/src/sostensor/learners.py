"""Norm-constrained empirical risk minimization for tensor regression.

Three fitting routes share one interface: a direct conic solve over the
SoS nuclear ball (the reference method), a Frank-Wolfe loop whose
linear oracle is the SoS injective norm (same ball, cheaper per
iterate), and a matrix-nuclear unfolding baseline.  Each returns the
fitted tensor with its exactly recomputed empirical risk; nothing about
the data-generating process is assumed beyond the dataset itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import conic
from .measurements import Dataset, apply_design, design_adjoint, population_risk
from .sosnorms import (SOLVER_TOL, SolverFailure, _skeleton,
                       extract_moment_tensor, injective_norm, nuclear_norm)
from .tensors import as_tensor3, flatten, matrix_nuclear, unflatten

_MAX_D = {4: 8, 6: 4}


@dataclass(frozen=True)
class ErmConfig:
    """Shared knobs for the SoS fitting routes.

    tau is the nuclear-ball radius; R, when set, adds the entrywise box
    |T_ijk| <= R (completion datasets only).  parity_reduce=None takes
    the per-degree default.
    """
    tau: float
    k: int = 4
    R: float | None = None
    parity_reduce: bool | None = None
    certify: bool = True
    settings: conic.SolverSettings | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.k not in (4, 6):
            raise ValueError("k must be 4 or 6")
        if self.R is not None and self.R <= 0:
            raise ValueError("R must be positive when given")


@dataclass(frozen=True)
class ErmResult:
    T_hat: np.ndarray
    empirical_risk: float
    diagnostics: dict
    trace: tuple = ()


def _check_inputs(dataset: Dataset, config: ErmConfig):
    if dataset.n == 0:
        raise ValueError("cannot fit an empty dataset")
    if dataset.d > _MAX_D[config.k]:
        raise ValueError(f"degree {config.k} fits are budgeted for "
                         f"d <= {_MAX_D[config.k]}, got d={dataset.d}")
    if config.R is not None and dataset.law != "completion":
        raise ValueError("the entrywise box applies to completion datasets")


def _solved(sol, what):
    if sol.status != "optimal":
        raise SolverFailure(
            f"{what}: solver returned {sol.status} "
            f"(pres={sol.pres:.2e}, dres={sol.dres:.2e}, gap={sol.gap:.2e})",
            sol)
    return sol


def _soc_rows(r0, preds, ys, ell_col, n):
    """Triplets and rhs for l >= |(1/sqrt n)(X_n T - y)|^2 via the
    rotated-cone embedding ( l+1, 2w, l-1 )."""
    rows, cols, vals = [r0], [ell_col], [-1.0]
    b = {r0: 1.0}
    scale = 2.0 / np.sqrt(n)
    for t, (pred, y) in enumerate(zip(preds, ys)):
        r = r0 + 1 + t
        for col, coeff in pred:
            rows.append(r)
            cols.append(col)
            vals.append(scale * coeff)
        b[r] = scale * y
    r_last = r0 + 1 + n
    rows.append(r_last)
    cols.append(ell_col)
    vals.append(-1.0)
    b[r_last] = -1.0
    return rows, cols, vals, b


_CERTIFY_SETTINGS = conic.SolverSettings(eps_primal=5e-6, eps_dual=5e-6,
                                         eps_gap=5e-6, max_iters=60000)


def _certify(T_hat, config: ErmConfig, diagnostics: dict):
    # fitted tensors sit on the ball boundary and are nearly low-rank,
    # the slowest regime for the first-order solver; the check bound
    # tau*(1 + 2*SOLVER_TOL) dwarfs the looser stop used here
    res = nuclear_norm(T_hat, config.k, parity_reduce=config.parity_reduce,
                       settings=config.settings or _CERTIFY_SETTINGS)
    diagnostics["nuclear_cert"] = res.value
    diagnostics["certified"] = bool(res.value <= config.tau * (1 + 2 * SOLVER_TOL))


def erm_direct(dataset: Dataset, config: ErmConfig) -> ErmResult:
    """One conic solve of min_T L_hat(T) over the tau-ball of the SoS
    nuclear norm (optionally boxed), via the homogenized moment program
    with E[1] = tau and an epigraph variable for the risk."""
    _check_inputs(dataset, config)
    sk = _skeleton(dataset.d, config.k, config.parity_reduce)
    n = dataset.n
    ell = sk.nvars
    ys = dataset.responses

    erows, ecols, evals = [0], [0], [1.0]  # E[1] = tau
    b_extra = {0: config.tau}
    r = 1
    cones = [("zero", 1)]
    if config.R is not None:
        for (_, _, _), col in sorted(sk.xyz_mu.items()):
            for sign in (1.0, -1.0):
                erows.append(r)
                ecols.append(col)
                evals.append(sign)
                b_extra[r] = config.R
                r += 1
        cones.append(("nonneg", 2 * dataset.d ** 3))

    if dataset.law == "completion":
        preds = [[(sk.xyz_mu[(m.i, m.j, m.k)], 1.0)]
                 for m in dataset.measurements]
    else:
        preds = []
        for m in dataset.measurements:
            row = [(col, m.X[key]) for key, col in sorted(sk.xyz_mu.items())]
            preds.append(row)
    srows, scols, svals, sb = _soc_rows(r, preds, ys, ell, n)
    erows.extend(srows)
    ecols.extend(scols)
    evals.extend(svals)
    b_extra.update(sb)
    r += n + 2
    cones.append(("soc", n + 2))

    A, spec, ns = sk.assemble((erows, ecols, evals), r, cones, n_extra_vars=1)
    b = np.zeros(A.shape[0])
    for row, val in b_extra.items():
        b[ns + row] = val
    c = np.zeros(A.shape[1])
    c[ell] = 1.0
    settings = config.settings or conic.SolverSettings()
    sol = _solved(conic.ConicWorkspace(A, spec).solve(c, b, settings),
                  "erm_direct")

    T_hat = np.empty((dataset.d,) * 3)
    for (i, j, k), col in sk.xyz_mu.items():
        T_hat[i, j, k] = sol.x[col]
    risk = float(np.mean((apply_design(dataset, T_hat) - ys) ** 2))
    diag = {"method": "erm_direct", "status": sol.status, "pres": sol.pres,
            "dres": sol.dres, "gap": sol.gap, "iters": sol.iters,
            "epigraph": float(sol.obj), "tau": config.tau, "R": config.R,
            "max_abs_entry": float(np.abs(T_hat).max())}
    if config.certify:
        _certify(T_hat, config, diag)
    return ErmResult(T_hat=T_hat, empirical_risk=risk, diagnostics=diag)


def erm_frank_wolfe(dataset: Dataset, config: ErmConfig, iters: int = 50,
                    gap_tol: float = 1e-8) -> ErmResult:
    """Frank-Wolfe over the same tau-ball: each step solves one SoS
    injective norm of the negated gradient and moves toward tau times
    the extracted optimizer, step size 2/(s+2).  Returns the best
    iterate by empirical risk; the trace rows are (step, risk, gap)."""
    _check_inputs(dataset, config)
    if config.R is not None:
        raise ValueError("the Frank-Wolfe route has no box constraint")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    n = dataset.n
    ys = dataset.responses
    d = dataset.d

    def risk_of(T):
        return float(np.mean((apply_design(dataset, T) - ys) ** 2))

    T = np.zeros((d, d, d))
    best_T, best_risk = T, risk_of(T)
    trace = []
    lmo_calls = 0
    for s in range(iters):
        grad = (2.0 / n) * design_adjoint(dataset, apply_design(dataset, T) - ys)
        gnorm = float(np.abs(grad).max())
        if gnorm == 0.0:
            trace.append((s, risk_of(T), 0.0))
            break
        lmo = injective_norm(-grad, config.k,
                             parity_reduce=config.parity_reduce,
                             settings=config.settings)
        lmo_calls += 1
        S = config.tau * extract_moment_tensor(lmo.certificate)
        gap = float(np.sum(grad * (T - S)))
        trace.append((s, risk_of(T), gap))
        if gap <= gap_tol:
            break
        T = T + (2.0 / (s + 2)) * (S - T)
        r = risk_of(T)
        if r < best_risk:
            best_T, best_risk = T, r
    diag = {"method": "erm_frank_wolfe", "status": "optimal",
            "lmo_calls": lmo_calls, "final_gap": trace[-1][2] if trace else 0.0,
            "tau": config.tau, "R": None,
            "max_abs_entry": float(np.abs(best_T).max())}
    if config.certify:
        _certify(best_T, config, diag)
    return ErmResult(T_hat=best_T, empirical_risk=best_risk, diagnostics=diag,
                     trace=tuple(trace))


def erm_unfolding(dataset: Dataset, tau_matrix: float, mode: int = 1,
                  settings: conic.SolverSettings | None = None) -> ErmResult:
    """Matrix baseline: minimize the empirical risk over tensors whose
    mode-m flattening has matrix nuclear norm at most tau_matrix, via
    the usual semidefinite embedding [[W1, B], [B', W2]] >= 0 with
    tr(W1) + tr(W2) <= 2 tau_matrix."""
    if dataset.n == 0:
        raise ValueError("cannot fit an empty dataset")
    if mode not in (1, 2, 3):
        raise ValueError("mode must be 1, 2 or 3")
    if tau_matrix <= 0:
        raise ValueError("tau_matrix must be positive")
    d = dataset.d
    md = d + d * d
    nv = conic.svec_len(md)
    ell = nv
    n = dataset.n

    def slot(p, q):
        return p * md - p * (p - 1) // 2 + (q - p)

    # column of the flattening holding T_ijk, per mode convention
    def bcol(i, j, k):
        if mode == 1:
            return i, j * d + k
        if mode == 2:
            return j, i * d + k
        return k, i * d + j

    rows, cols, vals = [], [], []
    b = {}
    # trace budget row (nonneg): 2 tau - sum_p Z_pp >= 0
    for p in range(md):
        rows.append(0)
        cols.append(slot(p, p))
        vals.append(1.0)
    b[0] = 2.0 * tau_matrix
    r = 1

    inv_sq2 = 1.0 / np.sqrt(2.0)
    preds = []
    for m in dataset.measurements:
        if dataset.law == "completion":
            pr, pc = bcol(m.i, m.j, m.k)
            preds.append([(slot(pr, d + pc), inv_sq2)])
        else:
            acc = {}
            for i in range(d):
                for j in range(d):
                    for k in range(d):
                        pr, pc = bcol(i, j, k)
                        sl = slot(pr, d + pc)
                        acc[sl] = acc.get(sl, 0.0) + m.X[i, j, k] * inv_sq2
            preds.append(sorted(acc.items()))
    srows, scols, svals, sb = _soc_rows(r, preds, dataset.responses, ell, n)
    rows.extend(srows)
    cols.extend(scols)
    vals.extend(svals)
    b.update(sb)
    r += n + 2
    # PSD coupling s = svec(Z)
    for p in range(nv):
        rows.append(r + p)
        cols.append(p)
        vals.append(-1.0)

    A = sp.csc_matrix((vals, (rows, cols)), shape=(r + nv, nv + 1))
    spec = conic.ConeSpec((("nonneg", 1), ("soc", n + 2), ("psd", md)))
    bvec = np.zeros(r + nv)
    for row, val in b.items():
        bvec[row] = val
    c = np.zeros(nv + 1)
    c[ell] = 1.0
    sol = _solved(conic.ConicWorkspace(A, spec).solve(
        c, bvec, settings or conic.SolverSettings()), "erm_unfolding")

    Z = conic.smat(sol.x[:nv], md)
    B = Z[:d, d:]
    T_hat = unflatten(B, mode)
    risk = float(np.mean((apply_design(dataset, T_hat) - dataset.responses) ** 2))
    diag = {"method": "erm_unfolding", "status": sol.status, "pres": sol.pres,
            "dres": sol.dres, "gap": sol.gap, "iters": sol.iters,
            "epigraph": float(sol.obj), "tau_matrix": tau_matrix, "mode": mode,
            "trace_Z": float(np.trace(Z)),
            "matrix_nuclear": matrix_nuclear(flatten(T_hat, mode)),
            "max_abs_entry": float(np.abs(T_hat).max())}
    return ErmResult(T_hat=T_hat, empirical_risk=risk, diagnostics=diag)


def excess_risk(pop, result, benchmark) -> float:
    """Population excess risk of a fit (ErmResult or raw tensor) over a
    benchmark tensor."""
    T = result.T_hat if hasattr(result, "T_hat") else as_tensor3(result)
    return population_risk(pop, T) - population_risk(pop, benchmark)
