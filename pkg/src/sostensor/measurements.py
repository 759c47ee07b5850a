"""Measurement ensembles, response models, and population quantities.

Two sampling laws are supported: "completion" draws uniform entry
observations e_i (x) e_j (x) e_k (with replacement), and "gaussian"
draws dense designs with iid standard normal entries.  Response models
attach conditional means (and variances) to measurements; datasets
bundle a drawn design with its responses and serialize to a plain text
format.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
from scipy.stats import norm

from .tensors import as_tensor3, tensor_inner

LAWS = ("completion", "gaussian")


class UnsupportedModelError(Exception):
    """A population quantity was requested outside its closed form."""


@dataclass(frozen=True)
class Entry:
    """Observation of one tensor entry, X = e_i (x) e_j (x) e_k."""
    i: int
    j: int
    k: int


@dataclass(frozen=True)
class Dense:
    """Dense sensing measurement <X, T> with a full design tensor."""
    X: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X", as_tensor3(self.X))


@dataclass(frozen=True)
class Dataset:
    """A design with responses, plus the metadata needed to refit it.

    R, when set, is the declared response bound; completion responses
    must respect it.  seed records how the data was drawn (None for
    datasets assembled by hand).
    """
    law: str
    d: int
    measurements: tuple
    responses: np.ndarray
    R: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown law {self.law!r}")
        y = np.asarray(self.responses, dtype=float)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "measurements", tuple(self.measurements))
        if y.ndim != 1 or len(self.measurements) != y.size:
            raise ValueError("responses must be one float per measurement")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses must be finite")
        want = Entry if self.law == "completion" else Dense
        for m in self.measurements:
            if not isinstance(m, want):
                raise ValueError(f"law {self.law!r} expects {want.__name__} "
                                 "measurements")
            if isinstance(m, Entry):
                if not all(0 <= t < self.d for t in (m.i, m.j, m.k)):
                    raise ValueError(f"entry index {m} out of range for d={self.d}")
            elif m.X.shape != (self.d,) * 3:
                raise ValueError("dense measurement dimension mismatch")
        if self.R is not None:
            if self.R <= 0:
                raise ValueError("R must be positive")
            if self.law == "completion" and y.size and np.abs(y).max() > self.R + 1e-9:
                raise ValueError("responses exceed the declared bound R")

    @property
    def n(self) -> int:
        return self.responses.size


# --------------------------------------------------------- response models

@dataclass(frozen=True)
class WellSpecifiedTeacher:
    """y = <teacher, X> + noise_std * N(0,1), clipped to [-clip, clip]
    when clip is set."""
    teacher: np.ndarray
    noise_std: float = 0.0
    clip: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "teacher", as_tensor3(self.teacher))
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip must be positive")


@dataclass(frozen=True)
class MisspecifiedTeacher(WellSpecifiedTeacher):
    """Same response mechanism, flagged as lying outside the fitted
    class (e.g. rank above the norm-ball budget); kept distinct so
    experiment manifests can say which regime produced the data."""


@dataclass(frozen=True)
class LookupTable:
    """Arbitrary bounded conditional means per entry; respond() returns
    the mean itself and variances only enter population risk."""
    means: np.ndarray
    variances: np.ndarray | float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "means", as_tensor3(self.means))
        v = np.broadcast_to(np.asarray(self.variances, dtype=float),
                            self.means.shape).copy()
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("variances must be finite and nonnegative")
        object.__setattr__(self, "variances", v)


ResponseModel = WellSpecifiedTeacher | MisspecifiedTeacher | LookupTable


@dataclass(frozen=True)
class PopulationModel:
    """Sampling law plus response model; the design covariance is
    isotropic under both laws (I/d^3 for completion, I for sensing)."""
    law: str
    response: ResponseModel

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown law {self.law!r}")

    @property
    def d(self) -> int:
        if isinstance(self.response, LookupTable):
            return self.response.means.shape[0]
        return self.response.teacher.shape[0]

    @property
    def covariance_scale(self) -> float:
        return 1.0 / self.d ** 3 if self.law == "completion" else 1.0


# ---------------------------------------------------------------- sampling

def sample_completion(d: int, n: int, seed) -> tuple:
    """n uniform entry measurements, with replacement."""
    if d < 1 or n < 0:
        raise ValueError("need d >= 1 and n >= 0")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d, size=(n, 3))
    return tuple(Entry(int(i), int(j), int(k)) for i, j, k in idx)


def sample_gaussian(d: int, n: int, seed) -> tuple:
    """n dense designs with iid N(0,1) entries."""
    if d < 1 or n < 0:
        raise ValueError("need d >= 1 and n >= 0")
    rng = np.random.default_rng(seed)
    return tuple(Dense(rng.standard_normal((d, d, d))) for _ in range(n))


def respond(model: ResponseModel, measurement, seed) -> float:
    """Draw one response; seed may be an int or a Generator (shared
    across a dataset for sequential draws)."""
    rng = np.random.default_rng(seed)
    if isinstance(model, LookupTable):
        if not isinstance(measurement, Entry):
            raise UnsupportedModelError("lookup tables define entrywise "
                                        "conditional means only")
        return float(model.means[measurement.i, measurement.j, measurement.k])
    if isinstance(measurement, Entry):
        mean = float(model.teacher[measurement.i, measurement.j, measurement.k])
    else:
        mean = tensor_inner(model.teacher, measurement.X)
    y = mean
    if model.noise_std > 0:
        y = y + model.noise_std * rng.standard_normal()
    if model.clip is not None:
        y = float(np.clip(y, -model.clip, model.clip))
    return float(y)


def build_dataset(pop: PopulationModel, n: int, seed) -> Dataset:
    """Sample a design under pop.law and respond to it, one rng stream."""
    rng = np.random.default_rng(seed)
    d = pop.d
    if pop.law == "completion":
        ms = sample_completion(d, n, rng)
    else:
        ms = sample_gaussian(d, n, rng)
    ys = np.array([respond(pop.response, m, rng) for m in ms])
    if isinstance(pop.response, LookupTable):
        R = float(np.abs(pop.response.means).max()) if pop.law == "completion" else None
    else:
        R = pop.response.clip if pop.law == "completion" else None
    return Dataset(law=pop.law, d=d, measurements=ms, responses=ys, R=R,
                   seed=seed if isinstance(seed, (int, np.integer)) else None)


# ------------------------------------------------------------ linear maps

def apply_design(dataset: Dataset, T) -> np.ndarray:
    """The design operator: (X_n T)_t = <X_t, T>."""
    T = as_tensor3(T)
    if T.shape != (dataset.d,) * 3:
        raise ValueError("tensor dimension does not match the dataset")
    if dataset.n == 0:
        return np.zeros(0)
    if dataset.law == "completion":
        idx = np.array([(m.i, m.j, m.k) for m in dataset.measurements])
        return T[idx[:, 0], idx[:, 1], idx[:, 2]]
    stack = np.stack([m.X for m in dataset.measurements])
    return np.einsum("tijk,ijk->t", stack, T)


def design_adjoint(dataset: Dataset, v) -> np.ndarray:
    """Adjoint of apply_design: sum_t v_t X_t."""
    v = np.asarray(v, dtype=float)
    if v.shape != (dataset.n,):
        raise ValueError("vector length does not match the dataset")
    out = np.zeros((dataset.d,) * 3)
    if dataset.n == 0:
        return out
    if dataset.law == "completion":
        idx = np.array([(m.i, m.j, m.k) for m in dataset.measurements])
        np.add.at(out, (idx[:, 0], idx[:, 1], idx[:, 2]), v)
        return out
    stack = np.stack([m.X for m in dataset.measurements])
    return np.einsum("t,tijk->ijk", v, stack)


# --------------------------------------------------------- population risk

def censored_normal_moments(mu, sigma, R):
    """Mean and variance of clip(N(mu, sigma^2), -R, R), elementwise."""
    mu = np.asarray(mu, dtype=float)
    if R <= 0:
        raise ValueError("R must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        m = np.clip(mu, -R, R)
        return m, np.zeros_like(m)
    a = (-R - mu) / sigma
    b = (R - mu) / sigma
    Fa, Fb = norm.cdf(a), norm.cdf(b)
    fa, fb = norm.pdf(a), norm.pdf(b)
    P = Fb - Fa
    mean = -R * Fa + R * (1.0 - Fb) + mu * P + sigma * (fa - fb)
    second = (R ** 2 * (Fa + 1.0 - Fb) + mu ** 2 * P
              + 2.0 * mu * sigma * (fa - fb)
              + sigma ** 2 * (P + a * fa - b * fb))
    var = np.maximum(second - mean ** 2, 0.0)
    return mean, var


def _conditional_table(model: ResponseModel):
    """Entrywise (means, variances) of the response at each e_ijk."""
    if isinstance(model, LookupTable):
        return model.means, model.variances
    if model.clip is None:
        return model.teacher, np.full(model.teacher.shape, model.noise_std ** 2)
    return censored_normal_moments(model.teacher, model.noise_std, model.clip)


def population_risk(pop: PopulationModel, T) -> float:
    """L(T) = E (<X, T> - Y)^2 under the population model.

    Closed forms: completion averages the entrywise bias-variance
    decomposition; gaussian sensing needs an unclipped teacher model and
    evaluates |T - T*|_F^2 + sigma^2.
    """
    T = as_tensor3(T)
    if T.shape != (pop.d,) * 3:
        raise ValueError("tensor dimension does not match the model")
    if pop.law == "completion":
        means, variances = _conditional_table(pop.response)
        return float(np.mean((T - means) ** 2 + variances))
    if isinstance(pop.response, LookupTable):
        raise UnsupportedModelError("no closed-form sensing risk for lookup "
                                    "tables")
    if pop.response.clip is not None:
        raise UnsupportedModelError("no closed-form sensing risk with "
                                    "clipped responses")
    diff = T - pop.response.teacher
    return float(tensor_inner(diff, diff) + pop.response.noise_std ** 2)


def excess_population_risk(pop: PopulationModel, T, benchmark) -> float:
    """L(T) - L(benchmark)."""
    return population_risk(pop, T) - population_risk(pop, benchmark)


# ------------------------------------------------- restricted-eigenvalue

@dataclass(frozen=True)
class ProbeOutcome:
    pop_form: float
    emp_form: float
    slack: float
    ratio: float


@dataclass(frozen=True)
class ReProbeReport:
    """Per-direction comparison of population and empirical quadratic
    forms; gamma_hat is the largest one-sided defect over the probes.
    No verdict is attached, the numbers speak for themselves."""
    probes: tuple
    gamma_hat: float
    n: int


def re_probe(dataset: Dataset, pop: PopulationModel, deltas) -> ReProbeReport:
    """Probe |Sigma^(1/2) D|^2 <= (1.1/n) |X_n D|^2 + gamma along the
    given nonzero directions D."""
    deltas = list(deltas)
    if not deltas:
        raise ValueError("need at least one probe direction")
    if dataset.n == 0:
        raise ValueError("cannot probe an empty dataset")
    scale = pop.covariance_scale
    probes = []
    worst = 0.0
    for D in deltas:
        D = as_tensor3(D)
        fro2 = float(tensor_inner(D, D))
        if fro2 == 0.0:
            raise ValueError("probe directions must be nonzero")
        pop_form = scale * fro2
        emp_form = float(np.mean(apply_design(dataset, D) ** 2))
        slack = max(0.0, pop_form - 1.1 * emp_form)
        probes.append(ProbeOutcome(pop_form=pop_form, emp_form=emp_form,
                                   slack=slack, ratio=emp_form / pop_form))
        worst = max(worst, slack)
    return ReProbeReport(probes=tuple(probes), gamma_hat=worst, n=dataset.n)


# ------------------------------------------------------ rademacher probe

_RADEMACHER_MAX_D = 5
_RADEMACHER_MAX_N = 200


def signed_design_norm(measurements, signs, k: int = 4) -> float:
    """SoS injective norm of sum_t eps_t X_t."""
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (len(measurements),):
        raise ValueError("one sign per measurement")
    if len(measurements) == 0:
        raise ValueError("need at least one measurement")
    first = measurements[0]
    d = first.X.shape[0] if isinstance(first, Dense) else None
    if d is None:
        d = 1 + max(max(m.i, m.j, m.k) for m in measurements)
    G = np.zeros((d, d, d))
    for eps, m in zip(signs, measurements):
        if isinstance(m, Entry):
            G[m.i, m.j, m.k] += eps
        else:
            G += eps * m.X
    from .sosnorms import injective_norm
    return injective_norm(G, k, parity_reduce=True).value


@dataclass(frozen=True)
class RademacherReport:
    mean: float
    std: float
    values: tuple


def rademacher_estimate(d: int, n: int, trials: int, seed: int) -> RademacherReport:
    """Monte-Carlo estimate of E |sum_t eps_t X_t|_inj over fresh
    completion designs and Rademacher signs.

    Each trial costs one SoS solve, so the inputs are capped (d <= 5,
    n <= 200); larger requests are refused rather than attempted.
    """
    if d > _RADEMACHER_MAX_D or n > _RADEMACHER_MAX_N:
        raise ValueError(
            f"rademacher_estimate is budgeted for d <= {_RADEMACHER_MAX_D} "
            f"and n <= {_RADEMACHER_MAX_N} (one SoS solve per trial); "
            f"got d={d}, n={n}")
    if trials < 1 or n < 1:
        raise ValueError("need trials >= 1 and n >= 1")
    vals = []
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        ms = sample_completion(d, n, rng)
        signs = rng.choice([-1.0, 1.0], size=n)
        vals.append(signed_design_norm(ms, signs, 4))
    vals = np.asarray(vals)
    return RademacherReport(mean=float(vals.mean()),
                            std=float(vals.std(ddof=1)) if trials > 1 else 0.0,
                            values=tuple(float(v) for v in vals))


# ------------------------------------------------------------- text dumps

def dataset_to_text(dataset: Dataset) -> str:
    lines = ["dataset 1", f"law {dataset.law}", f"d {dataset.d}",
             f"n {dataset.n}",
             "R none" if dataset.R is None else f"R {dataset.R:.17g}",
             "seed none" if dataset.seed is None else f"seed {dataset.seed}"]
    for m, y in zip(dataset.measurements, dataset.responses):
        if isinstance(m, Entry):
            lines.append(f"entry {m.i} {m.j} {m.k} {y:.17g}")
        else:
            flat = " ".join(f"{v:.17g}" for v in m.X.ravel())
            lines.append(f"dense {flat} {y:.17g}")
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "dataset 1":
        raise ValueError("not a dataset dump (missing 'dataset 1' header)")

    def kv(i, key):
        parts = lines[i].split()
        if parts[0] != key:
            raise ValueError(f"expected '{key}' on line {i + 1}")
        return parts[1]

    law = kv(1, "law")
    d = int(kv(2, "d"))
    n = int(kv(3, "n"))
    R = None if kv(4, "R") == "none" else float(kv(4, "R"))
    seed = None if kv(5, "seed") == "none" else int(kv(5, "seed"))
    ms, ys = [], []
    for ln in lines[6:6 + n]:
        parts = ln.split()
        if parts[0] == "entry":
            ms.append(Entry(int(parts[1]), int(parts[2]), int(parts[3])))
            ys.append(float(parts[4]))
        elif parts[0] == "dense":
            vals = [float(v) for v in parts[1:]]
            if len(vals) != d ** 3 + 1:
                raise ValueError("dense line has the wrong number of values")
            ms.append(Dense(np.array(vals[:-1]).reshape(d, d, d)))
            ys.append(vals[-1])
        else:
            raise ValueError(f"unknown measurement kind {parts[0]!r}")
    if len(ms) != n:
        raise ValueError(f"expected {n} measurement lines, found {len(ms)}")
    return Dataset(law=law, d=d, measurements=tuple(ms),
                   responses=np.array(ys), R=R, seed=seed)


def save_dataset(path, dataset: Dataset) -> None:
    with open(path, "w") as fh:
        fh.write(dataset_to_text(dataset))


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        return dataset_from_text(fh.read())
