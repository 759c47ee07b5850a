"""Tests for sampling laws, response models, and population quantities."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from sostensor import measurements as ms
from sostensor.tensors import outer3, tensor_inner


def _teacher(d, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((d, d, d))


# ---------------------------------------------------------------- sampling

def test_sample_completion_deterministic():
    a = ms.sample_completion(3, 20, 7)
    b = ms.sample_completion(3, 20, 7)
    assert a == b
    assert len(a) == 20
    assert all(0 <= m.i < 3 and 0 <= m.j < 3 and 0 <= m.k < 3 for m in a)
    assert ms.sample_completion(3, 0, 7) == ()


def test_sample_gaussian_shapes():
    a = ms.sample_gaussian(2, 5, 11)
    b = ms.sample_gaussian(2, 5, 11)
    assert len(a) == 5
    for ma, mb in zip(a, b):
        assert ma.X.shape == (2, 2, 2)
        assert np.array_equal(ma.X, mb.X)


def test_sample_rejects_bad_sizes():
    with pytest.raises(ValueError):
        ms.sample_completion(0, 5, 1)
    with pytest.raises(ValueError):
        ms.sample_gaussian(2, -1, 1)


# ---------------------------------------------------------------- respond

def test_respond_noiseless_entry():
    T = _teacher(2)
    model = ms.WellSpecifiedTeacher(teacher=T, noise_std=0.0)
    y = ms.respond(model, ms.Entry(1, 0, 1), 0)
    assert y == T[1, 0, 1]


def test_respond_clips():
    T = np.full((2, 2, 2), 3.0)
    model = ms.WellSpecifiedTeacher(teacher=T, noise_std=0.0, clip=1.0)
    assert ms.respond(model, ms.Entry(0, 0, 0), 0) == 1.0


def test_respond_dense_inner_product():
    T = _teacher(2, seed=1)
    X = _teacher(2, seed=2)
    model = ms.WellSpecifiedTeacher(teacher=T)
    y = ms.respond(model, ms.Dense(X), 0)
    assert y == pytest.approx(tensor_inner(T, X))


def test_respond_lookup_reads_mean():
    means = _teacher(2, seed=3)
    model = ms.LookupTable(means=means, variances=0.5)
    # the draw seed is irrelevant: lookup responses are the means
    assert ms.respond(model, ms.Entry(0, 1, 0), 123) == means[0, 1, 0]
    with pytest.raises(ms.UnsupportedModelError):
        ms.respond(model, ms.Dense(np.zeros((2, 2, 2))), 0)


def test_response_model_validation():
    with pytest.raises(ValueError):
        ms.WellSpecifiedTeacher(teacher=np.zeros((2, 2, 2)), noise_std=-1.0)
    with pytest.raises(ValueError):
        ms.WellSpecifiedTeacher(teacher=np.zeros((2, 2, 2)), clip=0.0)
    with pytest.raises(ValueError):
        ms.LookupTable(means=np.zeros((2, 2, 2)), variances=-0.1)


# ---------------------------------------------------------------- dataset

def test_dataset_validation():
    good = ms.Dataset(law="completion", d=2,
                      measurements=(ms.Entry(0, 0, 0),),
                      responses=[0.5], R=1.0)
    assert good.n == 1
    with pytest.raises(ValueError):
        ms.Dataset(law="completion", d=2, measurements=(ms.Entry(0, 0, 2),),
                   responses=[0.5])
    with pytest.raises(ValueError):
        ms.Dataset(law="completion", d=2, measurements=(ms.Entry(0, 0, 0),),
                   responses=[1.5], R=1.0)
    with pytest.raises(ValueError):
        ms.Dataset(law="gaussian", d=2, measurements=(ms.Entry(0, 0, 0),),
                   responses=[0.5])
    with pytest.raises(ValueError):
        ms.Dataset(law="poisson", d=2, measurements=(), responses=[])
    with pytest.raises(ValueError):
        ms.Dataset(law="completion", d=2, measurements=(ms.Entry(0, 0, 0),),
                   responses=[0.1], R=-1.0)


def test_build_dataset_deterministic_and_bounded():
    T = _teacher(3, seed=4)
    pop = ms.PopulationModel(
        law="completion",
        response=ms.WellSpecifiedTeacher(teacher=T, noise_std=0.4, clip=1.0))
    d1 = ms.build_dataset(pop, 50, 9)
    d2 = ms.build_dataset(pop, 50, 9)
    assert d1.measurements == d2.measurements
    assert np.array_equal(d1.responses, d2.responses)
    assert d1.R == 1.0 and d1.seed == 9
    assert np.abs(d1.responses).max() <= 1.0


def test_build_dataset_gaussian():
    T = _teacher(2, seed=5)
    pop = ms.PopulationModel(law="gaussian",
                             response=ms.WellSpecifiedTeacher(teacher=T,
                                                              noise_std=0.1))
    data = ms.build_dataset(pop, 8, 3)
    assert data.law == "gaussian" and data.R is None and data.n == 8


# ------------------------------------------------------------- linear maps

def test_apply_design_matches_loop():
    T = _teacher(3, seed=6)
    pop = ms.PopulationModel(law="completion",
                             response=ms.WellSpecifiedTeacher(teacher=T))
    data = ms.build_dataset(pop, 30, 1)
    got = ms.apply_design(data, T)
    want = np.array([T[m.i, m.j, m.k] for m in data.measurements])
    assert np.array_equal(got, want)
    assert np.array_equal(got, data.responses)  # noiseless, unclipped


def test_adjoint_identity():
    T = _teacher(2, seed=7)
    pop = ms.PopulationModel(law="gaussian",
                             response=ms.WellSpecifiedTeacher(teacher=T))
    data = ms.build_dataset(pop, 12, 2)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(12)
    lhs = ms.apply_design(data, T) @ v
    rhs = tensor_inner(T, ms.design_adjoint(data, v))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_empty_dataset_maps():
    data = ms.Dataset(law="completion", d=2, measurements=(), responses=[])
    assert ms.apply_design(data, np.zeros((2, 2, 2))).size == 0
    assert np.array_equal(ms.design_adjoint(data, []), np.zeros((2, 2, 2)))


# --------------------------------------------------------- censored moments

def _censored_oracle(mu, sigma, R):
    """Direct numerical integration of the clipped-normal moments."""
    lo = norm.cdf((-R - mu) / sigma)
    hi = 1.0 - norm.cdf((R - mu) / sigma)
    m_int = quad(lambda y: y * norm.pdf(y, mu, sigma), -R, R, epsabs=1e-13)[0]
    s_int = quad(lambda y: y * y * norm.pdf(y, mu, sigma), -R, R, epsabs=1e-13)[0]
    mean = -R * lo + R * hi + m_int
    return mean, R * R * (lo + hi) + s_int - mean ** 2


def test_censored_moments_against_quadrature():
    for mu, sigma, R in [(0.3, 0.5, 1.0), (1.4, 0.2, 1.0), (-0.9, 0.7, 1.2)]:
        m, v = ms.censored_normal_moments(np.array(mu), sigma, R)
        om, ov = _censored_oracle(mu, sigma, R)
        assert float(m) == pytest.approx(om, abs=1e-10)
        assert float(v) == pytest.approx(ov, abs=1e-10)


def test_censored_moments_frozen_values():
    # pinned from the quadrature oracle above
    m, v = ms.censored_normal_moments(np.array(0.3), 0.5, 1.0)
    assert float(m) == pytest.approx(0.282397868832, abs=1e-9)
    assert float(v) == pytest.approx(0.214550330974, abs=1e-9)
    m, v = ms.censored_normal_moments(np.array(0.0), 1.0, 1.0)
    assert float(m) == pytest.approx(0.0, abs=1e-12)
    assert float(v) == pytest.approx(0.516058550962, abs=1e-9)


def test_censored_moments_degenerate_sigma():
    m, v = ms.censored_normal_moments(np.array([0.4, 2.0, -3.0]), 0.0, 1.0)
    assert np.array_equal(m, [0.4, 1.0, -1.0])
    assert np.array_equal(v, np.zeros(3))


# --------------------------------------------------------- population risk

def test_population_risk_completion_unclipped():
    T = _teacher(2, seed=8)
    Tstar = _teacher(2, seed=9)
    pop = ms.PopulationModel(
        law="completion",
        response=ms.WellSpecifiedTeacher(teacher=Tstar, noise_std=0.3))
    want = np.mean((T - Tstar) ** 2) + 0.09
    assert ms.population_risk(pop, T) == pytest.approx(want, rel=1e-12)


def test_population_risk_completion_clipped():
    Tstar = _teacher(2, seed=10)
    pop = ms.PopulationModel(
        law="completion",
        response=ms.WellSpecifiedTeacher(teacher=Tstar, noise_std=0.5, clip=1.0))
    mean, var = ms.censored_normal_moments(Tstar, 0.5, 1.0)
    T = np.zeros((2, 2, 2))
    want = float(np.mean(mean ** 2 + var))
    assert ms.population_risk(pop, T) == pytest.approx(want, rel=1e-12)


def test_population_risk_lookup():
    means = _teacher(2, seed=11)
    pop = ms.PopulationModel(law="completion",
                             response=ms.LookupTable(means=means, variances=0.2))
    assert ms.population_risk(pop, means) == pytest.approx(0.2, rel=1e-12)


def test_population_risk_gaussian():
    Tstar = _teacher(2, seed=12)
    pop = ms.PopulationModel(law="gaussian",
                             response=ms.WellSpecifiedTeacher(teacher=Tstar,
                                                              noise_std=0.1))
    T = Tstar + 0.5
    want = 0.25 * 8 + 0.01
    assert ms.population_risk(pop, T) == pytest.approx(want, rel=1e-10)
    assert ms.excess_population_risk(pop, T, Tstar) == pytest.approx(2.0, rel=1e-9)


def test_population_risk_gaussian_unsupported():
    Tstar = _teacher(2, seed=13)
    clipped = ms.PopulationModel(
        law="gaussian",
        response=ms.WellSpecifiedTeacher(teacher=Tstar, noise_std=0.1, clip=1.0))
    with pytest.raises(ms.UnsupportedModelError):
        ms.population_risk(clipped, Tstar)
    lookup = ms.PopulationModel(law="gaussian",
                                response=ms.LookupTable(means=Tstar))
    with pytest.raises(ms.UnsupportedModelError):
        ms.population_risk(lookup, Tstar)


def test_misspecified_is_a_teacher_model():
    Tstar = _teacher(2, seed=14)
    model = ms.MisspecifiedTeacher(teacher=Tstar, noise_std=0.2)
    pop = ms.PopulationModel(law="gaussian", response=model)
    assert ms.population_risk(pop, Tstar) == pytest.approx(0.04, rel=1e-12)


# ----------------------------------------------------------------- probes

def test_re_probe_exact_design():
    # every entry observed exactly once: empirical form equals the
    # population form, so the defect vanishes and the ratio is one
    d = 2
    entries = tuple(ms.Entry(i, j, k) for i in range(d) for j in range(d)
                    for k in range(d))
    data = ms.Dataset(law="completion", d=d, measurements=entries,
                      responses=np.zeros(d ** 3))
    pop = ms.PopulationModel(law="completion",
                             response=ms.WellSpecifiedTeacher(
                                 teacher=np.zeros((d, d, d))))
    rng = np.random.default_rng(15)
    report = ms.re_probe(data, pop, [rng.standard_normal((d, d, d))
                                     for _ in range(3)])
    assert report.gamma_hat == 0.0
    assert report.n == 8
    for probe in report.probes:
        assert probe.ratio == pytest.approx(1.0, rel=1e-12)
        assert probe.slack == 0.0


def test_re_probe_detects_missing_mass():
    # a design that never touches entry (0,0,0) leaves the population
    # form unmatched along that direction
    data = ms.Dataset(law="completion", d=2,
                      measurements=(ms.Entry(1, 1, 1),) * 4,
                      responses=np.zeros(4))
    pop = ms.PopulationModel(law="completion",
                             response=ms.WellSpecifiedTeacher(
                                 teacher=np.zeros((2, 2, 2))))
    D = np.zeros((2, 2, 2))
    D[0, 0, 0] = 1.0
    report = ms.re_probe(data, pop, [D])
    assert report.gamma_hat == pytest.approx(1.0 / 8.0)
    assert report.probes[0].emp_form == 0.0


def test_re_probe_validation():
    data = ms.Dataset(law="completion", d=2,
                      measurements=(ms.Entry(0, 0, 0),), responses=[0.0])
    pop = ms.PopulationModel(law="completion",
                             response=ms.WellSpecifiedTeacher(
                                 teacher=np.zeros((2, 2, 2))))
    with pytest.raises(ValueError):
        ms.re_probe(data, pop, [])
    with pytest.raises(ValueError):
        ms.re_probe(data, pop, [np.zeros((2, 2, 2))])


def test_signed_design_norm_all_ones():
    # d = 1: the summed design is the 1x1x1 tensor [n], norm n
    meas = (ms.Entry(0, 0, 0),) * 3
    val = ms.signed_design_norm(meas, np.ones(3))
    assert val == pytest.approx(3.0, abs=1e-5)


def test_rademacher_budget_guard():
    with pytest.raises(ValueError, match="budget"):
        ms.rademacher_estimate(6, 10, 1, 0)
    with pytest.raises(ValueError, match="budget"):
        ms.rademacher_estimate(3, 201, 1, 0)


def test_rademacher_estimate_deterministic():
    a = ms.rademacher_estimate(2, 6, 3, 5)
    b = ms.rademacher_estimate(2, 6, 3, 5)
    assert a.values == b.values
    assert a.mean > 0
    assert len(a.values) == 3


# ------------------------------------------------------------- text dumps

def test_dataset_roundtrip_completion(tmp_path):
    T = _teacher(2, seed=16)
    pop = ms.PopulationModel(
        law="completion",
        response=ms.WellSpecifiedTeacher(teacher=T, noise_std=0.3, clip=2.0))
    data = ms.build_dataset(pop, 10, 4)
    path = tmp_path / "data.txt"
    ms.save_dataset(path, data)
    back = ms.load_dataset(path)
    assert back.law == data.law and back.d == data.d
    assert back.R == data.R and back.seed == data.seed
    assert back.measurements == data.measurements
    assert np.array_equal(back.responses, data.responses)


def test_dataset_roundtrip_gaussian():
    T = _teacher(2, seed=17)
    pop = ms.PopulationModel(law="gaussian",
                             response=ms.WellSpecifiedTeacher(teacher=T,
                                                              noise_std=0.2))
    data = ms.build_dataset(pop, 4, 8)
    back = ms.dataset_from_text(ms.dataset_to_text(data))
    assert np.array_equal(back.responses, data.responses)
    for ma, mb in zip(back.measurements, data.measurements):
        assert np.array_equal(ma.X, mb.X)


def test_dataset_text_errors():
    with pytest.raises(ValueError):
        ms.dataset_from_text("not a dataset\n")
    text = ("dataset 1\nlaw gaussian\nd 2\nn 1\nR none\nseed none\n"
            "dense 1 2 3 0.5\n")
    with pytest.raises(ValueError):
        ms.dataset_from_text(text)
