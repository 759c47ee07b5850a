import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sostensor import tensors as tc


def test_outer3_indicator():
    e1 = np.array([1.0, 0.0])
    T = tc.outer3(e1, e1, e1)
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0] = 1.0
    assert np.array_equal(T, expected)


def test_outer3_zero_vector_annihilates():
    u = np.zeros(3)
    v = np.ones(3)
    w = np.ones(3)
    assert np.array_equal(tc.outer3(u, v, w), np.zeros((3, 3, 3)))


def test_outer3_direct_product_entry():
    u = np.array([1.0, 2.0])
    v = np.array([1.0, 0.0])
    w = np.array([0.0, 1.0])
    T = tc.outer3(u, v, w)
    # second u-coordinate, first v-coordinate, second w-coordinate
    assert T[1, 0, 1] == 2.0


def test_outer3_dimension_mismatch():
    with pytest.raises(ValueError):
        tc.outer3(np.ones(2), np.ones(3), np.ones(2))


def test_random_orthogonal_invariants():
    t = tc.random_orthogonal(4, 2, [2.0, 1.0], seed=0)
    for F in (t.U, t.V, t.W):
        assert np.max(np.abs(F.T @ F - np.eye(2))) <= 1e-10
    dense = t.densify()
    manual = 2.0 * tc.outer3(t.U[:, 0], t.V[:, 0], t.W[:, 0]) + tc.outer3(
        t.U[:, 1], t.V[:, 1], t.W[:, 1]
    )
    assert np.max(np.abs(dense - manual)) <= 1e-12


def test_random_orthogonal_square():
    t = tc.random_orthogonal(3, 3, [1.0, 1.0, 1.0], seed=5)
    assert np.max(np.abs(t.U @ t.U.T - np.eye(3))) <= 1e-10


def test_random_orthogonal_deterministic():
    a = tc.random_orthogonal(5, 3, [1.0, -2.0, 0.5], seed=123)
    b = tc.random_orthogonal(5, 3, [1.0, -2.0, 0.5], seed=123)
    assert np.array_equal(a.densify(), b.densify())


def test_random_orthogonal_rank_too_large():
    with pytest.raises(ValueError):
        tc.random_orthogonal(2, 3, [1.0, 1.0, 1.0], seed=0)


def test_flatten_rank_one():
    rng = np.random.default_rng(7)
    u, v, w = rng.standard_normal((3, 4))
    T = tc.outer3(u, v, w)
    M = tc.flatten(T, 1)
    assert np.allclose(M, np.outer(u, np.kron(v, w)))


def test_flatten_column_convention():
    d = 3
    T = np.arange(27, dtype=float).reshape(d, d, d)
    M1 = tc.flatten(T, 1)
    M2 = tc.flatten(T, 2)
    M3 = tc.flatten(T, 3)
    for i in range(d):
        for j in range(d):
            for k in range(d):
                assert M1[i, j * d + k] == T[i, j, k]
                assert M2[j, i * d + k] == T[i, j, k]
                assert M3[k, i * d + j] == T[i, j, k]


def test_flatten_preserves_frobenius():
    rng = np.random.default_rng(11)
    T = rng.standard_normal((5, 5, 5))
    for mode in (1, 2, 3):
        assert np.isclose(np.linalg.norm(tc.flatten(T, mode)), tc.frobenius(T))


def test_flatten_rank_matches_multilinear_rank():
    # independent check: build each flattening by explicit loops and take
    # numpy's matrix_rank, then compare against the library answer
    t = tc.random_orthogonal(5, 2, [1.0, 3.0], seed=21)
    T = t.densify()
    d = 5
    oracle = []
    for mode in (1, 2, 3):
        M = np.zeros((d, d * d))
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    if mode == 1:
                        M[i, j * d + k] = T[i, j, k]
                    elif mode == 2:
                        M[j, i * d + k] = T[i, j, k]
                    else:
                        M[k, i * d + j] = T[i, j, k]
        oracle.append(int(np.linalg.matrix_rank(M, tol=1e-9)))
    assert tuple(oracle) == (2, 2, 2)
    assert tc.multilinear_rank(T) == (2, 2, 2)


def test_multilinear_rank_zero_tensor():
    assert tc.multilinear_rank(np.zeros((4, 4, 4))) == (0, 0, 0)


def test_multilinear_rank_diagonal():
    e = np.eye(3)
    T = tc.outer3(e[0], e[0], e[0]) + tc.outer3(e[1], e[1], e[1])
    assert tc.multilinear_rank(T) == (2, 2, 2)


def _random_pair(seed, d=4, r=2):
    t = tc.random_orthogonal(d, r, np.linspace(1.0, 2.0, r), seed=seed)
    proj = tc.SubspaceProjector.from_orthogonal(t)
    rng = np.random.default_rng(seed + 1000)
    X = rng.standard_normal((d, d, d))
    return t, proj, X


def test_projection_completeness_many():
    worst = 0.0
    for seed in range(100):
        _, proj, X = _random_pair(seed)
        resid = tc.project_parallel(proj, X) + tc.project_perp(proj, X) - X
        worst = max(worst, np.linalg.norm(resid) / np.linalg.norm(X))
    assert worst <= 1e-8


def test_projection_idempotent():
    for seed in range(10):
        _, proj, X = _random_pair(seed)
        once = tc.project_perp(proj, X)
        twice = tc.project_perp(proj, once)
        assert np.linalg.norm(twice - once) <= 1e-8 * max(np.linalg.norm(once), 1.0)


def test_projection_ranges_orthogonal():
    for seed in range(10):
        _, proj, X = _random_pair(seed)
        rng = np.random.default_rng(seed + 5000)
        Y = rng.standard_normal(X.shape)
        ip = tc.tensor_inner(tc.project_parallel(proj, X), tc.project_perp(proj, Y))
        assert abs(ip) <= 1e-8 * np.linalg.norm(X) * np.linalg.norm(Y)


def test_perp_kills_two_inrange_factors():
    # for each pair of modes, put those two factors inside the spans and
    # leave the third arbitrary; the perp part must vanish
    t, proj, _ = _random_pair(3)
    rng = np.random.default_rng(99)
    z = rng.standard_normal(t.d)
    u_in = t.U @ rng.standard_normal(t.r)
    v_in = t.V @ rng.standard_normal(t.r)
    w_in = t.W @ rng.standard_normal(t.r)
    cases = [
        tc.outer3(u_in, v_in, z),
        tc.outer3(u_in, z, w_in),
        tc.outer3(z, v_in, w_in),
    ]
    for X in cases:
        assert np.max(np.abs(tc.project_perp(proj, X))) <= 1e-10


def test_all_complement_factors_land_in_perp():
    t, proj, _ = _random_pair(8)
    rng = np.random.default_rng(17)
    a = proj.P_Uc @ rng.standard_normal(t.d)
    b = proj.P_Vc @ rng.standard_normal(t.d)
    c = proj.P_Wc @ rng.standard_normal(t.d)
    X = tc.outer3(a, b, c)
    perp = tc.project_perp(proj, X)
    par = tc.project_parallel(proj, X)
    assert np.max(np.abs(perp - X)) <= 1e-9
    assert np.max(np.abs(par)) <= 1e-9


def test_matrix_norms_identity():
    assert np.isclose(tc.matrix_nuclear(np.eye(3)), 3.0)
    assert np.isclose(tc.matrix_op(np.eye(3)), 1.0)


def test_matrix_norms_rank_one():
    u = np.array([0.6, 0.8])
    v = np.array([1.0, 0.0, 0.0])
    assert np.isclose(tc.matrix_nuclear(np.outer(u, v)), 1.0)


def test_matrix_nuclear_dominates_op():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((5, 5))
    assert tc.matrix_nuclear(M) >= tc.matrix_op(M)


def test_as_tensor3_rejects_nonfinite():
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        tc.as_tensor3(T)


def test_as_tensor3_rejects_noncubic():
    with pytest.raises(ValueError):
        tc.as_tensor3(np.zeros((2, 3, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-1e12, max_value=1e12,
                          allow_nan=False, allow_infinity=False),
                min_size=8, max_size=8))
def test_text_round_trip_exact(vals):
    T = np.array(vals).reshape(2, 2, 2)
    back = tc.tensor_from_text(tc.tensor_to_text(T))
    assert np.array_equal(back, T)


def test_text_round_trip_awkward_values():
    T = np.array([1.0 / 3.0, -2.718281828459045e-15, 1e300, -0.0,
                  5.0, 1234567890.123456, 7e-200, 3.14]).reshape(2, 2, 2)
    back = tc.tensor_from_text(tc.tensor_to_text(T))
    assert np.array_equal(back, T)


def test_save_load_file(tmp_path):
    rng = np.random.default_rng(4)
    T = rng.standard_normal((3, 3, 3))
    path = tmp_path / "t.txt"
    tc.save_tensor(path, T)
    assert np.array_equal(tc.load_tensor(path), T)


def test_text_wrong_count_rejected():
    with pytest.raises(ValueError):
        tc.tensor_from_text("2\n1 2 3\n")


def test_unflatten_inverts_flatten():
    rng = np.random.default_rng(97)
    T = rng.standard_normal((3, 3, 3))
    for mode in (1, 2, 3):
        assert np.array_equal(tc.unflatten(tc.flatten(T, mode), mode), T)
    with pytest.raises(ValueError):
        tc.unflatten(np.zeros((3, 8)), 1)
    with pytest.raises(ValueError):
        tc.unflatten(np.zeros((2, 4)), 4)
