import math

import numpy as np
import pytest
import scipy.linalg

from proxhmc import targets
from proxhmc.prox import FistaSettings, fista_prox, svt
from proxhmc.targets import (
    DataFormatError,
    load_pima,
    logistic_target,
    make_checkerboard,
    matrix_target,
    noisy_checkerboard,
    toy_target,
)

from oracles import central_difference, grid_minimize, matrix_full_prox_cvx

PIMA_HEADER = "npreg,glu,bp,skin,bmi,ped,age,type\n"


@pytest.fixture(scope="module")
def toy():
    return toy_target(seed=0)


@pytest.fixture(scope="module")
def logistic():
    return logistic_target(load_pima())


@pytest.fixture(scope="module")
def small_matrix():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=(6, 4))
    return matrix_target(Y, 0.3, 1.7)


# --------------------------------------------------------------------- toy

def test_toy_data_shape(toy):
    y = toy.metadata["y"]
    assert y.size == 100 and np.all(np.isfinite(y))
    assert toy.dimension == 1


def test_toy_full_prox_identity_limit(toy):
    for x in (-3.0, 0.1, 2.5):
        assert abs(toy.full_prox(np.array([x]), 1e-12)[0] - x) <= 1e-9


def test_toy_full_prox_substitution():
    pot = toy_target(data=np.ones(100))
    assert pot.full_prox(np.array([0.0]), 1.0)[0] == pytest.approx(99 / 101, abs=1e-15)


def test_toy_full_prox_grid_oracle(toy):
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rng.uniform(-4, 4)
        lam = 10 ** rng.uniform(-3, 1)
        obj = lambda z: toy.value(z) + float(np.sum((z - x) ** 2)) / (2 * lam)
        ref = grid_minimize(obj, [-5.0], [5.0], n=201, levels=9)[0]
        assert abs(toy.full_prox(np.array([x]), lam)[0] - ref) <= 1e-5


def test_toy_gradient_zero_at_mean(toy):
    ybar = toy.metadata["sum_y"] / toy.metadata["n"]
    assert abs(toy.f_gradient(np.array([ybar]))[0]) <= 1e-12


def test_toy_g_prox_is_soft_threshold(toy):
    np.testing.assert_allclose(toy.g_prox(np.array([1.5]), 0.5), [1.0])
    np.testing.assert_allclose(toy.g_prox(np.array([-0.2]), 0.5), [0.0])


# ---------------------------------------------------------------- logistic

def test_logistic_gradient_at_zero(logistic):
    data = load_pima()
    expected = data.X.T @ (0.5 - data.y)
    np.testing.assert_allclose(logistic.f_gradient(np.zeros(8)), expected, rtol=1e-12)


def test_logistic_value_at_zero(logistic):
    assert logistic.f_value(np.zeros(8)) == pytest.approx(200 * math.log(2), rel=1e-14)


def test_logistic_lipschitz(logistic):
    X = load_pima().X
    assert logistic.f_lipschitz == pytest.approx(np.linalg.eigvalsh(X.T @ X).max() / 4)


def test_logistic_prox_of_g_is_scaled_soft_threshold():
    pot = logistic_target(load_pima(alpha=2.0))
    b = np.linspace(-1, 1, 8)
    np.testing.assert_allclose(pot.g_prox(b, 0.25), np.sign(b) * np.maximum(np.abs(b) - 0.5, 0))


def test_logistic_dimension_mismatch():
    with pytest.raises(ValueError):
        targets.LogisticTarget(X=np.ones((3, 2)), y=np.ones(4))


def test_logistic_full_prox_matches_tighter_solve(logistic):
    # the target's own FISTA run against a far stricter solve of the same problem
    rng = np.random.default_rng(5)
    strict = FistaSettings(max_iterations=100_000, tolerance=1e-13)
    for _ in range(10):
        b = rng.normal(0, 1, 8)
        ref = fista_prox(logistic.f_value_grad, logistic.g_prox, b, 1.0, strict,
                         lipschitz=logistic.f_lipschitz).x
        np.testing.assert_allclose(logistic.full_prox(b, 1.0), ref, atol=1e-5)
    assert logistic.stats["fista_calls"] >= 10


# ------------------------------------------------------------------ matrix

def test_matrix_gradient_zero_at_observation(small_matrix):
    Y = small_matrix.metadata["Y"]
    assert np.array_equal(small_matrix.f_gradient(Y.ravel()), np.zeros(24))


def test_matrix_full_prox_large_lambda_limit(small_matrix):
    Y = small_matrix.metadata["Y"]
    X = np.random.default_rng(6).normal(size=Y.shape)
    out = small_matrix.full_prox(X.ravel(), 1e6).reshape(Y.shape)
    assert np.linalg.norm(out - svt(Y, 1.7 * 0.3)) <= 1e-4


def test_matrix_full_prox_conic_oracle(small_matrix):
    Y = small_matrix.metadata["Y"]
    rng = np.random.default_rng(7)
    for _ in range(3):
        X = rng.normal(size=Y.shape)
        ref = matrix_full_prox_cvx(X, Y, 0.3, 1.7, 1.0)
        out = small_matrix.full_prox(X.ravel(), 1.0).reshape(Y.shape)
        assert np.linalg.norm(out - ref) <= 1e-3


def test_matrix_g_value_matches_reference_svd(small_matrix):
    X = np.random.default_rng(8).normal(size=(6, 4))
    s = scipy.linalg.svd(X, compute_uv=False, lapack_driver="gesvd")
    assert small_matrix.g_value(X.ravel()) == pytest.approx(1.7 * s.sum(), abs=1e-8)


def test_matrix_combined_value_and_gradient(small_matrix):
    x = np.random.default_rng(9).normal(size=24)
    u, g = small_matrix.value_and_smoothed_gradient(x, 0.05)
    assert u == pytest.approx(small_matrix.value(x))
    np.testing.assert_allclose(g, small_matrix.smoothed_gradient(x, 0.05), atol=1e-10)


def test_matrix_shape_mismatch(small_matrix):
    with pytest.raises(ValueError):
        small_matrix.f_value(np.zeros(10))
    with pytest.raises(ValueError):
        matrix_target(np.zeros(5), 0.1, 1.0)
    with pytest.raises(ValueError):
        matrix_target(np.zeros((2, 2)), -0.1, 1.0)


# ------------------------------------------------------- shared invariants

def _all_targets():
    Xt, Y = noisy_checkerboard(8, 2, 0.05, seed=1)
    return {
        "toy": toy_target(seed=2),
        "logistic": logistic_target(load_pima()),
        "lowrank": matrix_target(Y, 0.05, 1.15 / 0.05, X_true=Xt),
    }


@pytest.mark.parametrize("name", ["toy", "logistic", "lowrank"])
def test_gradient_matches_finite_differences(name):
    pot = _all_targets()[name]
    rng = np.random.default_rng(10)
    for _ in range(10):
        x = rng.normal(0, 0.5, pot.dimension)
        fd = central_difference(pot.f_value, x, h=1e-6)
        g = pot.f_gradient(x)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1.0)


@pytest.mark.parametrize("name", ["toy", "lowrank"])
def test_closed_form_full_prox_agrees_with_fista(name):
    pot = _all_targets()[name]
    rng = np.random.default_rng(11)
    strict = FistaSettings(max_iterations=100_000, tolerance=1e-13)
    for _ in range(10):
        x = rng.normal(0, 1, pot.dimension)
        lam = 10 ** rng.uniform(-2, 0)
        ref = fista_prox(pot.f_value_grad, pot.g_prox, x, lam, strict,
                         lipschitz=pot.f_lipschitz).x
        assert np.linalg.norm(pot.full_prox(x, lam) - ref) <= 1e-5


@pytest.mark.parametrize("name", ["toy", "logistic", "lowrank"])
def test_g_prox_nonexpansive(name):
    pot = _all_targets()[name]
    rng = np.random.default_rng(12)
    for _ in range(20):
        x, y = rng.normal(0, 2, (2, pot.dimension))
        lam = 10 ** rng.uniform(-3, 0)
        assert np.linalg.norm(pot.g_prox(x, lam) - pot.g_prox(y, lam)) <= np.linalg.norm(x - y) + 1e-12


# ------------------------------------------------------------- checkerboard

def test_checkerboard_smallest():
    np.testing.assert_array_equal(make_checkerboard(2, 1), [[0, 1], [1, 0]])


def test_checkerboard_rank_and_values():
    C = make_checkerboard(64, 8)
    assert set(np.unique(C)) == {0.0, 1.0}
    assert np.linalg.matrix_rank(C) == 2


def test_checkerboard_block_must_divide():
    with pytest.raises(ValueError):
        make_checkerboard(64, 7)


def test_noise_level():
    X, Y = noisy_checkerboard(64, 8, 0.01, seed=3)
    assert np.sum((Y - X) ** 2) / 4096 == pytest.approx(0.01, rel=0.2)


# -------------------------------------------------------------------- Pima

def test_bundled_pima_loads():
    data = load_pima()
    assert data.n == 200 and data.d == 8
    assert np.all(data.X[:, 0] == 1.0)
    assert set(np.unique(data.y)) == {0.0, 1.0}


def test_pima_standardization():
    Z = load_pima().X[:, 1:]
    assert np.all(np.abs(Z.mean(axis=0)) <= 1e-12)
    np.testing.assert_allclose(Z.var(axis=0), 1.0, atol=1e-12)


def test_pima_original_scale_roundtrip():
    data = load_pima()
    beta = np.random.default_rng(13).normal(size=8)
    raw = data.to_original_scale(beta)
    eta_std = data.X @ beta
    Xraw = data.X[:, 1:] * data.scale + data.center
    np.testing.assert_allclose(raw[0] + Xraw @ raw[1:], eta_std, atol=1e-10)


def _write(tmp_path, rows, header=PIMA_HEADER):
    path = tmp_path / "pima.csv"
    path.write_text(header + "".join(rows))
    return path


def _rows(n=30, label=lambda i: "Yes" if i % 3 == 0 else "No"):
    rng = np.random.default_rng(14)
    return [",".join(f"{v:.3f}" for v in rng.normal(size=7)) + f",{label(i)}\n"
            for i in range(1, n + 1)]


def test_pima_non_binary_label_names_row(tmp_path):
    rows = _rows(label=lambda i: "maybe" if i == 17 else "No" if i % 2 else "Yes")
    with pytest.raises(DataFormatError, match=r"row 17\b.*'maybe'"):
        load_pima(_write(tmp_path, rows))


def test_pima_malformed_row(tmp_path):
    rows = _rows()
    rows[4] = "1,2,3\n"
    with pytest.raises(DataFormatError, match="row 5"):
        load_pima(_write(tmp_path, rows))


def test_pima_non_numeric(tmp_path):
    rows = _rows()
    rows[2] = "a,2,3,4,5,6,7,No\n"
    with pytest.raises(DataFormatError, match="row 3"):
        load_pima(_write(tmp_path, rows))


def test_pima_missing_file(tmp_path):
    missing = tmp_path / "nope.csv"
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_pima(missing)


def test_pima_numeric_labels(tmp_path):
    rows = _rows(label=lambda i: str(i % 2))
    data = load_pima(_write(tmp_path, rows))
    assert data.n == 30 and data.y.sum() == 15
