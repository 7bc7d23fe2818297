import numpy as np
import pytest

from npgd.baselines import (CsConfig, cs_objective, default_lambda_grid, fista,
                            haar2_forward, haar2_inverse, ista, nesterov_next_t,
                            soft_threshold, tune_lambda)
from npgd.core import ComplexImage, ifft2, norm
from npgd.errors import DimensionError, ParameterError, SolverError
from npgd.operators import LinearOperator, MaskedFourierOperator
from npgd.sampling import generate_vardens_mask

from conftest import full_mask, random_complex_image


def _haar_matrix_one_level(n):
    """Independent construction of the single-level Haar analysis matrix."""
    m = np.zeros((n, n))
    inv = 1.0 / np.sqrt(2.0)
    for i in range(n // 2):
        m[i, 2 * i] = m[i, 2 * i + 1] = inv
        m[n // 2 + i, 2 * i] = inv
        m[n // 2 + i, 2 * i + 1] = -inv
    return m


def test_haar_one_level_matches_matrix_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((8, 8)).astype(np.float32)
    m = _haar_matrix_one_level(8)
    expected = m @ x @ m.T
    got = haar2_forward(x, 1)
    assert np.allclose(got, expected, atol=1e-5)


def test_haar_row_pair_formula():
    x = np.array([[3.0, 5.0], [3.0, 5.0]], np.float32)
    m = _haar_matrix_one_level(2)
    assert np.allclose(haar2_forward(x, 1), m @ x @ m.T, atol=1e-6)


def test_haar_constant_image_only_ll():
    c = np.full((16, 16), 2.5, np.float32)
    coeffs = haar2_forward(c, 2)
    ll = coeffs[:4, :4].copy()
    coeffs[:4, :4] = 0.0
    assert np.abs(coeffs).max() < 1e-5
    assert np.abs(ll).max() > 0


def test_haar_orthonormal_and_invertible():
    x = random_complex_image(16, 16, seed=2)
    c = haar2_forward(x, 2)
    assert abs(norm(c) - norm(x)) <= 1e-5 * norm(x)
    assert norm(haar2_inverse(c, 2) - x) <= 1e-5 * norm(x)


def test_haar_rejects_indivisible():
    with pytest.raises(DimensionError):
        haar2_forward(np.zeros((12, 16), np.float32), 3)


def test_soft_threshold_scalars():
    assert soft_threshold(np.array([1.5]), 1.0)[0] == pytest.approx(0.5)
    assert soft_threshold(np.array([-0.3]), 0.5)[0] == pytest.approx(0.0)


def test_soft_threshold_complex_magnitude():
    v = ComplexImage(np.array([[3.0]], np.float32), np.array([[4.0]], np.float32))
    out = soft_threshold(v, 1.0)  # magnitude 5 shrinks to 4
    assert out.re[0, 0] == pytest.approx(2.4, rel=1e-6)
    assert out.im[0, 0] == pytest.approx(3.2, rel=1e-6)


def test_soft_threshold_matches_bruteforce_prox():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        v = float(rng.uniform(-3, 3))
        lam = float(rng.uniform(0, 2))
        got = float(soft_threshold(np.array([v], np.float32), lam)[0])
        # brute-force refinement of argmin_u 0.5 (u - v)^2 + lam |u|
        lo, hi = -4.0, 4.0
        for _ in range(6):
            grid = np.linspace(lo, hi, 201)
            objective = 0.5 * (grid - v) ** 2 + lam * np.abs(grid)
            best = grid[np.argmin(objective)]
            span = (hi - lo) / 200
            lo, hi = best - 2 * span, best + 2 * span
        assert abs(got - best) < 1e-4


class _IdentityOperator(LinearOperator):
    def __init__(self, n):
        self.in_shape = (n, n)
        self.out_shape = (n, n)

    def apply(self, x):
        return x.copy()

    adjoint = apply


class _AntiAdjointOperator(_IdentityOperator):
    # deliberately wrong adjoint: the gradient step walks uphill
    def adjoint(self, y):
        return y * (-1.0)


def test_ista_trivial_operator_single_step():
    op = _IdentityOperator(8)
    y = random_complex_image(8, 8, seed=4)
    cfg = CsConfig(lam=0.05, iterations=3, solver="ista", levels=2)
    x, _ = ista(y, op, cfg)
    expected = haar2_inverse(soft_threshold(haar2_forward(y, 2), 0.05), 2)
    assert norm(x - expected) <= 1e-5 * max(norm(expected), 1.0)


def test_ista_lambda_zero_full_mask_is_zero_fill():
    op = MaskedFourierOperator(full_mask(8, 8))
    y = op.apply(random_complex_image(8, 8, seed=5))
    cfg = CsConfig(lam=0.0, iterations=2, solver="ista", levels=2)
    x, _ = ista(y, op, cfg)
    assert norm(op.apply(x) - y) <= 1e-5 * norm(y)
    assert norm(x - ifft2(y)) <= 1e-5 * norm(y)


def test_ista_objective_monotone():
    for trial in range(5):
        mask = generate_vardens_mask(16, 16, 0.4, 0.05, 3.0, trial)
        op = MaskedFourierOperator(mask)
        y = op.apply(random_complex_image(16, 16, seed=50 + trial))
        cfg = CsConfig(lam=0.02, iterations=50, solver="ista", levels=2)
        _, trace = ista(y, op, cfg)
        objs = [row[1] for row in trace]
        for a, b in zip(objs, objs[1:]):
            assert b <= a + 1e-7 * max(abs(a), 1.0)


def test_fista_momentum_first_step_is_golden_ratio():
    assert nesterov_next_t(1.0) == pytest.approx((1 + np.sqrt(5.0)) / 2)


def test_fista_not_slower_than_ista():
    for trial in range(5):
        mask = generate_vardens_mask(16, 16, 0.4, 0.05, 3.0, 100 + trial)
        op = MaskedFourierOperator(mask)
        y = op.apply(random_complex_image(16, 16, seed=150 + trial))
        ista_cfg = CsConfig(lam=0.02, iterations=50, solver="ista", levels=2)
        fista_cfg = CsConfig(lam=0.02, iterations=50, solver="fista", levels=2)
        _, tr_i = ista(y, op, ista_cfg)
        _, tr_f = fista(y, op, fista_cfg)
        assert tr_f[-1][1] <= tr_i[-1][1] * (1 + 1e-6)


def test_fista_lambda_zero_residual_vanishes():
    op = MaskedFourierOperator(full_mask(16, 16))
    y = op.apply(random_complex_image(16, 16, seed=6))
    x, _ = fista(y, op, CsConfig(lam=0.0, iterations=30, solver="fista", levels=2))
    assert norm(op.apply(x) - y) <= 1e-4 * norm(y)


def test_solver_divergence_detected():
    op = _AntiAdjointOperator(8)
    y = random_complex_image(8, 8, seed=7)
    with pytest.raises(SolverError):
        ista(y, op, CsConfig(lam=0.01, iterations=500, solver="ista", levels=2))


def test_cs_objective_terms():
    op = _IdentityOperator(8)
    x = random_complex_image(8, 8, seed=8)
    y = random_complex_image(8, 8, seed=9)
    obj, data, l1 = cs_objective(x, y, op, 0.1, 2)
    assert obj == pytest.approx(data + l1)
    assert data == pytest.approx(0.5 * norm(y - x) ** 2, rel=1e-6)


def test_tune_lambda_grid_of_one_and_duplicates():
    mask = generate_vardens_mask(16, 16, 0.4, 0.05, 3.0, 8)
    op = MaskedFourierOperator(mask)
    truth = random_complex_image(16, 16, seed=10)
    val = [(truth, op.apply(truth))]
    cfg = CsConfig(iterations=10, solver="fista", levels=2)
    lam1, _ = tune_lambda(val, op, [0.05], cfg)
    assert lam1 == pytest.approx(0.05)
    lam2, table = tune_lambda(val, op, [0.05, 0.05, 0.01, 0.01], cfg)
    lam3, _ = tune_lambda(val, op, [0.05, 0.01], cfg)
    assert lam2 == lam3
    assert len(table) == 2


def test_tune_lambda_matches_exhaustive_table():
    mask = generate_vardens_mask(16, 16, 0.3, 0.03, 3.0, 11)
    op = MaskedFourierOperator(mask)
    from npgd.phantoms import PhantomSpec, generate_dataset
    truths = generate_dataset(2, 16, PhantomSpec(), seed=12)
    val = [(x, op.apply(x)) for x in truths]
    cfg = CsConfig(iterations=20, solver="fista", levels=2)
    grid = [0.001, 0.01, 0.1]
    best, table = tune_lambda(val, op, grid, cfg)
    top = max(snr for _, snr in table)
    winners = [lam for lam, snr in table if snr == top]
    assert best == min(winners)


def test_default_lambda_grid_scales_with_peak():
    mask = generate_vardens_mask(16, 16, 0.4, 0.05, 3.0, 13)
    op = MaskedFourierOperator(mask)
    y = op.apply(random_complex_image(16, 16, seed=14))
    grid = default_lambda_grid([y], op, levels=2)
    assert len(grid) == 8
    assert grid[0] < grid[-1]
    c = haar2_forward(op.adjoint(y), 2)
    peak = float(np.sqrt(c.re.astype(np.float64) ** 2
                         + c.im.astype(np.float64) ** 2).max())
    assert grid[0] == pytest.approx(1e-4 * peak, rel=1e-9)
    assert grid[-1] == pytest.approx(1e-1 * peak, rel=1e-9)


def test_cs_config_validation():
    with pytest.raises(ParameterError):
        CsConfig(lam=-0.1).validate()
    with pytest.raises(ParameterError):
        CsConfig(iterations=0).validate()
    with pytest.raises(ParameterError):
        CsConfig(solver="admm").validate()
    CsConfig(lam=0.0).validate()  # zero threshold = plain gradient descent
