import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sageggr.debias import (
    DebiasColumn,
    DebiasConfig,
    debias_node,
    default_thresholds,
    project_group_ball,
    sage_update,
    soft_threshold,
    solve_direct,
    solve_projected,
    theoretical_thresholds,
    thresholded_group_max,
)
from sageggr.design import build_node_design, eigen_factor, gram, NodeDesign
from sageggr.layout import CoefLayout
from sageggr.model import benchmark_model, sample
from sageggr.sgl import FitConfig, fit


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == pytest.approx(2.0)
    assert soft_threshold(-3.0, 1.0) == pytest.approx(-2.0)
    assert soft_threshold(0.5, 1.0) == 0.0
    np.testing.assert_allclose(
        soft_threshold(np.array([2.0, -0.3, 0.0]), 0.5), [1.5, 0.0, 0.0]
    )


def test_soft_threshold_triangle_inequality_bulk():
    # |H_{a+b}(x+y)| <= |H_a(x)| + |H_b(y)| on a large random batch
    rng = np.random.default_rng(0)
    size = 100_000
    a = rng.uniform(0.01, 2.0, size)
    b = rng.uniform(0.01, 2.0, size)
    x = rng.normal(scale=3.0, size=size)
    y = rng.normal(scale=3.0, size=size)
    lhs = np.abs(np.sign(x + y) * np.maximum(np.abs(x + y) - (a + b), 0.0))
    rhs = np.maximum(np.abs(x) - a, 0.0) + np.maximum(np.abs(y) - b, 0.0)
    assert np.all(lhs <= rhs + 1e-12)


def brute_force_project(v, alpha, gamma, layout, grid=None):
    """Numeric projection via cvxpy, used as the oracle."""
    import cvxpy as cp

    x = cp.Variable(v.size)
    constraints = []
    for h in range(layout.n_groups):
        sl = layout.group_slice(h)
        constraints.append(cp.norm2(cp.pos(cp.abs(x[sl]) - alpha)) <= gamma)
    problem = cp.Problem(cp.Minimize(cp.sum_squares(x - v)), constraints)
    problem.solve()
    return np.asarray(x.value)


def test_group_projection_matches_numeric():
    layout = CoefLayout(p=4, q=2)
    rng = np.random.default_rng(5)
    for trial in range(6):
        v = rng.normal(scale=1.5, size=layout.node_length)
        alpha = float(rng.uniform(0.05, 0.6))
        gamma = float(rng.uniform(0.05, 0.8))
        ours = project_group_ball(v, alpha, gamma, layout)
        assert thresholded_group_max(ours, alpha, layout) <= gamma + 1e-9
        reference = brute_force_project(v, alpha, gamma, layout)
        assert np.abs(ours - reference).max() < 1e-5


def test_group_projection_identity_inside():
    layout = CoefLayout(p=3, q=1)
    v = np.array([0.1, -0.2, 0.05, 0.0])
    out = project_group_ball(v, 0.3, 0.5, layout)
    np.testing.assert_array_equal(out, v)


@settings(max_examples=150, deadline=None)
@given(
    st.integers(2, 5),
    st.integers(1, 3),
    st.floats(0.0, 1.0),
    st.floats(0.01, 1.0),
    st.integers(0, 2**32 - 1),
)
def test_group_projection_convexity_properties(p, q, alpha, gamma, seed):
    # projection onto a convex set: idempotent, feasible, nonexpansive
    layout = CoefLayout(p=p, q=q)
    rng = np.random.default_rng(seed)
    v = rng.normal(scale=2.0, size=layout.node_length)
    w = rng.normal(scale=2.0, size=layout.node_length)
    pv = project_group_ball(v, alpha, gamma, layout)
    pw = project_group_ball(w, alpha, gamma, layout)
    assert thresholded_group_max(pv, alpha, layout) <= gamma + 1e-9
    np.testing.assert_allclose(
        project_group_ball(pv, alpha, gamma, layout), pv, atol=1e-12
    )
    assert np.linalg.norm(pv - pw) <= np.linalg.norm(v - w) + 1e-9


def identity_design(n, layout):
    return NodeDesign(node=0, W=np.sqrt(n) * np.eye(n), z=np.zeros(n), layout=layout)


def test_projected_identity_gram():
    # W = sqrt(n) I: the Gram matrix is the identity, so the solution is
    # the basis vector shrunk by alpha + gamma.
    layout = CoefLayout(p=5, q=1)
    n = layout.node_length  # 8
    factor = eigen_factor(identity_design(n, layout))
    config = DebiasConfig(alpha=1e-4, gamma=1e-4)
    col = solve_projected(factor, 2, config, layout)
    expected = np.zeros(n)
    expected[2] = 1.0 - 2e-4
    np.testing.assert_allclose(col.m, expected, atol=1e-6)
    assert col.variance_factor == pytest.approx(1.0, abs=1e-3)
    assert col.feasibility_slack >= -config.feas_tol


def test_projected_huge_gamma_gives_zero():
    layout = CoefLayout(p=4, q=2)
    data = sample(benchmark_model(p=4, q=2), n=20, seed=1)
    factor = eigen_factor(build_node_design(data, 0))
    col = solve_projected(factor, 0, DebiasConfig(alpha=0.1, gamma=50.0), layout)
    np.testing.assert_allclose(col.m, 0.0, atol=1e-10)
    assert col.variance_factor == pytest.approx(0.0, abs=1e-12)


def test_direct_identity_constraint_arithmetic():
    layout = CoefLayout(p=5, q=1)
    L = layout.node_length
    config = DebiasConfig(alpha=0.5, gamma=0.6)  # alpha + gamma >= 1
    col = solve_direct(np.eye(L), 1, config, layout)
    np.testing.assert_allclose(col.m, 0.0, atol=1e-9)
    assert col.variance_factor == pytest.approx(0.0, abs=1e-10)


def test_direct_identity_zero_thresholds():
    layout = CoefLayout(p=5, q=1)
    L = layout.node_length
    col = solve_direct(np.eye(L), 3, DebiasConfig(alpha=0.0, gamma=0.0), layout)
    expected = np.zeros(L)
    expected[3] = 1.0
    np.testing.assert_allclose(col.m, expected, atol=1e-7)
    assert col.variance_factor == pytest.approx(1.0, abs=1e-6)


def random_instance(n, p, q, seed):
    data = sample(benchmark_model(p=p, q=q), n=n, seed=seed)
    design = build_node_design(data, seed % p)
    return design, gram(design), eigen_factor(design)


def test_projected_vs_direct_cross_check():
    # Both directions of the lift/project equivalence on small instances.
    layout = CoefLayout(p=6, q=2)
    rng = np.random.default_rng(2)
    for seed in range(4):
        design, G, factor = random_instance(12, 6, 2, seed)
        alpha, gamma = default_thresholds(design.n)
        config = DebiasConfig(alpha=alpha, gamma=gamma)
        l = int(rng.integers(0, layout.node_length))
        proj = solve_projected(factor, l, config, layout)
        direct = solve_direct(G, l, config, layout)
        # lifted projected solution is feasible for the full-space program
        assert thresholded_group_max(G @ proj.m - _unit(layout.node_length, l), alpha, layout) <= gamma + 1e-7
        # equal objectives within solver tolerance
        assert proj.variance_factor == pytest.approx(direct.variance_factor, rel=1e-5, abs=1e-9)
        # projecting the direct solution back is feasible for the small program
        theta = factor.coef_basis.T @ direct.m
        lifted_residual = factor.coef_basis @ (factor.eigenvalues * theta)
        lifted_residual[l] -= 1.0
        assert thresholded_group_max(lifted_residual, alpha, layout) <= gamma + 1e-6


def _unit(length, index):
    e = np.zeros(length)
    e[index] = 1.0
    return e


def test_variance_factor_lower_bound():
    # variance factor >= (1 - alpha - gamma)^2 / Gram_ll whenever alpha + gamma < 1
    for seed in range(3):
        design, G, factor = random_instance(15, 5, 2, seed + 10)
        alpha, gamma = default_thresholds(design.n)
        assert alpha + gamma < 1
        config = DebiasConfig(alpha=alpha, gamma=gamma)
        for l in (0, 3, 7):
            col = solve_projected(factor, l, config, design.layout)
            bound = (1.0 - alpha - gamma) ** 2 / G[l, l]
            assert col.variance_factor >= bound - 1e-8
            assert col.feasibility_slack >= -config.feas_tol


def test_cvxpy_anchor_small_instance():
    # Independent convex solver agreement on one small instance.
    import cvxpy as cp

    layout = CoefLayout(p=3, q=1)
    rng = np.random.default_rng(3)
    W = rng.normal(size=(8, layout.node_length))
    design = NodeDesign(node=0, W=W, z=np.zeros(8), layout=layout)
    G, factor = gram(design), eigen_factor(design)
    alpha, gamma = 0.2, 0.35
    config = DebiasConfig(alpha=alpha, gamma=gamma)
    l = 1
    m = cp.Variable(layout.node_length)
    resid = G @ m - _unit(layout.node_length, l)
    constraints = [
        cp.norm2(cp.pos(cp.abs(resid[layout.group_slice(h)]) - alpha)) <= gamma
        for h in range(layout.n_groups)
    ]
    problem = cp.Problem(cp.Minimize(cp.quad_form(m, cp.psd_wrap(G))), constraints)
    problem.solve()
    ours = solve_projected(factor, l, config, layout)
    assert ours.variance_factor == pytest.approx(problem.value, rel=1e-4, abs=1e-7)


def test_sage_update_ols_identity():
    # Full-rank overdetermined case with the exact inverse Gram: the
    # correction lands exactly on least squares no matter the start.
    data = sample(benchmark_model(p=5, q=2), n=200, seed=4)
    design = build_node_design(data, 0)
    G = gram(design)
    G_inv = np.linalg.inv(G)
    result = fit(data, FitConfig(lambda_e=0.3, lambda_g=0.2))
    layout = data.layout()
    columns = {}
    for l in range(layout.node_length):
        m = G_inv[:, l]
        columns[l] = DebiasColumn(
            coordinate=l,
            m=m,
            theta=np.zeros(1),
            variance_factor=float(m @ G @ m),
            feasibility_slack=0.0,
        )
    est = sage_update(result, design, columns)
    ols, *_ = np.linalg.lstsq(design.W, design.z, rcond=None)
    np.testing.assert_allclose(est.values, ols, atol=1e-8)
    assert est.debiased.all()


def test_sage_update_zero_residual_is_noop():
    data = sample(benchmark_model(p=4, q=2), n=30, seed=8)
    design = build_node_design(data, 1)
    result = fit(data, FitConfig(lambda_e=0.2, lambda_g=0.1))
    # overwrite the response so the fitted node has zero residual
    design = NodeDesign(
        node=1,
        W=design.W,
        z=design.W @ result.beta.node(1),
        layout=design.layout,
    )
    col = DebiasColumn(
        coordinate=0,
        m=np.ones(design.layout.node_length),
        theta=np.zeros(1),
        variance_factor=1.0,
        feasibility_slack=0.0,
    )
    est = sage_update(result, design, {0: col})
    np.testing.assert_allclose(est.values, result.beta.node(1), atol=1e-12)


def test_sage_update_idempotent_noiseless():
    # Noiseless overdetermined data: one update recovers the truth, the
    # second changes nothing.
    rng = np.random.default_rng(11)
    layout = CoefLayout(p=4, q=1)
    n, L = 40, layout.node_length
    W = rng.normal(size=(n, L))
    truth = np.array([0.5, 0.0, -0.4, 0.0, 0.2, 0.0])
    design = NodeDesign(node=0, W=W, z=W @ truth, layout=layout)
    G = gram(design)
    G_inv = np.linalg.inv(G)
    columns = {
        l: DebiasColumn(
            coordinate=l,
            m=G_inv[:, l],
            theta=np.zeros(1),
            variance_factor=float(G_inv[l, l]),
            feasibility_slack=0.0,
        )
        for l in range(L)
    }

    class FakeFit:
        class beta:
            @staticmethod
            def node(j):
                return np.zeros(L)

    first = sage_update(FakeFit, design, columns)
    np.testing.assert_allclose(first.values, truth, atol=1e-10)

    class SecondFit:
        class beta:
            @staticmethod
            def node(j):
                return first.values

    second = sage_update(SecondFit, design, columns)
    assert np.abs(second.values - first.values).max() <= 1e-10


def test_debias_node_end_to_end_bias_reduction():
    # On benchmark data the corrected values move from the shrunken fit
    # toward the truth at the true-signal coordinates.
    p, q, n = 8, 3, 300
    data = sample(benchmark_model(p=p, q=q), n=n, seed=19)
    result = fit(data, FitConfig(lambda_e=0.3, lambda_g=0.3 / np.sqrt(2)))
    layout = data.layout()
    design = build_node_design(data, 0)
    factor = eigen_factor(design)
    alpha, gamma = default_thresholds(n)
    coords = [layout.index_of(0, 1, 1), layout.index_of(0, 1, 2)]
    est = debias_node(result, design, factor, coords, DebiasConfig(alpha=alpha, gamma=gamma))
    for l in coords:
        pre = result.beta.node(0)[l]
        post = est.values[l]
        assert abs(post - (-0.3)) < abs(pre - (-0.3))
        assert abs(post - (-0.3)) < 0.15


def test_threshold_helpers():
    alpha, gamma = default_thresholds(400)
    assert alpha == pytest.approx(0.05)
    assert gamma == pytest.approx(0.1)
    alpha, gamma = theoretical_thresholds(400, 30, 10, s_e=4, s_g=2, scale=1.0)
    assert alpha == pytest.approx(np.sqrt(np.log(300) / 400))
    assert gamma == pytest.approx(np.sqrt(2) * alpha)
