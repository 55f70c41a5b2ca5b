import json

import numpy as np
import pytest

from sageggr.errors import InputError
from sageggr.harness import (
    StudyConfig,
    contrast_cases,
    export_qq,
    run_oracle,
    run_study,
)
from sageggr.layout import CoefLayout
from sageggr.model import benchmark_model, sample, true_beta


def small_config(**kwargs):
    base = dict(p=6, q=3, n=100, reps=3, seed=11, lambda_e=0.3, workers=1)
    base.update(kwargs)
    return StudyConfig(**base)


def test_study_deterministic_bytes():
    s1 = run_study(small_config())
    s2 = run_study(small_config())
    assert json.dumps(s1.to_json_dict(), sort_keys=True) == json.dumps(
        s2.to_json_dict(), sort_keys=True
    )


def test_study_parallel_matches_serial():
    serial = run_study(small_config(workers=1))
    parallel = run_study(small_config(workers=2))
    assert json.dumps(serial.to_json_dict(), sort_keys=True) == json.dumps(
        parallel.to_json_dict(), sort_keys=True
    )


def test_study_single_rep_metrics_degenerate():
    s = run_study(small_config(reps=1))
    for c in s.coords.values():
        assert c["pre_bias_sd"] == 0.0
        assert c["cov_prob"] in (0.0, 1.0)


def test_tracked_defaults_to_signals():
    config = small_config()
    truth = true_beta(benchmark_model(config.p, config.q))
    tracked = config.resolved_tracked(truth.values)
    L = (config.p - 1) * (config.q + 1)
    # local 1-based signal positions are p and 2p-1, i.e. 0-based p-1 and
    # 2(p-1), in each of the first two nodes
    assert tracked == [
        config.p - 1,
        2 * (config.p - 1),
        L + config.p - 1,
        L + 2 * (config.p - 1),
    ]
    with pytest.raises(InputError):
        small_config(tracked=[10**6]).resolved_tracked(truth.values)


def test_metrics_match_artifacts(tmp_path):
    config = small_config(reps=4, contrasts=True)
    summary = run_study(config, artifact_dir=tmp_path)
    # recompute coverage from the serialized per-rep intervals
    reps = sorted((tmp_path / "reps").glob("rep_*.json"))
    assert len(reps) == 4
    records = [json.loads(r.read_text()) for r in reps]
    for flat, cell in summary.coords.items():
        per = [next(c for c in r["coords"] if str(c["flat"]) == flat) for r in records]
        cov = np.mean([c["lo"] <= c["truth"] <= c["hi"] for c in per])
        assert cov == pytest.approx(cell["cov_prob"])
        post = np.mean([c["post"] - c["truth"] for c in per])
        assert post == pytest.approx(cell["post_bias_mean"], abs=1e-12)
    assert (tmp_path / "summary.txt").read_text().startswith("metric")
    assert (tmp_path / "estimates.csv").read_text().splitlines()[0] == (
        "rep,flat,truth,pre,post,std,lo,hi"
    )


def test_study_failure_budget():
    # With n below the coefficient count the Gram matrix is singular, so
    # near-zero thresholds make the debias program infeasible and every
    # replication fails; the study aborts past the 5% failure budget.
    config = small_config(n=10, reps=3)
    config.tracked = [0]
    config.alpha = 1e-9
    config.gamma = 1e-9
    config.fit_max_iter = 50
    config.admm_max_iter = 2000
    with pytest.raises(Exception) as excinfo:
        run_study(config)
    assert "rep 0" in str(excinfo.value)


def test_contrast_case_layout():
    p, q = 6, 3
    layout = CoefLayout(p=p, q=q)
    cases = contrast_cases(p, layout)
    truth = true_beta(benchmark_model(p, q)).node(0)
    assert cases["I"] @ truth == pytest.approx(0.0)
    assert cases["II"] @ truth == pytest.approx(0.3)
    assert cases["III"] @ truth == pytest.approx(0.0)
    np.testing.assert_allclose(cases["IV"] @ truth, [0.3, -0.3])


def test_export_qq_shapes_and_examples():
    rng = np.random.default_rng(0)
    values = rng.normal(size=500)
    qq = export_qq(values)
    assert qq.shape == (500, 2)
    # near the diagonal for a normal sample
    central = np.abs(qq[:, 0]) < 1.5
    assert np.abs(qq[central, 0] - qq[central, 1]).max() < 0.35
    constant = export_qq(np.ones(50))
    assert np.all(constant[:, 1] == 1.0)
    assert np.all(np.diff(constant[:, 0]) > 0)
    with pytest.raises(InputError):
        export_qq(np.ones(5))


def test_run_oracle_noiseless_exact():
    data = sample(benchmark_model(4, 2), n=50, seed=3)
    layout = data.layout()
    truth = true_beta(benchmark_model(4, 2))
    # overwrite responses to be exactly the model prediction of node 0
    from sageggr.design import build_node_design

    design = build_node_design(data, 0)
    data.Z[:, 0] = design.W @ truth.node(0)
    support = np.nonzero(truth.node(0))[0]
    rows = run_oracle(data, {0: support})
    for row in rows:
        assert row["estimate"] == pytest.approx(truth.node(0)[row["coordinate"]], abs=1e-10)


def test_run_oracle_identity_design_is_column_mean():
    # With an orthonormal-scaled single-column support the estimate is the
    # normalized inner product, i.e. a per-column average.
    data = sample(benchmark_model(4, 2), n=30, seed=9)
    support = np.array([0])
    rows = run_oracle(data, {1: support})
    from sageggr.design import build_node_design

    design = build_node_design(data, 1)
    col = design.W[:, 0]
    expected = float(col @ design.z / (col @ col))
    assert rows[0]["estimate"] == pytest.approx(expected)
