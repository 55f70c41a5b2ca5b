"""Replication engine for the simulation studies and the timing benchmark.

A study draws independent datasets from the benchmark model, fits the
joint penalized regression, corrects the tracked coordinates, and
aggregates bias, standardized spread, interval coverage, and
rejection-rate metrics, together with an oracle block (least squares on
the true support) and an optional linear-contrast suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from numpy.random import SeedSequence
from scipy.special import ndtri

from .debias import (
    DebiasConfig,
    debias_node,
    default_thresholds,
    solve_direct,
    solve_projected,
)
from .design import build_node_design, eigen_factor, gram
from .errors import InputError, SageError
from .inference import (
    confidence_interval,
    contrast_infer,
    estimate_noise,
    restricted_ols,
    standard_error,
    wald_test,
)
from .model import benchmark_model, sample, true_beta
from .sgl import DEFAULT_GROUP_RATIO, FitConfig, cross_validate, fit_designs


@dataclass
class StudyConfig:
    """Configuration of one replication study."""

    p: int = 30
    q: int = 10
    n: int = 400
    reps: int = 100
    seed: int = 0
    lambda_e: float = 0.3
    lambda_g: float | None = None  # None: lambda_e / sqrt(2)
    cv_grid: list | None = None  # when set, pick lambda_e per replication
    alpha: float | None = None  # None: 1 / sqrt(n)
    gamma: float | None = None  # None: 2 / sqrt(n)
    level: float = 0.95
    tracked: list[int] | None = None  # global 0-based coordinates; None: true signals
    contrasts: bool = False
    oracle: bool = True
    workers: int | None = None
    fit_max_iter: int = 20000
    fit_tol: float = 1e-7
    fit_kkt_tol: float = 1e-4
    admm_eps: float = 1e-7
    admm_max_iter: int = 50000

    def __post_init__(self):
        if self.reps < 1:
            raise InputError("reps must be >= 1")
        if not 0 < self.level < 1:
            raise InputError("level must lie in (0, 1)")

    def resolved_thresholds(self) -> tuple[float, float]:
        default_a, default_g = default_thresholds(self.n)
        return (
            self.alpha if self.alpha is not None else default_a,
            self.gamma if self.gamma is not None else default_g,
        )

    def resolved_tracked(self, truth_values: np.ndarray) -> list[int]:
        if self.tracked is not None:
            limit = truth_values.shape[0]
            for c in self.tracked:
                if not 0 <= c < limit:
                    raise InputError(f"tracked coordinate {c} out of range 0..{limit - 1}")
            return [int(c) for c in self.tracked]
        signals = np.nonzero(truth_values)[0]
        if signals.size == 0:
            raise InputError("no signal coordinates to track; set tracked explicitly")
        return [int(c) for c in signals]

    def to_json_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "lambda_e": self.lambda_e,
            "lambda_g": self.lambda_g,
            "cv_grid": self.cv_grid,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "level": self.level,
            "tracked": self.tracked,
            "contrasts": self.contrasts,
            "oracle": self.oracle,
        }


def contrast_cases(p: int, layout) -> dict[str, np.ndarray]:
    """The four contrast suites on the first node.

    Case I compares the two signal coordinates, II a null against a
    signal, III two nulls, and IV is a bivariate contrast sharing one
    signal coordinate between its rows.
    """
    L = layout.node_length
    c_first, c_second = 0, 1  # baseline-group coordinates of partners 2 and 3
    c_sig1 = layout.index_of(0, 1, 1)  # first covariate signal, local p - 1
    c_sig2 = layout.index_of(0, 1, 2)  # second covariate signal, local 2(p - 1)

    def row(pairs):
        r = np.zeros(L)
        for idx, weight in pairs:
            r[idx] = weight
        return r

    return {
        "I": row([(c_sig1, 1.0), (c_sig2, -1.0)])[None, :],
        "II": row([(c_first, 1.0), (c_sig2, -1.0)])[None, :],
        "III": row([(c_first, 1.0), (c_second, 2.0)])[None, :],
        "IV": np.vstack(
            [row([(c_first, 2.0), (c_sig1, -1.0)]), row([(c_second, 1.0), (c_sig1, 1.0)])]
        ),
    }


def _replicate(config: StudyConfig, rep_seed: SeedSequence) -> dict:
    """One independent replication; returns a JSON-ready record."""
    model = benchmark_model(config.p, config.q)
    layout = model.layout()
    truth = true_beta(model, layout)
    data = sample(model, config.n, seed=rep_seed)
    designs = [build_node_design(data, j) for j in range(config.p)]

    lambda_e = config.lambda_e
    if config.cv_grid is not None:
        cv = cross_validate(
            data,
            config.cv_grid,
            ratio=DEFAULT_GROUP_RATIO,
            seed=int(rep_seed.generate_state(1)[0] % (2**31)),
            max_iter=config.fit_max_iter,
            tol=config.fit_tol,
            kkt_tol=config.fit_kkt_tol,
        )
        lambda_e = cv.lambda_e
    lambda_g = (
        config.lambda_g if config.lambda_g is not None else lambda_e * DEFAULT_GROUP_RATIO
    )
    fit_config = FitConfig(
        lambda_e=lambda_e,
        lambda_g=lambda_g,
        max_iter=config.fit_max_iter,
        tol=config.fit_tol,
        kkt_tol=config.fit_kkt_tol,
    )
    result = fit_designs(designs, fit_config)

    alpha, gamma = config.resolved_thresholds()
    debias_config = DebiasConfig(
        alpha=alpha,
        gamma=gamma,
        eps_abs=config.admm_eps,
        eps_rel=config.admm_eps,
        max_iter=config.admm_max_iter,
    )
    tracked = config.resolved_tracked(truth.values)
    by_node: dict[int, list[int]] = {}
    for c in tracked:
        by_node.setdefault(c // layout.node_length, []).append(c % layout.node_length)
    if config.contrasts:
        cases = contrast_cases(config.p, layout)
        touched = sorted(
            {int(l) for A in cases.values() for l in np.nonzero(np.any(A != 0, 0))[0]}
        )
        by_node.setdefault(0, [])
        by_node[0] = sorted(set(by_node[0]) | set(touched))

    record = {"lambda_e": lambda_e, "coords": [], "oracle": [], "contrasts": []}
    mult = ndtri(0.5 + config.level / 2.0)
    for node, locals_ in sorted(by_node.items()):
        design = designs[node]
        factor = eigen_factor(design)
        est = debias_node(result, design, factor, locals_, debias_config)
        noise = estimate_noise(design, result.supports[node])
        for l in locals_:
            flat = node * layout.node_length + l
            col = est.columns[l]
            truth_l = truth.values[flat]
            se = standard_error(col, noise, config.n)
            lo, hi = confidence_interval(col, est.values[l], noise, config.n, config.level)
            z0, p0 = wald_test(col, est.values[l], noise, config.n, null=0.0)
            record["coords"].append(
                {
                    "flat": flat + 1,
                    "node": node + 1,
                    "pre": float(result.beta.values[flat]),
                    "post": float(est.values[l]),
                    "truth": float(truth_l),
                    "se": se,
                    "lo": lo,
                    "hi": hi,
                    "z0": z0,
                    "p0": p0,
                    "std": float((est.values[l] - truth_l) / se),
                    "covered": bool(lo <= truth_l <= hi),
                    "rej0": bool(p0 < 1.0 - config.level),
                    "variance_factor": col.variance_factor,
                    "feasibility_slack": col.feasibility_slack,
                }
            )
        if config.contrasts and node == 0:
            for name, A in contrast_cases(config.p, layout).items():
                a0 = A @ truth.values[: layout.node_length]
                report = contrast_infer(A, est, noise, null=a0, eigen=factor)
                cis = report.confidence_intervals(config.level)
                if A.shape[0] == 1:
                    covered = bool(cis[0, 0] <= a0[0] <= cis[0, 1])
                else:
                    covered = report.covers(a0, config.level)
                record["contrasts"].append(
                    {
                        "case": name,
                        "estimate": report.estimate.tolist(),
                        "null": a0.tolist(),
                        "standardized": report.standardized.tolist(),
                        "p": report.p_value,
                        "covered": covered,
                    }
                )

    if config.oracle:
        for node, locals_ in sorted(by_node.items()):
            design = designs[node]
            support = np.nonzero(truth.values.reshape(config.p, -1)[node])[0]
            if support.size == 0:
                continue
            ols = restricted_ols(design, support)
            resid = design.z - design.W @ ols
            dof = config.n - support.size
            sigma2 = float(resid @ resid) / dof
            cols = design.W[:, support]
            cov = sigma2 * np.linalg.inv(cols.T @ cols)
            for pos, l in enumerate(support):
                flat = node * layout.node_length + int(l)
                truth_l = truth.values[flat]
                se = float(np.sqrt(cov[pos, pos]))
                lo, hi = ols[l] - mult * se, ols[l] + mult * se
                record["oracle"].append(
                    {
                        "flat": flat + 1,
                        "truth": float(truth_l),
                        "estimate": float(ols[l]),
                        "se": se,
                        "lo": float(lo),
                        "hi": float(hi),
                        "std": float((ols[l] - truth_l) / se),
                        "covered": bool(lo <= truth_l <= hi),
                        "rej0": bool(abs(ols[l] / se) > mult),
                    }
                )
    return record


@dataclass
class StudySummary:
    """Aggregated study metrics, keyed the way the result tables are laid out."""

    config: dict
    coords: dict[str, dict] = field(default_factory=dict)
    oracle: dict[str, dict] = field(default_factory=dict)
    contrasts: dict[str, dict] = field(default_factory=dict)
    reps_done: int = 0
    reps_failed: int = 0
    failures: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "coords": self.coords,
            "oracle": self.oracle,
            "contrasts": self.contrasts,
            "reps_done": self.reps_done,
            "reps_failed": self.reps_failed,
            "failures": self.failures,
        }

    def format_table(self) -> str:
        lines = []
        keys = list(self.coords)
        header = "metric      " + "".join(f"{k:>16}" for k in keys)
        lines.append(header)
        lines.append("-" * len(header))

        def fmt_row(label, getter, pct=False):
            cells = []
            for k in keys:
                v = getter(self.coords[k])
                cells.append(f"{100 * v:>15.1f}%" if pct else f"{v:>16.4f}")
            lines.append(f"{label:<12}" + "".join(cells))

        fmt_row("Pre-Bias", lambda c: c["pre_bias_mean"])
        fmt_row("(sd)", lambda c: c["pre_bias_sd"])
        fmt_row("Post-Bias", lambda c: c["post_bias_mean"])
        fmt_row("(sd)", lambda c: c["post_bias_sd"])
        fmt_row("Emp-SD", lambda c: c["emp_sd"])
        fmt_row("Cov-Prob", lambda c: c["cov_prob"], pct=True)
        fmt_row("Rej-0", lambda c: c["rej0_rate"], pct=True)
        if self.oracle:
            lines.append("")
            lines.append("oracle (least squares on the true support)")
            okeys = list(self.oracle)
            lines.append("metric      " + "".join(f"{k:>16}" for k in okeys))
            for label, key, pct in (
                ("Bias", "bias_mean", False),
                ("(sd)", "bias_sd", False),
                ("Emp-SD", "emp_sd", False),
                ("Cov-Prob", "cov_prob", True),
                ("Rej-0", "rej0_rate", True),
            ):
                cells = []
                for k in okeys:
                    v = self.oracle[k][key]
                    cells.append(f"{100 * v:>15.1f}%" if pct else f"{v:>16.4f}")
                lines.append(f"{label:<12}" + "".join(cells))
        if self.contrasts:
            lines.append("")
            lines.append("contrast suite")
            for name, c in self.contrasts.items():
                ave = ", ".join(f"{v:.3f}" for v in c["emp_ave"])
                sd = ", ".join(f"{v:.3f}" for v in c["emp_sd"])
                extra = (
                    f"  corr={c['component_correlation']:.3f}"
                    if "component_correlation" in c
                    else ""
                )
                lines.append(
                    f"Case {name:<4} Emp-Ave [{ave}]  Emp-SD [{sd}]  "
                    f"Cov-Prob {100 * c['cov_prob']:.1f}%{extra}"
                )
        return "\n".join(lines)


def _aggregate(config: StudyConfig, records: list[dict], failures: list) -> StudySummary:
    summary = StudySummary(
        config=config.to_json_dict(),
        reps_done=len(records),
        reps_failed=len(failures),
        failures=[{"rep": int(i), "error": str(e)} for i, e in failures],
    )
    if not records:
        return summary
    flats = [c["flat"] for c in records[0]["coords"]]
    for flat in flats:
        per = [
            next(c for c in r["coords"] if c["flat"] == flat) for r in records
        ]
        pre = np.array([c["pre"] - c["truth"] for c in per])
        post = np.array([c["post"] - c["truth"] for c in per])
        std = np.array([c["std"] for c in per])
        summary.coords[str(flat)] = {
            "pre_bias_mean": float(pre.mean()),
            "pre_bias_sd": float(pre.std(ddof=1)) if len(per) > 1 else 0.0,
            "post_bias_mean": float(post.mean()),
            "post_bias_sd": float(post.std(ddof=1)) if len(per) > 1 else 0.0,
            "emp_sd": float(std.std(ddof=1)) if len(per) > 1 else 0.0,
            "emp_ave": float(std.mean()),
            "cov_prob": float(np.mean([c["covered"] for c in per])),
            "rej0_rate": float(np.mean([c["rej0"] for c in per])),
        }
    if records[0]["oracle"]:
        for flat in [c["flat"] for c in records[0]["oracle"]]:
            per = [next(c for c in r["oracle"] if c["flat"] == flat) for r in records]
            bias = np.array([c["estimate"] - c["truth"] for c in per])
            std = np.array([c["std"] for c in per])
            summary.oracle[str(flat)] = {
                "bias_mean": float(bias.mean()),
                "bias_sd": float(bias.std(ddof=1)) if len(per) > 1 else 0.0,
                "emp_sd": float(std.std(ddof=1)) if len(per) > 1 else 0.0,
                "cov_prob": float(np.mean([c["covered"] for c in per])),
                "rej0_rate": float(np.mean([c["rej0"] for c in per])),
            }
    if records[0]["contrasts"]:
        for name in [c["case"] for c in records[0]["contrasts"]]:
            per = [next(c for c in r["contrasts"] if c["case"] == name) for r in records]
            std = np.array([c["standardized"] for c in per])  # reps x k
            entry = {
                "emp_ave": std.mean(axis=0).tolist(),
                "emp_sd": std.std(axis=0, ddof=1).tolist() if len(per) > 1 else [0.0] * std.shape[1],
                "cov_prob": float(np.mean([c["covered"] for c in per])),
            }
            if std.shape[1] == 2 and len(per) > 2:
                entry["component_correlation"] = float(
                    np.corrcoef(std[:, 0], std[:, 1])[0, 1]
                )
            summary.contrasts[name] = entry
    return summary


def run_study(config: StudyConfig, artifact_dir=None) -> StudySummary:
    """Run all replications (in parallel when configured) and aggregate.

    Each replication owns one child of the root seed sequence, so results
    do not depend on worker scheduling.  The study fails only if more
    than 5% of replications fail.
    """
    seeds = SeedSequence(config.seed).spawn(config.reps)
    workers = config.workers or -1
    if config.reps == 1 or config.workers == 1:
        outcomes = [_safe_replicate(config, s) for s in seeds]
    else:
        outcomes = Parallel(n_jobs=workers)(
            delayed(_safe_replicate)(config, s) for s in seeds
        )
    records, failures = [], []
    for idx, (record, error) in enumerate(outcomes):
        if error is not None:
            failures.append((idx, error))
        else:
            records.append(record)
    if len(failures) > 0.05 * config.reps:
        detail = "; ".join(f"rep {i}: {e}" for i, e in failures[:5])
        raise SageError(
            f"{len(failures)} of {config.reps} replications failed: {detail}"
        )
    summary = _aggregate(config, records, failures)
    if artifact_dir is not None:
        _write_artifacts(artifact_dir, config, records, summary)
    return summary


def _safe_replicate(config: StudyConfig, seed: SeedSequence):
    try:
        return _replicate(config, seed), None
    except Exception as exc:  # noqa: BLE001 - per-replication isolation
        return None, f"{type(exc).__name__}: {exc}"


def _write_artifacts(artifact_dir, config: StudyConfig, records, summary) -> None:
    import json
    from pathlib import Path

    out = Path(artifact_dir)
    reps_dir = out / "reps"
    reps_dir.mkdir(parents=True, exist_ok=True)
    for i, record in enumerate(records):
        with open(reps_dir / f"rep_{i:04d}.json", "w") as fh:
            json.dump(record, fh, sort_keys=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary.to_json_dict(), fh, sort_keys=True, indent=1)
    with open(out / "summary.txt", "w") as fh:
        fh.write(summary.format_table() + "\n")
    # long-format estimate table for plotting
    with open(out / "estimates.csv", "w") as fh:
        fh.write("rep,flat,truth,pre,post,std,lo,hi\n")
        for i, record in enumerate(records):
            for c in record["coords"]:
                fh.write(
                    f"{i},{c['flat']},{c['truth']:.17g},{c['pre']:.17g},"
                    f"{c['post']:.17g},{c['std']:.17g},{c['lo']:.17g},{c['hi']:.17g}\n"
                )
    # QQ table of the pooled standardized estimates
    pooled = np.array([c["std"] for record in records for c in record["coords"]])
    if pooled.size >= 10:
        qq = export_qq(pooled)
        with open(out / "qq.csv", "w") as fh:
            fh.write("theoretical,empirical\n")
            for t, e in qq:
                fh.write(f"{t:.17g},{e:.17g}\n")
    if records and records[0]["contrasts"]:
        with open(out / "contrasts.csv", "w") as fh:
            fh.write("rep,case,component,standardized\n")
            for i, record in enumerate(records):
                for c in record["contrasts"]:
                    for comp, value in enumerate(c["standardized"]):
                        fh.write(f"{i},{c['case']},{comp + 1},{value:.17g}\n")
    # signed population/covariate graph edges implied by the benchmark truth
    model = benchmark_model(config.p, config.q)
    with open(out / "graph_edges.csv", "w") as fh:
        fh.write("term,node_a,node_b,partial_correlation\n")
        sigma = model.sigma_diag
        for h, term in enumerate(model.terms):
            rows, cols = np.nonzero(np.triu(term, k=1))
            for a, b in zip(rows, cols):
                rho = -term[a, b] / np.sqrt(sigma[a] * sigma[b])
                fh.write(f"{h},{a + 1},{b + 1},{rho:.17g}\n")


def export_qq(values) -> np.ndarray:
    """Pairs of (normal quantile, sorted observed value) for QQ plotting."""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size < 10:
        raise InputError(f"need at least 10 values for a QQ table, got {values.size}")
    grid = (np.arange(1, values.size + 1) - 0.5) / values.size
    return np.column_stack([ndtri(grid), values])


def run_oracle(data, support_by_node: dict[int, np.ndarray], level: float = 0.95):
    """Least squares restricted to the given supports with normal intervals."""
    mult = ndtri(0.5 + level / 2.0)
    rows = []
    for node, support in sorted(support_by_node.items()):
        support = np.asarray(support, dtype=int)
        design = build_node_design(data, node)
        if support.size >= data.n:
            raise InputError(f"node {node}: oracle support too large")
        ols = restricted_ols(design, support)
        resid = design.z - design.W @ ols
        sigma2 = float(resid @ resid) / (data.n - support.size)
        cols = design.W[:, support]
        cov = sigma2 * np.linalg.inv(cols.T @ cols)
        for pos, l in enumerate(support):
            se = float(np.sqrt(cov[pos, pos]))
            rows.append(
                {
                    "node": node,
                    "coordinate": int(l),
                    "estimate": float(ols[l]),
                    "se": se,
                    "lo": float(ols[l] - mult * se),
                    "hi": float(ols[l] + mult * se),
                }
            )
    return rows


def timing_bench(
    n_list,
    p_list,
    q: int = 20,
    columns: int = 1,
    seed: int = 0,
    repeats: int = 3,
    admm_eps: float = 1e-7,
    max_iter: int = 50000,
) -> list[dict]:
    """Wall-clock comparison of the two surrogate-column solvers.

    For each size, identical instances and tolerances feed both solvers;
    the projected timing includes building its factorization from the
    design, the direct timing includes its own decomposition of the Gram
    matrix.  Reported values are medians over ``repeats`` runs.
    """
    results = []
    for n in n_list:
        for p in p_list:
            data = sample(benchmark_model(p, q), n, seed=seed)
            design = build_node_design(data, 0)
            layout = design.layout
            G = gram(design)
            alpha, gamma = default_thresholds(n)
            config = DebiasConfig(
                alpha=alpha,
                gamma=gamma,
                eps_abs=admm_eps,
                eps_rel=admm_eps,
                max_iter=max_iter,
            )
            direct_times, projected_times = [], []
            feasible = True
            objectives = (np.nan, np.nan)
            for _ in range(repeats):
                t0 = time.perf_counter()
                proj_cols = []
                factor = eigen_factor(design)
                for l in range(columns):
                    proj_cols.append(solve_projected(factor, l, config, layout))
                projected_times.append(time.perf_counter() - t0)

                t0 = time.perf_counter()
                direct_cols = [solve_direct(G, l, config, layout) for l in range(columns)]
                direct_times.append(time.perf_counter() - t0)
                feasible = feasible and all(
                    c.feasibility_slack >= -config.feas_tol
                    for c in proj_cols + direct_cols
                )
                objectives = (
                    float(np.mean([c.variance_factor for c in direct_cols])),
                    float(np.mean([c.variance_factor for c in proj_cols])),
                )
            direct_s = float(np.median(direct_times))
            projected_s = float(np.median(projected_times))
            results.append(
                {
                    "n": n,
                    "p": p,
                    "q": q,
                    "columns": columns,
                    "direct_seconds": direct_s,
                    "projected_seconds": projected_s,
                    "speedup": direct_s / projected_s if projected_s > 0 else np.inf,
                    "direct_objective": objectives[0],
                    "projected_objective": objectives[1],
                    "both_feasible": bool(feasible),
                }
            )
    return results
