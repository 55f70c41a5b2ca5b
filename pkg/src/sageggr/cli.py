"""Command-line entry point.

Subcommands: ``simulate`` (draw a dataset), ``fit`` (joint penalized
regression), ``infer`` (debiased intervals, tests, contrasts), ``study``
(replication study), ``bench`` (solver timing comparison).

Matrices travel as headerless comma-separated CSV (row = observation);
everything structured travels as JSON.  Node/partner labels in files are
1-based; covariate groups are labeled 0 (baseline) through q.  Every
command writes a manifest listing its configuration hash and outputs.

Exit codes: 0 success, 1 numerical failure, 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .debias import DebiasConfig, debias_node, default_thresholds
from .design import build_node_design, eigen_factor
from .errors import InputError, SageError
from .harness import StudyConfig, run_study, timing_bench
from .inference import (
    InferenceReport,
    contrast_infer,
    estimate_noise,
    report_node,
)
from .layout import CoefLayout, MultiTaskCoef
from .model import Dataset, PrecisionModel, benchmark_model, sample, true_beta
from .sgl import (
    DEFAULT_GROUP_RATIO,
    FitConfig,
    FitResult,
    cross_validate,
    fit_designs,
)

EXIT_OK, EXIT_NUMERICAL, EXIT_INPUT = 0, 1, 2


def canonical_hash(obj) -> str:
    """Configuration hash, stable under key reordering."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, outputs, seed=None):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": canonical_hash(config),
        "seed": seed,
        "versions": {
            "sageggr": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "created_unix": int(time.time()),
        "outputs": sorted(os.fspath(p) for p in outputs),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from exc


def load_matrix(path) -> np.ndarray:
    """Headerless numeric CSV; reports the offending cell on bad input."""
    try:
        with open(path) as fh:
            lines = [line.strip() for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    if not lines:
        raise InputError(f"{path} is empty")
    rows = []
    width = None
    for i, line in enumerate(lines):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise InputError(
                f"{path}: row {i + 1} has {len(cells)} cells, expected {width}"
            )
        row = []
        for j, cell in enumerate(cells):
            try:
                row.append(float(cell))
            except ValueError:
                raise InputError(
                    f"{path}: non-numeric cell at row {i + 1}, column {j + 1}: {cell!r}"
                ) from None
        rows.append(row)
    return np.asarray(rows)


def save_matrix(path, matrix) -> None:
    np.savetxt(path, np.asarray(matrix), fmt="%.17g", delimiter=",")


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    U = load_matrix(data_dir / "U.csv")
    X = load_matrix(data_dir / "X.csv")
    if U.shape[0] != X.shape[0]:
        raise InputError(
            f"dimension mismatch: U has {U.shape[0]} rows, X has {X.shape[0]}"
        )
    gamma_path = data_dir / "Gamma.csv"
    gamma = load_matrix(gamma_path) if gamma_path.exists() else None
    return Dataset(U=U, X=X, Gamma=gamma)


def threads_from(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("SAGE_THREADS")
    return int(env) if env else None


def cmd_simulate(args) -> int:
    config = load_json(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        n = int(config["n"])
        seed = int(config.get("seed", 0))
        if "model" in config:
            model = PrecisionModel.from_config(config["model"])
        else:
            model = benchmark_model(int(config["p"]), int(config["q"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad simulate config: {exc}") from exc
    data = sample(model, n, seed)
    truth = true_beta(model)
    save_matrix(out / "U.csv", data.U)
    save_matrix(out / "X.csv", data.X)
    with open(out / "model.json", "w") as fh:
        json.dump(model.to_config(), fh, indent=1, sort_keys=True)
    layout = model.layout()
    entries = []
    for flat in np.nonzero(truth.values)[0]:
        j, local = divmod(int(flat), layout.node_length)
        k, h = layout.coord_of(j, local)
        entries.append([j + 1, k + 1, h, float(truth.values[flat])])
    with open(out / "truth.json", "w") as fh:
        json.dump(
            {
                "entries": entries,
                "flat_indices": [int(i) + 1 for i in np.nonzero(truth.values)[0]],
            },
            fh,
            indent=1,
            sort_keys=True,
        )
    outputs = ["U.csv", "X.csv", "model.json", "truth.json"]
    write_manifest(out, "simulate", config, outputs, seed=seed)
    return EXIT_OK


def cmd_fit(args) -> int:
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    designs = [build_node_design(data, j) for j in range(data.p)]
    cv_info = None
    if args.cv:
        grid = [float(v) for v in args.cv.split(",")]
        cv = cross_validate(
            data, grid, ratio=DEFAULT_GROUP_RATIO, folds=args.folds, seed=args.cv_seed
        )
        lambda_e, lambda_g = cv.lambda_e, cv.lambda_g
        cv_info = {
            "grid": cv.grid.tolist(),
            "errors": cv.errors.tolist(),
            "folds": args.folds,
            "seed": args.cv_seed,
        }
    else:
        if args.lambda_e is None:
            raise InputError("either --lambda-e or --cv is required")
        lambda_e = args.lambda_e
        lambda_g = (
            args.lambda_g if args.lambda_g is not None else lambda_e * DEFAULT_GROUP_RATIO
        )
    config = FitConfig(
        lambda_e=lambda_e,
        lambda_g=lambda_g,
        max_iter=args.max_iter,
        tol=args.tol,
        kkt_tol=args.kkt_tol,
    )
    result = fit_designs(designs, config)
    payload = {
        "p": data.p,
        "q": data.q,
        "n": data.n,
        "lambda_e": lambda_e,
        "lambda_g": lambda_g,
        "converged": result.converged,
        "iterations": result.n_iter,
        "kkt_residual": result.kkt_residual,
        "objective": float(result.objective_trace[-1]),
        "coefficients": result.to_sparse_entries(),
    }
    if cv_info:
        payload["cross_validation"] = cv_info
    with open(out / "fit.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    write_manifest(
        out,
        "fit",
        {
            "data": os.fspath(args.data),
            "lambda_e": lambda_e,
            "lambda_g": lambda_g,
            "cv": args.cv,
            "max_iter": args.max_iter,
            "tol": args.tol,
            "kkt_tol": args.kkt_tol,
        },
        ["fit.json"],
    )
    return EXIT_OK


def load_fit(path, layout: CoefLayout) -> FitResult:
    payload = load_json(path)
    if (int(payload["p"]), int(payload["q"])) != (layout.p, layout.q):
        raise InputError(
            f"fit dimensions (p={payload['p']}, q={payload['q']}) do not match the data"
        )
    values = np.zeros(layout.total_length)
    for j, k, h, value in payload["coefficients"]:
        local = layout.index_of(int(j) - 1, int(k) - 1, int(h))
        values[(int(j) - 1) * layout.node_length + local] = float(value)
    beta = MultiTaskCoef(values, layout)
    return FitResult(
        beta=beta,
        objective_trace=np.asarray([payload.get("objective", np.nan)]),
        kkt_residual=float(payload.get("kkt_residual", np.nan)),
        n_iter=int(payload.get("iterations", 0)),
        converged=bool(payload.get("converged", True)),
        step_size=0.0,
    )


def parse_contrast(path, layout: CoefLayout, node: int):
    payload = load_json(path)
    try:
        rows = payload["rows"]
        null = payload.get("null", [0.0] * len(rows))
        A = np.zeros((len(rows), layout.node_length))
        for r, row in enumerate(rows):
            for j, k, h, weight in row["entries"]:
                if int(j) - 1 != node:
                    raise InputError(
                        f"contrast row {r + 1} touches node {j}, expected node {node + 1}"
                    )
                A[r, layout.index_of(node, int(k) - 1, int(h))] = float(weight)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed contrast file {path}: {exc}") from exc
    return A, np.asarray(null, dtype=float)


def cmd_infer(args) -> int:
    data = load_dataset(args.data)
    layout = data.layout()
    fit_result = load_fit(args.fit, layout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    by_node: dict[int, set] = {}
    if args.coords:
        for token in args.coords.split(","):
            flat = int(token) - 1
            if not 0 <= flat < layout.total_length:
                raise InputError(f"coordinate {token} out of range 1..{layout.total_length}")
            by_node.setdefault(flat // layout.node_length, set()).add(
                flat % layout.node_length
            )
    if args.all:
        if args.node is None:
            raise InputError("--all requires --node")
        by_node.setdefault(args.node - 1, set()).update(range(layout.node_length))
    contrast = None
    if args.contrast:
        if args.node is None:
            raise InputError("--contrast requires --node")
        A, null = parse_contrast(args.contrast, layout, args.node - 1)
        touched = np.nonzero(np.any(A != 0.0, axis=0))[0]
        by_node.setdefault(args.node - 1, set()).update(int(l) for l in touched)
        contrast = (A, null)
    if args.node is not None and not by_node:
        raise InputError("nothing to infer: give --coords, --all, or --contrast")
    if not by_node:
        raise InputError("nothing to infer: give --coords (or --node with --all)")

    alpha = args.alpha if args.alpha is not None else default_thresholds(data.n)[0]
    gamma = args.gamma if args.gamma is not None else default_thresholds(data.n)[1]
    debias_config = DebiasConfig(alpha=alpha, gamma=gamma)

    report = InferenceReport(level=args.level)
    for node in sorted(by_node):
        design = build_node_design(data, node)
        factor = eigen_factor(design)
        est = debias_node(
            fit_result, design, factor, sorted(by_node[node]), debias_config
        )
        noise = estimate_noise(design, fit_result.supports[node])
        report.rows.extend(report_node(est, noise, layout, data.n, level=args.level))
        if contrast is not None and node == args.node - 1:
            A, null = contrast
            contrast_report = contrast_infer(A, est, noise, null=null, eigen=factor)
            cis = contrast_report.confidence_intervals(args.level)
            report.contrasts.append(
                {
                    "node": node + 1,
                    "estimate": contrast_report.estimate.tolist(),
                    "null": contrast_report.null.tolist(),
                    "covariance": contrast_report.covariance.tolist(),
                    "statistic": contrast_report.statistic,
                    "df": contrast_report.df,
                    "p": contrast_report.p_value,
                    "standardized": contrast_report.standardized.tolist(),
                    "lo": cis[:, 0].tolist(),
                    "hi": cis[:, 1].tolist(),
                }
            )
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
    with open(out / "report.csv", "w") as fh:
        fh.write("\n".join(report.to_csv_lines()) + "\n")
    write_manifest(
        out,
        "infer",
        {
            "data": os.fspath(args.data),
            "fit": os.fspath(args.fit),
            "node": args.node,
            "coords": args.coords,
            "all": args.all,
            "contrast": os.fspath(args.contrast) if args.contrast else None,
            "level": args.level,
            "alpha": alpha,
            "gamma": gamma,
        },
        ["report.json", "report.csv"],
    )
    return EXIT_OK


def cmd_study(args) -> int:
    raw = load_json(args.config)
    known = {f.name for f in StudyConfig.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise InputError(f"unknown study config keys: {sorted(unknown)}")
    config = StudyConfig(**raw)
    if threads_from(args):
        config.workers = threads_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_study(config, artifact_dir=out)
    print(summary.format_table())
    outputs = ["summary.json", "summary.txt", "estimates.csv", "graph_edges.csv", "reps"]
    if (out / "qq.csv").exists():
        outputs.append("qq.csv")
    if (out / "contrasts.csv").exists():
        outputs.append("contrasts.csv")
    write_manifest(out, "study", raw, outputs, seed=config.seed)
    return EXIT_OK


def cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = timing_bench(
        n_list=[int(v) for v in args.n_list.split(",")],
        p_list=[int(v) for v in args.p_list.split(",")],
        q=args.q,
        columns=args.columns,
        seed=args.seed,
        repeats=args.repeats,
    )
    with open(out / "timing.json", "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
    with open(out / "timing.csv", "w") as fh:
        fh.write("n,p,q,columns,direct_seconds,projected_seconds,speedup\n")
        for r in rows:
            fh.write(
                f"{r['n']},{r['p']},{r['q']},{r['columns']},"
                f"{r['direct_seconds']:.6f},{r['projected_seconds']:.6f},"
                f"{r['speedup']:.3f}\n"
            )
    for r in rows:
        print(
            f"n={r['n']} p={r['p']}: direct {r['direct_seconds']:.3f}s  "
            f"projected {r['projected_seconds']:.3f}s  ({r['speedup']:.1f}x)"
        )
    write_manifest(
        out,
        "bench",
        {
            "n_list": args.n_list,
            "p_list": args.p_list,
            "q": args.q,
            "columns": args.columns,
            "seed": args.seed,
            "repeats": args.repeats,
        },
        ["timing.json", "timing.csv"],
        seed=args.seed,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sageggr",
        description="Gaussian graphical regression: joint sparse-group fit and debiased inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="draw a synthetic dataset")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="joint sparse-group-lasso fit")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--lambda-e", type=float, default=None)
    p_fit.add_argument("--lambda-g", type=float, default=None)
    p_fit.add_argument("--cv", default=None, help="comma-separated penalty grid")
    p_fit.add_argument("--folds", type=int, default=5)
    p_fit.add_argument("--cv-seed", type=int, default=0)
    p_fit.add_argument("--max-iter", type=int, default=20000)
    p_fit.add_argument("--tol", type=float, default=1e-7)
    p_fit.add_argument("--kkt-tol", type=float, default=1e-5)
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_inf = sub.add_parser("infer", help="debiased intervals, tests, contrasts")
    p_inf.add_argument("--data", required=True)
    p_inf.add_argument("--fit", required=True)
    p_inf.add_argument("--node", type=int, default=None, help="1-based node")
    p_inf.add_argument("--coords", default=None, help="comma-separated 1-based flat indices")
    p_inf.add_argument("--all", action="store_true", help="all coordinates of --node")
    p_inf.add_argument("--contrast", default=None, help="contrast JSON file")
    p_inf.add_argument("--level", type=float, default=0.95)
    p_inf.add_argument("--alpha", type=float, default=None)
    p_inf.add_argument("--gamma", type=float, default=None)
    p_inf.add_argument("--out", required=True)
    p_inf.set_defaults(func=cmd_infer)

    p_study = sub.add_parser("study", help="replication study")
    p_study.add_argument("--config", required=True)
    p_study.add_argument("--out", required=True)
    p_study.add_argument("--threads", type=int, default=None)
    p_study.set_defaults(func=cmd_study)

    p_bench = sub.add_parser("bench", help="solver timing comparison")
    p_bench.add_argument("--n-list", default="100")
    p_bench.add_argument("--p-list", default="100")
    p_bench.add_argument("--q", type=int, default=20)
    p_bench.add_argument("--columns", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--out", required=True)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SageError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
