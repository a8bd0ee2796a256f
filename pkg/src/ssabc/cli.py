"""Command-line front end: config-driven experiment runs with file outputs.

Subcommands: ``simulate`` (observed data), ``fit`` (auxiliary anchors),
``exact-posterior`` (reference marginals), ``run`` (the replication
study with report.json), ``table1`` (benchmark table CSV).  All data
outputs are deterministic in (config, seed) — bytes included; only the
timing fields of report.json vary between reruns.  Progress goes to
stderr, machine-readable summaries to stdout, exit codes: 0 ok,
2 config error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_to_dict, load_config
from .errors import ConfigError, DegenerateSampleError, NumericalError, ParameterError, RunError
from .evaluate import replicate
from .experiments import TABLE1_ROWS, Experiment, run_table1
from .rejection import compute_distances, select_accepted

__all__ = ["main", "build_parser"]

REPORT_SCHEMA_VERSION = 1


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n")


def _json_safe(obj):
    """Recursively replace non-finite floats with None (strict JSON)."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    return obj


def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")


def _unit_slug(key: str) -> str:
    return key.replace("[", "_").replace("]", "")


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    exp = Experiment(cfg)
    latent_name = "x" if cfg.model == "lg" else "V"
    rows = [(float(t + 1), float(y), float(l)) for t, (y, l) in enumerate(zip(exp.y, exp.latent))]
    _write_csv(out / "observed.csv", ["t", "y", latent_name], rows)
    params = {"rho": exp.truth.rho, "delta": exp.truth.delta, "sigma_v": exp.truth.sigma_v}
    if cfg.model == "lg":
        params["sigma_e"] = exp.truth.sigma_e
    _dump_json(out / "meta.json", {"model": cfg.model, "T": cfg.T, "seed": cfg.seed, "params": params, "config": config_to_dict(cfg)})
    print(json.dumps({"written": ["observed.csv", "meta.json"], "T": cfg.T, "model": cfg.model}))
    return 0


def cmd_fit(cfg: ExperimentConfig, out: Path) -> int:
    exp = Experiment(cfg)
    fitted = exp.fitted
    doc = {
        "model": cfg.model,
        "unknown_params": list(cfg.unknown_params),
        "beta_hat": {name: float(v) for name, v in zip(cfg.unknown_params, fitted.beta_hat)},
        "sigma_weight": fitted.sigma_weight.tolist(),
        "neg_hess": fitted.neg_hess.tolist(),
        "marginal_anchors": {name: float(exp.marginal_anchors[pos]) for pos, name in enumerate(cfg.unknown_params)},
    }
    _dump_json(out / "fit.json", doc)
    print(json.dumps(_json_safe(doc)))
    return 0


def cmd_exact_posterior(cfg: ExperimentConfig, out: Path) -> int:
    exp = Experiment(cfg)
    written = []
    for pos, name in enumerate(cfg.unknown_params):
        grid = exp.reference[exp.unknown[pos]]
        fname = f"posterior_exact_{name}.csv"
        _write_csv(out / fname, [name, "ordinate"], zip(grid.abscissae, grid.ordinates))
        written.append(fname)
    print(json.dumps({"written": written}))
    return 0


def cmd_run(cfg: ExperimentConfig, out: Path) -> int:
    exp = Experiment(cfg)
    t0 = time.perf_counter()
    per_run_seconds: list[float] = []
    per_run = []

    def run_with_timing(r: int, threads: int):
        t = time.perf_counter()
        res = exp.run_once(r, threads=threads)
        per_run_seconds.append(time.perf_counter() - t)
        print(f"run {r + 1}/{cfg.n_runs} done ({per_run_seconds[-1]:.1f}s)", file=sys.stderr)
        return res

    for r in range(cfg.n_runs):
        per_run.append(run_with_timing(r, cfg.threads))

    # representative files from run 0: accepted draws and KDE posteriors
    draws, Z = exp.run_pool(0, cfg.threads)
    for method in cfg.methods:
        for unit in exp.method_units(method, Z, cfg.threads):
            distances, _ = compute_distances(unit.distance, unit.s_obs, unit.stats, draws)
            accepted, _ = select_accepted(distances, cfg.abc.accept_quantile)
            rows = [
                [float(i)] + [draws[i, p] for p in range(exp.n_free)] + [distances[i]]
                for i in accepted
            ]
            _write_csv(
                out / f"draws_{_unit_slug(unit.key)}.csv",
                ["i", *cfg.unknown_params, "distance"],
                rows,
            )
            from .evaluate import kde  # local import avoids a cycle at module load

            for pos in unit.coords:
                coord = exp.unknown[pos]
                ref = exp.reference[coord]
                est = kde(draws[accepted, pos], ref.abscissae, coord)
                name = cfg.unknown_params[pos]
                _write_csv(
                    out / f"posterior_{_unit_slug(unit.key)}_{name}.csv",
                    [name, "ordinate"],
                    zip(est.abscissae, est.ordinates),
                )

    rmse_doc: dict = {}
    pct_doc: dict = {}
    eps_doc: dict = {}
    nnf_doc: dict = {}
    for method in cfg.methods:
        rmse_doc[method] = {}
        pct_doc[method] = {}
        nnf_doc[method] = [res[method].n_nonfinite for res in per_run]
        for pos, name in enumerate(cfg.unknown_params):
            vals = [float(res[method].rmse[pos]) for res in per_run]
            rmse_doc[method][name] = {"per_run": vals, "mean": float(np.mean(vals))}
            pct_doc[method][name] = [[float(v) for v in res[method].pct[pos]] for res in per_run]
        for res in per_run:
            for key, eps in res[method].epsilon.items():
                eps_doc.setdefault(key, []).append(float(eps))

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "model": cfg.model,
        "true_params": {name: float(v) for name, v in zip(("rho", "delta", "sigma_v"), cfg.true_params)},
        "T": cfg.T,
        "unknown_params": list(cfg.unknown_params),
        "methods": list(cfg.methods),
        "n_runs": cfg.n_runs,
        "seed": cfg.seed,
        "abc": {"R": cfg.abc.R, "accept_quantile": cfg.abc.accept_quantile},
        "two_stage": cfg.two_stage,
        "rmse": rmse_doc,
        "percentiles": pct_doc,
        "epsilon": eps_doc,
        "n_nonfinite": nnf_doc,
        "timings": {"total_seconds": time.perf_counter() - t0, "per_run_seconds": per_run_seconds},
    }
    _dump_json(out / "report.json", report)
    summary = {m: {n: rmse_doc[m][n]["mean"] for n in cfg.unknown_params} for m in cfg.methods}
    print(json.dumps(_json_safe({"mean_rmse": summary, "report": "report.json"})))
    return 0


def cmd_table1(cfg: ExperimentConfig, out: Path) -> int:
    def progress(panel, done, total):
        print(f"panel {panel}: run {done}/{total}", file=sys.stderr)

    table = run_table1(cfg, threads=cfg.threads, progress=progress)
    header = ["row"]
    for panel in cfg.table1_panels:
        header.extend(f"{panel}:{c}" for c in table[panel]["columns"])
    lines = [",".join(header)]
    for row in TABLE1_ROWS:
        cells = [row]
        for panel in cfg.table1_panels:
            cells.extend("-" if v is None else _fmt(v) for v in table[panel]["rows"][row])
        lines.append(",".join(cells))
    (out / "table1.csv").write_text("\n".join(lines) + "\n")
    print(json.dumps(_json_safe({"written": "table1.csv", "panels": list(cfg.table1_panels)})))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssabc",
        description="Approximate Bayesian computation for state space models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "write the observed dataset and its metadata"),
        ("fit", "fit the auxiliary model to the observed data"),
        ("exact-posterior", "write reference posterior marginals"),
        ("run", "run the configured ABC replication study"),
        ("table1", "produce the benchmark RMSE table (volatility model)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="override the config worker count")
        p.add_argument("--out", default=None, help="override the config output directory")
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "exact-posterior": cmd_exact_posterior,
    "run": cmd_run,
    "table1": cmd_table1,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if args.out is not None:
            overrides["output_dir"] = args.out
        if overrides:
            cfg = replace(cfg, **overrides)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out)
    except (ConfigError, ParameterError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, RunError, DegenerateSampleError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
