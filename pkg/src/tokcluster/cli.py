"""Command-line entry point: ``tokcluster {run,sweep,flops}``.

Exit codes: 0 success, 2 configuration problems (bad JSON, schema violations,
invalid sweep values), 3 numerical failure (non-finite values produced during
a run).

``--threads`` must take effect before numpy initializes its BLAS thread pool,
so this module defers all heavy imports into :func:`main`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokcluster",
        description="Token clustering / reconstruction benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="directory for report.json / report.csv")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")

    p_run = sub.add_parser("run", help="execute plain + clustered pipelines and report")
    add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="repeat the run across one hyper-parameter axis")
    add_common(p_sweep)
    p_sweep.add_argument(
        "--axis",
        required=True,
        choices=["cluster_size", "lambda", "kappa", "tau", "k", "alpha", "beta"],
    )
    p_sweep.add_argument(
        "--values",
        required=True,
        help="comma-separated values; cluster_size/lambda accept HxW or a single side",
    )

    p_flops = sub.add_parser("flops", help="analytic FLOPs report, no execution")
    add_common(p_flops)
    return parser


def _parse_sweep_values(axis: str, raw: str):
    values = []
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if axis in ("cluster_size", "lambda") and ("x" in chunk or "X" in chunk):
            h, w = chunk.lower().split("x")
            values.append((int(h), int(w)))
        elif axis == "tau":
            values.append(float(chunk))
        else:
            values.append(int(chunk))
    return values


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.threads is not None:
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)

    # Heavy imports only after the thread environment is pinned.
    from dataclasses import replace

    from .bench import ConfigError, cmd_flops, cmd_run, cmd_sweep, load_run_config
    from .container import ContainerError
    from .flops import CONVENTIONS
    from .grid import NonFiniteError, ParameterError

    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            os.makedirs(args.out, exist_ok=True)
            cfg = replace(
                cfg,
                outputs=replace(
                    cfg.outputs,
                    report_json=os.path.join(args.out, "report.json"),
                    report_csv=os.path.join(args.out, "report.csv"),
                ),
            )
    except (ConfigError, ParameterError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "flops":
            report = cmd_flops(cfg)
            print(CONVENTIONS)
            for part in report.parts:
                print(f"{part.component:32s} tokens={part.n_tokens:<8d} flops={part.flops}")
            print(f"total={report.total}  baseline[{report.baseline_name}]={report.baseline_total}")
            print(f"ratio={report.ratio:.4f}")
            if cfg.outputs.report_json:
                with open(cfg.outputs.report_json, "w", encoding="utf-8") as f:
                    json.dump(report.to_json_dict(), f, indent=2)
                    f.write("\n")
            if cfg.outputs.report_csv:
                import csv as _csv

                with open(cfg.outputs.report_csv, "w", encoding="utf-8", newline="") as f:
                    _csv.writer(f).writerows(report.csv_rows())
            return EXIT_OK

        if args.command == "run":
            report = cmd_run(cfg)
        else:
            values = _parse_sweep_values(args.axis, args.values)
            report = cmd_sweep(cfg, args.axis, values)
        for row in report.rows:
            print(
                f"{row.config_id}: ratio={row.flops_ratio:.4f} "
                f"wall_ms plain={row.wall_ms_plain:.1f} clustered={row.wall_ms_clustered:.1f} "
                f"cos(z_alpha_beta) mean={row.cos_mean_z_alpha_beta:.4f} "
                f"min={row.cos_min_z_alpha_beta:.4f} "
                f"cos(z_final) mean={row.cos_mean_z_final:.4f}"
            )
        return EXIT_OK
    except (ConfigError, ParameterError, ContainerError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
