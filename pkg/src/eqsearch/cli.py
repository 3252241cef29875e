"""Command-line interface.

Subcommands: generate-data, run, evaluate, report, fetch-stress-data.
Run configuration lives in a TOML file with sections mirroring the config
dataclasses; any field can be overridden with ``--set section.key=value``.
Logs go to stderr, data to files; ``--json`` switches stdout to structured
records only.  Exit codes: 0 success, 2 configuration/usage error, 3 data
error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import bench, data, engine
from .engine import Ablations, BufferConfig, ConfigError, RunConfig
from .hypothesis import GeneratorConfig
from .optimize import FitConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_SECTIONS = {"generator": GeneratorConfig, "fit": FitConfig, "buffer": BufferConfig,
             "ablations": Ablations}


def _build_section(cls, mapping: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**mapping)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in {where}: {exc}") from exc


def build_run_config(raw: dict) -> RunConfig:
    """Strict construction: unknown keys anywhere are rejected."""
    raw = dict(raw)
    sections = {}
    for name, cls in _SECTIONS.items():
        body = raw.pop(name, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {name!r} must be a table")
        sections[name] = _build_section(cls, body, f"[{name}]")
    cfg = _build_section(RunConfig, {**raw, **sections}, "run configuration")
    return cfg


def _parse_override_value(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, value = item.split("=", 1)
        node = raw
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through scalar key {part!r}")
        node[parts[-1]] = _parse_override_value(value.strip())
    return raw


def load_run_config(path: str | None, overrides: list[str]) -> RunConfig:
    raw: dict = {}
    if path:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
    apply_overrides(raw, overrides)
    return build_run_config(raw)


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_generate_data(args) -> int:
    splits, metadata = bench.generate_benchmark(
        args.benchmark, seed=args.seed, samples=args.samples,
        noise_sigma=args.noise, stress_csv=args.stress_input)
    data.save_splits(splits, args.out, metadata)
    payload = {"out": str(args.out), **metadata,
               "split_sizes": {k: splits[k].n for k in data.SPLITS}}
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        sizes = payload["split_sizes"]
        print(f"wrote {args.benchmark} dataset to {args.out} "
              f"(train={sizes['train']}, id={sizes['id_valid']}, ood={sizes['ood_valid']})")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config, args.set or [])
    result = engine.run(cfg, resume_from=args.resume)
    if args.json:
        print(json.dumps(result.to_dict(), sort_keys=True))
        return EXIT_OK
    print("best program:")
    print(result.best_text)
    print(f"params: {[round(p, 6) for p in result.best_params]}")
    for split, metrics in result.scores.items():
        print(f"{split}: mse={metrics['mse']} nmse={metrics['nmse']}")
    for key, value in sorted(result.counts.items()):
        print(f"{key}: {value}")
    if result.output_dir:
        print(f"output: {result.output_dir}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    program_text = Path(args.program).read_text()
    splits = data.load_splits(args.data_dir)
    fit_cfg = FitConfig(method=args.method, restarts=args.restarts, seed=args.seed,
                        bfgs_tol=args.tol)
    report = engine.fit_and_report(program_text, splits, fit_cfg)
    if args.json:
        print(json.dumps(report, sort_keys=True))
        return EXIT_OK
    print(report["program"])
    print(f"params: {[round(p, 6) for p in report['params']]}")
    for split in data.SPLITS:
        metrics = report["scores"][split]
        print(f"{split}: mse={metrics['mse']} nmse={metrics['nmse']}")
    return EXIT_OK


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    result_path = run_dir / engine.RESULT_FILE
    traj_path = run_dir / engine.TRAJECTORY_FILE
    if not result_path.exists() or not traj_path.exists():
        raise data.DataError(f"{run_dir} is not a finished run directory")
    with open(result_path) as fh:
        result = json.load(fh)
    rows = []
    with open(traj_path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rows.append((rec["iteration"], rec["best_nmse"]))
    csv_path = Path(args.csv) if args.csv else run_dir / "best_scores.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "best_nmse"])
        writer.writerows(rows)
    if args.json:
        print(json.dumps({**result, "best_scores_csv": str(csv_path)}, sort_keys=True))
        return EXIT_OK
    print("best program:")
    print(result["best_text"])
    for split, metrics in result["scores"].items():
        print(f"{split}: mse={metrics['mse']} nmse={metrics['nmse']}")
    print(f"best-score curve: {csv_path}")
    return EXIT_OK


def _cmd_fetch_stress(args) -> int:
    if args.convert:
        out = bench.convert_stress_csv(args.convert, args.out, strain_col=args.strain_col,
                                       stress_col=args.stress_col, temp_col=args.temp_col)
        print(f"converted {args.convert} -> {out}" if not args.json
              else json.dumps({"out": str(out)}))
        return EXIT_OK
    if not args.url:
        raise ConfigError("either --url (download) or --convert (local file) is required")
    out = bench.fetch_stress_data(args.url, args.out)
    print(f"downloaded {args.url} -> {out}" if not args.json
          else json.dumps({"out": str(out)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqsearch",
        description="Equation discovery: evolve symbolic skeletons and fit them to data.")
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a benchmark dataset directory")
    p.add_argument("benchmark", choices=bench.BENCHMARKS)
    p.add_argument("out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.0, help="train-split Gaussian noise sigma")
    p.add_argument("--stress-input", type=Path, default=None,
                   help="converted CSV for the stress benchmark")
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=_cmd_generate_data)

    p = sub.add_parser("run", help="run the search loop")
    p.add_argument("-c", "--config", default=None, help="TOML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. generator.kind=mock")
    p.add_argument("--resume", default=None, help="checkpoint file to resume from")
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("evaluate", help="fit one skeleton file and print split scores")
    p.add_argument("program", help="file containing a skeleton program")
    p.add_argument("data_dir", help="dataset directory")
    p.add_argument("--method", choices=("bfgs", "adam"), default="bfgs")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-10, help="BFGS gradient tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("run_dir")
    p.add_argument("--csv", default=None, help="where to write the best-score curve")
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=_cmd_report)

    p = sub.add_parser("fetch-stress-data",
                       help="download or convert the public tensile-test data")
    p.add_argument("--url", default=None, help="direct URL of the raw file")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--convert", default=None, help="convert a local CSV instead of downloading")
    p.add_argument("--strain-col", default="strain")
    p.add_argument("--stress-col", default="stress_MPa")
    p.add_argument("--temp-col", default="temp_C")
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=_cmd_fetch_stress)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_DATA if isinstance(exc, data.DataError) else EXIT_CONFIG
    except (OSError, bench.GenerationError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except RuntimeError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
