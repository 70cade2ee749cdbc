"""Command-line front end: validate, eval, optimize, ablate, inspect.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .harness import (
    METHOD_DE,
    POLICY_RETRY_THEN_NEUTRAL,
    POLICY_STRICT,
    apply_overrides,
    load_experiment_config,
    run_ablation,
    run_de_experiment,
    run_icl_baseline,
    run_naive_baseline,
    write_radar_csv,
    write_report,
)
from .respondents import RemoteRespondent, TransportError
from .softprompt import FormatError, SoftPrompt
from .survey import DIMENSION_NAMES, QUESTION_INDICES

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="path to the JSON run config")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config entry (dotted keys, repeatable, last wins)",
    )
    parser.add_argument("--output", default=None, help="output directory (overrides the config)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsmtune", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("validate", help="check a run config and its dataset")
    _add_common(p)
    p.add_argument("--ping", action="store_true", help="also check backend reachability")

    p = sub.add_parser("eval", help="run a single evaluation")
    _add_common(p)
    p.add_argument("--method", choices=["naive", "icl", "prompt"], default="naive")
    p.add_argument("--prompt", default=None, help="soft prompt file (required for --method prompt)")

    p = sub.add_parser("optimize", help="run the DE optimization")
    _add_common(p)

    p = sub.add_parser("ablate", help="run the hyperparameter sweep")
    _add_common(p)

    p = sub.add_parser("inspect", help="summarize a soft prompt file")
    p.add_argument("prompt_path", help="path to a soft prompt binary file")
    p.add_argument("-v", "--verbose", action="count", default=0)

    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _validate_dataset_dict(raw: dict, diagnostics: list[str]) -> None:
    questions = raw.get("questions")
    if not isinstance(questions, list):
        diagnostics.append("dataset has no questions array")
        return
    seen: set[int] = set()
    for q in questions:
        idx = q.get("index") if isinstance(q, dict) else None
        if not isinstance(idx, int):
            diagnostics.append(f"question entry without integer index: {q!r}")
            continue
        if idx in seen:
            diagnostics.append(f"DuplicateQuestion: {idx}")
        seen.add(idx)
    for idx in QUESTION_INDICES:
        if idx not in seen:
            diagnostics.append(f"MissingQuestion: {idx}")
    target = raw.get("target")
    if not isinstance(target, dict):
        diagnostics.append("dataset has no target profile")
    else:
        for name in DIMENSION_NAMES:
            if name not in target:
                diagnostics.append(f"target missing dimension: {name}")


def _number(container: dict, key: str, default: float, diagnostics: list[str]) -> float:
    value = container.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        diagnostics.append(f"{key} must be a number, got {value!r}")
        return default
    return value


def _validate_de_dict(raw: dict, diagnostics: list[str]) -> None:
    de = raw.get("de") or {}
    if _number(de, "population_size", 7, diagnostics) < 4:
        diagnostics.append("population_size must be >= 4")
    if _number(de, "max_generations", 50, diagnostics) < 1:
        diagnostics.append("max_generations must be >= 1")
    if not _number(de, "mutation_rate", 0.9, diagnostics) > 0:
        diagnostics.append("mutation_rate must be > 0")
    if not 0.0 <= _number(de, "recombination_rate", 0.9, diagnostics) <= 1.0:
        diagnostics.append("recombination_rate must be in [0, 1]")
    if not _number(de, "lower_bound", -5.0, diagnostics) < _number(de, "upper_bound", 5.0, diagnostics):
        diagnostics.append("lower_bound must be < upper_bound")
    if _number(de, "abs_tolerance", 1e-9, diagnostics) < 0:
        diagnostics.append("abs_tolerance must be >= 0")


def validate_config(config_path: str, overrides: list[str], ping: bool = False) -> list[str]:
    """All problems found in the run config; empty means clean."""
    diagnostics: list[str] = []
    path = Path(config_path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        return [f"config unreadable: {exc}"]
    try:
        raw = apply_overrides(raw, overrides)
    except ValueError as exc:
        return [str(exc)]

    dataset_path = raw.get("dataset")
    if not dataset_path:
        diagnostics.append("config has no dataset path")
    else:
        resolved = Path(dataset_path)
        if not resolved.is_absolute():
            resolved = path.parent / resolved
        try:
            with open(resolved, "r", encoding="utf-8") as f:
                dataset_raw = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            diagnostics.append(f"dataset unreadable: {exc}")
        else:
            _validate_dataset_dict(dataset_raw, diagnostics)

    _validate_de_dict(raw, diagnostics)

    if _number(raw, "token_count", 1, diagnostics) < 1:
        diagnostics.append("token_count must be >= 1")
    if _number(raw, "embed_dim", 1, diagnostics) < 1:
        diagnostics.append("embed_dim must be >= 1")
    policy = raw.get("unparseable_policy", POLICY_RETRY_THEN_NEUTRAL)
    if policy not in (POLICY_RETRY_THEN_NEUTRAL, POLICY_STRICT):
        diagnostics.append(f"unknown unparseable_policy: {policy}")
    backend = raw.get("backend") or {"type": "synthetic"}
    kind = backend.get("type")
    if kind not in ("synthetic", "remote"):
        diagnostics.append(f"unknown backend type: {kind}")
    elif kind == "remote":
        for key in ("base_url", "model_name"):
            if not backend.get(key):
                diagnostics.append(f"remote backend needs {key}")

    if diagnostics:
        return diagnostics

    # Structure is sound; let full construction catch anything residual.
    try:
        cfg = load_experiment_config(config_path, overrides)
    except Exception as exc:
        diagnostics.append(f"config rejected: {exc}")
        return diagnostics

    if ping and isinstance(cfg.backend, RemoteRespondent):
        try:
            cfg.backend.served_embed_dim()
        except TransportError as exc:
            diagnostics.append(f"backend unreachable: {exc}")
    return diagnostics


def cmd_validate(args: argparse.Namespace) -> int:
    diagnostics = validate_config(args.config, args.overrides, ping=args.ping)
    print(json.dumps(diagnostics, indent=2))
    return EXIT_VALIDATION if diagnostics else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config, args.overrides, output_dir=args.output)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if args.method == "naive":
        report = run_naive_baseline(cfg)
    elif args.method == "icl":
        report = run_icl_baseline(cfg)
    else:
        if not args.prompt:
            print("--method prompt requires --prompt", file=sys.stderr)
            return EXIT_VALIDATION
        candidate = SoftPrompt.load(args.prompt)
        _, report = harness.evaluate_candidate(candidate, cfg, method=METHOD_DE)
    write_report(cfg.output_dir / harness.REPORT_FILE, report, cfg)
    write_radar_csv(cfg.output_dir / harness.RADAR_FILE, cfg.dataset, [report])
    print(f"{report.method} vsm13_loss: {report.vsm13_loss:.6f}")
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config, args.overrides, output_dir=args.output)

    def show(record, _best) -> None:
        print(f"generation {record.generation}: best {record.best_fitness:.6f}")

    best, report, history = run_de_experiment(cfg, on_generation=show)
    print(f"final vsm13_loss: {report.vsm13_loss:.6f} after {len(history)} generations")
    print(f"artifacts in {cfg.output_dir}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config, args.overrides, output_dir=args.output)
    rows = run_ablation(cfg.ablation, cfg)
    print(f"wrote {len(rows)} rows to {cfg.output_dir / harness.ABLATION_FILE}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    prompt = SoftPrompt.load(args.prompt_path)
    values = prompt.values
    print(f"tokens: {prompt.token_count}")
    print(f"embed_dim: {prompt.embed_dim}")
    if values.size:
        print(f"min: {values.min():.6g}")
        print(f"max: {values.max():.6g}")
        print(f"mean: {values.mean():.6g}")
    else:
        print("min: n/a\nmax: n/a\nmean: n/a")
    print(f"digest: {prompt.digest()}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "eval": cmd_eval,
    "optimize": cmd_optimize,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def _cause_chain(exc: BaseException) -> str:
    names = []
    node: BaseException | None = exc
    while node is not None and len(names) < 8:
        names.append(type(node).__name__)
        node = node.__cause__
    return " <- ".join(names)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return _COMMANDS[args.subcommand](args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"error: {_cause_chain(exc)}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
