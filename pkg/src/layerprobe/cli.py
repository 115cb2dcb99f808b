"""Command-line entry points.

Exit codes: 0 success, 1 validation failure (manifest violations, malformed
configs, bad domain values), 2 runtime failure. Every verb accepts --seed;
verbs that are deterministic without randomness accept it for uniformity
and ignore it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .store import load_manifest, validate_manifest
from .model import ArchitectureConfig, load_params, save_params
from .training import TrainConfig, epoch_logs_to_jsonl, train
from .evaluation import evaluate
from .experiment import (
    GridSpec,
    analyze_layers,
    emit_plot_data,
    load_results,
    render_table,
    run_grid,
)
from .synthgen import PlantSpec, generate, load_plant_spec


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path} is not valid JSON: {exc}") from exc


def _cmd_validate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    violations = validate_manifest(manifest)
    if violations:
        for v in violations:
            print(str(v), file=sys.stderr)
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return 1
    print(f"ok: {len(manifest.records)} records, features {list(manifest.feature_names)}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    doc = _load_json(args.config)
    arch = ArchitectureConfig.from_dict(doc["architecture"])
    tcfg = TrainConfig.from_dict(doc["train"])
    if args.seed is not None:
        tcfg.seed = args.seed
    params, logs = train(manifest, arch, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(params, out / "probe.params")
    (out / "epochs.jsonl").write_text(epoch_logs_to_jsonl(logs))
    print(f"trained {tcfg.epochs} epochs; final train loss {logs[-1].train_loss:.6f}")
    print(f"wrote {out / 'probe.params'} and {out / 'epochs.jsonl'}")
    return 0


def _cmd_grid(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    spec = GridSpec.from_dict(_load_json(args.spec)) if args.spec else GridSpec()
    if args.seed is not None:
        spec.seed = args.seed
    results = run_grid(
        manifest,
        spec,
        results_dir=args.out,
        parallelism=args.parallel,
        resume=args.resume,
    )
    failed = [r for r in results if r.status != "done"]
    print(f"{len(results)} runs complete, {len(failed)} failed, results in {args.out}")
    for r in failed:
        print(f"failed {r.run_id}: {r.error}", file=sys.stderr)
    return 0 if not failed else 2


def _cmd_evaluate(args: argparse.Namespace) -> int:
    params = load_params(args.params)
    manifest = load_manifest(args.manifest)
    excluded = tuple(f for f in (args.exclude or "").split(",") if f)
    report = evaluate(
        params,
        params.config,
        manifest,
        args.split,
        excluded_features=excluded,
        seed=args.seed if args.seed is not None else 4200,
    )
    print(report.to_json(), end="")
    return 0


def _filter_arg(args: argparse.Namespace) -> dict | None:
    return json.loads(args.filter) if args.filter else None


def _cmd_analyze(args: argparse.Namespace) -> int:
    results = load_results(args.results_dir)
    analysis = analyze_layers(results, filter=_filter_arg(args), split=args.split)
    print(json.dumps(analysis.to_dict(), indent=2))
    return 0


def _cmd_table(args: argparse.Namespace) -> int:
    results = load_results(args.results_dir)
    table = render_table(results, filter=_filter_arg(args), split=args.split)
    print(table.csv if args.csv else table.text, end="")
    return 0


def _cmd_plotdata(args: argparse.Namespace) -> int:
    results = load_results(args.results_dir)
    print(emit_plot_data(results, args.figure, filter=_filter_arg(args), split=args.split), end="")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = load_plant_spec(args.spec) if args.spec else PlantSpec()
    if args.seed is not None:
        spec.seed = args.seed
    manifest = generate(spec, args.out)
    counts = {}
    for rec in manifest.records:
        counts[rec.split] = counts.get(rec.split, 0) + 1
    print(f"generated {len(manifest.records)} records in {args.out}: {counts}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layerprobe",
        description="Layer-selection probing harness for frozen speech encoder embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, fn) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="override the config's seed")
        p.set_defaults(fn=fn)
        return p

    p = add("validate", "check a dataset manifest and its files", _cmd_validate)
    p.add_argument("manifest")

    p = add("train", "train one probe from a JSON config", _cmd_train)
    p.add_argument("manifest")
    p.add_argument("--config", required=True, help="JSON with 'architecture' and 'train' blocks")
    p.add_argument("--out", default="train_out", help="output directory for params and epoch logs")

    p = add("grid", "run the full hyperparameter/architecture/layer grid", _cmd_grid)
    p.add_argument("manifest")
    p.add_argument("--spec", default=None, help="GridSpec JSON (defaults to the full study grid)")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--out", default="grid_results", help="results directory")

    p = add("evaluate", "evaluate saved params on a manifest split", _cmd_evaluate)
    p.add_argument("params")
    p.add_argument("manifest")
    p.add_argument("--split", required=True)
    p.add_argument("--exclude", default="", help="comma-separated features to exclude")

    p = add("analyze", "best/worst/final layer analysis over a results directory", _cmd_analyze)
    p.add_argument("results_dir")
    p.add_argument("--split", default="test")
    p.add_argument("--filter", default=None, help="JSON object pinning hyperparameters")

    p = add("table", "render the layer x architecture macro table", _cmd_table)
    p.add_argument("results_dir")
    p.add_argument("--split", default="test")
    p.add_argument("--filter", default=None)
    p.add_argument("--csv", action="store_true", help="emit CSV instead of aligned text")

    p = add("plotdata", "emit figure-ready CSV from a results directory", _cmd_plotdata)
    p.add_argument("results_dir")
    p.add_argument("--figure", required=True, help="per_layer_lines, best_worst_bars, or lr_comparison")
    p.add_argument("--split", default="test")
    p.add_argument("--filter", default=None)

    p = add("synth", "generate a planted-signal synthetic dataset", _cmd_synth)
    p.add_argument("--spec", default=None, help="PlantSpec JSON (defaults to the standard recipe)")
    p.add_argument("--out", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
