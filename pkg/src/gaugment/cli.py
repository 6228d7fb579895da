"""Command-line front end: ``gaugment <subcommand> ...``.

Exit codes: 0 ok, 1 internal failure, 2 usage or configuration error,
3 checkpoint that cannot be resumed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import io_formats
from .augment_ops import apply_policy
from .evolution import (
    SPECAUG_GRID_SIZE,
    SearchConfig,
    SearchResult,
    nominal_coverage,
    random_policy_search,
    random_search_specaugment,
    run_search,
    search_space_lower_bound,
)
from .fitness import make_evaluator
from .policy_graph import increment_magnitudes, mutate, scale_magnitudes, validate

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_CHECKPOINT = 0, 1, 2, 3

log = logging.getLogger("gaugment")


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 2."""


# -- argument parsing -- #


def _shared(parser: argparse.ArgumentParser, out_default: str = "gaugment-out") -> None:
    parser.add_argument("--seed", type=int, default=None, help="master random seed, any integer (default 0)")
    parser.add_argument(
        "--out", default=out_default, help=f"output directory, created if missing (default {out_default})"
    )
    parser.add_argument(
        "--config",
        default=None,
        help="JSON file with search settings (same keys as a checkpoint's config block); flags win",
    )


def _search_flags(parser: argparse.ArgumentParser, budget_default: int) -> None:
    parser.add_argument(
        "--budget", type=int, default=None, help=f"number of trials, >= 1 (default {budget_default})"
    )
    parser.add_argument(
        "--ensemble-nodes", type=int, default=None, help="ensemble nodes N per policy, >= 1 (default 25)"
    )
    parser.add_argument(
        "--workers", type=int, default=None, help="parallel fitness evaluations, >= 1 (default 1)"
    )
    parser.add_argument(
        "--fitness",
        choices=("synthetic", "proxy", "external"),
        default="synthetic",
        help="fitness evaluator (default synthetic)",
    )
    parser.add_argument(
        "--samples", type=int, default=None, help="synthetic fitness: policy applications per trial, >= 1 (default 64)"
    )
    parser.add_argument(
        "--command",
        default=None,
        help="external fitness: command template; {policy} becomes the policy file path, {result} the result file path",
    )
    parser.add_argument(
        "--timeout", type=float, default=3600.0, help="external fitness: seconds per trial, > 0 (default 3600)"
    )
    parser.add_argument(
        "--result-file",
        action="store_true",
        help="external fitness: read the score from the result file instead of stdout",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaugment", description="Search, apply and inspect graph-structured augmentation policies."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command_name", required=True, metavar="subcommand")

    p = sub.add_parser("search", help="evolutionary policy search")
    _shared(p)
    _search_flags(p, budget_default=2000)
    p.add_argument("--population", type=int, default=None, help="population size P, >= 2 (default 32)")
    p.add_argument(
        "--mutation-rate", type=float, default=None, help="per-edge mutation probability mu in [0, 1] (default 0.8)"
    )
    p.add_argument("--elitism", action="store_true", default=None, help="carry the best trial into each generation")
    p.add_argument("--resume", default=None, help="checkpoint.json to continue from; its settings win except --workers")

    p = sub.add_parser("baseline", help="random-search baseline at a fixed budget")
    _shared(p)
    _search_flags(p, budget_default=2000)
    p.add_argument(
        "--kind",
        choices=("specaugment", "random-policy"),
        default="specaugment",
        help=f"specaugment: uniform draws from the {SPECAUG_GRID_SIZE}-point mask strength grid; "
        "random-policy: uniform random policy graphs (default specaugment)",
    )

    p = sub.add_parser("apply", help="apply a policy to a feature file")
    _shared(p)
    p.add_argument("policy", help="policy JSON file, or a shipped asset name (chime6, ami, fig1)")
    p.add_argument("features", help="GAUG feature container, or a .csv holding one (frames x channels) matrix")
    p.add_argument("--trace", action="store_true", help="also write trace.json with the sampled path per example")

    p = sub.add_parser("mutate", help="apply one mutation step to a policy")
    _shared(p)
    p.add_argument("policy", help="policy JSON file or shipped asset name")
    p.add_argument("--mutation-rate", type=float, default=0.8, help="per-edge mutation probability in [0, 1] (default 0.8)")

    p = sub.add_parser("validate", help="check a policy file; exit 0 iff it is valid")
    p.add_argument("policy", help="policy JSON file or shipped asset name")

    p = sub.add_parser("tune", help="rescale or shift every strength parameter")
    _shared(p)
    p.add_argument("policy", help="policy JSON file or shipped asset name")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scale", type=float, help="multiply strengths by a factor in [0.6, 1.4], round half up, clip to [0, 10]")
    group.add_argument("--increment", type=int, help="add an integer in [-4, 4] to strengths, clip to [0, 10]")

    p = sub.add_parser("inspect", help="print a policy as a node table and/or Graphviz DOT")
    p.add_argument("policy", help="policy JSON file or shipped asset name")
    p.add_argument("--table", action="store_true", help="print the node-by-parameter table (default if no --dot)")
    p.add_argument("--dot", action="store_true", help="print a Graphviz DOT digraph")
    p.add_argument("--prune", action="store_true", help="drop nodes not reachable from the output (DOT only; tables always prune)")
    p.add_argument("--inputs", action="store_true", help="add the input node rows to the table")
    p.add_argument("--q-decimals", type=int, default=None, help="fixed decimals for q in the table, 0-6 (default: from the file, else up to 6 digits)")

    p = sub.add_parser("bound", help="lower bound on the size of the policy search space")
    p.add_argument("--ensemble-nodes", type=int, default=25, help="ensemble nodes N, >= 1 (default 25)")
    p.add_argument("--aug-types", type=int, default=17, help="augmentation types including identity, >= 1 (default 17)")
    p.add_argument("--magnitudes", type=int, default=11, help="strength levels, >= 1 (default 11)")
    p.add_argument("--q-levels", type=int, default=11, help="application-probability levels, >= 1 (default 11)")
    p.add_argument("--exact", action="store_true", help="also print the exact integer")
    return parser


# -- helpers -- #


def _load_policy(spec: str) -> io_formats.PolicyDocument:
    path = Path(spec)
    if not path.exists() and spec in io_formats.ASSET_NAMES:
        return io_formats.load_asset(spec)
    try:
        return io_formats.read_policy(path)
    except OSError as exc:
        raise UsageError(f"cannot read policy {spec}: {exc.strerror or exc}") from None
    except io_formats.PolicyDecodeError as exc:
        raise UsageError(f"{spec}: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_values(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    values = asdict(SearchConfig())
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in fields(SearchConfig)}
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise UsageError(f"unknown config keys {unknown}; allowed: {sorted(known)}")
        values.update(loaded)
    flags = {
        "population_size": getattr(args, "population", None),
        "mutation_rate": getattr(args, "mutation_rate", None),
        "n_ensemble": args.ensemble_nodes,
        "trial_budget": args.budget,
        "workers": args.workers,
        "master_seed": args.seed,
        "elitism": getattr(args, "elitism", None),
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    return values


def _search_config(args) -> SearchConfig:
    values = _config_values(args)
    try:
        return SearchConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _evaluator(args):
    if args.fitness == "external":
        if not args.command:
            raise UsageError("--fitness external needs --command")
        if args.timeout <= 0:
            raise UsageError(f"--timeout must be > 0, got {args.timeout}")
        options = {"command_template": args.command, "timeout": args.timeout, "result_file": args.result_file}
    else:
        if args.command:
            raise UsageError("--command only applies to --fitness external")
        options = {}
        if args.samples is not None:
            if args.fitness != "synthetic":
                raise UsageError("--samples only applies to --fitness synthetic")
            if args.samples < 1:
                raise UsageError(f"--samples must be >= 1, got {args.samples}")
            options["samples"] = args.samples
    try:
        return make_evaluator(args.fitness, **options)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _report(result: SearchResult) -> None:
    best = result.best
    print(f"trials: {len(result.trials)}")
    print(f"best: trial {best.trial_id} fitness {best.fitness:.6g}")


def _write_run(out: Path, result: SearchResult, extra: dict | None = None) -> None:
    run = {
        "metadata": result.metadata,
        "best_trial": result.best.trial_id,
        "best_fitness": result.best.fitness if not result.best.failed else None,
        **(extra or {}),
    }
    (out / "run.json").write_text(json.dumps(run, indent=1, sort_keys=True) + "\n")


# -- subcommands -- #


def cmd_search(args) -> int:
    config = _search_config(args)
    evaluator = _evaluator(args)
    if args.resume and not Path(args.resume).exists():
        raise io_formats.CheckpointError(f"checkpoint {args.resume} does not exist")
    out = _out_dir(args)

    def progress(generation, population):
        finite = [t.fitness for t in population if not t.failed]
        log.info("generation %d: best %s", generation, f"{min(finite):.6g}" if finite else "n/a")

    result = run_search(config, evaluator, out_dir=out, resume_from=args.resume, on_generation=progress)
    _write_run(out, result, {"fitness": args.fitness})
    _report(result)
    return EXIT_OK


def cmd_baseline(args) -> int:
    values = _config_values(args)
    budget, workers, seed = values["trial_budget"], values["workers"], values["master_seed"]
    for flag, value in (("--budget", budget), ("--workers", workers), ("--ensemble-nodes", values["n_ensemble"])):
        if not isinstance(value, int) or value < 1:
            raise UsageError(f"{flag} must be an integer >= 1, got {value!r}")
    evaluator = _evaluator(args)
    out = _out_dir(args)
    if args.kind == "specaugment":
        result = random_search_specaugment(budget, evaluator, seed, workers)
    else:
        result = random_policy_search(budget, evaluator, values["n_ensemble"], seed, workers)
    coverage = nominal_coverage(budget)
    io_formats.write_trials(out / "trials.jsonl", result.trials)
    io_formats.write_summary(out / "summary.csv", result.summary)
    io_formats.write_policy(
        out / "best.policy.json",
        io_formats.PolicyDocument(result.best.policy, {"trial_id": result.best.trial_id, "baseline": args.kind}),
    )
    _write_run(out, result, {"fitness": args.fitness, "grid_size": SPECAUG_GRID_SIZE, "coverage": coverage})
    _report(result)
    if args.kind == "specaugment":
        print(f"grid coverage: {budget}/{SPECAUG_GRID_SIZE} = {100 * coverage:.2f}%")
    return EXIT_OK


def cmd_apply(args) -> int:
    doc = _load_policy(args.policy)
    source = Path(args.features)
    try:
        batch = io_formats.read_features(source)
    except OSError as exc:
        raise UsageError(f"cannot read features {source}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise UsageError(f"{source}: {exc}") from None
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    augmented, paths = apply_policy(doc.policy, batch, seed)
    target = out / ("augmented.csv" if source.suffix == ".csv" else "augmented.gaug")
    io_formats.write_features(target, augmented)
    if args.trace:
        rows = [
            {
                "example": i,
                "steps": [[node, side] for node, side in path.steps],
                "augs": [a.aug_type for a in path.edges],
                "probability": path.probability,
            }
            for i, path in enumerate(paths)
        ]
        with open(out / "trace.json", "w") as fh:
            fh.write("[\n")
            fh.write(",\n".join(json.dumps(r, separators=(",", ":")) for r in rows))
            fh.write("\n]\n")
    print(f"wrote {target} ({len(augmented)} examples)")
    return EXIT_OK


def cmd_mutate(args) -> int:
    doc = _load_policy(args.policy)
    if not 0.0 <= args.mutation_rate <= 1.0:
        raise UsageError(f"--mutation-rate must lie in [0, 1], got {args.mutation_rate}")
    seed = 0 if args.seed is None else args.seed
    out = _out_dir(args)
    child = mutate(doc.policy, args.mutation_rate, np.random.default_rng(np.random.SeedSequence(seed % 2**64)))
    provenance = {"parent": str(args.policy), "mutation_rate": args.mutation_rate, "seed": seed}
    io_formats.write_policy(out / "child.policy.json", io_formats.PolicyDocument(child, provenance))
    print(f"wrote {out / 'child.policy.json'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = _load_policy(args.policy)  # decoding already runs the full validation
    report = validate(doc.policy)
    print(f"ok: {len(doc.policy.nodes)} nodes, output at node {doc.policy.n_ensemble}")
    return EXIT_OK if report.ok else EXIT_USAGE


def cmd_tune(args) -> int:
    doc = _load_policy(args.policy)
    try:
        if args.scale is not None:
            tuned = scale_magnitudes(doc.policy, args.scale)
            how = {"scale": args.scale}
        else:
            tuned = increment_magnitudes(doc.policy, args.increment)
            how = {"increment": args.increment}
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    provenance = {**doc.provenance, "tuned": how}
    io_formats.write_policy(out / "tuned.policy.json", io_formats.PolicyDocument(tuned, provenance))
    print(f"wrote {out / 'tuned.policy.json'}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    doc = _load_policy(args.policy)
    decimals = args.q_decimals
    if decimals is None:
        decimals = doc.provenance.get("q_display_decimals")
    if decimals is not None and not 0 <= int(decimals) <= 6:
        raise UsageError(f"--q-decimals must lie in [0, 6], got {decimals}")
    if args.table or not args.dot:
        sys.stdout.write(io_formats.policy_table(doc.policy, inputs=args.inputs, q_decimals=decimals))
    if args.dot:
        sys.stdout.write(io_formats.export_dot(doc.policy, prune=args.prune))
    return EXIT_OK


def cmd_bound(args) -> int:
    try:
        bound = search_space_lower_bound(args.ensemble_nodes, args.aug_types, args.magnitudes, args.q_levels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"M = {bound.triples}")
    print(f"C(M, {bound.chosen}) ~ 10^{bound.log10:.2f}")
    if args.exact:
        print(bound.count)
    return EXIT_OK


COMMANDS = {
    "search": cmd_search,
    "baseline": cmd_baseline,
    "apply": cmd_apply,
    "mutate": cmd_mutate,
    "validate": cmd_validate,
    "tune": cmd_tune,
    "inspect": cmd_inspect,
    "bound": cmd_bound,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command_name](args)
    except UsageError as exc:
        print(f"gaugment {args.command_name}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except io_formats.CheckpointError as exc:
        print(f"gaugment {args.command_name}: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except Exception as exc:  # last resort; keep the traceback behind --verbose
        if args.verbose:
            traceback.print_exc()
        print(f"gaugment {args.command_name}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
