import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from .config import METHODS, ExperimentConfig, load_config
from .design import SamplingDesign
from .exceptions import SentinelInferError
from .harness import build_design, estimate_round, label_round, run_campaign
from .simulate import TASKS, Dataset, RoundOutcomes, generate_synthetic, ingest_csv, realized_cost
from .verification import SUITES, verify_theory

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_VERIFICATION_FAILED = 3


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON experiment configuration")
    parent.add_argument("--seed", type=int, help="base seed, overriding the configuration")
    parent.add_argument("--out", help="output directory, overriding the configuration")
    parent.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity (default: WARNING)",
    )
    return parent


def _dataset_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", help="CSV dataset; the configured data source is used otherwise")
    parser.add_argument("--task", choices=TASKS, help="task of the CSV dataset (default: the configured task)")


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="sentinelinfer",
        description="Sentinel-audited labelling: designs, simulation, estimation and experiments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    design = commands.add_parser("design", parents=[common], help="emit a sampling design as JSON")
    _dataset_flags(design)
    design.add_argument("--method", default="sentinel", choices=METHODS)
    design.add_argument("--budget", type=float, help="total budget (default: the largest configured budget)")

    simulate = commands.add_parser("simulate", parents=[common], help="simulate one labelling round")
    _dataset_flags(simulate)
    simulate.add_argument("--design", required=True, help="design JSON written by the design command")

    estimate = commands.add_parser("estimate", parents=[common], help="estimate from one round of outcomes")
    _dataset_flags(estimate)
    estimate.add_argument("--design", required=True, help="design JSON the round was run with")
    estimate.add_argument("--outcomes", required=True, help="outcomes CSV written by the simulate command")

    commands.add_parser("experiment", parents=[common], help="run a Monte Carlo campaign")

    verify = commands.add_parser("verify-theory", parents=[common], help="run the theory-verification suites")
    verify.add_argument("--suite", action="append", choices=list(SUITES), help="suite to run; repeatable (default: all)")
    return parser


def _configuration(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.with_overrides(seed=args.seed, output_dir=args.out)


def _dataset(args: argparse.Namespace, config: ExperimentConfig) -> Dataset:
    task = args.task or config.task
    if args.dataset:
        return ingest_csv(args.dataset, config.data_schema, task)
    if config.uses_file:
        return ingest_csv(config.data_path, config.data_schema, task)
    return generate_synthetic(config.dataset, config.seed)


def _output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_design(args: argparse.Namespace, config: ExperimentConfig) -> int:
    dataset = _dataset(args, config)
    budget = config.budgets[-1] if args.budget is None else args.budget
    design = build_design(config, dataset, args.method, budget)
    target = _output_dir(config) / "design.json"
    design.save(target)
    print(f"{args.method} design over {design.n} instances, expected cost {design.expected_cost():.6g}: {target}")
    return EXIT_OK


def run_simulate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    dataset = _dataset(args, config)
    design = SamplingDesign.load(args.design)
    outcomes = label_round(dataset, design, config.seed)
    target = _output_dir(config) / "outcomes.csv"
    outcomes.to_csv(target)
    print(f"{outcomes.n_sampled} labels ({outcomes.n_sentinels} sentinels), cost {realized_cost(outcomes, design.scheme):.6g}: {target}")
    return EXIT_OK


def run_estimate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    dataset = _dataset(args, config)
    design = SamplingDesign.load(args.design)
    outcomes = RoundOutcomes.read_csv(args.outcomes)
    estimate = estimate_round(config, dataset, outcomes, design)
    report = estimate.to_report(realized_cost=realized_cost(outcomes, design.scheme), design_digest=design.digest())
    target = _output_dir(config) / "estimate.json"
    with open(target, "w") as f:
        json.dump(report.to_json_dict(), f, indent=2, sort_keys=True)
    print(f"{estimate.method}: {estimate.point:.6g} [{estimate.ci_low:.6g}, {estimate.ci_high:.6g}]: {target}")
    return EXIT_OK


def run_experiment(args: argparse.Namespace, config: ExperimentConfig) -> int:
    report = run_campaign(config)
    report.write(config.output_dir)
    for (method, budget), message in sorted(report.errors.items()):
        print(f"error cell {method} @ {budget:g}: {message}", file=sys.stderr)
    print(f"campaign over {len(report.methods)} methods and {len(report.budgets)} budgets: {config.output_dir}")
    return EXIT_OK


def run_verify(args: argparse.Namespace, config: ExperimentConfig) -> int:
    report = verify_theory(config, args.suite)
    report.write(config.output_dir)
    for suite in report.suites:
        print(f"{'PASS' if suite.passed else 'FAIL'}  {suite.name}")
    return EXIT_OK if report.passed else EXIT_VERIFICATION_FAILED


COMMANDS = {
    "design": run_design,
    "simulate": run_simulate,
    "estimate": run_estimate,
    "experiment": run_experiment,
    "verify-theory": run_verify,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _configuration(args)
        return COMMANDS[args.command](args, config)
    except SentinelInferError as exc:
        logger.error("%s: %s", type(exc).__name__, exc.message)
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
