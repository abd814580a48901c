from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from boedrl.agent import RandomPolicy, Trainer, evaluate_policy, train
from boedrl.artifacts import append_csv_rows, append_json_record
from boedrl.config import RunConfig, get_settings
from boedrl.diagnostics import GRADIENT_CHECKS, INVARIANT_CHECKS, Check, run_checks
from boedrl.env import DesignPolicy, simulate_rollouts
from boedrl.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    NumericError,
    UnsupportedCapabilityError,
)
from boedrl.estimators import BoundKind, posterior_estimate
from boedrl.simulators import MODEL_REGISTRY, build_model
from boedrl.types.records import CURVE_COLUMNS, PRODUCER, CurveRow, EvalReportRecord

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# -- subcommands ---------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    result = train(
        config,
        reward_kind=args.reward_kind,
        output_dir=Path(args.output_dir) if args.output_dir else None,
        progress=not args.no_progress,
    )
    print(json.dumps({"checkpoint": str(result.checkpoint), "metrics": str(result.metrics)}))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    override = RunConfig.load(args.config) if args.config else None
    policy: DesignPolicy
    if args.random_policy:
        config = override or RunConfig.from_mapping({"model": {"name": args.model}})
        model = build_model(config.model.name, **config.model.params())
        policy = RandomPolicy.for_model(model, config.horizon)
        critic = None
        policy_name, checkpoint = "random", None
    else:
        trainer = Trainer.from_checkpoint(args.checkpoint)
        config = trainer.config
        mismatch = override is not None and override.config_hash() != trainer.config_hash
        if mismatch and not args.force:
            assert override is not None
            raise ConfigError(
                f"{args.config} does not match the checkpoint's config "
                f"({override.config_hash()[:12]} vs {trainer.config_hash[:12]}); pass --force"
            )
        model, policy, critic = trainer.model, trainer.agent.policy, trainer.critic
        policy_name, checkpoint = "trained", str(args.checkpoint)

    estimator = config.estimator
    kind = BoundKind(args.bound or estimator.bound_kind)
    if kind is BoundKind.INFONCE and critic is None:
        raise ContractError("the InfoNCE bound needs a trained critic; pass --checkpoint")
    estimate = evaluate_policy(
        policy,
        model,
        kind,
        args.L or estimator.num_contrastive,
        args.rollouts or estimator.num_rollouts,
        np.random.default_rng(args.seed),
        critic=critic,
    )
    report: EvalReportRecord = {
        "bound_kind": estimate.kind.value,
        "value": estimate.value,
        "std_error": estimate.std_error,
        "num_contrastive": estimate.num_contrastive,
        "num_rollouts": estimate.num_rollouts,
        "model": model.name,
        "policy": policy_name,
        "checkpoint": checkpoint,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config_hash": config.config_hash(),
        "producer": PRODUCER,
    }
    print(json.dumps(report, sort_keys=True))
    output = Path(args.output) if args.output else config.resolved_output_dir() / "eval.jsonl"
    append_json_record(output, report)
    return EXIT_OK


def cmd_posterior(args: argparse.Namespace) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    model = trainer.model
    rng = np.random.default_rng(args.seed)
    theta0 = np.asarray(args.theta0, dtype=np.float64) if args.theta0 else None
    if theta0 is not None and theta0.size != model.parameter_dim:
        raise DimensionError(
            f"{model.name} has {model.parameter_dim} parameters, got {theta0.size}"
        )
    rollout = simulate_rollouts(model, trainer.agent.policy, 1, 1, rng, theta0=theta0)
    posterior = posterior_estimate(rollout.final, trainer.critic, model, args.grid_size, rng)

    names = model.parameter_names
    output = Path(args.output) if args.output else Path(args.checkpoint).parent / "posterior.csv"
    output.unlink(missing_ok=True)
    rows = [
        {**dict(zip(names, theta.tolist(), strict=True)), "weight": weight}
        for theta, weight in zip(posterior.thetas, posterior.weights, strict=True)
    ]
    append_csv_rows(output, [*names, "weight"], rows)
    lows, highs = posterior.quantile_box()
    print(
        json.dumps(
            {
                "theta0": rollout.thetas.theta0[0].tolist(),
                "posterior_mean": posterior.mean().tolist(),
                "box_low": lows.tolist(),
                "box_high": highs.tolist(),
                "effective_sample_size": posterior.effective_sample_size(),
                "output": str(output),
            }
        )
    )
    return EXIT_OK


def cmd_diag(args: argparse.Namespace) -> int:
    run_all = not (args.grad_check or args.invariants)
    checks: tuple[Check, ...] = ()
    if args.grad_check or run_all:
        checks += GRADIENT_CHECKS
    if args.invariants or run_all:
        checks += INVARIANT_CHECKS
    results = run_checks(checks, seed=args.seed)
    for result in results:
        print(f"{'ok' if result.passed else 'FAILED':6} {result.name}: {result.detail}")
    failed = [result.name for result in results if not result.passed]
    if failed:
        print(f"failed properties: {', '.join(failed)}", file=sys.stderr)
        return EXIT_PROPERTY_FAILURE
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    model = build_model(args.model)
    rng = np.random.default_rng(args.seed)
    if args.theta:
        theta = np.asarray(args.theta, dtype=np.float64).reshape(1, -1)
    else:
        theta = model.sample_prior(1, rng)
    latent = model.init_latent(theta, rng)
    design_names = [f"design_{i}" for i in range(model.design_dim)]
    observation_names = [f"observation_{i}" for i in range(model.observation_dim)]
    rows = []
    for index, values in enumerate(args.designs, start=1):
        applied = model.clamp_design(np.asarray(values, dtype=np.float64).reshape(1, -1))
        observation, latent = model.simulate(theta, applied, rng, latent)
        rows.append(
            {
                "step": index,
                **dict(zip(design_names, applied[0].tolist(), strict=True)),
                **dict(zip(observation_names, observation[0].tolist(), strict=True)),
                **dict(zip(model.parameter_names, theta[0].tolist(), strict=True)),
            }
        )
    columns = ["step", *design_names, *observation_names, *model.parameter_names]
    if args.output:
        Path(args.output).unlink(missing_ok=True)
        append_csv_rows(args.output, columns, rows)
    else:
        print(",".join(columns))
        for row in rows:
            print(",".join(str(row[column]) for column in columns))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    model = build_model(config.model.name, **config.model.params())
    kinds = ["dense", "sparse"] + (["spce"] if model.has_likelihood else [])
    base = config.resolved_output_dir() / "ablation"
    curves: list[CurveRow] = []
    for kind in kinds:
        result = train(
            config, reward_kind=kind, output_dir=base / kind, progress=not args.no_progress
        )
        curves.extend(
            {
                "step": row["step"],
                "reward_kind": kind,  # type: ignore[typeddict-item]
                "eval_bound": row["eval_bound"],
                "eval_stderr": row["eval_stderr"],
            }
            for row in result.rows
        )
        logger.info("%s reward: final eval bound %.4f", kind, result.final_eval.value)
    output = Path(args.output) if args.output else base / "curves.csv"
    output.unlink(missing_ok=True)
    append_csv_rows(output, CURVE_COLUMNS, curves)
    print(json.dumps({"curves": str(output)}))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boedrl", description="Train and evaluate amortized experimental-design policies."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", help="train a design policy from a TOML run config")
    p.add_argument("config", type=Path)
    p.add_argument("--reward-kind", choices=["sparse", "dense", "spce"])
    p.add_argument("--output-dir")
    p.add_argument("--no-progress", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("eval", help="estimate an information bound for a policy")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", type=Path)
    source.add_argument("--random-policy", action="store_true")
    p.add_argument("--config", type=Path)
    p.add_argument("--model", choices=sorted(MODEL_REGISTRY), default="location_finding")
    p.add_argument("--bound", choices=[kind.value for kind in BoundKind])
    p.add_argument("--L", type=int, help="number of contrastive samples")
    p.add_argument("--rollouts", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="JSON-lines file the report is appended to")
    p.add_argument("--force", action="store_true", help="ignore a config/checkpoint mismatch")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("posterior", help="self-normalized posterior from a trained critic")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--theta0", type=_floats, help="ground truth, comma separated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=int, default=10_000)
    p.add_argument("--output")
    p.set_defaults(handler=cmd_posterior)

    p = commands.add_parser("diag", help="run the gradient and invariant property suites")
    p.add_argument("--grad-check", action="store_true")
    p.add_argument("--invariants", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_diag)

    p = commands.add_parser("simulate", help="dump raw simulator draws for given designs")
    p.add_argument("--model", choices=sorted(MODEL_REGISTRY), required=True)
    p.add_argument(
        "--designs",
        type=_floats,
        action="append",
        required=True,
        help="one experiment per flag; use --designs=-1,2 for negative values",
    )
    p.add_argument("--theta", type=_floats)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(handler=cmd_simulate)

    p = commands.add_parser("ablate", help="train with each reward kind and merge the curves")
    p.add_argument("config", type=Path)
    p.add_argument("--output")
    p.add_argument("--no-progress", action="store_true")
    p.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=get_settings().log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.handler(args))
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (
        ConfigError,
        CheckpointError,
        UnsupportedCapabilityError,
        ContractError,
        DimensionError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
