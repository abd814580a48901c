from __future__ import annotations

from typing import Literal, TypedDict

from boedrl import __version__

PRODUCER: str = f"boedrl/{__version__}"

BoundKindName = Literal["spce", "snmc", "infonce"]
RewardKindName = Literal["sparse", "dense", "spce"]


# ==== Evaluation ====


class EvalReportRecord(TypedDict):
    bound_kind: BoundKindName
    value: float
    std_error: float
    num_contrastive: int
    num_rollouts: int
    model: str
    policy: str
    checkpoint: str | None
    timestamp: str
    config_hash: str
    producer: str


# ==== Training curves ====


class MetricsRow(TypedDict):
    step: int
    q_loss: float
    policy_loss: float
    critic_loss: float
    eval_bound: float
    eval_stderr: float
    wall_clock: float
    config_hash: str


class CurveRow(TypedDict):
    step: int
    reward_kind: RewardKindName
    eval_bound: float
    eval_stderr: float


METRICS_COLUMNS: tuple[str, ...] = tuple(MetricsRow.__annotations__)
CURVE_COLUMNS: tuple[str, ...] = tuple(CurveRow.__annotations__)
EVAL_REPORT_KEYS: tuple[str, ...] = tuple(EvalReportRecord.__annotations__)
