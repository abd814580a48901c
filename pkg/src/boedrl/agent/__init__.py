from .policies import FixedDesignPolicy, PolicyNet, RandomPolicy, TwinQ, select_action
from .td3 import TD3Agent, TD3Hyperparameters, TD3Losses, td3_target, td3_update
from .trainer import Trainer, TrainingResult, evaluate_policy, train

__all__ = [
    "FixedDesignPolicy",
    "PolicyNet",
    "RandomPolicy",
    "TD3Agent",
    "TD3Hyperparameters",
    "TD3Losses",
    "Trainer",
    "TrainingResult",
    "TwinQ",
    "evaluate_policy",
    "select_action",
    "td3_target",
    "td3_update",
    "train",
]
