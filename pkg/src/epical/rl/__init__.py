"""Reinforcement-learning calibration: a parameter-nudging environment and PPO."""
from .env import DEFAULT_STEP_SIZES, Action, CalibEnv, ResetMode, RewardWindow
from .policy import Adam, PolicyNet, softmax
from .ppo import (PpoConfig, TrainingReport, Transition, UpdateDiagnostics, clipped_surrogate,
                  compute_gae, observe, ppo_update, random_walk, surrogate_objective, train)

__all__ = [
    "DEFAULT_STEP_SIZES", "Action", "CalibEnv", "ResetMode", "RewardWindow", "Adam", "PolicyNet",
    "softmax", "PpoConfig", "TrainingReport", "Transition", "UpdateDiagnostics", "clipped_surrogate",
    "compute_gae", "observe", "ppo_update", "random_walk", "surrogate_objective", "train",
]
