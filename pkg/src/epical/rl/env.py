"""Calibration as a discrete-action environment.

The state is the parameter vector.  Each action nudges one parameter up or
down by one of a few fixed step sizes (or does nothing); the reward is the
negative MAE of the resulting fit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

DEFAULT_STEP_SIZES = (0.1, 0.01)


class ResetMode(str, enum.Enum):
    RANDOM_UNIFORM = "random-uniform"
    FROM_GUESS = "from-guess"


class RewardWindow(str, enum.Enum):
    FULL = "full"
    TRAIN = "train"


@dataclass(frozen=True)
class Action:
    param: int | None   # None for the no-op
    delta: float

    def describe(self, names) -> str:
        if self.param is None:
            return "no change"
        verb = "increase" if self.delta > 0 else "decrease"
        return f"{verb} {names[self.param]} by {abs(self.delta):g}"


class CalibEnv:
    """Parameter-nudging environment over a calibration problem.

    Parameters
    ----------
    problem : CalibrationProblem
    step_sizes : sequence of float
        Increment magnitudes; every (parameter, size) pair yields an
        increase and a decrease action.
    max_steps : int
        Episode length cap.
    mae_threshold : float
        An episode ends once the MAE drops to this level.
    reward_window : {"full", "train"}
        ``full`` scores the whole horizon (the evaluation metric); ``train``
        only the training days.

    Notes
    -----
    Action ``k < 2 * n_params * n_sizes`` targets parameter
    ``k // (2 * n_sizes)`` with size ``step_sizes[(k // 2) % n_sizes]``,
    increasing on even ``k``; the last action is the no-op.
    """

    def __init__(self, problem, step_sizes=DEFAULT_STEP_SIZES, max_steps: int = 200,
                 mae_threshold: float = 1.0, reward_window="full", seed: int = 0):
        if not step_sizes or any(s <= 0 for s in step_sizes):
            raise ValidationError("step_sizes must be a non-empty list of positive numbers")
        if max_steps < 1:
            raise ValidationError("max_steps must be >= 1")
        self.problem = problem
        self.step_sizes = tuple(float(s) for s in step_sizes)
        self.max_steps = int(max_steps)
        self.mae_threshold = float(mae_threshold)
        self.reward_window = RewardWindow(reward_window)
        self.lower = np.asarray(problem.lower, dtype=np.float64)
        self.upper = np.asarray(problem.upper, dtype=np.float64)
        self.n_params = len(self.lower)
        self.actions = [Action(p, sign * s)
                        for p in range(self.n_params)
                        for s in self.step_sizes
                        for sign in (1.0, -1.0)] + [Action(None, 0.0)]
        self.rng = np.random.default_rng(seed)
        self.state = 0.5 * (self.lower + self.upper)
        self.steps_taken = 0
        self._cache = {}
        self._reset_mode = ResetMode.RANDOM_UNIFORM
        self._guess = None

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def param_names(self):
        spec = getattr(self.problem, "spec", None)
        return [p.name for p in spec.params] if spec is not None else [f"p{i}" for i in range(self.n_params)]

    def _tidy(self, x):
        # rounding keeps repeated increments on an exact lattice (0.4 - 0.1 == 0.3)
        return np.minimum(np.maximum(np.round(x, 12), self.lower), self.upper)

    def mae(self, state) -> float:
        key = tuple(float(v) for v in state)
        hit = self._cache.get(key)
        if hit is None:
            if self.reward_window is RewardWindow.FULL:
                hit = float(self.problem.mae(state))
            else:
                hit = _train_mae(self.problem, state)
            self._cache[key] = hit
        return hit

    def reset(self, mode=None, guess=None, seed=None) -> np.ndarray:
        """Start an episode; the mode and guess persist for later resets."""
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if mode is not None:
            self._reset_mode = ResetMode(mode)
        if guess is not None:
            self._guess = np.asarray(guess, dtype=np.float64)
        if self._reset_mode is ResetMode.FROM_GUESS:
            if self._guess is None:
                raise ValidationError("from-guess reset needs a guess")
            self.state = self._tidy(self._guess)
        else:
            self.state = self._tidy(self.lower + self.rng.random(self.n_params) * (self.upper - self.lower))
        self.steps_taken = 0
        return self.state.copy()

    def step(self, action: int):
        """Apply ``action``; returns ``(next_state, reward, done)``."""
        if not (isinstance(action, (int, np.integer)) and 0 <= action < self.n_actions):
            raise ValidationError(f"action must be an integer in [0, {self.n_actions}), got {action!r}")
        act = self.actions[int(action)]
        nxt = self.state.copy()
        if act.param is not None:
            nxt[act.param] += act.delta
            nxt = self._tidy(nxt)
        self.state = nxt
        self.steps_taken += 1
        mae = self.mae(nxt)
        done = mae <= self.mae_threshold or self.steps_taken >= self.max_steps
        return nxt.copy(), -mae, done

    def threshold_reached(self, state=None) -> bool:
        return self.mae(self.state if state is None else state) <= self.mae_threshold


def _train_mae(problem, state):
    pred = problem.predict(state)
    if pred is None:
        from ..objective import PENALTY
        return PENALTY
    n = problem.train_days
    return float(np.mean(np.abs(pred[:n] - problem.eval_observed[:n])))
