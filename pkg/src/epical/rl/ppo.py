"""Proximal policy optimization for the calibration environment."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ValidationError
from .env import CalibEnv, ResetMode
from .policy import PARAM_ORDER, Adam, PolicyNet, log_softmax, softmax


@dataclass(frozen=True)
class PpoConfig:
    """PPO hyperparameters.

    ``reward_scale`` multiplies rewards before advantage and value
    computation only (recorded transitions keep the raw ``-MAE``).  ``None``
    picks ``1 / max(1, MAE at the first reset)`` so value targets are O(1).
    """

    clip_eps: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs_per_update: int = 4
    minibatch: int = 64
    rollout_steps: int = 1024
    learning_rate: float = 3e-4
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    reward_scale: float | None = None
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValidationError("clip_eps must lie in (0, 1)")
        if not 0 < self.discount <= 1:
            raise ValidationError("discount must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValidationError("gae_lambda must lie in [0, 1]")
        for name in ("epochs_per_update", "minibatch", "rollout_steps", "hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.max_grad_norm <= 0:
            raise ValidationError("learning_rate and max_grad_norm must be > 0")
        if self.reward_scale is not None and self.reward_scale <= 0:
            raise ValidationError("reward_scale must be > 0")


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    log_prob_old: float
    value_estimate: float
    done: bool
    truncated: bool = False      # episode cut by max_steps: bootstrap from next_value
    next_value: float = 0.0
    advantage: float = 0.0
    return_: float = 0.0


@dataclass
class UpdateDiagnostics:
    mean_ratio: float = 1.0
    clip_fraction: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    policy_loss: float = 0.0
    value_loss: float = 0.0
    failed: bool = False
    message: str = ""


def observe(env: CalibEnv, state) -> np.ndarray:
    """Map a state from the box to ``[-1, 1]`` per coordinate."""
    return 2.0 * (np.asarray(state) - env.lower) / (env.upper - env.lower) - 1.0


def compute_gae(batch, discount, lam, scale=1.0):
    """Fill ``advantage`` and ``return_`` on a time-ordered rollout in place."""
    adv = 0.0
    for t in reversed(range(len(batch))):
        tr = batch[t]
        if tr.done and not tr.truncated:
            next_v, carry = 0.0, 0.0
        elif tr.done:
            next_v, carry = tr.next_value, 0.0
        else:
            next_v, carry = tr.next_value, adv
        delta = scale * tr.reward + discount * next_v - tr.value_estimate
        adv = delta + discount * lam * carry
        tr.advantage = adv
        tr.return_ = adv + tr.value_estimate


def clipped_surrogate(logp_new, logp_old, adv, eps):
    """Per-sample ``min(r A, clip(r, 1-eps, 1+eps) A)`` and its derivative in ``logp_new``.

    Where the clipped branch is strictly smaller the derivative is zero.
    """
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    surr = np.minimum(unclipped, clipped)
    d_logp = np.where(unclipped <= clipped, unclipped, 0.0)
    return surr, d_logp, ratio


def surrogate_objective(policy: PolicyNet, obs, actions, logp_old, adv, eps):
    """Mean clipped surrogate over a batch and its gradient (flat, all weights)."""
    logits, _, cache = policy.forward(obs)
    logp_all = log_softmax(logits)
    idx = np.arange(len(actions))
    surr, d_logp, _ = clipped_surrogate(logp_all[idx, actions], logp_old, adv, eps)
    n = len(actions)
    onehot = np.zeros_like(logits)
    onehot[idx, actions] = 1.0
    d_logits = (d_logp / n)[:, None] * (onehot - softmax(logits))
    g = policy.backward(cache, d_logits, np.zeros(n))
    return float(surr.mean()), np.concatenate([g[k].ravel() for k in PARAM_ORDER])


def ppo_update(policy: PolicyNet, batch, config: PpoConfig, optimizer: Adam | None = None,
               rng=None, gae: bool = False, scale: float = 1.0) -> UpdateDiagnostics:
    """Run ``epochs_per_update`` passes of minibatch PPO on ``batch`` in place.

    The loss minimized per minibatch is
    ``-surrogate + value_coeff * 0.5 * (V - return)^2 - entropy_coeff * H``.
    Transitions must carry ``advantage`` and ``return_``; ``gae=True``
    computes them first from the value estimates (``scale`` multiplies the
    rewards).  A non-finite loss restores the pre-update weights and sets
    ``failed``.
    """
    if not batch:
        raise ValidationError("ppo_update needs a non-empty batch")
    if gae:
        compute_gae(batch, config.discount, config.gae_lambda, scale)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    optimizer = optimizer or Adam(policy.params, config.learning_rate)
    snapshot = {k: v.copy() for k, v in policy.params.items()}

    obs = np.array([t.state for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    logp_old = np.array([t.log_prob_old for t in batch])
    adv = np.array([t.advantage for t in batch])
    returns = np.array([t.return_ for t in batch])
    if config.normalize_advantages and len(adv) > 1:
        sd = adv.std()
        adv = (adv - adv.mean()) / sd if sd > 1e-12 else adv - adv.mean()

    eps = config.clip_eps
    n = len(batch)
    ratios, clipped, ents, kls, pls, vls = [], [], [], [], [], []
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            mb = order[start:start + config.minibatch]
            m = len(mb)
            logits, values, cache = policy.forward(obs[mb])
            logp_all = log_softmax(logits)
            probs = np.exp(logp_all)
            idx = np.arange(m)
            a = actions[mb]
            surr, d_logp, ratio = clipped_surrogate(logp_all[idx, a], logp_old[mb], adv[mb], eps)
            entropy = -(probs * logp_all).sum(axis=1)
            v_err = values - returns[mb]
            loss = -surr.mean() + config.value_coeff * 0.5 * np.mean(v_err ** 2) \
                - config.entropy_coeff * entropy.mean()
            if not math.isfinite(loss):
                policy.params = snapshot
                return UpdateDiagnostics(failed=True, message="non-finite loss; update aborted")
            onehot = np.zeros_like(logits)
            onehot[idx, a] = 1.0
            d_logits = -(d_logp / m)[:, None] * (onehot - probs)
            # dH/dz_j = -p_j (log p_j + H)
            d_logits += config.entropy_coeff / m * probs * (logp_all + entropy[:, None])
            d_values = config.value_coeff * v_err / m
            grads = policy.backward(cache, d_logits, d_values)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if not math.isfinite(norm):
                policy.params = snapshot
                return UpdateDiagnostics(failed=True, message="non-finite gradient; update aborted")
            if norm > config.max_grad_norm:
                grads = {k: g * (config.max_grad_norm / norm) for k, g in grads.items()}
            optimizer.step(policy.params, grads)
            ratios.append(ratio.mean())
            clipped.append(np.mean(np.abs(ratio - 1.0) > eps))
            ents.append(entropy.mean())
            kls.append(np.mean(logp_old[mb] - logp_all[idx, a]))
            pls.append(-surr.mean())
            vls.append(0.5 * np.mean(v_err ** 2))
    return UpdateDiagnostics(float(np.mean(ratios)), float(np.mean(clipped)), float(np.mean(ents)),
                             float(np.mean(kls)), float(np.mean(pls)), float(np.mean(vls)))


@dataclass
class TrainingReport:
    best_params: list
    best_mae: float
    initial_mae: float
    reward_curve: list
    steps: int
    episodes: int
    updates: int
    threshold_reached: bool
    diagnostics: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _seeds(seed):
    env_ss, act_ss, mb_ss = np.random.SeedSequence(seed).spawn(3)
    return (int(env_ss.generate_state(1)[0]), np.random.default_rng(act_ss),
            np.random.default_rng(mb_ss))


def train(env: CalibEnv, policy: PolicyNet | None, config: PpoConfig, total_steps: int,
          reset_mode="random-uniform", guess=None, update: bool = True) -> TrainingReport:
    """Alternate rollouts and PPO updates, tracking the best state by MAE.

    Training stops early once a state reaches ``env.mae_threshold``
    (including the very first reset).  ``update=False`` keeps the initial
    policy fixed, which with a fresh network is a near-uniform random walk.
    """
    if total_steps < config.rollout_steps:
        raise ValidationError("total_steps must be >= rollout_steps")
    env_seed, act_rng, mb_rng = _seeds(config.seed)
    policy = policy or PolicyNet(env.n_params, env.n_actions, config.hidden, seed=config.seed)
    if policy.n_inputs != env.n_params or policy.n_actions != env.n_actions:
        raise ValidationError("policy shape does not match the environment")
    optimizer = Adam(policy.params, config.learning_rate)

    state = env.reset(mode=reset_mode, guess=guess, seed=env_seed)
    initial_mae = env.mae(state)
    best_state, best_mae = state.copy(), initial_mae
    scale = config.reward_scale or 1.0 / max(1.0, initial_mae)
    report = TrainingReport(best_state.tolist(), best_mae, initial_mae, [], 0, 1, 0, False,
                            config=asdict(config))
    if initial_mae <= env.mae_threshold:
        report.threshold_reached = True
        return report

    steps = 0
    episodes = 1
    while steps < total_steps:
        batch = []
        logits, values, _ = policy.forward(observe(env, state))
        for _ in range(min(config.rollout_steps, total_steps - steps)):
            probs = softmax(logits[0])
            action = int(act_rng.choice(env.n_actions, p=probs))
            nxt, reward, done = env.step(action)
            steps += 1
            mae = -reward
            if mae < best_mae:
                best_state, best_mae = nxt.copy(), mae
            n_logits, n_values, _ = policy.forward(observe(env, nxt))
            truncated = done and mae > env.mae_threshold
            batch.append(Transition(observe(env, state), action, reward, observe(env, nxt),
                                    float(np.log(probs[action])), float(values[0]), done,
                                    truncated, float(n_values[0])))
            if mae <= env.mae_threshold:
                break
            if done:
                state = env.reset()
                episodes += 1
                logits, values, _ = policy.forward(observe(env, state))
            else:
                state, logits, values = nxt, n_logits, n_values
        report.reward_curve.append(float(np.mean([t.reward for t in batch])))
        if best_mae <= env.mae_threshold:
            report.threshold_reached = True
            break
        if update:
            compute_gae(batch, config.discount, config.gae_lambda, scale)
            diag = ppo_update(policy, batch, config, optimizer, mb_rng)
            report.diagnostics.append(asdict(diag))
            report.updates += 1
    report.best_params = best_state.tolist()
    report.best_mae = best_mae
    report.steps = steps
    report.episodes = episodes
    return report


def random_walk(env: CalibEnv, total_steps: int, seed: int = 0, reset_mode="random-uniform",
                guess=None) -> float:
    """Best MAE reached by uniformly random actions: the no-learning baseline."""
    env_seed, act_rng, _ = _seeds(seed)
    state = env.reset(mode=reset_mode, guess=guess, seed=env_seed)
    best = env.mae(state)
    for _ in range(total_steps):
        if best <= env.mae_threshold:
            break
        _, reward, done = env.step(int(act_rng.integers(env.n_actions)))
        best = min(best, -reward)
        if done:
            env.reset()
    return best
