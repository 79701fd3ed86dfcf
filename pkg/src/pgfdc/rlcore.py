"""Rollout collection, generalized advantage estimation, PPO-Clip and A2C updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gradcore import tensor as T
from .gradcore.optim import AdamState, adam_step, clip_grad_norm
from .gridworlds import VecEnv
from .models import PolicyNet


class TrainingError(RuntimeError):
    """A non-finite loss or parameter was produced during an update."""


@dataclass
class PpoHyper:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    ent_coef: float = 1e-2
    vf_coef: float = 0.5
    lr: float = 1e-3
    epochs: int = 4
    minibatch: int = 256
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.clip <= 0:
            raise ValueError(f"clip must be positive, got {self.clip}")


# (obs, actions, next_obs) -> (r_d, r_c), each shaped like actions
IntrinsicFn = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass
class RolloutBatch:
    """Time-major rollout: arrays are (steps, n_envs, ...)."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    r_e: np.ndarray
    r_d: np.ndarray
    r_c: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    lambda_d: float = 0.0
    lambda_c: float = 0.0
    episode_returns: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.actions.size

    def flat(self) -> dict[str, np.ndarray]:
        n = self.size
        out = {
            "obs": self.obs.reshape(n, *self.obs.shape[2:]),
            "actions": self.actions.reshape(n),
            "log_probs": self.log_probs.reshape(n),
            "values": self.values.reshape(n),
        }
        if self.advantages is not None:
            out["advantages"] = self.advantages.reshape(n)
            out["returns"] = self.returns.reshape(n)
        return out


def compose_rewards(r_e, r_d, r_c, lambda_d: float, lambda_c: float) -> np.ndarray:
    return np.asarray(r_e) + lambda_d * np.asarray(r_d) + lambda_c * np.asarray(r_c)


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling, one uniform draw per row."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    a = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)


def collect_rollout(
    venv: VecEnv,
    policy: PolicyNet | None,
    horizon: int,
    rng: np.random.Generator,
    intrinsic: IntrinsicFn | None = None,
    lambda_d: float = 0.0,
    lambda_c: float = 0.0,
) -> RolloutBatch:
    """Run ``horizon`` environment steps split evenly over the vectorised envs.

    ``policy=None`` acts uniformly at random. The intrinsic reward terms are
    scored in one batch after collection; they depend only on the frozen
    learner snapshot behind ``intrinsic``, so the result equals per-step scoring.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = venv.n
    if horizon % n:
        raise ValueError(f"horizon {horizon} is not divisible by {n} environments")
    steps = horizon // n
    na = venv.spec.action_count
    obs = np.empty((steps, n, 3, 7, 7))
    next_obs = np.empty_like(obs)
    actions = np.empty((steps, n), dtype=np.int64)
    log_probs = np.empty((steps, n))
    values = np.zeros((steps, n))
    r_e = np.empty((steps, n))
    dones = np.empty((steps, n), dtype=bool)
    ep_returns, ep_lengths = [], []
    for t in range(steps):
        o = venv.obs
        obs[t] = o
        if policy is None:
            probs = np.full((n, na), 1.0 / na)
        else:
            probs, values[t] = policy.policy_forward(o)
        a = sample_actions(probs, rng)
        actions[t] = a
        log_probs[t] = np.log(probs[np.arange(n), a])
        nxt, rew, done, _, finished = venv.step(a)
        next_obs[t] = nxt
        r_e[t] = rew
        dones[t] = done
        for ret, length in finished:
            ep_returns.append(ret)
            ep_lengths.append(length)
    if policy is None:
        last_values = np.zeros(n)
    else:
        _, last_values = policy.policy_forward(venv.obs)
    if intrinsic is not None and (lambda_d or lambda_c):
        flat = steps * n
        r_d, r_c = intrinsic(
            obs.reshape(flat, 3, 7, 7), actions.reshape(flat), next_obs.reshape(flat, 3, 7, 7)
        )
        r_d = np.asarray(r_d).reshape(steps, n)
        r_c = np.asarray(r_c).reshape(steps, n)
    else:
        r_d = np.zeros((steps, n))
        r_c = np.zeros((steps, n))
    return RolloutBatch(
        obs=obs,
        actions=actions,
        log_probs=log_probs,
        values=values,
        r_e=r_e,
        r_d=r_d,
        r_c=r_c,
        rewards=compose_rewards(r_e, r_d, r_c, lambda_d, lambda_c),
        next_obs=next_obs,
        dones=dones,
        last_values=last_values,
        lambda_d=lambda_d,
        lambda_c=lambda_c,
        episode_returns=ep_returns,
        episode_lengths=ep_lengths,
    )


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE(gamma, lambda) over time-major arrays; no bootstrapping across ``done``.

    1-D inputs are treated as a single environment.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    one_d = rewards.ndim == 1
    if one_d:
        rewards = rewards[:, None]
        values = np.asarray(values, dtype=np.float64)[:, None]
        dones = np.asarray(dones, dtype=bool)[:, None]
        last_values = np.atleast_1d(np.asarray(last_values, dtype=np.float64))
    if not (rewards.shape == np.shape(values) == np.shape(dones)):
        raise ValueError(f"shape mismatch: rewards {rewards.shape}, values {np.shape(values)}, dones {np.shape(dones)}")
    steps = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1])
    for t in reversed(range(steps)):
        nonterminal = 1.0 - dones[t]
        next_v = last_values if t == steps - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    ret = adv + values
    if one_d:
        return adv[:, 0], ret[:, 0]
    return adv, ret


def attach_gae(batch: RolloutBatch, hp: PpoHyper) -> RolloutBatch:
    batch.advantages, batch.returns = compute_gae(
        batch.rewards, batch.values, batch.dones, batch.last_values, hp.gamma, hp.gae_lambda
    )
    return batch


def normalize(adv: np.ndarray) -> np.ndarray:
    if adv.size < 2:
        return adv
    return (adv - adv.mean()) / (adv.std() + 1e-12)


def _check_finite(loss: T.Tensor, what: str, stats: dict) -> None:
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite {what} loss: {stats}")


def ppo_loss(policy: PolicyNet, mb: dict[str, np.ndarray], hp: PpoHyper, clip: float | None = None):
    """Negated PPO-Clip surrogate plus entropy and value terms, as a tensor to minimise."""
    eps = hp.clip if clip is None else clip
    logits, values = policy(mb["obs"])
    logp_all = T.log_softmax(logits)
    logp = T.take_rows(logp_all, mb["actions"])
    ratio = T.exp(logp - mb["log_probs"])
    adv = mb["advantages"]
    surr = T.minimum(ratio * adv, T.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
    pg_loss = -surr.mean()
    probs = T.exp(logp_all)
    entropy = -T.tsum(probs * logp_all, axis=1).mean()
    vdiff = values - mb["returns"]
    v_loss = (vdiff * vdiff).mean()
    loss = pg_loss - hp.ent_coef * entropy + hp.vf_coef * v_loss
    log_ratio = logp.data - mb["log_probs"]
    stats = {
        "policy_loss": float(pg_loss.data),
        "value_loss": float(v_loss.data),
        "entropy": float(entropy.data),
        "approx_kl": float(np.mean(np.expm1(log_ratio) - log_ratio)),
        "clipfrac": float(np.mean(np.abs(ratio.data - 1.0) > eps)),
    }
    return loss, stats


def a2c_loss(policy: PolicyNet, mb: dict[str, np.ndarray], hp: PpoHyper):
    logits, values = policy(mb["obs"])
    logp_all = T.log_softmax(logits)
    logp = T.take_rows(logp_all, mb["actions"])
    pg_loss = -(logp * mb["advantages"]).mean()
    probs = T.exp(logp_all)
    entropy = -T.tsum(probs * logp_all, axis=1).mean()
    vdiff = values - mb["returns"]
    v_loss = (vdiff * vdiff).mean()
    loss = pg_loss - hp.ent_coef * entropy + hp.vf_coef * v_loss
    stats = {
        "policy_loss": float(pg_loss.data),
        "value_loss": float(v_loss.data),
        "entropy": float(entropy.data),
        "approx_kl": 0.0,
        "clipfrac": 0.0,
    }
    return loss, stats


def _prepared(batch: RolloutBatch, hp: PpoHyper) -> dict[str, np.ndarray]:
    if batch.advantages is None:
        attach_gae(batch, hp)
    data = batch.flat()
    if hp.normalize_advantages:
        data["advantages"] = normalize(data["advantages"])
    return data


def _apply(policy: PolicyNet, opt: AdamState, loss: T.Tensor, hp: PpoHyper, stats: dict, what: str) -> None:
    _check_finite(loss, what, stats)
    params = policy.parameters()
    policy.zero_grad()
    loss.backward()
    stats["grad_norm"] = clip_grad_norm(params, hp.max_grad_norm)
    adam_step(params, opt)
    if not T.parameters_finite(params):
        raise TrainingError(f"{what} update produced non-finite parameters: {stats}")


def ppo_update(
    policy: PolicyNet, opt: AdamState, batch: RolloutBatch, hp: PpoHyper, rng: np.random.Generator
) -> dict[str, float]:
    """Several epochs of minibatch PPO-Clip; returns averaged loss components."""
    data = _prepared(batch, hp)
    n = data["actions"].size
    if n == 0:
        raise ValueError("empty batch")
    mbsize = min(hp.minibatch, n)
    acc: dict[str, list[float]] = {}
    for _ in range(hp.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mbsize):
            idx = perm[start : start + mbsize]
            mb = {k: v[idx] for k, v in data.items()}
            loss, stats = ppo_loss(policy, mb, hp)
            _apply(policy, opt, loss, hp, stats, "ppo")
            for k, v in stats.items():
                acc.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def a2c_update(policy: PolicyNet, opt: AdamState, batch: RolloutBatch, hp: PpoHyper) -> dict[str, float]:
    """One full-batch advantage actor-critic step."""
    data = _prepared(batch, hp)
    if data["actions"].size == 0:
        raise ValueError("empty batch")
    loss, stats = a2c_loss(policy, data, hp)
    _apply(policy, opt, loss, hp, stats, "a2c")
    return stats
