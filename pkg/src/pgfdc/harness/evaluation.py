"""Evaluation protocols: average extrinsic return and average discriminator score."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ..gridworlds import GridEnv, Trajectory, get_spec
from ..models import DiscriminatorNet, PolicyNet
from ..rlcore import sample_actions

# a trained policy, the string "random", or a trajectory replayed open-loop
Actor = Union[PolicyNet, str, Trajectory]


@dataclass
class EvalReport:
    env_id: str
    seeds: list[int]
    episodes: int
    per_episode_returns: list[list[float]]
    mean: float
    std: float
    checkpoint_hash: str = ""
    mean_disc_score: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        if d["mean_disc_score"] is None:
            del d["mean_disc_score"]
        if not d["extra"]:
            del d["extra"]
        return json.dumps(d, indent=2)


def _actions(actor: Actor, obs: np.ndarray, step: int, n_actions: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(actor, PolicyNet):
        probs, _ = actor.policy_forward(obs)
        return sample_actions(probs, rng)
    if isinstance(actor, Trajectory):
        return np.full(len(obs), actor.actions[min(step, len(actor.actions) - 1)])
    if actor == "random":
        return rng.integers(0, n_actions, size=len(obs))
    raise TypeError(f"unsupported actor {actor!r}")


def run_episodes(
    actor: Actor, env_id: str, episodes: int, rng: np.random.Generator
) -> tuple[list[float], np.ndarray, np.ndarray]:
    """Play ``episodes`` episodes side by side.

    Returns per-episode extrinsic returns and every visited (observation, action) pair.
    """
    envs = [GridEnv(env_id) for _ in range(episodes)]
    obs = np.stack([e.reset(i) for i, e in enumerate(envs)])
    na = envs[0].action_count
    returns = np.zeros(episodes)
    alive = np.ones(episodes, dtype=bool)
    seen_obs, seen_act = [], []
    step = 0
    while alive.any():
        idx = np.flatnonzero(alive)
        acts = _actions(actor, obs[idx], step, na, rng)
        seen_obs.append(obs[idx].copy())
        seen_act.append(acts)
        for i, a in zip(idx, acts):
            o, r, done, _ = envs[i].step(int(a))
            obs[i] = o
            returns[i] += r
            if done:
                alive[i] = False
        step += 1
    return returns.tolist(), np.concatenate(seen_obs), np.concatenate(seen_act)


def evaluate_policy(
    actor: Actor,
    env_id: str,
    seeds: int | list[int] = 10,
    episodes: int = 10,
    disc: DiscriminatorNet | None = None,
    checkpoint_hash: str = "",
) -> EvalReport:
    """Stochastic rollouts over ``seeds`` x ``episodes``; returns count only the extrinsic reward."""
    if isinstance(actor, PolicyNet) and actor.n_actions != get_spec(env_id).action_count:
        raise ValueError(f"policy has {actor.n_actions} actions, {env_id} needs {get_spec(env_id).action_count}")
    if isinstance(actor, Trajectory) and actor.env_id != env_id:
        raise ValueError(f"trajectory recorded on {actor.env_id}, evaluating on {env_id}")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    per_seed, scores = [], []
    for s in seed_list:
        rets, obs, acts = run_episodes(actor, env_id, episodes, np.random.default_rng(s))
        per_seed.append(rets)
        if disc is not None:
            scores.append(disc.score(obs, acts))
    flat = np.asarray(per_seed).ravel()
    return EvalReport(
        env_id=env_id,
        seeds=seed_list,
        episodes=episodes,
        per_episode_returns=per_seed,
        mean=float(flat.mean()),
        std=float(flat.std()),
        checkpoint_hash=checkpoint_hash,
        mean_disc_score=float(np.concatenate(scores).mean()) if scores else None,
    )


def evaluate_discriminator_score(
    source: Actor, disc: DiscriminatorNet, env_id: str, seeds: int | list[int] = 10, episodes: int = 10
) -> float:
    """Mean D(s, a) over every state-action pair visited by ``source``.

    A trajectory source is scored on its own recorded pairs.
    """
    if isinstance(source, Trajectory):
        return float(disc.score(source.obs_array(), source.action_array()).mean())
    return float(evaluate_policy(source, env_id, seeds, episodes, disc=disc).mean_disc_score)


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
