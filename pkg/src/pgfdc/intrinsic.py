"""Intrinsic reward learner: discriminator and curiosity training, reward terms,
and a tabular occupancy-measure / Jensen-Shannon oracle used for verification.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .gradcore import tensor as T
from .gradcore.layers import RELU_GAIN, Dense, Module, one_hot
from .gradcore.optim import AdamState, adam_step
from .models import CuriosityNets, DiscriminatorNet
from .rlcore import TrainingError

EXPERT, GENERATED = 1, 0

_DEFAULT_WEIGHTS = {
    "gridworld14": (1e-2, 1e-3),
    "keyworld14": (1e-3, 1e-4),
    "fourrooms": (1e-3, 1e-4),
}


@dataclass
class RewardWeights:
    lambda_d: float = 1e-2
    lambda_c: float = 1e-3
    beta: float = 1e-2
    disc_clamp: float = 1e-6

    @classmethod
    def for_env(cls, env_id: str) -> "RewardWeights":
        lam_d, lam_c = _DEFAULT_WEIGHTS[env_id]
        return cls(lambda_d=lam_d, lambda_c=lam_c)

    def __post_init__(self):
        if self.lambda_d < 0 or self.lambda_c < 0:
            raise ValueError("reward weights must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


# ------------------------------------------------------------------ reward terms
def demonstration_reward(d, clamp: float = 1e-6) -> np.ndarray:
    """log of the clamped discriminator score; always <= 0."""
    return np.log(np.clip(np.asarray(d, dtype=np.float64), clamp, 1.0 - clamp))


def curiosity_reward(l_f) -> np.ndarray:
    """(e^z - 1) / (e^z + 1) of the forward loss, evaluated as tanh(z/2) to avoid overflow."""
    return np.tanh(0.5 * np.asarray(l_f, dtype=np.float64))


def compose_reward(r_e, r_d, r_c, weights: RewardWeights):
    return np.asarray(r_e) + weights.lambda_d * np.asarray(r_d) + weights.lambda_c * np.asarray(r_c)


# ------------------------------------------------------------------ replay buffer
class ReplayBuffer:
    """Bounded FIFO ring of (s_t, a_t, s_{t+1}) with uniform sampling.

    One writer, any number of readers; a lock keeps each sample consistent.
    """

    def __init__(self, capacity: int = 50_000, obs_shape=(3, 7, 7)):
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape))
        self.next_obs = np.zeros((capacity, *obs_shape))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self._size = 0
        self._head = 0
        self.total_added = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._size

    def add(self, obs: np.ndarray, actions: np.ndarray, next_obs: np.ndarray) -> None:
        obs = np.asarray(obs).reshape(-1, *self.obs.shape[1:])
        next_obs = np.asarray(next_obs).reshape(-1, *self.obs.shape[1:])
        actions = np.asarray(actions).reshape(-1)
        n = actions.size
        if n > self.capacity:
            obs, actions, next_obs = obs[-self.capacity :], actions[-self.capacity :], next_obs[-self.capacity :]
            n = self.capacity
        with self._lock:
            idx = (self._head + np.arange(n)) % self.capacity
            self.obs[idx] = obs
            self.next_obs[idx] = next_obs
            self.actions[idx] = actions
            self._head = int((self._head + n) % self.capacity)
            self._size = min(self._size + n, self.capacity)
            self.total_added += n

    def sample(self, batch: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        with self._lock:
            if self._size == 0:
                raise ValueError("cannot sample from an empty buffer")
            idx = rng.integers(0, self._size, size=batch)
            return self.obs[idx].copy(), self.actions[idx].copy(), self.next_obs[idx].copy()


# -------------------------------------------------------------------- learners
def discriminator_objective(
    net: DiscriminatorNet, exp_obs, exp_act, gen_obs, gen_act, literal: bool = False
) -> T.Tensor:
    """E_expert[log D] + E_generated[log(1 - D)], or E_generated[1 - log D] when ``literal``."""
    z_e = net.logits(exp_obs, exp_act)
    z_g = net.logits(gen_obs, gen_act)
    expert_term = T.log_sigmoid(z_e).mean()
    if literal:
        gen_term = (1.0 - T.log_sigmoid(z_g)).mean()
    else:
        gen_term = T.log_sigmoid(-z_g).mean()
    return expert_term + gen_term


class DiscriminatorLearner:
    def __init__(
        self,
        net: DiscriminatorNet,
        lr: float = 1e-3,
        batch_size: int = 256,
        literal_objective: bool = False,
    ):
        self.net = net
        self.params = net.parameters()
        self.opt = AdamState.for_params(self.params, lr=lr)
        self.batch_size = batch_size
        self.literal_objective = literal_objective

    def step(self, exp_obs, exp_act, gen_obs, gen_act) -> float:
        obj = discriminator_objective(self.net, exp_obs, exp_act, gen_obs, gen_act, self.literal_objective)
        if not np.isfinite(obj.data):
            raise TrainingError(f"non-finite discriminator objective {float(obj.data)}")
        self.net.zero_grad()
        (-obj).backward()
        adam_step(self.params, self.opt)
        return float(obj.data)

    def update(
        self,
        expert_obs: np.ndarray,
        expert_actions: np.ndarray,
        buffer: ReplayBuffer,
        steps: int,
        rng: np.random.Generator,
    ) -> list[float]:
        """``steps`` Adam ascent steps on freshly sampled expert/generated batches.

        Returns the objective measured on each step's batch before its update.
        """
        n_exp = len(expert_actions)
        if n_exp == 0 or len(buffer) == 0:
            raise ValueError("discriminator update needs non-empty expert and generated data")
        curve = []
        for _ in range(steps):
            bs = min(self.batch_size, len(buffer))
            ei = rng.integers(0, n_exp, size=bs)
            g_obs, g_act, _ = buffer.sample(bs, rng)
            curve.append(self.step(expert_obs[ei], expert_actions[ei], g_obs, g_act))
        return curve


def curiosity_loss(nets: CuriosityNets, s_t, a_t, s_next, beta: float):
    out = nets(s_t, a_t, s_next)
    return (1.0 - beta) * out.l_ei + beta * out.l_f, out


class CuriosityLearner:
    def __init__(self, nets: CuriosityNets, lr: float = 1e-3, beta: float = 1e-2, batch_size: int = 256):
        self.nets = nets
        self.params = nets.parameters()
        self.opt = AdamState.for_params(self.params, lr=lr)
        self.beta = beta
        self.batch_size = batch_size

    def step(self, s_t, a_t, s_next) -> tuple[float, float]:
        loss, out = curiosity_loss(self.nets, s_t, a_t, s_next, self.beta)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite curiosity loss {float(loss.data)}")
        self.nets.zero_grad()
        loss.backward()
        adam_step(self.params, self.opt)
        return float(out.l_ei.data), float(out.l_f.data)

    def update(self, buffer: ReplayBuffer, steps: int, rng: np.random.Generator) -> tuple[list[float], list[float]]:
        l_ei, l_f = [], []
        for _ in range(steps):
            s, a, s2 = buffer.sample(min(self.batch_size, len(buffer)), rng)
            ei, f = self.step(s, a, s2)
            l_ei.append(ei)
            l_f.append(f)
        return l_ei, l_f


class IntrinsicReward:
    """Frozen reward evaluator built from learner parameter snapshots."""

    def __init__(
        self,
        disc: DiscriminatorNet | None,
        cur: CuriosityNets | None,
        clamp: float = 1e-6,
        chunk: int = 512,
    ):
        self.disc = disc
        self.cur = cur
        self.clamp = clamp
        self.chunk = chunk

    def __call__(self, obs, actions, next_obs) -> tuple[np.ndarray, np.ndarray]:
        n = len(actions)
        r_d = np.zeros(n)
        r_c = np.zeros(n)
        with T.no_grad():
            for lo in range(0, n, self.chunk):
                sl = slice(lo, lo + self.chunk)
                if self.disc is not None:
                    r_d[sl] = demonstration_reward(self.disc(obs[sl], actions[sl]).data, self.clamp)
                if self.cur is not None:
                    out = self.cur(obs[sl], actions[sl], next_obs[sl])
                    r_c[sl] = curiosity_reward(out.l_f_per_sample.data)
        return r_d, r_c


# --------------------------------------------------------------- tabular oracle
@dataclass
class TabularMDP:
    """``transitions[s, a, s']`` probabilities and initial distribution ``p0``."""

    transitions: np.ndarray
    p0: np.ndarray

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def grid_mdp(size: int = 3, start: int = 0) -> TabularMDP:
    """Deterministic size x size grid, actions up/right/down/left, bumping walls stays put."""
    n = size * size
    P = np.zeros((n, 4, n))
    moves = [(-1, 0), (0, 1), (1, 0), (0, -1)]
    for s in range(n):
        r, c = divmod(s, size)
        for a, (dr, dc) in enumerate(moves):
            rr, cc = r + dr, c + dc
            if not (0 <= rr < size and 0 <= cc < size):
                rr, cc = r, c
            P[s, a, rr * size + cc] = 1.0
    p0 = np.zeros(n)
    p0[start] = 1.0
    return TabularMDP(P, p0)


@dataclass
class OccupancyTable:
    rho: np.ndarray  # (S, A) unnormalised discounted visitation
    gamma: float

    @property
    def total(self) -> float:
        return float(self.rho.sum())

    def normalized(self) -> np.ndarray:
        return self.rho / self.rho.sum()


def occupancy_oracle(
    mdp: TabularMDP, policy: np.ndarray, gamma: float, horizon: int | None = None, tol: float = 1e-12
) -> OccupancyTable:
    """Discounted occupancy by forward dynamic programming, stopped once gamma^t < tol."""
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy table shape {policy.shape} != {(mdp.n_states, mdp.n_actions)}")
    if np.any(policy < 0) or not np.allclose(policy.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("policy rows must be probability distributions")
    # state-to-state kernel under the policy
    p_ss = np.einsum("sa,sax->sx", policy, mdp.transitions)
    d = mdp.p0.astype(np.float64).copy()
    rho_s = np.zeros(mdp.n_states)
    disc = 1.0
    t = 0
    while disc >= tol and (horizon is None or t < horizon):
        rho_s += disc * d
        d = d @ p_ss
        disc *= gamma
        t += 1
    return OccupancyTable(rho_s[:, None] * policy, gamma)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence (natural log) between two distributions on one support."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("negative probability mass")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(x):
        nz = x > 0
        return float(np.sum(x[nz] * np.log(x[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


# ------------------------------------------- discriminator-based JS estimation
class TabularDiscriminator(Module):
    """Discriminator over one-hot encoded (state, action) indices."""

    def __init__(self, n_pairs: int, rng: np.random.Generator, hidden: int = 32):
        self.n_pairs = n_pairs
        self.fc = Dense(n_pairs, hidden, rng, gain=RELU_GAIN)
        self.out = Dense(hidden, 1, rng)

    def logits(self, idx) -> T.Tensor:
        x = T.Tensor(one_hot(idx, self.n_pairs))
        return T.reshape(self.out(T.relu(self.fc(x))), (-1,))


def js_lower_bound(objective: float) -> float:
    """Map the optimal-discriminator objective back to a JS divergence value."""
    return 0.5 * objective + np.log(2.0)


def estimate_js(
    p: np.ndarray,
    q: np.ndarray,
    rng: np.random.Generator,
    n_samples: int = 20_000,
    steps: int = 400,
    lr: float = 1e-2,
    every: int = 20,
) -> list[tuple[int, float]]:
    """Train a discriminator on samples of ``p`` (label 1) versus ``q`` (label 0).

    Returns ``(step, estimate)`` pairs where each estimate is computed from the
    objective on a held-out sample set, so it is a lower bound in expectation.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    k = p.size
    train_p = rng.choice(k, size=n_samples, p=p / p.sum())
    train_q = rng.choice(k, size=n_samples, p=q / q.sum())
    hold_p = rng.choice(k, size=n_samples, p=p / p.sum())
    hold_q = rng.choice(k, size=n_samples, p=q / q.sum())
    net = TabularDiscriminator(k, rng)
    params = net.parameters()
    opt = AdamState.for_params(params, lr=lr)

    def objective(ip, iq) -> T.Tensor:
        return T.log_sigmoid(net.logits(ip)).mean() + T.log_sigmoid(-net.logits(iq)).mean()

    trace = []
    for step in range(steps + 1):
        if step % every == 0 or step == steps:
            with T.no_grad():
                trace.append((step, js_lower_bound(float(objective(hold_p, hold_q).data))))
        if step == steps:
            break
        obj = objective(train_p, train_q)
        net.zero_grad()
        (-obj).backward()
        adam_step(params, opt)
    return trace


def random_policy_table(n_states: int, n_actions: int, rng: np.random.Generator, concentration: float = 1.0):
    return rng.dirichlet(np.full(n_actions, concentration), size=n_states)
