"""Synchronous and asynchronous PGfDC training loops.

Both loops share :class:`LearnerSystem`, which owns the networks, optimisers,
replay buffer and per-consumer random generators. The synchronous loop runs
the PPO, discriminator and curiosity phases in order each iteration. The
asynchronous loop runs them as three threads that exchange immutable,
versioned parameter snapshots and never touch each other's parameters.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import random
import threading
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .gradcore import load_checkpoint, save_checkpoint, spawn_rngs
from .gradcore.optim import AdamState
from .gridworlds import Trajectory, VecEnv, check_demo_matches, get_spec, load_demo
from .intrinsic import (
    CuriosityLearner,
    DiscriminatorLearner,
    IntrinsicReward,
    ReplayBuffer,
    RewardWeights,
)
from .metrics import MetricsRow, write_metrics_csv, write_timing_csv
from .models import CuriosityNets, DiscriminatorNet, PolicyNet
from .rlcore import PpoHyper, TrainingError, a2c_update, attach_gae, collect_rollout, ppo_update

log = logging.getLogger(__name__)

ALGORITHMS = ("pgfdc", "ppo", "a2c", "icm-only", "random")
MODES = ("sync", "async")
SCHEDULES = ("free", "lockstep", "random")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env_id: str = "gridworld14"
    algorithm: str = "pgfdc"
    mode: str = "sync"
    demo: str | None = None
    iterations: int = 460
    seed: int = 0
    out: str | None = None
    horizon: int = 2048
    n_envs: int = 8
    # PPO
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    ent_coef: float = 1e-2
    vf_coef: float = 0.5
    lr: float = 1e-3
    epochs: int = 4
    minibatch: int = 256
    max_grad_norm: float = 0.5
    head_gain: float = 0.01
    # intrinsic reward learner; None weights fall back to the per-environment defaults
    lambda_d: float | None = None
    lambda_c: float | None = None
    beta: float = 1e-2
    disc_clamp: float = 1e-6
    disc_lr: float = 1e-3
    cur_lr: float = 1e-3
    disc_steps: int = 5
    cur_steps: int = 5
    learner_batch: int = 256
    buffer_capacity: int = 50_000
    literal_disc_objective: bool = False
    sigmoid_inverse: bool = False
    # async
    schedule: str = "free"
    schedule_seed: int = 0

    def validate(self) -> "TrainConfig":
        get_spec(self.env_id)
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.algorithm == "pgfdc" and not self.demo:
            raise ConfigError("pgfdc needs a demonstration file (--demo)")
        if self.algorithm == "icm-only" and self.demo:
            raise ConfigError("icm-only is the no-demonstration ablation; drop --demo")
        if self.iterations < 1 or self.horizon < 1 or self.n_envs < 1:
            raise ConfigError("iterations, horizon and n_envs must be positive")
        if self.horizon % self.n_envs:
            raise ConfigError(f"horizon {self.horizon} must be divisible by n_envs {self.n_envs}")
        try:
            self.ppo_hyper()
            self.reward_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @property
    def uses_discriminator(self) -> bool:
        return self.algorithm == "pgfdc"

    @property
    def uses_curiosity(self) -> bool:
        return self.algorithm in ("pgfdc", "icm-only")

    def ppo_hyper(self) -> PpoHyper:
        return PpoHyper(
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            clip=self.clip,
            ent_coef=self.ent_coef,
            vf_coef=self.vf_coef,
            lr=self.lr,
            epochs=self.epochs,
            minibatch=self.minibatch,
            max_grad_norm=self.max_grad_norm,
        )

    def reward_weights(self) -> RewardWeights:
        base = RewardWeights.for_env(self.env_id)
        lam_d = base.lambda_d if self.lambda_d is None else self.lambda_d
        lam_c = base.lambda_c if self.lambda_c is None else self.lambda_c
        if not self.uses_discriminator:
            lam_d = 0.0
        if not self.uses_curiosity:
            lam_c = 0.0
        return RewardWeights(lam_d, lam_c, self.beta, self.disc_clamp)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ snapshots
@dataclass(frozen=True)
class ParamSnapshot:
    kind: str
    version: int
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


class SnapshotStore:
    """Latest-value register for one publisher. Fetch never waits on training."""

    def __init__(self, kind: str, initial: dict[str, np.ndarray]):
        self.kind = kind
        self._lock = threading.Lock()
        self._latest = ParamSnapshot(kind, 0, _frozen(initial), {})

    def publish(self, params: dict[str, np.ndarray], meta: dict | None = None) -> int:
        frozen = _frozen(params)
        with self._lock:
            snap = ParamSnapshot(self.kind, self._latest.version + 1, frozen, dict(meta or {}))
            self._latest = snap
        return snap.version

    def fetch_latest(self) -> ParamSnapshot:
        with self._lock:
            return self._latest


def _frozen(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    for k, v in params.items():
        arr = np.array(v, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        out[k] = arr
    return out


# ------------------------------------------------------------ learner system
def split_policy_params(policy: PolicyNet) -> dict[str, np.ndarray]:
    out = {}
    for k, v in policy.state_dict().items():
        ns = "value" if k.startswith("v_") else "policy"
        out[f"{ns}/{k}"] = v
    return out


def merge_policy_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k.split("/", 1)[1]: v for k, v in params.items() if k.startswith(("policy/", "value/"))}


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


class LearnerSystem:
    """All trainable state of one run, partitioned by owning worker."""

    N_STREAMS = 8

    def __init__(self, cfg: TrainConfig, demo: Trajectory | None = None):
        self.cfg = cfg.validate()
        self.spec = get_spec(cfg.env_id)
        self.hp = cfg.ppo_hyper()
        self.weights = cfg.reward_weights()
        na = self.spec.action_count
        rngs = spawn_rngs(cfg.seed, self.N_STREAMS)
        self.policy = PolicyNet(na, rngs[0], head_gain=cfg.head_gain)
        self.policy_opt = AdamState.for_params(self.policy.parameters(), lr=cfg.lr)
        self.act_rng, self.ppo_rng, self.disc_rng, self.cur_rng = rngs[3:7]
        self.venv = VecEnv(cfg.env_id, cfg.n_envs, seed=cfg.seed)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)

        self.demo = demo
        self.disc_learner = None
        self.cur_learner = None
        self.disc_store = None
        self.cur_store = None
        self._reward_disc = None
        self._reward_cur = None
        if cfg.uses_discriminator:
            if demo is None:
                raise ConfigError("pgfdc needs a demonstration")
            check_demo_matches(demo, cfg.env_id)
            self.expert_obs = demo.obs_array()
            self.expert_actions = demo.action_array()
            self.disc_learner = DiscriminatorLearner(
                DiscriminatorNet(na, rngs[1]),
                lr=cfg.disc_lr,
                batch_size=cfg.learner_batch,
                literal_objective=cfg.literal_disc_objective,
            )
            self.disc_store = SnapshotStore("discriminator", self.disc_learner.net.state_dict())
            self._reward_disc = DiscriminatorNet(na, rngs[1])
        if cfg.uses_curiosity:
            self.cur_learner = CuriosityLearner(
                CuriosityNets(na, rngs[2], sigmoid_inverse=cfg.sigmoid_inverse),
                lr=cfg.cur_lr,
                beta=cfg.beta,
                batch_size=cfg.learner_batch,
            )
            self.cur_store = SnapshotStore("curiosity", self.cur_learner.nets.state_dict())
            self._reward_cur = CuriosityNets(na, rngs[2], sigmoid_inverse=cfg.sigmoid_inverse)
        self.last_return = 0.0
        self.env_steps = 0
        self.fetched_versions: list[tuple[int, int]] = []

    # ---------------------------------------------------------------- phases
    def fetch_snapshots(self) -> tuple[ParamSnapshot | None, ParamSnapshot | None]:
        ds = self.disc_store.fetch_latest() if self.disc_store else None
        cs = self.cur_store.fetch_latest() if self.cur_store else None
        self.fetched_versions.append((ds.version if ds else -1, cs.version if cs else -1))
        return ds, cs

    def reward_function(self, ds: ParamSnapshot | None, cs: ParamSnapshot | None) -> IntrinsicReward | None:
        if ds is None and cs is None:
            return None
        if ds is not None:
            self._reward_disc.load_state_dict(ds.params)
        if cs is not None:
            self._reward_cur.load_state_dict(cs.params)
        return IntrinsicReward(
            self._reward_disc if ds is not None else None,
            self._reward_cur if cs is not None else None,
            clamp=self.weights.disc_clamp,
        )

    def ppo_phase(self, k: int, ds, cs) -> tuple[MetricsRow, Any]:
        """Collect, estimate advantages, update the policy and store tuples into the buffer."""
        cfg = self.cfg
        reward_fn = self.reward_function(ds, cs)
        policy = None if cfg.algorithm == "random" else self.policy
        batch = collect_rollout(
            self.venv,
            policy,
            cfg.horizon,
            self.act_rng,
            intrinsic=reward_fn,
            lambda_d=self.weights.lambda_d,
            lambda_c=self.weights.lambda_c,
        )
        attach_gae(batch, self.hp)
        stats = {}
        if cfg.algorithm == "a2c":
            stats = a2c_update(self.policy, self.policy_opt, batch, self.hp)
        elif cfg.algorithm != "random":
            stats = ppo_update(self.policy, self.policy_opt, batch, self.hp, self.ppo_rng)
        if self.disc_learner is not None or self.cur_learner is not None:
            self.buffer.add(batch.obs, batch.actions, batch.next_obs)
        self.env_steps += batch.size
        if batch.episode_returns:
            self.last_return = float(np.mean(batch.episode_returns))
        row = MetricsRow(
            iteration=k,
            env_steps=self.env_steps,
            mean_return=self.last_return,
            mean_r_d=float(batch.r_d.mean()),
            mean_r_c=float(batch.r_c.mean()),
            ppo_policy_loss=stats.get("policy_loss", float("nan")),
            ppo_value_loss=stats.get("value_loss", float("nan")),
            entropy=stats.get("entropy", float("nan")),
            episodes=len(batch.episode_returns),
        )
        return row, batch

    def disc_phase(self) -> dict:
        curve = self.disc_learner.update(
            self.expert_obs, self.expert_actions, self.buffer, self.cfg.disc_steps, self.disc_rng
        )
        return {"disc_objective": _mean(curve)}

    def cur_phase(self) -> dict:
        l_ei, l_f = self.cur_learner.update(self.buffer, self.cfg.cur_steps, self.cur_rng)
        return {"l_ei": _mean(l_ei), "l_f": _mean(l_f)}

    def publish_disc(self, stats: dict) -> int:
        return self.disc_store.publish(self.disc_learner.net.state_dict(), stats)

    def publish_cur(self, stats: dict) -> int:
        return self.cur_store.publish(self.cur_learner.nets.state_dict(), stats)

    # ------------------------------------------------------------ checkpoint
    def checkpoint_params(self) -> dict[str, np.ndarray]:
        params = split_policy_params(self.policy)
        if self.disc_learner is not None:
            params.update({f"discriminator/{k}": v for k, v in self.disc_learner.net.state_dict().items()})
        if self.cur_learner is not None:
            params.update({f"curiosity/{k}": v for k, v in self.cur_learner.nets.state_dict().items()})
        return params


def _fill_learner_columns(row: MetricsRow, ds: ParamSnapshot | None, cs: ParamSnapshot | None) -> None:
    if ds is not None and "disc_objective" in ds.meta:
        row.disc_objective = ds.meta["disc_objective"]
    if cs is not None and "l_ei" in cs.meta:
        row.l_ei = cs.meta["l_ei"]
        row.l_f = cs.meta["l_f"]


@dataclass
class TrainResult:
    config: TrainConfig
    rows: list[MetricsRow]
    checkpoint: dict[str, np.ndarray]
    fetched_versions: list[tuple[int, int]]
    out_dir: Path | None = None

    @property
    def metrics_path(self) -> Path | None:
        return self.out_dir / "metrics.csv" if self.out_dir else None

    @property
    def checkpoint_path(self) -> Path | None:
        return self.out_dir / "checkpoint.bin" if self.out_dir else None


def _load_demo_for(cfg: TrainConfig) -> Trajectory | None:
    if not cfg.uses_discriminator:
        return None
    demo = load_demo(cfg.demo)
    check_demo_matches(demo, cfg.env_id)
    return demo


# -------------------------------------------------------------------- sync
def train_sync(cfg: TrainConfig, demo: Trajectory | None = None) -> TrainResult:
    cfg.validate()
    if demo is None:
        demo = _load_demo_for(cfg)
    sys_ = LearnerSystem(cfg, demo)
    rows = []
    t0 = time.perf_counter()
    for k in range(1, cfg.iterations + 1):
        ds, cs = sys_.fetch_snapshots()
        try:
            row, _ = sys_.ppo_phase(k, ds, cs)
            if sys_.disc_learner is not None:
                stats = sys_.disc_phase()
                sys_.publish_disc(stats)
                row.disc_objective = stats["disc_objective"]
            if sys_.cur_learner is not None:
                stats = sys_.cur_phase()
                sys_.publish_cur(stats)
                row.l_ei, row.l_f = stats["l_ei"], stats["l_f"]
        except TrainingError as exc:
            raise TrainingError(f"iteration {k}: {exc}") from exc
        row.wall_clock = time.perf_counter() - t0
        rows.append(row)
        if k % 10 == 0 or k == cfg.iterations:
            log.info("iter %d return %.3f steps %d (%.1fs)", k, row.mean_return, row.env_steps, row.wall_clock)
    return _finish(cfg, sys_, rows)


def _finish(cfg: TrainConfig, sys_: LearnerSystem, rows: list[MetricsRow]) -> TrainResult:
    params = sys_.checkpoint_params()
    result = TrainResult(cfg, rows, params, sys_.fetched_versions)
    if cfg.out:
        write_run(result, Path(cfg.out), sys_.spec.layout_hash)
    return result


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_run(result: TrainResult, out: Path, layout_hash: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    write_metrics_csv(result.rows, out / "metrics.csv")
    write_timing_csv(result.rows, out / "timing.csv")
    meta = {
        "env_id": cfg.env_id,
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "action_count": get_spec(cfg.env_id).action_count,
        "layout_hash": layout_hash,
        "head_gain": cfg.head_gain,
    }
    save_checkpoint(out / "checkpoint.bin", result.checkpoint, meta)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "content_hashes": {
            name: git_blob_hash((out / name).read_bytes()) for name in ("metrics.csv", "checkpoint.bin")
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    result.out_dir = out


def load_policy(path: str | Path) -> tuple[PolicyNet, dict]:
    params, meta = load_checkpoint(path)
    policy = PolicyNet(int(meta["action_count"]), np.random.default_rng(0), head_gain=meta.get("head_gain", 0.01))
    policy.load_state_dict(merge_policy_params(params))
    return policy, meta


def load_discriminator(path: str | Path) -> tuple[DiscriminatorNet, dict]:
    params, meta = load_checkpoint(path)
    net = DiscriminatorNet(int(meta["action_count"]), np.random.default_rng(0))
    prefix = "discriminator/"
    sub = {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}
    if not sub:
        raise KeyError(f"{path}: checkpoint holds no discriminator parameters")
    net.load_state_dict(sub)
    return net, meta


# ------------------------------------------------------------------- async
class _Coordinator:
    """Shared control block: stop flag, data signal, turn token and failure record."""

    def __init__(self, cfg: TrainConfig, order: list[str]):
        self.cond = threading.Condition()
        self.stop = False
        self.failure: tuple[str, str] | None = None
        self.data_version = 0
        self.order = order
        self.turn = order[0]
        self.lockstep = cfg.schedule == "lockstep"
        self.jitter = cfg.schedule == "random"
        self.rounds_done = {name: 0 for name in order}

    def wait_turn(self, name: str, round_: int) -> bool:
        """Lockstep: block until it is ``name``'s turn in round ``round_``; False on stop."""
        with self.cond:
            while not self.stop and not (self.turn == name and self._round_ready(name, round_)):
                self.cond.wait(0.05)
            return not self.stop

    def _round_ready(self, name: str, round_: int) -> bool:
        return self.rounds_done[name] == round_ - 1

    def pass_turn(self, name: str) -> None:
        with self.cond:
            self.rounds_done[name] += 1
            i = self.order.index(name)
            self.turn = self.order[(i + 1) % len(self.order)]
            self.cond.notify_all()

    def signal_data(self) -> None:
        with self.cond:
            self.data_version += 1
            self.cond.notify_all()

    def wait_data(self, seen: int) -> int | None:
        with self.cond:
            while not self.stop and self.data_version <= seen:
                self.cond.wait(0.05)
            return None if self.stop else self.data_version

    def fail(self, name: str) -> None:
        with self.cond:
            if self.failure is None:
                self.failure = (name, traceback.format_exc())
            self.stop = True
            self.cond.notify_all()

    def halt(self) -> None:
        with self.cond:
            self.stop = True
            self.cond.notify_all()


def train_async(cfg: TrainConfig, demo: Trajectory | None = None, fault: str | None = None) -> TrainResult:
    """Three-worker variant: PPO, discriminator learner, curiosity learner.

    ``cfg.schedule`` picks the interleaving: ``lockstep`` forces the worker
    order of the synchronous loop (bit-identical results), ``free`` lets the
    learners train whenever new rollouts arrive, ``random`` additionally
    injects seeded scheduling jitter. ``fault`` names a worker that raises on
    its first step (used to test failure propagation).
    """
    cfg.validate()
    if demo is None:
        demo = _load_demo_for(cfg)
    sys_ = LearnerSystem(cfg, demo)
    order = ["ppo"]
    if sys_.disc_learner is not None:
        order.append("disc")
    if sys_.cur_learner is not None:
        order.append("cur")
    co = _Coordinator(cfg, order)
    rows: list[MetricsRow] = []
    snaps: list[tuple] = []
    jitter_rngs = {n: random.Random(cfg.schedule_seed * 1000 + i) for i, n in enumerate(order)}
    t0 = time.perf_counter()

    def jitter(name: str) -> None:
        if co.jitter:
            time.sleep(jitter_rngs[name].uniform(0.0, 2e-3))

    def ppo_worker():
        try:
            for k in range(1, cfg.iterations + 1):
                if co.lockstep and not co.wait_turn("ppo", k):
                    return
                jitter("ppo")
                if fault == "ppo":
                    raise RuntimeError("injected PPO worker fault")
                ds, cs = sys_.fetch_snapshots()
                snaps.append((ds, cs))
                try:
                    row, _ = sys_.ppo_phase(k, ds, cs)
                except TrainingError as exc:
                    raise TrainingError(f"iteration {k}: {exc}") from exc
                row.wall_clock = time.perf_counter() - t0
                rows.append(row)
                co.signal_data()
                if co.lockstep:
                    co.pass_turn("ppo")
                if k % 10 == 0:
                    log.info("async iter %d return %.3f", k, row.mean_return)
            if co.lockstep and len(order) > 1:
                # let the learners finish the last round before stopping
                co.wait_turn("ppo", cfg.iterations + 1)
        except BaseException:
            co.fail("ppo")

    def learner_worker(name: str, phase, publish):
        try:
            seen = 0
            round_ = 0
            while True:
                round_ += 1
                if co.lockstep:
                    if not co.wait_turn(name, round_):
                        return
                else:
                    got = co.wait_data(seen)
                    if got is None:
                        return
                    seen = got
                jitter(name)
                if fault == name:
                    raise RuntimeError(f"injected {name} worker fault")
                publish(phase())
                if co.lockstep:
                    co.pass_turn(name)
                    if round_ >= cfg.iterations:
                        return
        except BaseException:
            co.fail(name)

    threads = [threading.Thread(target=ppo_worker, name="ppo", daemon=True)]
    if sys_.disc_learner is not None:
        threads.append(
            threading.Thread(
                target=learner_worker, args=("disc", sys_.disc_phase, sys_.publish_disc), name="disc", daemon=True
            )
        )
    if sys_.cur_learner is not None:
        threads.append(
            threading.Thread(
                target=learner_worker, args=("cur", sys_.cur_phase, sys_.publish_cur), name="cur", daemon=True
            )
        )
    for t in threads:
        t.start()
    threads[0].join()
    co.halt()
    for t in threads[1:]:
        t.join()
    if co.failure is not None:
        name, tb = co.failure
        raise TrainingError(f"async worker {name!r} failed; all workers stopped\n{tb}")

    # learner columns of row k come from the snapshot the PPO worker fetched for k + 1
    final = (
        sys_.disc_store.fetch_latest() if sys_.disc_store else None,
        sys_.cur_store.fetch_latest() if sys_.cur_store else None,
    )
    for row, nxt in zip(rows, snaps[1:] + [final]):
        _fill_learner_columns(row, *nxt)
    return _finish(cfg, sys_, rows)


def train(cfg: TrainConfig, demo: Trajectory | None = None) -> TrainResult:
    return train_async(cfg, demo) if cfg.mode == "async" else train_sync(cfg, demo)
