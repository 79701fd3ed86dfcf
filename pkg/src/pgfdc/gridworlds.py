"""Deterministic sparse-reward grid worlds with egocentric 3x7x7 observations.

Three fixed layouts are shipped: ``gridworld14`` (empty room), ``keyworld14``
(key, locked door, goal) and ``fourrooms`` (four connected rooms). The agent
sees a 7x7 window that extends six cells ahead and three to each side, with
itself at the bottom-centre cell.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEFT, RIGHT, FORWARD, PICKUP, TOGGLE = range(5)
ACTION_NAMES = ("left", "right", "forward", "pickup", "toggle")

# headings: 0=N, 1=E, 2=S, 3=W
DIRS = ((-1, 0), (0, 1), (1, 0), (0, -1))
HEADING_NAMES = "NESW"

EMPTY, WALL, DOOR, KEY, GOAL, AGENT = range(6)
_COLOR = {EMPTY: 0, WALL: 1, DOOR: 2, KEY: 2, GOAL: 3, AGENT: 4}
DOOR_OPEN, DOOR_LOCKED = 0, 2

VIEW = 7
DEMO_FORMAT_VERSION = 1


class EnvError(RuntimeError):
    pass


class DemoFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    height: int
    width: int
    action_count: int
    n_max: int
    walls: frozenset
    start: tuple[int, int]
    start_heading: int
    goal: tuple[int, int]
    door: tuple[int, int] | None = None
    key: tuple[int, int] | None = None

    def layout_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "height": self.height,
            "width": self.width,
            "action_count": self.action_count,
            "n_max": self.n_max,
            "walls": sorted([list(w) for w in self.walls]),
            "start": list(self.start),
            "start_heading": self.start_heading,
            "goal": list(self.goal),
            "door": list(self.door) if self.door else None,
            "key": list(self.key) if self.key else None,
        }

    @property
    def layout_hash(self) -> str:
        return f"{fnv1a64(json.dumps(self.layout_dict(), sort_keys=True).encode()):016x}"


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _border(h: int, w: int) -> set[tuple[int, int]]:
    cells = set()
    for r in range(h):
        cells.add((r, 0))
        cells.add((r, w - 1))
    for c in range(w):
        cells.add((0, c))
        cells.add((h - 1, c))
    return cells


def _gridworld14() -> EnvSpec:
    return EnvSpec("gridworld14", 14, 14, 3, 192, frozenset(_border(14, 14)), (1, 1), 1, (12, 12))


def _keyworld14() -> EnvSpec:
    walls = _border(14, 14) | {(r, 7) for r in range(14)}
    walls.discard((6, 7))
    return EnvSpec(
        "keyworld14", 14, 14, 5, 1960, frozenset(walls), (1, 1), 1, (12, 12), door=(6, 7), key=(3, 3)
    )


def _fourrooms() -> EnvSpec:
    walls = _border(15, 15) | {(r, 7) for r in range(15)} | {(7, c) for c in range(15)}
    for opening in [(3, 7), (11, 7), (7, 3), (7, 11)]:
        walls.discard(opening)
    return EnvSpec("fourrooms", 15, 15, 3, 1536, frozenset(walls), (1, 1), 1, (13, 13))


ENV_SPECS: dict[str, EnvSpec] = {s.env_id: s for s in (_gridworld14(), _keyworld14(), _fourrooms())}

# waypoints used to produce a second, behaviourally distinct demonstration
WAYPOINTS = {"gridworld14": (12, 1), "keyworld14": (12, 1), "fourrooms": (13, 1)}


def get_spec(env_id: str) -> EnvSpec:
    try:
        return ENV_SPECS[env_id]
    except KeyError:
        raise EnvError(f"unknown env_id {env_id!r}; choose from {sorted(ENV_SPECS)}") from None


@dataclass
class WorldState:
    pos: tuple[int, int]
    heading: int
    carrying_key: bool = False
    door_open: bool = False
    n_t: int = 0
    done: bool = False


# precomputed view offsets: view row 0 is farthest ahead, column 3 is straight ahead
def _view_offsets() -> tuple[np.ndarray, np.ndarray]:
    rows = np.zeros((4, VIEW, VIEW), dtype=np.int64)
    cols = np.zeros((4, VIEW, VIEW), dtype=np.int64)
    for h in range(4):
        fwd = DIRS[h]
        right = DIRS[(h + 1) % 4]
        for i in range(VIEW):
            for j in range(VIEW):
                f, lat = VIEW - 1 - i, j - VIEW // 2
                rows[h, i, j] = f * fwd[0] + lat * right[0]
                cols[h, i, j] = f * fwd[1] + lat * right[1]
    return rows, cols


_VIEW_ROWS, _VIEW_COLS = _view_offsets()
_PAD = VIEW - 1


def _encode(obj: int, state: int = 0) -> tuple[float, float, float]:
    return obj / 5.0, _COLOR[obj] / 5.0, state / 2.0


class GridEnv:
    """Single environment instance; all randomness lives in the policy."""

    def __init__(self, env_id: str | EnvSpec):
        self.spec = env_id if isinstance(env_id, EnvSpec) else get_spec(env_id)
        self.seed: int | None = None
        self.state: WorldState | None = None
        self._grid: np.ndarray | None = None

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    # ----------------------------------------------------------------- layout
    def _build_grid(self) -> np.ndarray:
        s = self.spec
        grid = np.zeros((3, s.height + 2 * _PAD, s.width + 2 * _PAD))
        grid[:] = np.array(_encode(WALL))[:, None, None]
        grid[:, _PAD : _PAD + s.height, _PAD : _PAD + s.width] = np.array(_encode(EMPTY))[:, None, None]
        for r, c in s.walls:
            self._set_cell(grid, (r, c), WALL)
        self._set_cell(grid, s.goal, GOAL)
        if s.door:
            self._set_cell(grid, s.door, DOOR, DOOR_LOCKED)
        if s.key:
            self._set_cell(grid, s.key, KEY)
        return grid

    @staticmethod
    def _set_cell(grid: np.ndarray, pos, obj: int, state: int = 0) -> None:
        grid[:, pos[0] + _PAD, pos[1] + _PAD] = _encode(obj, state)

    def cell(self, pos: tuple[int, int]) -> int:
        s, st = self.spec, self.state
        r, c = pos
        if not (0 <= r < s.height and 0 <= c < s.width) or pos in s.walls:
            return WALL
        if pos == s.goal:
            return GOAL
        if s.door and pos == s.door:
            return DOOR
        if s.key and pos == s.key and not (st and st.carrying_key):
            return KEY
        return EMPTY

    # --------------------------------------------------------------- dynamics
    def reset(self, seed: int = 0) -> np.ndarray:
        s = self.spec
        self.seed = seed
        self.state = WorldState(pos=s.start, heading=s.start_heading)
        self._grid = self._build_grid()
        return self.observe()

    def observe(self) -> np.ndarray:
        st = self.state
        rows = _VIEW_ROWS[st.heading] + st.pos[0] + _PAD
        cols = _VIEW_COLS[st.heading] + st.pos[1] + _PAD
        obs = self._grid[:, rows, cols]
        obs[:, VIEW - 1, VIEW // 2] = _encode(AGENT, 1 if st.carrying_key else 0)
        return obs

    def step(self, action: int) -> tuple[np.ndarray, float, bool, dict]:
        st = self.state
        if st is None:
            raise EnvError("call reset() before step()")
        if st.done:
            raise EnvError("step() called on a finished episode; reset first")
        if not 0 <= action < self.spec.action_count:
            raise EnvError(f"action {action} outside [0, {self.spec.action_count})")
        st.n_t += 1
        reward = 0.0
        reached = False
        dr, dc = DIRS[st.heading]
        front = (st.pos[0] + dr, st.pos[1] + dc)
        if action == LEFT:
            st.heading = (st.heading - 1) % 4
        elif action == RIGHT:
            st.heading = (st.heading + 1) % 4
        elif action == FORWARD:
            kind = self.cell(front)
            if kind in (EMPTY, GOAL) or (kind == DOOR and st.door_open):
                st.pos = front
                reached = kind == GOAL
        elif action == PICKUP:
            if self.cell(front) == KEY and not st.carrying_key:
                st.carrying_key = True
                self._set_cell(self._grid, front, EMPTY)
        elif action == TOGGLE:
            if self.cell(front) == DOOR and st.carrying_key and not st.door_open:
                st.door_open = True
                self._set_cell(self._grid, front, DOOR, DOOR_OPEN)
        if reached:
            reward = extrinsic_reward(st.n_t, self.spec.n_max)
        st.done = reached or st.n_t >= self.spec.n_max
        return self.observe(), reward, st.done, {"n_t": st.n_t, "success": reached}

    def render_ascii(self) -> str:
        s, st = self.spec, self.state
        lines = []
        for r in range(s.height):
            row = []
            for c in range(s.width):
                if st is not None and (r, c) == st.pos:
                    row.append("^>v<"[st.heading])
                    continue
                kind = self.cell((r, c))
                if kind == DOOR:
                    row.append("d" if st is not None and st.door_open else "D")
                else:
                    row.append({EMPTY: ".", WALL: "#", KEY: "K", GOAL: "G"}[kind])
            lines.append("".join(row))
        return "\n".join(lines) + "\n"


def extrinsic_reward(n_t: int, n_max: int) -> float:
    """Sparse goal reward, decaying linearly from 1 to 0.1 with the step count."""
    return 1.0 - 0.9 * n_t / n_max


class VecEnv:
    """Several independent copies of one layout, auto-reset on episode end."""

    def __init__(self, env_id: str, n: int, seed: int = 0):
        self.envs = [GridEnv(env_id) for _ in range(n)]
        self.spec = self.envs[0].spec
        self.seed = seed
        self._obs = np.stack([e.reset(seed + i) for i, e in enumerate(self.envs)])
        self.episode_returns = np.zeros(n)
        self.episode_lengths = np.zeros(n, dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.envs)

    @property
    def obs(self) -> np.ndarray:
        return self._obs

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[tuple[float, int]]]:
        """Returns (next_obs_before_reset, rewards, dones, obs_after_reset, finished episodes)."""
        n = self.n
        next_obs = np.empty_like(self._obs)
        rewards = np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        finished = []
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            o, r, d, _ = env.step(int(a))
            next_obs[i] = o
            rewards[i] = r
            dones[i] = d
            self.episode_returns[i] += r
            self.episode_lengths[i] += 1
            if d:
                finished.append((float(self.episode_returns[i]), int(self.episode_lengths[i])))
                self.episode_returns[i] = 0.0
                self.episode_lengths[i] = 0
        reset_obs = next_obs.copy()
        for i in np.flatnonzero(dones):
            reset_obs[i] = self.envs[i].reset(self.seed + i)
        self._obs = reset_obs
        return next_obs, rewards, dones, reset_obs, finished


# ---------------------------------------------------------------- expert & demos
@dataclass
class Trajectory:
    env_id: str
    seed: int
    observations: list[np.ndarray]
    actions: list[int]
    terminal: bool
    total_return: float
    layout_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.env_id == other.env_id
            and self.seed == other.seed
            and self.actions == other.actions
            and self.terminal == other.terminal
            and self.total_return == other.total_return
            and self.layout_hash == other.layout_hash
            and len(self.observations) == len(other.observations)
            and all(np.array_equal(a, b) for a, b in zip(self.observations, other.observations))
        )

    def obs_array(self) -> np.ndarray:
        return np.stack(self.observations)

    def action_array(self) -> np.ndarray:
        return np.asarray(self.actions, dtype=np.int64)


def _successors(env: GridEnv, key: tuple):
    """Yield (action, next_key, reached_goal) from an abstract search state."""
    pos, heading, carrying, door_open = key
    spec = env.spec
    dr, dc = DIRS[heading]
    front = (pos[0] + dr, pos[1] + dc)

    def kind(p):
        if not (0 <= p[0] < spec.height and 0 <= p[1] < spec.width) or p in spec.walls:
            return WALL
        if p == spec.goal:
            return GOAL
        if spec.door and p == spec.door:
            return DOOR
        if spec.key and p == spec.key and not carrying:
            return KEY
        return EMPTY

    yield LEFT, (pos, (heading - 1) % 4, carrying, door_open), False
    yield RIGHT, (pos, (heading + 1) % 4, carrying, door_open), False
    k = kind(front)
    if k in (EMPTY, GOAL) or (k == DOOR and door_open):
        yield FORWARD, (front, heading, carrying, door_open), k == GOAL
    if spec.action_count > 3:
        if k == KEY:
            yield PICKUP, (pos, heading, True, door_open), False
        if k == DOOR and carrying and not door_open:
            yield TOGGLE, (pos, heading, carrying, True), False


def bfs_plan(spec: EnvSpec, waypoint: tuple[int, int] | None = None) -> list[int]:
    """Minimal-length action sequence from the start pose to the goal.

    With ``waypoint`` the plan is the shortest one that visits that cell.
    """
    env = GridEnv(spec)
    start = (spec.start, spec.start_heading, False, False, waypoint is None)
    parent: dict = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for action, nxt, goal in _successors(env, node[:4]):
            visited = node[4] or nxt[0] == waypoint
            if goal and not visited:
                continue
            child = (*nxt, visited)
            if child in parent:
                continue
            parent[child] = (node, action)
            if goal:
                plan = []
                while parent[child] is not None:
                    child, a = parent[child]
                    plan.append(a)
                return plan[::-1]
            queue.append(child)
    raise EnvError(f"{spec.env_id}: goal unreachable")


def rollout_actions(env_id: str, actions, seed: int = 0) -> Trajectory:
    env = GridEnv(env_id)
    obs = env.reset(seed)
    observations, total, done = [], 0.0, False
    for a in actions:
        if done:
            raise EnvError("action sequence continues past episode end")
        observations.append(obs)
        obs, r, done, _ = env.step(int(a))
        total += r
    return Trajectory(
        env_id=env_id,
        seed=seed,
        observations=observations,
        actions=[int(a) for a in actions],
        terminal=done,
        total_return=total,
        layout_hash=env.spec.layout_hash,
    )


def bfs_expert(env_id: str, waypoint: tuple[int, int] | None = None, seed: int = 0) -> Trajectory:
    spec = get_spec(env_id)
    traj = rollout_actions(env_id, bfs_plan(spec, waypoint), seed)
    if waypoint is not None:
        traj.meta["waypoint"] = list(waypoint)
    return traj


def save_demo(traj: Trajectory, path: str | Path) -> None:
    if not traj.actions:
        raise DemoFormatError("refusing to save an empty trajectory")
    doc = {
        "header": {
            "env_id": traj.env_id,
            "seed": traj.seed,
            "format_version": DEMO_FORMAT_VERSION,
            "layout_hash": traj.layout_hash or get_spec(traj.env_id).layout_hash,
            "terminal": traj.terminal,
            "total_return": traj.total_return,
            "meta": traj.meta,
        },
        "steps": [{"obs": o.tolist(), "action": int(a)} for o, a in zip(traj.observations, traj.actions)],
    }
    Path(path).write_text(json.dumps(doc))


def load_demo(path: str | Path) -> Trajectory:
    text = Path(path).read_text()
    if not text.strip():
        raise DemoFormatError(f"{path}: empty demo file")
    try:
        doc = json.loads(text)
        head = doc["header"]
        steps = doc["steps"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DemoFormatError(f"{path}: corrupt demo file") from exc
    if head.get("format_version") != DEMO_FORMAT_VERSION:
        raise DemoFormatError(f"{path}: format_version {head.get('format_version')}, expected {DEMO_FORMAT_VERSION}")
    if not steps:
        raise DemoFormatError(f"{path}: demo has no steps")
    obs = [np.asarray(s["obs"], dtype=np.float64) for s in steps]
    if any(o.shape != (3, VIEW, VIEW) for o in obs):
        raise DemoFormatError(f"{path}: observation with wrong shape")
    return Trajectory(
        env_id=head["env_id"],
        seed=int(head["seed"]),
        observations=obs,
        actions=[int(s["action"]) for s in steps],
        terminal=bool(head["terminal"]),
        total_return=float(head["total_return"]),
        layout_hash=head["layout_hash"],
        meta=head.get("meta", {}),
    )


def check_demo_matches(traj: Trajectory, env_id: str) -> None:
    """Reject a demonstration recorded on a different environment or layout."""
    spec = get_spec(env_id)
    if traj.env_id != env_id:
        raise DemoFormatError(f"demo was recorded on {traj.env_id!r}, trainer runs {env_id!r}")
    if traj.layout_hash != spec.layout_hash:
        raise DemoFormatError(f"demo layout hash {traj.layout_hash} != {spec.layout_hash}")
