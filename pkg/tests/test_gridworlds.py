import copy
import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgfdc.gridworlds import (
    ENV_SPECS,
    FORWARD,
    LEFT,
    PICKUP,
    RIGHT,
    TOGGLE,
    WAYPOINTS,
    DemoFormatError,
    EnvError,
    GridEnv,
    VecEnv,
    bfs_expert,
    check_demo_matches,
    extrinsic_reward,
    fnv1a64,
    get_spec,
    load_demo,
    rollout_actions,
    save_demo,
)

GRIDWORLD14_RESET = """\
##############
#>...........#
#............#
#............#
#............#
#............#
#............#
#............#
#............#
#............#
#............#
#............#
#...........G#
##############
"""

KEYWORLD14_RESET = """\
##############
#>.....#.....#
#......#.....#
#..K...#.....#
#......#.....#
#......#.....#
#......D.....#
#......#.....#
#......#.....#
#......#.....#
#......#.....#
#......#.....#
#......#....G#
##############
"""

FOURROOMS_RESET = """\
###############
#>.....#......#
#......#......#
#.............#
#......#......#
#......#......#
#......#......#
###.#######.###
#......#......#
#......#......#
#......#......#
#.............#
#......#......#
#......#.....G#
###############
"""


# ------------------------------------------------------------------ layouts
@pytest.mark.parametrize(
    "env_id,golden",
    [("gridworld14", GRIDWORLD14_RESET), ("keyworld14", KEYWORLD14_RESET), ("fourrooms", FOURROOMS_RESET)],
)
def test_reset_render_is_golden(env_id, golden):
    env = GridEnv(env_id)
    env.reset()
    assert env.render_ascii() == golden


@pytest.mark.parametrize(
    "env_id,actions,n_max", [("gridworld14", 3, 192), ("keyworld14", 5, 1960), ("fourrooms", 3, 1536)]
)
def test_action_count_and_step_budget(env_id, actions, n_max):
    spec = get_spec(env_id)
    assert (spec.action_count, spec.n_max) == (actions, n_max)
    assert GridEnv(env_id).action_count == actions


def test_unknown_env():
    with pytest.raises(EnvError, match="unknown env_id"):
        GridEnv("mazeworld")


def test_layout_hash_is_fnv1a_and_distinct():
    # FNV-1a 64 reference vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    hashes = {s.layout_hash for s in ENV_SPECS.values()}
    assert len(hashes) == 3 and all(len(h) == 16 for h in hashes)


def test_reset_is_seed_independent():
    env = GridEnv("gridworld14")
    assert np.array_equal(env.reset(0), env.reset(123))


def test_keyworld_reset_flags():
    env = GridEnv("keyworld14")
    env.reset()
    assert not env.state.carrying_key and not env.state.door_open


def test_fourrooms_starts_in_top_left_room():
    env = GridEnv("fourrooms")
    env.reset()
    r, c = env.state.pos
    assert 0 < r < 7 and 0 < c < 7


def test_start_observation_layout():
    obs = GridEnv("gridworld14").reset()
    assert obs.shape == (3, 7, 7)
    # agent at bottom centre, encoded as type 5/5
    assert obs[0, 6, 3] == 1.0
    # facing east from (1, 1): the left-hand side is the north wall and beyond it
    assert np.all(obs[0, 6, :3] == 0.2)
    # straight ahead is open floor
    assert np.all(obs[0, :6, 3] == 0.0)


def test_cells_outside_grid_encode_wall():
    env = GridEnv("gridworld14")
    env.reset()
    env.step(LEFT)  # face north, touching the border
    obs = env.observe()
    assert np.all(obs[0, :6, :] == 0.2)


# ------------------------------------------------------------------ rewards
def test_extrinsic_reward_values():
    assert abs(extrinsic_reward(96, 192) - 0.55) <= 1e-12
    assert abs(extrinsic_reward(192, 192) - 0.1) <= 1e-12


def _idle(n):
    """``n`` steps that end where they started, facing east; a wall bump absorbs odd counts."""
    head = [LEFT, FORWARD, RIGHT] if n % 2 else []
    return head + [LEFT, RIGHT] * ((n - len(head)) // 2)


def _arrive_at(n_t):
    plan = bfs_expert("gridworld14").actions
    traj = rollout_actions("gridworld14", _idle(n_t - len(plan)) + plan)
    assert traj.terminal and len(traj) == n_t
    return traj.total_return


def test_goal_at_step_96_pays_055():
    assert abs(_arrive_at(96) - 0.55) <= 1e-12


def test_goal_at_last_step_pays_01():
    assert abs(_arrive_at(192) - 0.1) <= 1e-12


def test_truncation_without_goal_pays_nothing():
    env = GridEnv("gridworld14")
    env.reset()
    total, steps, done = 0.0, 0, False
    while not done:
        _, r, done, info = env.step(LEFT)
        total += r
        steps += 1
    assert steps == 192 and total == 0.0 and not info["success"]


def test_step_after_done_and_invalid_action():
    env = GridEnv("gridworld14")
    with pytest.raises(EnvError):
        env.step(LEFT)
    env.reset()
    with pytest.raises(EnvError):
        env.step(PICKUP)  # gridworld14 has three actions
    for a in bfs_expert("gridworld14").actions:
        env.step(a)
    with pytest.raises(EnvError, match="finished episode"):
        env.step(LEFT)


def test_wall_bump_is_noop():
    env = GridEnv("gridworld14")
    env.reset()
    env.step(LEFT)
    before = env.state.pos
    _, r, done, _ = env.step(FORWARD)
    assert env.state.pos == before and r == 0.0 and not done


def test_locked_door_blocks_until_toggled_with_key():
    env = GridEnv("keyworld14")
    env.reset()
    env.state.pos, env.state.heading = (6, 6), 1
    env.step(FORWARD)
    assert env.state.pos == (6, 6)
    env.step(TOGGLE)
    assert not env.state.door_open


# ------------------------------------------------------------------ properties
def _random_actions(env_id, max_len=300):
    n = get_spec(env_id).action_count
    return st.lists(st.integers(0, n - 1), min_size=1, max_size=max_len)


@settings(max_examples=40)
@given(st.data())
def test_random_play_invariants(data):
    env_id = data.draw(st.sampled_from(sorted(ENV_SPECS)))
    actions = data.draw(_random_actions(env_id))
    env = GridEnv(env_id)
    env.reset()
    spec = env.spec
    positive = 0
    stream = []
    for a in actions:
        obs, r, done, info = env.step(a)
        stream.append((obs, r, done))
        assert env.state.pos not in spec.walls
        assert 0.0 <= obs.min() and obs.max() <= 1.0
        assert info["n_t"] <= spec.n_max
        if env.state.door_open:
            assert env.state.carrying_key
        if r > 0:
            positive += 1
            assert done and 0.1 <= r < 1.0
        else:
            assert r == 0.0
        if done:
            break
    assert positive <= 1
    # replay determinism
    env2 = GridEnv(env_id)
    env2.reset(5)
    for (o, r, d), a in zip(stream, actions):
        o2, r2, d2, _ = env2.step(a)
        assert np.array_equal(o, o2) and r == r2 and d == d2


def test_vecenv_auto_reset_and_episode_stats():
    venv = VecEnv("gridworld14", 2, seed=0)
    plan = bfs_expert("gridworld14").actions
    finished = []
    for a in plan:
        nxt, rew, dones, reset_obs, fin = venv.step([a, LEFT])
        finished += fin
    assert dones[0] and not dones[1]
    assert finished == [(pytest.approx(1 - 0.9 * 23 / 192), 23)]
    assert np.array_equal(reset_obs[0], GridEnv("gridworld14").reset())
    assert not np.array_equal(nxt[0], reset_obs[0])


# ------------------------------------------------------------------ expert
def _oracle_shortest_length(env_id):
    """Breadth-first search driving copies of the real environment."""
    env = GridEnv(env_id)
    env.reset()

    def key(e):
        s = e.state
        return (s.pos, s.heading, s.carrying_key, s.door_open)

    seen = {key(env)}
    frontier = deque([(env, 0)])
    while frontier:
        e, depth = frontier.popleft()
        for a in range(e.action_count):
            child = copy.deepcopy(e)
            _, r, done, info = child.step(a)
            if info["success"]:
                return depth + 1
            k = key(child)
            if not done and k not in seen:
                seen.add(k)
                frontier.append((child, depth + 1))
    raise AssertionError("unreachable")


@pytest.mark.parametrize("env_id", sorted(ENV_SPECS))
def test_bfs_expert_is_shortest(env_id):
    traj = bfs_expert(env_id)
    assert traj.terminal and traj.total_return > 0.1
    assert len(traj) == _oracle_shortest_length(env_id)


def test_expert_lengths_by_hand():
    # gridworld14: 11 east, turn, 11 south
    assert len(bfs_expert("gridworld14")) == 23
    # fourrooms: 2 east, turn, 10 south through (7,3), turn, 10 east through (11,7), turn, 2 south
    assert len(bfs_expert("fourrooms")) == 27


def test_keyworld_expert_uses_key_once():
    acts = bfs_expert("keyworld14").actions
    assert acts.count(PICKUP) == 1 and acts.count(TOGGLE) == 1
    assert acts.index(PICKUP) < acts.index(TOGGLE)


@pytest.mark.parametrize("env_id", sorted(ENV_SPECS))
def test_expert_replay_reproduces_observations(env_id):
    traj = bfs_expert(env_id)
    assert rollout_actions(env_id, traj.actions) == traj


def test_waypoint_demo_differs_and_visits_waypoint():
    a = bfs_expert("gridworld14")
    b = bfs_expert("gridworld14", WAYPOINTS["gridworld14"])
    assert a.actions != b.actions and b.terminal
    env = GridEnv("gridworld14")
    env.reset()
    visited = set()
    for act in b.actions:
        env.step(act)
        visited.add(env.state.pos)
    assert WAYPOINTS["gridworld14"] in visited


# ------------------------------------------------------------------ demo files
def test_demo_round_trip(tmp_path):
    traj = bfs_expert("keyworld14")
    save_demo(traj, tmp_path / "d.json")
    assert load_demo(tmp_path / "d.json") == traj


@settings(max_examples=15)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=40))
def test_demo_round_trip_any_trajectory(tmp_path_factory, actions):
    path = tmp_path_factory.mktemp("demo") / "d.json"
    traj = rollout_actions("gridworld14", actions)
    save_demo(traj, path)
    assert load_demo(path) == traj


def test_demo_wrong_env_rejected(tmp_path):
    traj = bfs_expert("gridworld14")
    with pytest.raises(DemoFormatError, match="recorded on"):
        check_demo_matches(traj, "fourrooms")
    traj.layout_hash = "0" * 16
    with pytest.raises(DemoFormatError, match="layout hash"):
        check_demo_matches(traj, "gridworld14")


def test_demo_file_errors(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    with pytest.raises(DemoFormatError, match="empty"):
        load_demo(empty)
    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text("{not json")
    with pytest.raises(DemoFormatError, match="corrupt"):
        load_demo(corrupt)
    save_demo(bfs_expert("gridworld14"), tmp_path / "d.json")
    doc = json.loads((tmp_path / "d.json").read_text())
    doc["header"]["format_version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(DemoFormatError, match="format_version"):
        load_demo(tmp_path / "v.json")
    doc["header"]["format_version"] = 1
    doc["steps"] = []
    (tmp_path / "n.json").write_text(json.dumps(doc))
    with pytest.raises(DemoFormatError, match="no steps"):
        load_demo(tmp_path / "n.json")
