import json

import numpy as np
import pytest

from pgfdc.gridworlds import bfs_expert, load_demo, save_demo
from pgfdc.harness import evaluate_discriminator_score, evaluate_policy, run_episodes
from pgfdc.harness.cli import EXIT_USAGE, main
from pgfdc.harness.plotting import learning_curves, smooth
from pgfdc.metrics import MetricsRow, write_metrics_csv
from pgfdc.models import DiscriminatorNet, PolicyNet

FAST_TRAIN = ["--iters", "2", "--horizon", "32", "--n-envs", "2", "--minibatch", "16", "--epochs", "1"]


# ------------------------------------------------------------------ evaluation
def test_eval_report_shape_and_mean():
    policy = PolicyNet(3, np.random.default_rng(0))
    rep = evaluate_policy(policy, "gridworld14", seeds=3, episodes=2)
    assert rep.seeds == [0, 1, 2] and len(rep.per_episode_returns) == 3
    assert all(len(r) == 2 for r in rep.per_episode_returns)
    flat = np.ravel(rep.per_episode_returns)
    assert rep.mean == pytest.approx(flat.mean(), abs=1e-15)
    assert rep.std == pytest.approx(flat.std(), abs=1e-15)
    doc = json.loads(rep.to_json())
    assert "mean_disc_score" not in doc and doc["episodes"] == 2


def test_eval_is_reproducible():
    policy = PolicyNet(3, np.random.default_rng(0))
    a = evaluate_policy(policy, "gridworld14", seeds=[4, 5], episodes=2)
    b = evaluate_policy(policy, "gridworld14", seeds=[4, 5], episodes=2)
    assert a.per_episode_returns == b.per_episode_returns


def test_random_play_rarely_reaches_goal():
    rep = evaluate_policy("random", "gridworld14", seeds=2, episodes=10)
    assert rep.mean < 0.2
    assert all(r == 0.0 or 0.1 <= r < 1.0 for r in np.ravel(rep.per_episode_returns))


def test_demo_replay_returns_stored_return():
    traj = bfs_expert("fourrooms")
    rep = evaluate_policy(traj, "fourrooms", seeds=1, episodes=3)
    assert rep.per_episode_returns == [[traj.total_return] * 3]


def test_eval_rejects_mismatched_actor():
    with pytest.raises(ValueError, match="actions"):
        evaluate_policy(PolicyNet(5, np.random.default_rng(0)), "gridworld14", 1, 1)
    with pytest.raises(ValueError, match="recorded on"):
        evaluate_policy(bfs_expert("fourrooms"), "gridworld14", 1, 1)


def test_run_episodes_records_every_pair():
    traj = bfs_expert("gridworld14")
    rets, obs, acts = run_episodes(traj, "gridworld14", 2, np.random.default_rng(0))
    assert len(obs) == len(acts) == 2 * len(traj)
    assert np.array_equal(obs[::2], traj.obs_array()) and list(acts[::2]) == traj.actions


def test_zeroed_discriminator_scores_one_half():
    disc = DiscriminatorNet(3, np.random.default_rng(0))
    for p in disc.out.parameters():
        p.data[:] = 0.0
    assert evaluate_discriminator_score("random", disc, "gridworld14", 1, 2) == pytest.approx(0.5, abs=1e-15)
    assert evaluate_discriminator_score(bfs_expert("gridworld14"), disc, "gridworld14") == pytest.approx(0.5)
    rep = evaluate_policy("random", "gridworld14", 1, 2, disc=disc)
    assert rep.mean_disc_score == pytest.approx(0.5)


# ------------------------------------------------------------------ plotting
def test_smooth_is_trailing_mean():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(smooth(y, 2), [1.0, 1.5, 2.5, 3.5])
    assert smooth(y, 1) is y


def test_learning_curves_writes_csv_and_png(tmp_path):
    for name, base in (("a", 0.0), ("b", 1.0)):
        d = tmp_path / name
        d.mkdir()
        write_metrics_csv([MetricsRow(i, 10 * i, base + i) for i in range(1, 6)], d / "metrics.csv")
    csv_path, png_path = learning_curves([tmp_path / "a", tmp_path / "b"], tmp_path / "rep", window=1)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "algorithm,iteration,mean_return,std_return,runs"
    # both directories lack a manifest, so each is its own group
    assert "a,1,1.000000,0.000000,1" in lines and "b,5,6.000000,0.000000,1" in lines
    assert png_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# ------------------------------------------------------------------ CLI
def test_cli_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == EXIT_USAGE


def test_cli_missing_demo(tmp_path, capsys):
    code = main(["train", "--algo", "pgfdc", "--demo", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == EXIT_USAGE
    assert "demo file not found" in capsys.readouterr().err


def test_cli_pgfdc_without_demo(tmp_path, capsys):
    assert main(["train", "--algo", "pgfdc", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "demonstration" in capsys.readouterr().err


def test_cli_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["train", "--algo", "ppo", "--out", str(blocker / "run")]) == EXIT_USAGE
    assert "not writable" in capsys.readouterr().err


def test_cli_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PGFDC_OUT", str(tmp_path / "envout"))
    assert main(["train", "--algo", "random", *FAST_TRAIN]) == 0
    assert (tmp_path / "envout" / "metrics.csv").exists()


def test_cli_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("algorithm: ppo\niterations: 5\nseed: 3\n")
    assert main(["train", "--config", str(cfg), "--iters", "2", *FAST_TRAIN[2:], "--out", str(tmp_path / "r")]) == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["config"]["iterations"] == 2 and manifest["config"]["seed"] == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"algorithm": "ppo", "bogus": 1}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r2")]) == EXIT_USAGE


def test_cli_end_to_end(tmp_path, capsys):
    demo = tmp_path / "demo.json"
    assert main(["demo-generate", "--env", "gridworld14", "--out", str(demo)]) == 0
    assert main(["demo-generate", "--env", "gridworld14", "--variant", "demo-2", "--out", str(tmp_path / "d2.json")]) == 0
    assert load_demo(demo).meta["variant"] == "demo-1"
    assert load_demo(tmp_path / "d2.json").actions != load_demo(demo).actions

    run = tmp_path / "run"
    assert main(["train", "--algo", "pgfdc", "--demo", str(demo), "--out", str(run), *FAST_TRAIN]) == 0
    ckpt = str(run / "checkpoint.bin")

    capsys.readouterr()
    assert main(["eval", "--checkpoint", ckpt, "--env", "gridworld14", "--seeds", "1", "--episodes", "2",
                 "--disc-checkpoint", ckpt]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["per_episode_returns"]) == 1 and 0.0 < report["mean_disc_score"] < 1.0
    assert main(["eval", "--checkpoint", ckpt, "--env", "fourrooms"]) == EXIT_USAGE

    capsys.readouterr()
    assert main(["eval-disc", "--disc-checkpoint", ckpt, "--source", str(demo), "--env", "gridworld14"]) == 0
    assert 0.0 < json.loads(capsys.readouterr().out)["mean_disc_score"] < 1.0
    assert main(["eval-disc", "--disc-checkpoint", ckpt, "--source", "random", "--env", "gridworld14",
                 "--seeds", "1", "--episodes", "2"]) == 0

    assert main(["report", str(run), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "learning_curves.png").exists()
    assert main(["report", str(tmp_path / "missing"), "--out", str(tmp_path / "rep")]) == EXIT_USAGE


def test_cli_eval_disc_needs_discriminator(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--algo", "ppo", "--out", str(run), *FAST_TRAIN]) == 0
    code = main(["eval-disc", "--disc-checkpoint", str(run / "checkpoint.bin"), "--source", "random",
                 "--env", "gridworld14"])
    assert code == EXIT_USAGE


def test_cli_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "x.bin"), "--env", "gridworld14"]) == EXIT_USAGE


def test_demo_generate_output_is_loadable(tmp_path):
    path = tmp_path / "k.json"
    assert main(["demo-generate", "--env", "keyworld14", "--out", str(path)]) == 0
    save_demo(load_demo(path), tmp_path / "k2.json")
    assert load_demo(tmp_path / "k2.json") == load_demo(path)
