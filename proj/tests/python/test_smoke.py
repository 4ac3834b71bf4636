import math

import pytest

import sitfuse

FAST = [
    "train_envs=4",
    "test_envs=3",
    "eval.start_min=4",
    "samples_per_env=64",
    "affinity_samples=200",
    "train.iterations=40",
    "train.batch_size=32",
    "train.milestones=[20,30]",
    "eval.episodes_per_task=8",
    "analyze_samples_per_env=16",
]


def test_generated_map_has_every_class():
    env = sitfuse.Environment.generate(7, '{"width": 24, "height": 24, "room_count": 4}')
    assert (env.width, env.height) == (24, 24)
    classes = {o["class"] for o in __import__("json").loads(env.to_json())["objects"]}
    assert classes == {"chair", "table", "bed", "door"}


def test_greedy_oracle_reaches_goal_in_distance_steps():
    env = sitfuse.Environment.generate(11)
    d = env.distances("chair")
    start = max(range(env.node_count), key=lambda n: d[n])
    node, steps = start, 0
    while True:
        action = env.optimal_action(node, "chair")
        if action == "Stop":
            break
        node = env.step(node, action)
        steps += 1
    assert steps == d[start]
    assert d[node] == 0


def test_map_json_round_trip():
    env = sitfuse.Environment.generate(3)
    again = sitfuse.Environment.from_json(env.to_json())
    assert again.rows() == env.rows()


def test_closed_form_losses():
    assert sitfuse.affinity_loss([0.5, 0.5], [1, 1, 1, 1]) == pytest.approx(1.0)
    assert sitfuse.affinity_loss([0.25] * 4, [1 if i % 5 == 0 else 0 for i in range(16)]) == pytest.approx(0.25)
    assert sitfuse.load_balance_loss([[0.25] * 4, [0.25] * 4]) == 0.0
    assert sitfuse.coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)
    probs = sitfuse.softmax([0.0] * 9)
    assert sum(probs) == pytest.approx(1.0)
    assert sitfuse.cross_entropy(probs, 4) == pytest.approx(math.log(9), abs=1e-9)


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        sitfuse.Environment.generate(1, '{"room_count": 0}')
    with pytest.raises(RuntimeError):
        sitfuse.compute_affinity(out_dir=tmp_path / "missing")


def test_gradcheck_passes():
    result = sitfuse.gradcheck(seed=3, configurations=2)
    assert result["pass"]


def test_pipeline(tmp_path):
    out = tmp_path / "run"
    assert sitfuse.generate(overrides=FAST, out_dir=out)["train"] == 4
    sitfuse.compute_affinity(overrides=FAST, out_dir=out)
    sitfuse.train("af", overrides=FAST, out_dir=out)
    report = sitfuse.evaluate(model="af", overrides=FAST, out_dir=out)
    assert 0.0 <= report["average"] <= 1.0
    oracle = sitfuse.evaluate(rule="oracle", overrides=FAST, out_dir=out)
    assert oracle["average"] == 1.0
    assert sitfuse.config_digest(overrides=FAST) == sitfuse.config_digest(overrides=FAST + ["out_dir=\"elsewhere\""])
