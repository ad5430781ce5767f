import json
import math

import pytest

import objnav


def test_generate_world_is_deterministic():
    a = objnav.generate_world(1, "a")
    b = objnav.generate_world(1, "a")
    assert a.content_hash() == b.content_hash()
    assert objnav.generate_world(2).content_hash() != a.content_hash()
    again = objnav.load_world(a.to_json())
    assert again.content_hash() == a.content_hash()
    assert sorted(a.labels()) == sorted(objnav.label_names())


def test_env_episode():
    w = objnav.generate_world(3, "w")
    env = objnav.Env(w, {"max_steps": 20})
    obs = env.reset("chair", 7)
    assert len(obs["lidar"]) == 222
    assert len(obs["det"]) == 64
    assert obs["goal"][objnav.label_names().index("chair")] == 1.0
    assert env.start_distance >= 1.0
    done = False
    steps = 0
    while not done:
        obs, reward, done, collided, success = env.step(0.3, 0.2)
        assert math.isfinite(reward)
        steps += 1
    assert steps == env.steps <= 20


def test_reset_is_seeded():
    w = objnav.generate_world(3)
    e1, e2 = objnav.Env(w), objnav.Env(w)
    e1.reset("tv", 11)
    e2.reset("tv", 11)
    assert e1.pose == e2.pose


def test_spl_examples():
    assert objnav.compute_spl([{"success": True, "optimal": 10.0, "path_length": 10.0}]) == 1.0
    assert objnav.compute_spl([{"success": True, "optimal": 5.0, "path_length": 10.0}]) == 0.5
    recs = [{"success": True, "optimal": 4.0, "path_length": 5.0},
            {"success": False, "optimal": 3.0, "path_length": 9.0}]
    assert objnav.compute_spl(recs) == pytest.approx(0.4, abs=1e-9)
    assert objnav.success_rate(recs) == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(ValueError):
        objnav.compute_spl([])


def test_evaluate_baselines():
    worlds = [objnav.generate_world(s, f"g{s}") for s in (1, 2)]
    res = objnav.evaluate("tgt", worlds, {"episodes_per_world": 2, "episode": {"max_steps": 60}})
    assert len(res["records"]) == 4
    assert sum(r["collisions"] for r in res["records"]) == 0
    assert 0.0 <= res["spl"] <= res["sr"] <= 1.0
    still = objnav.evaluate("still", worlds, {"episodes_per_world": 1, "episode": {"max_steps": 5}})
    assert all(r["path_length"] == 0 for r in still["records"])
    with pytest.raises(ValueError):
        objnav.evaluate("walk", worlds)
