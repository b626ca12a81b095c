import json
import math

import numpy as np
import pytest

from mrnav.core import EpisodeConfig
from mrnav.runner import (
    EpisodeRecord,
    MetricsDataError,
    aggregate,
    compute_dtg,
    compute_spl,
    compute_sr,
    episode_spec,
    mean_dtg,
    mean_steps_to_success,
    read_records,
    run_batch,
    run_episode,
    shortest_success_length,
    spl_term,
)
from mrnav.sim import load_scene
from mrnav.vlm import MockGreedyClient, ScriptedClient


def rec(success, l=None, p=None, steps=10, max_steps=500, traj=None):
    cfg = EpisodeConfig("e", "s", "bed", (1, 1), max_steps=max_steps)
    return EpisodeRecord(cfg, "greedy", 0, success=success, l=l, p=p, steps=steps, trajectories=traj or {})


def box_scene(h=10, w=10, res=0.25, objects=(), sid="t"):
    grid = ["#" * w] + ["#" + "." * (w - 2) + "#" for _ in range(h - 2)] + ["#" * w]
    return load_scene(json.dumps({"id": sid, "resolution": res, "grid": grid, "objects": list(objects)}))


# --- metrics -------------------------------------------------------------------------


def test_sr_examples():
    assert compute_sr([rec(s, 1, 1) for s in (1, 0, 1, 1)]) == 0.75
    assert compute_sr([rec(0), rec(0)]) == 0.0
    assert compute_sr([rec(1, 1, 1)] * 3) == 1.0
    with pytest.raises(ValueError):
        compute_sr([])


def test_spl_examples():
    assert compute_spl([rec(1, 10, 10)]) == 1.0
    assert compute_spl([rec(1, 10, 20)]) == 0.5
    assert compute_spl([rec(1, 10, 20), rec(0)]) == 0.25
    assert compute_spl([rec(1, 10, 5)]) == 1.0
    with pytest.raises(MetricsDataError):
        compute_spl([rec(1, 0.0, 5)])
    with pytest.raises(MetricsDataError):
        spl_term(rec(1, 10, None))


def open_room_with_bed():
    # 1 m x 1 m bed block in a 10 m x 10 m room at 5 cm cells
    bed = [[r, c] for r in range(90, 110) for c in range(150, 170)]
    return box_scene(200, 200, 0.05, [{"category": "bed", "cells": bed}])


def test_dtg_open_space_two_meters():
    s = open_room_with_bed()
    x = 150 * 0.05 - 2.0  # 2 m left of the bed's west face
    r = rec(0, traj={0: [[x, 5.0, 0.0]]})
    assert compute_dtg(r, s) == pytest.approx(2.0, abs=0.1)


def test_dtg_min_over_robots():
    s = open_room_with_bed()
    r = rec(0, traj={0: [[7.5 - 3.0, 5.0, 0.0]], 1: [[7.5 - 1.0, 5.0, 0.0]]})
    assert compute_dtg(r, s) == pytest.approx(1.0, abs=0.1)


def test_dtg_success_and_absent():
    assert compute_dtg(rec(1, 1, 1, traj={0: [[1.0, 1.0, 0.0]]}), open_room_with_bed()) == 0.0
    assert math.isinf(compute_dtg(rec(0, traj={0: [[1.0, 1.0, 0.0]]}), box_scene()))


def test_mean_dtg_and_steps():
    rs = [rec(1, 1, 1, steps=40), rec(0, steps=500), rec(0, steps=500)]
    rs[0].dtg, rs[1].dtg, rs[2].dtg = 0.0, 2.0, None
    assert mean_dtg(rs) == 1.0
    assert mean_dtg(rs, failed_only=True) == 2.0
    assert mean_steps_to_success(rs) == pytest.approx((40 + 500 + 500) / 3)
    rep = aggregate(rs)
    assert rep.dtg_excluded == 1


def test_spl_never_exceeds_sr_on_random_batches():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 40))
        rs = []
        for _ in range(n):
            ok = bool(rng.random() < 0.6)
            rs.append(rec(ok, float(rng.uniform(0.1, 20)), float(rng.uniform(0.1, 40))) if ok else rec(False))
        sr, spl = compute_sr(rs), compute_spl(rs)
        assert 0.0 <= spl <= sr <= 1.0
        assert all(spl_term(r) <= r.s for r in rs)


# --- episode geometry -----------------------------------------------------------------


def test_episode_spec_aligns_with_scene_cells():
    s = box_scene()
    spec = episode_spec(s, (5, 2), 24.0)
    assert spec.size == 96 and spec.origin == (0.5, 1.25)
    with pytest.raises(ValueError):
        episode_spec(box_scene(200, 200, 0.25), (5, 5), 24.0)


def test_shortest_success_length():
    s = box_scene(objects=[{"category": "bed", "cells": [[5, 6]]}])
    # cell (5, 5) sits 0.125 m from the bed, so only the bed's own cell is in the region
    assert shortest_success_length(s, (5, 2), "bed", 0.1) == pytest.approx(1.0)
    assert shortest_success_length(s, (5, 2), "bed", 0.15) == pytest.approx(0.75)
    assert math.isinf(shortest_success_length(box_scene(), (5, 2), "bed", 0.1))


# --- run_episode -------------------------------------------------------------------------


TRIVIAL = [{"category": "bed", "cells": [[5, 6]]}]


@pytest.mark.parametrize("planner", ["greedy", "costutil", "random", "vlm"])
@pytest.mark.parametrize("robots", [1, 2])
def test_trivial_scene_succeeds_quickly(planner, robots):
    s = box_scene(objects=TRIVIAL)  # 2.5 m room, bed 1 m ahead of the start cell centre
    cfg = EpisodeConfig("e", "t", "bed", (5, 2), n_robots=robots)
    r = run_episode(s, cfg, planner, 0, client=MockGreedyClient())
    assert r.success and r.steps <= 20
    assert r.dtg == 0.0 and r.error is None
    assert 0 < spl_term(r) <= 1


def test_absent_target_fails_at_step_budget():
    cfg = EpisodeConfig("e", "t", "bed", (5, 2), max_steps=500)
    r = run_episode(box_scene(), cfg, "greedy", 0)
    assert not r.success and r.steps == 500
    assert r.dtg is None and not r.target_present


def test_replanning_cadence_and_lengths():
    cfg = EpisodeConfig("e", "t", "bed", (5, 2), max_steps=80)
    r = run_episode(box_scene(), cfg, "costutil", 0)
    assert [a["step"] for a in r.assignments] == [0, 25, 50, 75]
    for rid, traj in r.trajectories.items():
        moved = sum(math.dist(a[:2], b[:2]) for a, b in zip(traj, traj[1:]))
        assert moved == pytest.approx(0.25 * r.forward_moves[rid], abs=1e-4)
        assert len(traj) == len(r.actions[rid]) + 1


def test_episode_determinism_with_scripted_replies():
    s = box_scene(16, 16, 0.25, [{"category": "tv", "cells": [[12, 12]]}])
    cfg = EpisodeConfig("e", "t", "tv", (3, 3))
    script = ['{"robot_0": 0, "robot_1": 1}', "nonsense", '{"robot_0": 0, "robot_1": 0}'] * 10
    a = run_episode(s, cfg, "vlm", 7, client=ScriptedClient(script))
    b = run_episode(s, cfg, "vlm", 7, client=ScriptedClient(script))
    assert a.to_json() == b.to_json()
    assert EpisodeRecord.from_dict(json.loads(a.to_json())).to_json() == a.to_json()


def test_bad_start_rejected():
    with pytest.raises(ValueError):
        run_episode(box_scene(), EpisodeConfig("e", "t", "bed", (0, 0)))
    with pytest.raises(ValueError):
        run_episode(box_scene(), EpisodeConfig("e", "t", "dragon", (5, 5)))


# --- batches ----------------------------------------------------------------------------


def two_scenes():
    a = box_scene(12, 12, 0.25, [{"category": "bed", "cells": [[6, 9]]}], sid="a")
    b = box_scene(12, 14, 0.25, [{"category": "tv", "cells": [[3, 10]]}], sid="b")
    return {"a": a, "b": b}


def ten_episodes():
    out = []
    for i in range(10):
        sid, tgt = ("a", "bed") if i % 2 == 0 else ("b", "tv")
        out.append(EpisodeConfig(f"{sid}_{i}", sid, tgt, (2 + i % 3, 2), max_steps=120))
    return out


def test_batch_writes_and_recomputes(tmp_path):
    rep = run_batch(two_scenes(), ten_episodes(), "greedy", 3, out_dir=tmp_path)
    assert len(rep.records) == 10
    s = json.loads((tmp_path / "summary.json").read_text())
    assert {"sr", "spl", "dtg"} <= set(s)
    back = read_records(tmp_path / "episodes.jsonl")
    again = aggregate(back, rep.fingerprint)
    assert again.summary() == rep.summary() == s
    assert [r.seed for r in back] == list(range(3, 13))


def test_batch_same_seed_same_output(tmp_path):
    script = tmp_path / "replies.jsonl"
    script.write_text('"{\\"robot_0\\": 0, \\"robot_1\\": 1}"\n"garbage"\n')
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        run_batch(two_scenes(), ten_episodes(), "vlm", 1, vlm_spec=f"scripted:{script}", out_dir=d)
        outs.append((d / "episodes.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_batch_records_episode_errors():
    eps = ten_episodes()[:2] + [EpisodeConfig("bad", "a", "bed", (0, 0))]
    rep = run_batch(two_scenes(), eps, "greedy")
    assert len(rep.records) == 3 and rep.records[-1].error["kind"] == "ValueError"
    with pytest.raises(KeyError):
        run_batch(two_scenes(), [EpisodeConfig("x", "zzz", "bed", (1, 1))], "greedy")
