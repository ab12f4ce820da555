import numpy as np
import pytest
from conftest import uniform_map

from maplessplan.costs import SUBCOSTS, CostWeights, Scene, evaluate
from maplessplan.grid import BevGrid, GridSpec
from maplessplan.occupancy_flow import OccupancyField
from maplessplan.planner import NoCandidates, plan, plan_candidates, select
from maplessplan.trajectory import PLAN_STEPS, SdvState, Trajectory, TrajectoryBank, sample

SPEC = GridSpec(0.5, 60.0, 30.0, origin=(-10.0, -15.0))
X0 = SdvState(0.1, 0.1, 0.0, 5.0)


def straight_and_left():
    prof = np.zeros((2, PLAN_STEPS, 2))
    prof[1, :3, 1] = 0.05  # steer into the left lane
    prof[1, 3:6, 1] = -0.05
    return prof


def blocked_scene():
    occ = np.zeros(SPEC.shape)
    c = SPEC.cell_centers()
    occ[(c[..., 0] > 12) & (c[..., 0] < 16) & (np.abs(c[..., 1]) < 1.5)] = 1.0
    f = OccupancyField("vehicle", tuple(BevGrid(SPEC, occ) for _ in range(PLAN_STEPS + 2)))
    return Scene(uniform_map(SPEC, route=1.0), {"vehicle": f}, {})


def test_single_candidate_always_returned():
    prof = np.zeros((1, PLAN_STEPS, 2))
    res = plan_candidates(prof, X0, blocked_scene(), CostWeights(occupancy=1e6))
    assert res.best_index == 0 and res.candidate_count == 1
    assert res.best_cost > 0


def test_avoids_occupied_candidate():
    res = plan_candidates(straight_and_left(), X0, blocked_scene(), CostWeights(occupancy=10.0))
    assert res.best_index == 1
    assert res.best_breakdown.occupancy == 0.0
    assert res.breakdowns.row(0).occupancy > 0


def test_external_rescoring_agrees():
    rng = np.random.default_rng(0)
    prof = np.stack([np.column_stack([rng.uniform(-2, 2, PLAN_STEPS),
                                      rng.uniform(-0.04, 0.04, PLAN_STEPS)]) for _ in range(60)])
    w = CostWeights.from_array(rng.random(len(SUBCOSTS)))
    scene = blocked_scene()
    res = plan_candidates(prof, X0, scene, w)
    totals = [evaluate(Trajectory(s, p), scene, w)[0] for s, p in zip(res.candidates, prof)]
    assert int(np.argmin(totals)) == res.best_index
    assert res.best_cost == pytest.approx(min(totals), abs=1e-9)
    np.testing.assert_array_equal(res.best.states, res.candidates[res.best_index])


def test_ties_go_to_lowest_index():
    assert select(np.array([3.0, 1.0, 1.0, 2.0])) == 1
    prof = np.zeros((4, PLAN_STEPS, 2))
    res = plan_candidates(prof, X0, blocked_scene(), CostWeights())
    assert res.best_index == 0
    with pytest.raises(NoCandidates):
        select(np.array([]))
    with pytest.raises(NoCandidates):
        plan_candidates(np.zeros((0, PLAN_STEPS, 2)), X0, blocked_scene(), CostWeights())


def test_argmin_invariant_under_weight_scaling():
    rng = np.random.default_rng(1)
    prof = np.stack([np.column_stack([rng.uniform(-2, 2, PLAN_STEPS),
                                      rng.uniform(-0.04, 0.04, PLAN_STEPS)]) for _ in range(50)])
    w = rng.random(len(SUBCOSTS))
    base = plan_candidates(prof, X0, blocked_scene(), CostWeights.from_array(w)).best_index
    for lam in (1e-3, 0.5, 7.0, 1e4):
        got = plan_candidates(prof, X0, blocked_scene(), CostWeights.from_array(lam * w)).best_index
        assert got == base


def test_route_reward_prefers_progress():
    prof = np.zeros((3, PLAN_STEPS, 2))
    prof[0, :, 0] = -1.0
    prof[2, :, 0] = 1.0
    scene = Scene(uniform_map(SPEC, route=1.0))
    res = plan_candidates(prof, X0, scene, CostWeights(route=1.0))
    assert res.best_index == 2


def test_plan_uses_bank_and_starts_at_x0(bank):
    res = plan(X0, Scene(uniform_map(SPEC, route=1.0)), bank, CostWeights(route=1.0, jerk=1.0))
    assert res.candidate_count == len(sample(bank, X0))
    np.testing.assert_array_equal(res.best.states[0], X0.as_array())


def test_plan_falls_back_on_empty_bin():
    res = plan(X0, Scene(uniform_map(SPEC)), TrajectoryBank({}), CostWeights())
    assert res.candidate_count == 28
