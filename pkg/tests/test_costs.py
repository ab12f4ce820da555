import math

import numpy as np
import pytest
from conftest import uniform_map

from maplessplan.costs import (SUBCOSTS, CostConfig, CostWeights, SafetyParams, Scene,
                               breakdown_batch, cost_comfort, cost_drivable, cost_headway,
                               cost_junction, cost_lane_dir, cost_lane_dist, cost_lane_uncertainty,
                               cost_occupancy, cost_route, cost_route_to_go, default_config,
                               evaluate, evaluate_batch, load_config, save_config)
from maplessplan.grid import BevGrid, GridSpec
from maplessplan.occupancy_flow import MotionField, OccupancyField, flow_step
from maplessplan.trajectory import PLAN_STEPS, SdvState, Trajectory, bicycle_rollout

SPEC = GridSpec(0.5, 60.0, 20.0, origin=(-10.0, -10.0))
OSPEC = GridSpec(0.4, 40.0, 20.0, origin=(-10.0, -10.0))
L, W = 4.8, 2.0
ZERO = np.zeros((PLAN_STEPS, 2))
T = np.arange(PLAN_STEPS + 1) * 0.5


def drive(x=0.1, y=0.1, theta=0.0, v=5.0, kappa=0.0, prof=ZERO):
    return bicycle_rollout(SdvState(x, y, theta, v, 0.0, kappa), prof)


def centers_in_box(spec, x0, x1, y0, y1):
    c = spec.cell_centers()
    return (c[..., 0] > x0) & (c[..., 0] < x1) & (c[..., 1] > y0) & (c[..., 1] < y1)


def grid(v, spec=SPEC):
    return BevGrid(spec, np.broadcast_to(np.asarray(v, dtype=float), spec.shape).copy())


def occ_field(cells_by_t, cls="vehicle", spec=OSPEC):
    grids = [grid(cells_by_t.get(t, 0.0), spec) for t in range(PLAN_STEPS + 2)]
    return OccupancyField(cls, tuple(grids))


# -- route ---------------------------------------------------------------------

def test_route_reward_counts_swept_cells():
    tr = drive()
    swept = centers_in_box(SPEC, 0.1 - L / 2, 25.1 + L / 2, 0.1 - W / 2, 0.1 + W / 2)
    assert cost_route(tr, grid(1.0)) == pytest.approx(-swept.sum(), abs=1e-9)
    assert swept.sum() == 240


def test_route_reward_vanishes_on_any_zero_cell():
    r = np.ones(SPEC.shape)
    r[SPEC.cell_of(np.array([[20.0, 0.3]]))] = 0.0
    assert cost_route(drive(), grid(r)) == 0.0


def test_route_reward_scales_with_min_probability():
    r = np.ones(SPEC.shape)
    r[SPEC.cell_of(np.array([[20.0, 0.3]]))] = 0.25
    swept = centers_in_box(SPEC, 0.1 - L / 2, 25.1 + L / 2, 0.1 - W / 2, 0.1 + W / 2)
    assert cost_route(drive(), grid(r)) == pytest.approx(-0.25 * swept.sum(), abs=1e-9)


def test_stationary_route_reward_is_footprint():
    tr = drive(v=0.0)
    fp = centers_in_box(SPEC, 0.1 - L / 2, 0.1 + L / 2, 0.1 - W / 2, 0.1 + W / 2)
    assert cost_route(tr, grid(1.0)) == pytest.approx(-fp.sum(), abs=1e-9)


def test_route_to_go_extremes_and_half():
    tr = drive()
    assert cost_route_to_go(tr, grid(1.0)) == 0.0
    assert cost_route_to_go(tr, grid(0.0)) == 1.0
    # 2 s at 5 m/s beyond x=25.1: swept box x in (22.7, 37.5); route ends at x=30
    r = (SPEC.cell_centers()[..., 0] < 30.0).astype(float)
    assert cost_route_to_go(tr, grid(r)) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        cost_route_to_go(tr, grid(1.0), horizon_s=0.0)


# -- map terms -----------------------------------------------------------------

def test_lane_dist():
    tr = drive()
    assert cost_lane_dist(tr, uniform_map(SPEC, mu=0.0)) == 0.0
    assert cost_lane_dist(tr, uniform_map(SPEC, mu=3.0)) == pytest.approx(3.0, abs=1e-9)
    assert cost_lane_dist(tr, uniform_map(SPEC, mu=10.0)) == pytest.approx(10.0, abs=1e-9)
    assert cost_lane_dist(drive(x=500.0), uniform_map(SPEC)) == 10.0


def test_lane_dist_lateral_offset_field():
    # centerline at y = 3; the footprint rows are centered on y = 0
    mu = np.minimum(np.abs(SPEC.cell_centers()[..., 1] - 3.0), 10.0)
    tr = drive()
    fp_rows = SPEC.cell_centers()[..., 1][centers_in_box(SPEC, -100, 100, -0.9, 1.1)]
    want = np.mean(np.abs(fp_rows - 3.0))
    assert want == pytest.approx(3.0)
    assert cost_lane_dist(tr, uniform_map(SPEC, mu=mu)) == pytest.approx(3.0, abs=1e-9)


@pytest.mark.parametrize("theta,want", [(0.0, 0.0), (math.pi, math.pi), (math.pi / 4, math.pi / 4),
                                        (-math.pi / 4, math.pi / 4), (2 * math.pi + 0.1, 0.1)])
def test_lane_dir(theta, want):
    tr = drive(theta=theta, v=0.0)
    assert cost_lane_dir(tr, uniform_map(SPEC, loc=0.0)) == pytest.approx(want, abs=1e-9)


def test_lane_dir_wraps_across_pi():
    tr = drive(theta=math.pi - 0.1, v=0.0)
    assert cost_lane_dir(tr, uniform_map(SPEC, loc=-math.pi + 0.1)) == pytest.approx(0.2, abs=1e-9)


def test_lane_uncertainty_single_cell():
    spec = GridSpec(0.5, 4.0, 4.0)
    cfg = CostConfig(sdv_length=0.3, sdv_width=0.3)
    one = Trajectory(np.array([[1.25, 1.25, 0.0, 10.0, 0.0, 0.0, 0.0]]))
    m = uniform_map(spec, sigma=0.2, conc=50.0)
    assert cost_lane_uncertainty(one, m, cfg) == pytest.approx(10 * (0.2 + 0.02), abs=1e-12)


def test_lane_uncertainty_velocity_factor():
    m = uniform_map(SPEC, sigma=0.3, conc=5.0)
    assert cost_lane_uncertainty(drive(v=0.0), m) == 0.0
    # same path driven twice as fast over a map without spatial variation
    assert cost_lane_uncertainty(drive(v=8.0), m) == pytest.approx(
        2 * cost_lane_uncertainty(drive(v=4.0), m), rel=1e-12)


def test_lane_uncertainty_zero_concentration_is_clamped():
    m = uniform_map(SPEC, sigma=0.0, conc=0.0)
    c = cost_lane_uncertainty(drive(v=1.0), m)
    assert np.isfinite(c) and c > 0


def test_drivable():
    tr = drive()
    assert cost_drivable(tr, uniform_map(SPEC, drivable=1.0)) == 0.0
    assert cost_drivable(tr, uniform_map(SPEC, drivable=0.8)) == pytest.approx(0.2 * 11, abs=1e-12)
    d = np.ones(SPEC.shape)
    d[SPEC.cell_of(np.array([[0.3, 0.3]]))] = 0.0  # under the first pose only
    assert cost_drivable(drive(v=0.0, x=20.1), uniform_map(SPEC, drivable=d)) == 0.0
    one = Trajectory(drive(v=0.0).states[:1])
    assert cost_drivable(one, uniform_map(SPEC, drivable=d)) == pytest.approx(1.0)


def test_junction():
    inter = (SPEC.cell_centers()[..., 0] > 30.0).astype(float)
    m = uniform_map(SPEC, inter=inter)
    tr = drive()  # front bumper reaches 27.5 m
    assert cost_junction(tr, m, red_light=False) == 0.0
    assert cost_junction(tr, m, red_light=True) == 0.0
    one = Trajectory(drive(x=31.0, v=0.0).states[:1])
    assert cost_junction(one, m, red_light=True) == pytest.approx(1.0)
    assert cost_junction(one, m, red_light=False) == 0.0


# -- occupancy and headway ---------------------------------------------------------

def test_occupancy_empty_world():
    occ = cost_occupancy(drive(), {"vehicle": occ_field({})})
    assert occ.shape == (PLAN_STEPS + 1,)
    assert not occ.any()


def test_occupancy_from_flow_construction():
    # two half-occupied sources flow into the cell under the SDV at t = 4
    tr = drive()
    x4 = tr.states[4, :2] + [0.05, 0.05]
    r, c = OSPEC.cell_of(x4[None])
    src = np.zeros(OSPEC.shape)
    src[r[0], c[0] - 1] = src[r[0], c[0] + 1] = 0.5
    vel = np.zeros((1, *OSPEC.shape, 2))
    vel[0, r[0], c[0] - 1] = (0.8, 0.0)
    vel[0, r[0], c[0] + 1] = (-0.8, 0.0)
    g4 = flow_step(BevGrid(OSPEC, src), MotionField("vehicle", 3, OSPEC, np.ones((1, *OSPEC.shape)), vel))
    assert g4.cells[r[0], c[0]] == pytest.approx(0.75)
    f = occ_field({4: g4.cells})
    out = cost_occupancy(tr, {"vehicle": f})
    assert out[4] == pytest.approx(0.75, abs=1e-12)
    assert np.count_nonzero(out) == 1


def test_occupancy_sums_class_maxima():
    tr = drive(v=0.0)
    fp = centers_in_box(OSPEC, 0.1 - L / 2, 0.1 + L / 2, 0.1 - W / 2, 0.1 + W / 2)
    veh = np.where(fp, 0.6, 0.0)
    veh[np.nonzero(fp)[0][0], np.nonzero(fp)[1][0]] = 0.2
    ped = np.where(fp, 0.3, 0.0)
    out = cost_occupancy(tr, {"vehicle": occ_field({2: veh}),
                              "pedestrian": occ_field({2: ped}, "pedestrian")})
    assert out[2] == pytest.approx(0.9, abs=1e-12)
    assert out[1] == 0.0


def _headway_scene(lead_speed, gap):
    """SDV at v=10 heading +x; one occupied cell ``gap`` m beyond its front bumper."""
    r, c = 25, 60
    cx, cy = OSPEC.grid_to_world(np.array([c, r], dtype=float))
    x0 = cx - gap - L / 2
    one = Trajectory(np.array([[x0, cy, 0.0, 10.0, 0.0, 0.0, 0.0]]))
    occ = np.zeros(OSPEC.shape)
    occ[r, c] = 1.0
    f = occ_field({0: occ})
    mf = MotionField.uniform_velocity("vehicle", 0, OSPEC, (lead_speed, 0.0))
    return one, {"vehicle": f}, {"vehicle": [mf] * PLAN_STEPS}


def test_headway_hand_evaluated():
    one, occ, mot = _headway_scene(0.0, 5.0)
    h = cost_headway(one, occ, mot, SafetyParams(a_hard=8.0, a_comf=3.0, t_react=1.0))
    assert h[0] == pytest.approx(10.0 + 100.0 / 6.0 - 5.0, abs=1e-9)


def test_headway_fast_lead_far_away_is_free():
    one, occ, mot = _headway_scene(20.0, 15.0)
    assert cost_headway(one, occ, mot)[0] == 0.0


def test_headway_empty_and_out_of_range():
    one, occ, mot = _headway_scene(0.0, 25.0)  # beyond the 20 m range
    assert cost_headway(one, occ, mot)[0] == 0.0
    assert not cost_headway(drive(), {"vehicle": occ_field({})}, {}).any()


def test_headway_ignores_objects_behind():
    one, occ, mot = _headway_scene(0.0, 5.0)
    flipped = Trajectory(one.states.copy())
    flipped.states[0, 2] = math.pi
    flipped.states[0, 0] += L  # still 5 m away, but now behind the rear bumper
    assert cost_headway(flipped, occ, mot)[0] == 0.0


def test_safety_params_validation():
    with pytest.raises(ValueError):
        SafetyParams(a_hard=0.0)


# -- comfort -----------------------------------------------------------------------

def test_comfort_straight_constant_speed():
    assert cost_comfort(drive()) == (0.0, 0.0, 0.0, 0.0)


def test_comfort_circle():
    j, la, c, cr = cost_comfort(drive(v=6.0, kappa=0.05))
    assert j == 0.0 and cr == 0.0
    assert la == pytest.approx((36 * 0.05) ** 2, abs=1e-12)
    assert c == pytest.approx(0.05 ** 2, abs=1e-15)


def test_comfort_acceleration_step():
    prof = np.zeros((PLAN_STEPS, 2))
    prof[5:, 0] = 2.0
    j, *_ = cost_comfort(drive(prof=prof))
    assert j == pytest.approx((2 / 0.5) ** 2 / PLAN_STEPS, abs=1e-12)


# -- totals -----------------------------------------------------------------------

def _scene():
    rng = np.random.default_rng(0)
    m = uniform_map(SPEC, drivable=rng.random(SPEC.shape), mu=rng.random(SPEC.shape) * 5,
                    loc=rng.uniform(-3, 3, SPEC.shape), conc=rng.uniform(1, 60, SPEC.shape),
                    inter=rng.random(SPEC.shape), route=(rng.random(SPEC.shape) > 0.01))
    occ = np.zeros(OSPEC.shape)
    occ[20:30, 40:60] = rng.random((10, 20))
    f = OccupancyField("vehicle", tuple(grid(occ * (t + 1) / 12, OSPEC) for t in range(12)))
    mf = MotionField.uniform_velocity("vehicle", 0, OSPEC, (1.0, 0.0))
    return Scene(m, {"vehicle": f}, {"vehicle": [mf] * PLAN_STEPS}, red_light=True)


def _candidates(n=40, seed=1):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        prof = np.column_stack([rng.uniform(-2, 2, PLAN_STEPS), rng.uniform(-0.03, 0.03, PLAN_STEPS)])
        out.append(drive(v=rng.uniform(0, 10), prof=prof).states)
    return np.stack(out)


def test_evaluate_is_dot_product():
    scene, cands = _scene(), _candidates()
    rng = np.random.default_rng(2)
    w = CostWeights.from_array(rng.random(len(SUBCOSTS)))
    totals, table = evaluate_batch(cands, scene, w)
    manual = np.array([sum(getattr(w, n) * table.row(i).as_dict()[n] for n in SUBCOSTS)
                       for i in range(len(cands))])
    np.testing.assert_allclose(totals, manual, rtol=0, atol=1e-9)
    assert np.all(np.isfinite(table.values))
    np.testing.assert_allclose(table.column("occupancy"), table.occupancy_t.sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(table.column("headway"), table.headway_t.sum(axis=1), atol=1e-12)


def test_zero_and_unit_weights():
    scene, cands = _scene(), _candidates(5)
    tr = Trajectory(cands[0])
    total, bd = evaluate(tr, scene, CostWeights())
    assert total == 0.0
    for n in SUBCOSTS:
        t, _ = evaluate(tr, scene, CostWeights(**{n: 1.0}))
        assert t == bd.as_dict()[n]


def test_breakdown_independent_of_weights():
    scene, cands = _scene(), _candidates(5)
    a = evaluate_batch(cands, scene, CostWeights())[1].values
    b = evaluate_batch(cands, scene, CostWeights.from_array(np.ones(len(SUBCOSTS))))[1].values
    np.testing.assert_array_equal(a, b)


def test_single_views_match_batch():
    scene, cands = _scene(), _candidates(3)
    bd = breakdown_batch(cands, scene).row(1)
    tr = Trajectory(cands[1])
    assert cost_lane_dist(tr, scene.map) == pytest.approx(bd.lane_dist, abs=1e-12)
    assert cost_lane_dir(tr, scene.map) == pytest.approx(bd.lane_dir, abs=1e-12)
    assert cost_drivable(tr, scene.map) == pytest.approx(bd.drivable, abs=1e-12)
    assert cost_route(tr, scene.map.route) == pytest.approx(bd.route, abs=1e-12)
    np.testing.assert_allclose(cost_occupancy(tr, scene.occupancy), bd.occupancy_t, atol=1e-12)
    np.testing.assert_allclose(cost_headway(tr, scene.occupancy, scene.motion), bd.headway_t,
                               atol=1e-12)


def test_occupancy_locality_and_monotonicity():
    tr = drive(v=2.0)
    base = np.zeros(OSPEC.shape)
    base[24:27, 30:40] = 0.4
    ref = cost_occupancy(tr, {"vehicle": occ_field({t: base for t in range(12)})})
    far = base.copy()
    far[0:3, 0:5] = 1.0  # well behind and to the side
    same = cost_occupancy(tr, {"vehicle": occ_field({t: far for t in range(12)})})
    np.testing.assert_array_equal(same, ref)
    up = np.minimum(base + 0.3 * np.random.default_rng(0).random(OSPEC.shape), 1.0)
    more = cost_occupancy(tr, {"vehicle": occ_field({t: up for t in range(12)})})
    assert np.all(more >= ref)


def test_route_monotonicity():
    tr = drive()
    rng = np.random.default_rng(4)
    r = rng.uniform(0.2, 0.9, SPEC.shape)
    assert -cost_route(tr, grid(np.minimum(r + 0.1, 1.0))) >= -cost_route(tr, grid(r))


def test_config_round_trip(tmp_path):
    w, s = default_config()
    assert w.occupancy > 0 and s.headway_range == 20.0
    save_config(tmp_path / "w.yaml", w, s)
    assert load_config(tmp_path / "w.yaml") == (w, s)
    (tmp_path / "bad.yaml").write_text("weights:\n  routee: 1\n")
    with pytest.raises(ValueError):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ValueError):
        CostWeights(route=-1.0)
