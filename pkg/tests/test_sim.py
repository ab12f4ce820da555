import math
from dataclasses import replace

import numpy as np
import pytest
from shapely.geometry import Polygon

from maplessplan.costs import CostWeights
from maplessplan.grid import box_polygon
from maplessplan.scenario_library import _scenario, library, straight_road
from maplessplan.sim import (EVENT_KINDS, EpisodeMetrics, IdmParams, ScenarioError, SimOptions,
                             actor_polygons, aggregate, apply_ablation, detect_events,
                             idm_acceleration, idm_advance, initial_world, load_scenarios,
                             metrics_tsv, planned_route, run_episode, scenario_from_dict,
                             shipped_scenario_dir, step, trace_tsv)


def scenario(name, **kw):
    return scenario_from_dict(next(d for d in library() if d["name"] == name) | kw)


def expert_state(sc, t):
    x, y, th = sc.expert_pose(t)
    return np.array([x, y, th, float(sc.expert_schedule.speed(t)), 0.0, 0.0, 0.0])


# -- IDM -------------------------------------------------------------------------

def test_idm_never_produces_negative_gap():
    rng = np.random.default_rng(0)
    p = IdmParams()
    for _ in range(300):
        v = rng.uniform(0, 15)
        gap = rng.uniform(1.0, 80.0)
        v_lead = rng.choice([0.0, rng.uniform(0, 15)])
        s, lead = 0.0, gap
        for _ in range(60):
            s, v = idm_advance(s, v, 12.0, lead, v_lead, 0.5, p)
            lead += v_lead * 0.5
            assert lead - s >= 0.0
            assert v >= 0.0


def test_idm_free_road_approaches_desired_speed():
    v, s, prev = 0.0, 0.0, -1.0
    for _ in range(200):
        s, v = idm_advance(s, v, 10.0, math.inf, 0.0, 0.5)
        assert prev <= v <= 10.0
        prev = v
    assert v == pytest.approx(10.0, abs=1e-2)
    assert idm_acceleration(0.0, 10.0, math.inf, 0.0) == pytest.approx(IdmParams().a_max)


def test_rear_idm_vehicle_stops_behind_stopped_sdv():
    d = _scenario("rear", straight_road(), {"lanes": ["east"], "s0": 100.0, "speeds": [[0, 0.0]]},
                  actors=[{"id": "rear", "class": "vehicle", "lanes": ["east"], "s0": 60.0,
                           "speeds": [[0, 10.0]], "reactive": True}])
    sc = scenario_from_dict(d)
    w = initial_world(sc)
    w.actors[0] = replace(w.actors[0], idm=True)
    sdv = w.sdv.copy()
    for _ in range(60):
        w = step(sc, w, sdv)
        gap = (100.0 - 2.4) - (w.actors[0].s + 2.4)
        assert gap >= 0.0
    assert w.actors[0].v == pytest.approx(0.0, abs=1e-3)
    assert not detect_events(sc, w, planned_route(sc))


def test_scripted_actors_follow_script_without_divergence():
    sc = scenario("slow_lead_follow")
    w = initial_world(sc)
    for k in range(1, 10):
        w = step(sc, w, expert_state(sc, k * sc.dt))
        assert w.actors[0].s == sc.actors[0].s_at(k * sc.dt)
        assert not w.actors[0].idm


# -- events ------------------------------------------------------------------------

def test_expert_track_has_no_events():
    for name in ("straight_empty", "left_turn", "right_turn", "gentle_curve"):
        sc = scenario(name)
        route = planned_route(sc)
        w = initial_world(sc)
        for k in range(sc.ticks):
            assert detect_events(sc, w, route) == [], (name, k)
            w = step(sc, w, expert_state(sc, (k + 1) * sc.dt))


def test_forced_overlap_gives_one_collision_at_first_tick():
    d = _scenario("crash", straight_road(), {"lanes": ["east"], "s0": 100.0, "speeds": [[0, 0.0]]},
                  actors=[{"id": "ram", "class": "vehicle", "lanes": ["east"], "s0": 80.0,
                           "speeds": [[0, 3.0]]}])
    sc = scenario_from_dict(d)
    route = planned_route(sc)
    w = initial_world(sc)
    sdv_poly = Polygon(box_polygon(*w.sdv[:3], 4.8, 2.0))
    first, events = None, {}
    for _ in range(sc.ticks):
        if first is None and sdv_poly.intersection(Polygon(actor_polygons(sc, w)[0])).area > 0:
            first = w.tick
        for ev in detect_events(sc, w, route):
            events.setdefault(ev.kind, ev)
        w = step(sc, w, w.sdv)
    # 15.2 m of bumper clearance closes at 3 m/s
    assert first == math.floor((100.0 - 80.0 - 4.8) / 3.0 / 0.5) + 1
    assert list(events) == ["collision"] and events["collision"].tick == first


def test_reversed_heading_is_oncoming():
    sc = scenario("straight_empty")
    w = initial_world(sc)
    w.sdv[2] += math.pi
    kinds = [e.kind for e in detect_events(sc, w, planned_route(sc))]
    assert "oncoming_traffic" in kinds and "collision" not in kinds


def test_off_road_and_off_route():
    sc = scenario("straight_empty")
    w = initial_world(sc)
    w.sdv[1] += 12.0
    kinds = {e.kind for e in detect_events(sc, w, planned_route(sc))}
    assert {"off_road", "off_route"} <= kinds


# -- episodes --------------------------------------------------------------------------

def test_empty_straight_succeeds(bank, shipped_weights):
    ep = run_episode(scenario("straight_empty"), bank, shipped_weights)
    assert ep.success and not ep.events
    assert ep.ticks == 36 and len(ep.trace) == 37
    assert ep.progress_m > 100.0
    assert ep.mean_l2 < 8.0


def test_lead_brake_stop_no_collision(bank, shipped_weights):
    ep = run_episode(scenario("lead_brake_stop"), bank, shipped_weights)
    assert ep.event_counts["collision"] == 0 and ep.success
    assert ep.trace[-1]["v"] < 0.5


@pytest.mark.parametrize("preset", ["route", "route_keep_lane"])
def test_ablated_routing_leaves_route(bank, shipped_weights, preset):
    w, opts = apply_ablation(preset, shipped_weights)
    ep = run_episode(scenario("left_turn"), bank, w, opts)
    assert ep.off_route and "off_route" in {e.kind for e in ep.events}


def test_episode_deterministic(bank, shipped_weights):
    sc = scenario("pedestrian_crossing")
    a = run_episode(sc, bank, shipped_weights, seed=3)
    b = run_episode(sc, bank, shipped_weights, seed=3)
    assert metrics_tsv([a]) == metrics_tsv([b])
    assert trace_tsv(a) == trace_tsv(b)


def test_noisy_map_episode_runs(bank, shipped_weights):
    from maplessplan.online_map import NoiseModel

    opts = SimOptions(noise=NoiseModel(dropout_rate=0.05, sigma_inflation=1.5))
    a = run_episode(scenario("straight_empty"), bank, shipped_weights, opts, seed=1)
    b = run_episode(scenario("straight_empty"), bank, shipped_weights, opts, seed=1)
    assert trace_tsv(a) == trace_tsv(b)


# -- aggregation -------------------------------------------------------------------------

def episode(progress, **events):
    counts = {k: int(events.get(k, 0)) for k in EVENT_KINDS}
    return EpisodeMetrics("x", not any(counts.values()), [], counts, {}, [1.0], progress, 0.0, 0.0,
                          bool(counts["off_route"]), False, 36)


def test_aggregate_all_success():
    s = aggregate([episode(100.0), episode(50.0)])
    assert s["success_rate"] == 1.0
    assert s["meters_per_event"] == 150.0
    assert s["meters_per_collision"] == 150.0


def test_aggregate_one_collision():
    eps = [episode(100.0) for _ in range(9)] + [episode(100.0, collision=1)]
    s = aggregate(eps)
    assert s["meters_per_collision"] == 1000.0
    assert s["success_rate"] == pytest.approx(0.9)
    assert s["off_route_pct"] == 0.0


def test_aggregate_is_additive():
    a = [episode(30.0, off_route=1), episode(70.0)]
    b = [episode(10.0, collision=1, off_road=1), episode(5.0)]
    sa, sb, su = aggregate(a), aggregate(b), aggregate(a + b)
    for k in EVENT_KINDS:
        assert su[f"events_{k}"] == sa[f"events_{k}"] + sb[f"events_{k}"]
    assert su["meters"] == sa["meters"] + sb["meters"]
    assert su["success_rate"] == pytest.approx((sa["success_rate"] * 2 + sb["success_rate"] * 2) / 4)
    with pytest.raises(ValueError):
        aggregate([])


# -- scenario files -----------------------------------------------------------------------

def test_shipped_battery_shape():
    scs = load_scenarios(shipped_scenario_dir())
    assert len(scs) >= 10
    tags = {t for s in scs for t in s.tags}
    assert {"straight", "turn", "pedestrian", "lead"} <= tags
    assert {s.command.action for s in scs} >= {"keep_lane", "turn_left", "turn_right"}


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("expert"),
    lambda d: d.update(command={"action": "u_turn"}),
    lambda d: d.update(lights=[[0.0, "blue"]]),
    lambda d: d["expert"].update(lanes=["nowhere"]),
    lambda d: d["expert"].update(speeds=[[1.0, 2.0], [0.5, 1.0]]),
])
def test_scenario_schema_errors(mutate):
    d = next(x for x in library() if x["name"] == "straight_empty")
    d = {**d, "expert": dict(d["expert"])}
    mutate(d)
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)


def test_unknown_ablation():
    with pytest.raises(KeyError):
        apply_ablation("nope", CostWeights())
