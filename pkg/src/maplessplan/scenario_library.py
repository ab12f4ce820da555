"""Builders for the shipped synthetic scenarios.

The YAML files under ``data/scenarios`` are generated from these builders
(``python -m maplessplan.scenario_library DIR``); geometry lives here so
the lane graph, drivable area and scripts stay consistent.
"""
from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import yaml

HALF = 1.75  # half lane width
BOX = 10.0   # intersection half size


def _pts(a) -> list[list[float]]:
    return [[round(float(x), 4), round(float(y), 4)] for x, y in np.asarray(a)]


def _line(p0, p1) -> list[list[float]]:
    return _pts([p0, p1])


def _arc(center, radius, a0, a1, n=24) -> list[list[float]]:
    t = np.linspace(a0, a1, n)
    return _pts(np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)]))


def _rect(x0, y0, x1, y1) -> list[list[float]]:
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def straight_road(x0=-100.0, x1=400.0, speed=12.0) -> dict:
    return {
        "lanes": [
            {"id": "east", "centerline": _line((x0, -HALF), (x1, -HALF)), "speed_limit": speed},
            {"id": "west", "centerline": _line((x1, HALF), (x0, HALF)), "speed_limit": speed},
        ],
        "drivable": [_rect(x0, -2 * HALF, x1, 2 * HALF)],
        "intersections": [],
    }


def curved_road(radius=60.0, speed=12.0) -> dict:
    """Straight approach, a 90 degree left curve, straight exit."""
    c = (0.0, radius)
    east_in = _line((-100.0, -HALF), (0.0, -HALF))
    curve = _arc(c, radius + HALF, -math.pi / 2, 0.0, 40)
    exit_ = _line((radius + HALF, radius), (radius + HALF, radius + 300.0))
    west_in = _line((radius - HALF, radius + 300.0), (radius - HALF, radius))
    curve_w = _arc(c, radius - HALF, 0.0, -math.pi / 2, 40)
    west_out = _line((0.0, HALF), (-100.0, HALF))
    ring = [[x, y] for x, y in _arc(c, radius + 2 * HALF, -math.pi / 2, 0.0, 40)] + \
        [[x, y] for x, y in _arc(c, radius - 2 * HALF, 0.0, -math.pi / 2, 40)]
    return {
        "lanes": [
            {"id": "in", "centerline": east_in, "successors": ["curve"], "speed_limit": speed},
            {"id": "curve", "centerline": curve, "successors": ["out"], "speed_limit": speed},
            {"id": "out", "centerline": exit_, "speed_limit": speed},
            {"id": "back_in", "centerline": west_in, "successors": ["back_curve"], "speed_limit": speed},
            {"id": "back_curve", "centerline": curve_w, "successors": ["back_out"], "speed_limit": speed},
            {"id": "back_out", "centerline": west_out, "speed_limit": speed},
        ],
        "drivable": [_rect(-100.0, -2 * HALF, 0.0, 2 * HALF), ring,
                     _rect(radius - 2 * HALF, radius, radius + 2 * HALF, radius + 300.0)],
        "intersections": [],
    }


def intersection(speed=12.0, reach=250.0) -> dict:
    """Four-way intersection centered at the origin, right-hand traffic.

    Eastbound approach ``e_in`` branches into ``e_through``, ``e_left`` and
    ``e_right``; opposing and crossing lanes exist for realism and for the
    oncoming-traffic check.
    """
    B = BOX
    lanes = [
        {"id": "e_in", "centerline": _line((-reach, -HALF), (-B, -HALF)),
         "successors": ["e_through", "e_left", "e_right"], "speed_limit": speed},
        {"id": "e_through", "centerline": _line((-B, -HALF), (B, -HALF)), "successors": ["e_out"],
         "speed_limit": speed},
        {"id": "e_out", "centerline": _line((B, -HALF), (reach, -HALF)), "speed_limit": speed},
        {"id": "e_left", "centerline": _arc((-B, B), B + HALF, -math.pi / 2, 0.0),
         "successors": ["n_out"], "speed_limit": speed},
        {"id": "n_out", "centerline": _line((HALF, B), (HALF, reach)), "speed_limit": speed},
        {"id": "e_right", "centerline": _arc((-B, -B), B - HALF, math.pi / 2, 0.0),
         "successors": ["s_out"], "speed_limit": speed},
        {"id": "s_out", "centerline": _line((-HALF, -B), (-HALF, -reach)), "speed_limit": speed},
        {"id": "w_in", "centerline": _line((reach, HALF), (B, HALF)), "successors": ["w_through"],
         "speed_limit": speed},
        {"id": "w_through", "centerline": _line((B, HALF), (-B, HALF)), "successors": ["w_out"],
         "speed_limit": speed},
        {"id": "w_out", "centerline": _line((-B, HALF), (-reach, HALF)), "speed_limit": speed},
        {"id": "s_in", "centerline": _line((HALF, -reach), (HALF, -B)), "successors": ["s_through"],
         "speed_limit": speed},
        {"id": "s_through", "centerline": _line((HALF, -B), (HALF, B)), "speed_limit": speed},
        {"id": "n_in", "centerline": _line((-HALF, reach), (-HALF, B)), "successors": ["n_through"],
         "speed_limit": speed},
        {"id": "n_through", "centerline": _line((-HALF, B), (-HALF, -B)), "speed_limit": speed},
    ]
    drivable = [_rect(-reach, -2 * HALF, reach, 2 * HALF), _rect(-2 * HALF, -reach, 2 * HALF, reach),
                _rect(-B, -B, B, B)]
    return {"lanes": lanes, "drivable": drivable, "intersections": [_rect(-B, -B, B, B)]}


def _scenario(name, road, expert, command=None, actors=(), lights=None, tags=(), **extra) -> dict:
    d = {"name": name, "duration_s": 18.0, "dt": 0.5, "tags": list(tags), **road,
         "command": command or {"action": "keep_lane", "distance_m": 0.0}, "expert": expert,
         "actors": list(actors)}
    if lights:
        d["lights"] = lights
    d.update(extra)
    return d


def library() -> list[dict]:
    out = []
    out.append(_scenario("straight_empty", straight_road(),
                         {"lanes": ["east"], "s0": 100.0, "speeds": [[0, 8.0]]}, tags=["straight"]))
    out.append(_scenario("straight_fast", straight_road(speed=15.0),
                         {"lanes": ["east"], "s0": 100.0, "speeds": [[0, 13.0]]}, tags=["straight"]))
    out.append(_scenario("gentle_curve", curved_road(),
                         {"lanes": ["in", "curve", "out"], "s0": 40.0, "speeds": [[0, 8.0]]},
                         tags=["curve"]))
    out.append(_scenario(
        "slow_lead_follow", straight_road(),
        {"lanes": ["east"], "s0": 100.0, "speeds": [[0, 8.0], [4, 4.0]]},
        actors=[{"id": "lead", "class": "vehicle", "lanes": ["east"], "s0": 130.0, "speeds": [[0, 4.0]]}],
        tags=["straight", "lead"]))
    out.append(_scenario(
        "lead_brake_stop", straight_road(),
        {"lanes": ["east"], "s0": 100.0, "speeds": [[0, 8.0], [3, 8.0], [7, 0.0]]},
        actors=[{"id": "lead", "class": "vehicle", "lanes": ["east"], "s0": 125.0,
                 "speeds": [[0, 8.0], [3, 8.0], [6, 0.0]]}],
        tags=["straight", "lead", "stop"]))
    out.append(_scenario(
        "pedestrian_crossing", straight_road(),
        {"lanes": ["east"], "s0": 100.0,
         "speeds": [[0, 8.0], [2, 8.0], [5.5, 0.0], [8.5, 0.0], [11.5, 8.0]]},
        actors=[{"id": "ped", "class": "pedestrian", "path": _line((40.0, -9.0), (40.0, 12.0)),
                 "s0": 0.0, "speeds": [[0, 0.0], [1, 1.4]]}],
        tags=["straight", "pedestrian"]))
    out.append(_scenario(
        "left_turn", intersection(),
        {"lanes": ["e_in", "e_left", "n_out"], "s0": 190.0,
         "speeds": [[0, 8.0], [4, 6.0], [10, 6.0], [13, 8.0]]},
        command={"action": "turn_left", "distance_m": 50.0}, tags=["turn"]))
    out.append(_scenario(
        "right_turn", intersection(),
        {"lanes": ["e_in", "e_right", "s_out"], "s0": 190.0,
         "speeds": [[0, 8.0], [4, 5.0], [10, 5.0], [13, 8.0]]},
        command={"action": "turn_right", "distance_m": 50.0}, tags=["turn"]))
    out.append(_scenario(
        "right_turn_lead", intersection(),
        {"lanes": ["e_in", "e_right", "s_out"], "s0": 190.0,
         "speeds": [[0, 7.0], [4, 4.0], [10, 4.0], [14, 7.0]]},
        command={"action": "turn_right", "distance_m": 50.0},
        actors=[{"id": "lead", "class": "vehicle", "lanes": ["e_in", "e_right", "s_out"], "s0": 215.0,
                 "speeds": [[0, 6.0], [3, 4.0], [10, 4.0], [13, 7.0]]}],
        tags=["turn", "lead"]))
    out.append(_scenario(
        "left_turn_oncoming", intersection(),
        {"lanes": ["e_in", "e_left", "n_out"], "s0": 190.0,
         "speeds": [[0, 8.0], [4, 6.0], [10, 6.0], [13, 8.0]]},
        command={"action": "turn_left", "distance_m": 50.0},
        actors=[{"id": "oncoming", "class": "vehicle", "lanes": ["w_in", "w_through", "w_out"],
                 "s0": 200.0, "speeds": [[0, 10.0]]}],
        tags=["turn", "oncoming"]))
    out.append(_scenario(
        "red_light_stop", intersection(),
        {"lanes": ["e_in", "e_through", "e_out"], "s0": 200.0,
         "speeds": [[0, 7.0], [2, 7.0], [7, 0.0]]},
        lights=[[0.0, "red"]], tags=["straight", "junction"]))
    out.append(_scenario(
        "green_through", intersection(),
        {"lanes": ["e_in", "e_through", "e_out"], "s0": 200.0, "speeds": [[0, 8.0]]},
        actors=[{"id": "oncoming", "class": "vehicle", "lanes": ["w_in", "w_through", "w_out"],
                 "s0": 180.0, "speeds": [[0, 9.0]]}],
        tags=["straight", "junction"]))
    out.append(_scenario(
        "rear_idm", straight_road(),
        {"lanes": ["east"], "s0": 100.0, "speeds": [[0, 10.0]]},
        actors=[{"id": "rear", "class": "vehicle", "lanes": ["east"], "s0": 78.0,
                 "speeds": [[0, 10.0]], "reactive": True}],
        tags=["straight", "reactive"], sdv={"v": 5.0}))
    return out


def write_library(directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, sc in enumerate(library()):
        p = d / f"{i:02d}_{sc['name']}.yaml"
        with open(p, "w") as fh:
            yaml.safe_dump(sc, fh, sort_keys=False, default_flow_style=None, width=120)
        paths.append(p)
    return paths


if __name__ == "__main__":  # pragma: no cover
    for p in write_library(sys.argv[1] if len(sys.argv) > 1 else "."):
        print(p)
