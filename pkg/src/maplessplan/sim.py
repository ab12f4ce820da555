"""Closed-loop simulation: scenario replay, reactive IDM actors, events and metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml
from shapely.geometry import Polygon

from .costs import CostConfig, CostWeights, Scene
from .grid import BevGrid, GridSpec, box_polygon, rasterize_convex, wrap_angle
from .occupancy_flow import HORIZON_STEPS, ActorMode, ActorTrack, predict_occupancy
from .online_map import (ACTIONS, DrivingCommand, Lane, LaneGraph, MapOracleConfig, NoiseModel,
                         distance_to_segments, perturb_map, polygons_mask, rasterize_map,
                         route_lanes)
from .planner import plan
from .trajectory import A, KAPPA, V, SdvState, TrajectoryBank, VehicleLimits

EVENT_KINDS = ("collision", "off_route", "off_road", "oncoming_traffic")
ROUTE_MODES = ("command", "keep_lane", "uniform")


@dataclass(frozen=True)
class Ablation:
    """Weights to zero plus an optional replacement for the route layer."""
    drop: tuple[str, ...] = ()
    route_mode: str | None = None


# "route" removes the routing input (all-ones route layer) and keeps its weights;
# "route_weight" zeroes the route weights, which removes the progress reward too.
ABLATIONS = {
    "full": Ablation(),
    "route": Ablation(route_mode="uniform"),
    "route_keep_lane": Ablation(route_mode="keep_lane"),
    "route_weight": Ablation(("route", "route_cost_to_go")),
    "route_to_go": Ablation(("route_cost_to_go",)),
    "lane": Ablation(("lane_dist", "lane_dir")),
    "uncertainty": Ablation(("lane_uncertainty",)),
    "drivable": Ablation(("drivable",)),
    "junction": Ablation(("junction",)),
    "occupancy": Ablation(("occupancy",)),
    "headway": Ablation(("headway",)),
    "comfort": Ablation(("jerk", "lat_accel", "curvature", "curvature_rate")),
}


class ScenarioError(ValueError):
    pass


# -- kinematic scripts ------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedSchedule:
    """Piecewise-linear speed over time, held constant outside the knots."""
    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.knots:
            raise ScenarioError("speed schedule needs at least one knot")
        t = [k[0] for k in self.knots]
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ScenarioError("speed schedule times must increase")
        if any(k[1] < 0 for k in self.knots):
            raise ScenarioError("speeds must be nonnegative")

    def speed(self, t):
        t_k, v_k = np.array(self.knots, dtype=float).T
        return np.interp(t, t_k, v_k)

    def distance(self, t):
        """Distance travelled between time 0 and ``t`` (exact for the linear pieces)."""
        t = np.asarray(t, dtype=float)
        t_k, v_k = np.array(self.knots, dtype=float).T
        # add t=0 and extend so every query falls in a linear piece
        grid = np.unique(np.concatenate([[0.0], t_k[t_k > 0]]))
        v_g = np.interp(grid, t_k, v_k)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v_g[1:] + v_g[:-1]) * np.diff(grid))])
        k = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, len(grid) - 1)
        v_t = np.interp(t, t_k, v_k)
        return cum[k] + 0.5 * (v_g[k] + v_t) * (t - grid[k])


def path_from(lg: LaneGraph, spec: dict) -> Lane:
    """Polyline from either ``lanes: [ids]`` or an explicit ``path: [[x, y], ...]``."""
    if "path" in spec:
        pts = np.asarray(spec["path"], dtype=float)
    elif "lanes" in spec:
        try:
            parts = [lg.lanes[l].centerline for l in spec["lanes"]]
        except KeyError as e:
            raise ScenarioError(f"unknown lane {e.args[0]!r}") from None
        pts = parts[0]
        for p in parts[1:]:
            pts = np.vstack([pts, p[1:] if np.allclose(p[0], pts[-1]) else p])
    else:
        raise ScenarioError("need 'lanes' or 'path'")
    try:
        return Lane("path", pts)
    except ValueError as e:
        raise ScenarioError(str(e)) from None


@dataclass
class ActorScript:
    id: str
    cls: str
    length: float
    width: float
    paths: list[Lane]
    weights: list[float]
    realized: int
    s0: float
    schedule: SpeedSchedule
    reactive: bool = False

    def s_at(self, t: float) -> float:
        return self.s0 + float(self.schedule.distance(t))

    def pose_at(self, t: float, branch: int | None = None) -> tuple[float, float, float]:
        return self.paths[self.realized if branch is None else branch].point_at(self.s_at(t))


@dataclass
class Scenario:
    name: str
    lanes: LaneGraph
    command: DrivingCommand
    sdv: SdvState
    expert_path: Lane
    expert_schedule: SpeedSchedule
    expert_s0: float = 0.0
    actors: list[ActorScript] = field(default_factory=list)
    lights: tuple[tuple[float, str], ...] = ((0.0, "green"),)
    duration_s: float = 18.0
    dt: float = 0.5
    tags: tuple[str, ...] = ()

    def light(self, t: float) -> str:
        state = "green"
        for t0, s in self.lights:
            if t >= t0 - 1e-9:
                state = s
        return state

    def expert_pose(self, t: float) -> tuple[float, float, float]:
        return self.expert_path.point_at(self.expert_s0 + float(self.expert_schedule.distance(t)))

    @property
    def ticks(self) -> int:
        return int(round(self.duration_s / self.dt))


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}: missing '{key}'")
    return d[key]


def scenario_from_dict(d: dict) -> Scenario:
    name = str(_req(d, "name", "scenario"))
    try:
        lanes = [Lane(str(_req(l, "id", name)), np.asarray(_req(l, "centerline", name), dtype=float),
                      tuple(l.get("successors", ())), l.get("left"), l.get("right"),
                      float(l.get("speed_limit", 12.0)), float(l.get("width", 3.5)))
                 for l in _req(d, "lanes", name)]
        lg = LaneGraph({ln.id: ln for ln in lanes}, d.get("drivable", []), d.get("intersections", []))
    except ValueError as e:
        raise ScenarioError(f"{name}: {e}") from None
    cmd_d = d.get("command", {})
    if cmd_d.get("action", "keep_lane") not in ACTIONS:
        raise ScenarioError(f"{name}: unknown command action {cmd_d.get('action')!r}")
    cmd = DrivingCommand(cmd_d.get("action", "keep_lane"), float(cmd_d.get("distance_m", 0.0)))
    exp = _req(d, "expert", name)
    expert_path = path_from(lg, exp)
    sched = SpeedSchedule(tuple((float(a), float(b)) for a, b in _req(exp, "speeds", f"{name}.expert")))
    s0 = float(exp.get("s0", 0.0))
    x, y, th = expert_path.point_at(s0)
    sd = d.get("sdv", {})
    sdv = SdvState(float(sd.get("x", x)), float(sd.get("y", y)), float(sd.get("theta", th)),
                   float(sd.get("v", sched.speed(0.0))), float(sd.get("a", 0.0)),
                   float(sd.get("kappa", 0.0)))
    actors = []
    for a in d.get("actors", []) or []:
        aid = str(_req(a, "id", name))
        cls = a.get("class", "vehicle")
        if cls not in ("vehicle", "pedestrian", "bicyclist"):
            raise ScenarioError(f"{name}.{aid}: unknown class {cls!r}")
        branches = a.get("branches") or [{**a, "weight": 1.0}]
        paths = [path_from(lg, b) for b in branches]
        weights = [float(b.get("weight", 1.0)) for b in branches]
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ScenarioError(f"{name}.{aid}: branch weights must be nonnegative, not all zero")
        realized = int(a.get("realized", 0))
        if not 0 <= realized < len(paths):
            raise ScenarioError(f"{name}.{aid}: realized branch out of range")
        default_dims = {"vehicle": (4.8, 2.0), "pedestrian": (0.8, 0.8), "bicyclist": (1.8, 0.8)}[cls]
        actors.append(ActorScript(
            aid, cls, float(a.get("length", default_dims[0])), float(a.get("width", default_dims[1])),
            paths, weights, realized, float(a.get("s0", 0.0)),
            SpeedSchedule(tuple((float(p), float(q)) for p, q in _req(a, "speeds", f"{name}.{aid}"))),
            bool(a.get("reactive", False))))
    lights = tuple((float(t), str(s)) for t, s in d.get("lights", [[0.0, "green"]]))
    if any(s not in ("green", "red") for _, s in lights):
        raise ScenarioError(f"{name}: light states are 'green' or 'red'")
    return Scenario(name, lg, cmd, sdv, expert_path, sched, s0, actors, lights,
                    float(d.get("duration_s", 18.0)), float(d.get("dt", 0.5)),
                    tuple(d.get("tags", ())))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: not a mapping")
    return scenario_from_dict(data)


def load_scenarios(directory) -> list[Scenario]:
    files = sorted(Path(directory).glob("*.yaml"))
    if not files:
        raise ScenarioError(f"no *.yaml scenarios in {directory}")
    return [load_scenario(f) for f in files]


def shipped_scenario_dir() -> Path:
    return Path(__file__).parent / "data" / "scenarios"


# -- IDM -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class IdmParams:
    t_headway: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    s0: float = 2.0
    delta: float = 4.0
    substeps: int = 10


def idm_acceleration(v: float, v_desired: float, gap: float, v_lead: float,
                     p: IdmParams = IdmParams()) -> float:
    """IDM acceleration; ``gap = inf`` means no leader."""
    free = 1.0 - (v / v_desired) ** p.delta if v_desired > 0 else -1.0
    if not math.isfinite(gap):
        return p.a_max * free
    s_star = p.s0 + max(0.0, v * p.t_headway + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b_comf)))
    return p.a_max * (free - (s_star / max(gap, 1e-6)) ** 2)


def idm_advance(s: float, v: float, v_desired: float, lead_s: float, lead_v: float, dt: float,
                p: IdmParams = IdmParams()) -> tuple[float, float]:
    """Advance one follower by ``dt``; ``lead_s`` is the leader's rear bumper minus the follower's
    front bumper offset, expressed on the follower's arc length (inf without leader)."""
    h = dt / p.substeps
    for _ in range(p.substeps):
        lead_s += lead_v * h
        a = idm_acceleration(v, v_desired, lead_s - s, lead_v, p)
        v_new = v + a * h
        if v_new < 0.0:
            s += v * v / (-2.0 * a)
            v = 0.0
        else:
            s += 0.5 * (v + v_new) * h
            v = v_new
    return s, v


# -- world state -----------------------------------------------------------------------------

@dataclass
class ActorState:
    s: float
    v: float
    idm: bool = False
    live: tuple[bool, ...] = ()


@dataclass
class World:
    tick: int
    t: float
    sdv: np.ndarray  # (7,)
    actors: list[ActorState]
    reactive_on: bool = False

    def copy(self) -> "World":
        return World(self.tick, self.t, self.sdv.copy(), [replace(a) for a in self.actors],
                     self.reactive_on)


def initial_world(sc: Scenario) -> World:
    actors = [ActorState(a.s0, float(a.schedule.speed(0.0)), False, tuple(True for _ in a.paths))
              for a in sc.actors]
    return World(0, 0.0, sc.sdv.as_array(), actors)


def actor_pose(sc: Scenario, w: World, i: int, branch: int | None = None):
    a = sc.actors[i]
    return a.paths[a.realized if branch is None else branch].point_at(w.actors[i].s)


def actor_polygons(sc: Scenario, w: World) -> list[np.ndarray]:
    out = []
    for i, a in enumerate(sc.actors):
        x, y, th = actor_pose(sc, w, i)
        out.append(box_polygon(x, y, th, a.length, a.width))
    return out


def actor_tracks(sc: Scenario, w: World, steps: int = HORIZON_STEPS,
                 idm: IdmParams = IdmParams(), limits: VehicleLimits = VehicleLimits()
                 ) -> list[ActorTrack]:
    """Future tracks used for occupancy.

    Scripted actors contribute their live branches. Reactive actors are
    forecast with IDM against constant-speed leaders: their scripts assume
    the logged SDV, not the planned one.
    """
    tracks = []
    future = np.arange(steps + 1) * sc.dt
    for i, (a, st) in enumerate(zip(sc.actors, w.actors)):
        if st.idm or a.reactive:
            gap, v_lead = _leader_gap(sc, w, i, limits)
            v_des = _desired_speed(sc, w, i)
            lead = st.s + gap if math.isfinite(gap) else math.inf
            s_i, v_i = st.s, st.v
            s = [s_i]
            for _ in range(steps):
                s_i, v_i = idm_advance(s_i, v_i, v_des, lead, v_lead, sc.dt, idm)
                lead += v_lead * sc.dt
                s.append(s_i)
            path = a.paths[a.realized]
            tracks.append(ActorTrack(a.cls, a.length, a.width,
                                     [ActorMode(1.0, np.array([path.point_at(q) for q in s]))]))
            continue
        s = st.s + a.schedule.distance(w.t + future) - a.schedule.distance(w.t)
        modes = [ActorMode(a.weights[b], np.array([a.paths[b].point_at(q) for q in s]))
                 for b in range(len(a.paths)) if st.live[b] and a.weights[b] > 0]
        tracks.append(ActorTrack(a.cls, a.length, a.width, modes))
    return tracks


def _desired_speed(sc: Scenario, w: World, i: int) -> float:
    pose = actor_pose(sc, w, i)
    return sc.lanes.lanes[sc.lanes.current_lane(pose)].speed_limit


def _leader_gap(sc: Scenario, w: World, i: int, limits: VehicleLimits) -> tuple[float, float]:
    """Bumper-to-bumper gap and speed of the closest object ahead on actor ``i``'s path."""
    a = sc.actors[i]
    path = a.paths[a.realized]
    s_i = w.actors[i].s
    best = (math.inf, 0.0)
    others = [(w.sdv[:2], limits.length, float(w.sdv[V]))]
    for j, b in enumerate(sc.actors):
        if j != i:
            others.append((np.array(actor_pose(sc, w, j)[:2]), b.length, w.actors[j].v))
    for xy, length, v in others:
        s_o, d_o, _ = path.project(xy)
        if d_o > 2.0 or s_o <= s_i:
            continue
        gap = s_o - s_i - 0.5 * (length + a.length)
        if gap < best[0]:
            best = (gap, v)
    return best


def step(sc: Scenario, w: World, next_sdv: np.ndarray, dt: float | None = None,
         idm: IdmParams = IdmParams(), limits: VehicleLimits = VehicleLimits()) -> World:
    """Advance the world by one tick: the SDV jumps to ``next_sdv``, actors follow scripts or IDM."""
    dt = sc.dt if dt is None else dt
    new = w.copy()
    for i, (a, st) in enumerate(zip(sc.actors, w.actors)):
        if st.idm:
            gap, v_lead = _leader_gap(sc, w, i, limits)
            v_des = _desired_speed(sc, w, i)
            lead = st.s + gap if math.isfinite(gap) else math.inf
            s, v = idm_advance(st.s, st.v, v_des, lead, v_lead, dt, idm)
            new.actors[i] = replace(st, s=s, v=v)
        else:
            s = a.s_at(w.t + dt)
            live = list(st.live)
            here = np.array(a.paths[a.realized].point_at(s)[:2])
            for b in range(len(a.paths)):
                if live[b] and np.hypot(*(np.array(a.paths[b].point_at(s)[:2]) - here)) > 1.0:
                    live[b] = False
            new.actors[i] = ActorState(s, float(a.schedule.speed(w.t + dt)), False, tuple(live))
    new.sdv = np.asarray(next_sdv, dtype=float).copy()
    new.tick = w.tick + 1
    new.t = w.t + dt
    return new


# -- routes and events -----------------------------------------------------------------------

def planned_route(sc: Scenario) -> list[str]:
    """Command-consistent lane sequence from the start pose (no command noise)."""
    return route_lanes(sc.lanes, sc.sdv.pose, sc.command)


def _lane_index(lg: LaneGraph, lanes: Sequence[str], pose) -> int:
    best, key = 0, None
    for i, lid in enumerate(lanes):
        _, d, h = lg.lanes[lid].project(pose[:2])
        mis = abs(float(wrap_angle(h - pose[2])))
        k = (mis >= math.pi / 2, d + 2.0 * mis)
        if key is None or k < key:
            best, key = i, k
    return best


def command_at(sc: Scenario, route: Sequence[str], pose) -> DrivingCommand:
    """Command as seen at ``pose``: the turn and its remaining distance, keep-lane once past it."""
    if sc.command.action == "keep_lane":
        return sc.command
    lg = sc.lanes
    idx = _lane_index(lg, route, pose)
    branch = next((i for i, l in enumerate(route) if i > 0 and lg.lanes[l].turn_kind() == sc.command.action),
                  None)
    if branch is None or idx >= branch:
        return DrivingCommand("keep_lane", 0.0)
    s, _, _ = lg.lanes[route[idx]].project(pose[:2])
    dist = lg.lanes[route[idx]].length - s + sum(lg.lanes[l].length for l in route[idx + 1:branch])
    return DrivingCommand(sc.command.action, max(0.0, dist))


def route_distance(sc: Scenario, route: Sequence[str], xy) -> float:
    d, _ = distance_to_segments(np.asarray(xy, dtype=float).reshape(1, 2), sc.lanes.segments(route))
    return float(d[0])


@dataclass(frozen=True)
class SimEvent:
    kind: str
    tick: int
    position: tuple[float, float]


def detect_events(sc: Scenario, w: World, route: Sequence[str], drivable: BevGrid | None = None,
                  limits: VehicleLimits = VehicleLimits(), route_half_width: float = 2.5,
                  route_margin: float = 1.0) -> list[SimEvent]:
    """All event kinds present in the current world state."""
    x, y, th = w.sdv[0], w.sdv[1], w.sdv[2]
    fp = box_polygon(x, y, th, limits.length, limits.width)
    pos = (float(x), float(y))
    out = []
    sdv_poly = Polygon(fp)
    for poly in actor_polygons(sc, w):
        if sdv_poly.intersection(Polygon(poly)).area > 1e-9:
            out.append(SimEvent("collision", w.tick, pos))
            break
    if route and route_distance(sc, route, (x, y)) > route_half_width + route_margin:
        out.append(SimEvent("off_route", w.tick, pos))
    if drivable is None:
        spec = GridSpec.ego((x, y, th), 0.25, 8.0, 6.0)
        drivable = BevGrid(spec, polygons_mask(sc.lanes.drivable, spec).astype(float))
    cells = rasterize_convex(fp, drivable.spec)
    if len(cells) and np.any(drivable.cells.ravel()[cells] < 0.5):
        out.append(SimEvent("off_road", w.tick, pos))
    near = []
    for ln in sc.lanes.lanes.values():
        _, d, h = ln.project((x, y))
        if d <= ln.width / 2:
            near.append(abs(float(wrap_angle(h - th))))
    if near and min(near) > math.pi / 2:
        out.append(SimEvent("oncoming_traffic", w.tick, pos))
    return out


# -- episodes --------------------------------------------------------------------------------

@dataclass(frozen=True)
class SimOptions:
    resolution_m: float = 0.5
    grid_length_m: float = 100.0
    grid_width_m: float = 50.0
    grid_behind_m: float = 25.0
    route_mode: str = "command"
    route_half_width_m: float = 2.5
    route_margin_m: float = 1.0
    divergence_m: float = 5.0
    abort_m: float = 10.0
    idm: IdmParams = field(default_factory=IdmParams)
    map_config: MapOracleConfig = field(default_factory=MapOracleConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    cost_config: CostConfig = field(default_factory=CostConfig)
    limits: VehicleLimits = field(default_factory=VehicleLimits)

    def __post_init__(self):
        if self.route_mode not in ROUTE_MODES:
            raise ValueError(f"route_mode must be one of {ROUTE_MODES}")


@dataclass
class EpisodeMetrics:
    scenario: str
    success: bool
    events: list[SimEvent]
    event_counts: dict[str, int]
    meters_per_event: dict[str, float]
    l2_to_expert: list[float]
    progress_m: float
    mean_abs_jerk: float
    max_abs_lat_accel: float
    off_route: bool
    aborted: bool
    ticks: int
    trace: list[dict] = field(default_factory=list, repr=False)

    @property
    def mean_l2(self) -> float:
        return float(np.mean(self.l2_to_expert)) if self.l2_to_expert else 0.0

    def row(self) -> dict:
        r = {"scenario": self.scenario, "success": int(self.success), "progress_m": self.progress_m,
             "mean_l2": self.mean_l2, "mean_abs_jerk": self.mean_abs_jerk,
             "max_abs_lat_accel": self.max_abs_lat_accel, "off_route": int(self.off_route),
             "aborted": int(self.aborted), "ticks": self.ticks}
        r.update({f"n_{k}": self.event_counts[k] for k in EVENT_KINDS})
        return r


def build_scene(sc: Scenario, w: World, route: Sequence[str], opts: SimOptions, seed: int = 0
                ) -> tuple[Scene, GridSpec]:
    pose = tuple(w.sdv[:3])
    spec = GridSpec.ego(pose, opts.resolution_m, opts.grid_length_m, opts.grid_width_m,
                        opts.grid_behind_m)
    m = rasterize_map(sc.lanes, pose, spec, opts.map_config)
    if not opts.noise.is_identity:
        m = perturb_map(m, opts.noise, seed=(seed, w.tick))
    if opts.route_mode == "uniform":
        rcells = np.ones(spec.shape)
    else:
        if opts.route_mode == "keep_lane":
            lanes = route_lanes(sc.lanes, pose, DrivingCommand("keep_lane"))
        else:
            idx = _lane_index(sc.lanes, route, pose)
            lanes = list(route[max(0, idx - 1):])
        dist, _ = distance_to_segments(spec.cell_centers().reshape(-1, 2), sc.lanes.segments(lanes))
        rcells = ((dist <= opts.route_half_width_m).reshape(spec.shape)
                  & (m.drivable.cells > 0.5)).astype(float)
    occ, mot = predict_occupancy(actor_tracks(sc, w, idm=opts.idm, limits=opts.limits), spec) if sc.actors else ({}, {})
    red = sc.light(w.t) == "red"
    return Scene(m.with_route(BevGrid(spec, rcells)), occ, mot, red), spec


def run_episode(sc: Scenario, bank: TrajectoryBank, weights: CostWeights,
                opts: SimOptions = SimOptions(), seed: int = 0) -> EpisodeMetrics:
    """Replay a scenario with the planner in the loop for ``sc.duration_s``."""
    route = planned_route(sc)
    w = initial_world(sc)
    events: dict[str, SimEvent] = {}
    l2, trace, jerks, lats = [], [], [], []
    progress = 0.0
    aborted = False
    for _ in range(sc.ticks + 1):
        scene, spec = build_scene(sc, w, route, opts, seed)
        for ev in detect_events(sc, w, route, scene.map.drivable, opts.limits,
                                opts.route_half_width_m, opts.route_margin_m):
            events.setdefault(ev.kind, ev)
        ex, ey, _ = sc.expert_pose(w.t)
        l2.append(float(math.hypot(w.sdv[0] - ex, w.sdv[1] - ey)))
        cmd = command_at(sc, route, tuple(w.sdv[:3]))
        row = {"tick": w.tick, "t": w.t, "x": w.sdv[0], "y": w.sdv[1], "theta": w.sdv[2],
               "v": w.sdv[V], "a": w.sdv[A], "kappa": w.sdv[KAPPA], "command": cmd.action,
               "command_distance_m": cmd.distance_m, "light": sc.light(w.t),
               "reactive": int(w.reactive_on), "events": ",".join(sorted(
                   e.kind for e in events.values() if e.tick == w.tick))}
        if route and route_distance(sc, route, w.sdv[:2]) > opts.abort_m:
            aborted = True
            trace.append(row)
            break
        if w.tick >= sc.ticks:
            trace.append(row)
            break
        x0 = SdvState.from_array(np.concatenate([w.sdv[:3], [max(w.sdv[V], 0.0)], w.sdv[4:]]))
        res = plan(x0, scene, bank, weights, opts.cost_config, opts.limits)
        row.update(best_cost=res.best_cost, candidates=res.candidate_count, best_index=res.best_index)
        trace.append(row)
        nxt = res.best.states[1]
        jerks.append(abs(nxt[A] - w.sdv[A]) / sc.dt)
        lats.append(abs(nxt[V] ** 2 * nxt[KAPPA]))
        progress += float(math.hypot(nxt[0] - w.sdv[0], nxt[1] - w.sdv[1]))
        # rear traffic turns reactive once the SDV falls behind its log
        s_sdv, _, _ = sc.expert_path.project(w.sdv[:2])
        s_exp = sc.expert_s0 + float(sc.expert_schedule.distance(w.t))
        if not w.reactive_on and s_exp - s_sdv > opts.divergence_m:
            w.reactive_on = True
            for i, a in enumerate(sc.actors):
                if a.reactive:
                    w.actors[i] = replace(w.actors[i], idm=True)
        w = step(sc, w, nxt, sc.dt, opts.idm, opts.limits)
    counts = {k: int(k in events) for k in EVENT_KINDS}
    mpe = {k: progress / max(1, counts[k]) for k in EVENT_KINDS}
    mpe["all"] = progress / max(1, len(events))
    return EpisodeMetrics(sc.name, not events, sorted(events.values(), key=lambda e: (e.tick, e.kind)),
                          counts, mpe, l2, progress,
                          float(np.mean(jerks)) if jerks else 0.0,
                          float(np.max(lats)) if lats else 0.0, "off_route" in events, aborted,
                          w.tick, trace)


def run_batch(scenarios: Sequence[Scenario], bank: TrajectoryBank, weights: CostWeights,
              opts: SimOptions = SimOptions(), seed: int = 0, workers: int = 1) -> list[EpisodeMetrics]:
    """Episodes in scenario order; ``workers > 1`` runs them in separate processes."""
    if workers <= 1 or len(scenarios) <= 1:
        return [run_episode(sc, bank, weights, opts, seed) for sc in scenarios]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(run_episode, sc, bank, weights, opts, seed) for sc in scenarios]
        return [f.result() for f in futs]


def apply_ablation(name: str, weights: CostWeights, opts: SimOptions = SimOptions()
                   ) -> tuple[CostWeights, SimOptions]:
    """Weights and options for the named preset in :data:`ABLATIONS`."""
    if name not in ABLATIONS:
        raise KeyError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    ab = ABLATIONS[name]
    if ab.route_mode is not None:
        opts = replace(opts, route_mode=ab.route_mode)
    return weights.dropped(*ab.drop), opts


def aggregate(episodes: Sequence[EpisodeMetrics]) -> dict[str, float]:
    """Batch metrics; meters-per-event falls back to the total distance when a kind never fires."""
    n = len(episodes)
    if n == 0:
        raise ValueError("no episodes")
    meters = float(sum(e.progress_m for e in episodes))
    out = {"episodes": n, "success_rate": sum(e.success for e in episodes) / n,
           "off_route_pct": 100.0 * sum(e.off_route for e in episodes) / n,
           "mean_l2": float(np.mean([e.mean_l2 for e in episodes])), "meters": meters}
    total = 0
    for k in EVENT_KINDS:
        c = sum(e.event_counts[k] for e in episodes)
        total += c
        out[f"events_{k}"] = c
        out[f"meters_per_{k}"] = meters / c if c else meters
    out["events_all"] = total
    out["meters_per_event"] = meters / total if total else meters
    return out


def metrics_tsv(episodes: Sequence[EpisodeMetrics]) -> str:
    rows = [e.row() for e in episodes]
    head = list(rows[0])
    lines = ["\t".join(head)] + ["\t".join(_fmt(r[h]) for h in head) for r in rows]
    return "\n".join(lines) + "\n"


def trace_tsv(ep: EpisodeMetrics) -> str:
    keys: list[str] = []
    for r in ep.trace:
        keys += [k for k in r if k not in keys]
    lines = ["\t".join(keys)] + ["\t".join(_fmt(r.get(k, "")) for k in keys) for r in ep.trace]
    return "\n".join(lines) + "\n"


def summary_tsv(summary: dict) -> str:
    return "metric\tvalue\n" + "".join(f"{k}\t{_fmt(v)}\n" for k, v in summary.items())


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
