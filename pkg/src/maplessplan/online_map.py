"""Probabilistic online map layers and their ground-truth rasterizer.

The oracle turns a lane graph into the same per-cell distributions a mapping
network would predict: Bernoulli drivable/intersection/route layers, a
(location, scale) pair for the distance to the closest reachable lane
centerline, and a (location, concentration) pair for its direction.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit, prange
from scipy import ndimage

from .grid import BevGrid, GridSpec, rasterize_polygon_mask, wrap_angle

ACTIONS = ("keep_lane", "turn_left", "turn_right")
TRUNCATION_M = 10.0
TURN_THRESHOLD = math.radians(30.0)


class NoRouteForCommand(ValueError):
    pass


@dataclass(frozen=True)
class DrivingCommand:
    action: str = "keep_lane"
    distance_m: float = 0.0

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}; expected one of {ACTIONS}")
        if self.distance_m < 0:
            raise ValueError("distance_m must be nonnegative")


@dataclass
class Lane:
    id: str
    centerline: np.ndarray
    successors: tuple[str, ...] = ()
    left: str | None = None
    right: str | None = None
    speed_limit: float = 12.0
    width: float = 3.5

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        if self.centerline.ndim != 2 or self.centerline.shape[0] < 2 or self.centerline.shape[1] != 2:
            raise ValueError(f"lane {self.id}: centerline must be (N>=2, 2)")
        seg = np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError(f"lane {self.id}: centerline points must be strictly ordered by arc length")
        self.successors = tuple(self.successors)

    @property
    def arclength(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def heading_at_start(self) -> float:
        d = self.centerline[1] - self.centerline[0]
        return math.atan2(d[1], d[0])

    def heading_at_end(self) -> float:
        d = self.centerline[-1] - self.centerline[-2]
        return math.atan2(d[1], d[0])

    @property
    def turn_angle(self) -> float:
        return float(wrap_angle(self.heading_at_end() - self.heading_at_start()))

    def turn_kind(self) -> str:
        a = self.turn_angle
        if a > TURN_THRESHOLD:
            return "turn_left"
        if a < -TURN_THRESHOLD:
            return "turn_right"
        return "keep_lane"

    def project(self, xy) -> tuple[float, float, float]:
        """Arc length, unsigned distance and segment heading of the closest centerline point."""
        p = np.asarray(xy, dtype=float)
        a = self.centerline[:-1]
        b = self.centerline[1:]
        ab = b - a
        L2 = np.sum(ab * ab, axis=1)
        t = np.clip(np.sum((p - a) * ab, axis=1) / L2, 0.0, 1.0)
        q = a + t[:, None] * ab
        d = np.linalg.norm(q - p, axis=1)
        k = int(np.argmin(d))
        s = self.arclength[k] + t[k] * math.sqrt(L2[k])
        return float(s), float(d[k]), math.atan2(ab[k, 1], ab[k, 0])

    def point_at(self, s: float) -> tuple[float, float, float]:
        arc = self.arclength
        s = min(max(s, 0.0), arc[-1])
        k = int(np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(arc) - 2))
        seg = self.centerline[k + 1] - self.centerline[k]
        f = (s - arc[k]) / (arc[k + 1] - arc[k])
        p = self.centerline[k] + f * seg
        return float(p[0]), float(p[1]), math.atan2(seg[1], seg[0])


@dataclass
class LaneGraph:
    lanes: dict[str, Lane]
    drivable: list[np.ndarray] = field(default_factory=list)
    intersections: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.lanes, (list, tuple)):
            self.lanes = {ln.id: ln for ln in self.lanes}
        if not self.lanes:
            raise ValueError("lane graph is empty")
        for ln in self.lanes.values():
            for ref in (*ln.successors, ln.left, ln.right):
                if ref is not None and ref not in self.lanes:
                    raise ValueError(f"lane {ln.id} references unknown lane {ref!r}")
        self.drivable = [np.asarray(p, dtype=float) for p in self.drivable]
        self.intersections = [np.asarray(p, dtype=float) for p in self.intersections]

    def current_lane(self, pose: Sequence[float]) -> str:
        """Closest lane whose direction agrees with the pose heading (within 90 deg)."""
        best, best_key = None, None
        for lid, ln in self.lanes.items():
            _, d, h = ln.project(pose[:2])
            misalign = abs(float(wrap_angle(h - pose[2])))
            key = (misalign >= math.pi / 2, d + 2.0 * misalign)
            if best_key is None or key < best_key:
                best, best_key = lid, key
        return best

    def reachable(self, start: str) -> list[str]:
        """Lanes reachable through successor and same-direction lane-change edges."""
        seen = {start}
        order = [start]
        queue = deque([start])
        while queue:
            ln = self.lanes[queue.popleft()]
            for nxt in (*ln.successors, ln.left, ln.right):
                if nxt is not None and nxt not in seen:
                    seen.add(nxt)
                    order.append(nxt)
                    queue.append(nxt)
        return order

    def segments(self, lane_ids: Sequence[str]) -> np.ndarray:
        """Stack of centerline segments (S, 4) as x0, y0, x1, y1."""
        segs = [np.hstack([self.lanes[l].centerline[:-1], self.lanes[l].centerline[1:]])
                for l in lane_ids]
        return np.vstack(segs) if segs else np.zeros((0, 4))

    def transformed(self, dx: float, dy: float, dtheta: float) -> "LaneGraph":
        """Rigidly transformed copy (rotation about the origin, then translation)."""
        c, s = math.cos(dtheta), math.sin(dtheta)
        R = np.array([[c, -s], [s, c]])
        move = lambda p: np.asarray(p) @ R.T + np.array([dx, dy])  # noqa: E731
        lanes = {lid: replace(ln, centerline=move(ln.centerline)) for lid, ln in self.lanes.items()}
        return LaneGraph(lanes, [move(p) for p in self.drivable], [move(p) for p in self.intersections])


@dataclass(frozen=True)
class OnlineMap:
    """Per-cell distributions of the static scene.

    ``intersection`` is the junction layer (the same layer is sometimes
    called the junction map). ``lane_dir_loc`` is stored relative to the
    grid axes so that the layers are invariant to rigid motions of the
    grid. ``dist_family`` selects how ``lane_dist_sigma`` converts to a
    standard deviation.
    """
    drivable: BevGrid
    intersection: BevGrid
    lane_dist_mu: BevGrid
    lane_dist_sigma: BevGrid
    lane_dir_loc: BevGrid
    lane_dir_conc: BevGrid
    route: BevGrid | None = None
    dist_family: str = "gaussian"

    def __post_init__(self):
        if self.dist_family not in ("gaussian", "laplace"):
            raise ValueError(f"unknown distance family {self.dist_family!r}")
        spec = self.drivable.spec
        for name in ("intersection", "lane_dist_mu", "lane_dist_sigma", "lane_dir_loc",
                     "lane_dir_conc", "route"):
            g = getattr(self, name)
            if g is not None and g.spec != spec:
                raise ValueError(f"layer {name} lives on a different grid")

    @property
    def spec(self) -> GridSpec:
        return self.drivable.spec

    def with_route(self, route: BevGrid | None) -> "OnlineMap":
        return replace(self, route=route)

    def lane_dist_std(self) -> np.ndarray:
        s = self.lane_dist_sigma.cells
        return math.sqrt(2.0) * s if self.dist_family == "laplace" else s

    def layers(self) -> dict[str, BevGrid]:
        out = {k: getattr(self, k) for k in ("drivable", "intersection", "lane_dist_mu",
                                              "lane_dist_sigma", "lane_dir_loc", "lane_dir_conc")}
        if self.route is not None:
            out["route"] = self.route
        return out

    def check(self) -> None:
        """Raise if any layer leaves its domain."""
        for name in ("drivable", "intersection", "route"):
            g = getattr(self, name)
            if g is not None and (g.cells.min() < 0 or g.cells.max() > 1):
                raise ValueError(f"{name} leaves [0, 1]")
        mu = self.lane_dist_mu.cells
        if mu.min() < 0 or mu.max() > TRUNCATION_M:
            raise ValueError("lane_dist_mu leaves [0, 10]")
        if np.abs(self.lane_dir_loc.cells).max() > math.pi:
            raise ValueError("lane_dir_loc leaves [-pi, pi]")
        if self.lane_dist_sigma.cells.min() <= 0:
            raise ValueError("lane_dist_sigma must be positive")
        if self.lane_dir_conc.cells.min() < 0:
            raise ValueError("lane_dir_conc must be nonnegative")


@dataclass(frozen=True)
class MapOracleConfig:
    sigma_m: float = 0.2
    concentration: float = 50.0
    offroad_sigma_m: float = 0.2
    offroad_concentration: float = 50.0
    truncation_m: float = TRUNCATION_M
    dist_family: str = "gaussian"


@njit(cache=True, nogil=True, parallel=True)
def _nearest_segment(px, py, segs):
    n = px.shape[0]
    dist = np.empty(n)
    head = np.empty(n)
    S = segs.shape[0]
    for i in prange(n):
        best = 1e300
        bh = 0.0
        x = px[i]
        y = py[i]
        for k in range(S):
            ax = segs[k, 0]
            ay = segs[k, 1]
            bx = segs[k, 2]
            by = segs[k, 3]
            ex = bx - ax
            ey = by - ay
            L2 = ex * ex + ey * ey
            t = ((x - ax) * ex + (y - ay) * ey) / L2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            dx = ax + t * ex - x
            dy = ay + t * ey - y
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
                bh = math.atan2(ey, ex)
        dist[i] = math.sqrt(best)
        head[i] = bh
    return dist, head


def distance_to_segments(points: np.ndarray, segs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unsigned distance and heading of the nearest segment for each point (N, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(segs) == 0:
        return np.full(len(pts), np.inf), np.zeros(len(pts))
    return _nearest_segment(np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                            np.ascontiguousarray(segs, dtype=float))


def polygons_mask(polygons, spec: GridSpec) -> np.ndarray:
    mask = np.zeros(spec.shape, dtype=bool)
    for poly in polygons:
        mask |= rasterize_polygon_mask(poly, spec)
    return mask


def rasterize_map(lg: LaneGraph, sdv_pose: Sequence[float], spec: GridSpec,
                  config: MapOracleConfig = MapOracleConfig()) -> OnlineMap:
    """Ground-truth online map (route unset) for a vehicle at ``sdv_pose``."""
    if not spec.resolution_m > 0:
        raise ValueError("grid resolution must be positive")
    if not lg.lanes:
        raise ValueError("lane graph is empty")
    drivable = polygons_mask(lg.drivable, spec)
    inter = polygons_mask(lg.intersections, spec)
    reach = lg.reachable(lg.current_lane(sdv_pose))
    dist, head = distance_to_segments(spec.cell_centers().reshape(-1, 2), lg.segments(reach))
    mu = np.minimum(dist, config.truncation_m).reshape(spec.shape)
    loc = spec.heading_to_grid(head).reshape(spec.shape)
    sigma = np.where(drivable, config.sigma_m, config.offroad_sigma_m)
    conc = np.where(drivable, config.concentration, config.offroad_concentration)
    return OnlineMap(
        drivable=BevGrid(spec, drivable.astype(float)),
        intersection=BevGrid(spec, inter.astype(float)),
        lane_dist_mu=BevGrid(spec, mu),
        lane_dist_sigma=BevGrid(spec, sigma.astype(float)),
        lane_dir_loc=BevGrid(spec, loc),
        lane_dir_conc=BevGrid(spec, conc.astype(float)),
        dist_family=config.dist_family,
    )


def route_lanes(lg: LaneGraph, sdv_pose: Sequence[float], cmd: DrivingCommand,
                distance_m: float | None = None, lookahead_m: float = 250.0) -> list[str]:
    """Lane sequence consistent with a driving command.

    Walks the straight-ahead successor chain from the current lane. For a
    turn, every lane end on that chain that offers a successor of the
    requested kind is a branch point; the one whose distance from the
    vehicle is closest to ``distance_m`` is taken.
    """
    d_target = cmd.distance_m if distance_m is None else distance_m
    start = lg.current_lane(sdv_pose)
    s0, _, _ = lg.lanes[start].project(sdv_pose[:2])

    def straight_chain(first: str, budget: float) -> list[str]:
        chain = [first]
        seen = {first}
        travelled = lg.lanes[first].length
        while travelled < budget:
            succ = [s for s in lg.lanes[chain[-1]].successors if s not in seen]
            if not succ:
                break
            nxt = min(succ, key=lambda s: abs(lg.lanes[s].turn_angle))
            chain.append(nxt)
            seen.add(nxt)
            travelled += lg.lanes[nxt].length
        return chain

    # already executing the commanded turn
    if cmd.action == "keep_lane" or lg.lanes[start].turn_kind() == cmd.action:
        return straight_chain(start, lookahead_m + s0)

    chain = straight_chain(start, lookahead_m + s0)
    branches = []
    dist_to_end = -s0
    for idx, lid in enumerate(chain):
        dist_to_end += lg.lanes[lid].length
        turns = [s for s in lg.lanes[lid].successors if lg.lanes[s].turn_kind() == cmd.action]
        if turns and dist_to_end >= 0:
            pick = max(turns, key=lambda s: abs(lg.lanes[s].turn_angle))
            branches.append((abs(dist_to_end - d_target), idx, pick))
    if not branches:
        raise NoRouteForCommand(f"no {cmd.action} branch reachable from lane {start}")
    _, idx, turn = min(branches)
    tail = straight_chain(turn, lookahead_m)
    return chain[: idx + 1] + tail


def rasterize_route(lg: LaneGraph, sdv_pose: Sequence[float], cmd: DrivingCommand,
                    spec: GridSpec, noise_std_m: float = 5.0, seed=None,
                    half_width_m: float = 2.5) -> BevGrid:
    """Bernoulli route layer: 1 within a corridor around the command-consistent lanes.

    The distance-to-action is perturbed by zero-mean Gaussian noise of
    ``noise_std_m`` before choosing the branch point.
    """
    d = cmd.distance_m
    if noise_std_m > 0:
        d = max(0.0, d + float(np.random.default_rng(seed).normal(0.0, noise_std_m)))
    lanes = route_lanes(lg, sdv_pose, cmd, d)
    dist, _ = distance_to_segments(spec.cell_centers().reshape(-1, 2), lg.segments(lanes))
    corridor = (dist <= half_width_m).reshape(spec.shape)
    corridor &= polygons_mask(lg.drivable, spec)
    return BevGrid(spec, corridor.astype(float))


@dataclass(frozen=True)
class NoiseModel:
    """Corruption applied to an oracle map.

    ``dropout_rate`` cells get probability layers reset to 0.5, their
    distance scale multiplied by ``corrupt_sigma_factor`` and their direction
    concentration multiplied by ``corrupt_conc_factor``.
    """
    dropout_rate: float = 0.0
    blur_radius_cells: int = 0
    sigma_inflation: float = 1.0
    corrupt_sigma_factor: float = 5.0
    corrupt_conc_factor: float = 0.1

    def __post_init__(self):
        if not 0 <= self.dropout_rate <= 1:
            raise ValueError("dropout_rate must be in [0, 1]")
        if self.blur_radius_cells < 0 or self.sigma_inflation <= 0:
            raise ValueError("invalid noise model")
        if self.corrupt_sigma_factor < 1 or not 0 <= self.corrupt_conc_factor <= 1:
            raise ValueError("corruption must not reduce uncertainty")

    @property
    def is_identity(self) -> bool:
        return self.dropout_rate == 0 and self.blur_radius_cells == 0 and self.sigma_inflation == 1


def perturb_map(m: OnlineMap, model: NoiseModel, seed=None) -> OnlineMap:
    if model.is_identity:
        return m
    spec = m.spec
    rng = np.random.default_rng(seed)
    layers = {k: g.cells.copy() for k, g in m.layers().items()}
    if model.blur_radius_cells > 0:
        size = 2 * model.blur_radius_cells + 1
        for k in ("drivable", "intersection", "route", "lane_dist_mu"):
            if k in layers:
                layers[k] = ndimage.uniform_filter(layers[k], size=size, mode="nearest")
    layers["lane_dist_sigma"] = layers["lane_dist_sigma"] * model.sigma_inflation
    if model.dropout_rate > 0:
        hit = rng.random(spec.shape) < model.dropout_rate
        for k in ("drivable", "intersection", "route"):
            if k in layers:
                layers[k][hit] = 0.5
        layers["lane_dist_sigma"][hit] *= model.corrupt_sigma_factor
        layers["lane_dir_conc"][hit] *= model.corrupt_conc_factor
    for k in ("drivable", "intersection", "route"):
        if k in layers:
            layers[k] = np.clip(layers[k], 0.0, 1.0)
    layers["lane_dist_mu"] = np.clip(layers["lane_dist_mu"], 0.0, TRUNCATION_M)
    grids = {k: BevGrid(spec, v) for k, v in layers.items()}
    return OnlineMap(route=grids.pop("route", None), dist_family=m.dist_family, **grids)
