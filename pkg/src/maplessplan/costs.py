"""Trajectory scoring functions.

Every subcost works on batches of trajectories ``(N, T + 1, 7)`` and reads
the scene layers through footprint rasterization (cells whose center lies
inside the vehicle rectangle). The single-trajectory ``cost_*`` functions
are thin views on the batch kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numba
import numpy as np
import yaml
from numba import njit, prange

from .grid import GridSpec, convex_hull, scan_spans
from .occupancy_flow import CLASSES, MotionField, OccupancyField
from .online_map import OnlineMap
from .trajectory import A, KAPPA, THETA, V, Trajectory, VehicleLimits

SUBCOSTS = ("route", "route_cost_to_go", "lane_dist", "lane_dir", "lane_uncertainty", "drivable",
            "junction", "occupancy", "headway", "jerk", "lat_accel", "curvature", "curvature_rate")
IDX = {name: i for i, name in enumerate(SUBCOSTS)}


@dataclass(frozen=True)
class SafetyParams:
    a_hard: float = 8.0
    a_comf: float = 3.0
    t_react: float = 1.0
    headway_range: float = 20.0

    def __post_init__(self):
        if self.a_hard <= 0 or self.a_comf <= 0 or self.headway_range <= 0 or self.t_react < 0:
            raise ValueError("invalid safety parameters")


@dataclass(frozen=True)
class CostConfig:
    sdv_length: float = VehicleLimits.length
    sdv_width: float = VehicleLimits.width
    route_to_go_s: float = 2.0
    k_min: float = 1e-3
    safety: SafetyParams = field(default_factory=SafetyParams)


@dataclass(frozen=True)
class CostWeights:
    route: float = 0.0
    route_cost_to_go: float = 0.0
    lane_dist: float = 0.0
    lane_dir: float = 0.0
    lane_uncertainty: float = 0.0
    drivable: float = 0.0
    junction: float = 0.0
    occupancy: float = 0.0
    headway: float = 0.0
    jerk: float = 0.0
    lat_accel: float = 0.0
    curvature: float = 0.0
    curvature_rate: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"weight {f.name} must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in SUBCOSTS], dtype=float)

    @classmethod
    def from_array(cls, w) -> "CostWeights":
        return cls(**{n: float(v) for n, v in zip(SUBCOSTS, w)})

    def dropped(self, *names: str) -> "CostWeights":
        w = self.as_array()
        for n in names:
            w[IDX[n]] = 0.0
        return CostWeights.from_array(w)


def load_config(path) -> tuple[CostWeights, SafetyParams]:
    """Read ``weights:`` and optional ``safety:`` sections from a YAML file."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping")
    for section, known in (("", {"weights", "safety"}), ("weights", set(SUBCOSTS)),
                           ("safety", {f.name for f in fields(SafetyParams)})):
        got = data if not section else (data.get(section) or {})
        unknown = set(got) - known
        if unknown:
            raise ValueError(f"{path}: unknown {section or 'top-level'} keys {sorted(unknown)}")
    return CostWeights(**(data.get("weights") or {})), SafetyParams(**(data.get("safety") or {}))


DEFAULT_WEIGHTS_PATH = Path(__file__).parent / "data" / "weights_default.yaml"


def default_config() -> tuple[CostWeights, SafetyParams]:
    """The shipped hand-tuned weights and safety parameters."""
    return load_config(DEFAULT_WEIGHTS_PATH)


def save_config(path, weights: CostWeights, safety: SafetyParams = SafetyParams()) -> None:
    data = {"weights": {n: float(getattr(weights, n)) for n in SUBCOSTS},
            "safety": {f.name: float(getattr(safety, f.name)) for f in fields(safety)}}
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


@dataclass
class CostBreakdown:
    """Subcost values of one trajectory; ``occupancy_t``/``headway_t`` keep the per-step terms."""
    values: np.ndarray
    occupancy_t: np.ndarray
    headway_t: np.ndarray

    def __getattr__(self, name):
        if name in IDX:
            return float(self.values[IDX[name]])
        raise AttributeError(name)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(SUBCOSTS, self.values)}


@dataclass
class BreakdownTable:
    """Subcosts of N trajectories: ``values`` (N, 13), per-step terms (N, T + 1)."""
    values: np.ndarray
    occupancy_t: np.ndarray
    headway_t: np.ndarray

    def __len__(self):
        return len(self.values)

    def row(self, i: int) -> CostBreakdown:
        return CostBreakdown(self.values[i], self.occupancy_t[i], self.headway_t[i])

    def column(self, name: str) -> np.ndarray:
        return self.values[:, IDX[name]]

    def to_tsv(self, totals=None) -> str:
        head = ["candidate"] + (["total"] if totals is not None else []) + list(SUBCOSTS)
        lines = ["\t".join(head)]
        for i, row in enumerate(self.values):
            cells = [str(i)] + ([repr(float(totals[i]))] if totals is not None else [])
            cells += [repr(float(v)) for v in row]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


@dataclass
class Scene:
    """Everything the scoring function reads: map (with route), occupancy and motion."""
    map: OnlineMap
    occupancy: Mapping[str, OccupancyField] = field(default_factory=dict)
    motion: Mapping[str, list[MotionField]] = field(default_factory=dict)
    red_light: bool = False

    @cached_property
    def prepared(self) -> "_Prepared":
        return _Prepared.build(self)


@dataclass
class _Prepared:
    mspec: GridSpec
    mu: np.ndarray
    std: np.ndarray
    conc: np.ndarray
    loc: np.ndarray
    drv: np.ndarray
    inter: np.ndarray
    route: np.ndarray
    has_route: bool
    ospec: GridSpec | None
    occ: np.ndarray     # (C, S, R, Cc)
    bbox: np.ndarray    # (C, S, 4) row0, row1, col0, col1 of nonzero cells (empty: row0 > row1)
    probs: np.ndarray   # (C, T, K, R, Cc)
    vel: np.ndarray     # (C, T, K, R, Cc, 2)

    @classmethod
    def build(cls, scene: Scene) -> "_Prepared":
        m = scene.map
        f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
        route = m.route.cells if m.route is not None else np.zeros(m.spec.shape)
        active = [c for c in CLASSES if c in scene.occupancy and
                  any(g.cells.any() for g in scene.occupancy[c].grids)]
        ospec = None
        if scene.occupancy:
            ospec = next(iter(scene.occupancy.values())).spec
        if active:
            occ = np.stack([scene.occupancy[c].stack() for c in active])
            nz = occ != 0
            rows, cols = nz.any(axis=3), nz.any(axis=2)
            R, Cc = occ.shape[2:]
            bbox = np.stack([rows.argmax(axis=2), R - 1 - rows[..., ::-1].argmax(axis=2),
                             cols.argmax(axis=2), Cc - 1 - cols[..., ::-1].argmax(axis=2)],
                            axis=-1).astype(np.int64)
            bbox[~rows.any(axis=2)] = (1, 0, 1, 0)
            mot = [scene.motion.get(c, []) for c in active]
            T = min(len(x) for x in mot)
            if T > 0:
                K = max(f.k for x in mot for f in x[:T])
                R, Cc = ospec.shape
                probs = np.zeros((len(active), T, K, R, Cc))
                vel = np.zeros((len(active), T, K, R, Cc, 2))
                for i, x in enumerate(mot):
                    for t in range(T):
                        probs[i, t, :x[t].k] = x[t].mode_probs
                        vel[i, t, :x[t].k] = x[t].velocities
            else:
                probs = np.zeros((len(active), 0, 1, 1, 1))
                vel = np.zeros((len(active), 0, 1, 1, 1, 2))
        else:
            occ = np.zeros((0, 0, 1, 1))
            bbox = np.zeros((0, 0, 4), dtype=np.int64)
            probs = np.zeros((0, 0, 1, 1, 1))
            vel = np.zeros((0, 0, 1, 1, 1, 2))
        return cls(m.spec, f64(m.lane_dist_mu.cells), f64(m.lane_dist_std()),
                   f64(m.lane_dir_conc.cells), f64(m.lane_dir_loc.cells), f64(m.drivable.cells),
                   f64(m.intersection.cells), f64(route), m.route is not None, ospec,
                   f64(occ), bbox, f64(probs), f64(vel))


# -- geometry helpers ----------------------------------------------------------------

def _footprint_uv(states: np.ndarray, spec: GridSpec, length: float, width: float,
                  lon=(-0.5, 0.5), lat=(-0.5, 0.5)) -> np.ndarray:
    """Rectangle corners (..., 4, 2) in continuous grid coordinates.

    ``lon``/``lat`` give the rectangle's extent as multiples of length/width.
    """
    th = states[..., THETA] - spec.yaw
    uv0 = spec.world_to_grid(states[..., :2])
    c, s = np.cos(th), np.sin(th)
    lo = np.array([lon[0], lon[1], lon[1], lon[0]]) * length
    la = np.array([lat[0], lat[0], lat[1], lat[1]]) * width
    res = spec.resolution_m
    du = (c[..., None] * lo - s[..., None] * la) / res
    dv = (s[..., None] * lo + c[..., None] * la) / res
    return np.ascontiguousarray(np.stack([uv0[..., 0:1] + du, uv0[..., 1:2] + dv], axis=-1))


def _chunks(n: int) -> np.ndarray:
    k = max(1, min(numba.get_num_threads(), n))
    return np.linspace(0, n, k + 1).astype(np.int64)


# -- kernels ---------------------------------------------------------------------------

@njit(cache=True, nogil=True, parallel=True)
def _map_kernel(poly, theta, speed, mu, std, conc, loc, drv, inter, k_min, bounds, out):
    """Per-point map terms: lane_dist, lane_dir, uncertainty sum, off-road, junction."""
    N, S = theta.shape
    R, C = mu.shape
    two_pi = 2.0 * math.pi
    for ch in prange(bounds.shape[0] - 1):
        spans = np.empty((R, 3), dtype=np.int64)
        for n in range(bounds[ch], bounds[ch + 1]):
            for s in range(S):
                th = (theta[n, s] + math.pi) % two_pi - math.pi
                m = scan_spans(poly[n, s, :, 0], poly[n, s, :, 1], R, C, spans)
                cnt = 0
                dsum = 0.0
                asum = 0.0
                usum = 0.0
                pmin = 1.0
                imax = 0.0
                for i in range(m):
                    r = spans[i, 0]
                    for c in range(spans[i, 1], spans[i, 2] + 1):
                        cnt += 1
                        dsum += mu[r, c]
                        d = loc[r, c] - th
                        if d > math.pi:
                            d -= two_pi
                        elif d < -math.pi:
                            d += two_pi
                        asum += abs(d)
                        k = conc[r, c]
                        if k < k_min:
                            k = k_min
                        usum += std[r, c] + 1.0 / k
                        if drv[r, c] < pmin:
                            pmin = drv[r, c]
                        if inter[r, c] > imax:
                            imax = inter[r, c]
                if cnt == 0:
                    out[n, s, 0] = 10.0
                    out[n, s, 1] = 0.0
                    out[n, s, 2] = 0.0
                    out[n, s, 3] = 1.0
                    out[n, s, 4] = 0.0
                else:
                    out[n, s, 0] = dsum / cnt
                    out[n, s, 1] = asum / cnt
                    out[n, s, 2] = speed[n, s] * usum
                    out[n, s, 3] = 1.0 - pmin
                    out[n, s, 4] = imax


@njit(cache=True, nogil=True, parallel=True)
def _route_kernel(poly, tail, route, bounds, out):
    """Swept-cell route reward and beyond-horizon route cost-to-go."""
    N, S = poly.shape[0], poly.shape[1]
    R, C = route.shape
    for ch in prange(bounds.shape[0] - 1):
        spans = np.empty((R, 3), dtype=np.int64)
        stamp = np.zeros(R * C, dtype=np.int64)
        px = np.empty(8)
        py = np.empty(8)
        hx = np.empty(16)
        hy = np.empty(16)
        for n in range(bounds[ch], bounds[ch + 1]):
            mark = n + 1
            count = 0
            rmin = 1.0
            for s in range(max(S - 1, 1)):
                s2 = s + 1 if S > 1 else s
                for q in range(4):
                    px[q] = poly[n, s, q, 0]
                    py[q] = poly[n, s, q, 1]
                    px[4 + q] = poly[n, s2, q, 0]
                    py[4 + q] = poly[n, s2, q, 1]
                h = convex_hull(px, py, hx, hy)
                m = scan_spans(hx[:h], hy[:h], R, C, spans)
                for i in range(m):
                    r = spans[i, 0]
                    base = r * C
                    for c in range(spans[i, 1], spans[i, 2] + 1):
                        if stamp[base + c] != mark:
                            stamp[base + c] = mark
                            count += 1
                            if route[r, c] < rmin:
                                rmin = route[r, c]
            out[n, 0] = -count * rmin if count > 0 else 0.0
            for q in range(4):
                px[q] = poly[n, S - 1, q, 0]
                py[q] = poly[n, S - 1, q, 1]
                px[4 + q] = tail[n, q, 0]
                py[4 + q] = tail[n, q, 1]
            h = convex_hull(px, py, hx, hy)
            m = scan_spans(hx[:h], hy[:h], R, C, spans)
            tot = 0.0
            cnt = 0
            for i in range(m):
                r = spans[i, 0]
                for c in range(spans[i, 1], spans[i, 2] + 1):
                    tot += 1.0 - route[r, c]
                    cnt += 1
            out[n, 1] = tot / cnt if cnt > 0 else 0.0


@njit(cache=True, nogil=True, parallel=True)
def _occupancy_kernel(poly, occ, bbox, bounds, out):
    N, S = poly.shape[0], poly.shape[1]
    NC, SO, R, C = occ.shape
    for ch in prange(bounds.shape[0] - 1):
        spans = np.empty((R, 3), dtype=np.int64)
        for n in range(bounds[ch], bounds[ch + 1]):
            for s in range(S):
                out[n, s] = 0.0
                if s >= SO:
                    continue
                m = -1
                for c in range(NC):
                    b = bbox[c, s]
                    if b[0] > b[1]:
                        continue
                    if m < 0:
                        m = scan_spans(poly[n, s, :, 0], poly[n, s, :, 1], R, C, spans)
                    best = 0.0
                    for i in range(m):
                        r = spans[i, 0]
                        if r < b[0] or r > b[1]:
                            continue
                        c0 = max(spans[i, 1], b[2])
                        c1 = min(spans[i, 2], b[3])
                        for cc in range(c0, c1 + 1):
                            p = occ[c, s, r, cc]
                            if p > best:
                                best = p
                    out[n, s] += best


@njit(cache=True, nogil=True, parallel=True)
def _headway_kernel(cx, cy, heading, speed, occ, bbox, probs, vel, res, half_len, reach, half_lat,
                    t_react, a_comf, a_hard, bounds, out):
    """Expected stopping-distance violation over occupied cells ahead of the SDV.

    A cell is ahead when its center lies ``[0, reach]`` beyond the front
    bumper along the heading and within ``half_lat`` of the SDV axis.
    """
    N, S = heading.shape
    NC, SO, R, C = occ.shape
    TF = probs.shape[1]
    K = probs.shape[2]
    eps = 1e-9
    for ch in prange(bounds.shape[0] - 1):
        for n in range(bounds[ch], bounds[ch + 1]):
            for s in range(S):
                out[n, s] = 0.0
                if s >= SO:
                    continue
                ch_ = math.cos(heading[n, s])
                sh_ = math.sin(heading[n, s])
                x0 = cx[n, s]
                y0 = cy[n, s]
                # bounding box of the front rectangle in cell indices
                umin = 1e300
                umax = -1e300
                vmin = 1e300
                vmax = -1e300
                for a in (half_len, half_len + reach):
                    for b in (-half_lat, half_lat):
                        u = (x0 + a * ch_ - b * sh_) / res - 0.5
                        v = (y0 + a * sh_ + b * ch_) / res - 0.5
                        umin = min(umin, u)
                        umax = max(umax, u)
                        vmin = min(vmin, v)
                        vmax = max(vmax, v)
                rlo = max(int(math.ceil(vmin - eps)), 0)
                rhi = min(int(math.floor(vmax + eps)), R - 1)
                clo = max(int(math.ceil(umin - eps)), 0)
                chi = min(int(math.floor(umax + eps)), C - 1)
                v_sdv = speed[n, s]
                base = v_sdv * t_react + v_sdv * v_sdv / (2.0 * a_comf)
                tf = s if s < TF else TF - 1
                acc = 0.0
                for c in range(NC):
                    b = bbox[c, s]
                    r0 = max(rlo, b[0])
                    r1 = min(rhi, b[1])
                    c0 = max(clo, b[2])
                    c1 = min(chi, b[3])
                    for r in range(r0, r1 + 1):
                        dy = (r + 0.5) * res - y0
                        for cc in range(c0, c1 + 1):
                            p = occ[c, s, r, cc]
                            if p == 0.0:
                                continue
                            dx = (cc + 0.5) * res - x0
                            gap = dx * ch_ + dy * sh_ - half_len
                            lat = -dx * sh_ + dy * ch_
                            if gap < -eps or gap > reach + eps or abs(lat) > half_lat + eps:
                                continue
                            e = 0.0
                            if TF == 0:
                                e = max(base - gap, 0.0)
                            else:
                                for k in range(K):
                                    pk = probs[c, tf, k, r, cc]
                                    if pk == 0.0:
                                        continue
                                    vo = vel[c, tf, k, r, cc, 0] * ch_ + vel[c, tf, k, r, cc, 1] * sh_
                                    if vo < 0.0:
                                        vo = 0.0
                                    viol = base - vo * vo / (2.0 * a_hard) - gap
                                    if viol > 0.0:
                                        e += pk * viol
                            acc += p * e
                out[n, s] = acc


# -- batch evaluation ---------------------------------------------------------------------

def _as_batch(states) -> np.ndarray:
    if isinstance(states, Trajectory):
        return states.states[None]
    arr = np.asarray(states, dtype=float)
    return arr[None] if arr.ndim == 2 else arr


def map_terms(states, m: OnlineMap, config: CostConfig = CostConfig()) -> np.ndarray:
    """(N, S, 5) per-point lane_dist, lane_dir, uncertainty, off-road and junction terms."""
    st = _as_batch(states)
    spec = m.spec
    poly = _footprint_uv(st, spec, config.sdv_length, config.sdv_width)
    theta = np.ascontiguousarray(spec.heading_to_grid(st[..., THETA]))
    out = np.empty((*st.shape[:2], 5))
    f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
    _map_kernel(poly, theta, np.ascontiguousarray(st[..., V]), f64(m.lane_dist_mu.cells),
                f64(m.lane_dist_std()), f64(m.lane_dir_conc.cells), f64(m.lane_dir_loc.cells),
                f64(m.drivable.cells), f64(m.intersection.cells), config.k_min,
                _chunks(len(st)), out)
    return out


def _map_terms_prepared(st, p: _Prepared, config: CostConfig) -> np.ndarray:
    poly = _footprint_uv(st, p.mspec, config.sdv_length, config.sdv_width)
    theta = np.ascontiguousarray(p.mspec.heading_to_grid(st[..., THETA]))
    out = np.empty((*st.shape[:2], 5))
    _map_kernel(poly, theta, np.ascontiguousarray(st[..., V]), p.mu, p.std, p.conc, p.loc, p.drv,
                p.inter, config.k_min, _chunks(len(st)), out)
    return out


def route_terms(states, route: np.ndarray, spec: GridSpec, config: CostConfig = CostConfig()
                ) -> np.ndarray:
    """(N, 2): swept-cell route reward and route cost-to-go."""
    st = _as_batch(states)
    poly = _footprint_uv(st, spec, config.sdv_length, config.sdv_width)
    last = st[:, -1].copy()
    dist = last[:, V] * config.route_to_go_s
    last[:, 0] += dist * np.cos(last[:, THETA])
    last[:, 1] += dist * np.sin(last[:, THETA])
    tail = _footprint_uv(last, spec, config.sdv_length, config.sdv_width)
    out = np.empty((len(st), 2))
    _route_kernel(poly, tail, np.ascontiguousarray(route, dtype=np.float64), _chunks(len(st)), out)
    return out


def comfort_terms(states, dt: float = 0.5) -> np.ndarray:
    """(N, 4): mean squared jerk, lateral acceleration, curvature and curvature rate."""
    st = _as_batch(states)
    jerk = np.diff(st[..., A], axis=1) / dt
    lat = st[..., V] ** 2 * st[..., KAPPA]
    krate = np.diff(st[..., KAPPA], axis=1) / dt
    mean = lambda x: x.mean(axis=1) if x.shape[1] else np.zeros(len(x))  # noqa: E731
    return np.stack([mean(jerk ** 2), mean(lat ** 2), mean(st[..., KAPPA] ** 2), mean(krate ** 2)],
                    axis=1)


def _occ_terms_prepared(st, p: _Prepared, config: CostConfig) -> tuple[np.ndarray, np.ndarray]:
    N, S = st.shape[:2]
    occ_t = np.zeros((N, S))
    head_t = np.zeros((N, S))
    if p.ospec is None or p.occ.shape[0] == 0:
        return occ_t, head_t
    spec = p.ospec
    poly = _footprint_uv(st, spec, config.sdv_length, config.sdv_width)
    chunks = _chunks(N)
    _occupancy_kernel(poly, p.occ, p.bbox, chunks, occ_t)
    sp = config.safety
    L, W = config.sdv_length, config.sdv_width
    uv = spec.world_to_grid(st[..., :2])
    res = spec.resolution_m
    _headway_kernel(np.ascontiguousarray((uv[..., 0] + 0.5) * res),
                    np.ascontiguousarray((uv[..., 1] + 0.5) * res),
                    np.ascontiguousarray(spec.heading_to_grid(st[..., THETA])),
                    np.ascontiguousarray(st[..., V]), p.occ, p.bbox, p.probs, p.vel, res, L / 2,
                    sp.headway_range, W / 2 + res, sp.t_react, sp.a_comf, sp.a_hard, chunks, head_t)
    return occ_t, head_t


def breakdown_batch(states, scene: Scene, config: CostConfig = CostConfig(), dt: float = 0.5
                    ) -> BreakdownTable:
    st = _as_batch(states)
    p = scene.prepared
    N = len(st)
    vals = np.zeros((N, len(SUBCOSTS)))
    mt = _map_terms_prepared(st, p, config)
    vals[:, IDX["lane_dist"]] = mt[..., 0].mean(axis=1)
    vals[:, IDX["lane_dir"]] = mt[..., 1].mean(axis=1)
    vals[:, IDX["lane_uncertainty"]] = mt[..., 2].sum(axis=1)
    vals[:, IDX["drivable"]] = mt[..., 3].sum(axis=1)
    if scene.red_light:
        vals[:, IDX["junction"]] = mt[..., 4].sum(axis=1)
    if p.has_route:
        rt = route_terms(st, p.route, p.mspec, config)
        vals[:, IDX["route"]] = rt[:, 0]
        vals[:, IDX["route_cost_to_go"]] = rt[:, 1]
    occ_t, head_t = _occ_terms_prepared(st, p, config)
    vals[:, IDX["occupancy"]] = occ_t.sum(axis=1)
    vals[:, IDX["headway"]] = head_t.sum(axis=1)
    vals[:, IDX["jerk"]:] = comfort_terms(st, dt)
    return BreakdownTable(vals, occ_t, head_t)


def evaluate_batch(states, scene: Scene, weights: CostWeights, config: CostConfig = CostConfig(),
                   dt: float = 0.5) -> tuple[np.ndarray, BreakdownTable]:
    table = breakdown_batch(states, scene, config, dt)
    return table.values @ weights.as_array(), table


def evaluate(traj: Trajectory, scene: Scene, weights: CostWeights,
             config: CostConfig = CostConfig()) -> tuple[float, CostBreakdown]:
    """Total cost ``w . breakdown`` and the breakdown of one trajectory."""
    totals, table = evaluate_batch(traj.states[None], scene, weights, config, traj.dt)
    return float(totals[0]), table.row(0)


# -- single-trajectory views -----------------------------------------------------------------

def cost_route(traj: Trajectory, route, config: CostConfig = CostConfig()) -> float:
    """Negative swept-cell count times the smallest route probability met."""
    return float(route_terms(traj, route.cells, route.spec, config)[0, 0])


def cost_route_to_go(traj: Trajectory, route, horizon_s: float = 2.0,
                     config: CostConfig = CostConfig()) -> float:
    """Mean off-route probability over cells swept after the horizon at constant velocity."""
    if not horizon_s > 0:
        raise ValueError("horizon_s must be positive")
    cfg = CostConfig(config.sdv_length, config.sdv_width, horizon_s, config.k_min, config.safety)
    return float(route_terms(traj, route.cells, route.spec, cfg)[0, 1])


def cost_lane_dist(traj: Trajectory, m: OnlineMap, config: CostConfig = CostConfig()) -> float:
    return float(map_terms(traj, m, config)[0, :, 0].mean())


def cost_lane_dir(traj: Trajectory, m: OnlineMap, config: CostConfig = CostConfig()) -> float:
    return float(map_terms(traj, m, config)[0, :, 1].mean())


def cost_lane_uncertainty(traj: Trajectory, m: OnlineMap, config: CostConfig = CostConfig()) -> float:
    return float(map_terms(traj, m, config)[0, :, 2].sum())


def cost_drivable(traj: Trajectory, m: OnlineMap, config: CostConfig = CostConfig()) -> float:
    return float(map_terms(traj, m, config)[0, :, 3].sum())


def cost_junction(traj: Trajectory, m: OnlineMap, red_light: bool,
                  config: CostConfig = CostConfig()) -> float:
    if not red_light:
        return 0.0
    return float(map_terms(traj, m, config)[0, :, 4].sum())


def cost_occupancy(traj: Trajectory, occupancy: Mapping[str, OccupancyField],
                   config: CostConfig = CostConfig()) -> np.ndarray:
    """Per-step sum over classes of the worst occupancy under the footprint."""
    spec = next(iter(occupancy.values())).spec
    dummy = _dummy_map(spec)
    scene = Scene(dummy, occupancy, {})
    return _occ_terms_prepared(_as_batch(traj), scene.prepared, config)[0][0]


def cost_headway(traj: Trajectory, occupancy: Mapping[str, OccupancyField],
                 motion: Mapping[str, list[MotionField]], params: SafetyParams = SafetyParams(),
                 config: CostConfig = CostConfig()) -> np.ndarray:
    """Per-step expected stopping-distance violation against occupancy ahead."""
    spec = next(iter(occupancy.values())).spec
    cfg = CostConfig(config.sdv_length, config.sdv_width, config.route_to_go_s, config.k_min, params)
    scene = Scene(_dummy_map(spec), occupancy, motion)
    return _occ_terms_prepared(_as_batch(traj), scene.prepared, cfg)[1][0]


def cost_comfort(traj: Trajectory) -> tuple[float, float, float, float]:
    j, la, c, cr = comfort_terms(traj, traj.dt)[0]
    return float(j), float(la), float(c), float(cr)


def _dummy_map(spec: GridSpec) -> OnlineMap:
    from .grid import BevGrid

    z = BevGrid.full(spec, 0.0)
    return OnlineMap(z, z, z, BevGrid.full(spec, 1.0), z, BevGrid.full(spec, 1.0))
