"""Dynamic occupancy fields.

Each class carries an initial occupancy grid plus, for every future step, a
categorical distribution over ``K`` motion vectors per cell. Occupancy is
pushed forward one step at a time: each occupied source cell sends its mass
along every mode's displacement, the head of the displacement is split
bilinearly over its 4 nearest cells, and each target cell becomes occupied
unless none of the incoming flow events happens.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import ndimage

from .grid import BevGrid, GridSpec, box_polygon, load_grids, rasterize_convex, save_grids

CLASSES = ("vehicle", "pedestrian", "bicyclist")
HORIZON_STEPS = 11
STEP_S = 0.5
SNAP_CELLS = 1e-12  # heads this close to a cell center count as exact


@dataclass(frozen=True)
class MotionField:
    """Mode probabilities ``(K, rows, cols)`` and velocities ``(K, rows, cols, 2)``.

    Velocities are in m/s along the grid axes.
    """
    cls: str
    t: int
    spec: GridSpec
    mode_probs: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown class {self.cls!r}")
        K = self.mode_probs.shape[0]
        if K < 1 or self.mode_probs.shape != (K, *self.spec.shape):
            raise ValueError("mode_probs must be (K, rows, cols) with K >= 1")
        if self.velocities.shape != (K, *self.spec.shape, 2):
            raise ValueError("velocities must be (K, rows, cols, 2)")
        if np.abs(self.mode_probs.sum(axis=0) - 1.0).max() > 1e-6:
            raise ValueError("mode probabilities must sum to 1 in every cell")

    @property
    def k(self) -> int:
        return self.mode_probs.shape[0]

    @classmethod
    def still(cls, klass: str, t: int, spec: GridSpec, k: int = 3) -> "MotionField":
        """Uniform modes, zero velocity everywhere."""
        return cls(klass, t, spec, np.full((k, *spec.shape), 1.0 / k),
                   np.zeros((k, *spec.shape, 2)))

    @classmethod
    def uniform_velocity(cls, klass: str, t: int, spec: GridSpec, velocity) -> "MotionField":
        return cls(klass, t, spec, np.ones((1, *spec.shape)),
                   np.broadcast_to(np.asarray(velocity, dtype=float), (1, *spec.shape, 2)).copy())


@dataclass(frozen=True)
class OccupancyField:
    cls: str
    grids: tuple[BevGrid, ...]
    dt: float = STEP_S

    @property
    def spec(self) -> GridSpec:
        return self.grids[0].spec

    def stack(self) -> np.ndarray:
        return np.stack([g.cells for g in self.grids])

    def __len__(self):
        return len(self.grids)


@njit(cache=True, nogil=True)
def _flow_kernel(occ, probs, vel, shift):
    K, R, C = probs.shape
    out = np.zeros((R, C))
    idx = np.empty(4 * K, dtype=np.int64)
    acc = np.empty(4 * K)
    for r in range(R):
        for c in range(C):
            p = occ[r, c]
            if p == 0.0:
                continue
            total = 0.0
            for k in range(K):
                total += probs[k, r, c]
            if total <= 0.0:
                continue
            n = 0
            for k in range(K):
                pk = probs[k, r, c]
                if pk == 0.0:
                    continue
                hu = c + vel[k, r, c, 0] * shift
                hv = r + vel[k, r, c, 1] * shift
                # integer displacements given in m/s can miss a cell center by an ulp
                if abs(hu - round(hu)) < SNAP_CELLS:
                    hu = round(hu)
                if abs(hv - round(hv)) < SNAP_CELLS:
                    hv = round(hv)
                u0 = math.floor(hu)
                v0 = math.floor(hv)
                fu = hu - u0
                fv = hv - v0
                for q in range(4):
                    du = q & 1
                    dv = q >> 1
                    w = (fu if du else 1.0 - fu) * (fv if dv else 1.0 - fv)
                    if w == 0.0:
                        continue
                    tc = int(u0) + du
                    tr = int(v0) + dv
                    if tc < 0 or tc >= C or tr < 0 or tr >= R:
                        continue
                    t = tr * C + tc
                    found = -1
                    for m in range(n):
                        if idx[m] == t:
                            found = m
                            break
                    if found < 0:
                        idx[n] = t
                        acc[n] = pk * w
                        n += 1
                    else:
                        acc[found] += pk * w
            for m in range(n):
                f = p * (acc[m] / total)
                tr = idx[m] // C
                tc = idx[m] - tr * C
                o = out[tr, tc]
                out[tr, tc] = o + f - o * f
    return out


def flow_step(occ_t: BevGrid, motion: MotionField, dt: float = STEP_S) -> BevGrid:
    """Occupancy one step later under the complement-product flow rule."""
    if occ_t.spec != motion.spec:
        raise ValueError("occupancy and motion field are on different grids")
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = _flow_kernel(np.ascontiguousarray(occ_t.cells, dtype=float),
                       np.ascontiguousarray(motion.mode_probs, dtype=float),
                       np.ascontiguousarray(motion.velocities, dtype=float),
                       dt / occ_t.spec.resolution_m)
    return BevGrid(occ_t.spec, out)


def roll_out(initial: BevGrid, fields: Sequence[MotionField], dt: float = STEP_S,
             cls: str | None = None) -> OccupancyField:
    """Occupancy for t = 0..T obtained by repeatedly flowing ``initial``."""
    grids = [initial]
    for f in fields:
        grids.append(flow_step(grids[-1], f, dt))
    return OccupancyField(cls or (fields[0].cls if fields else "vehicle"), tuple(grids), dt)


# -- actor rasterization --------------------------------------------------------

@dataclass
class ActorMode:
    weight: float
    poses: np.ndarray  # (T + 1, 3): x, y, heading per step

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float)


@dataclass
class ActorTrack:
    """An actor's current box plus one or more weighted future pose sequences."""
    cls: str
    length: float
    width: float
    modes: list[ActorMode]

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown class {self.cls!r}")
        if not self.modes:
            raise ValueError("actor needs at least one mode")
        tot = sum(m.weight for m in self.modes)
        if tot <= 0:
            raise ValueError("mode weights must be positive")

    @property
    def weights(self) -> np.ndarray:
        w = np.array([m.weight for m in self.modes], dtype=float)
        return w / w.sum()

    def polygon(self, mode: int = 0, t: int = 0) -> np.ndarray:
        x, y, th = self.modes[mode].poses[t]
        return box_polygon(x, y, th, self.length, self.width)

    @classmethod
    def constant_velocity(cls, klass, x, y, heading, speed, length, width,
                          steps: int = HORIZON_STEPS, dt: float = STEP_S) -> "ActorTrack":
        t = np.arange(steps + 1) * dt
        poses = np.column_stack([x + speed * math.cos(heading) * t,
                                 y + speed * math.sin(heading) * t,
                                 np.full_like(t, heading)])
        return cls(klass, length, width, [ActorMode(1.0, poses)])


def _mask(cells: np.ndarray, spec: GridSpec) -> np.ndarray:
    m = np.zeros(spec.rows * spec.cols, dtype=bool)
    m[cells] = True
    return m.reshape(spec.shape)


def rasterize_actors(actors: Sequence[ActorTrack], spec: GridSpec, steps: int = HORIZON_STEPS,
                     dt: float = STEP_S, k: int | None = None, support_dilation: int = 1,
                     ) -> dict[str, tuple[BevGrid, list[MotionField]]]:
    """Initial occupancy and per-step motion fields for every class.

    At step ``t`` a cell covered (after dilation by ``support_dilation``
    cells) by modes of an actor gets mode probabilities proportional to the
    covering modes' weights and those modes' velocities. Where actors of one
    class overlap, the one whose center is nearer wins. Uncovered cells hold
    uniform modes with zero velocity.
    """
    out = {}
    struct = ndimage.generate_binary_structure(2, 2)
    for klass in CLASSES:
        group = [a for a in actors if a.cls == klass]
        K = k if k is not None else max([len(a.modes) for a in group] + [1])
        if any(len(a.modes) > K for a in group):
            raise ValueError(f"actor has more modes than K={K}")
        init = np.zeros(spec.shape)
        for a in group:
            init[_mask(rasterize_convex(a.polygon(0, 0), spec), spec)] = 1.0
        if not group:
            still = MotionField.still(klass, 0, spec, K)
            fields = [MotionField(klass, t, spec, still.mode_probs, still.velocities)
                      for t in range(steps)]
            out[klass] = (BevGrid(spec, init), fields)
            continue
        centers = spec.cell_centers()
        fields = []
        for t in range(steps):
            probs = np.zeros((K, *spec.shape))
            vel = np.zeros((K, *spec.shape, 2))
            best = np.full(spec.shape, np.inf)
            for a in group:
                w = a.weights
                cover = np.zeros((K, *spec.shape), dtype=bool)
                near = np.full(spec.shape, np.inf)
                for m, mode in enumerate(a.modes):
                    ti = min(t, len(mode.poses) - 1)
                    x, y, th = mode.poses[ti]
                    cells = rasterize_convex(box_polygon(x, y, th, a.length, a.width), spec)
                    mask = _mask(cells, spec)
                    if support_dilation > 0 and mask.any():
                        mask = ndimage.binary_dilation(mask, struct, iterations=support_dilation)
                    cover[m] = mask
                    d = np.hypot(centers[..., 0] - x, centers[..., 1] - y)
                    near = np.where(mask, np.minimum(near, d), near)
                win = near < best
                if not win.any():
                    continue
                best = np.where(win, near, best)
                probs[:, win] = 0.0
                vel[:, win] = 0.0
                wsum = np.zeros(spec.shape)
                for m in range(len(a.modes)):
                    wsum += w[m] * cover[m]
                for m, mode in enumerate(a.modes):
                    nxt = mode.poses[min(t + 1, len(mode.poses) - 1)]
                    cur = mode.poses[min(t, len(mode.poses) - 1)]
                    v_world = (nxt[:2] - cur[:2]) / dt
                    v_grid = spec.vector_to_grid(v_world)
                    pm = np.where(cover[m], w[m] / np.where(wsum > 0, wsum, 1.0), 0.0)
                    probs[m][win] = pm[win]
                    vel[m][win] = v_grid
            free = np.isinf(best)
            probs[:, free] = 1.0 / K
            vel[:, free] = 0.0
            fields.append(MotionField(klass, t, spec, probs, vel))
        out[klass] = (BevGrid(spec, init), fields)
    return out


def predict_occupancy(actors: Sequence[ActorTrack], spec: GridSpec, steps: int = HORIZON_STEPS,
                      dt: float = STEP_S, k: int | None = None,
                      ) -> tuple[dict[str, OccupancyField], dict[str, list[MotionField]]]:
    """Rasterize actors and roll each class's occupancy forward ``steps`` times."""
    occ, motion = {}, {}
    for klass, (init, fields) in rasterize_actors(actors, spec, steps, dt, k).items():
        if not init.cells.any():
            occ[klass] = OccupancyField(klass, tuple([init] * (steps + 1)), dt)
        else:
            occ[klass] = roll_out(init, fields, dt, klass)
        motion[klass] = fields
    return occ, motion


def scripted_occupancy(actors: Sequence[ActorTrack], spec: GridSpec, t: int) -> dict[str, BevGrid]:
    """Occupancy read directly off the scripted futures at step ``t``.

    A cell's probability is the total weight of the modes whose box covers
    it; actors of one class combine by max.
    """
    out = {}
    for klass in CLASSES:
        grid = np.zeros(spec.shape)
        for a in actors:
            if a.cls != klass:
                continue
            p = np.zeros(spec.shape)
            for w, mode in zip(a.weights, a.modes):
                x, y, th = mode.poses[min(t, len(mode.poses) - 1)]
                p[_mask(rasterize_convex(box_polygon(x, y, th, a.length, a.width), spec), spec)] += w
            grid = np.maximum(grid, np.minimum(p, 1.0))
        out[klass] = BevGrid(spec, grid)
    return out


def save_occupancy(path, field_: OccupancyField) -> None:
    save_grids(path, field_.spec, [g.cells for g in field_.grids],
               names=[f"{field_.cls}/t{t}" for t in range(len(field_))])


def load_occupancy(path, cls: str = "vehicle", dt: float = STEP_S) -> OccupancyField:
    spec, arr, _ = load_grids(path)
    return OccupancyField(cls, tuple(BevGrid(spec, a) for a in arr), dt)


def save_motion(path, mf: MotionField) -> None:
    chans = list(mf.mode_probs) + [mf.velocities[k, ..., j] for k in range(mf.k) for j in range(2)]
    names = [f"p{k}" for k in range(mf.k)] + [f"v{k}{'xy'[j]}" for k in range(mf.k) for j in range(2)]
    save_grids(path, mf.spec, chans, dtype="float64", names=names)


def load_motion(path, cls: str = "vehicle", t: int = 0) -> MotionField:
    spec, arr, _ = load_grids(path)
    K = arr.shape[0] // 3
    vel = np.stack([np.stack([arr[K + 2 * k], arr[K + 2 * k + 1]], axis=-1) for k in range(K)])
    return MotionField(cls, t, spec, arr[:K], vel)
