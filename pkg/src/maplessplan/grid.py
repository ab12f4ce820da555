"""Uniform bird's-eye-view rasters.

A :class:`GridSpec` places a ``rows x cols`` lattice of square cells in the
world. The lattice may be rotated (``yaw``) so that grids can live in the
ego frame of the vehicle. All layer data (map, route, occupancy, motion) is
stored on such grids and every query goes through world coordinates, which
lets layers with different resolutions be mixed freely.

Continuous grid coordinates ``(u, v)`` put the center of cell ``(row, col)``
at ``u = col``, ``v = row``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

EDGE_EPS = 1e-9


@dataclass(frozen=True)
class GridSpec:
    resolution_m: float
    length_m: float
    width_m: float
    origin: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        if not self.resolution_m > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution_m}")
        if self.length_m <= 0 or self.width_m <= 0:
            raise ValueError("grid extent must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one cell")

    @property
    def rows(self) -> int:
        return int(round(self.width_m / self.resolution_m))

    @property
    def cols(self) -> int:
        return int(round(self.length_m / self.resolution_m))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def ego(cls, pose: Sequence[float], resolution_m: float, length_m: float = 140.0,
            width_m: float = 80.0, behind_m: float | None = None) -> "GridSpec":
        """Grid aligned with a vehicle pose ``(x, y, heading)``.

        By default the region of interest is centered on the vehicle:
        ``length_m / 2`` ahead and behind, ``width_m / 2`` to each side.
        """
        x, y, th = float(pose[0]), float(pose[1]), float(pose[2])
        behind = length_m / 2 if behind_m is None else behind_m
        c, s = math.cos(th), math.sin(th)
        lx, ly = -behind, -width_m / 2
        origin = (x + c * lx - s * ly, y + s * lx + c * ly)
        return cls(resolution_m, length_m, width_m, origin, th)

    def world_to_grid(self, xy) -> np.ndarray:
        """Continuous ``(u, v)`` coordinates for world points of shape (..., 2)."""
        p = np.asarray(xy, dtype=float)
        dx = p[..., 0] - self.origin[0]
        dy = p[..., 1] - self.origin[1]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        return np.stack([lx / self.resolution_m - 0.5, ly / self.resolution_m - 0.5], axis=-1)

    def grid_to_world(self, uv) -> np.ndarray:
        q = np.asarray(uv, dtype=float)
        lx = (q[..., 0] + 0.5) * self.resolution_m
        ly = (q[..., 1] + 0.5) * self.resolution_m
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.stack([self.origin[0] + c * lx - s * ly,
                         self.origin[1] + s * lx + c * ly], axis=-1)

    def cell_of(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """Row and column of the cell containing each world point (may be out of range)."""
        uv = self.world_to_grid(xy)
        return np.floor(uv[..., 1] + 0.5).astype(np.int64), np.floor(uv[..., 0] + 0.5).astype(np.int64)

    def cell_centers(self) -> np.ndarray:
        """World coordinates of all cell centers, shape (rows, cols, 2)."""
        vv, uu = np.meshgrid(np.arange(self.rows, dtype=float), np.arange(self.cols, dtype=float),
                             indexing="ij")
        return self.grid_to_world(np.stack([uu, vv], axis=-1))

    def heading_to_grid(self, theta):
        return wrap_angle(np.asarray(theta, dtype=float) - self.yaw)

    def vector_to_grid(self, vxy) -> np.ndarray:
        """Rotate world-frame vectors into the grid's axes."""
        v = np.asarray(vxy, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.stack([c * v[..., 0] + s * v[..., 1], -s * v[..., 0] + c * v[..., 1]], axis=-1)

    def contains_world(self, xy) -> np.ndarray:
        r, c = self.cell_of(xy)
        return (r >= 0) & (r < self.rows) & (c >= 0) & (c < self.cols)

    def to_dict(self) -> dict:
        return {"resolution_m": self.resolution_m, "length_m": self.length_m,
                "width_m": self.width_m, "origin": list(self.origin), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["resolution_m"]), float(d["length_m"]), float(d["width_m"]),
                   tuple(d.get("origin", (0.0, 0.0))), float(d.get("yaw", 0.0)))


def wrap_angle(a):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class BevGrid:
    """A single-channel raster on a :class:`GridSpec`.

    ``cells`` is a read-only ``(rows, cols)`` float array.
    """
    spec: GridSpec
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.shape != self.spec.shape:
            raise ValueError(f"cells shape {cells.shape} does not match grid {self.spec.shape}")
        if cells.flags.writeable:
            cells = cells.copy()
            cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @classmethod
    def full(cls, spec: GridSpec, value: float = 0.0) -> "BevGrid":
        return cls(spec, np.full(spec.shape, value, dtype=float))

    def __len__(self):
        return self.cells.size

    def value_at(self, xy, fill: float = np.nan) -> np.ndarray:
        """Nearest-cell lookup at world points; ``fill`` outside the grid."""
        r, c = self.spec.cell_of(xy)
        inside = (r >= 0) & (r < self.spec.rows) & (c >= 0) & (c < self.spec.cols)
        out = np.full(np.shape(r), fill, dtype=float)
        out[inside] = self.cells[r[inside], c[inside]]
        return out

    def replace(self, cells: np.ndarray) -> "BevGrid":
        return BevGrid(self.spec, cells)


@dataclass(frozen=True)
class Footprint:
    """Rectangle of a vehicle body; ``polygon`` is (4, 2), counter-clockwise."""
    polygon: np.ndarray

    @classmethod
    def from_pose(cls, x: float, y: float, theta: float, length: float = 4.8,
                  width: float = 2.0) -> "Footprint":
        return cls(box_polygon(x, y, theta, length, width))

    @property
    def area(self) -> float:
        p = self.polygon
        return 0.5 * float(np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1]))


def box_polygon(x, y, theta, length, width) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = length / 2, width / 2
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    return np.column_stack([x + c * local[:, 0] - s * local[:, 1],
                            y + s * local[:, 0] + c * local[:, 1]])


# -- rasterization kernels ---------------------------------------------------

@njit(cache=True, nogil=True)
def scan_spans(pu, pv, rows, cols, spans):
    """Row spans ``(row, col0, col1)`` of cells whose center lies in a convex polygon.

    ``pu``/``pv`` hold the polygon vertices in continuous grid coordinates.
    Spans are inclusive, clipped to the grid and written in row order;
    returns how many were written.
    """
    n = pu.shape[0]
    vmin = pv[0]
    vmax = pv[0]
    for k in range(1, n):
        if pv[k] < vmin:
            vmin = pv[k]
        if pv[k] > vmax:
            vmax = pv[k]
    r0 = int(math.ceil(vmin - EDGE_EPS))
    r1 = int(math.floor(vmax + EDGE_EPS))
    if r0 < 0:
        r0 = 0
    if r1 > rows - 1:
        r1 = rows - 1
    count = 0
    for r in range(r0, r1 + 1):
        umin = 1e300
        umax = -1e300
        for k in range(n):
            k2 = k + 1 if k + 1 < n else 0
            a_u = pu[k]
            a_v = pv[k]
            b_u = pu[k2]
            b_v = pv[k2]
            da = a_v - r
            db = b_v - r
            if abs(da) <= EDGE_EPS:
                if a_u < umin:
                    umin = a_u
                if a_u > umax:
                    umax = a_u
            if (da < -EDGE_EPS and db > EDGE_EPS) or (da > EDGE_EPS and db < -EDGE_EPS):
                u = a_u + (r - a_v) * (b_u - a_u) / (b_v - a_v)
                if u < umin:
                    umin = u
                if u > umax:
                    umax = u
        if umax < umin:
            continue
        c0 = int(math.ceil(umin - EDGE_EPS))
        c1 = int(math.floor(umax + EDGE_EPS))
        if c0 < 0:
            c0 = 0
        if c1 > cols - 1:
            c1 = cols - 1
        if c1 < c0:
            continue
        spans[count, 0] = r
        spans[count, 1] = c0
        spans[count, 2] = c1
        count += 1
    return count


@njit(cache=True, nogil=True)
def scan_convex(pu, pv, rows, cols, out, start):
    """Write flat indices of cells whose center lies in a convex polygon.

    Writes into ``out[start:]`` row by row and returns the new end offset.
    """
    spans = np.empty((rows, 3), dtype=np.int64)
    m = scan_spans(pu, pv, rows, cols, spans)
    end = start
    for i in range(m):
        base = spans[i, 0] * cols
        for c in range(spans[i, 1], spans[i, 2] + 1):
            out[end] = base + c
            end += 1
    return end


@njit(cache=True, nogil=True)
def convex_hull(px, py, hx, hy):
    """Monotone-chain convex hull of a small point set (CCW, no repeats).

    Writes hull vertices into ``hx``/``hy`` (length >= 2 * n) and returns count.
    """
    n = px.shape[0]
    order = np.arange(n)
    # insertion sort by (x, y); n is tiny
    for i in range(1, n):
        j = i
        while j > 0:
            a = order[j - 1]
            b = order[j]
            if px[a] > px[b] or (px[a] == px[b] and py[a] > py[b]):
                order[j - 1] = b
                order[j] = a
                j -= 1
            else:
                break
    k = 0
    for ii in range(n):
        i = order[ii]
        while k >= 2 and ((hx[k - 1] - hx[k - 2]) * (py[i] - hy[k - 2])
                          - (hy[k - 1] - hy[k - 2]) * (px[i] - hx[k - 2])) <= 0.0:
            k -= 1
        hx[k] = px[i]
        hy[k] = py[i]
        k += 1
    lower = k + 1
    for ii in range(n - 2, -1, -1):
        i = order[ii]
        while k >= lower and ((hx[k - 1] - hx[k - 2]) * (py[i] - hy[k - 2])
                              - (hy[k - 1] - hy[k - 2]) * (px[i] - hx[k - 2])) <= 0.0:
            k -= 1
        hx[k] = px[i]
        hy[k] = py[i]
        k += 1
    return k - 1


def _polygon_uv(polygon, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    uv = spec.world_to_grid(np.asarray(polygon, dtype=float))
    return np.ascontiguousarray(uv[:, 0]), np.ascontiguousarray(uv[:, 1])


def rasterize_convex(polygon, spec: GridSpec) -> np.ndarray:
    """Sorted flat indices of cells whose centers lie inside a convex polygon."""
    pu, pv = _polygon_uv(polygon, spec)
    span_u = int(math.ceil(pu.max() - pu.min())) + 3
    span_v = int(math.ceil(pv.max() - pv.min())) + 3
    out = np.empty(max(span_u * span_v, 1), dtype=np.int64)
    end = scan_convex(pu, pv, spec.rows, spec.cols, out, 0)
    return out[:end].copy()


def rasterize_footprint(fp: Footprint, spec: GridSpec) -> np.ndarray:
    """Cells (flat, row-major indices) whose center lies inside the footprint.

    Returns an empty array when the footprint misses the grid.
    """
    return rasterize_convex(fp.polygon, spec)


def rasterize_polygon_mask(polygon, spec: GridSpec) -> np.ndarray:
    """Boolean mask of cell centers inside an arbitrary simple polygon (even-odd rule)."""
    pu, pv = _polygon_uv(polygon, spec)
    mask = np.zeros(spec.shape, dtype=bool)
    au, av = pu, pv
    bu, bv = np.roll(pu, -1), np.roll(pv, -1)
    r0 = max(int(math.ceil(pv.min())), 0)
    r1 = min(int(math.floor(pv.max())), spec.rows - 1)
    if r1 < r0:
        return mask
    cols = np.arange(spec.cols, dtype=float)
    for r in range(r0, r1 + 1):
        # half-open crossing rule avoids double-counting vertices
        hit = (av <= r) != (bv <= r)
        if not hit.any():
            continue
        xs = au[hit] + (r - av[hit]) * (bu[hit] - au[hit]) / (bv[hit] - av[hit])
        crossings = np.sum(xs[None, :] > cols[:, None], axis=1)
        mask[r] = (crossings % 2) == 1
    return mask


def brute_force_footprint(fp: Footprint, spec: GridSpec) -> set[int]:
    """Exhaustive point-in-convex-polygon test over every cell center (test oracle)."""
    centers = spec.cell_centers().reshape(-1, 2)
    p = fp.polygon
    inside = np.ones(len(centers), dtype=bool)
    for k in range(len(p)):
        a, b = p[k], p[(k + 1) % len(p)]
        cross = (b[0] - a[0]) * (centers[:, 1] - a[1]) - (b[1] - a[1]) * (centers[:, 0] - a[0])
        inside &= cross >= -1e-9 * spec.resolution_m
    return set(np.flatnonzero(inside).tolist())


# -- bilinear splatting --------------------------------------------------------

class Splat(NamedTuple):
    row: int
    col: int
    weight: float
    inside: bool


def bilinear_weights(uv) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized bilinear split of continuous points (..., 2).

    Returns ``(rows, cols, weights)`` each of shape (..., 4), ordered
    (u0, v0), (u0 + 1, v0), (u0, v0 + 1), (u0 + 1, v0 + 1).
    """
    q = np.asarray(uv, dtype=float)
    u0 = np.floor(q[..., 0])
    v0 = np.floor(q[..., 1])
    fu = q[..., 0] - u0
    fv = q[..., 1] - v0
    w = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=-1)
    cols = np.stack([u0, u0 + 1, u0, u0 + 1], axis=-1).astype(np.int64)
    rows = np.stack([v0, v0, v0 + 1, v0 + 1], axis=-1).astype(np.int64)
    return rows, cols, w


def bilinear_split(point, spec: GridSpec | None = None) -> list[Splat]:
    """Split unit mass at a continuous grid coordinate ``(u, v)`` over the 4 nearest cells.

    Cells outside ``spec`` (when given) keep their weight but are flagged
    ``inside=False``; callers drop that mass.
    """
    rows, cols, w = bilinear_weights(np.asarray(point, dtype=float))
    out = []
    for r, c, wt in zip(rows.tolist(), cols.tolist(), w.tolist()):
        inside = spec is None or (0 <= r < spec.rows and 0 <= c < spec.cols)
        out.append(Splat(r, c, wt, inside))
    return out


# -- serialization -------------------------------------------------------------

_MAGIC = b"BEVG"
_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sHHIII6d")


def save_grids(path, spec: GridSpec, channels, dtype: str = "float32", names=None) -> None:
    """Write a stack of layers on one spec to the binary container.

    Header: magic, version, dtype code, rows, cols, channel count, then
    resolution, length, width, origin x/y and yaw as float64. An optional
    UTF-8 JSON list of channel names follows, then the row-major payload.
    """
    arr = np.asarray([c.cells if isinstance(c, BevGrid) else c for c in channels])
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[1:] != spec.shape:
        raise ValueError("channel shape does not match spec")
    code = 0 if dtype == "float32" else 1
    names_blob = json.dumps(list(names) if names is not None else []).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, code, spec.rows, spec.cols, arr.shape[0],
                              spec.resolution_m, spec.length_m, spec.width_m,
                              spec.origin[0], spec.origin[1], spec.yaw))
        fh.write(struct.pack("<I", len(names_blob)))
        fh.write(names_blob)
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def load_grids(path) -> tuple[GridSpec, np.ndarray, list[str]]:
    data = Path(path).read_bytes()
    magic, version, code, rows, cols, nch, res, length, width, ox, oy, yaw = \
        _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a grid container")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    off = _HEADER.size
    (nlen,) = struct.unpack_from("<I", data, off)
    off += 4
    names = json.loads(data[off:off + nlen].decode())
    off += nlen
    spec = GridSpec(res, length, width, (ox, oy), yaw)
    if (spec.rows, spec.cols) != (rows, cols):
        raise ValueError(f"{path}: header extent disagrees with rows/cols")
    arr = np.frombuffer(data, dtype=_DTYPES[code], count=nch * rows * cols, offset=off)
    return spec, arr.reshape(nch, rows, cols).astype(float), names


def grid_to_text(grid: BevGrid) -> str:
    """Lossless JSON export (float64 reprs) for golden tests."""
    return json.dumps({"spec": grid.spec.to_dict(), "rows": grid.spec.rows,
                       "cols": grid.spec.cols, "cells": grid.cells.tolist()})


def grid_from_text(text: str) -> BevGrid:
    d = json.loads(text)
    return BevGrid(GridSpec.from_dict(d["spec"]), np.array(d["cells"], dtype=float))
