"""Report figures written straight to files (no interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib import colormaps
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .costs import Scene
from .occupancy_flow import OccupancyField
from .sim import EpisodeMetrics, Scenario
from .trajectory import A, KAPPA, STATE_DIM, V, TrajectoryBank, clip_profiles, rollout_batch


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    return path


def _extent(spec):
    # grid axes in meters, x forward, y left
    return (0.0, spec.length_m, 0.0, spec.width_m)


def _to_local(spec, xy: np.ndarray) -> np.ndarray:
    uv = spec.world_to_grid(xy)
    return (uv + 0.5) * spec.resolution_m


def plot_scene(scene: Scene, path, candidates: np.ndarray | None = None,
               best: np.ndarray | None = None, costs: np.ndarray | None = None,
               title: str = "") -> Path:
    """Drivable and route layers with the candidate fan (colored by cost) and the chosen trajectory."""
    spec = scene.map.spec
    fig = Figure(figsize=(9, 4.5))
    ax = fig.add_subplot()
    bg = scene.map.drivable.cells.copy()
    if scene.map.route is not None:
        bg = bg + scene.map.route.cells
    ax.imshow(bg, origin="lower", extent=_extent(spec), cmap="Greys", vmin=0, vmax=2.5)
    for occ in scene.occupancy.values():
        cells = occ.grids[0].cells
        if cells.any():
            ax.contour(cells, levels=[0.5], origin="lower", extent=_extent(spec), colors="tab:red")
    if candidates is not None and len(candidates):
        step = max(1, len(candidates) // 300)
        idx = np.arange(0, len(candidates), step)
        if costs is not None:
            # rank colors so a few huge costs do not flatten the scale
            rank = np.argsort(np.argsort(costs[idx])) / max(1, len(idx) - 1)
            cm = colormaps["viridis"]
            for j, i in enumerate(idx):
                p = _to_local(spec, candidates[i][:, :2])
                ax.plot(p[:, 0], p[:, 1], color=cm(rank[j]), alpha=0.35, lw=0.6)
        else:
            for i in idx:
                p = _to_local(spec, candidates[i][:, :2])
                ax.plot(p[:, 0], p[:, 1], color="tab:blue", alpha=0.15, lw=0.6)
    if best is not None:
        p = _to_local(spec, best[:, :2])
        ax.plot(p[:, 0], p[:, 1], color="tab:orange", lw=2.0, label="selected")
        ax.legend(loc="upper right")
    ax.set_xlabel("forward [m]")
    ax.set_ylabel("left [m]")
    ax.set_title(title)
    return _save(fig, path)


def plot_occupancy(fields: Mapping[str, OccupancyField], path, steps: Sequence[int] = (0, 5, 10)
                   ) -> Path:
    classes = [c for c, f in fields.items() if f.stack().any()] or list(fields)[:1]
    fig = Figure(figsize=(3.2 * len(steps), 2.2 * max(1, len(classes))))
    axes = fig.subplots(max(1, len(classes)), len(steps), squeeze=False)
    for i, cls in enumerate(classes):
        f = fields[cls]
        for j, t in enumerate(steps):
            ax = axes[i][j]
            t = min(t, len(f) - 1)
            ax.imshow(f.grids[t].cells, origin="lower", extent=_extent(f.spec), vmin=0, vmax=1,
                      cmap="magma")
            ax.set_title(f"{cls} t={t}", fontsize=9)
            ax.set_xticks([])
            ax.set_yticks([])
    return _save(fig, path)


def plot_training_curve(history: Sequence[float], path) -> Path:
    fig = Figure(figsize=(5, 3.2))
    ax = fig.add_subplot()
    h = np.asarray(history, dtype=float)
    ax.plot(np.arange(len(h)), h)
    if (h > 0).all():
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("mean margin loss")
    return _save(fig, path)


def plot_episode(sc: Scenario, ep: EpisodeMetrics, path) -> Path:
    """Lanes, the logged expert path and the driven trace in world coordinates."""
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    for lane in sc.lanes.lanes.values():
        ax.plot(lane.centerline[:, 0], lane.centerline[:, 1], color="0.8", lw=0.8)
    xy = np.array([[r["x"], r["y"]] for r in ep.trace])
    ts = [sc.expert_pose(r["t"]) for r in ep.trace]
    ex = np.array([[p[0], p[1]] for p in ts])
    ax.plot(ex[:, 0], ex[:, 1], "--", color="tab:green", label="expert")
    ax.plot(xy[:, 0], xy[:, 1], color="tab:orange", label="planner")
    for e in ep.events:
        ax.plot(*e.position, "x", color="tab:red", ms=9)
        ax.annotate(e.kind, e.position, fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    pad = 15.0
    allp = np.vstack([xy, ex])
    ax.set_xlim(allp[:, 0].min() - pad, allp[:, 0].max() + pad)
    ax.set_ylim(allp[:, 1].min() - pad, allp[:, 1].max() + pad)
    ax.legend(loc="best")
    ax.set_title(f"{sc.name}: {'success' if ep.success else 'failed'}")
    return _save(fig, path)


def plot_ablation(rows: Sequence[Mapping], path, metric: str = "off_route_pct") -> Path:
    fig = Figure(figsize=(max(4, 0.9 * len(rows)), 3.2))
    ax = fig.add_subplot()
    names = [r["ablation"] for r in rows]
    ax.bar(range(len(rows)), [r[metric] for r in rows], color="tab:blue")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel(metric)
    return _save(fig, path)


def bank_fans(bank: TrajectoryBank, bins: int = 6) -> dict[tuple[int, int, int], np.ndarray]:
    """Prototype rollouts from bin centers; straight, zero-acceleration bins across speeds first."""
    plain = sorted(k for k in bank.bins if k[1] == 0 and k[2] == 0)
    if len(plain) > bins:
        plain = [plain[i] for i in np.linspace(0, len(plain) - 1, bins).round().astype(int)]
    rest = sorted((k for k in bank.bins if k not in plain), key=lambda k: (-len(bank.bins[k]), k))
    keys = (plain + rest)[:bins]
    out = {}
    for key in keys:
        x0 = np.zeros(STATE_DIM)
        x0[V] = max(0.0, (key[0] + 0.5) * bank.bin_sizes[0])
        x0[KAPPA] = (key[1] + 0.5) * bank.bin_sizes[1]
        x0[A] = (key[2] + 0.5) * bank.bin_sizes[2]
        prof = clip_profiles(x0, bank.bins[key], dt=bank.dt)
        out[key] = rollout_batch(x0, prof, bank.dt)
    return out


def plot_bank(bank: TrajectoryBank, path, bins: int = 6) -> Path:
    """Prototype count per speed bin and the trajectory fans of the most populated bins."""
    fans = bank_fans(bank, bins)
    fig = Figure(figsize=(3.2 * (len(fans) + 1), 3.4))
    axes = fig.subplots(1, len(fans) + 1, squeeze=False)[0]
    by_v: dict[int, int] = {}
    for (vb, _, _), p in bank.bins.items():
        by_v[vb] = by_v.get(vb, 0) + len(p)
    vs = sorted(by_v)
    axes[0].bar([v * bank.bin_sizes[0] for v in vs], [by_v[v] for v in vs],
                width=bank.bin_sizes[0] * 0.9, align="edge")
    axes[0].set_xlabel("initial speed [m/s]")
    axes[0].set_ylabel("prototypes")
    for ax, (key, states) in zip(axes[1:], fans.items()):
        for s in states:
            ax.plot(s[:, 0], s[:, 1], lw=0.6, alpha=0.6)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_title(f"bin {key}", fontsize=9)
    return _save(fig, path)
