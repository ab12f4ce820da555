"""Max-margin learning of cost weights from demonstrations.

The planner's total cost is linear in the weights, so for a fixed example
every candidate's subcosts can be computed once. The loss

    max_tau [ f_r(tau_h) - f_r(tau) + l_im + sum_t [f_o^t(tau_h) - f_o^t(tau) + l_o^t]_+ ]_+

is then piecewise linear in the weights and is minimized by projected
subgradient descent. ``f_r`` holds every subcost except occupancy; ``f_o^t``
is the weighted occupancy term at step ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .costs import IDX, SUBCOSTS, CostConfig, CostWeights, Scene, breakdown_batch
from .grid import GridSpec, box_polygon
from .occupancy_flow import ActorTrack, predict_occupancy
from .online_map import DrivingCommand, Lane, LaneGraph, rasterize_map, rasterize_route
from .planner import select
from .trajectory import (PLAN_STEPS, STEP_S, SdvState, Trajectory, VehicleLimits,
                         clip_profiles, rollout_batch)

OCC = IDX["occupancy"]
SEVERITY = 10.0


@dataclass
class TrainingExample:
    """One demonstration: scene, start state, expert track and candidate profiles.

    ``gt_polygons[t]`` lists the ground-truth actor rectangles at step ``t``
    used by the collision task loss.
    """
    scene: Scene
    x0: SdvState
    expert: Trajectory
    candidates: np.ndarray  # (N, T, 2) control profiles
    gt_polygons: list[list[np.ndarray]] = field(default_factory=list)


@dataclass
class ExampleFeatures:
    """Weight-independent quantities of one example."""
    cand: np.ndarray      # (N, 13) subcosts with the occupancy column zeroed
    cand_occ: np.ndarray  # (N, S) per-step occupancy
    exp: np.ndarray       # (13,)
    exp_occ: np.ndarray   # (S,)
    l_im: np.ndarray      # (N,)
    l_o: np.ndarray       # (N, S)
    states: np.ndarray    # (N, S, 7) candidate rollouts


def imitation_loss(states: np.ndarray, expert: Trajectory) -> np.ndarray:
    """Mean l1 distance of (x, y) to the expert over all timesteps, per candidate."""
    st = np.asarray(states)
    st = st[None] if st.ndim == 2 else st
    return np.abs(st[..., :2] - expert.states[None, :, :2]).sum(axis=-1).mean(axis=-1)


def collision_task_loss(traj, gt_polygons: Sequence[Sequence[np.ndarray]], severity: float = SEVERITY,
                        limits: VehicleLimits = VehicleLimits()) -> np.ndarray:
    """Per-step overlap area fraction of the SDV footprint with ground-truth actors, times severity."""
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj)
    out = np.zeros(len(states))
    for t, st in enumerate(states):
        if t >= len(gt_polygons) or not gt_polygons[t]:
            continue
        fp = Polygon(box_polygon(st[0], st[1], st[2], limits.length, limits.width))
        others = unary_union([Polygon(p) for p in gt_polygons[t]])
        out[t] = severity * fp.intersection(others).area / fp.area
    return out


def gt_polygons_of(actors: Sequence[ActorTrack], steps: int = PLAN_STEPS + 1) -> list[list[np.ndarray]]:
    """Ground-truth polygons per step, taking each actor's first mode as realized."""
    return [[a.polygon(0, min(t, len(a.modes[0].poses) - 1)) for a in actors] for t in range(steps)]


def fit_expert_profile(expert: Trajectory, x0: SdvState, limits: VehicleLimits = VehicleLimits(),
                       dt: float = STEP_S) -> Trajectory:
    """Least-squares control profile whose rollout tracks the expert's positions."""
    T = len(expert) - 1
    st = expert.states
    if expert.profile is not None:
        guess = np.asarray(expert.profile, dtype=float)
    else:
        guess = np.column_stack([np.diff(st[:, 3]) / dt, np.zeros(T)])
    guess = clip_profiles(x0.as_array(), guess, limits, dt)[0]
    lo = np.tile([-limits.a_max, -limits.kappa_dot_max], T)
    hi = -lo

    def resid(z):
        prof = clip_profiles(x0.as_array(), z.reshape(T, 2), limits, dt)
        s = rollout_batch(x0.as_array(), prof, dt, kappa_max=None)[0]
        return np.concatenate([(s[1:, :2] - st[1:, :2]).ravel(), 0.1 * (s[1:, 3] - st[1:, 3])])

    z0 = np.clip(guess.ravel(), lo, hi)
    if np.max(np.abs(resid(z0))) > 1e-9:
        z0 = least_squares(resid, z0, bounds=(lo, hi), xtol=1e-12, ftol=1e-12).x
    prof = clip_profiles(x0.as_array(), z0.reshape(T, 2), limits, dt)[0]
    states = rollout_batch(x0.as_array(), prof, dt, kappa_max=limits.kappa_max)[0]
    return Trajectory(states, prof, dt)


def featurize(ex: TrainingExample, config: CostConfig = CostConfig(),
              limits: VehicleLimits = VehicleLimits(), severity: float = SEVERITY) -> ExampleFeatures:
    dt = ex.expert.dt
    states = rollout_batch(ex.x0.as_array(), ex.candidates, dt, kappa_max=limits.kappa_max)
    table = breakdown_batch(states, ex.scene, config, dt)
    fitted = fit_expert_profile(ex.expert, ex.x0, limits, dt)
    exp = breakdown_batch(fitted.states[None], ex.scene, config, dt)
    cand = table.values.copy()
    cand[:, OCC] = 0.0
    ev = exp.values[0].copy()
    ev[OCC] = 0.0
    l_o = np.stack([collision_task_loss(s, ex.gt_polygons, severity, limits) for s in states])
    return ExampleFeatures(cand, table.occupancy_t, ev, exp.occupancy_t[0],
                           imitation_loss(states, ex.expert), l_o, states)


def _terms(f: ExampleFeatures, w: np.ndarray):
    """Per-candidate margin violation and inner per-step hinge arguments."""
    rest = (f.exp - f.cand) @ w + f.l_im
    inner = w[OCC] * (f.exp_occ[None] - f.cand_occ) + f.l_o
    return rest + np.maximum(inner, 0.0).sum(axis=1), inner


def margin_loss(f: ExampleFeatures, weights) -> tuple[float, np.ndarray]:
    """Loss and a subgradient with respect to the weights (at the first maximizing candidate)."""
    w = weights.as_array() if isinstance(weights, CostWeights) else np.asarray(weights, dtype=float)
    g_all, inner = _terms(f, w)
    i = int(np.argmax(g_all))
    loss = float(g_all[i])
    grad = np.zeros_like(w)
    if loss <= 0.0:
        return 0.0, grad
    grad[:] = f.exp - f.cand[i]
    active = inner[i] > 0.0
    grad[OCC] = float((f.exp_occ - f.cand_occ[i])[active].sum())
    return loss, grad


def dataset_loss(feats: Sequence[ExampleFeatures], weights) -> tuple[float, np.ndarray]:
    losses, grads = zip(*(margin_loss(f, weights) for f in feats))
    return float(np.mean(losses)), np.mean(grads, axis=0)


def active_pattern(f: ExampleFeatures, w: np.ndarray) -> tuple:
    """Argmax candidate and hinge signs; the loss is linear while this stays fixed."""
    g_all, inner = _terms(f, w)
    i = int(np.argmax(g_all))
    return i, bool(g_all[i] > 0), tuple(inner[i] > 0)


def finite_difference_check(feats: Sequence[ExampleFeatures], w: np.ndarray, eps: float = 1e-5
                            ) -> np.ndarray | None:
    """Central-difference gradient, or ``None`` if ``w`` is within ``eps`` of a kink."""
    w = np.asarray(w, dtype=float)
    base = [active_pattern(f, w) for f in feats]
    num = np.zeros_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = eps
        for sign in (1, -1):
            if [active_pattern(f, w + sign * e) for f in feats] != base:
                return None
        num[j] = (dataset_loss(feats, w + e)[0] - dataset_loss(feats, w - e)[0]) / (2 * eps)
    return num


@dataclass(frozen=True)
class FitOptions:
    lr: float = 0.05
    steps: int = 500
    normalize: bool = True
    keep_best: bool = True
    init: CostWeights | None = None


@dataclass
class FitResult:
    weights: CostWeights
    history: list[float]
    initial_loss: float
    best_loss: float


def feature_scales(feats: Sequence[ExampleFeatures]) -> np.ndarray:
    """Mean absolute expert-vs-candidate difference per subcost (1 where it never varies)."""
    diffs = []
    for f in feats:
        d = np.abs(f.exp - f.cand)
        d[:, OCC] = np.abs(f.exp_occ[None] - f.cand_occ).sum(axis=1)
        diffs.append(d)
    s = np.concatenate(diffs).mean(axis=0)
    return np.where(s > 1e-12, s, 1.0)


def fit(feats: Sequence[ExampleFeatures], opts: FitOptions = FitOptions()) -> FitResult:
    """Projected subgradient descent on the mean margin loss.

    With ``normalize`` the step on each weight is divided by the squared
    scale of its subcost, i.e. descent runs in scale-free coordinates.
    """
    if not feats:
        raise ValueError("empty dataset")
    w = (opts.init.as_array() if opts.init is not None else np.zeros(len(SUBCOSTS))).copy()
    pre = 1.0 / feature_scales(feats) ** 2 if opts.normalize else np.ones_like(w)
    loss, grad = dataset_loss(feats, w)
    initial = loss
    best_w, best = w.copy(), loss
    history = [loss]
    for _ in range(opts.steps):
        if loss == 0.0:
            break
        w = np.maximum(w - opts.lr * pre * grad, 0.0)
        loss, grad = dataset_loss(feats, w)
        history.append(loss)
        if loss < best:
            best_w, best = w.copy(), loss
    final = best_w if opts.keep_best else w
    return FitResult(CostWeights.from_array(final), history, initial, best)


# -- synthetic obstacle dataset ---------------------------------------------------------------

HAND_TUNED = CostWeights(route=0.02, lane_dist=1.0, lane_dir=1.0, drivable=5.0, occupancy=20.0,
                         headway=0.05, jerk=0.05, lat_accel=0.05, curvature=10.0, curvature_rate=10.0)


def candidate_lattice(steps: int = PLAN_STEPS) -> np.ndarray:
    """Fixed candidate profiles: constant accelerations crossed with steering patterns."""
    accels = [-5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 0.5, 1.0]
    shapes = [np.zeros(steps)]
    for amp in (0.02, 0.04, 0.06):
        for sign in (1.0, -1.0):
            q = max(1, steps // 4)
            k = np.zeros(steps)
            k[:q] = amp
            k[q:3 * q] = -amp
            k[3 * q:4 * q] = amp
            shapes.append(sign * k)
    return np.array([np.column_stack([np.full(steps, a), kd]) for a in accels for kd in shapes])


def _road(length: float = 200.0) -> LaneGraph:
    a = Lane("a", np.array([[-50.0, 0.0], [length, 0.0]]), left="b")
    b = Lane("b", np.array([[-50.0, 3.5], [length, 3.5]]), right="a")
    drivable = [np.array([[-50.0, -1.75], [length, -1.75], [length, 5.25], [-50.0, 5.25]])]
    return LaneGraph({"a": a, "b": b}, drivable)


def obstacle_scene(gap_m: float, v0: float, spec_res: float = 0.5, lateral: float = 0.0
                   ) -> tuple[Scene, SdvState, list[ActorTrack]]:
    """Straight two-lane road with a parked vehicle ``gap_m`` ahead in the SDV's lane."""
    lg = _road()
    pose = (0.0, 0.0, 0.0)
    spec = GridSpec.ego(pose, spec_res, length_m=120.0, width_m=40.0, behind_m=30.0)
    m = rasterize_map(lg, pose, spec)
    route = rasterize_route(lg, pose, DrivingCommand(), spec, noise_std_m=0.0, seed=0)
    actors = [ActorTrack.constant_velocity("vehicle", gap_m + 4.8, lateral, 0.0, 0.0, 4.8, 2.0)]
    occ, mot = predict_occupancy(actors, spec)
    return Scene(m.with_route(route), occ, mot), SdvState(v=v0), actors


def synthetic_obstacle_dataset(n: int = 20, seed: int = 0, weights: CostWeights = HAND_TUNED,
                               config: CostConfig = CostConfig()) -> list[TrainingExample]:
    """Scenes with a parked car ahead; the expert is the best lattice candidate under ``weights``.

    Only scenes where that expert is collision-free and at least one
    candidate collides are kept, so every example carries an obstacle
    signal.
    """
    rng = np.random.default_rng(seed)
    cands = candidate_lattice()
    out: list[TrainingExample] = []
    limits = VehicleLimits()
    for _ in range(50 * n):
        if len(out) == n:
            break
        gap = float(rng.uniform(8.0, 30.0))
        v0 = float(rng.uniform(3.0, 10.0))
        scene, x0, actors = obstacle_scene(gap, v0)
        prof = clip_profiles(x0.as_array(), cands, limits)
        states = rollout_batch(x0.as_array(), prof, kappa_max=limits.kappa_max)
        table = breakdown_batch(states, scene, config)
        i = select(table.values @ weights.as_array())
        polys = gt_polygons_of(actors)
        l_o = np.stack([collision_task_loss(s, polys) for s in states])
        if l_o[i].any() or not l_o.any():
            continue
        expert = Trajectory(states[i], prof[i], STEP_S)
        out.append(TrainingExample(scene, x0, expert, prof, polys))
    if len(out) < n:
        raise RuntimeError(f"only {len(out)} usable scenes generated")
    return out


def replan_collides(ex: TrainingExample, f: ExampleFeatures, weights: CostWeights) -> bool:
    """Whether the planner under ``weights`` picks a candidate with positive collision loss."""
    w = weights.as_array()
    totals = f.cand @ w + w[OCC] * f.cand_occ.sum(axis=1)
    return bool(f.l_o[select(totals)].any())


def training_curve_tsv(history: Sequence[float]) -> str:
    return "step\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(history))

