"""Vehicle states, kinematic bicycle rollouts and the retrieval trajectory bank.

Trajectories are stored as ``(T + 1, 7)`` arrays with columns
``x, y, theta, v, a, kappa, kappa_dot``. Row 0 is the start state; row
``k > 0`` carries the acceleration and curvature rate that were applied
during step ``k - 1 -> k``. A control profile is a ``(T, 2)`` array of
``(a, kappa_dot)`` per planning step.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

X, Y, THETA, V, A, KAPPA, KAPPA_DOT = range(7)
STATE_DIM = 7
STEP_S = 0.5
PLAN_STEPS = 10
SUBSTEPS = 10
BIN_SIZES = (2.0, 0.02, 1.0)
BANK_FORMAT_VERSION = 1


class ProfileInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class VehicleLimits:
    kappa_max: float = 0.2
    kappa_dot_max: float = 0.2
    a_max: float = 6.0
    length: float = 4.8
    width: float = 2.0


@dataclass(frozen=True)
class SdvState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    v: float = 0.0
    a: float = 0.0
    kappa: float = 0.0
    kappa_dot: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("reverse driving is not modelled (v < 0)")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v, self.a, self.kappa, self.kappa_dot])

    @classmethod
    def from_array(cls, arr) -> "SdvState":
        return cls(*(float(v) for v in arr[:STATE_DIM]))

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass
class Trajectory:
    states: np.ndarray
    profile: np.ndarray | None = None
    dt: float = STEP_S

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != STATE_DIM:
            raise ValueError("states must be (N, 7)")

    def __len__(self):
        return len(self.states)

    @property
    def xy(self) -> np.ndarray:
        return self.states[:, :2]

    def state(self, k: int) -> SdvState:
        return SdvState.from_array(self.states[k])

    @property
    def start(self) -> SdvState:
        return self.state(0)


@njit(cache=True, nogil=True)
def _sinc(x):
    if abs(x) > 1e-9:
        return math.sin(x) / x
    return 1.0 - x * x / 6.0


@njit(cache=True, nogil=True)
def _rollout_kernel(s0, prof, dt, substeps, out):
    N, T = prof.shape[0], prof.shape[1]
    h = dt / substeps
    for n in range(N):
        x = s0[n, X]
        y = s0[n, Y]
        th = s0[n, THETA]
        v = s0[n, V]
        kap = s0[n, KAPPA]
        out[n, 0] = s0[n]
        for k in range(T):
            a = prof[n, k, 0]
            kd = prof[n, k, 1]
            for _ in range(substeps):
                v_new = v + a * h
                if v_new < 0.0:
                    # stops inside the sub-step: travel the exact stopping distance
                    ds = v * v / (-2.0 * a)
                    v_new = 0.0
                else:
                    ds = 0.5 * (v + v_new) * h
                kap_new = kap + kd * h
                dth = 0.5 * (kap + kap_new) * ds
                chord = ds * _sinc(0.5 * dth)
                mid = th + 0.5 * dth
                x += chord * math.cos(mid)
                y += chord * math.sin(mid)
                th += dth
                v = v_new
                kap = kap_new
            out[n, k + 1, X] = x
            out[n, k + 1, Y] = y
            out[n, k + 1, THETA] = th
            out[n, k + 1, V] = v
            out[n, k + 1, A] = a
            out[n, k + 1, KAPPA] = kap
            out[n, k + 1, KAPPA_DOT] = kd


def rollout_batch(x0, profiles, dt: float = STEP_S, substeps: int = SUBSTEPS,
                  kappa_max: float | None = VehicleLimits.kappa_max) -> np.ndarray:
    """Integrate many control profiles from one or many start states.

    Curvature integrates the curvature rate, speed integrates acceleration
    (floored at zero), heading integrates speed times curvature and position
    follows the circular arc of each sub-step, which is exact whenever the
    curvature is constant over the sub-step.

    Args:
        x0: start state(s), shape (7,) or (N, 7).
        profiles: (N, T, 2) array of (a, kappa_dot).
        kappa_max: raise :class:`ProfileInfeasible` when exceeded; ``None``
            disables the check.

    Returns:
        (N, T + 1, 7) states.
    """
    prof = np.ascontiguousarray(profiles, dtype=float)
    if prof.ndim == 2:
        prof = prof[None]
    N, T, _ = prof.shape
    s0 = np.ascontiguousarray(np.broadcast_to(np.asarray(x0, dtype=float), (N, STATE_DIM)))
    out = np.empty((N, T + 1, STATE_DIM))
    _rollout_kernel(s0, prof, float(dt), int(substeps), out)
    if kappa_max is not None:
        bad = np.abs(out[:, 1:, KAPPA]) > kappa_max + 1e-9
        if bad.any():
            k = int(np.nonzero(bad.any(axis=0))[0][0])
            raise ProfileInfeasible(f"curvature exceeds {kappa_max} at step {k + 1}")
    return out


def bicycle_rollout(x0: SdvState, profile, dt: float = STEP_S, substeps: int = SUBSTEPS,
                    limits: VehicleLimits = VehicleLimits()) -> Trajectory:
    """Roll a single control profile out from ``x0``."""
    prof = np.asarray(profile, dtype=float)
    if not np.all(np.isfinite(prof)):
        raise ProfileInfeasible("profile contains non-finite values")
    states = rollout_batch(x0.as_array(), prof[None], dt, substeps, limits.kappa_max)[0]
    return Trajectory(states, prof.copy(), dt)


def clip_profiles(x0, profiles, limits: VehicleLimits = VehicleLimits(), dt: float = STEP_S) -> np.ndarray:
    """Clip profiles to the acceleration, curvature-rate and curvature limits.

    Curvature is linear within a step, so bounding it at step ends bounds
    it everywhere. Profiles that are already feasible come back unchanged.
    """
    prof = np.array(profiles, dtype=float, copy=True)
    if prof.ndim == 2:
        prof = prof[None]
    N, T, _ = prof.shape
    s0 = np.broadcast_to(np.asarray(x0, dtype=float), (N, STATE_DIM))
    prof[..., 0] = np.clip(prof[..., 0], -limits.a_max, limits.a_max)
    prof[..., 1] = np.clip(prof[..., 1], -limits.kappa_dot_max, limits.kappa_dot_max)
    kap = np.clip(s0[:, KAPPA], -limits.kappa_max, limits.kappa_max)
    for k in range(T):
        kd = prof[:, k, 1]
        hi = (limits.kappa_max - kap) / dt
        lo = (-limits.kappa_max - kap) / dt
        kd = np.minimum(np.maximum(kd, lo), hi)
        prof[:, k, 1] = kd
        kap = kap + kd * dt
    return prof


def profile_of(traj: Trajectory) -> np.ndarray:
    """Control profile that generated a trajectory (read off its states)."""
    if traj.profile is not None:
        return traj.profile
    return traj.states[1:, [A, KAPPA_DOT]].copy()


def local_frame_xy(states: np.ndarray) -> np.ndarray:
    """Positions (..., T + 1, 2) expressed in the frame of each trajectory's first state."""
    s = np.asarray(states)
    d = s[..., :, :2] - s[..., :1, :2]
    th = s[..., :1, THETA]
    c, sn = np.cos(th), np.sin(th)
    return np.stack([c * d[..., 0] + sn * d[..., 1], -sn * d[..., 0] + c * d[..., 1]], axis=-1)


# -- bank ------------------------------------------------------------------------

@dataclass
class TrajectoryBank:
    bins: dict[tuple[int, int, int], np.ndarray]
    bin_sizes: tuple[float, float, float] = BIN_SIZES
    dt: float = STEP_S
    steps: int = PLAN_STEPS
    max_prototypes: int | None = None

    def bin_of(self, state) -> tuple[int, int, int]:
        s = state.as_array() if isinstance(state, SdvState) else np.asarray(state)
        return bin_key(s, self.bin_sizes)

    def __len__(self):
        return sum(len(p) for p in self.bins.values())

    def save(self, path) -> None:
        keys = sorted(self.bins)
        counts = [len(self.bins[k]) for k in keys]
        profiles = (np.concatenate([self.bins[k] for k in keys]) if keys
                    else np.zeros((0, self.steps, 2)))
        with open(path, "wb") as fh:
            np.savez(fh, version=np.array(BANK_FORMAT_VERSION), bin_sizes=np.array(self.bin_sizes),
                     dt=np.array(self.dt), steps=np.array(self.steps),
                     max_prototypes=np.array(-1 if self.max_prototypes is None else self.max_prototypes),
                     keys=np.array(keys, dtype=np.int64).reshape(-1, 3),
                     offsets=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
                     profiles=profiles.astype(np.float64))

    @classmethod
    def load(cls, path) -> "TrajectoryBank":
        with np.load(Path(path), allow_pickle=False) as z:
            version = int(z["version"])
            if version != BANK_FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported bank version {version}")
            keys, off, prof = z["keys"], z["offsets"], z["profiles"]
            bins = {tuple(int(v) for v in keys[i]): prof[off[i]:off[i + 1]].copy()
                    for i in range(len(keys))}
            mp = int(z["max_prototypes"])
            return cls(bins, tuple(float(b) for b in z["bin_sizes"]), float(z["dt"]),
                       int(z["steps"]), None if mp < 0 else mp)


def bin_key(state: np.ndarray, bin_sizes=BIN_SIZES) -> tuple[int, int, int]:
    return (int(math.floor(state[V] / bin_sizes[0] + 1e-9)),
            int(math.floor(state[KAPPA] / bin_sizes[1] + 1e-9)),
            int(math.floor(state[A] / bin_sizes[2] + 1e-9)))


def build_bank(demos: Sequence[Trajectory], n_clusters: int, seed: int = 0,
               bin_sizes=BIN_SIZES, steps: int = PLAN_STEPS) -> TrajectoryBank:
    """Bucket demonstrations by initial (v, kappa, a) and keep cluster prototypes.

    Within a bucket, k-means runs on the time-indexed positions expressed in
    the first state's frame; for each cluster the member closest to its
    centroid contributes its control profile.
    """
    from sklearn.cluster import KMeans

    if not demos:
        raise ValueError("no demonstrations")
    groups: dict[tuple[int, int, int], list[int]] = {}
    for i, d in enumerate(demos):
        if len(d) < steps + 1:
            raise ValueError(f"demo {i} has {len(d)} states, need {steps + 1}")
        groups.setdefault(bin_key(d.states[0], bin_sizes), []).append(i)
    dt = demos[0].dt
    bins = {}
    for key in sorted(groups):
        idx = groups[key]
        states = np.stack([demos[i].states[: steps + 1] for i in idx])
        profs = np.stack([profile_of(demos[i])[:steps] for i in idx])
        feats = local_frame_xy(states).reshape(len(idx), -1)
        _, uniq = np.unique(feats, axis=0, return_index=True)
        uniq = np.sort(uniq)
        k = min(n_clusters, len(uniq))
        if k == len(uniq):
            bins[key] = profs[uniq]
            continue
        km = KMeans(n_clusters=k, n_init=3, random_state=seed).fit(feats[uniq])
        chosen = []
        for c in range(k):
            members = uniq[km.labels_ == c]
            d2 = np.sum((feats[members] - km.cluster_centers_[c]) ** 2, axis=1)
            chosen.append(members[int(np.argmin(d2))])
        bins[key] = profs[np.array(chosen)]
    return TrajectoryBank(bins, tuple(bin_sizes), dt, steps, n_clusters)


def fallback_profiles(limits: VehicleLimits = VehicleLimits(), steps: int = PLAN_STEPS) -> np.ndarray:
    """Constant-(a, kappa_dot) lattice used when a bin is empty."""
    accels = np.array([-3.0, -1.0, 0.0, 1.0])
    rates = np.linspace(-limits.kappa_dot_max, limits.kappa_dot_max, 7)
    aa, rr = np.meshgrid(accels, rates, indexing="ij")
    pairs = np.stack([aa.ravel(), rr.ravel()], axis=-1)
    return np.repeat(pairs[:, None, :], steps, axis=1)


def sample_profiles(bank: TrajectoryBank, x0: SdvState,
                    limits: VehicleLimits = VehicleLimits()) -> np.ndarray:
    """Feasible profiles retrieved for ``x0`` (fallback lattice for empty bins)."""
    prof = bank.bins.get(bank.bin_of(x0))
    if prof is None or len(prof) == 0:
        prof = fallback_profiles(limits, bank.steps)
    return clip_profiles(x0.as_array(), prof, limits, bank.dt)


def sample(bank: TrajectoryBank, x0: SdvState, limits: VehicleLimits = VehicleLimits()) -> list[Trajectory]:
    """Candidate trajectories: the bin's profiles re-rolled from ``x0``."""
    prof = sample_profiles(bank, x0, limits)
    states = rollout_batch(x0.as_array(), prof, bank.dt, kappa_max=limits.kappa_max)
    return [Trajectory(s, p, bank.dt) for s, p in zip(states, prof)]


# -- synthetic demonstrations ------------------------------------------------------

@dataclass(frozen=True)
class DemoFamilies:
    """Ranges for the synthetic demonstration generator.

    Speed profiles ramp the acceleration from ``a0`` to a target and back to
    zero (trapezoids); steering ramps curvature from ``kappa0`` to a target
    (clothoid entry) and, for a ``release_fraction`` of demos, back to zero.
    """
    v0: tuple[float, float] = (0.0, 14.0)
    v0_step: float = 0.5
    a0: tuple[float, float] = (0.0, 0.0)
    kappa0: tuple[float, float] = (0.0, 0.0)
    accel_target: tuple[float, float] = (0.0, 0.0)
    accel_ramp_s: tuple[float, float] = (1.0, 1.0)
    accel_hold_s: tuple[float, float] = (5.0, 5.0)
    kappa_target: tuple[float, float] = (0.0, 0.0)
    kappa_ramp_s: tuple[float, float] = (1.0, 1.0)
    kappa_hold_s: tuple[float, float] = (1.0, 3.0)
    straight_fraction: float = 0.0
    release_fraction: float = 0.0


def default_families() -> list[DemoFamilies]:
    return [
        # lane keeping, speed changes and stops
        DemoFamilies(v0=(0.0, 15.5), a0=(-4.5, 1.5), kappa0=(-0.16, 0.16),
                     accel_target=(-5.0, 2.0), accel_ramp_s=(0.5, 2.0), accel_hold_s=(1.0, 5.0),
                     kappa_target=(-0.04, 0.04), kappa_ramp_s=(0.5, 2.5), straight_fraction=0.5,
                     release_fraction=0.3),
        # turns, entering and leaving them
        DemoFamilies(v0=(0.0, 12.0), a0=(-3.5, 1.5), kappa0=(-0.16, 0.16),
                     accel_target=(-3.0, 1.5), accel_ramp_s=(0.5, 2.0), accel_hold_s=(1.0, 5.0),
                     kappa_target=(-0.16, 0.16), kappa_ramp_s=(0.5, 2.5), kappa_hold_s=(0.5, 3.5),
                     release_fraction=0.6),
    ]


def _uniform(rng, rng_range, n):
    lo, hi = rng_range
    return rng.uniform(lo, hi, n) if hi > lo else np.full(n, float(lo))


def _ramp(start, target, ramp, hold, t):
    """Piecewise-linear schedule: start -> target over ``ramp``, hold, then back to 0 over ``ramp``."""
    up = np.clip(t / ramp, 0.0, 1.0)
    val = start + (target - start) * up
    down = np.clip((t - ramp - hold) / ramp, 0.0, 1.0)
    return val * (1.0 - down)


def generate_synthetic_demos(families, count: int, seed: int = 0, steps: int = PLAN_STEPS,
                             dt: float = STEP_S, limits: VehicleLimits = VehicleLimits()
                             ) -> list[Trajectory]:
    """Kinematically feasible demonstrations drawn from parameterized families.

    ``families`` is one :class:`DemoFamilies` or a sequence of them; the
    count is split evenly. Deterministic for a given seed.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    fams = [families] if isinstance(families, DemoFamilies) else list(families)
    rng = np.random.default_rng(seed)
    shares = [count // len(fams) + (1 if i < count % len(fams) else 0) for i in range(len(fams))]
    out = []
    t_end = (np.arange(steps) + 1) * dt
    for fam, n in zip(fams, shares):
        if n == 0:
            continue
        grid = np.arange(fam.v0[0], fam.v0[1] + 1e-9, fam.v0_step) if fam.v0[1] > fam.v0[0] \
            else np.array([fam.v0[0]])
        v0 = rng.choice(grid, n)
        a0 = _uniform(rng, fam.a0, n)
        a0 = np.where(v0 <= 0, np.maximum(a0, 0.0), a0)
        k0 = _uniform(rng, fam.kappa0, n)
        at = _uniform(rng, fam.accel_target, n)
        ar = _uniform(rng, fam.accel_ramp_s, n)
        ah = _uniform(rng, fam.accel_hold_s, n)
        kt = _uniform(rng, fam.kappa_target, n)
        kr = _uniform(rng, fam.kappa_ramp_s, n)
        kh = _uniform(rng, fam.kappa_hold_s, n)
        kt = np.where(rng.random(n) < fam.straight_fraction, 0.0, kt)
        release = rng.random(n) < fam.release_fraction
        accel = _ramp(a0[:, None], at[:, None], ar[:, None], ah[:, None], t_end[None, :])
        kap = np.where(release[:, None],
                       _ramp(k0[:, None], kt[:, None], kr[:, None], kh[:, None], t_end[None, :]),
                       _ramp(k0[:, None], kt[:, None], kr[:, None], np.inf, t_end[None, :]))
        kdot = np.diff(np.concatenate([k0[:, None], kap], axis=1), axis=1) / dt
        x0 = np.zeros((n, STATE_DIM))
        x0[:, V] = v0
        x0[:, A] = a0
        x0[:, KAPPA] = np.clip(k0, -limits.kappa_max, limits.kappa_max)
        prof = clip_profiles(x0, np.stack([accel, kdot], axis=-1), limits, dt)
        states = rollout_batch(x0, prof, dt, kappa_max=limits.kappa_max)
        out.extend(Trajectory(s, p, dt) for s, p in zip(states, prof))
    return out


DEFAULT_DEMOS = 40000
DEFAULT_CLUSTERS = 40


@functools.lru_cache(maxsize=1)
def default_bank() -> TrajectoryBank:
    """Bank built from the default synthetic families (seed 0), memoized per process.

    Building takes a few seconds; it is deterministic, so it is rebuilt
    rather than shipped as a binary.
    """
    demos = generate_synthetic_demos(default_families(), DEFAULT_DEMOS, seed=0)
    return build_bank(demos, DEFAULT_CLUSTERS, seed=0)
