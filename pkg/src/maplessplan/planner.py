"""Argmin selection over sampled candidate trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import BreakdownTable, CostBreakdown, CostConfig, CostWeights, Scene, evaluate_batch
from .trajectory import (SdvState, Trajectory, TrajectoryBank, VehicleLimits, rollout_batch,
                         sample_profiles)


class NoCandidates(RuntimeError):
    pass


@dataclass
class PlanResult:
    best: Trajectory
    best_cost: float
    best_index: int
    totals: np.ndarray
    breakdowns: BreakdownTable
    candidates: np.ndarray  # (N, T + 1, 7)
    profiles: np.ndarray    # (N, T, 2)

    @property
    def candidate_count(self) -> int:
        return len(self.totals)

    @property
    def best_breakdown(self) -> CostBreakdown:
        return self.breakdowns.row(self.best_index)


def select(totals: np.ndarray) -> int:
    """Index of the smallest total; the lowest index wins ties."""
    totals = np.asarray(totals)
    if totals.size == 0:
        raise NoCandidates("empty candidate set")
    return int(np.argmin(totals))


def plan_candidates(profiles: np.ndarray, x0: SdvState, scene: Scene, weights: CostWeights,
                    config: CostConfig = CostConfig(), dt: float = 0.5,
                    limits: VehicleLimits = VehicleLimits()) -> PlanResult:
    """Roll out ``profiles`` from ``x0``, score them and keep the cheapest."""
    profiles = np.asarray(profiles, dtype=float)
    if profiles.ndim != 3 or len(profiles) == 0:
        raise NoCandidates("need a non-empty (N, T, 2) profile array")
    states = rollout_batch(x0.as_array(), profiles, dt, kappa_max=limits.kappa_max)
    totals, table = evaluate_batch(states, scene, weights, config, dt)
    i = select(totals)
    return PlanResult(Trajectory(states[i], profiles[i].copy(), dt), float(totals[i]), i, totals,
                      table, states, profiles)


def plan(x0: SdvState, scene: Scene, bank: TrajectoryBank, weights: CostWeights,
         config: CostConfig = CostConfig(), limits: VehicleLimits = VehicleLimits()) -> PlanResult:
    """Pick the minimum-cost trajectory among the bank's candidates for ``x0``."""
    profiles = sample_profiles(bank, x0, limits)
    assert len(profiles) > 0, "fallback lattice is never empty"
    return plan_candidates(profiles, x0, scene, weights, config, bank.dt, limits)
