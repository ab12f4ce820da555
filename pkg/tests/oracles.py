"""Brute-force reference implementations used only by tests."""
import math

import numpy as np


def dense_flow(occ: np.ndarray, probs: np.ndarray, vel: np.ndarray, dt: float, res: float) -> np.ndarray:
    """Occupancy one step later from an explicit flow-event matrix.

    ``F[i, j] = p_j * sum_k pi_k(j) * w_k(j -> i)`` with ``w`` the bilinear
    share of mode ``k``'s displacement head landing on cell ``i``; the
    result is ``1 - prod_j (1 - F[i, j])``.
    """
    R, C = occ.shape
    K = probs.shape[0]
    src = [(r, c) for r in range(R) for c in range(C) if occ[r, c] != 0.0]
    F = np.zeros((R * C, len(src)))
    for j, (r, c) in enumerate(src):
        for k in range(K):
            x = c + vel[k, r, c, 0] * dt / res
            y = r + vel[k, r, c, 1] * dt / res
            x0, y0 = math.floor(x), math.floor(y)
            for tc, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
                for tr, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
                    if 0 <= tr < R and 0 <= tc < C:
                        F[tr * C + tc, j] += probs[k, r, c] / probs[:, r, c].sum() * wx * wy
        F[:, j] *= occ[r, c]
    return (1.0 - np.prod(1.0 - F, axis=1)).reshape(R, C)


def dense_transport(occ: np.ndarray, probs: np.ndarray, vel: np.ndarray, dt: float, res: float
                    ) -> np.ndarray:
    """Linear (sum) transport of mass; equals the flow rule when no target gets two events."""
    R, C = occ.shape
    out = np.zeros((R, C))
    for r in range(R):
        for c in range(C):
            for k in range(probs.shape[0]):
                x = c + vel[k, r, c, 0] * dt / res
                y = r + vel[k, r, c, 1] * dt / res
                x0, y0 = math.floor(x), math.floor(y)
                for tc, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
                    for tr, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
                        if 0 <= tr < R and 0 <= tc < C:
                            out[tr, tc] += occ[r, c] * probs[k, r, c] * wx * wy
    return out


def arc_position(x0, y0, th0, v, kappa, t):
    """Closed-form position on a constant-speed, constant-curvature path."""
    if kappa == 0.0:
        return x0 + v * t * math.cos(th0), y0 + v * t * math.sin(th0)
    th = th0 + v * kappa * t
    return (x0 + (math.sin(th) - math.sin(th0)) / kappa,
            y0 - (math.cos(th) - math.cos(th0)) / kappa)
