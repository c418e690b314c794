"""Grid-based UV solver: per-pixel unknowns, damped Gauss-Newton steps.

This is the cross-check counterpart to the coordinate-network solver. The
objective is the same metric-matching residual, discretized per 2x2 cell of
valid pixels with cell-centered differences (second-order accurate, and the
checkerboard mode the stencil cannot see stays exactly zero because damping
never injects components outside the Jacobian's row space).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .uvfield import SolveReport, UVField, isometry_residual, normalize_origin

# d(cell u_x)/d(corner u) and d(cell u_y)/d(corner u), corners [tl, tr, bl, br]
_AX = np.array([-0.5, 0.5, -0.5, 0.5])
_AY = np.array([-0.5, -0.5, 0.5, 0.5])

_LAMBDA_MAX = 1e14


class GridSolveError(RuntimeError):
    pass


def _cells(valid: np.ndarray):
    """Corner flat-pixel indices (C, 4) of every fully valid 2x2 cell."""
    ok = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1] & valid[1:, 1:]
    yy, xx = np.nonzero(ok)
    w = valid.shape[1]
    tl = yy * w + xx
    return np.stack([tl, tl + 1, tl + w, tl + w + 1], axis=1)


def _residuals(z, uc, vc, g11, g12, g22):
    u = z[uc]
    v = z[vc]
    ux = u @ _AX
    uy = u @ _AY
    vx = v @ _AX
    vy = v @ _AY
    r = np.empty(3 * len(uc))
    r[0::3] = ux * ux + vx * vx - g11
    r[1::3] = uy * uy + vy * vy - g22
    r[2::3] = np.sqrt(2.0) * (ux * uy + vx * vy - g12)
    return r, (ux, uy, vx, vy)


def _jacobian(uc, vc, diffs, n_unknowns):
    ux, uy, vx, vy = diffs
    c = len(uc)
    rows = np.repeat(np.arange(3 * c).reshape(c, 3), 8, axis=1).ravel()
    cols = np.tile(np.concatenate([uc, vc], axis=1), (1, 3)).ravel()
    vals = np.concatenate([
        2.0 * ux[:, None] * _AX, 2.0 * vx[:, None] * _AX,
        2.0 * uy[:, None] * _AY, 2.0 * vy[:, None] * _AY,
        np.sqrt(2.0) * (uy[:, None] * _AX + ux[:, None] * _AY),
        np.sqrt(2.0) * (vy[:, None] * _AX + vx[:, None] * _AY),
    ], axis=1).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(3 * c, n_unknowns)).tocsr()


def solve_uv_grid(metric, iterations: int = 60, regularization: float = 1e-3
                  ) -> tuple[UVField, SolveReport]:
    """Minimize the per-cell metric mismatch by Levenberg-damped Gauss-Newton,
    starting from the identity map. Accepted-step objective values are
    non-increasing by construction.
    """
    if iterations < 1:
        raise GridSolveError(f"iterations must be >= 1, got {iterations}")
    valid = metric.valid
    if not valid.any():
        raise GridSolveError("no valid pixels")
    h, w = valid.shape
    corners = _cells(valid)
    if len(corners) == 0:
        raise GridSolveError("no 2x2 neighborhood of valid pixels to constrain")

    # unknown vector: [u at every pixel of the grid, then v]; invalid pixels
    # participate as frozen identity values only if referenced (they are not:
    # cells use valid corners exclusively), so solving over the full grid and
    # masking afterwards keeps the indexing trivial.
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    n = h * w
    z = np.concatenate([xx.ravel(), yy.ravel()])
    uc = corners
    vc = corners + n

    gmean = [comp.ravel()[corners].mean(axis=1) for comp in
             (metric.g11, metric.g12, metric.g22)]
    g11, g12, g22 = gmean

    # only unknowns touched by some cell may move; damping on untouched ones
    # keeps them fixed (their gradient is identically zero)
    ncells = len(corners)
    r, diffs = _residuals(z, uc, vc, g11, g12, g22)
    cost = float(r @ r)
    trace = [cost / ncells]
    lam = float(regularization)
    accepted = 0
    converged = False
    eye = sp.identity(2 * n, format="csc")

    while accepted < iterations and not converged:
        J = _jacobian(uc, vc, diffs, 2 * n)
        jtj = (J.T @ J).tocsc()
        jtr = J.T @ r
        if np.linalg.norm(jtr, np.inf) < 1e-12:
            break
        stepped = False
        while lam <= _LAMBDA_MAX:
            delta = spsolve(jtj + lam * eye, -jtr)
            if not np.all(np.isfinite(delta)):
                lam *= 10.0
                continue
            z_new = z + delta
            r_new, diffs_new = _residuals(z_new, uc, vc, g11, g12, g22)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                drop = cost - cost_new
                z, r, diffs, cost = z_new, r_new, diffs_new, cost_new
                trace.append(cost / ncells)
                lam = max(lam / 3.0, 1e-12)
                accepted += 1
                stepped = True
                converged = drop <= 1e-14 * max(cost, 1.0)
                break
            lam *= 10.0
        if not stepped:
            if not np.all(np.isfinite(r)):
                raise GridSolveError(
                    "singular normal equations: damping escalation exhausted")
            break  # no improving step exists: at a (local) optimum

    uv = np.stack([z[:n].reshape(h, w), z[n:].reshape(h, w)], axis=-1)
    uv[~valid] = np.nan
    out = normalize_origin(UVField(uv, valid.copy()))
    report = SolveReport(method="grid", loss_trace=trace,
                         epochs={"iterations": accepted})
    report.final_residual = isometry_residual(out, metric)
    return out, report
