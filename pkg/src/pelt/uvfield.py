"""The solved UV map and the measurements defined on it: the finite-difference
isometry residual and rigid (Procrustes) alignment between two maps.

A UV map is only determined up to a rigid motion (optionally a reflection),
so any comparison between maps aligns first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class UVError(ValueError):
    pass


@dataclass
class UVField:
    """Per-pixel (u, v) texture coordinates; NaN outside the valid mask."""

    uv: np.ndarray     # (H, W, 2) float64
    valid: np.ndarray  # (H, W) bool

    @property
    def height(self):
        return self.uv.shape[0]

    @property
    def width(self):
        return self.uv.shape[1]

    def translated(self, du: float, dv: float) -> "UVField":
        out = self.uv.copy()
        out[self.valid] += np.array([du, dv])
        return UVField(out, self.valid.copy())


@dataclass
class SolveReport:
    """Loss trace and final diagnostics of one UV solve."""

    method: str
    loss_trace: list = field(default_factory=list)
    final_residual: float = float("nan")
    epochs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"method": self.method, "epochs": self.epochs,
             "final_residual": self.final_residual,
             "loss_trace": list(map(float, self.loss_trace))}, indent=2)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")


def normalize_origin(uv: UVField) -> UVField:
    """Translate so the valid-pixel UV bounding box has its min corner at (0, 0)."""
    if not uv.valid.any():
        return uv
    mins = np.nanmin(uv.uv[uv.valid], axis=0)
    return uv.translated(-mins[0], -mins[1])


def identity_uv(valid: np.ndarray) -> UVField:
    """UV field equal to the pixel grid itself (u=x, v=y) on the given mask."""
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    uv = np.stack([xx, yy], axis=-1)
    uv[~valid] = np.nan
    return UVField(uv, valid.copy())


def _masked_differences(channel: np.ndarray, valid: np.ndarray, axis: int):
    """Central differences where both neighbors are valid, one-sided at mask
    boundaries. Returns (derivative, defined) arrays."""
    h, w = channel.shape
    plus = np.full_like(channel, np.nan)
    minus = np.full_like(channel, np.nan)
    has_plus = np.zeros_like(valid)
    has_minus = np.zeros_like(valid)
    if axis == 1:  # x direction
        has_plus[:, :-1] = valid[:, :-1] & valid[:, 1:]
        has_minus[:, 1:] = valid[:, 1:] & valid[:, :-1]
        plus[:, :-1] = channel[:, 1:]
        minus[:, 1:] = channel[:, :-1]
    else:  # y direction
        has_plus[:-1, :] = valid[:-1, :] & valid[1:, :]
        has_minus[1:, :] = valid[1:, :] & valid[:-1, :]
        plus[:-1, :] = channel[1:, :]
        minus[1:, :] = channel[:-1, :]
    deriv = np.full_like(channel, np.nan)
    both = has_plus & has_minus
    fwd = has_plus & ~has_minus
    bwd = has_minus & ~has_plus
    deriv[both] = (plus[both] - minus[both]) / 2.0
    deriv[fwd] = plus[fwd] - channel[fwd]
    deriv[bwd] = channel[bwd] - minus[bwd]
    return deriv, both | fwd | bwd


def uv_jacobians(uv: UVField):
    """Per-pixel finite-difference Jacobians of the UV map.

    Returns (J, defined) where J is (H, W, 2, 2) with J[...,o,i] = d uv_o / d x_i
    and defined marks pixels differentiable in both directions.
    """
    valid = uv.valid
    J = np.full(valid.shape + (2, 2), np.nan)
    defined = valid.copy()
    for o in range(2):
        chan = uv.uv[..., o]
        dx, okx = _masked_differences(chan, valid, axis=1)
        dy, oky = _masked_differences(chan, valid, axis=0)
        J[..., o, 0] = dx
        J[..., o, 1] = dy
        defined &= okx & oky
    return J, defined


def isometry_residual(uv: UVField, metric) -> float:
    """Mean squared Frobenius mismatch between J^T J and the surface metric,
    over pixels where the finite-difference Jacobian is defined."""
    if uv.valid.shape != metric.valid.shape:
        raise UVError(
            f"uv {uv.valid.shape} and metric {metric.valid.shape} dimensions differ")
    J, defined = uv_jacobians(uv)
    defined = defined & metric.valid
    if not defined.any():
        raise UVError("no differentiable pixels")
    Jd = J[defined]
    JtJ = np.einsum("noi,noj->nij", Jd, Jd)
    G = metric.as_matrices()[defined]
    r = JtJ - G
    return float(np.mean(np.sum(r * r, axis=(1, 2))))


def procrustes_align(candidate: UVField, reference: UVField,
                     allow_reflection: bool = True):
    """Closed-form rigid registration of candidate onto reference.

    Finds the orthogonal Q (rotation, optionally with reflection) and
    translation t minimizing sum ||Q c + t - r||^2 over valid pixels.
    Returns (aligned UVField, (Q, t), rmse).
    """
    if not np.array_equal(candidate.valid, reference.valid):
        raise UVError("candidate and reference validity masks differ")
    n = int(candidate.valid.sum())
    if n < 3:
        raise UVError(f"need >= 3 valid pixels to align, got {n}")
    c = candidate.uv[candidate.valid]
    r = reference.uv[reference.valid]
    cm = c.mean(axis=0)
    rm = r.mean(axis=0)
    cc = c - cm
    rc = r - rm
    H = cc.T @ rc
    U, S, Vt = np.linalg.svd(H)
    scale = max(np.linalg.norm(cc), np.linalg.norm(rc))
    if S[1] <= 1e-12 * max(S[0], scale * scale, 1.0):
        raise UVError("degenerate (collinear) point sets cannot be aligned")
    Q = Vt.T @ U.T
    if not allow_reflection and np.linalg.det(Q) < 0:
        D = np.diag([1.0, -1.0])
        Q = Vt.T @ D @ U.T
    t = rm - Q @ cm
    aligned_pts = cc @ Q.T + rm
    rmse = float(np.sqrt(np.mean(np.sum((aligned_pts - r) ** 2, axis=1))))
    out = np.full_like(candidate.uv, np.nan)
    out[candidate.valid] = aligned_pts
    return UVField(out, candidate.valid.copy()), (Q, t), rmse
