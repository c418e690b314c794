"""Per-pixel surface geometry: decoded normals, clipped depth gradients, and
the 2x2 surface metric that the UV solvers try to reproduce.

All fields are dense (height, width) numpy arrays with a boolean validity
mask; invalid pixels carry NaN payloads and are never read downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TAU = 10.0


class GeometryError(ValueError):
    pass


@dataclass
class NormalField:
    """Unit surface normals per pixel. valid = foreground AND decodable AND camera-facing."""

    normals: np.ndarray  # (H, W, 3) float64, unit length where valid
    valid: np.ndarray    # (H, W) bool

    @property
    def height(self):
        return self.normals.shape[0]

    @property
    def width(self):
        return self.normals.shape[1]

    def restrict(self, mask: np.ndarray) -> "NormalField":
        """Intersect validity with a foreground mask (e.g. a segmentation)."""
        if mask.shape != self.valid.shape:
            raise GeometryError(
                f"mask shape {mask.shape} does not match normals {self.valid.shape}")
        return NormalField(self.normals, self.valid & mask.astype(bool))


@dataclass
class GradientField:
    """Clipped depth slopes (p, q) = clamp(dz/dx, dz/dy) per pixel."""

    grads: np.ndarray  # (H, W, 2) float64
    valid: np.ndarray  # (H, W) bool
    tau: float

    @property
    def height(self):
        return self.grads.shape[0]

    @property
    def width(self):
        return self.grads.shape[1]


@dataclass
class MetricField:
    """First fundamental form components g11, g12, g22 per pixel (SPD where valid)."""

    g11: np.ndarray  # (H, W) float64
    g12: np.ndarray
    g22: np.ndarray
    valid: np.ndarray  # (H, W) bool

    @property
    def height(self):
        return self.g11.shape[0]

    @property
    def width(self):
        return self.g11.shape[1]

    def as_matrices(self) -> np.ndarray:
        """Stack into (H, W, 2, 2)."""
        g = np.empty(self.g11.shape + (2, 2), dtype=np.float64)
        g[..., 0, 0] = self.g11
        g[..., 0, 1] = g[..., 1, 0] = self.g12
        g[..., 1, 1] = self.g22
        return g


def make_normal_field(normals: np.ndarray, valid: np.ndarray | None = None) -> NormalField:
    """Normalize raw per-pixel normals and mark validity.

    Pixels are invalid when the raw vector is unnormalizable (magnitude < 0.1)
    or points away from the camera (n3 <= 0). Valid normals are renormalized
    to unit length.
    """
    normals = np.asarray(normals, dtype=np.float64)
    if normals.ndim != 3 or normals.shape[2] != 3:
        raise GeometryError(f"expected (H, W, 3) normals, got {normals.shape}")
    mag = np.linalg.norm(normals, axis=2)
    ok = (mag >= 0.1) & (normals[..., 2] > 0.0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    out = np.full_like(normals, np.nan)
    with np.errstate(invalid="ignore"):
        out[ok] = normals[ok] / mag[ok, None]
    return NormalField(out, ok)


def depth_gradients(normals: NormalField, tau: float = DEFAULT_TAU) -> GradientField:
    """Depth slopes from normals under orthographic projection, clamped to [-tau, tau].

    p = -n1/n3, q = -n2/n3. Clamping bounds the metric condition number near
    grazing angles where the slopes would diverge.
    """
    if tau <= 0:
        raise GeometryError(f"tau must be positive, got {tau}")
    if not normals.valid.any():
        raise GeometryError("no valid foreground normals")
    n = normals.normals
    grads = np.full(n.shape[:2] + (2,), np.nan)
    v = normals.valid
    with np.errstate(invalid="ignore", divide="ignore"):
        grads[v, 0] = np.clip(-n[v, 0] / n[v, 2], -tau, tau)
        grads[v, 1] = np.clip(-n[v, 1] / n[v, 2], -tau, tau)
    return GradientField(grads, v.copy(), float(tau))


def metric_from_gradients(grads: GradientField) -> MetricField:
    """First fundamental form of the graph surface z(x, y):

        G = [[1 + p^2, p q], [p q, 1 + q^2]]
    """
    p = grads.grads[..., 0]
    q = grads.grads[..., 1]
    g11 = 1.0 + p * p
    g12 = p * q
    g22 = 1.0 + q * q
    bad = ~grads.valid
    for comp in (g11, g12, g22):
        comp[bad] = np.nan
    return MetricField(g11, g12, g22, grads.valid.copy())


def metric_for_cylinder(radius: float, x: float) -> np.ndarray:
    """Analytic surface metric of a vertical cylinder of the given radius at
    horizontal offset x from the apex: [[r^2/(r^2-x^2), 0], [0, 1]].
    """
    if abs(x) >= radius:
        raise GeometryError(f"|x|={abs(x)} outside cylinder of radius {radius}")
    g11 = radius * radius / (radius * radius - x * x)
    return np.array([[g11, 0.0], [0.0, 1.0]])
