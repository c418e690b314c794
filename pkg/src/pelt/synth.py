"""Synthetic developable-surface scenes with analytic normals and ground-truth
UV, so the solver and unwrapper can be verified without field data.

Only developable surfaces (cylinder, sine sheet) are generated: they admit an
exact isometric flattening, so the ground-truth unwrap has zero residual and
solver error is measurable in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import DEFAULT_TAU, NormalField
from .uvfield import UVField

SUPERSAMPLE = 2  # 2x2 subsamples per pixel when rendering patterns

DARK = 0.15
LIGHT = 0.85


class SynthError(ValueError):
    pass


@dataclass
class PatternSpec:
    """Canonical-space texture: what the surface would look like laid flat."""

    kind: str  # 'checkerboard' | 'dot_grid' | 'random_dots'
    cell: float = 8.0        # checkerboard cell edge, canonical px
    pitch: float = 8.0       # dot lattice spacing, canonical px
    dot_radius: float = 2.5
    seed: int = 0            # random_dots: identity-defining constellation
    density: float = 0.55    # random_dots: fraction of lattice sites occupied
    jitter: float = 1 / 3    # random_dots: position jitter as a pitch fraction


@dataclass
class SurfaceSpec:
    kind: str  # 'flat' | 'cylinder' | 'sine'
    width: int = 64
    height: int = 64
    pattern: PatternSpec | None = None
    radius: float = 0.0        # cylinder, px
    band_fraction: float = 0.8  # cylinder: kept fraction of the visible limb
    amplitude: float = 0.0     # sine sheet, px
    wavelength: float = 32.0   # sine sheet, px
    phase: float = 0.0         # sine sheet, radians
    axis: str = "x"            # image axis the surface bends along
    u_offset: float = 0.0      # canonical px: surface slid along its u axis
    v_offset: float = 0.0
    identity_id: str = ""
    pose_seed: int = 0

    def validate(self):
        if self.kind not in ("flat", "cylinder", "sine"):
            raise SynthError(f"unknown surface kind {self.kind!r}")
        if self.axis not in ("x", "y"):
            raise SynthError(f"bend axis must be 'x' or 'y', got {self.axis!r}")
        if self.width < 4 or self.height < 4:
            raise SynthError(f"image size {self.width}x{self.height} too small")
        if self.kind == "cylinder":
            if self.radius <= 0.5 * (self.width / 2.0):
                raise SynthError(
                    f"cylinder radius {self.radius} must exceed half of the "
                    f"image half-width ({0.5 * self.width / 2.0})")
            if not 0.0 < self.band_fraction < 1.0:
                raise SynthError(f"band_fraction {self.band_fraction} not in (0, 1)")
        if self.kind == "sine":
            slope = abs(self.amplitude) * 2.0 * math.pi / self.wavelength
            if slope >= DEFAULT_TAU:
                raise SynthError(
                    f"sine sheet max slope {slope:.2f} must stay below tau={DEFAULT_TAU}")


@dataclass
class SyntheticScene:
    image: np.ndarray      # (H, W, 3) uint8
    normals: NormalField
    mask: np.ndarray       # (H, W) bool
    gt_uv: UVField
    spec: SurfaceSpec


# ---------------------------------------------------------------------------
# Patterns

# random_dots jitter/occupancy tables cover lattice indices [-_LATTICE_N, _LATTICE_N]
_LATTICE_N = 96


class _RandomDots:
    # dots get a ~1.5 px linear edge ramp: band-limiting the identity texture
    # keeps reconstructions comparable across pose-dependent sampling density
    _EDGE = 1.5

    def __init__(self, spec: PatternSpec):
        rng = np.random.default_rng([spec.seed, 918273])
        n = 2 * _LATTICE_N + 1
        amp = spec.jitter * spec.pitch
        self.present = rng.random((n, n)) < spec.density
        self.jitter = rng.uniform(-amp, amp, (n, n, 2))
        self.pitch = spec.pitch
        self.radius = spec.dot_radius

    def __call__(self, u, v):
        cov = np.zeros(u.shape)
        iu = np.floor(u / self.pitch).astype(np.int64)
        iv = np.floor(v / self.pitch).astype(np.int64)
        for du in (-1, 0, 1):
            for dv in (-1, 0, 1):
                ku = np.clip(iu + du + _LATTICE_N, 0, 2 * _LATTICE_N)
                kv = np.clip(iv + dv + _LATTICE_N, 0, 2 * _LATTICE_N)
                cu = (ku - _LATTICE_N) * self.pitch + self.jitter[kv, ku, 0]
                cv = (kv - _LATTICE_N) * self.pitch + self.jitter[kv, ku, 1]
                d = np.sqrt((u - cu) ** 2 + (v - cv) ** 2)
                ramp = np.clip((self.radius + 0.5 * self._EDGE - d) / self._EDGE,
                               0.0, 1.0)
                cov = np.maximum(cov, np.where(self.present[kv, ku], ramp, 0.0))
        return LIGHT + (DARK - LIGHT) * cov


def make_pattern(spec: PatternSpec):
    """Return a vectorized canonical-space intensity function f(u, v) -> [0, 1]."""
    if spec.kind == "checkerboard":
        cell = spec.cell

        def checker(u, v):
            par = (np.floor(u / cell) + np.floor(v / cell)) % 2
            return np.where(par > 0.5, LIGHT, DARK)

        return checker
    if spec.kind == "dot_grid":
        pitch, radius = spec.pitch, spec.dot_radius

        def dots(u, v):
            du = u - np.round(u / pitch) * pitch
            dv = v - np.round(v / pitch) * pitch
            return np.where(du * du + dv * dv <= radius * radius, DARK, LIGHT)

        return dots
    if spec.kind == "random_dots":
        return _RandomDots(spec)
    raise SynthError(f"unknown pattern kind {spec.kind!r}")


def render_pattern_image(pattern, u, v) -> np.ndarray:
    """Supersampled grayscale render of a pattern at per-pixel canonical coords.

    u, v can be 1-D (separable per-axis coords) or full (H, W) grids.
    """
    if u.ndim == 1:
        u, v = np.meshgrid(u, v)
    acc = np.zeros(u.shape)
    offs = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    for oy in offs:
        for ox in offs:
            acc += pattern(u + ox, v + oy)
    return acc / (SUPERSAMPLE * SUPERSAMPLE)


def _to_rgb(gray: np.ndarray) -> np.ndarray:
    g8 = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
    return np.repeat(g8[..., None], 3, axis=2)


# ---------------------------------------------------------------------------
# Surfaces

def _sine_arclength(spec: SurfaceSpec, offsets: np.ndarray) -> np.ndarray:
    """Arclength along z = a sin(2 pi x / lam + phase) from the image center,
    accumulated at 1/8 px substeps and linearly interpolated."""
    omega = 2.0 * math.pi / spec.wavelength
    lim = float(np.max(np.abs(offsets))) + 1.0
    step = 0.125
    grid = np.arange(-lim, lim + step, step)
    slope = spec.amplitude * omega * np.cos(omega * grid + spec.phase)
    ds = np.sqrt(1.0 + slope * slope)
    # trapezoid accumulation, anchored so that u(0) = 0
    cum = np.concatenate([[0.0], np.cumsum((ds[1:] + ds[:-1]) * 0.5 * step)])
    u0 = np.interp(0.0, grid, cum)
    return np.interp(offsets, grid, cum - u0)


def generate_scene(spec: SurfaceSpec) -> SyntheticScene:
    """Render a pattern wrapped onto the surface, with matching analytic
    normals, foreground mask, and ground-truth UV.

    The texture is sampled at (gt_u, gt_v), so unwrapping by the ground truth
    recovers the undistorted canonical pattern. Surfaces bending along y are
    generated as transposed x-bent scenes of the swapped-axes pattern.
    """
    spec.validate()
    if spec.axis == "y":
        return _transpose_scene(spec)
    return _generate_x_scene(spec)


def _generate_x_scene(spec: SurfaceSpec, pattern_fn=None) -> SyntheticScene:
    if spec.pattern is None:
        spec = replace(spec, pattern=PatternSpec("checkerboard"))
    w, h = spec.width, spec.height
    cx = (w - 1) / 2.0
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    off = xs - cx

    if spec.kind == "flat":
        mask_cols = np.ones(w, dtype=bool)
        u_of = lambda o: o + cx  # gt uv = identity map
        nx = np.zeros(w)
        nz = np.ones(w)
    elif spec.kind == "cylinder":
        r = spec.radius
        half_band = min(spec.band_fraction * r, 0.48 * w)
        mask_cols = np.abs(off) <= half_band
        u_of = lambda o: r * np.arcsin(np.clip(o / r, -1.0, 1.0))
        with np.errstate(invalid="ignore"):
            nz = np.sqrt(np.maximum(1.0 - (off / r) ** 2, 0.0))
        nx = off / r
    else:  # sine sheet
        omega = 2.0 * math.pi / spec.wavelength
        mask_cols = np.ones(w, dtype=bool)
        u_of = lambda o: _sine_arclength(spec, o)
        slope = spec.amplitude * omega * np.cos(omega * off + spec.phase)
        norm = np.sqrt(1.0 + slope * slope)
        nx = -slope / norm
        nz = 1.0 / norm

    mask = np.tile(mask_cols, (h, 1))

    normals = np.full((h, w, 3), np.nan)
    normals[:, :, 0] = nx
    normals[:, :, 1] = 0.0
    normals[:, :, 2] = nz
    nf = NormalField(np.where(mask[..., None], normals, np.nan),
                     mask & (normals[..., 2] > 0))

    u_cols = u_of(off) + spec.u_offset
    uv = np.full((h, w, 2), np.nan)
    uv[:, :, 0] = u_cols[None, :]
    uv[:, :, 1] = ys[:, None] + spec.v_offset
    uv[~mask] = np.nan
    gt_uv = UVField(uv, mask & nf.valid)

    pattern = pattern_fn or make_pattern(spec.pattern)
    # supersample in source space, mapping each subsample through u(x)
    acc = np.zeros((h, w))
    offs = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    for oy in offs:
        vline = ys + oy + spec.v_offset
        for ox in offs:
            uline = u_of(off + ox) + spec.u_offset
            acc += pattern(*np.meshgrid(uline, vline))
    gray = acc / (SUPERSAMPLE * SUPERSAMPLE)
    img = _to_rgb(np.where(mask, gray, 0.0))

    return SyntheticScene(image=img, normals=nf, mask=mask, gt_uv=gt_uv, spec=spec)


class _SwappedPattern:
    """View of a pattern with its canonical axes exchanged."""

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, u, v):
        return self.inner(v, u)


def _transpose_scene(spec: SurfaceSpec) -> SyntheticScene:
    pattern = spec.pattern or PatternSpec("checkerboard")
    spec = replace(spec, pattern=pattern)
    base = replace(spec, axis="x",
                   width=spec.height, height=spec.width,
                   u_offset=spec.v_offset, v_offset=spec.u_offset)
    sideways = _generate_x_scene(base, pattern_fn=_SwappedPattern(make_pattern(pattern)))
    normals = np.full((spec.height, spec.width, 3), np.nan)
    n_t = sideways.normals.normals
    normals[..., 0] = n_t[..., 1].T
    normals[..., 1] = n_t[..., 0].T
    normals[..., 2] = n_t[..., 2].T
    mask = sideways.mask.T.copy()
    uv = np.full((spec.height, spec.width, 2), np.nan)
    uv[..., 0] = sideways.gt_uv.uv[..., 1].T
    uv[..., 1] = sideways.gt_uv.uv[..., 0].T
    image = np.ascontiguousarray(sideways.image.transpose(1, 0, 2))
    nf = NormalField(np.where(mask[..., None], normals, np.nan),
                     mask & (normals[..., 2] > 0))
    gt = UVField(uv, mask & nf.valid)
    return SyntheticScene(image=image, normals=nf, mask=mask, gt_uv=gt, spec=spec)


# ---------------------------------------------------------------------------
# Re-identification sets

_DEFORM_LEVELS = {
    # amplitude range, wavelength range; foreshortening bottoms out around
    # 0.6 for moderate and 0.35 for strong
    "moderate": ((2.5, 3.5), (18.0, 24.0)),
    "strong": ((4.5, 6.0), (14.0, 18.0)),
}


def _pose_surface(base: SurfaceSpec, pose: int, rng: np.random.Generator,
                  deform: str = "strong") -> dict:
    """Draw one pose's deformation. Sine folds foreshorten large swaths of
    the surface (the skin-stretching regime), and the bend axis flips between
    shots the way an animal's torso does: two poses of one individual then
    share no undistorted image axis, while the full area stays visible so the
    count-sensitive AUC similarity compares like with like."""
    try:
        amp, lam = _DEFORM_LEVELS[deform]
    except KeyError:
        raise SynthError(f"unknown deformation level {deform!r}") from None
    hw = base.width / 2.0
    return {"kind": "sine",
            "axis": "x" if pose % 2 == 0 else "y",
            "amplitude": float(rng.uniform(*amp)),
            "wavelength": float(rng.uniform(*lam)),
            "phase": float(rng.uniform(0.0, 2.0 * math.pi)),
            "u_offset": float(rng.uniform(-0.25, 0.25) * hw),
            "v_offset": float(rng.uniform(-0.25, 0.25) * hw)}


def generate_reid_set(individuals: int, poses_per_individual: int,
                      base_spec: SurfaceSpec, seed: int = 0,
                      deform: str = "strong"
                      ) -> list[tuple[str, SyntheticScene]]:
    """(scene id, scene) pairs for a synthetic re-identification set.

    Each individual gets a distinct seeded random-dot canonical pattern; each
    pose re-renders that same pattern under a different surface deformation
    of the requested severity ('moderate' or 'strong').
    """
    if individuals < 2 or poses_per_individual < 2:
        raise SynthError("need at least 2 individuals and 2 poses each")
    scenes = []
    for i in range(individuals):
        identity = f"ind{i:03d}"
        proto = base_spec.pattern or PatternSpec("random_dots")
        pattern = PatternSpec(
            "random_dots", pitch=proto.pitch, dot_radius=proto.dot_radius,
            density=proto.density, jitter=proto.jitter,
            seed=int(np.random.default_rng([seed, i, 555]).integers(2 ** 31)))
        for p in range(poses_per_individual):
            rng = np.random.default_rng([seed, i, p])
            params = _pose_surface(base_spec, p, rng, deform)
            spec = replace(base_spec, pattern=pattern, identity_id=identity,
                           pose_seed=int(rng.integers(2 ** 31)), **params)
            scenes.append((f"{identity}_pose{p}", generate_scene(spec)))
    return scenes
