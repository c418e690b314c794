"""Rasterize the canonical texture: gather (uv, color) samples from the source
image, Delaunay-triangulate the UV points, and fill the output raster by
barycentric color interpolation.

Triangulation goes through Qhull (scipy.spatial.Delaunay), which handles
cocircular and otherwise degenerate inputs robustly; samples are canonically
sorted by (u, v) first and triangles are re-indexed and ordered afterwards,
so the mesh is a pure function of the sample *set* regardless of input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .uvfield import UVField

DEFAULT_MAX_EDGE_UV = 8.0
DEFAULT_MAX_SOURCE_EDGE_PX = 8.0

# barycentric slack for texels on shared edges; overlaps resolve first-wins
_INSIDE_TOL = 1e-9


class UnwrapError(ValueError):
    pass


@dataclass
class UVSampleSet:
    uv: np.ndarray      # (N, 2) float64
    colors: np.ndarray  # (N, 3) float64 in [0, 255]
    source: np.ndarray  # (N, 2) float64 pixel coords the sample came from

    def __len__(self):
        return len(self.uv)


@dataclass
class TriangleMesh:
    triangles: np.ndarray  # (T, 3) vertex indices into the sample set
    accepted: np.ndarray   # (T,) bool


@dataclass
class UnwrappedTexture:
    pixels: np.ndarray    # (H, W, 4) uint8 RGBA; alpha 0 where uncovered
    coverage: np.ndarray  # (H, W) bool
    uv_offset: np.ndarray  # texel (tx, ty) maps to uv = uv_offset + (tx, ty)/uv_scale
    uv_scale: float

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def texel_uv(self, tx, ty):
        return self.uv_offset + np.stack([tx, ty], axis=-1) / self.uv_scale


def build_samples(image: np.ndarray, uv: UVField, stride: int = 1) -> UVSampleSet:
    """One sample per valid pixel on the stride-subsampled grid."""
    if stride < 1:
        raise UnwrapError(f"stride must be >= 1, got {stride}")
    image = np.asarray(image)
    if image.shape[:2] != uv.valid.shape:
        raise UnwrapError(
            f"image {image.shape[:2]} and uv {uv.valid.shape} dimensions differ")
    sub = np.zeros_like(uv.valid)
    sub[::stride, ::stride] = True
    keep = uv.valid & sub
    n = int(keep.sum())
    if n < 3:
        raise UnwrapError(f"insufficient samples: {n} valid pixels, need >= 3")
    yy, xx = np.nonzero(keep)
    colors = image[yy, xx, :3].astype(np.float64)
    return UVSampleSet(uv=uv.uv[yy, xx].copy(), colors=colors,
                       source=np.stack([xx, yy], axis=1).astype(np.float64))


def delaunay(samples: UVSampleSet) -> TriangleMesh:
    """Delaunay triangulation of the sample UV points.

    Triangles are canonicalized (smallest vertex first, counter-clockwise)
    and sorted, so the result does not depend on sample order. Degenerate
    (near-zero-area) triangles are rejected up front.
    """
    n = len(samples)
    if n < 3:
        raise UnwrapError(f"need >= 3 samples to triangulate, got {n}")
    order = np.lexsort((samples.uv[:, 1], samples.uv[:, 0]))
    pts = samples.uv[order]
    try:
        tri = Delaunay(pts)
    except QhullError as e:
        raise UnwrapError(f"degenerate sample set (collinear points?): "
                          f"{str(e).splitlines()[0]}") from e
    simplices = order[tri.simplices]  # back to original sample indices

    a = samples.uv[simplices[:, 0]]
    b = samples.uv[simplices[:, 1]]
    c = samples.uv[simplices[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) \
        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = cross < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]

    roll = np.argmin(simplices, axis=1)
    for r in (1, 2):
        sel = roll == r
        simplices[sel] = np.roll(simplices[sel], -r, axis=1)
    simplices = simplices[np.lexsort(
        (simplices[:, 2], simplices[:, 1], simplices[:, 0]))]

    extent = float(pts.max(axis=0).max() - pts.min(axis=0).min()) or 1.0
    area2 = np.abs(
        (samples.uv[simplices[:, 1], 0] - samples.uv[simplices[:, 0], 0])
        * (samples.uv[simplices[:, 2], 1] - samples.uv[simplices[:, 0], 1])
        - (samples.uv[simplices[:, 1], 1] - samples.uv[simplices[:, 0], 1])
        * (samples.uv[simplices[:, 2], 0] - samples.uv[simplices[:, 0], 0]))
    accepted = area2 > 1e-12 * extent * extent
    if len(simplices) == 0:
        raise UnwrapError("triangulation produced no triangles")
    return TriangleMesh(triangles=simplices, accepted=accepted)


def filter_triangles(mesh: TriangleMesh, samples: UVSampleSet,
                     max_edge_uv: float = DEFAULT_MAX_EDGE_UV,
                     max_source_edge_px: float = DEFAULT_MAX_SOURCE_EDGE_PX
                     ) -> TriangleMesh:
    """Reject triangles bridging across occlusions or UV folds: any UV edge
    longer than max_edge_uv or any source-pixel edge longer than
    max_source_edge_px disqualifies the triangle."""
    tris = mesh.triangles
    keep = mesh.accepted.copy()
    for i, j in ((0, 1), (1, 2), (2, 0)):
        duv = samples.uv[tris[:, i]] - samples.uv[tris[:, j]]
        dsrc = samples.source[tris[:, i]] - samples.source[tris[:, j]]
        keep &= np.einsum("ni,ni->n", duv, duv) <= max_edge_uv ** 2
        keep &= np.einsum("ni,ni->n", dsrc, dsrc) <= max_source_edge_px ** 2
    return TriangleMesh(triangles=tris, accepted=keep)


def rasterize(mesh: TriangleMesh, samples: UVSampleSet,
              out_width: int, out_height: int) -> UnwrappedTexture:
    """Fill an (out_height, out_width) RGBA raster from the accepted triangles.

    The UV bounding box of accepted vertices maps into the raster with a
    single uniform scale (aspect preserved). Each covered texel gets the
    barycentric blend of its triangle's vertex colors; texels claimed by
    several triangles keep the first one in mesh order.
    """
    if out_width < 1 or out_height < 1:
        raise UnwrapError(f"bad output size {out_width}x{out_height}")
    tris = mesh.triangles[mesh.accepted]
    if len(tris) == 0:
        raise UnwrapError("no accepted triangles to rasterize")
    verts = np.unique(tris)
    uv_min = samples.uv[verts].min(axis=0)
    uv_max = samples.uv[verts].max(axis=0)
    ext = uv_max - uv_min
    scale = min(
        (out_width - 1) / ext[0] if ext[0] > 0 else np.inf,
        (out_height - 1) / ext[1] if ext[1] > 0 else np.inf)
    if not np.isfinite(scale):
        scale = 1.0

    pix = np.zeros((out_height, out_width, 4), dtype=np.uint8)
    covered = np.zeros((out_height, out_width), dtype=bool)
    acc = np.zeros((out_height, out_width, 3))

    tuv = (samples.uv[tris] - uv_min) * scale   # (T, 3, 2) in texel units
    tcol = samples.colors[tris]                 # (T, 3, 3)
    for t in range(len(tris)):
        (ax, ay), (bx, by), (cx, cy) = tuv[t]
        x0 = max(int(np.floor(min(ax, bx, cx))), 0)
        x1 = min(int(np.ceil(max(ax, bx, cx))), out_width - 1)
        y0 = max(int(np.floor(min(ay, by, cy))), 0)
        y1 = min(int(np.ceil(max(ay, by, cy))), out_height - 1)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        denom = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
        if denom == 0.0:
            continue
        w0 = ((by - cy) * (gx - cx) + (cx - bx) * (gy - cy)) / denom
        w1 = ((cy - ay) * (gx - cx) + (ax - cx) * (gy - cy)) / denom
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -_INSIDE_TOL) & (w1 >= -_INSIDE_TOL) & (w2 >= -_INSIDE_TOL)
        tgt = inside & ~covered[y0:y1 + 1, x0:x1 + 1]
        if not tgt.any():
            continue
        color = (w0[..., None] * tcol[t, 0] + w1[..., None] * tcol[t, 1]
                 + w2[..., None] * tcol[t, 2])
        block = acc[y0:y1 + 1, x0:x1 + 1]
        block[tgt] = color[tgt]
        covered[y0:y1 + 1, x0:x1 + 1] |= tgt

    pix[..., :3] = np.clip(np.rint(acc), 0, 255).astype(np.uint8)
    pix[..., 3] = np.where(covered, 255, 0)
    pix[~covered, :3] = 0
    return UnwrappedTexture(pixels=pix, coverage=covered,
                            uv_offset=uv_min.astype(np.float64),
                            uv_scale=float(scale))


def unwrap_image(image: np.ndarray, uv: UVField, stride: int = 1,
                 out_size: tuple[int, int] | None = None,
                 max_edge_uv: float = DEFAULT_MAX_EDGE_UV,
                 max_source_edge_px: float = DEFAULT_MAX_SOURCE_EDGE_PX
                 ) -> UnwrappedTexture:
    """Full unwrap pipeline for one image. When out_size is omitted, the
    raster gets one texel per UV unit (the UV extent, rounded up)."""
    samples = build_samples(image, uv, stride)
    mesh = filter_triangles(delaunay(samples), samples,
                            max_edge_uv, max_source_edge_px)
    if out_size is None:
        keep = mesh.triangles[mesh.accepted]
        if len(keep) == 0:
            raise UnwrapError("all triangles were filtered out")
        verts = np.unique(keep)
        ext = samples.uv[verts].max(axis=0) - samples.uv[verts].min(axis=0)
        out_size = (int(np.ceil(ext[0])) + 1, int(np.ceil(ext[1])) + 1)
    return rasterize(mesh, samples, out_size[0], out_size[1])
