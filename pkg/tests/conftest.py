"""Shared fixtures and the independent oracles the tests check against.

Everything here is deliberately written from the definitions (brute-force
enumeration, direct determinants, exhaustive recounts) rather than reusing
package internals, so a bug in the implementation cannot hide in its test.
"""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from pelt.geometry import depth_gradients, metric_from_gradients
from pelt.synth import PatternSpec, SurfaceSpec, generate_scene


# ---------------------------------------------------------------------------
# scenes

@pytest.fixture(scope="session")
def flat64():
    return generate_scene(SurfaceSpec("flat", 64, 64, PatternSpec("checkerboard")))


@pytest.fixture(scope="session")
def cylinder64():
    return generate_scene(SurfaceSpec(
        "cylinder", 64, 64, PatternSpec("checkerboard"), radius=0.6 * 64))


@pytest.fixture(scope="session")
def cylinder32():
    return generate_scene(SurfaceSpec(
        "cylinder", 32, 32, PatternSpec("checkerboard"), radius=0.6 * 32))


def metric_of(scene, tau=10.0):
    return metric_from_gradients(depth_gradients(scene.normals, tau))


# ---------------------------------------------------------------------------
# geometry oracles

def incircle_max_violation(points, triangles):
    """Worst signed in-circle determinant (normalized coordinates) over every
    (triangle, other point) pair; > 0 means a point lies strictly inside a
    circumcircle."""
    pts = np.asarray(points, dtype=np.float64)
    span = pts.max(axis=0) - pts.min(axis=0)
    scale = max(float(span.max()), 1e-30)
    pts = (pts - pts.min(axis=0)) / scale
    worst = -np.inf
    for tri in triangles:
        a, b, c = pts[tri[0]], pts[tri[1]], pts[tri[2]]
        if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) < 0:
            b, c = c, b
        others = np.delete(np.arange(len(pts)), list(tri))
        d = pts[others]
        m = np.empty((len(d), 3, 3))
        for col, v in enumerate((a, b, c)):
            m[:, col, 0] = v[0] - d[:, 0]
            m[:, col, 1] = v[1] - d[:, 1]
            m[:, col, 2] = m[:, col, 0] ** 2 + m[:, col, 1] ** 2
        det = np.linalg.det(m)
        worst = max(worst, float(det.max()) if len(det) else -np.inf)
    return worst


# ---------------------------------------------------------------------------
# image comparison helpers

def ssim(a, b, sigma=1.5):
    """Mean SSIM between two float images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_a = gaussian_filter(a, sigma)
    mu_b = gaussian_filter(b, sigma)
    va = gaussian_filter(a * a, sigma) - mu_a ** 2
    vb = gaussian_filter(b * b, sigma) - mu_b ** 2
    cov = gaussian_filter(a * b, sigma) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)
    return float(np.mean(num / den))


def ncc(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    return float(np.sum(a * b) / den) if den > 0 else 0.0


def sample_texture(tex, uu, vv):
    """Bilinear sample of an UnwrappedTexture at canonical UV coordinates.
    Returns (gray values, jointly covered mask)."""
    tx = (uu - tex.uv_offset[0]) * tex.uv_scale
    ty = (vv - tex.uv_offset[1]) * tex.uv_scale
    x0 = np.floor(tx).astype(int)
    y0 = np.floor(ty).astype(int)
    ok = (x0 >= 0) & (y0 >= 0) & (x0 < tex.width - 1) & (y0 < tex.height - 1)
    x0 = np.clip(x0, 0, tex.width - 2)
    y0 = np.clip(y0, 0, tex.height - 2)
    fx = tx - x0
    fy = ty - y0
    g = tex.pixels[..., 0].astype(np.float64)
    val = (g[y0, x0] * (1 - fx) * (1 - fy) + g[y0, x0 + 1] * fx * (1 - fy)
           + g[y0 + 1, x0] * (1 - fx) * fy + g[y0 + 1, x0 + 1] * fx * fy)
    cov = (tex.coverage[y0, x0] & tex.coverage[y0, x0 + 1]
           & tex.coverage[y0 + 1, x0] & tex.coverage[y0 + 1, x0 + 1])
    return val, ok & cov


def ncc_between_textures(ta, tb, step=0.5):
    """NCC of two unwrapped textures over the intersection of their canonical
    UV windows."""
    lo_u = max(ta.uv_offset[0], tb.uv_offset[0]) + 1
    hi_u = min(ta.uv_offset[0] + ta.width / ta.uv_scale,
               tb.uv_offset[0] + tb.width / tb.uv_scale) - 1
    lo_v = max(ta.uv_offset[1], tb.uv_offset[1]) + 1
    hi_v = min(ta.uv_offset[1] + ta.height / ta.uv_scale,
               tb.uv_offset[1] + tb.height / tb.uv_scale) - 1
    if hi_u - lo_u < 4 or hi_v - lo_v < 4:
        return 0.0
    uu, vv = np.meshgrid(np.arange(lo_u, hi_u, step), np.arange(lo_v, hi_v, step))
    va, oka = sample_texture(ta, uu, vv)
    vb, okb = sample_texture(tb, uu, vv)
    both = oka & okb
    return ncc(va[both], vb[both])


# ---------------------------------------------------------------------------
# checkerboard cell-width measurement (acceptance 4)

def _crossings(vals, thresh=0.5, min_sep=2.0):
    d = vals - thresh
    pos = []
    for i in range(len(d) - 1):
        if d[i] == 0:
            continue
        if (d[i] < 0) != (d[i + 1] < 0):
            pos.append(i + d[i] / (d[i] - d[i + 1]))
    out = []
    for p in pos:
        if out and p - out[-1] < min_sep:
            out.pop()
        else:
            out.append(p)
    return np.array(out)


def row_cell_widths(gray_row, covered_row, min_sep=2.0):
    """Complete checkerboard cell widths along one raster row (subpixel
    threshold crossings; blips closer than min_sep are discarded)."""
    idx = np.nonzero(covered_row)[0]
    if len(idx) < 8:
        return np.array([])
    x = _crossings(gray_row[idx.min():idx.max() + 1], min_sep=min_sep)
    return np.diff(x) if len(x) >= 2 else np.array([])


def cell_width_cov(gray, covered, rows, min_sep=2.0):
    """Coefficient of variation of cell widths pooled over the given rows."""
    widths = np.concatenate(
        [row_cell_widths(gray[r], covered[r], min_sep) for r in rows])
    return float(np.std(widths) / np.mean(widths)), widths


# ---------------------------------------------------------------------------
# retrieval oracle: exhaustive recomputation from a raw similarity matrix

def oracle_retrieval_metrics(ids, values, labels, ks=(1, 3, 5, 10)):
    """Recompute leave-one-out Top-k and mAP directly from the definitions.

    Returns (topk dict in percent, mAP percent, per-query rank-1 hit dict).
    """
    n = len(ids)
    counts = {}
    for i in ids:
        counts[labels[i]] = counts.get(labels[i], 0) + 1
    topk_hits = {k: 0 for k in ks}
    ap_sum = 0.0
    rank1 = {}
    queries = 0
    for qi in range(n):
        if counts[labels[ids[qi]]] < 2:
            continue
        queries += 1
        entries = []
        for j in range(n):
            if j == qi:
                continue
            entries.append((ids[j], float(values[qi, j])))
        # descending score, ascending id
        entries.sort(key=lambda t: (-t[1], t[0]))
        rel = [labels[e[0]] == labels[ids[qi]] for e in entries]
        for k in ks:
            if True in rel[:min(k, len(rel))]:
                topk_hits[k] += 1
        hits = 0
        ap = 0.0
        for rank, flag in enumerate(rel, start=1):
            if flag:
                hits += 1
                ap += hits / rank
        ap_sum += ap / sum(rel)
        rank1[ids[qi]] = rel[0]
    topk = {k: 100.0 * h / queries for k, h in topk_hits.items()}
    return topk, 100.0 * ap_sum / queries, rank1
