"""Desk-scale keypoint matching and similarity scoring between textures.

The built-in detector/descriptor (Harris corners + normalized intensity
patches) exists so the pipeline is testable end to end; it makes no attempt
to rival learned descriptors. Pairwise similarity is the area under the
sorted match-score curve, so it grows with both match count and confidence.
External per-pair scores can be ingested from CSV instead of running the
built-in matcher.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

PATCH = 11  # descriptor patch edge, must be odd
HARRIS_K = 0.05
HARRIS_REL_THRESHOLD = 0.01
HARRIS_ABS_FLOOR = 1e-8
MAX_KEYPOINTS = 500
DEFAULT_RATIO = 0.8
# re-identification scoring keeps every mutual-NN match and lets the score
# curve separate pairs, the way AUC-of-match-scores is meant to work; a hard
# ratio cut at desk scale leaves so few matches that rankings saturate
EVAL_RATIO = 1.0


class MatchingError(ValueError):
    pass


@dataclass
class KeypointSet:
    xy: np.ndarray           # (N, 2) float64 keypoint positions
    descriptors: np.ndarray  # (N, PATCH*PATCH) zero-mean unit-norm float64


@dataclass
class MatchSet:
    a_xy: np.ndarray    # (M, 2)
    b_xy: np.ndarray    # (M, 2)
    scores: np.ndarray  # (M,) in [0, 1]

    def __len__(self):
        return len(self.scores)


def _luminance(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(luminance in [0,1], opacity mask) from an RGB(A) uint8 image."""
    image = np.asarray(image)
    rgb = image[..., :3].astype(np.float64) / 255.0
    lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    if image.ndim == 3 and image.shape[2] == 4:
        opaque = image[..., 3] > 0
    else:
        opaque = np.ones(lum.shape, dtype=bool)
    return lum, opaque


def detect_and_describe(image: np.ndarray) -> KeypointSet:
    """Harris corners on the luminance channel with 11x11 normalized patches.

    Keypoints are kept only where the entire descriptor patch is opaque;
    descriptors are zero-mean, unit-norm. Returns an empty set (not an
    error) when nothing qualifies.
    """
    lum, opaque = _luminance(image)
    h, w = lum.shape
    half = PATCH // 2
    empty = KeypointSet(np.zeros((0, 2)), np.zeros((0, PATCH * PATCH)))
    if h < PATCH or w < PATCH or not opaque.any():
        return empty

    masked = np.where(opaque, lum, 0.0)
    gy, gx = np.gradient(masked)
    ixx = gaussian_filter(gx * gx, 1.5)
    iyy = gaussian_filter(gy * gy, 1.5)
    ixy = gaussian_filter(gx * gy, 1.5)
    resp = ixx * iyy - ixy * ixy - HARRIS_K * (ixx + iyy) ** 2

    # full patch must sit inside the opaque region and the image
    ok = np.zeros_like(opaque)
    ok[half:h - half, half:w - half] = True
    shrunk = opaque.copy()
    for _ in range(half):
        shrunk[1:, :] &= shrunk[:-1, :]
        shrunk[:-1, :] &= shrunk[1:, :]
        shrunk[:, 1:] &= shrunk[:, :-1]
        shrunk[:, :-1] &= shrunk[:, 1:]
    ok &= shrunk

    resp = np.where(ok, resp, -np.inf)
    peak = maximum_filter(resp, size=3)
    thr = max(HARRIS_ABS_FLOOR, HARRIS_REL_THRESHOLD * float(resp.max()))
    cand = (resp >= peak) & (resp > thr)
    ys, xs = np.nonzero(cand)
    if len(ys) == 0:
        return empty
    order = np.lexsort((xs, ys, -resp[ys, xs]))[:MAX_KEYPOINTS]
    ys, xs = ys[order], xs[order]

    descs = []
    keep_xy = []
    for y, x in zip(ys, xs):
        patch = lum[y - half:y + half + 1, x - half:x + half + 1].ravel()
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm < 1e-9:
            continue
        descs.append(patch / norm)
        keep_xy.append((x, y))
    if not descs:
        return empty
    return KeypointSet(np.array(keep_xy, dtype=np.float64), np.array(descs))


def match(a: KeypointSet, b: KeypointSet, ratio: float = DEFAULT_RATIO) -> MatchSet:
    """Mutual-nearest-neighbor matches passing the ratio test on both sides.

    Score is the descriptor correlation mapped to [0, 1]. Requiring the ratio
    test in both directions keeps match(a, b) and match(b, a) identical.
    """
    if not 0.0 < ratio <= 1.0:
        raise MatchingError(f"ratio must be in (0, 1], got {ratio}")
    none = MatchSet(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
    if len(a.xy) == 0 or len(b.xy) == 0:
        return none
    sim = a.descriptors @ b.descriptors.T           # correlations in [-1, 1]
    d2 = np.maximum(2.0 - 2.0 * sim, 0.0)           # squared L2 on unit vectors
    d = np.sqrt(d2)

    def ratio_ok(dist, axis):
        best = np.min(dist, axis=axis)
        if dist.shape[axis] < 2:
            return np.ones(best.shape, dtype=bool)
        part = np.partition(dist, 1, axis=axis)
        second = part[1] if axis == 0 else part[:, 1]
        return best <= ratio * second

    nn_ab = np.argmin(d, axis=1)
    nn_ba = np.argmin(d, axis=0)
    ia = np.arange(len(a.xy))
    mutual = nn_ba[nn_ab] == ia
    good = mutual & ratio_ok(d, 1) & ratio_ok(d, 0)[nn_ab]
    ia = ia[good]
    ib = nn_ab[good]
    scores = (sim[ia, ib] + 1.0) / 2.0
    return MatchSet(a.xy[ia], b.xy[ib], np.clip(scores, 0.0, 1.0))


def similarity_from_matches(matches: MatchSet) -> float:
    """Area under the descending score-vs-rank curve (unit rank spacing):
    the sum of match scores. Empty match set scores 0."""
    if len(matches) == 0:
        return 0.0
    return float(np.sum(np.sort(matches.scores)[::-1]))


@dataclass
class SimilarityMatrix:
    ids: list
    values: np.ndarray  # (N, N) float64, diagonal unused
    symmetric: bool

    def index(self, image_id) -> int:
        try:
            return self.ids.index(image_id)
        except ValueError:
            raise MatchingError(f"unknown image id {image_id!r}") from None

    def score(self, query_id, database_id) -> float:
        return float(self.values[self.index(query_id), self.index(database_id)])


def build_similarity_matrix(ids: list, images: dict | None = None,
                            scores_csv=None, matcher_ratio: float = DEFAULT_RATIO
                            ) -> SimilarityMatrix:
    """Pairwise similarity over the given ordered ids.

    Exactly one source must be supplied: `images` (id -> RGBA array) runs the
    built-in matcher; `scores_csv` ingests an external score file.
    """
    if len(ids) != len(set(ids)):
        raise MatchingError("dataset ids are not unique")
    if (images is None) == (scores_csv is None):
        raise MatchingError("supply exactly one of images= or scores_csv=")
    n = len(ids)
    values = np.zeros((n, n))
    if scores_csv is not None:
        pair_scores, symmetric = read_scores_csv(scores_csv)
        for i, qi in enumerate(ids):
            for j, dj in enumerate(ids):
                if i == j:
                    continue
                if (qi, dj) in pair_scores:
                    values[i, j] = pair_scores[(qi, dj)]
                elif symmetric and (dj, qi) in pair_scores:
                    values[i, j] = pair_scores[(dj, qi)]
                else:
                    raise MatchingError(
                        f"external scores missing pair ({qi!r}, {dj!r})")
        return SimilarityMatrix(list(ids), values, symmetric)

    feats = {i: detect_and_describe(images[i]) for i in ids}
    for i in range(n):
        for j in range(i + 1, n):
            s = similarity_from_matches(
                match(feats[ids[i]], feats[ids[j]], matcher_ratio))
            values[i, j] = values[j, i] = s
    return SimilarityMatrix(list(ids), values, True)


def draw_match_visualization(image_a: np.ndarray, image_b: np.ndarray,
                             kps_a: KeypointSet, kps_b: KeypointSet,
                             matches: MatchSet) -> np.ndarray:
    """Side-by-side RGB canvas with keypoint density in green and match lines
    whose opacity follows the match score."""
    from PIL import Image, ImageDraw

    def to_rgb(img):
        img = np.asarray(img)
        rgb = img[..., :3].copy()
        if img.ndim == 3 and img.shape[2] == 4:
            rgb[img[..., 3] == 0] = 32
        return rgb

    a = to_rgb(image_a)
    b = to_rgb(image_b)
    h = max(a.shape[0], b.shape[0])
    canvas = np.zeros((h, a.shape[1] + b.shape[1], 3), dtype=np.uint8)
    canvas[:a.shape[0], :a.shape[1]] = a
    canvas[:b.shape[0], a.shape[1]:] = b
    img = Image.fromarray(canvas)
    draw = ImageDraw.Draw(img, "RGBA")
    xoff = a.shape[1]
    for x, y in kps_a.xy:
        draw.ellipse([x - 1, y - 1, x + 1, y + 1], outline=(0, 255, 0, 255))
    for x, y in kps_b.xy:
        draw.ellipse([x + xoff - 1, y - 1, x + xoff + 1, y + 1],
                     outline=(0, 255, 0, 255))
    for (xa, ya), (xb, yb), s in zip(matches.a_xy, matches.b_xy, matches.scores):
        alpha = int(40 + 215 * float(s))
        draw.line([xa, ya, xb + xoff, yb], fill=(255, 200, 0, alpha), width=1)
    return np.asarray(img)


def read_scores_csv(path) -> tuple[dict, bool]:
    """Parse `query_id,database_id,score` rows; a `# symmetric` line marks the
    file as covering unordered pairs."""
    symmetric = False
    pairs = {}
    with open(path, newline="", encoding="utf-8") as f:
        rows = []
        for line in f:
            stripped = line.strip()
            if stripped.startswith("#"):
                if stripped.lstrip("#").strip().lower() == "symmetric":
                    symmetric = True
                continue
            if stripped:
                rows.append(line)
    for rec in csv.reader(rows):
        if [c.strip().lower() for c in rec[:3]] == ["query_id", "database_id", "score"]:
            continue
        if len(rec) != 3:
            raise MatchingError(f"malformed score row: {rec!r}")
        q, dbid, s = rec[0].strip(), rec[1].strip(), float(rec[2])
        if s < 0 or not np.isfinite(s):
            raise MatchingError(f"score for ({q!r}, {dbid!r}) must be finite "
                                f"and nonnegative, got {s}")
        pairs[(q, dbid)] = s
    return pairs, symmetric
