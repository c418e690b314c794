"""Coordinate-network UV solver.

A small fully connected network maps pixel coordinates, passed through a
Fourier feature layer, to texture coordinates. Training has two phases run
with Adam-style updates under a per-phase cosine-annealed step size:

  1. pretraining regresses the network onto the identity map, giving a
     well-conditioned, orientation-fixed starting point;
  2. training minimizes the per-sample metric mismatch ||J^T J - G||_F^2,
     where J is the exact network Jacobian with respect to pixel coordinates
     (differentiated analytically through the encoding and every layer).

Everything is plain numpy in float64; a fixed config seed makes solves
bitwise reproducible. The output layer reads both the last hidden layer and
the encoding; its encoding block starts as the identity map so that the
pinned learning rate (1e-5) operates as a refinement schedule rather than a
cold start, which desk-scale pixel counts could never warm up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .uvfield import (SolveReport, UVError, UVField, isometry_residual,
                      normalize_origin)

_EVAL_CHUNK = 16384


class SolverError(RuntimeError):
    pass


@dataclass
class CoordinateNetConfig:
    fourier_bands: int = 12
    fourier_sigma: float = 2.0
    hidden_width: int = 128
    hidden_layers: int = 6
    pretrain_epochs: int = 100
    train_epochs: int = 300
    lr_initial: float = 1e-5
    lr_floor_ratio: float = 0.01  # cosine anneal decays to lr_initial * ratio
    # None sizes minibatches per image so an epoch is ~60 Adam steps at any
    # scale, the regime the fixed epoch counts and learning rate assume
    # (~300k-pixel images at batch 4096); an int pins the size directly
    batch_size: int | None = None
    seed: int = 7

    @property
    def feature_len(self) -> int:
        return 2 + 4 * self.fourier_bands

    def batch_for(self, n_pixels: int) -> int:
        if self.batch_size is not None:
            return max(1, min(self.batch_size, n_pixels))
        return max(1, min(4096, max(16, round(n_pixels / 60)), n_pixels))


def fourier_frequencies(config: CoordinateNetConfig) -> np.ndarray:
    """The fixed (bands, 2) Gaussian frequency matrix, set by the config seed."""
    if config.fourier_bands < 1:
        raise SolverError("fourier_bands must be >= 1")
    rng = np.random.default_rng([config.seed, 11])
    return rng.normal(0.0, 1.0, (config.fourier_bands, 2)) * config.fourier_sigma


def fourier_encode(xn: np.ndarray, config: CoordinateNetConfig) -> np.ndarray:
    """[x, sin(2 pi B x), cos(2 pi B x)] per (already normalized) coordinate pair.

    The sin/cos blocks are per-axis: feature (band i, axis j) sits at flat
    index 2*i + j inside its block, so the output length is 2 + 4*bands.
    """
    B = fourier_frequencies(config)
    xn = np.asarray(xn, dtype=np.float64)
    ang = 2.0 * math.pi * xn[..., None, :] * B  # (..., bands, 2)
    flat = xn.shape[:-1] + (2 * config.fourier_bands,)
    return np.concatenate(
        [xn, np.sin(ang).reshape(flat), np.cos(ang).reshape(flat)], axis=-1)


def _encode_with_jacobian(xn: np.ndarray, B: np.ndarray):
    """Encoding features plus d(features)/d(xn), batched.

    Returns (enc (N, F), E_flat (2N, F)) where E_flat row 2n+i holds the
    derivative of every feature of sample n along normalized axis i.
    """
    n = xn.shape[0]
    bands = B.shape[0]
    f = 2 + 4 * bands
    ang = 2.0 * math.pi * xn[:, None, :] * B          # (N, bands, 2)
    s = np.sin(ang)
    c = np.cos(ang)
    enc = np.concatenate(
        [xn, s.reshape(n, -1), c.reshape(n, -1)], axis=1)
    E = np.zeros((n, f, 2))
    E[:, 0, 0] = 1.0
    E[:, 1, 1] = 1.0
    coef = 2.0 * math.pi * B                          # (bands, 2)
    rows = 2 + 2 * np.arange(bands)
    for j in range(2):
        E[:, rows + j, j] = coef[:, j] * c[:, :, j]
        E[:, 2 * bands + rows + j, j] = -coef[:, j] * s[:, :, j]
    return enc, E.transpose(0, 2, 1).reshape(2 * n, f)


@dataclass
class NetParams:
    """Weights plus the fixed per-image normalization and Fourier frequencies."""

    weights: list          # hidden layer matrices, first is (H, F)
    biases: list
    w_out: np.ndarray      # (2, H + F): hidden block then encoding block
    b_out: np.ndarray      # (2,)
    center: np.ndarray     # pixel-space normalization offset
    scale: float           # pixel-space normalization scale
    freqs: np.ndarray      # (bands, 2)

    def trainable(self) -> list:
        return self.weights + self.biases + [self.w_out, self.b_out]


def init_params(config: CoordinateNetConfig, width: int, height: int) -> NetParams:
    """He-initialized hidden stack; output layer starts as the identity map
    (identity encoding block, small random hidden block)."""
    rng = np.random.default_rng([config.seed, 23])
    f = config.feature_len
    h = config.hidden_width
    weights = []
    biases = []
    fan = f
    for _ in range(config.hidden_layers):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan), (h, fan)))
        biases.append(np.zeros(h))
        fan = h
    w_out = np.zeros((2, h + f))
    w_out[:, :h] = rng.normal(0.0, 1e-2 / math.sqrt(h), (2, h))
    w_out[0, h] = 1.0
    w_out[1, h + 1] = 1.0
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    scale = max((max(width, height) - 1) / 2.0, 1.0)
    return NetParams(weights, biases, w_out, np.zeros(2), center, scale,
                     fourier_frequencies(config))


def _forward(params: NetParams, xn: np.ndarray, want_jacobian: bool):
    """Value pass, optionally with the exact input-Jacobian chain.

    ReLU derivative at exactly zero is taken as 0 (active-side convention).
    Returns a cache dict consumed by the two backward passes.
    """
    if want_jacobian:
        enc, e_flat = _encode_with_jacobian(xn, params.freqs)
    else:
        ang = 2.0 * math.pi * xn[:, None, :] * params.freqs
        n = xn.shape[0]
        enc = np.concatenate(
            [xn, np.sin(ang).reshape(n, -1), np.cos(ang).reshape(n, -1)], axis=1)
        e_flat = None
    hs = [enc]
    ds = []
    qs = [e_flat]
    a = enc
    q = e_flat
    for w, b in zip(params.weights, params.biases):
        z = a @ w.T + b
        d = (z > 0.0).astype(np.float64)
        a = z * d
        hs.append(a)
        ds.append(d)
        if want_jacobian:
            q = np.repeat(d, 2, axis=0) * (q @ w.T)
            qs.append(q)
    h = params.w_out.shape[1] - enc.shape[1]
    y = a @ params.w_out[:, :h].T + enc @ params.w_out[:, h:].T + params.b_out
    jac = None
    if want_jacobian:
        j_flat = q @ params.w_out[:, :h].T + e_flat @ params.w_out[:, h:].T
        jac = j_flat.reshape(-1, 2, 2).transpose(0, 2, 1)  # (N, out, in)
    return {"y": y, "jac": jac, "enc": enc, "hs": hs, "ds": ds, "qs": qs,
            "e_flat": e_flat}


def network_forward_with_jacobian(params: NetParams, x: np.ndarray,
                                  config: CoordinateNetConfig):
    """Network output and its exact Jacobian w.r.t. unnormalized pixel coords.

    x: (N, 2) or (2,) pixel coordinates. The Jacobian chains through the
    coordinate normalization, so it scales as 1/params.scale.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xn = (x - params.center) / params.scale
    cache = _forward(params, xn, want_jacobian=True)
    return cache["y"], cache["jac"] / params.scale


def _zero_grads(params: NetParams):
    return [np.zeros_like(p) for p in params.trainable()]


def _value_backward(params: NetParams, cache, delta: np.ndarray):
    """Gradients of a value loss given delta = dL/dy. Returns grads aligned
    with params.trainable()."""
    nl = len(params.weights)
    h = params.w_out.shape[1] - cache["enc"].shape[1]
    gw = [None] * nl
    gb = [None] * nl
    g_wout = np.concatenate(
        [delta.T @ cache["hs"][-1], delta.T @ cache["enc"]], axis=1)
    g_bout = delta.sum(axis=0)
    s = delta @ params.w_out[:, :h]
    for k in range(nl - 1, -1, -1):
        u = cache["ds"][k] * s
        gw[k] = u.T @ cache["hs"][k]
        gb[k] = u.sum(axis=0)
        s = u @ params.weights[k]
    return gw + gb + [g_wout, g_bout]


def _jacobian_backward(params: NetParams, cache, gj: np.ndarray):
    """Gradients of a Jacobian loss given gj = dL/dJ (N, 2, 2).

    ReLU's second derivative vanishes almost everywhere, so the activation
    pattern is treated as constant; bias gradients are identically zero.
    """
    nl = len(params.weights)
    h = params.w_out.shape[1] - cache["enc"].shape[1]
    gj_flat = gj.transpose(0, 2, 1).reshape(-1, 2)
    gw = [None] * nl
    gb = [np.zeros_like(b) for b in params.biases]
    g_wout = np.concatenate(
        [gj_flat.T @ cache["qs"][-1], gj_flat.T @ cache["e_flat"]], axis=1)
    g_bout = np.zeros_like(params.b_out)
    s = gj_flat @ params.w_out[:, :h]
    for k in range(nl - 1, -1, -1):
        u = np.repeat(cache["ds"][k], 2, axis=0) * s
        gw[k] = u.T @ cache["qs"][k]
        s = u @ params.weights[k]
    return gw + gb + [g_wout, g_bout]


class _Adam:
    def __init__(self, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, arrays, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            a -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _cosine_lr(step: int, total: int, config: CoordinateNetConfig) -> float:
    floor = config.lr_initial * config.lr_floor_ratio
    if total <= 1:
        return config.lr_initial
    frac = step / (total - 1)
    return floor + 0.5 * (config.lr_initial - floor) * (1.0 + math.cos(math.pi * frac))


def _valid_coords(metric):
    yy, xx = np.nonzero(metric.valid)
    return np.stack([xx, yy], axis=1).astype(np.float64)


def _metric_matrices(metric, mask_idx):
    g = np.empty((len(mask_idx[0]), 2, 2))
    g[:, 0, 0] = metric.g11[mask_idx]
    g[:, 0, 1] = g[:, 1, 0] = metric.g12[mask_idx]
    g[:, 1, 1] = metric.g22[mask_idx]
    return g


def _run_phase(params: NetParams, coords: np.ndarray, config: CoordinateNetConfig,
               epochs: int, phase: str, gmats: np.ndarray | None) -> list:
    """One training phase over shuffled minibatches of the valid pixels.

    phase 'pretrain': identity regression, loss in px^2.
    phase 'train': metric-matching loss on the exact network Jacobian.
    """
    n = len(coords)
    arrays = params.trainable()
    opt = _Adam(arrays)
    rng = np.random.default_rng([config.seed, 31 if phase == "pretrain" else 37])
    batch = config.batch_for(n)
    steps_per_epoch = (n + batch - 1) // batch
    total_steps = epochs * steps_per_epoch
    xn_all = (coords - params.center) / params.scale
    trace = []
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for s0 in range(0, n, batch):
            sel = perm[s0:s0 + batch]
            xn = xn_all[sel]
            bs = len(sel)
            if phase == "pretrain":
                cache = _forward(params, xn, want_jacobian=False)
                err = cache["y"] - xn
                loss = float(np.sum(err * err) / bs) * params.scale ** 2
                grads = _value_backward(params, cache, (2.0 / bs) * err)
            else:
                cache = _forward(params, xn, want_jacobian=True)
                J = cache["jac"]
                r = np.einsum("noi,noj->nij", J, J) - gmats[sel]
                loss = float(np.sum(r * r) / bs)
                gj = (4.0 / bs) * np.matmul(J, r)
                grads = _jacobian_backward(params, cache, gj)
            if not math.isfinite(loss):
                raise SolverError(
                    f"non-finite {phase} loss at step {step}: {loss}")
            opt.step(arrays, grads, _cosine_lr(step, total_steps, config))
            epoch_loss += loss * bs
            step += 1
        trace.append(epoch_loss / n)
    return trace


def pretrain(metric, config: CoordinateNetConfig) -> NetParams:
    """Fit the network to the identity map over the valid pixels."""
    if not metric.valid.any():
        raise SolverError("no valid pixels")
    params = init_params(config, metric.width, metric.height)
    _run_phase(params, _valid_coords(metric), config,
               config.pretrain_epochs, "pretrain", None)
    return params


def evaluate_uv(params: NetParams, metric) -> UVField:
    """Per-pixel evaluation of the trained network on the metric's mask,
    mapped back to pixel-scale texture units."""
    coords = _valid_coords(metric)
    outs = []
    for s0 in range(0, len(coords), _EVAL_CHUNK):
        xn = (coords[s0:s0 + _EVAL_CHUNK] - params.center) / params.scale
        outs.append(_forward(params, xn, want_jacobian=False)["y"])
    y = np.concatenate(outs, axis=0) if outs else np.zeros((0, 2))
    uv = np.full(metric.valid.shape + (2,), np.nan)
    uv[metric.valid] = y * params.scale + params.center
    return UVField(uv, metric.valid.copy())


def solve_uv_network(metric, config: CoordinateNetConfig | None = None
                     ) -> tuple[UVField, SolveReport]:
    """Pretrain, then train against the surface metric; returns the solved
    UV field (min corner translated to the origin) and the loss trace."""
    config = config or CoordinateNetConfig()
    if not metric.valid.any():
        raise SolverError("no valid pixels")
    params = init_params(config, metric.width, metric.height)
    coords = _valid_coords(metric)
    trace_pre = _run_phase(params, coords, config,
                           config.pretrain_epochs, "pretrain", None)
    gmats = _metric_matrices(metric, np.nonzero(metric.valid))
    trace_train = _run_phase(params, coords, config,
                             config.train_epochs, "train", gmats)
    out = normalize_origin(evaluate_uv(params, metric))
    report = SolveReport(
        method="network", loss_trace=trace_pre + trace_train,
        epochs={"pretrain": config.pretrain_epochs, "train": config.train_epochs})
    try:
        report.final_residual = isometry_residual(out, metric)
    except UVError:
        # masks of isolated pixels admit no finite-difference residual
        report.final_residual = float("nan")
    return out, report
