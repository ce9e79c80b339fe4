"""Learnable spherical representation.

A 5-layer correlation stack: one S^2 correlation layer followed by four
SO(3) correlation layers with rectifiers in between (none after the last).
Only the final SO(3) filter bank is trainable; the loss is the softmax
cross-entropy of the correlation against the grid node nearest the
ground-truth rotation, and the correlation is linear in the filter, so the
analytic gradient is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _fastcorr
from .so3 import RotationGrid, so3_grid
from .sphere import (
    RotationGridSignal,
    SphereGrid,
    SphericalSignal,
    bandlimited_sphere_signal,
    dh_grid,
    s2_correlate,
    smooth_rotation_filter,
    so3_correlate,
)

# prepared-filter caches above this many table entries fall back to
# on-the-fly preparation (a table is n^5 doubles)
_CACHE_BUDGET = 60_000_000


@dataclass
class SphereCnnStack:
    """Filter banks of the 5-layer correlation stack.

    layer1: (C1, K_in, 2b, 2b) S^2 filters.
    so3_layers: four arrays (C_out, C_in, n, n, n) on the (pooled) grid.
    """

    sphere_grid: SphereGrid
    rotation_grid: RotationGrid
    layer1: np.ndarray
    so3_layers: tuple[np.ndarray, ...]
    pool_factor: int = 1
    _prep: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.so3_layers) != 4:
            raise ValueError("stack needs exactly four SO(3) layers")
        chain = [self.layer1.shape[0]]
        for arr in self.so3_layers:
            if arr.shape[1] != chain[-1]:
                raise ValueError("layer channel counts do not chain")
            chain.append(arr.shape[0])
        for arr in (self.layer1, *self.so3_layers):
            if not np.all(np.isfinite(arr)):
                raise ValueError("filters must be finite")
        n = self.rotation_grid.n_alpha
        if self.pool_factor > 1 and n % self.pool_factor:
            raise ValueError("pool factor must divide the rotation grid size")

    @property
    def k_in(self) -> int:
        return self.layer1.shape[1]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(arr.shape[0] for arr in (self.layer1, *self.so3_layers))

    @property
    def inner_grid(self) -> RotationGrid:
        """Grid the SO(3) layers run on (the base grid after pooling)."""
        if self.pool_factor == 1:
            return self.rotation_grid
        return so3_grid(self.rotation_grid.n_alpha // self.pool_factor)

    def with_final_filter(self, filt: np.ndarray) -> "SphereCnnStack":
        layers = self.so3_layers[:3] + (np.asarray(filt, dtype=float),)
        return SphereCnnStack(self.sphere_grid, self.rotation_grid, self.layer1,
                              layers, self.pool_factor)

    def _prepared(self, layer: int, c_out: int, c_in: int):
        """Engine-prepared gather table for one SO(3) filter channel."""
        n = self.inner_grid.n_alpha
        eng = _fastcorr.so3_engine(n)
        key = (layer, c_out, c_in)
        if key in self._prep:
            return eng, self._prep[key]
        pf = eng.prepare_filter(self.so3_layers[layer][c_out, c_in])
        if (len(self._prep) + 1) * n ** 5 <= _CACHE_BUDGET:
            self._prep[key] = pf
        return eng, pf

    def _prepared_s2(self, c_out: int, c_in: int):
        """Engine-prepared table for one S^2 layer-1 filter channel, when the
        sphere and rotation grids are alignment-compatible."""
        eng = _fastcorr.s2_engine(self.sphere_grid.b, self.rotation_grid.n_alpha)
        key = ("s2", c_out, c_in)
        if key not in self._prep:
            self._prep[key] = eng.prepare_filter(self.layer1[c_out, c_in])
        return eng, self._prep[key]


def identity_bump(grid: RotationGrid, concentration: float | None = None) -> np.ndarray:
    """Smooth rotation-distance bump exp(k (cos(theta) - 1)) on the grid.

    Concentrated within about one grid cell by default; the exponential of
    cos(theta) keeps the angular spectrum effectively band-limited for
    moderate k, so correlating with it acts as a gentle local average.
    """
    n = grid.n_alpha
    if concentration is None:
        concentration = 0.104 * n * n
    rots = grid.rotations.reshape(-1, 3, 3)
    ctheta = np.clip((np.einsum("qii->q", rots) - 1.0) / 2.0, -1.0, 1.0)
    return np.exp(concentration * (ctheta - 1.0)).reshape(grid.shape)


def random_stack(b: int, n: int, k_in: int,
                 channels: tuple[int, ...] = (8, 8, 8, 8, 1),
                 seed: int = 0, pool_factor: int = 1,
                 filter_order: int = 3) -> SphereCnnStack:
    """Stack with fixed random filters (layers 1-4) and a zero final filter
    ready for training.

    Layer 1 holds zero-DC random band-limited filters arranged in +/- pairs
    so the rectifier splits signed responses losslessly instead of being
    able to zero a whole layer.  Layers 2-4 hold positive near-identity
    bump filters modulated by random smooth factors: they act as randomly
    weighted local averages, which keeps the rotation-discriminative
    structure (and hence approximate equivariance) alive through the depth
    of the stack; broad random filters would low-pass it into an
    uninformative constant.  Every bank is rescaled against a deterministic
    probe so feature magnitude is preserved per layer.
    """
    if len(channels) != 5:
        raise ValueError("channels must list five layer widths")
    rng = np.random.default_rng(seed)
    sg = dh_grid(b)
    rg = so3_grid(n)
    inner = so3_grid(n // pool_factor) if pool_factor > 1 else rg
    c1 = channels[0]
    w_sphere = sg.beta_weights[None, None, :]
    base_filters = []
    for _ in range((c1 + 1) // 2):
        f = bandlimited_sphere_signal(sg, k_in, filter_order, rng).values
        f = f - np.sum(w_sphere * f, axis=(1, 2), keepdims=True)  # kill quadrature DC
        base_filters.append(f)
    paired = []
    for f in base_filters:
        paired.append(f)
        if len(paired) < c1:
            paired.append(-f)
    layer1 = np.stack(paired[:c1])

    probe = bandlimited_sphere_signal(sg, k_in, filter_order,
                                      np.random.default_rng(seed + 982451653),
                                      positive=True)
    h = np.stack([
        s2_correlate(SphericalSignal(sg, layer1[c]), probe, rg).values[0]
        for c in range(c1)
    ])
    h = _relu(h)
    if pool_factor > 1:
        h = _block_max(h, pool_factor)
    scale = 1.0 / max(float(np.sqrt(np.mean(h ** 2))), 1e-30)
    layer1 = layer1 * scale
    h = h * scale

    bump = identity_bump(inner)
    so3_layers = []
    prev = c1
    for li, c in enumerate(channels[1:]):
        if li == 3:
            arr = np.zeros((c, prev) + inner.shape)
        else:
            arr = np.empty((c, prev) + inner.shape)
            for co in range(c):
                for ci in range(prev):
                    pert = smooth_rotation_filter(inner, 1, rng, max_order=2).values[0]
                    pert = 0.25 * pert / max(float(np.abs(pert).max()), 1e-12)
                    arr[co, ci] = bump * (1.0 + pert)
            h_next = _relu(_so3_bank_forward(inner, arr, h))
            scale = 1.0 / max(float(np.sqrt(np.mean(h_next ** 2))), 1e-30)
            arr = arr * scale
            h = h_next * scale
        so3_layers.append(arr)
        prev = c
    return SphereCnnStack(sg, rg, layer1, tuple(so3_layers), pool_factor)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _layer1_forward(stack: SphereCnnStack, signal: SphericalSignal) -> np.ndarray:
    g = stack.rotation_grid
    c1, k_in = stack.layer1.shape[:2]
    out = np.zeros((c1,) + g.shape)
    if _fastcorr.s2_aligned(stack.sphere_grid.b, g):
        w = stack.sphere_grid.beta_weights[None, :]
        for c in range(c1):
            for k in range(k_in):
                eng, table = stack._prepared_s2(c, k)
                out[c] += eng.apply(table, w * signal.values[k])
        return out
    for c in range(c1):
        phi = SphericalSignal(stack.sphere_grid, stack.layer1[c])
        out[c] = s2_correlate(phi, signal, g).values[0]
    return out


def _so3_bank_forward(grid: RotationGrid, bank: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Apply a (C_out, C_in, n, n, n) filter bank without any caching."""
    eng = _fastcorr.so3_engine(grid.n_alpha)
    w = grid.beta_node_weights[None, :, None]
    c_out, c_in = bank.shape[:2]
    out = np.zeros((c_out,) + grid.shape)
    fw = w * h
    for co in range(c_out):
        for ci in range(c_in):
            out[co] += eng.apply_batch(eng.prepare_filter(bank[co, ci]), fw[ci])
    return out


def _so3_layer_forward(stack: SphereCnnStack, layer: int, h: np.ndarray) -> np.ndarray:
    grid = stack.inner_grid
    w = grid.beta_node_weights[None, :, None]
    bank = stack.so3_layers[layer]
    c_out, c_in = bank.shape[:2]
    out = np.zeros((c_out,) + grid.shape)
    fw = w * h
    for co in range(c_out):
        for ci in range(c_in):
            eng, pf = stack._prepared(layer, co, ci)
            out[co] += eng.apply_batch(pf, fw[ci])
    return out


def _forward_features(stack: SphereCnnStack, signal: SphericalSignal) -> np.ndarray:
    """Layers 1-4 (rectified), i.e. the input feature of the final filter."""
    if signal.channels != stack.k_in:
        raise ValueError("input channels do not match the stack")
    if signal.grid != stack.sphere_grid:
        raise ValueError("input grid does not match the stack")
    h = _relu(_layer1_forward(stack, signal))
    if stack.pool_factor > 1:
        h = _block_max(h, stack.pool_factor)
    for layer in range(3):
        h = _relu(_so3_layer_forward(stack, layer, h))
    return h


def sphere_cnn_forward(signal: SphericalSignal, stack: SphereCnnStack,
                       g: RotationGrid | None = None) -> RotationGridSignal:
    """Full forward pass; output channels collapse to 1 by summation."""
    if g is not None and g != stack.rotation_grid:
        raise ValueError("requested grid does not match the stack")
    h = _forward_features(stack, signal)
    out = _so3_layer_forward(stack, 3, h)  # no rectifier after the last layer
    return RotationGridSignal(stack.inner_grid, out.sum(axis=0)[None])


# ---------------------------------------------------------------------------
# Correlation post-processing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoarseRotation:
    rotation: np.ndarray
    confidence: float


def normalize_correlation(c: RotationGridSignal) -> RotationGridSignal:
    """Softmax over all rotation nodes; output sums to 1."""
    if c.channels != 1:
        raise ValueError("normalization expects a single channel")
    x = c.values[0]
    e = np.exp(x - x.max())
    return RotationGridSignal(c.grid, (e / e.sum())[None])


def _log_softmax_at(values: np.ndarray, flat_index: int) -> float:
    x = values.reshape(-1)
    m = x.max()
    return float(x[flat_index] - m - np.log(np.exp(x - m).sum()))


def correlation_loss(c: RotationGridSignal, r_g: np.ndarray) -> float:
    """Cross-entropy of the normalized correlation at the node nearest r_g."""
    if c.channels != 1:
        raise ValueError("loss expects a single channel")
    idx = c.grid.nearest_node(r_g)
    flat = int(np.ravel_multi_index(idx, c.grid.shape))
    return -_log_softmax_at(c.values[0], flat)


def argmax_rotation(c: RotationGridSignal) -> CoarseRotation:
    """Rotation of the maximal node; flat C-order argmax breaks ties
    lexicographically in (alpha, beta, gamma)."""
    if c.channels != 1:
        raise ValueError("argmax expects a single channel")
    flat = int(np.argmax(c.values[0]))
    idx = np.unravel_index(flat, c.grid.shape)
    conf = normalize_correlation(c).values[0][idx]
    return CoarseRotation(c.grid.node_rotation(*idx), float(conf))


def _block_max(values: np.ndarray, factor: int) -> np.ndarray:
    k, na, nb, ng = values.shape
    v = values.reshape(k, na // factor, factor, nb // factor, factor, ng // factor, factor)
    return v.max(axis=(2, 4, 6))


def so3_maxpool(c: RotationGridSignal, factor: int) -> RotationGridSignal:
    """Block max over factor^3 cells; grid dimensions divide by factor."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return c
    na, nb, ng = c.grid.shape
    if na % factor or nb % factor or ng % factor:
        raise ValueError("factor must divide every grid dimension")
    pooled_grid = RotationGrid(na // factor, nb // factor, ng // factor)
    return RotationGridSignal(pooled_grid, _block_max(c.values, factor))


# ---------------------------------------------------------------------------
# Final-filter training (Eq. softmax cross-entropy, linear in the filter)
# ---------------------------------------------------------------------------


def _effective_final_filter(stack: SphereCnnStack) -> np.ndarray:
    """Channel-summed output collapses the C5 slices into one filter."""
    return stack.so3_layers[3].sum(axis=0)


def _batch_logits(eng, prepared_eff, fw_batch: np.ndarray) -> np.ndarray:
    """Correlation logits (B, n^3) of weighted features against the filter."""
    bsz = fw_batch.shape[0]
    out = np.zeros((bsz,) + (eng.n,) * 3)
    for ci, pf in enumerate(prepared_eff):
        out += eng.apply_batch(pf, fw_batch[:, ci])
    return out.reshape(bsz, -1)


def final_filter_loss_and_grad(stack: SphereCnnStack,
                               samples: list[tuple[SphericalSignal, np.ndarray]]):
    """Mean correlation loss over samples and its gradient w.r.t. the
    final filter bank (exact; the correlation is linear in the filter)."""
    grid = stack.inner_grid
    w = grid.beta_node_weights[None, :, None]
    feats = np.stack([_forward_features(stack, s) for s, _ in samples])
    labels = np.array([
        np.ravel_multi_index(grid.nearest_node(r), grid.shape) for _, r in samples])
    fw = w[None] * feats
    eng = _fastcorr.so3_engine(grid.n_alpha)
    eff = _effective_final_filter(stack)
    prepared = [eng.prepare_filter(eff[ci]) for ci in range(eff.shape[0])]
    loss, grad_eff = _loss_and_grad_from_features(eng, prepared, fw, labels)
    c5 = stack.so3_layers[3].shape[0]
    grad = np.broadcast_to(grad_eff[None], (c5,) + grad_eff.shape).copy()
    return loss, grad


def _loss_and_grad_from_features(eng, prepared_eff, fw_batch, labels):
    bsz = fw_batch.shape[0]
    logits = _batch_logits(eng, prepared_eff, fw_batch)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(bsz), labels]))
    p = np.exp(logits - lse[:, None])
    p[np.arange(bsz), labels] -= 1.0
    d = (p / bsz).reshape((bsz,) + (eng.n,) * 3)
    c_in = fw_batch.shape[1]
    grad = np.stack([eng.adjoint_batch(d, fw_batch[:, ci]) for ci in range(c_in)])
    return loss, grad


def train_final_filter(samples: list[tuple[SphericalSignal, np.ndarray]],
                       stack: SphereCnnStack, steps: int, learning_rate: float,
                       batch_size: int | None = None, seed: int = 0,
                       momentum: float = 0.0,
                       return_losses: bool = False):
    """Gradient descent on the correlation cross-entropy, final filter only.

    Layer 1-4 features are precomputed once (those layers are fixed).  With
    the default full batch the loss is non-increasing for any rate below the
    curvature bound of this convex problem; a smaller batch_size gives
    seeded stochastic steps.
    """
    if not samples:
        raise ValueError("no training samples")
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    grid = stack.inner_grid
    n = grid.n_alpha
    eng = _fastcorr.so3_engine(n)
    w = grid.beta_node_weights[None, :, None]
    feats = np.stack([_forward_features(stack, s) for s, _ in samples])
    fw_all = w[None] * feats
    labels = np.array([
        np.ravel_multi_index(grid.nearest_node(r), grid.shape) for _, r in samples])

    filt = stack.so3_layers[3].astype(float).copy()
    c5 = filt.shape[0]
    rng = np.random.default_rng(seed)
    losses = []
    vel = np.zeros_like(filt[0]) if momentum else None
    for _ in range(int(steps)):
        if batch_size is None or batch_size >= len(samples):
            fw, lab = fw_all, labels
        else:
            pick = rng.choice(len(samples), size=batch_size, replace=False)
            fw, lab = fw_all[pick], labels[pick]
        eff = filt.sum(axis=0)
        prepared = [eng.prepare_filter(eff[ci]) for ci in range(eff.shape[0])]
        loss, grad_eff = _loss_and_grad_from_features(eng, prepared, fw, lab)
        losses.append(loss)
        step_dir = grad_eff
        if momentum:
            vel = momentum * vel + grad_eff
            step_dir = vel
        filt -= learning_rate * step_dir[None].repeat(c5, axis=0)
    out = stack.with_final_filter(filt)
    if return_losses:
        return out, losses
    return out
