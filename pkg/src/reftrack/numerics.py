"""Minimal differentiable numerics kernel.

Dense double-precision arrays, linear/MLP layers, softmax, bilinear grid
sampling, the losses used for supervision, a decoupled-weight-decay Adam
optimizer, patch embedding, and a central finite-difference gradient
checker. Every backward pass is written by hand per op; there is no tape.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import BBox


class DenseArray:
    """Dense float64 array with an optional gradient buffer of equal shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, track_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data) if track_grad else None

    @classmethod
    def zeros(cls, shape, track_grad: bool = False) -> "DenseArray":
        return cls(np.zeros(shape, dtype=np.float64), track_grad=track_grad)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def _as2d(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"expected 1-D or 2-D input, got shape {x.shape}")


class LinearLayer:
    """Affine map y = W x + b with gradient accumulation into W and b."""

    def __init__(self, weight: DenseArray, bias: DenseArray):
        if weight.data.ndim != 2 or bias.data.ndim != 1:
            raise ValueError("weight must be [out, in], bias [out]")
        if weight.data.shape[0] != bias.data.shape[0]:
            raise ValueError("weight/bias output dims differ")
        self.weight = weight
        self.bias = bias

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, out_dim: int,
               zero: bool = False) -> "LinearLayer":
        if zero:
            w = np.zeros((out_dim, in_dim))
        else:
            bound = math.sqrt(6.0 / (in_dim + out_dim))
            w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return cls(DenseArray(w, track_grad=True),
                   DenseArray.zeros(out_dim, track_grad=True))

    @property
    def in_dim(self) -> int:
        return self.weight.data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.data.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x2, squeeze = _as2d(x)
        if x2.shape[1] != self.in_dim:
            raise ValueError(
                f"linear input has {x2.shape[1]} features, expected {self.in_dim}")
        y = x2 @ self.weight.data.T + self.bias.data
        return y[0] if squeeze else y

    def backward(self, x: np.ndarray, gy: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads for y = Wx + b and return dL/dx."""
        x2, squeeze = _as2d(x)
        g2, _ = _as2d(gy)
        if g2.shape != (x2.shape[0], self.out_dim):
            raise ValueError("gradient shape does not match layer output")
        self.weight.add_grad(g2.T @ x2)
        self.bias.add_grad(g2.sum(axis=0))
        gx = g2 @ self.weight.data
        return gx[0] if squeeze else gx

    def params(self) -> list[DenseArray]:
        return [self.weight, self.bias]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return gy * (x > 0.0)


class MLPHead:
    """Stack of linear layers with ramp nonlinearities; last layer linear."""

    def __init__(self, layers: list[LinearLayer]):
        if not layers:
            raise ValueError("MLPHead needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("adjacent layer dims do not chain")
        self.layers = layers

    @classmethod
    def create(cls, rng: np.random.Generator, dims: list[int],
               zero_last: bool = False) -> "MLPHead":
        layers = []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            zero = zero_last and i == len(dims) - 2
            layers.append(LinearLayer.create(rng, a, b, zero=zero))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            pre = layer.forward(h)
            if cache is not None:
                cache.append((h, pre))
            h = relu(pre) if i < len(self.layers) - 1 else pre
        return h

    def backward(self, cache: list, gy: np.ndarray) -> np.ndarray:
        g = np.asarray(gy, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            x_in, pre = cache[i]
            if i < len(self.layers) - 1:
                g = relu_backward(pre, g)
            g = self.layers[i].backward(x_in, g)
        return g

    def params(self) -> list[DenseArray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax along ``axis``; outputs sum to one."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, gy: np.ndarray, axis: int = -1) -> np.ndarray:
    dot = (gy * y).sum(axis=axis, keepdims=True)
    return y * (gy - dot)


def bilinear_sample(grid: np.ndarray, p) -> np.ndarray:
    """Sample a [H, W, d] grid at a point in normalized [0, 1]^2 coordinates.

    Cell centers sit at ((j + 0.5) / W, (i + 0.5) / H); a point at an exact
    cell center returns that cell. Neighbours outside the grid contribute
    zero, so values fade to exactly zero past half a cell beyond the border.
    """
    h, w, _ = grid.shape
    u = p[0] * w - 0.5
    v = p[1] * h - 0.5
    x0 = math.floor(u)
    y0 = math.floor(v)
    fx = u - x0
    fy = v - y0
    out = np.zeros(grid.shape[2], dtype=np.float64)
    for (yy, xx, wt) in (
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x0 + 1, (1.0 - fy) * fx),
        (y0 + 1, x0, fy * (1.0 - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ):
        if 0 <= yy < h and 0 <= xx < w and wt != 0.0:
            out += wt * grid[yy, xx]
    return out


def bilinear_sample_backward(grid: np.ndarray, p, gout: np.ndarray,
                             grid_grad: np.ndarray | None = None) -> np.ndarray:
    """Backward of :func:`bilinear_sample`; returns dL/dp, accumulates dL/dgrid."""
    h, w, _ = grid.shape
    u = p[0] * w - 0.5
    v = p[1] * h - 0.5
    x0 = math.floor(u)
    y0 = math.floor(v)
    fx = u - x0
    fy = v - y0

    def cell(yy, xx):
        if 0 <= yy < h and 0 <= xx < w:
            return grid[yy, xx]
        return None

    # d(out)/dfx and d(out)/dfy assembled from the four corner values.
    g00, g01 = cell(y0, x0), cell(y0, x0 + 1)
    g10, g11 = cell(y0 + 1, x0), cell(y0 + 1, x0 + 1)
    zero = np.zeros_like(gout)
    v00 = g00 if g00 is not None else zero
    v01 = g01 if g01 is not None else zero
    v10 = g10 if g10 is not None else zero
    v11 = g11 if g11 is not None else zero
    dfx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10)
    dfy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01)
    gp = np.array([float(gout @ dfx) * w, float(gout @ dfy) * h])

    if grid_grad is not None:
        for (yy, xx, wt) in (
            (y0, x0, (1.0 - fy) * (1.0 - fx)),
            (y0, x0 + 1, (1.0 - fy) * fx),
            (y0 + 1, x0, fy * (1.0 - fx)),
            (y0 + 1, x0 + 1, fy * fx),
        ):
            if 0 <= yy < h and 0 <= xx < w and wt != 0.0:
                grid_grad[yy, xx] += wt * gout
    return gp


def bilinear_sample_batch(grid: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`bilinear_sample` for pts [M, 2]; returns [M, d]."""
    h, w, d = grid.shape
    u = pts[:, 0] * w - 0.5
    v = pts[:, 1] * h - 0.5
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    out = np.zeros((pts.shape[0], d))
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            wt = (fy if dy else 1.0 - fy) * (fx if dx else 1.0 - fx)
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = np.where(inside)[0]
            if idx.size:
                out[idx] += wt[idx, None] * grid[yy[idx], xx[idx]]
    return out


def bilinear_sample_batch_backward(grid: np.ndarray, pts: np.ndarray,
                                   gout: np.ndarray,
                                   grid_grad: np.ndarray | None = None
                                   ) -> np.ndarray:
    """Backward of :func:`bilinear_sample_batch`; returns dL/dpts [M, 2]."""
    h, w, d = grid.shape
    u = pts[:, 0] * w - 0.5
    v = pts[:, 1] * h - 0.5
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    m = pts.shape[0]
    corners = np.zeros((2, 2, m, d))
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = np.where(inside)[0]
            if idx.size:
                corners[dy, dx, idx] = grid[yy[idx], xx[idx]]
                if grid_grad is not None:
                    wt = (fy if dy else 1.0 - fy) * (fx if dx else 1.0 - fx)
                    np.add.at(grid_grad, (yy[idx], xx[idx]),
                              wt[idx, None] * gout[idx])
    dfx = ((1.0 - fy)[:, None] * (corners[0, 1] - corners[0, 0])
           + fy[:, None] * (corners[1, 1] - corners[1, 0]))
    dfy = ((1.0 - fx)[:, None] * (corners[1, 0] - corners[0, 0])
           + fx[:, None] * (corners[1, 1] - corners[0, 1]))
    gpts = np.stack([(gout * dfx).sum(axis=1) * w,
                     (gout * dfy).sum(axis=1) * h], axis=1)
    return gpts


def l2_normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return np.array(v, dtype=np.float64, copy=True)
    return np.asarray(v, dtype=np.float64) / n


def l2_normalize_backward(v: np.ndarray, gy: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return np.array(gy, dtype=np.float64, copy=True)
    y = v / n
    return (gy - y * float(y @ gy)) / n


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors, clamped into [-1, 1].

    Identical arrays return exactly 1.0; a vector with norm below 1e-12
    yields 0.0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    if u is v or np.array_equal(u, v):
        return 1.0 if float(np.linalg.norm(u)) >= 1e-12 else 0.0
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


def cosine_similarity_backward(u: np.ndarray, v: np.ndarray,
                               gout: float) -> tuple[np.ndarray, np.ndarray]:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        return np.zeros_like(u), np.zeros_like(v)
    c = float(u @ v) / (nu * nv)
    gu = gout * (v / (nu * nv) - c * u / (nu * nu))
    gv = gout * (u / (nu * nv) - c * v / (nv * nv))
    return gu, gv


_LOG_EPS = 1e-12


def focal_loss(p: np.ndarray, target: int, alpha: float = 0.25,
               gamma: float = 2.0) -> float:
    """Focal term -alpha * (1 - p_t)^gamma * log(p_t) for the target class."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("expected a 1-D probability vector")
    if not 0 <= target < p.shape[0]:
        raise ValueError(f"target index {target} out of range for {p.shape[0]} classes")
    pt = float(p[target])
    return -alpha * (1.0 - pt) ** gamma * math.log(max(pt, _LOG_EPS))


def _focal_term(p: float, positive: bool, alpha: float, gamma: float) -> float:
    p = min(max(p, _LOG_EPS), 1.0 - _LOG_EPS)
    if positive:
        return -alpha * (1.0 - p) ** gamma * math.log(p)
    return -(1.0 - alpha) * p ** gamma * math.log(1.0 - p)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_focal_loss(logits: np.ndarray, target: int | None,
                       alpha: float = 0.25, gamma: float = 2.0
                       ) -> tuple[float, np.ndarray]:
    """Per-class sigmoid focal loss summed over classes, with its gradient.

    Each class is treated as an independent binary problem; ``target`` marks
    the single positive class (``None`` means all-background). Returns the
    scalar loss and dL/dlogits.
    """
    logits = np.atleast_1d(np.asarray(logits, dtype=np.float64))
    p = sigmoid(logits)
    t = np.zeros_like(p)
    if target is not None:
        if not 0 <= target < p.shape[0]:
            raise ValueError(f"target index {target} out of range")
        t[target] = 1.0
    pc = np.clip(p, _LOG_EPS, 1.0 - _LOG_EPS)
    pos = -alpha * (1.0 - pc) ** gamma * np.log(pc)
    neg = -(1.0 - alpha) * pc ** gamma * np.log(1.0 - pc)
    loss = float((t * pos + (1.0 - t) * neg).sum())

    # d/dp of each branch, then chain through sigmoid: dp/dz = p(1-p).
    dpos = alpha * ((1.0 - pc) ** gamma * (-1.0 / pc)
                    + gamma * (1.0 - pc) ** (gamma - 1.0) * np.log(pc))
    dneg = (1.0 - alpha) * (gamma * pc ** (gamma - 1.0) * (-np.log(1.0 - pc))
                            + pc ** gamma / (1.0 - pc))
    dp = t * dpos + (1.0 - t) * dneg
    dlogits = dp * pc * (1.0 - pc)
    return loss, dlogits


def sigmoid_focal_loss_batch(logits: np.ndarray, targets,
                             alpha: float = 0.25, gamma: float = 2.0
                             ) -> tuple[float, np.ndarray]:
    """Row-batched :func:`sigmoid_focal_loss`: logits [N, C], one positive
    class index per row. Returns the summed loss and dL/dlogits [N, C]."""
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    p = sigmoid(logits)
    t = np.zeros_like(p)
    t[np.arange(n), np.asarray(targets, dtype=np.int64)] = 1.0
    pc = np.clip(p, _LOG_EPS, 1.0 - _LOG_EPS)
    log_p = np.log(pc)
    log_q = np.log(1.0 - pc)
    pos = -alpha * (1.0 - pc) ** gamma * log_p
    neg = -(1.0 - alpha) * pc ** gamma * log_q
    loss = float((t * pos + (1.0 - t) * neg).sum())
    dpos = alpha * ((1.0 - pc) ** gamma * (-1.0 / pc)
                    + gamma * (1.0 - pc) ** (gamma - 1.0) * log_p)
    dneg = (1.0 - alpha) * (gamma * pc ** (gamma - 1.0) * (-log_q)
                            + pc ** gamma / (1.0 - pc))
    dlogits = (t * dpos + (1.0 - t) * dneg) * pc * (1.0 - pc)
    return loss, dlogits


def l1_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute elementwise difference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def l1_loss_backward(a: np.ndarray, b: np.ndarray,
                     gout: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    g = gout * np.sign(a - b) / a.size
    return g, -g


def giou_loss(a: BBox, b: BBox) -> float:
    """1 - GIoU, in [0, 2]."""
    from .geometry import giou as _giou

    return 1.0 - _giou(a, b)


def giou_loss_grad(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Subgradient of giou_loss w.r.t. both boxes as (x1, y1, x2, y2) arrays."""
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    ga = np.zeros(4)
    gb = np.zeros(4)

    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = iw * ih if (iw > 0 and ih > 0) else 0.0
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    hw = max(ax2, bx2) - min(ax1, bx1)
    hh = max(ay2, by2) - min(ay1, by1)
    hull = hw * hh
    if hull <= 0.0 or union <= 0.0:
        return ga, gb

    # d(inter) terms exist only when the overlap is strictly positive.
    dI = np.zeros((2, 4))
    if inter > 0.0:
        if ax2 < bx2:
            dI[0, 2] += ih
        else:
            dI[1, 2] += ih
        if ax1 > bx1:
            dI[0, 0] -= ih
        else:
            dI[1, 0] -= ih
        if ay2 < by2:
            dI[0, 3] += iw
        else:
            dI[1, 3] += iw
        if ay1 > by1:
            dI[0, 1] -= iw
        else:
            dI[1, 1] -= iw
    dA = np.zeros((2, 4))
    dA[0] = [-(ay2 - ay1), -(ax2 - ax1), (ay2 - ay1), (ax2 - ax1)]
    dA[1] = [-(by2 - by1), -(bx2 - bx1), (by2 - by1), (bx2 - bx1)]
    dU = dA.copy()
    dU -= dI
    dH = np.zeros((2, 4))
    if ax2 > bx2:
        dH[0, 2] += hh
    else:
        dH[1, 2] += hh
    if ax1 < bx1:
        dH[0, 0] -= hh
    else:
        dH[1, 0] -= hh
    if ay2 > by2:
        dH[0, 3] += hw
    else:
        dH[1, 3] += hw
    if ay1 < by1:
        dH[0, 1] -= hw
    else:
        dH[1, 1] -= hw

    # giou = inter/union - (hull - union)/hull; loss = 1 - giou.
    dgiou = (dI / union - inter * dU / union ** 2
             + dU / hull - union * dH / hull ** 2)
    ga, gb = -dgiou[0], -dgiou[1]
    return ga, gb


class AdamW:
    """Adam with decoupled weight decay; owns all per-parameter state."""

    def __init__(self, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[DenseArray]):
        if self._m is None:
            self._m = [np.zeros_like(p.data) for p in params]
            self._v = [np.zeros_like(p.data) for p in params]
        if len(self._m) != len(params):
            raise ValueError("parameter list changed between steps")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(params, self._m, self._v):
            g = p.grad
            if g is None:
                raise ValueError("parameter has no gradient buffer")
            if g.shape != p.data.shape:
                raise ValueError("gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)


def optimizer_step(params: list[DenseArray], state: AdamW):
    """One decoupled-weight-decay adaptive-moment update; reads param grads."""
    state.step(params)


def grad_check(f, params: list[DenseArray], eps: float = 1e-5,
               forward_only=None, coord_limit: int | None = None,
               coord_seed: int = 0) -> float:
    """Compare analytic gradients against central finite differences.

    ``f()`` must run forward and backward, leaving gradients in ``params``
    and returning the scalar loss. ``forward_only`` may supply a cheaper
    loss-only callable used for the difference evaluations. By default every
    coordinate is probed; ``coord_limit`` caps the probes at a seeded random
    subset (at least one per parameter) for large compositions. Returns the
    worst relative error max |g_fd - g| / max(1e-8, |g_fd| + |g|).
    """
    for p in params:
        p.zero_grad()
    loss = float(f())
    if not math.isfinite(loss):
        raise ValueError(f"non-finite loss in grad_check: {loss}")
    analytic = [p.grad.copy() for p in params]
    probe = forward_only if forward_only is not None else f

    coords: list[tuple[int, int]] = [
        (pi, i) for pi, p in enumerate(params) for i in range(p.data.size)]
    if coord_limit is not None and coord_limit < len(coords):
        rng = np.random.default_rng(coord_seed)
        picked = set(rng.choice(len(coords), size=coord_limit, replace=False))
        # Keep at least one probe per parameter tensor.
        offset = 0
        for pi, p in enumerate(params):
            span = range(offset, offset + p.data.size)
            if not any(i in picked for i in span):
                picked.add(offset + int(rng.integers(p.data.size)))
            offset += p.data.size
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    for pi, i in coords:
        flat = params[pi].data.reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        f_plus = float(probe())
        flat[i] = old - eps
        f_minus = float(probe())
        flat[i] = old
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError("non-finite loss during finite differences")
        g_fd = (f_plus - f_minus) / (2.0 * eps)
        g = analytic[pi].reshape(-1)[i]
        err = abs(g_fd - g) / max(1e-8, abs(g_fd) + abs(g))
        worst = max(worst, err)
    return worst


def patch_embed(frame: np.ndarray, patch: int, layer: LinearLayer) -> np.ndarray:
    """Project non-overlapping patch x patch blocks of a [H, W, c] frame to d channels."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3:
        raise ValueError("frame must be [H, W, c]")
    h, w, c = frame.shape
    if h % patch or w % patch:
        raise ValueError(f"frame {h}x{w} not divisible by patch {patch}")
    if layer.in_dim != patch * patch * c:
        raise ValueError("projection input dim does not match patch size")
    hp, wp = h // patch, w // patch
    blocks = frame.reshape(hp, patch, wp, patch, c).transpose(0, 2, 1, 3, 4)
    flat = blocks.reshape(hp * wp, patch * patch * c)
    return layer.forward(flat).reshape(hp, wp, layer.out_dim)


def patch_embed_backward(frame: np.ndarray, patch: int, layer: LinearLayer,
                         gout: np.ndarray) -> None:
    """Accumulate projection-parameter grads for :func:`patch_embed`."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w, c = frame.shape
    hp, wp = h // patch, w // patch
    blocks = frame.reshape(hp, patch, wp, patch, c).transpose(0, 2, 1, 3, 4)
    flat = blocks.reshape(hp * wp, patch * patch * c)
    layer.backward(flat, np.asarray(gout, dtype=np.float64).reshape(hp * wp, -1))
