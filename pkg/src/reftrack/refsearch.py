"""Track-state prediction by deformable co-attention over joint feature memory.

Each previous track contributes one reference point; every layer derives
per-head sampling offsets and attention weights from the reference
embedding, samples the value-projected multi-scale memory bilinearly at the
offset locations, and aggregates. The final layer feeds a center head
(residual in logit space, squashed back into the unit square) and an
appearance head (L2-normalized); intermediate layers feed auxiliary center
heads for deep supervision. All of it is differentiable through hand-written
backward passes, including gradients into the memory grids.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import ImageSize
from .numerics import (
    DenseArray,
    LinearLayer,
    MLPHead,
    bilinear_sample_batch,
    bilinear_sample_batch_backward,
    l2_normalize,
    l2_normalize_backward,
    sigmoid,
    sigmoid_focal_loss_batch,
    softmax,
    softmax_backward,
)

_POINT_EPS = 1e-6
_PE_TEMPERATURE = 10000.0


@dataclass
class RSConfig:
    """Shape and behaviour knobs for the reference-search module."""

    feature_dim: int = 256        # channels of the memory grids
    embed_dim: int = 64           # appearance embedding length
    num_layers: int = 6
    num_heads: int = 4
    num_points: int = 12          # sampling points per head, across all scales
    num_scales: int = 3
    use_appearance: bool = True   # fold track appearance into the reference embedding
    offset_reach: float = 4.0     # cells of sampling reach per level at unit offset
    num_identities: int = 0       # identity classes for the training-only classifier

    def __post_init__(self):
        if self.feature_dim % 4:
            raise ValueError("feature_dim must be divisible by 4 (position encoding)")
        if self.feature_dim % self.num_heads:
            raise ValueError("feature_dim must be divisible by num_heads")
        if self.num_points % self.num_scales:
            raise ValueError("num_points must be divisible by num_scales")
        if self.num_layers < 1:
            raise ValueError("need at least one layer")


class FeatureMemory:
    """Multi-scale feature grids for one frame (or the sum of two).

    ``levels`` holds [H, W, d] grids ordered finest first; ``image`` gives
    the pixel frame the normalized coordinates refer to.
    """

    def __init__(self, levels: list[DenseArray], image: ImageSize):
        if not levels:
            raise ValueError("memory needs at least one level")
        d = levels[0].data.shape[2]
        prev_cells = None
        for lvl in levels:
            if lvl.data.ndim != 3 or lvl.data.shape[2] != d:
                raise ValueError("all levels must be [H, W, d] with a shared d")
            cells = lvl.data.shape[0] * lvl.data.shape[1]
            if prev_cells is not None and cells > prev_cells:
                raise ValueError("levels must be ordered finest to coarsest")
            prev_cells = cells
        self.levels = levels
        self.image = image

    @property
    def channels(self) -> int:
        return self.levels[0].data.shape[2]


def joint_memory(m_prev: FeatureMemory, m_cur: FeatureMemory) -> FeatureMemory:
    """Elementwise sum of two frames' memories (commutative).

    The result tracks gradients when the current frame does; training blocks
    the previous-frame branch, so its grads are simply never routed.
    """
    if len(m_prev.levels) != len(m_cur.levels):
        raise ValueError("memories have different level counts")
    levels = []
    for a, b in zip(m_prev.levels, m_cur.levels):
        if a.data.shape != b.data.shape:
            raise ValueError(f"level shape mismatch: {a.data.shape} vs {b.data.shape}")
        levels.append(DenseArray(a.data + b.data,
                                 track_grad=b.grad is not None))
    return FeatureMemory(levels, m_cur.image)


@dataclass
class Reference:
    """One previous track as seen by the predictor."""

    point: np.ndarray                 # normalized center in [0, 1]^2
    appearance: np.ndarray | None     # stored track embedding [e]
    track_id: int
    embedding: np.ndarray | None = None  # layer-1 reference embedding, set by forward


@dataclass
class RSPrediction:
    """Per-reference prediction: new center, appearance, per-layer centers."""

    center: np.ndarray                # normalized [2]
    appearance: np.ndarray            # L2-normalized [e]
    aux_centers: list = field(default_factory=list)
    track_id: int = -1


class RSLayerParams:
    """Projections of one co-attention layer."""

    def __init__(self, offset_proj, weight_proj, value_proj, out_proj, update_proj):
        self.offset_proj = offset_proj
        self.weight_proj = weight_proj
        self.value_proj = value_proj
        self.out_proj = out_proj
        self.update_proj = update_proj

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: RSConfig) -> "RSLayerParams":
        d = cfg.feature_dim
        heads, pts = cfg.num_heads, cfg.num_points
        offset = LinearLayer.create(rng, d, heads * pts * 2, zero=True)
        offset.bias.data[:] = _initial_offset_bias(cfg).reshape(-1)
        weight = LinearLayer.create(rng, d, heads * pts, zero=True)
        value = LinearLayer.create(rng, d, d)
        out = LinearLayer.create(rng, d, d)
        update = LinearLayer.create(rng, d, d, zero=True)
        return cls(offset, weight, value, out, update)

    def params(self) -> list[DenseArray]:
        out = []
        for layer in (self.offset_proj, self.weight_proj, self.value_proj,
                      self.out_proj, self.update_proj):
            out.extend(layer.params())
        return out


def _initial_offset_bias(cfg: RSConfig) -> np.ndarray:
    """Spread the initial sampling points on per-head rays, max radius 1."""
    heads, pts = cfg.num_heads, cfg.num_points
    pps = pts // cfg.num_scales
    bias = np.zeros((heads, pts, 2))
    for h in range(heads):
        angle = 2.0 * math.pi * h / heads + math.pi / (2.0 * heads)
        direction = np.array([math.cos(angle), math.sin(angle)])
        for p in range(pts):
            k = p % pps
            bias[h, p] = direction * (k + 1.0) / pps
    return bias


def position_encoding(points: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of points in [0, 1]^2 into ``dim`` features.

    Accepts a single [2] point or an [N, 2] batch.
    """
    if dim % 4:
        raise ValueError("encoding dim must be divisible by 4")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    half = dim // 2
    n_freq = half // 2
    freqs = _PE_TEMPERATURE ** (2.0 * np.arange(n_freq) / half)
    out = np.empty((pts.shape[0], dim))
    for axis in range(2):
        phase = pts[:, axis:axis + 1] * 2.0 * math.pi / freqs[None, :]
        base = axis * half
        out[:, base:base + half:2] = np.sin(phase)
        out[:, base + 1:base + half:2] = np.cos(phase)
    return out[0] if np.asarray(points).ndim == 1 else out


class RSModule:
    """Multi-layer reference-search predictor with its prediction heads."""

    def __init__(self, cfg: RSConfig, point_proj, appearance_proj, layers,
                 center_head, aux_center_heads, appearance_head, identity_head):
        self.cfg = cfg
        self.point_proj = point_proj
        self.appearance_proj = appearance_proj
        self.layers = layers
        self.center_head = center_head
        self.aux_center_heads = aux_center_heads
        self.appearance_head = appearance_head
        self.identity_head = identity_head

    @classmethod
    def build(cls, cfg: RSConfig, seed: int = 0) -> "RSModule":
        rng = np.random.default_rng(seed)
        d, e = cfg.feature_dim, cfg.embed_dim
        point_proj = LinearLayer.create(rng, d, d)
        appearance_proj = (LinearLayer.create(rng, e, d)
                           if cfg.use_appearance else None)
        layers = [RSLayerParams.create(rng, cfg) for _ in range(cfg.num_layers)]
        center_head = MLPHead.create(rng, [d, d, 2], zero_last=True)
        aux_heads = [MLPHead.create(rng, [d, d, 2], zero_last=True)
                     for _ in range(cfg.num_layers - 1)]
        appearance_head = MLPHead.create(rng, [d, d, e])
        identity_head = (LinearLayer.create(rng, e, cfg.num_identities)
                         if cfg.num_identities > 0 else None)
        return cls(cfg, point_proj, appearance_proj, layers, center_head,
                   aux_heads, appearance_head, identity_head)

    def params(self) -> list[DenseArray]:
        out = list(self.point_proj.params())
        if self.appearance_proj is not None:
            out.extend(self.appearance_proj.params())
        for layer in self.layers:
            out.extend(layer.params())
        out.extend(self.center_head.params())
        for head in self.aux_center_heads:
            out.extend(head.params())
        out.extend(self.appearance_head.params())
        if self.identity_head is not None:
            out.extend(self.identity_head.params())
        return out

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()


def _initial_embeddings(module: RSModule, refs, cache: dict | None) -> np.ndarray:
    d = module.cfg.feature_dim
    points = np.stack([np.asarray(r.point, dtype=np.float64) for r in refs])
    pe = position_encoding(points, d)
    emb = module.point_proj.forward(pe)
    apps = None
    if module.appearance_proj is not None:
        e = module.cfg.embed_dim
        apps = np.stack([
            r.appearance if r.appearance is not None else np.zeros(e)
            for r in refs
        ])
        emb = emb + module.appearance_proj.forward(apps)
    if cache is not None:
        cache["pe"] = pe
        cache["apps"] = apps
    return emb


def rs_layer(embs: np.ndarray, points: np.ndarray, memory: FeatureMemory,
             params: RSLayerParams, cfg: RSConfig, cache: dict | None = None):
    """One co-attention layer.

    Per reference and head: project the embedding to sampling offsets and
    attention weights, softmax the weights over this head's points, sample
    the value-projected grids at point + offset (offsets scaled per level to
    ``offset_reach`` cells), aggregate, concatenate heads, output-project.
    Returns (aggregated [N, d], updated embeddings [N, d], weights
    [N, heads, points]).
    """
    n = embs.shape[0]
    d, heads, pts = cfg.feature_dim, cfg.num_heads, cfg.num_points
    pps = pts // cfg.num_scales
    k = d // heads
    if len(memory.levels) != cfg.num_scales:
        raise ValueError(f"memory has {len(memory.levels)} levels, "
                         f"config expects {cfg.num_scales}")
    if memory.channels != d:
        raise ValueError(f"memory channels {memory.channels} != feature dim {d}")

    offs = params.offset_proj.forward(embs).reshape(n, heads, pts, 2)
    w_logits = params.weight_proj.forward(embs).reshape(n, heads, pts)
    attn = softmax(w_logits, axis=-1)

    vgrids = []
    level_scales = []
    for lvl in memory.levels:
        hh, ww, _ = lvl.data.shape
        vgrids.append(params.value_proj.forward(
            lvl.data.reshape(-1, d)).reshape(hh, ww, d))
        level_scales.append(np.array([cfg.offset_reach / ww,
                                      cfg.offset_reach / hh]))

    locs = np.zeros((n, heads, pts, 2))
    sampled = np.zeros((n, heads, pts, k))
    for lvl in range(cfg.num_scales):
        sl = slice(lvl * pps, (lvl + 1) * pps)
        loc = points[:, None, None, :] + offs[:, :, sl, :] * level_scales[lvl]
        locs[:, :, sl, :] = loc
        full = bilinear_sample_batch(vgrids[lvl], loc.reshape(-1, 2))
        full = full.reshape(n, heads, pps, d)
        for h in range(heads):
            sampled[:, h, sl, :] = full[:, h, :, h * k:(h + 1) * k]

    head_agg = (attn[..., None] * sampled).sum(axis=2)
    concat = head_agg.reshape(n, d)
    agg = params.out_proj.forward(concat)
    new_embs = embs + params.update_proj.forward(agg)

    if cache is not None:
        cache.update(embs=embs, offs=offs, attn=attn, vgrids=vgrids,
                     locs=locs, sampled=sampled, concat=concat, agg=agg,
                     level_scales=level_scales)
    return agg, new_embs, attn


def _rs_layer_backward(cache: dict, params: RSLayerParams, memory: FeatureMemory,
                       cfg: RSConfig, g_new_embs: np.ndarray) -> np.ndarray:
    n = g_new_embs.shape[0]
    d, heads, pts = cfg.feature_dim, cfg.num_heads, cfg.num_points
    pps = pts // cfg.num_scales
    k = d // heads
    embs, offs, attn = cache["embs"], cache["offs"], cache["attn"]
    vgrids, locs, sampled = cache["vgrids"], cache["locs"], cache["sampled"]
    concat, agg = cache["concat"], cache["agg"]
    level_scales = cache["level_scales"]

    g_embs = g_new_embs.copy()
    g_agg = params.update_proj.backward(agg, g_new_embs)
    g_concat = params.out_proj.backward(concat, g_agg)
    g_head_agg = g_concat.reshape(n, heads, k)

    g_attn = (g_head_agg[:, :, None, :] * sampled).sum(axis=-1)
    g_sampled = attn[..., None] * g_head_agg[:, :, None, :]
    g_wl = softmax_backward(attn, g_attn, axis=-1)
    g_embs += params.weight_proj.backward(embs, g_wl.reshape(n, heads * pts))

    vgrid_grads = [np.zeros_like(vg) for vg in vgrids]
    g_offs = np.zeros_like(offs)
    for lvl in range(cfg.num_scales):
        sl = slice(lvl * pps, (lvl + 1) * pps)
        g_full = np.zeros((n, heads, pps, d))
        for h in range(heads):
            g_full[:, h, :, h * k:(h + 1) * k] = g_sampled[:, h, sl, :]
        gpts = bilinear_sample_batch_backward(
            vgrids[lvl], locs[:, :, sl, :].reshape(-1, 2),
            g_full.reshape(-1, d), vgrid_grads[lvl])
        g_offs[:, :, sl, :] = gpts.reshape(n, heads, pps, 2) * level_scales[lvl]
    g_embs += params.offset_proj.backward(embs, g_offs.reshape(n, heads * pts * 2))

    for lvl, (grid, ggrid) in enumerate(zip(memory.levels, vgrid_grads)):
        hh, ww, _ = grid.data.shape
        g_flat = params.value_proj.backward(grid.data.reshape(-1, d),
                                            ggrid.reshape(-1, d))
        if grid.grad is not None:
            grid.grad += g_flat.reshape(hh, ww, d)
    return g_embs


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _POINT_EPS, 1.0 - _POINT_EPS)
    return np.log(x / (1.0 - x))


def _squash_center(points: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    # Residual in logit space: a zero offset reproduces the reference point.
    return sigmoid(_logit(points) + offsets)


def rs_forward(module: RSModule, refs, memory: FeatureMemory,
               keep_cache: bool = False):
    """Run the full stack; one prediction per reference, order-aligned.

    With ``keep_cache`` the returned value is (predictions, cache) where the
    cache carries everything :func:`rs_backward` needs.
    """
    if len(refs) == 0:
        return ([], None) if keep_cache else []
    cache: dict = {"layers": [], "aux": []}
    points = np.stack([np.asarray(r.point, dtype=np.float64) for r in refs])
    emb = _initial_embeddings(module, refs, cache)
    for ref, row in zip(refs, emb):
        ref.embedding = row.copy()

    aux_centers = []
    for li, layer in enumerate(module.layers):
        layer_cache: dict = {}
        _, emb, _ = rs_layer(emb, points, memory, layer, module.cfg,
                             cache=layer_cache)
        cache["layers"].append(layer_cache)
        if li < len(module.layers) - 1:
            head_cache: list = []
            offs = module.aux_center_heads[li].forward(emb, cache=head_cache)
            centers = _squash_center(points, offs)
            cache["aux"].append((head_cache, centers, emb))
            aux_centers.append(centers)

    center_cache: list = []
    center_offs = module.center_head.forward(emb, cache=center_cache)
    centers = _squash_center(points, center_offs)

    app_cache: list = []
    app_raw = module.appearance_head.forward(emb, cache=app_cache)
    appearance = np.stack([l2_normalize(row) for row in app_raw])

    cache.update(points=points, final_emb=emb, center_cache=center_cache,
                 centers=centers, app_cache=app_cache, app_raw=app_raw,
                 appearance=appearance)

    preds = []
    for i, ref in enumerate(refs):
        preds.append(RSPrediction(
            center=centers[i].copy(),
            appearance=appearance[i].copy(),
            aux_centers=[a[i].copy() for a in aux_centers],
            track_id=ref.track_id,
        ))
    return (preds, cache) if keep_cache else preds


def _loss_core(module: RSModule, centers, aux_centers_stacks, appearance,
               gts, lambda_reg, lambda_id, aux_weight) -> float:
    targets = np.stack([np.asarray(t, dtype=np.float64) for t, _ in gts])
    total = lambda_reg * float(np.abs(centers - targets).mean(axis=1).sum())
    for aux in aux_centers_stacks:
        total += aux_weight * lambda_reg * float(
            np.abs(aux - targets).mean(axis=1).sum())
    if module.identity_head is not None:
        logits = module.identity_head.forward(appearance)
        identities = [int(i) for _, i in gts]
        id_loss, _ = sigmoid_focal_loss_batch(np.atleast_2d(logits), identities)
        total += lambda_id * id_loss
    return total


def rs_loss(module: RSModule, preds, gts, lambda_reg: float = 5.0,
            lambda_id: float = 0.5, aux_weight: float = 1.0) -> float:
    """Supervision for one associated reference/target set.

    ``gts`` pairs (normalized target center, identity index) one-to-one with
    the predictions; an empty set contributes zero. Center terms are
    per-reference L1 summed over references with weight ``lambda_reg``
    (auxiliary-layer centers scaled additionally by ``aux_weight``); identity
    terms are sigmoid focal through the identity classifier.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} targets")
    if not preds:
        return 0.0
    centers = np.stack([p.center for p in preds])
    n_aux = len(preds[0].aux_centers)
    aux_stacks = [np.stack([p.aux_centers[a] for p in preds])
                  for a in range(n_aux)]
    appearance = np.stack([p.appearance for p in preds])
    return _loss_core(module, centers, aux_stacks, appearance, gts,
                      lambda_reg, lambda_id, aux_weight)


def rs_backward(module: RSModule, cache: dict, memory: FeatureMemory, gts,
                lambda_reg: float = 5.0, lambda_id: float = 0.5,
                aux_weight: float = 1.0) -> None:
    """Backpropagate :func:`rs_loss` through a cached forward pass.

    Accumulates into every module parameter's grad buffer and into
    ``memory.levels[i].grad`` where those buffers exist.
    """
    points = cache["points"]
    centers = cache["centers"]
    appearance = cache["appearance"]
    n = points.shape[0]
    if n != len(gts):
        raise ValueError("cache/target cardinality mismatch")

    targets = np.stack([np.asarray(t, dtype=np.float64) for t, _ in gts])
    identities = [int(i) for _, i in gts]

    # Per-reference mean-absolute center terms: d/dc = sign / 2.
    g_centers = lambda_reg * np.sign(centers - targets) / centers.shape[1]
    g_center_offs = g_centers * centers * (1.0 - centers)
    g_emb = module.center_head.backward(cache["center_cache"], g_center_offs)

    g_app = np.zeros_like(appearance)
    if module.identity_head is not None:
        logits = np.atleast_2d(module.identity_head.forward(appearance))
        _, dlogits = sigmoid_focal_loss_batch(logits, identities)
        g_app = module.identity_head.backward(appearance, lambda_id * dlogits)
    g_app_raw = np.stack([
        l2_normalize_backward(cache["app_raw"][i], g_app[i]) for i in range(n)
    ])
    g_emb = g_emb + module.appearance_head.backward(cache["app_cache"], g_app_raw)

    for li in range(len(module.layers) - 1, -1, -1):
        if li < len(module.layers) - 1:
            head_cache, aux_centers, _ = cache["aux"][li]
            g_aux = (aux_weight * lambda_reg
                     * np.sign(aux_centers - targets) / aux_centers.shape[1])
            g_aux_offs = g_aux * aux_centers * (1.0 - aux_centers)
            g_emb = g_emb + module.aux_center_heads[li].backward(head_cache,
                                                                 g_aux_offs)
        g_emb = _rs_layer_backward(cache["layers"][li], module.layers[li],
                                   memory, module.cfg, g_emb)

    module.point_proj.backward(cache["pe"], g_emb)
    if module.appearance_proj is not None:
        module.appearance_proj.backward(cache["apps"], g_emb)


def rs_training_loss(module: RSModule, refs, memory: FeatureMemory, gts,
                     lambda_reg: float = 5.0, lambda_id: float = 0.5,
                     aux_weight: float = 1.0) -> float:
    """Forward + backward in one call; returns the loss."""
    if not refs:
        return 0.0
    if len(refs) != len(gts):
        raise ValueError(f"{len(refs)} references vs {len(gts)} targets")
    _, cache = rs_forward(module, refs, memory, keep_cache=True)
    aux_stacks = [centers for _, centers, _ in cache["aux"]]
    loss = _loss_core(module, cache["centers"], aux_stacks,
                      cache["appearance"], gts, lambda_reg, lambda_id,
                      aux_weight)
    rs_backward(module, cache, memory, gts, lambda_reg, lambda_id, aux_weight)
    return loss


def select_references(tracks, img: ImageSize):
    """Pick the tracks that act as references this frame.

    Active and lost tracks whose stored center lies inside the image become
    references; tracks whose center has left the image are excluded and
    returned separately so the matcher can route them to overlap-only
    matching. Unconfirmed and removed tracks never participate.
    """
    from .tracker import TrackStatus  # deferred to avoid an import cycle

    refs: list[Reference] = []
    excluded = []
    for track in tracks:
        if track.status not in (TrackStatus.ACTIVE, TrackStatus.LOST):
            continue
        cx, cy = float(track.center[0]), float(track.center[1])
        if not (0.0 <= cx <= img.width and 0.0 <= cy <= img.height):
            excluded.append(track)
            continue
        refs.append(Reference(
            point=np.array([cx / img.width, cy / img.height]),
            appearance=None if track.embedding is None
            else np.asarray(track.embedding, dtype=np.float64),
            track_id=track.id,
        ))
    return refs, excluded


_CKPT_MAGIC = b"RSCKPT01"
_CKPT_VERSION = 1


def save_checkpoint(path, module: RSModule, patch_layers: list[LinearLayer],
                    patch_sizes: list[int], channels: int) -> None:
    """Serialize the module plus the patch-embedding stem to one binary file."""
    cfg = module.cfg
    blocks = [p.data for p in module.params()]
    for layer in patch_layers:
        blocks.extend(p.data for p in layer.params())
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack(
            "<10I", cfg.feature_dim, cfg.embed_dim, cfg.num_layers,
            cfg.num_heads, cfg.num_points, cfg.num_scales,
            1 if cfg.use_appearance else 0, cfg.num_identities,
            channels, len(patch_sizes)))
        fh.write(struct.pack(f"<{len(patch_sizes)}I", *patch_sizes))
        fh.write(struct.pack("<d", cfg.offset_reach))
        fh.write(struct.pack("<I", len(blocks)))
        for block in blocks:
            fh.write(struct.pack("<I", block.ndim))
            fh.write(struct.pack(f"<{block.ndim}I", *block.shape))
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.

    Returns (module, patch_layers, patch_sizes, channels).
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (d, e, layers, heads, points, scales, use_app, num_ids, channels,
         n_patch) = struct.unpack("<10I", fh.read(40))
        patch_sizes = list(struct.unpack(f"<{n_patch}I", fh.read(4 * n_patch)))
        (reach,) = struct.unpack("<d", fh.read(8))
        cfg = RSConfig(feature_dim=d, embed_dim=e, num_layers=layers,
                       num_heads=heads, num_points=points, num_scales=scales,
                       use_appearance=bool(use_app), offset_reach=reach,
                       num_identities=num_ids)
        module = RSModule.build(cfg, seed=0)
        patch_layers = []
        rng = np.random.default_rng(0)
        for ps in patch_sizes:
            patch_layers.append(LinearLayer.create(rng, ps * ps * channels, d))

        targets = list(module.params())
        for layer in patch_layers:
            targets.extend(layer.params())
        (count,) = struct.unpack("<I", fh.read(4))
        if count != len(targets):
            raise ValueError(f"checkpoint has {count} blocks, expected {len(targets)}")
        for target in targets:
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            if tuple(shape) != tuple(target.data.shape):
                raise ValueError(f"block shape {shape} != expected {target.data.shape}")
            raw = fh.read(8 * int(np.prod(shape)))
            target.data[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return module, patch_layers, patch_sizes, channels
