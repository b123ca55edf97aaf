"""Independent reference implementations used as test oracles.

Everything here is deliberately written as direct formula enumeration,
sharing no code path with the package implementations it checks.
"""

import itertools
import math

import numpy as np


def brute_force_assignment(cost: np.ndarray):
    """Exhaustive minimum-cost maximum-cardinality matching.

    Returns (best_cost, best_pairs) where best_pairs is the
    lexicographically smallest optimal pair sequence. +inf entries are
    forbidden.
    """
    m, n = cost.shape
    best_cost = None
    best_card = -1
    best_pairs = None
    rows = list(range(m))
    for k in range(min(m, n), -1, -1):
        if best_card > k:
            break
        for row_subset in itertools.combinations(rows, k):
            for col_perm in itertools.permutations(range(n), k):
                pairs = sorted(zip(row_subset, col_perm))
                if any(math.isinf(cost[r, c]) for r, c in pairs):
                    continue
                total = math.fsum(cost[r, c] for r, c in pairs)
                key = (total, pairs)
                if (best_card < k or best_cost is None
                        or (best_card == k
                            and (total < best_cost
                                 or (total == best_cost and pairs < best_pairs)))):
                    if best_card < k:
                        best_cost, best_pairs = total, pairs
                    else:
                        best_cost, best_pairs = key
                    best_card = k
        if best_pairs is not None and best_card == k:
            # Maximum cardinality found at this k; smaller k can't win.
            break
    if best_pairs is None:
        return 0.0, []
    return best_cost, best_pairs


def direct_bilinear(grid: np.ndarray, p) -> np.ndarray:
    """Direct four-corner interpolation with half-cell centers, zero padding."""
    h, w, d = grid.shape
    u = p[0] * w - 0.5
    v = p[1] * h - 0.5
    x0, y0 = math.floor(u), math.floor(v)
    out = np.zeros(d)
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            wx = 1.0 - abs(u - xx)
            wy = 1.0 - abs(v - yy)
            if wx <= 0 or wy <= 0:
                continue
            if 0 <= yy < h and 0 <= xx < w:
                out += wx * wy * grid[yy, xx]
    return out


def dense_reference_attention(embs, points, level_grids, params, cfg):
    """Explicit enumeration of one co-attention layer.

    Computes, per reference and head, the softmax-weighted sum over every
    sampling point of the bilinearly interpolated value projection, then the
    concatenation and output projection, entirely with scalar loops.
    """
    n = embs.shape[0]
    d, heads, pts = cfg.feature_dim, cfg.num_heads, cfg.num_points
    pps = pts // cfg.num_scales
    k = d // heads
    w_off = params.offset_proj.weight.data
    b_off = params.offset_proj.bias.data
    w_w = params.weight_proj.weight.data
    b_w = params.weight_proj.bias.data
    w_v = params.value_proj.weight.data
    b_v = params.value_proj.bias.data
    w_o = params.out_proj.weight.data
    b_o = params.out_proj.bias.data

    out = np.zeros((n, d))
    for i in range(n):
        raw_off = (w_off @ embs[i] + b_off).reshape(heads, pts, 2)
        raw_w = (w_w @ embs[i] + b_w).reshape(heads, pts)
        concat = np.zeros(d)
        for h in range(heads):
            exps = np.exp(raw_w[h] - raw_w[h].max())
            weights = exps / exps.sum()
            acc = np.zeros(k)
            for p in range(pts):
                lvl = p // pps
                grid = level_grids[lvl]
                gh, gw, _ = grid.shape
                loc = (points[i]
                       + raw_off[h, p] * np.array([cfg.offset_reach / gw,
                                                   cfg.offset_reach / gh]))
                value_grid = np.einsum("oc,hwc->hwo", w_v, grid) + b_v
                sampled = direct_bilinear(value_grid, loc)
                acc += weights[p] * sampled[h * k:(h + 1) * k]
            concat[h * k:(h + 1) * k] = acc
        out[i] = w_o @ concat + b_o
    return out


def idf1_brute_force(overlaps: dict, gt_ids, hyp_ids, n_gt: int, n_hyp: int) -> float:
    """IDF1 by enumerating every injective gt-to-hypothesis id mapping."""
    gt_ids = list(gt_ids)
    hyp_ids = list(hyp_ids)
    best = 0
    for k in range(min(len(gt_ids), len(hyp_ids)) + 1):
        for gsub in itertools.combinations(gt_ids, k):
            for hperm in itertools.permutations(hyp_ids, k):
                total = sum(overlaps.get((g, h), 0)
                            for g, h in zip(gsub, hperm))
                best = max(best, total)
    denom = n_gt + n_hyp
    return 2.0 * best / denom if denom else 0.0
