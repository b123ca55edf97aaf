"""Min-cost bipartite assignment and set-based detection supervision.

The solver is a dense shortest-augmenting-path method with potentials on a
square, padded cost matrix. Forbidden pairs are encoded as +inf and padded
out with a dominating constant, which makes the solver maximize matching
cardinality first and minimize cost second. Among all optima the returned
assignment is the lexicographically smallest pair sequence, selected on the
zero-reduced-cost subgraph of the optimal duals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BBox, ImageSize, giou
from .numerics import _focal_term, l1_loss, sigmoid


def _solve_square(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense augmenting-path assignment on an n x n matrix.

    Returns (row_of_col, u, v) where u, v are dual potentials satisfying
    cost[r, c] - u[r] - v[c] >= 0 with equality on matched edges.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    # p[j] = row matched to column j; column n is the virtual root.
    p = np.full(n + 1, -1, dtype=np.int64)
    for i in range(n):
        p[n] = i
        j0 = n
        minv = np.full(n + 1, np.inf)
        way = np.full(n + 1, -1, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0, :] - u[i0] - v[:n]
            live = ~used[:n]
            better = live & (cur < minv[:n])
            minv[:n][better] = cur[better]
            way[:n][better] = j0
            free = np.where(live)[0]
            if free.size == 0:
                raise ValueError("assignment problem has no finite solution")
            jbest = free[np.argmin(minv[free])]
            delta = minv[jbest]
            if not math.isfinite(delta):
                raise ValueError("assignment problem has no finite solution")
            u[p[used]] += delta
            v[used] -= delta
            minv[:n][~used[:n]] -= delta
            j0 = jbest
            if p[j0] == -1:
                break
        while j0 != n:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    return p[:n], u[:n], v[:n]


def _try_augment(r: int, adj: list[np.ndarray], minv_col: np.ndarray,
                 row_col: np.ndarray, fixed_col: np.ndarray,
                 seen: np.ndarray) -> bool:
    """Kuhn augmenting step over non-fixed columns; mutates only on success."""
    for c in adj[r]:
        c = int(c)
        if fixed_col[c] or seen[c]:
            continue
        seen[c] = True
        owner = int(minv_col[c])
        if owner == -1 or _try_augment(owner, adj, minv_col, row_col,
                                       fixed_col, seen):
            row_col[r] = c
            minv_col[c] = r
            return True
    return False


def _lex_refine(adj: list[np.ndarray], jv_row_col: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching within the tight graph.

    Rows are fixed in index order to the smallest tight column that still
    admits a perfect matching of the remaining rows; feasibility of each
    candidate is decided by one augmenting-path search that reroutes the
    column's current owner.
    """
    size = jv_row_col.shape[0]
    row_col = jv_row_col.copy()
    col_row = np.full(size, -1, dtype=np.int64)
    for r in range(size):
        col_row[row_col[r]] = r
    fixed_col = np.zeros(size, dtype=bool)
    for r in range(size):
        c_star = int(row_col[r])
        for cand in adj[r]:
            cand = int(cand)
            if cand >= c_star:
                break
            if fixed_col[cand]:
                continue
            owner = int(col_row[cand])
            # Free c_star; the displaced owner must reach it (the only free
            # column) through alternating tight edges, else revert.
            seen = np.zeros(size, dtype=bool)
            seen[cand] = True
            col_row[c_star] = -1
            if _try_augment(owner, adj, col_row, row_col, fixed_col, seen):
                row_col[r] = cand
                col_row[cand] = r
                break
            col_row[c_star] = r
        fixed_col[row_col[r]] = True
    return row_col


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost bipartite assignment with deterministic tie-breaking.

    ``cost`` is an M x N matrix; +inf entries forbid a pair. The result
    matches min(M, N) pairs unless forbidden entries force fewer, in which
    case the largest feasible matching of minimal cost is returned. Among
    equal-cost optima the lexicographically smallest (row, col) sequence
    wins. NaN or -inf entries raise.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    m, n = c.shape
    if m == 0 or n == 0:
        return []
    if np.isnan(c).any() or np.isneginf(c).any():
        raise ValueError("cost entries must be finite or +inf")

    forbidden = np.isposinf(c)
    finite = c[~forbidden]
    finite_max = float(np.abs(finite).max()) if finite.size else 0.0
    big = 2.0 * (float(np.abs(finite).sum()) + 1.0)
    size = max(m, n)
    padded = np.zeros((size, size))
    padded[:m, :n] = np.where(forbidden, big, c)

    col_row, u, v = _solve_square(padded)
    jv_row_col = np.full(size, -1, dtype=np.int64)
    for j in range(size):
        jv_row_col[col_row[j]] = j

    # Every optimal assignment lives on zero-reduced-cost edges.
    reduced = padded - u[:, None] - v[None, :]
    tight = np.abs(reduced) <= 1e-9 * max(1.0, finite_max)
    for r in range(size):
        tight[r, jv_row_col[r]] = True
    adj = [np.where(tight[r])[0] for r in range(size)]

    refined = _lex_refine(adj, jv_row_col)

    def real_pairs(row_col: np.ndarray) -> list[tuple[int, int]]:
        out = []
        for r in range(m):
            cc = int(row_col[r])
            if cc < n and not forbidden[r, cc]:
                out.append((r, cc))
        return out

    pairs = real_pairs(refined)
    base = real_pairs(jv_row_col)
    # Tolerance insurance: never trade optimality for tie-break order.
    if assignment_cost(c, pairs) > assignment_cost(c, base) or len(pairs) < len(base):
        return base
    return pairs


def assignment_cost(cost, pairs: list[tuple[int, int]]) -> float:
    """Exact total cost of an assignment (compensated summation)."""
    c = np.asarray(cost, dtype=np.float64)
    return math.fsum(float(c[r, cc]) for r, cc in pairs)


@dataclass(frozen=True)
class GTObject:
    """A ground-truth object for set-based supervision."""

    box: BBox
    identity: int


# Matching-cost and loss weights follow the detection-transformer convention;
# the classification term uses the focal-style cost rather than raw (1 - p).
MATCH_W_CLS = 2.0
MATCH_W_L1 = 5.0
MATCH_W_GIOU = 2.0
LOSS_W_L1 = 5.0
LOSS_W_GIOU = 2.0
LOSS_W_CLS = 2.0
LOSS_W_ID = 0.5


def _norm_corners(box: BBox, img: ImageSize) -> np.ndarray:
    w, h = float(img.width), float(img.height)
    return np.array([box.x1 / w, box.y1 / h, box.x2 / w, box.y2 / h])


def _focal_cls_cost(p: float, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Positive-minus-negative focal cost of treating prob p as foreground."""
    return _focal_term(p, True, alpha, gamma) - _focal_term(p, False, alpha, gamma)


def gt_match_cost(det, gt_box: BBox, img: ImageSize,
                  w_cls: float = MATCH_W_CLS, w_l1: float = MATCH_W_L1,
                  w_giou: float = MATCH_W_GIOU) -> float:
    """Pairing cost between a detection and a ground-truth object.

    Blends the focal classification cost of the detection score with the
    normalized-corner L1 and the GIoU loss against the ground-truth box.
    """
    cls_cost = _focal_cls_cost(float(det.score))
    box_cost = l1_loss(_norm_corners(det.box, img), _norm_corners(gt_box, img))
    return w_cls * cls_cost + w_l1 * box_cost + w_giou * (1.0 - giou(det.box, gt_box))


def match_detections(dets, gts, img: ImageSize) -> list[tuple[int, int]]:
    """One-to-one matching of detections (rows) to ground truths (cols)."""
    if not dets or not gts:
        return []
    cost = np.array([[gt_match_cost(d, g.box, img) for g in gts] for d in dets])
    return hungarian(cost)


def detection_loss(dets, gts, assignment: list[tuple[int, int]],
                   img: ImageSize, phi=None) -> float:
    """Set-supervised detection loss under a fixed matching.

    Matched detections pay normalized-L1 + GIoU box terms, a focal identity
    term through the classifier ``phi`` (skipped when ``phi`` is None), and
    a positive focal classification term on the score. Unmatched detections
    pay the background focal classification term only.
    """
    det_to_gt = {}
    used_gt = set()
    for r, cc in assignment:
        if not (0 <= r < len(dets)) or not (0 <= cc < len(gts)):
            raise ValueError(f"assignment pair ({r}, {cc}) out of range")
        if r in det_to_gt or cc in used_gt:
            raise ValueError("assignment is not one-to-one")
        det_to_gt[r] = cc
        used_gt.add(cc)

    total = 0.0
    for i, det in enumerate(dets):
        if i in det_to_gt:
            gt = gts[det_to_gt[i]]
            total += LOSS_W_L1 * l1_loss(_norm_corners(det.box, img),
                                         _norm_corners(gt.box, img))
            total += LOSS_W_GIOU * (1.0 - giou(det.box, gt.box))
            total += LOSS_W_CLS * _focal_term(float(det.score), True, 0.25, 2.0)
            if phi is not None:
                probs = sigmoid(phi.forward(det.embedding))
                for j, pj in enumerate(probs):
                    total += LOSS_W_ID * _focal_term(
                        float(pj), j == gt.identity, 0.25, 2.0)
        else:
            total += LOSS_W_CLS * _focal_term(float(det.score), False, 0.25, 2.0)
    return total
