"""Sequence file formats, synthetic benchmark generation, and tracking metrics.

File formats:
  * track/detection files: 10 comma-separated fields per line
    (frame, id, bb_left, bb_top, bb_width, bb_height, conf, -1, -1, -1),
    frames 1-based, id -1 for raw detections;
  * embedding sidecar: one row per detection in file order,
    "frame ordinal v0 .. v{e-1}" whitespace-separated;
  * rasters: one binary file per frame, header magic 'GRID', uint32 H, W, c,
    then H*W*c little-endian float64 in row-major order.

The evaluator implements the per-frame correspondence convention (carry over
last frame's pairs while still above the overlap gate, then optimal
reassignment), identity switches on ground-truth trajectories, and the
global identity F1 under a single trajectory-level assignment.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assignment import hungarian
from .geometry import BBox, ImageSize, iou
from .numerics import l2_normalize

RASTER_MAGIC = b"GRID"


@dataclass
class MotRecord:
    """One row of a track/detection file."""

    frame: int
    track_id: int
    left: float
    top: float
    width: float
    height: float
    conf: float
    extra1: float = -1.0
    extra2: float = -1.0
    extra3: float = -1.0

    def box(self) -> BBox:
        return BBox(self.left, self.top, self.left + self.width,
                    self.top + self.height)


def read_mot(path) -> list[MotRecord]:
    """Parse a track/detection file; records come back stably sorted by frame."""
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 10:
                raise ValueError(
                    f"{path}:{lineno}: expected 10 fields, got {len(parts)}")
            try:
                frame = int(parts[0])
                track_id = int(parts[1])
                floats = [float(p) for p in parts[2:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: unparsable field") from exc
            if frame < 1:
                raise ValueError(f"{path}:{lineno}: frame must be >= 1")
            if floats[2] < 0 or floats[3] < 0:
                raise ValueError(f"{path}:{lineno}: negative box size")
            records.append(MotRecord(frame, track_id, *floats))
    records.sort(key=lambda r: r.frame)  # stable: in-frame order preserved
    return records


def write_mot(records, path, img: ImageSize | None = None) -> None:
    """Write records in canonical form; boxes are clipped when ``img`` is given."""
    with open(path, "w", encoding="ascii") as fh:
        for r in records:
            left, top, w, h = (float(r.left), float(r.top),
                               float(r.width), float(r.height))
            if img is not None:
                x1 = min(max(left, 0.0), float(img.width))
                y1 = min(max(top, 0.0), float(img.height))
                x2 = min(max(left + w, 0.0), float(img.width))
                y2 = min(max(top + h, 0.0), float(img.height))
                left, top, w, h = x1, y1, x2 - x1, y2 - y1
            fh.write(f"{int(r.frame)},{int(r.track_id)},{left!r},{top!r},"
                     f"{w!r},{h!r},{float(r.conf)!r},{float(r.extra1)!r},"
                     f"{float(r.extra2)!r},{float(r.extra3)!r}\n")


def group_by_frame(records) -> dict[int, list[MotRecord]]:
    out: dict[int, list[MotRecord]] = {}
    for r in records:
        out.setdefault(r.frame, []).append(r)
    return out


def read_embeddings(path, counts: dict[int, int]) -> dict[int, np.ndarray]:
    """Read an embedding sidecar aligned with a detection file.

    ``counts`` maps frame -> number of detections expected; rows may arrive
    shuffled and are re-sorted by (frame, ordinal). Missing rows, duplicate
    rows, and inconsistent dimensions raise.
    """
    rows: dict[tuple[int, int], np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: row too short")
            frame, ordinal = int(parts[0]), int(parts[1])
            vec = np.array([float(p) for p in parts[2:]])
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(
                    f"{path}:{lineno}: dim {vec.size} != established {dim}")
            if (frame, ordinal) in rows:
                raise ValueError(f"{path}:{lineno}: duplicate row "
                                 f"({frame}, {ordinal})")
            rows[(frame, ordinal)] = vec
    out: dict[int, np.ndarray] = {}
    total = 0
    for frame, count in sorted(counts.items()):
        vecs = []
        for ordinal in range(count):
            key = (frame, ordinal)
            if key not in rows:
                raise ValueError(f"{path}: missing embedding row {key}")
            vecs.append(rows[key])
        total += count
        out[frame] = (np.stack(vecs) if vecs
                      else np.zeros((0, dim if dim else 0)))
    if total != len(rows):
        raise ValueError(f"{path}: {len(rows)} rows for {total} detections")
    return out


def write_embeddings(path, embeddings: dict[int, np.ndarray]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for frame in sorted(embeddings):
            for ordinal, vec in enumerate(embeddings[frame]):
                values = " ".join(repr(float(v)) for v in vec)
                fh.write(f"{frame} {ordinal} {values}\n")


def write_raster(path, grid: np.ndarray) -> None:
    grid = np.ascontiguousarray(grid, dtype="<f8")
    if grid.ndim != 3:
        raise ValueError("raster must be [H, W, c]")
    h, w, c = grid.shape
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<3I", h, w, c))
        fh.write(grid.tobytes())


def read_raster(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RASTER_MAGIC:
            raise ValueError(f"{path}: bad raster magic {magic!r}")
        h, w, c = struct.unpack("<3I", fh.read(12))
        raw = fh.read(8 * h * w * c)
        if len(raw) != 8 * h * w * c:
            raise ValueError(f"{path}: truncated raster payload")
        return np.frombuffer(raw, dtype="<f8").reshape(h, w, c).copy()


@dataclass
class SynthConfig:
    """Knobs of the synthetic sequence generator.

    Objects move with constant per-segment velocity, reflecting off borders;
    a global per-frame translation (camera shake) shifts everything that is
    observed. Occlusion events (1-based object id, first frame, last frame)
    suppress detections and raster paint for that object. All randomness
    derives from ``seed``.
    """

    num_objects: int = 4
    width: int = 64
    height: int = 48
    frames: int = 100
    vel_min: float = 0.5
    vel_max: float = 2.5
    size_min: float = 8.0
    size_max: float = 14.0
    velocity_segment_len: int = 0      # frames per velocity segment, 0 = constant
    appearance_dim: int = 8
    appearance_noise: float = 0.0
    jitter_std: float = 0.0
    box_noise: float = 0.0
    fp_rate: float = 0.0
    miss_rate: float = 0.0
    occlusions: tuple = ()
    occlusion_count: int = 0           # auto-generated events on top of the explicit ones
    occlusion_min_len: int = 5
    occlusion_max_len: int = 12
    seed: int = 0

    def validate(self):
        for name in ("fp_rate", "miss_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.num_objects < 1 or self.frames < 1:
            raise ValueError("need at least one object and one frame")
        if self.width < 8 or self.height < 8:
            raise ValueError("image too small")
        if self.vel_min < 0 or self.vel_max < self.vel_min:
            raise ValueError("bad velocity range")
        if self.size_min <= 0 or self.size_max < self.size_min:
            raise ValueError("bad size range")


@dataclass
class SynthDataset:
    """Paths of a generated dataset."""

    root: Path
    gt_path: Path
    det_path: Path
    emb_path: Path
    gt_emb_path: Path
    frames_dir: Path
    image: ImageSize
    num_frames: int
    num_objects: int


def _latent_appearances(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    raw = rng.normal(size=(max(n, 1), dim))
    if n <= dim:
        # Orthonormal, sign-fixed identities separate cleanly in cosine space.
        q, r = np.linalg.qr(raw.T)
        q = q * np.sign(np.diag(r))[None, :]
        return q.T[:n].copy()
    return np.stack([l2_normalize(row) for row in raw[:n]])


def synthesize(cfg: SynthConfig, out_dir) -> SynthDataset:
    """Generate gt/detection/embedding files and per-frame rasters."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    root = Path(out_dir)
    frames_dir = root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    w_img, h_img = float(cfg.width), float(cfg.height)
    latents = _latent_appearances(rng, cfg.num_objects, cfg.appearance_dim)
    sizes = rng.uniform(cfg.size_min, cfg.size_max, size=(cfg.num_objects, 2))
    margins = sizes / 2.0
    centers = np.stack([
        rng.uniform([margins[i, 0], margins[i, 1]],
                    [w_img - margins[i, 0], h_img - margins[i, 1]])
        for i in range(cfg.num_objects)
    ])
    speeds = rng.uniform(cfg.vel_min, cfg.vel_max, size=(cfg.num_objects, 2))
    signs = np.where(rng.random((cfg.num_objects, 2)) < 0.5, -1.0, 1.0)
    velocities = speeds * signs

    occlusions = [tuple(int(x) for x in ev) for ev in cfg.occlusions]
    for _ in range(cfg.occlusion_count):
        obj = int(rng.integers(1, cfg.num_objects + 1))
        length = int(rng.integers(cfg.occlusion_min_len,
                                  cfg.occlusion_max_len + 1))
        start = int(rng.integers(1, max(2, cfg.frames - length + 1)))
        occlusions.append((obj, start, start + length - 1))

    def occluded(obj_id: int, frame: int) -> bool:
        return any(o == obj_id and a <= frame <= b for o, a, b in occlusions)

    gt_rows: list[MotRecord] = []
    det_rows: list[MotRecord] = []
    det_embs: dict[int, list[np.ndarray]] = {}
    gt_embs: dict[int, list[np.ndarray]] = {}

    for frame in range(1, cfg.frames + 1):
        jitter = (rng.normal(0.0, cfg.jitter_std, size=2)
                  if cfg.jitter_std > 0 else np.zeros(2))
        raster = np.zeros((cfg.height, cfg.width, cfg.appearance_dim))
        det_embs[frame] = []
        gt_embs[frame] = []

        if frame > 1:
            if (cfg.velocity_segment_len > 0
                    and (frame - 1) % cfg.velocity_segment_len == 0):
                speeds = rng.uniform(cfg.vel_min, cfg.vel_max,
                                     size=(cfg.num_objects, 2))
                signs = np.where(rng.random((cfg.num_objects, 2)) < 0.5,
                                 -1.0, 1.0)
                velocities = speeds * signs
            centers = centers + velocities
            for i in range(cfg.num_objects):
                for axis, extent in ((0, w_img), (1, h_img)):
                    lo, hi = margins[i, axis], extent - margins[i, axis]
                    if centers[i, axis] < lo:
                        centers[i, axis] = 2 * lo - centers[i, axis]
                        velocities[i, axis] = abs(velocities[i, axis])
                    elif centers[i, axis] > hi:
                        centers[i, axis] = 2 * hi - centers[i, axis]
                        velocities[i, axis] = -abs(velocities[i, axis])

        for i in range(cfg.num_objects):
            obj_id = i + 1
            ocx, ocy = centers[i] + jitter
            w, h = sizes[i]
            box = BBox(ocx - w / 2, ocy - h / 2, ocx + w / 2, ocy + h / 2)
            visible = (box.x2 > 0 and box.x1 < w_img
                       and box.y2 > 0 and box.y1 < h_img)
            if visible:
                gt_rows.append(MotRecord(frame, obj_id, box.x1, box.y1,
                                         box.width, box.height, 1.0))
                gt_embs[frame].append(latents[i].copy())
                if not occluded(obj_id, frame):
                    x0 = max(0, int(math.floor(box.x1)))
                    x1 = min(cfg.width, int(math.ceil(box.x2)))
                    y0 = max(0, int(math.floor(box.y1)))
                    y1 = min(cfg.height, int(math.ceil(box.y2)))
                    raster[y0:y1, x0:x1, :] = latents[i]

            if not visible or occluded(obj_id, frame):
                continue
            if cfg.miss_rate > 0 and rng.random() < cfg.miss_rate:
                continue
            dcx, dcy, dw, dh = ocx, ocy, w, h
            if cfg.box_noise > 0:
                dcx, dcy = np.array([dcx, dcy]) + rng.normal(0, cfg.box_noise, 2)
                dw, dh = np.maximum(
                    np.array([dw, dh]) + rng.normal(0, cfg.box_noise, 2), 2.0)
            conf = float(rng.uniform(0.6, 1.0))
            emb = latents[i]
            if cfg.appearance_noise > 0:
                emb = emb + rng.normal(0, cfg.appearance_noise,
                                       cfg.appearance_dim)
            dbox = BBox(dcx - dw / 2, dcy - dh / 2, dcx + dw / 2, dcy + dh / 2)
            det_rows.append(MotRecord(frame, -1, dbox.x1, dbox.y1,
                                      dbox.width, dbox.height, conf))
            det_embs[frame].append(l2_normalize(emb))

        if cfg.fp_rate > 0:
            for _ in range(cfg.num_objects):
                if rng.random() < cfg.fp_rate:
                    fw, fh = rng.uniform(cfg.size_min, cfg.size_max, 2)
                    fcx = rng.uniform(fw / 2, w_img - fw / 2)
                    fcy = rng.uniform(fh / 2, h_img - fh / 2)
                    conf = float(rng.uniform(0.1, 0.55))
                    det_rows.append(MotRecord(frame, -1, fcx - fw / 2,
                                              fcy - fh / 2, fw, fh, conf))
                    det_embs[frame].append(
                        l2_normalize(rng.normal(size=cfg.appearance_dim)))

        write_raster(frames_dir / f"{frame:06d}.bin", raster)

    img = ImageSize(cfg.width, cfg.height)
    gt_path, det_path = root / "gt.txt", root / "det.txt"
    emb_path, gt_emb_path = root / "emb.txt", root / "gt_emb.txt"
    write_mot(gt_rows, gt_path, img=img)
    write_mot(det_rows, det_path, img=img)
    write_embeddings(emb_path, {
        f: np.stack(v) if v else np.zeros((0, cfg.appearance_dim))
        for f, v in det_embs.items()})
    write_embeddings(gt_emb_path, {
        f: np.stack(v) if v else np.zeros((0, cfg.appearance_dim))
        for f, v in gt_embs.items()})
    return SynthDataset(root=root, gt_path=gt_path, det_path=det_path,
                        emb_path=emb_path, gt_emb_path=gt_emb_path,
                        frames_dir=frames_dir, image=img,
                        num_frames=cfg.frames, num_objects=cfg.num_objects)


@dataclass
class MetricsReport:
    """Tracking quality summary plus the raw counts behind it."""

    mota: float
    motp: float
    idf1: float
    ids: int
    mt: float
    ml: float
    fp: int
    fn: int
    matches: int
    gt_total: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("mota", "motp", "idf1", "ids", "mt", "ml",
                 "fp", "fn", "matches", "gt_total")}


def _frame_map(records) -> dict[int, list[tuple[int, BBox]]]:
    out: dict[int, list[tuple[int, BBox]]] = {}
    for r in records:
        out.setdefault(r.frame, []).append((r.track_id, r.box()))
    return out


def evaluate(gt_records, result_records, iou_gate: float = 0.5) -> MetricsReport:
    """Score tracker output against ground truth.

    Per frame, last frame's gt-to-hypothesis pairs persist while their boxes
    still overlap above the gate; the remainder is matched optimally on
    1 - IoU. An identity switch is counted whenever a ground truth's matched
    hypothesis id differs from its previous matched id. The identity F1 uses
    a single global trajectory assignment maximizing co-located detections.
    Duplicate ids within one frame of either stream raise.
    """
    gt_map = _frame_map(gt_records)
    hyp_map = _frame_map(result_records)
    for name, mapping in (("gt", gt_map), ("results", hyp_map)):
        for frame, items in mapping.items():
            ids = [i for i, _ in items]
            if len(ids) != len(set(ids)):
                raise ValueError(f"duplicate ids in {name} frame {frame}")

    frames = sorted(set(gt_map) | set(hyp_map))
    fp = fn = ids_count = matches = 0
    dist_sum = 0.0
    carry: dict[int, int] = {}          # gt id -> last matched hyp id
    overlap_count: dict[tuple[int, int], int] = {}
    gt_frames: dict[int, int] = {}
    gt_matched_frames: dict[int, int] = {}
    gt_total = 0
    hyp_total = 0

    for frame in frames:
        gts = gt_map.get(frame, [])
        hyps = hyp_map.get(frame, [])
        gt_total += len(gts)
        hyp_total += len(hyps)
        for gid, _ in gts:
            gt_frames[gid] = gt_frames.get(gid, 0) + 1

        iou_mat = np.zeros((len(gts), len(hyps)))
        for i, (_, gbox) in enumerate(gts):
            for j, (_, hbox) in enumerate(hyps):
                iou_mat[i, j] = iou(gbox, hbox)
        for i, (gid, _) in enumerate(gts):
            for j, (hid, _) in enumerate(hyps):
                if iou_mat[i, j] >= iou_gate:
                    key = (gid, hid)
                    overlap_count[key] = overlap_count.get(key, 0) + 1

        gt_idx = {gid: i for i, (gid, _) in enumerate(gts)}
        hyp_idx = {hid: j for j, (hid, _) in enumerate(hyps)}
        pair_gt: dict[int, int] = {}
        # Carry over persisting pairs first (in gt-id order for determinism).
        for gid in sorted(carry):
            hid = carry[gid]
            if gid in gt_idx and hid in hyp_idx:
                if iou_mat[gt_idx[gid], hyp_idx[hid]] >= iou_gate:
                    pair_gt[gid] = hid
        used_hyp = set(pair_gt.values())
        free_g = [i for gid, i in sorted(gt_idx.items()) if gid not in pair_gt]
        free_h = [j for hid, j in sorted(hyp_idx.items()) if hid not in used_hyp]
        if free_g and free_h:
            cost = np.full((len(free_g), len(free_h)), np.inf)
            for a, i in enumerate(free_g):
                for b, j in enumerate(free_h):
                    if iou_mat[i, j] >= iou_gate:
                        cost[a, b] = 1.0 - iou_mat[i, j]
            for a, b in hungarian(cost):
                gid = gts[free_g[a]][0]
                hid = hyps[free_h[b]][0]
                pair_gt[gid] = hid

        for gid in sorted(pair_gt):
            hid = pair_gt[gid]
            if gid in carry and carry[gid] != hid:
                ids_count += 1
            carry[gid] = hid
            matches += 1
            dist_sum += 1.0 - iou_mat[gt_idx[gid], hyp_idx[hid]]
            gt_matched_frames[gid] = gt_matched_frames.get(gid, 0) + 1
        fn += len(gts) - len(pair_gt)
        fp += len(hyps) - len(pair_gt)

    # Global identity assignment: maximize co-located detections.
    gt_ids = sorted(gt_frames)
    hyp_ids = sorted({hid for _, hid in overlap_count} |
                     {hid for items in hyp_map.values() for hid, _ in items})
    idtp = 0
    if gt_ids and hyp_ids and overlap_count:
        cost = np.full((len(gt_ids), len(hyp_ids)), np.inf)
        for (gid, hid), count in overlap_count.items():
            cost[gt_ids.index(gid), hyp_ids.index(hid)] = -float(count)
        idtp = -int(round(sum(cost[i, j] for i, j in hungarian(cost))))
    idf1 = (2.0 * idtp / (gt_total + hyp_total)
            if gt_total + hyp_total > 0 else 0.0)

    n_traj = len(gt_frames)
    mt = ml = 0
    for gid, total in gt_frames.items():
        cov = gt_matched_frames.get(gid, 0) / total
        if cov >= 0.8:
            mt += 1
        if cov <= 0.2:
            ml += 1

    mota = 1.0 - (fn + fp + ids_count) / gt_total if gt_total > 0 else 0.0
    motp = dist_sum / matches if matches > 0 else 0.0
    return MetricsReport(
        mota=mota, motp=motp, idf1=idf1, ids=ids_count,
        mt=mt / n_traj if n_traj else 0.0,
        ml=ml / n_traj if n_traj else 0.0,
        fp=fp, fn=fn, matches=matches, gt_total=gt_total)
