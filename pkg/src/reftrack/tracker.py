"""Online matching pipeline and track lifecycle.

Per frame: gate detections by score, predict every live track's filter one
step, run reference-search matching (appearance-consistency-weighted cost,
Hungarian, gate tau), then overlap matching on the remainder (Hungarian on
1 - IoU, gate theta), then update matched tracks, demote unmatched actives
to lost, expire old lost tracks, and open unconfirmed tracks for leftover
detections. A newborn track must match again at the very next frame or it
is removed; only confirmed (active) tracks are emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .assignment import hungarian
from .geometry import BBox, ImageSize, iou
from .kalman import KalmanState, kf_init, kf_predict, kf_update
from .numerics import cosine_similarity, l2_normalize
from .refsearch import RSModule, RSPrediction, joint_memory, rs_forward, select_references


class TrackStatus(Enum):
    UNCONFIRMED = "unconfirmed"
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class TrackerConfig:
    """Gates and blend weights of the matching pipeline."""

    score_gate: float = 0.4        # keep detections scoring above this
    rs_cost_gate: float = 0.8      # accept stage-1 pairs costing below this
    iou_gate: float = 0.5          # accept stage-2 pairs overlapping above this
    max_lost: int = 30             # frames a lost track survives
    lambda_emb: float = 0.5        # appearance/location blend in the stage-1 cost
    emb_momentum: float = 0.9      # old-embedding weight on update
    dist_scale: float = 1.0        # multiplier on the normalized location distance
    use_rs: bool = True            # stage 1 enabled
    require_confirm: bool = True   # newborn tracks must re-match next frame

    def validate(self):
        for name in ("score_gate", "iou_gate", "lambda_emb", "emb_momentum"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.rs_cost_gate < 0.0:
            raise ValueError("rs_cost_gate must be non-negative")
        if self.max_lost < 0:
            raise ValueError("max_lost must be >= 0")
        if self.dist_scale <= 0.0:
            raise ValueError("dist_scale must be positive")


@dataclass
class Detection:
    """One detected object in one frame."""

    box: BBox
    score: float
    embedding: np.ndarray | None
    frame: int

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0) or not math.isfinite(self.score):
            raise ValueError(f"score must be in [0, 1], got {self.score}")


class Track:
    """A persistent identity with per-frame state."""

    def __init__(self, track_id: int, det: Detection, frame: int,
                 status: TrackStatus):
        self.id = track_id
        self.status = status
        cx, cy = det.box.center
        self.center = np.array([cx, cy])
        self.size = np.array([det.box.width, det.box.height])
        self.embedding = (None if det.embedding is None
                          else l2_normalize(det.embedding))
        self.kalman: KalmanState = kf_init(det)
        self.predicted: KalmanState | None = None
        self.lost_age = 0
        self.birth_frame = frame
        self.last_frame = frame
        self.history: list[tuple[int, BBox]] = [(frame, det.box)]

    def box(self) -> BBox:
        cx, cy = self.center
        w, h = self.size
        return BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def update_embedding(eps_old: np.ndarray, eps_new: np.ndarray,
                     momentum: float) -> np.ndarray:
    """L2-normalized momentum blend; a vanishing blend keeps the old vector."""
    eps_old = np.asarray(eps_old, dtype=np.float64)
    eps_new = np.asarray(eps_new, dtype=np.float64)
    if eps_old.shape != eps_new.shape:
        raise ValueError(f"embedding shapes differ: {eps_old.shape} vs {eps_new.shape}")
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")
    blended = momentum * eps_old + (1.0 - momentum) * eps_new
    if float(np.linalg.norm(blended)) < 1e-12:
        return eps_old.copy()
    return l2_normalize(blended)


def rs_cost(track: Track, pred: RSPrediction, det: Detection,
            cfg: TrackerConfig, img: ImageSize) -> float:
    """Stage-1 matching cost; lower is better, 0 for a perfect match.

    The appearance term is 1 - sqrt(consistency * similarity), where
    consistency compares the track's stored embedding with its predicted one
    and similarity compares the prediction with the detection; negative
    cosines clamp to zero. The location term is the Euclidean distance of
    (cx, cy, w, h) in image-normalized units, with the predicted shape taken
    from the track's frame-start filter prediction.
    """
    if track.predicted is None:
        raise ValueError("track has no frame prediction; run the predict phase first")
    consistency = max(0.0, cosine_similarity(track.embedding, pred.appearance))
    similarity = max(0.0, cosine_similarity(pred.appearance, det.embedding))
    appearance_term = 1.0 - math.sqrt(consistency * similarity)

    w_img, h_img = float(img.width), float(img.height)
    pw, ph = track.predicted.mean[2], track.predicted.mean[3]
    dcx, dcy = det.box.center
    pred_loc = np.array([pred.center[0], pred.center[1], pw / w_img, ph / h_img])
    det_loc = np.array([dcx / w_img, dcy / h_img,
                        det.box.width / w_img, det.box.height / h_img])
    distance = float(np.linalg.norm(pred_loc - det_loc)) * cfg.dist_scale
    return cfg.lambda_emb * appearance_term + (1.0 - cfg.lambda_emb) * distance


@dataclass
class FrameResult:
    """Confirmed outputs and bookkeeping counts for one frame."""

    frame: int
    outputs: list[tuple[int, BBox]] = field(default_factory=list)
    births: int = 0
    deaths: int = 0
    stage1_matches: int = 0
    stage2_matches: int = 0


class Tracker:
    """Frame-by-frame tracker state; one instance per sequence."""

    def __init__(self, cfg: TrackerConfig, img: ImageSize,
                 rs_module: RSModule | None = None):
        cfg.validate()
        self.cfg = cfg
        self.img = img
        self.rs_module = rs_module
        self.tracks: list[Track] = []
        self.next_id = 1
        self.last_frame: int | None = None

    def _live_tracks(self) -> list[Track]:
        return [t for t in self.tracks
                if t.status in (TrackStatus.ACTIVE, TrackStatus.LOST,
                                TrackStatus.UNCONFIRMED)]

    def step(self, frame: int, detections: list[Detection],
             memory_cur=None, memory_prev=None, predictor=None) -> FrameResult:
        """Advance one frame.

        Stage-1 predictions come from the module over the joint memory when
        memories are given, or from ``predictor(refs)`` (used by oracle and
        scripted runs). With neither, or with ``use_rs`` off, only overlap
        matching runs.
        """
        if self.last_frame is not None and frame <= self.last_frame:
            raise ValueError(f"frame {frame} does not advance past {self.last_frame}")
        self.last_frame = frame
        result = FrameResult(frame=frame)

        dets = [d for d in detections if d.score > self.cfg.score_gate]
        live = self._live_tracks()
        for track in live:
            track.predicted = kf_predict(track.kalman)

        # ---- stage 1: reference-search matching ----------------------------
        refs, flagged = ([], [])
        preds: list[RSPrediction] = []
        stage1_tracks: list[Track] = []
        if self.cfg.use_rs:
            refs, flagged = select_references(live, self.img)
            by_id = {t.id: t for t in live}
            stage1_tracks = [by_id[r.track_id] for r in refs]
            if refs and dets:
                if predictor is not None:
                    preds = predictor(refs)
                    if len(preds) != len(refs):
                        raise ValueError("predictor returned wrong cardinality")
                elif self.rs_module is not None and memory_cur is not None:
                    joint = (joint_memory(memory_prev, memory_cur)
                             if memory_prev is not None else memory_cur)
                    preds = rs_forward(self.rs_module, refs, joint)
        else:
            flagged = []

        matched_tracks: dict[int, Detection] = {}
        matched_dets: set[int] = set()
        if preds:
            cost = np.zeros((len(stage1_tracks), len(dets)))
            for i, (track, pred) in enumerate(zip(stage1_tracks, preds)):
                for j, det in enumerate(dets):
                    cost[i, j] = rs_cost(track, pred, det, self.cfg, self.img)
            for i, j in hungarian(cost):
                if cost[i, j] < self.cfg.rs_cost_gate:
                    matched_tracks[stage1_tracks[i].id] = dets[j]
                    matched_dets.add(j)
                    result.stage1_matches += 1

        # ---- stage 2: overlap matching on the remainder ---------------------
        # Unmatched referenced tracks, flagged out-of-image tracks, and
        # unconfirmed tracks all compete here.
        remainder = [t for t in live if t.id not in matched_tracks]
        free_dets = [j for j in range(len(dets)) if j not in matched_dets]
        if remainder and free_dets:
            overlap = np.zeros((len(remainder), len(free_dets)))
            for i, track in enumerate(remainder):
                tb = track.predicted.box()
                for jj, j in enumerate(free_dets):
                    overlap[i, jj] = iou(tb, dets[j].box)
            for i, jj in hungarian(1.0 - overlap):
                if overlap[i, jj] > self.cfg.iou_gate:
                    j = free_dets[jj]
                    matched_tracks[remainder[i].id] = dets[j]
                    matched_dets.add(j)
                    result.stage2_matches += 1

        # ---- updates --------------------------------------------------------
        for track in live:
            det = matched_tracks.get(track.id)
            if det is not None:
                track.kalman = kf_update(track.predicted, det)
                cx, cy = det.box.center
                track.center = np.array([cx, cy])
                track.size = np.array([det.box.width, det.box.height])
                if det.embedding is not None:
                    new_emb = l2_normalize(det.embedding)
                    track.embedding = (new_emb if track.embedding is None else
                                       update_embedding(track.embedding, new_emb,
                                                        self.cfg.emb_momentum))
                track.status = TrackStatus.ACTIVE
                track.lost_age = 0
                track.last_frame = frame
                track.history.append((frame, det.box))
            else:
                if track.status == TrackStatus.UNCONFIRMED:
                    track.status = TrackStatus.REMOVED
                    result.deaths += 1
                    continue
                # Lost propagation: the filter prediction becomes the state.
                track.kalman = track.predicted
                track.center = track.predicted.mean[:2].copy()
                track.size = track.predicted.mean[2:4].copy()
                track.status = TrackStatus.LOST
                track.lost_age += 1
                if track.lost_age >= self.cfg.max_lost:
                    track.status = TrackStatus.REMOVED
                    result.deaths += 1

        # ---- births ----------------------------------------------------------
        for j, det in enumerate(dets):
            if j in matched_dets:
                continue
            status = (TrackStatus.UNCONFIRMED if self.cfg.require_confirm
                      else TrackStatus.ACTIVE)
            self.tracks.append(Track(self.next_id, det, frame, status))
            self.next_id += 1
            result.births += 1

        result.outputs = [(t.id, t.box()) for t in self.tracks
                          if t.status == TrackStatus.ACTIVE
                          and t.last_frame == frame]
        result.outputs.sort(key=lambda pair: pair[0])
        return result
