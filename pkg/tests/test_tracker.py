import math

import numpy as np
import pytest

from reftrack.geometry import BBox, ImageSize
from reftrack.kalman import kf_predict
from reftrack.refsearch import RSPrediction
from reftrack.tracker import (
    Detection,
    Track,
    TrackerConfig,
    Tracker,
    TrackStatus,
    rs_cost,
    update_embedding,
)

IMG = ImageSize(32, 32)
E4 = lambda *v: np.array(v, dtype=float)


def det_at(cx, cy, w=6.0, h=6.0, score=0.9, emb=None, frame=1):
    return Detection(box=BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                     score=score, embedding=emb, frame=frame)


def scripted(mapping):
    """Predictor returning fixed (center, appearance) per track id."""

    def predict(refs):
        preds = []
        for r in refs:
            center, emb = mapping[r.track_id]
            preds.append(RSPrediction(center=np.asarray(center, dtype=float),
                                      appearance=np.asarray(emb, dtype=float),
                                      track_id=r.track_id))
        return preds

    return predict


class TestUpdateEmbedding:
    def test_momentum_zero(self):
        out = update_embedding(E4(1, 0, 0), E4(0, 2, 0), 0.0)
        assert np.allclose(out, [0, 1, 0])

    def test_momentum_one(self):
        old = E4(1, 0, 0)
        assert np.array_equal(update_embedding(old, E4(0, 1, 0), 1.0), old)

    def test_hand_blend(self):
        old = E4(1.0, 0.0)
        new = E4(0.0, 1.0)
        blended = 0.9 * old + 0.1 * new
        want = blended / np.linalg.norm(blended)
        assert np.allclose(update_embedding(old, new, 0.9), want, atol=1e-12)

    def test_cancellation_keeps_old(self):
        old = E4(1.0, 0.0)
        out = update_embedding(old, E4(-1.0, 0.0), 0.5)
        assert np.array_equal(out, old)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            update_embedding(E4(1, 0), E4(1, 0, 0), 0.5)


def make_track(tid, cx, cy, emb, w=6.0, h=6.0, status=TrackStatus.ACTIVE):
    track = Track(tid, det_at(cx, cy, w, h, emb=emb), 1, status)
    track.predicted = kf_predict(track.kalman)
    return track


class TestRSCost:
    CFG = TrackerConfig()

    def test_perfect_match_is_zero(self):
        emb = E4(1.0, 0.0, 0.0, 0.0)
        track = make_track(1, 16, 16, emb)
        pw, ph = track.predicted.mean[2], track.predicted.mean[3]
        det = det_at(16, 16, pw, ph, emb=emb.copy())
        pred = RSPrediction(center=np.array([16 / 32, 16 / 32]),
                            appearance=emb.copy(), track_id=1)
        assert rs_cost(track, pred, det, self.CFG, IMG) == 0.0

    def test_orthogonal_prediction(self):
        emb = E4(1.0, 0.0, 0.0, 0.0)
        track = make_track(1, 16, 16, emb)
        pw, ph = track.predicted.mean[2], track.predicted.mean[3]
        det = det_at(16, 16, pw, ph, emb=emb.copy())
        pred = RSPrediction(center=np.array([0.5, 0.5]),
                            appearance=E4(0, 0, 1.0, 0), track_id=1)
        got = rs_cost(track, pred, det, self.CFG, IMG)
        assert got == pytest.approx(self.CFG.lambda_emb, abs=1e-12)

    def test_hand_value(self):
        # consistency 0.81, similarity 0.49, normalized distance 0.1:
        # 0.5 * (1 - 0.63) + 0.5 * 0.1 = 0.235
        c1, c2 = 0.81, 0.49
        e_track = np.array([1.0, 0.0])
        e_pred = np.array([c1, math.sqrt(1 - c1 * c1)])
        ang = math.acos(c2)
        rot = np.array([[math.cos(ang), -math.sin(ang)],
                        [math.sin(ang), math.cos(ang)]])
        e_det = rot @ e_pred
        track = make_track(1, 16, 16, e_track)
        pw, ph = track.predicted.mean[2], track.predicted.mean[3]
        det = det_at(16, 16, pw, ph, emb=e_det)
        dcx, dcy = det.box.center
        pred = RSPrediction(
            center=np.array([dcx / 32 + 0.1, dcy / 32]),
            appearance=e_pred, track_id=1)
        got = rs_cost(track, pred, det, self.CFG, IMG)
        assert got == pytest.approx(0.5 * (1 - 0.63) + 0.5 * 0.1, abs=1e-9)

    def test_negative_cosines_clamped(self):
        emb = E4(1.0, 0, 0, 0)
        track = make_track(1, 16, 16, emb)
        det = det_at(16, 16, emb=emb.copy())
        pred = RSPrediction(center=np.array([0.5, 0.5]),
                            appearance=E4(-1.0, 0, 0, 0), track_id=1)
        got = rs_cost(track, pred, det, self.CFG, IMG)
        assert got >= self.CFG.lambda_emb - 1e-12

    def test_monotone_in_distance_and_similarity(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            lam = float(rng.uniform(0.1, 0.9))
            cfg = TrackerConfig(lambda_emb=lam)
            emb = E4(1.0, 0, 0, 0)
            track = make_track(1, 16, 16, emb)
            pw, ph = track.predicted.mean[2], track.predicted.mean[3]
            det = det_at(16, 16, pw, ph, emb=emb.copy())
            dcx, dcy = det.box.center

            def cost(dx, cos_pred):
                e_pred = np.array([cos_pred, math.sqrt(1 - cos_pred ** 2), 0, 0])
                pred = RSPrediction(center=np.array([dcx / 32 + dx, dcy / 32]),
                                    appearance=e_pred, track_id=1)
                return rs_cost(track, pred, det, cfg, IMG)

            d1, d2 = sorted(rng.uniform(0.0, 0.5, 2))
            c_lo, c_hi = sorted(rng.uniform(0.05, 1.0, 2))
            if d2 > d1:
                assert cost(d2, 0.7) > cost(d1, 0.7)
            if c_hi > c_lo:
                assert cost(0.1, c_hi) < cost(0.1, c_lo)


class TestStepLifecycle:
    def _tracker(self, **kw):
        cfg = TrackerConfig(use_rs=False, **kw)
        return Tracker(cfg, IMG)

    def test_no_detections_track_goes_lost(self):
        tracker = self._tracker(require_confirm=False)
        emb = E4(1, 0, 0, 0)
        tracker.step(1, [det_at(10, 10, emb=emb)])
        result = tracker.step(2, [])
        assert result.outputs == []
        track = tracker.tracks[0]
        assert track.status == TrackStatus.LOST
        assert track.lost_age == 1

    def test_coincident_match_keeps_id(self):
        tracker = self._tracker(require_confirm=False)
        emb = E4(1, 0, 0, 0)
        r1 = tracker.step(1, [det_at(10, 10, emb=emb)])
        r2 = tracker.step(2, [det_at(10.5, 10, emb=emb)])
        assert [tid for tid, _ in r1.outputs] == [1]
        assert [tid for tid, _ in r2.outputs] == [1]
        assert r2.stage2_matches == 1

    def test_confirm_rule(self):
        tracker = self._tracker(require_confirm=True)
        emb = E4(1, 0, 0, 0)
        r1 = tracker.step(1, [det_at(10, 10, emb=emb)])
        assert r1.outputs == [] and r1.births == 1
        r2 = tracker.step(2, [det_at(10.4, 10, emb=emb)])
        assert [tid for tid, _ in r2.outputs] == [1]
        r3 = tracker.step(3, [det_at(10.8, 10, emb=emb)])
        assert [tid for tid, _ in r3.outputs] == [1]

    def test_unconfirmed_removed_without_second_match(self):
        tracker = self._tracker(require_confirm=True)
        tracker.step(1, [det_at(10, 10, emb=E4(1, 0, 0, 0))])
        r2 = tracker.step(2, [])
        assert r2.deaths == 1
        assert tracker.tracks[0].status == TrackStatus.REMOVED

    def test_lost_expiry_and_no_reuse(self):
        tracker = self._tracker(require_confirm=False, max_lost=2)
        emb = E4(1, 0, 0, 0)
        tracker.step(1, [det_at(10, 10, emb=emb)])
        tracker.step(2, [])
        assert tracker.tracks[0].status == TrackStatus.LOST
        r3 = tracker.step(3, [])
        assert tracker.tracks[0].status == TrackStatus.REMOVED
        assert r3.deaths == 1
        # A detection at the same spot becomes a new identity.
        r4 = tracker.step(4, [det_at(10, 10, emb=emb)])
        assert r4.births == 1
        assert tracker.tracks[1].id == 2

    def test_rebirth_within_window(self):
        tracker = self._tracker(require_confirm=False, max_lost=10)
        emb = E4(1, 0, 0, 0)
        tracker.step(1, [det_at(10, 10, emb=emb)])
        tracker.step(2, [])
        tracker.step(3, [])
        r4 = tracker.step(4, [det_at(10, 10, emb=emb)])
        assert [tid for tid, _ in r4.outputs] == [1]
        assert tracker.tracks[0].status == TrackStatus.ACTIVE
        assert tracker.tracks[0].lost_age == 0

    def test_frame_regression_raises(self):
        tracker = self._tracker()
        tracker.step(1, [])
        with pytest.raises(ValueError):
            tracker.step(1, [])

    def test_score_gate(self):
        tracker = self._tracker(require_confirm=False, score_gate=0.4)
        r = tracker.step(1, [det_at(10, 10, score=0.3, emb=E4(1, 0, 0, 0))])
        assert r.births == 0

    def test_iou_gate_rejects_far_detection(self):
        tracker = self._tracker(require_confirm=False, iou_gate=0.5)
        emb = E4(1, 0, 0, 0)
        tracker.step(1, [det_at(10, 10, emb=emb)])
        r2 = tracker.step(2, [det_at(20, 20, emb=emb)])
        assert r2.stage2_matches == 0
        assert r2.births == 1
        assert tracker.tracks[0].status == TrackStatus.LOST


class TestStepStage1:
    def test_crossing_targets_follow_appearance(self):
        cfg = TrackerConfig(require_confirm=False)
        tracker = Tracker(cfg, IMG)
        ea, eb = E4(1, 0, 0, 0), E4(0, 1, 0, 0)
        tracker.step(1, [det_at(10, 10, emb=ea), det_at(22, 22, emb=eb)])
        # Crossing: positions swap, appearance identifies the right pairing.
        preds = scripted({1: ((22 / 32, 22 / 32), ea),
                          2: ((10 / 32, 10 / 32), eb)})
        r2 = tracker.step(2, [det_at(22, 22, emb=ea), det_at(10, 10, emb=eb)],
                          predictor=preds)
        assert r2.stage1_matches == 2
        by_id = dict(r2.outputs)
        assert by_id[1].center == (22.0, 22.0)
        assert by_id[2].center == (10.0, 10.0)

    def test_stage1_gate_falls_through(self):
        cfg = TrackerConfig(require_confirm=False, rs_cost_gate=0.2)
        tracker = Tracker(cfg, IMG)
        ea = E4(1, 0, 0, 0)
        tracker.step(1, [det_at(10, 10, emb=ea)])
        # Orthogonal predicted appearance: stage-1 cost >= lambda_emb = 0.5;
        # overlap still matches in stage 2.
        preds = scripted({1: ((10 / 32, 10 / 32), E4(0, 0, 1, 0))})
        r2 = tracker.step(2, [det_at(10.2, 10, emb=ea)], predictor=preds)
        assert r2.stage1_matches == 0
        assert r2.stage2_matches == 1

    def test_out_of_image_reference_uses_stage2(self):
        cfg = TrackerConfig(require_confirm=False)
        tracker = Tracker(cfg, IMG)
        ea = E4(1, 0, 0, 0)
        tracker.step(1, [det_at(1, 10, w=8.0, emb=ea)])
        track = tracker.tracks[0]
        track.center = np.array([-2.0, 10.0])  # drifted out of the image

        def exploding(refs):
            raise AssertionError("flagged track must not be a reference")

        r2 = tracker.step(2, [det_at(1, 10, w=8.0, emb=ea)],
                          predictor=exploding)
        assert r2.stage2_matches == 1

    def test_bad_predictor_cardinality(self):
        cfg = TrackerConfig(require_confirm=False)
        tracker = Tracker(cfg, IMG)
        tracker.step(1, [det_at(10, 10, emb=E4(1, 0, 0, 0))])
        with pytest.raises(ValueError):
            tracker.step(2, [det_at(10, 10, emb=E4(1, 0, 0, 0))],
                         predictor=lambda refs: [])


class TestDeterminism:
    def _run(self):
        tracker = Tracker(TrackerConfig(require_confirm=True), IMG)
        rng = np.random.default_rng(123)
        stream = []
        for frame in range(1, 15):
            dets = []
            for k in range(int(rng.integers(0, 4))):
                cx, cy = rng.uniform(5, 27, 2)
                emb = rng.normal(size=4)
                dets.append(det_at(cx, cy, emb=emb / np.linalg.norm(emb),
                                   score=float(rng.uniform(0.3, 1.0))))
            result = tracker.step(frame, dets)
            stream.append([(tid, box.x1, box.y1, box.x2, box.y2)
                           for tid, box in result.outputs])
        return stream

    def test_bit_identical_streams(self):
        assert self._run() == self._run()

    def test_ids_strictly_increase(self):
        tracker = Tracker(TrackerConfig(require_confirm=False), IMG)
        seen = []
        rng = np.random.default_rng(7)
        for frame in range(1, 10):
            dets = [det_at(*rng.uniform(5, 27, 2), emb=E4(1, 0, 0, 0))]
            tracker.step(frame, dets)
        ids = [t.id for t in tracker.tracks]
        assert ids == sorted(ids)
        assert len(set(ids)) == len(ids)
