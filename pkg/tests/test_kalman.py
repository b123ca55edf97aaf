import numpy as np
import pytest

from reftrack.geometry import BBox
from reftrack.kalman import (
    POS_STD_WEIGHT,
    VEL_STD_WEIGHT,
    KalmanState,
    kf_init,
    kf_predict,
    kf_update,
)


def box_at(cx, cy, w, h):
    return BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


class TestInit:
    def test_mean(self):
        s = kf_init(box_at(10, 20, 8, 16))
        assert np.allclose(s.mean, [10, 20, 8, 16, 0, 0, 0, 0])

    def test_deterministic(self):
        a = kf_init(box_at(5, 5, 4, 4))
        b = kf_init(box_at(5, 5, 4, 4))
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.cov, b.cov)

    def test_height_scaled_std(self):
        s = kf_init(box_at(50, 50, 30, 100))
        # positional std = 2 * (1/20) * h = h/10
        assert s.cov[0, 0] == pytest.approx((100 / 10) ** 2)
        assert s.cov[4, 4] == pytest.approx((10 * VEL_STD_WEIGHT * 100) ** 2)


class TestPredict:
    def test_static_mean(self):
        s = kf_init(box_at(10, 10, 5, 5))
        assert np.allclose(kf_predict(s).mean, s.mean)

    def test_linear_motion(self):
        s = kf_init(box_at(10, 10, 5, 5))
        mean = s.mean.copy()
        mean[4] = 2.0
        s = KalmanState(mean=mean, cov=s.cov)
        s = kf_predict(s)
        assert s.mean[0] == pytest.approx(12.0)
        s = kf_predict(s)
        assert s.mean[0] == pytest.approx(14.0)

    def test_hand_covariance(self):
        # Isolated (cx, vcx) subsystem: P' = F P F^T + Q in closed form.
        h = 20.0
        p_pos, p_vel, p_cross = 3.0, 2.0, 0.5
        cov = np.zeros((8, 8))
        cov[0, 0], cov[4, 4] = p_pos, p_vel
        cov[0, 4] = cov[4, 0] = p_cross
        mean = np.array([0, 0, 10, h, 0, 0, 0, 0.0])
        out = kf_predict(KalmanState(mean=mean, cov=cov))
        q_pos = (POS_STD_WEIGHT * h) ** 2
        q_vel = (VEL_STD_WEIGHT * h) ** 2
        assert out.cov[0, 0] == pytest.approx(p_pos + 2 * p_cross + p_vel + q_pos,
                                              abs=1e-12)
        assert out.cov[0, 4] == pytest.approx(p_cross + p_vel, abs=1e-12)
        assert out.cov[4, 4] == pytest.approx(p_vel + q_vel, abs=1e-12)


class TestUpdate:
    def test_tight_measurement_pins_position(self):
        s = kf_init(box_at(10, 10, 5, 5))
        z = np.array([14.0, 11.0, 6.0, 5.0])
        out = kf_update(s, z, measurement_std=1e-6)
        assert np.allclose(out.mean[:4], z, atol=1e-6)

    def test_zero_innovation_keeps_mean(self):
        s = kf_init(box_at(10, 10, 5, 5))
        out = kf_update(s, s.mean[:4].copy())
        assert np.allclose(out.mean, s.mean, atol=1e-12)

    def test_scalar_hand_case(self):
        # P = 1 on measured dims, R = 1 (h = 20 makes the default noise 1).
        h = 20.0
        cov = np.zeros((8, 8))
        cov[:4, :4] = np.eye(4)
        mean = np.array([5.0, 5.0, 10.0, h, 0, 0, 0, 0])
        s = KalmanState(mean=mean, cov=cov)
        z = np.array([6.0, 5.0, 10.0, h])
        out = kf_update(s, z)
        # gain = P/(P+R) = 0.5; posterior variance = 0.5
        assert out.mean[0] == pytest.approx(5.5, abs=1e-12)
        assert out.cov[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_update_never_raises_position_variance(self):
        rng = np.random.default_rng(0)
        s = kf_init(box_at(20, 20, 10, 10))
        for _ in range(200):
            s = kf_predict(s)
            before = np.diag(s.cov)[:4].copy()
            z = s.mean[:4] + rng.normal(0, 1.0, 4)
            z[2:] = np.maximum(z[2:], 1.0)
            s = kf_update(s, z)
            after = np.diag(s.cov)[:4]
            assert np.all(after <= before + 1e-12)

    def test_bad_measurement_shape(self):
        s = kf_init(box_at(10, 10, 5, 5))
        with pytest.raises(ValueError):
            kf_update(s, np.zeros(3))


class TestProperties:
    def test_covariance_stays_psd(self):
        rng = np.random.default_rng(1)
        s = kf_init(box_at(30, 30, 12, 24))
        for i in range(2000):
            s = kf_predict(s)
            if rng.random() < 0.7:
                z = s.mean[:4] + rng.normal(0, 2.0, 4)
                z[2:] = np.maximum(z[2:], 1.0)
                s = kf_update(s, z)
            assert np.allclose(s.cov, s.cov.T, atol=1e-9)
            assert np.linalg.eigvalsh(s.cov).min() >= -1e-9

    def test_repeated_measurement_converges(self):
        s = kf_init(box_at(10, 10, 5, 5))
        z = np.array([42.0, 17.0, 8.0, 9.0])
        for _ in range(200):
            s = kf_predict(s)
            s = kf_update(s, z)
        assert np.allclose(s.mean[:4], z, atol=1e-6)
