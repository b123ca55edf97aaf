"""Constant-velocity Kalman filter over (cx, cy, w, h) box state.

Noise scales follow the usual appearance-tracker convention: standard
deviations proportional to the box height. Updates use the Joseph form so
the covariance stays symmetric positive semi-definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox

POS_STD_WEIGHT = 1.0 / 20.0
VEL_STD_WEIGHT = 1.0 / 160.0

_DIM = 8
_F = np.eye(_DIM)
for _i in range(4):
    _F[_i, _i + 4] = 1.0  # unit frame step
_H = np.zeros((4, _DIM))
_H[:4, :4] = np.eye(4)


@dataclass(frozen=True)
class KalmanState:
    """Mean (cx, cy, w, h, vcx, vcy, vw, vh) and 8x8 covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def box(self) -> BBox:
        cx, cy, w, h = self.mean[:4]
        w = max(w, 0.0)
        h = max(h, 0.0)
        return BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def _measurement(det) -> np.ndarray:
    box = det.box if hasattr(det, "box") else det
    cx, cy = box.center
    return np.array([cx, cy, box.width, box.height], dtype=np.float64)


def kf_init(det) -> KalmanState:
    """Fresh filter state from a detection (or bare box): zero velocity,
    position/velocity uncertainty scaled by the box height."""
    z = _measurement(det)
    mean = np.zeros(_DIM)
    mean[:4] = z
    h = max(z[3], 1.0)
    std = np.array([2 * POS_STD_WEIGHT * h] * 4 + [10 * VEL_STD_WEIGHT * h] * 4)
    cov = np.diag(std ** 2)
    return KalmanState(mean=mean, cov=cov)


def kf_predict(s: KalmanState) -> KalmanState:
    """Advance one frame under constant velocity; inflate covariance by Q."""
    h = max(float(s.mean[3]), 1.0)
    std = np.array([POS_STD_WEIGHT * h] * 4 + [VEL_STD_WEIGHT * h] * 4)
    q = np.diag(std ** 2)
    mean = _F @ s.mean
    cov = _F @ s.cov @ _F.T + q
    return KalmanState(mean=mean, cov=0.5 * (cov + cov.T))


def kf_update(s: KalmanState, z, measurement_std: float | None = None) -> KalmanState:
    """Condition on a measured (cx, cy, w, h); Joseph-form posterior.

    ``measurement_std`` overrides the default height-scaled noise.
    """
    z = _measurement(z) if not isinstance(z, np.ndarray) else np.asarray(z, dtype=np.float64)
    if z.shape != (4,):
        raise ValueError(f"measurement must have 4 entries, got {z.shape}")
    if measurement_std is None:
        h = max(float(s.mean[3]), 1.0)
        measurement_std = POS_STD_WEIGHT * h
    r = np.diag(np.full(4, measurement_std ** 2))
    innovation_cov = _H @ s.cov @ _H.T + r
    try:
        np.linalg.cholesky(innovation_cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is not positive definite") from exc
    gain = s.cov @ _H.T @ np.linalg.inv(innovation_cov)
    mean = s.mean + gain @ (z - _H @ s.mean)
    ikh = np.eye(_DIM) - gain @ _H
    cov = ikh @ s.cov @ ikh.T + gain @ r @ gain.T
    return KalmanState(mean=mean, cov=0.5 * (cov + cov.T))
