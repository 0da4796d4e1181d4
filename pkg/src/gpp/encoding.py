"""Orientation classes, anchor-relative regression targets and the training
losses, written as plain scalar functions.

Orientation: the viewpoint-relative yaw ``alpha`` is split into four
quarter-turn bins anchored at -pi (bin k covers [-pi + k pi/2, -pi + (k+1) pi/2)).
Each bin fixes which bottom corner of the box is nearest the camera and whether
the left or right image keypoint shares the length edge with it. A second bit
(``sign_split``) records on which side of the anchor center the middle keypoint
falls, so the network can regress |dx| for the middle and top keypoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, LengthMismatch

N_YAW_BINS = 4
N_ORIENTATIONS = 8


@dataclass(frozen=True)
class OrientationClass:
    yaw_bin: int
    sign_split: int

    def __post_init__(self):
        if not 0 <= self.yaw_bin < N_YAW_BINS:
            raise ValueError(f"yaw_bin must be in [0, 4), got {self.yaw_bin}")
        if self.sign_split not in (0, 1):
            raise ValueError(f"sign_split must be 0 or 1, got {self.sign_split}")

    @property
    def id(self) -> int:
        return 2 * self.yaw_bin + self.sign_split

    @classmethod
    def from_id(cls, class_id: int) -> "OrientationClass":
        class_id = int(class_id)
        if not 0 <= class_id < N_ORIENTATIONS:
            raise ValueError(f"orientation id must be in [0, 8), got {class_id}")
        return cls(class_id // 2, class_id % 2)

    @property
    def left_is_length(self) -> bool:
        """True when the (left, middle) keypoint pair spans the box length."""
        return self.yaw_bin % 2 == 0

    @property
    def heading_sign(self) -> int:
        """+1 when the box heading points away from the nearest corner along
        the length edge, i.e. heading = -sign * (length_neighbor - middle)."""
        return 1 if self.yaw_bin >= 2 else -1

    @property
    def lateral_sign(self) -> int:
        return -1 if self.yaw_bin in (1, 2) else 1

    def mirrored(self) -> "OrientationClass":
        """Class of the horizontally flipped image (alpha -> pi - alpha)."""
        return OrientationClass(self.yaw_bin ^ 1, 1 - self.sign_split)


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi


def yaw_bin(alpha: float) -> int:
    a = wrap_angle(alpha)
    k = int(math.floor((a + math.pi) / (math.pi / 2)))
    return min(max(k, 0), N_YAW_BINS - 1)


def yaw_to_class(alpha: float, middle_x: float, center_x: float) -> OrientationClass:
    """Orientation class from viewpoint yaw and the middle keypoint's side.

    ``sign_split`` is 0 when the middle keypoint lies left of (or on) the
    anchor/box center column, 1 otherwise.
    """
    return OrientationClass(yaw_bin(alpha), 0 if middle_x <= center_x else 1)


def bin_center(k: int) -> float:
    return -math.pi + (k + 0.5) * math.pi / 2


@dataclass(frozen=True)
class Anchor:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate anchor {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center_x(self) -> float:
        return 0.5 * (self.x1 + self.x2)


@dataclass(frozen=True)
class Dimensions3D:
    h: float
    w: float
    l: float

    def __post_init__(self):
        if not (0 < self.h < 6 and 0 < self.w < 4 and 0 < self.l < 25):
            raise ValueError(f"implausible object dimensions {self}")

    def as_tuple(self) -> tuple:
        return (self.h, self.w, self.l)


@dataclass(frozen=True)
class RegressionTargets:
    """Anchor-normalized offsets. Keypoint x-offsets of the middle and top
    keypoints are magnitudes; their sign lives in ``OrientationClass``."""

    t_2d: tuple
    t_xl: tuple
    t_xm: tuple
    t_xr: tuple
    t_xt: tuple

    def as_array(self) -> np.ndarray:
        return np.array([*self.t_2d, *self.t_xl, *self.t_xm, *self.t_xr, *self.t_xt])

    @classmethod
    def from_array(cls, v) -> "RegressionTargets":
        v = [float(x) for x in v]
        if len(v) != 12:
            raise LengthMismatch(f"expected 12 target values, got {len(v)}")
        return cls(tuple(v[0:4]), tuple(v[4:6]), tuple(v[6:8]), tuple(v[8:10]), tuple(v[10:12]))


def encode_targets(anchor: Anchor, box2d, keypoints, cls: OrientationClass) -> RegressionTargets:
    """Offsets of a target box and its l/m/r/t keypoints from ``anchor``.

    Box edges regress from the matching anchor edge. The left and right
    keypoints regress x from the left and right anchor edges, the middle and
    top keypoints from the anchor center column. Bottom keypoints (l, m, r)
    regress y from the bottom edge, the top keypoint from the top edge.
    """
    x1, y1, x2, y2 = (float(v) for v in box2d)
    (xl, yl), (xm, ym), (xr, yr), (xt, yt) = np.asarray(keypoints, dtype=np.float64)
    aw, ah, cx = anchor.width, anchor.height, anchor.center_x
    return RegressionTargets(
        t_2d=(
            (x1 - anchor.x1) / aw,
            (y1 - anchor.y1) / ah,
            (x2 - anchor.x2) / aw,
            (y2 - anchor.y2) / ah,
        ),
        t_xl=((xl - anchor.x1) / aw, (yl - anchor.y2) / ah),
        t_xm=(abs(xm - cx) / aw, (ym - anchor.y2) / ah),
        t_xr=((xr - anchor.x2) / aw, (yr - anchor.y2) / ah),
        t_xt=(abs(xt - cx) / aw, (yt - anchor.y1) / ah),
    )


def decode_targets(anchor: Anchor, t: RegressionTargets, cls: OrientationClass):
    """Inverse of :func:`encode_targets`; returns (box2d, keypoints[4, 2])."""
    aw, ah, cx = anchor.width, anchor.height, anchor.center_x
    sign = -1.0 if cls.sign_split == 0 else 1.0
    box = np.array(
        [
            anchor.x1 + t.t_2d[0] * aw,
            anchor.y1 + t.t_2d[1] * ah,
            anchor.x2 + t.t_2d[2] * aw,
            anchor.y2 + t.t_2d[3] * ah,
        ]
    )
    kps = np.array(
        [
            [anchor.x1 + t.t_xl[0] * aw, anchor.y2 + t.t_xl[1] * ah],
            [cx + sign * abs(t.t_xm[0]) * aw, anchor.y2 + t.t_xm[1] * ah],
            [anchor.x2 + t.t_xr[0] * aw, anchor.y2 + t.t_xr[1] * ah],
            [cx + sign * abs(t.t_xt[0]) * aw, anchor.y1 + t.t_xt[1] * ah],
        ]
    )
    return box, kps


def focal_loss(p, y, alpha=0.25, gamma=2.0) -> float:
    """Focal classification loss for one anchor.

    ``p`` holds per-(class, orientation) probabilities and ``y`` the one-hot
    label. A positive anchor contributes ``-alpha (1 - p)^gamma log p`` at its
    true entry only. An all-zero ``y`` marks a negative anchor, for which
    every entry is a negative: ``-(1 - alpha) p^gamma log(1 - p)``.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise LengthMismatch(f"p has {p.size} entries, y has {y.size}")
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise DomainError("probabilities must lie in (0, 1]")
    if not np.all((y == 0) | (y == 1)) or y.sum() > 1:
        raise DomainError("y must be one-hot or all zero")
    if y.sum() == 1:
        pt = p[y == 1][0]
        return float(-alpha * (1.0 - pt) ** gamma * math.log(pt))
    if np.any(p >= 1):
        raise DomainError("negative anchor with probability 1 has infinite loss")
    return float(-np.sum((1.0 - alpha) * p**gamma * np.log1p(-p)))


def classification_loss(probs, labels, alpha=0.25, gamma=2.0) -> float:
    """Sum of :func:`focal_loss` over anchors normalized by the positive count.

    ``labels[i]`` is the true flat (class, orientation) index or -1 for a
    negative anchor.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=int).ravel()
    if probs.shape[0] != labels.size:
        raise LengthMismatch("one label per anchor required")
    total = 0.0
    for p, lab in zip(probs, labels):
        y = np.zeros_like(p)
        if lab >= 0:
            y[lab] = 1.0
        total += focal_loss(p, y, alpha, gamma)
    n_pos = int(np.sum(labels >= 0))
    return total / max(n_pos, 1)


def smooth_l1(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {target.size} targets")
    x = np.abs(pred - target)
    return float(np.sum(np.where(x < 1.0, 0.5 * x * x, x - 0.5)))


def regression_loss(pred: RegressionTargets, target: RegressionTargets) -> float:
    """Box plus four keypoint smooth-L1 terms for one positive anchor."""
    return sum(
        smooth_l1(getattr(pred, f), getattr(target, f))
        for f in ("t_2d", "t_xl", "t_xm", "t_xr", "t_xt")
    )


def dimension_loss(pred, target) -> float:
    return smooth_l1(pred, target)


def total_loss(class_loss, reg_loss, dim_loss, lambda_reg=1.0, lambda_dim=1.0) -> float:
    return class_loss + lambda_reg * reg_loss + lambda_dim * dim_loss
