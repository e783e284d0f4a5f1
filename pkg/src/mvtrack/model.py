"""Core domain types shared by every stage of the tracker.

Boxes are center-parameterized and kept in continuous (sub-pixel)
coordinates; discretization happens only at file I/O. Object ids are
monotonically increasing and never reused, even after deletion.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

# An appearance feature patch is a plain float array of shape (m, m, c):
# m spatial bins per side, c channels.
FeaturePatch = np.ndarray


class ConfigError(ValueError):
    """Invalid configuration (maps to CLI exit code 2)."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: center (x, y) plus width/height, all in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w} h={self.h}")

    @property
    def left(self) -> float:
        return self.x - self.w / 2

    @property
    def top(self) -> float:
        return self.y - self.h / 2

    @property
    def right(self) -> float:
        return self.x + self.w / 2

    @property
    def bottom(self) -> float:
        return self.y + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return self.left, self.top, self.right, self.bottom

    @classmethod
    def from_corners(cls, left: float, top: float, right: float, bottom: float) -> "BBox":
        return cls((left + right) / 2, (top + bottom) / 2, right - left, bottom - top)


@dataclass(frozen=True)
class Velocity:
    """Normalized box motion: (dx/w, dy/h, log width ratio, log height ratio)."""

    vx: float
    vy: float
    vw: float
    vh: float

    def __post_init__(self):
        for name in ("vx", "vy", "vw", "vh"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"velocity component {name} must be finite")


@dataclass(frozen=True)
class Detection:
    """One detector output: box, confidence in [0, 1], appearance patch."""

    bbox: BBox
    confidence: float
    feature: FeaturePatch

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0,1], got {self.confidence}")


class LifecycleState(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"  # absorbing: once deleted, never leaves


@dataclass
class TrackedObject:
    """A tracked identity: box, lifecycle state, bounded feature gallery.

    `hits`/`misses` count consecutive key frames with/without an associated
    detection; each key-frame update increments exactly one and resets the
    other.
    """

    id: int
    bbox: BBox
    state: LifecycleState
    gallery: deque  # deque[FeaturePatch] with maxlen = l_f
    hits: int = 0
    misses: int = 0


@dataclass
class MotionFrame:
    """Per-frame block-grid motion data.

    `mv` has shape (2, gw, gh) indexed [component, bx, by] with component 0 =
    horizontal and 1 = vertical displacement in whole pixels, describing how
    each block moved from the previous frame to this one. `residual` has
    shape (gw, gh). Intra frames carry no motion: both tensors are all-zero.
    """

    index: int
    kind: str  # "I" or "P"
    mv: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        if self.kind not in ("I", "P"):
            raise ValueError(f"frame kind must be I or P, got {self.kind!r}")
        if self.mv.ndim != 3 or self.mv.shape[0] != 2:
            raise ValueError(f"mv must have shape (2, gw, gh), got {self.mv.shape}")
        if self.residual.shape != self.mv.shape[1:]:
            raise ValueError("residual grid does not match mv grid")
        if self.kind == "I" and (np.any(self.mv) or np.any(self.residual)):
            raise ValueError(f"I-frame {self.index} must carry all-zero motion data")

    @classmethod
    def intra(cls, index: int, gw: int, gh: int) -> "MotionFrame":
        return cls(index, "I", np.zeros((2, gw, gh), dtype=np.int32), np.zeros((gw, gh)))


ASSOCIATION_MODES = ("twostep", "onestep")
PROPAGATORS = ("bboxavg", "pixelshift", "regressor")


@dataclass(frozen=True)
class TrackerConfig:
    """Tracker hyperparameters. K is the key-frame period and must divide
    the stream's GOP size (checked against the stream header at run time)."""

    K: int = 3
    tau_iou: float = 0.3
    tau_app: float = 0.25
    conf_min: float = 0.95
    c_confirm: float = 0.99
    l_confirm: int = 3
    l_demote: int = 2
    l_delete: int = 10
    l_f: int = 24
    m: int = 7
    association_mode: str = "twostep"
    alpha: float = 0.5
    propagator: str = "regressor"

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        for name in ("tau_iou", "tau_app", "conf_min", "c_confirm", "alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1], got {v}")
        for name in ("l_confirm", "l_demote", "l_delete", "l_f", "m"):
            v = getattr(self, name)
            if v < 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        if self.association_mode not in ASSOCIATION_MODES:
            raise ConfigError(f"unknown association mode {self.association_mode!r}")
        if self.propagator not in PROPAGATORS:
            raise ConfigError(f"unknown propagator {self.propagator!r}")


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 for disjoint or touching.

    Areas are computed in corner space so the ratio stays in [0, 1] even when
    corner rounding at large coordinates makes w*h inconsistent.
    """
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a.right - a.left) * (a.bottom - a.top)
    area_b = (b.right - b.left) * (b.bottom - b.top)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return inter / union


def predict_bbox(v: Velocity, prev: BBox) -> BBox:
    """Advance a box by one step of normalized velocity.

    The center moves by (w*vx, h*vy) and the size scales by exp(vw), exp(vh),
    so sizes stay positive for any finite velocity.
    """
    return BBox(
        prev.w * v.vx + prev.x,
        prev.h * v.vy + prev.y,
        prev.w * math.exp(v.vw),
        prev.h * math.exp(v.vh),
    )


def inverse_velocity(prev: BBox, next: BBox) -> Velocity:
    """Velocity that carries `prev` onto `next`; inverse of predict_bbox."""
    return Velocity(
        (next.x - prev.x) / prev.w,
        (next.y - prev.y) / prev.h,
        math.log(next.w / prev.w),
        math.log(next.h / prev.h),
    )
