"""3D box math: corners, rotated BEV IoU, point-in-box and relative point encoding.

Corner order (local frame, before rotation by heading), followed by the center:

    0 (+l/2, +w/2, +h/2)   4 (+l/2, +w/2, -h/2)
    1 (+l/2, -w/2, +h/2)   5 (+l/2, -w/2, -h/2)
    2 (-l/2, -w/2, +h/2)   6 (-l/2, -w/2, -h/2)
    3 (-l/2, +w/2, +h/2)   7 (-l/2, +w/2, -h/2)
    8 center
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

CROP_MARGIN = 0.1
N_RAW_POINT_FEATURES = 28

_CORNER_SIGNS = np.array(
    [
        [1, 1, 1],
        [1, -1, 1],
        [-1, -1, 1],
        [-1, 1, 1],
        [1, 1, -1],
        [1, -1, -1],
        [-1, -1, -1],
        [-1, 1, -1],
        [0, 0, 0],
    ],
    dtype=np.float64,
)


class SentinelBoxError(ValueError):
    pass


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    wrapped = math.pi - np.mod(math.pi - a, 2.0 * math.pi)
    # in-range values pass through untouched (no rounding drift)
    out = np.where((a > -math.pi) & (a <= math.pi), a, wrapped)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BoxState:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    heading: float
    t: int = 0
    score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading) if not self._all_zero() else 0.0)
        if not self._all_zero() and min(self.l, self.w, self.h) <= 0:
            raise ValueError(f"box sizes must be positive: {(self.l, self.w, self.h)}")

    def _all_zero(self) -> bool:
        return self.x == self.y == self.z == self.l == self.w == self.h == self.heading == 0.0

    @classmethod
    def sentinel(cls, t: int = 0) -> "BoxState":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, t)

    @classmethod
    def from_array(cls, geom, t: int = 0, score: float | None = None) -> "BoxState":
        g = [float(v) for v in geom]
        return cls(*g[:7], t=t, score=score)

    @property
    def is_sentinel(self) -> bool:
        return self.l == 0.0 and self.w == 0.0 and self.h == 0.0

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def geometry(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.heading])

    def with_(self, **kw) -> "BoxState":
        return replace(self, **kw)


def _rotation(heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def corner_offsets(b: BoxState) -> np.ndarray:
    """The 9 representative points relative to the box center, in the world frame."""
    local = _CORNER_SIGNS * (0.5 * np.array([b.l, b.w, b.h]))
    return local @ _rotation(b.heading).T


def box_corners(b: BoxState) -> np.ndarray:
    """``[9, 3]``: 8 corners in the documented order, then the center."""
    if b.is_sentinel:
        raise SentinelBoxError("box_corners on the zero-pad sentinel")
    return b.center + corner_offsets(b)


def bev_polygon(b: BoxState) -> np.ndarray:
    """Counter-clockwise ground-plane rectangle, ``[4, 2]``."""
    c, s = math.cos(b.heading), math.sin(b.heading)
    hl, hw = 0.5 * b.l, 0.5 * b.w
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([b.x, b.y])


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_iou(a: BoxState, b: BoxState) -> float:
    if a.is_sentinel or b.is_sentinel:
        raise SentinelBoxError("bev_iou on the zero-pad sentinel")
    area_a, area_b = a.l * a.w, b.l * b.w
    if area_a <= 0 or area_b <= 0:
        return 0.0
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return 0.0
    pa, pb = bev_polygon(a), bev_polygon(b)
    # clip in a fixed canonical order so iou(a, b) == iou(b, a) exactly
    first, second = (pa, pb) if _key(a) <= _key(b) else (pb, pa)
    inter = polygon_area(clip_polygon(first, second))
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def _key(b: BoxState) -> tuple:
    return (b.x, b.y, b.l, b.w, b.heading)


def bev_distance(a: BoxState, b: BoxState) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def points_in_box(points: np.ndarray, b: BoxState, margin: float = CROP_MARGIN) -> np.ndarray:
    """Boolean mask of ``points[:, :3]`` inside ``b`` dilated by ``margin`` on every face."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    d = pts[:, :3] - b.center
    c, s = math.cos(b.heading), math.sin(b.heading)
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return (
        (np.abs(lx) <= 0.5 * b.l + margin)
        & (np.abs(ly) <= 0.5 * b.w + margin)
        & (np.abs(d[:, 2]) <= 0.5 * b.h + margin)
    )


@dataclass
class PointSample:
    points: np.ndarray  # [y_count, 4]: x, y, z, time offset (frames)
    empty: bool


def crop_and_sample_points(cloud: np.ndarray, b: BoxState, y_count: int, rng: np.random.Generator) -> PointSample:
    """Sample ``y_count`` points from ``cloud`` (``[n, 4]``) falling inside the dilated box."""
    if y_count < 1:
        raise ValueError("y_count must be >= 1")
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 4)
    if b.is_sentinel:
        inside = cloud[:0]
    else:
        inside = cloud[points_in_box(cloud, b)]
    if len(inside) == 0:
        fallback = np.tile(np.array([b.x, b.y, b.z, 0.0]), (y_count, 1))
        return PointSample(fallback, True)
    if len(inside) >= y_count:
        idx = rng.choice(len(inside), size=y_count, replace=False)
    else:
        idx = rng.choice(len(inside), size=y_count, replace=True)
    return PointSample(inside[np.sort(idx)], False)


def relative_point_encoding(points: np.ndarray, b: BoxState) -> np.ndarray:
    """``[y, 28]``: point minus each of the 9 representative points, then the time offset.

    Differences are taken as ``(p - center) - offset`` so translating the point
    and box together changes nothing.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    rel = pts[:, None, :3] - b.center  # [y, 1, 3]
    if b.is_sentinel:
        offsets = np.zeros((9, 3))
    else:
        offsets = corner_offsets(b)
    diffs = rel - offsets[None]  # [y, 9, 3]
    return np.concatenate([diffs.reshape(len(pts), 27), pts[:, 3:4]], axis=1)


def to_local(xy: np.ndarray, ref: BoxState) -> np.ndarray:
    """World ground-plane coordinates into the frame of ``ref`` (origin at center, x along heading)."""
    d = np.asarray(xy, dtype=np.float64)[..., :2] - np.array([ref.x, ref.y])
    c, s = math.cos(ref.heading), math.sin(ref.heading)
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def from_local(xy: np.ndarray, ref: BoxState) -> np.ndarray:
    d = np.asarray(xy, dtype=np.float64)
    c, s = math.cos(ref.heading), math.sin(ref.heading)
    return np.stack([c * d[..., 0] - s * d[..., 1] + ref.x, s * d[..., 0] + c * d[..., 1] + ref.y], axis=-1)
