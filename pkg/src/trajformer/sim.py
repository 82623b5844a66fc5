"""Synthetic scenes: ground-truth motion, noisy detections and LiDAR-like point clouds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxState, bev_distance

CLASSES = ("vehicle", "pedestrian", "cyclist")

# mean (l, w, h), relative size spread, speed range (m/s), max turn rate (rad/s), z center
CLASS_PROFILES = {
    "vehicle": dict(size=(4.5, 1.9, 1.6), spread=0.1, speed=(3.0, 15.0), turn=0.35, z=0.8),
    "pedestrian": dict(size=(0.8, 0.7, 1.75), spread=0.1, speed=(0.5, 2.0), turn=0.5, z=0.875),
    "cyclist": dict(size=(1.8, 0.7, 1.7), spread=0.1, speed=(2.0, 7.0), turn=0.4, z=0.85),
}
# surface points at the 10 m reference range
POINT_DENSITY = {"vehicle": 300, "pedestrian": 80, "cyclist": 100}
REFERENCE_RANGE = 10.0


def one_hot(cls: str) -> np.ndarray:
    v = np.zeros(len(CLASSES))
    v[CLASSES.index(cls)] = 1.0
    return v


class GenerationError(RuntimeError):
    pass


@dataclass
class SceneSpec:
    frames: int = 40
    dt: float = 0.1
    objects: dict = field(default_factory=lambda: {"vehicle": 4, "pedestrian": 2, "cyclist": 1})
    motion_mix: dict = field(default_factory=lambda: {"cv": 0.5, "ct": 0.3, "sg": 0.2})
    bounds: float = 75.0
    clearance: float = 2.5
    clutter_points: int = 60
    seed: int = 0
    # hand-specified objects placed before random ones: dicts with cls, size and rollout() motion keys
    scripted: list = field(default_factory=list)

    def validate(self, min_frames: int = 16) -> None:
        if self.frames < min_frames:
            raise GenerationError(f"scene needs at least {min_frames} frames, got {self.frames}")
        if self.bounds <= 0 or self.dt <= 0:
            raise GenerationError("bounds and frame period must be positive")
        if any(k not in CLASSES for k in self.objects):
            raise GenerationError(f"unknown class in {self.objects}")
        if any(k not in ("cv", "ct", "sg") for k in self.motion_mix):
            raise GenerationError(f"unknown motion model in {self.motion_mix}")


@dataclass
class DetectionNoise:
    drop: dict = field(default_factory=lambda: {c: 0.15 for c in CLASSES})
    sigma_center: float = 0.15
    sigma_heading: float = 0.05
    sigma_size: float = 0.03
    fp_rate: float = 2.0
    tp_score: tuple | None = (12.0, 1.5)  # Beta(a, b); None means score 1.0
    fp_score: tuple = (2.0, 8.0)

    def validate(self) -> None:
        if any(not 0.0 <= p <= 1.0 for p in self.drop.values()):
            raise ValueError("drop probabilities must lie in [0, 1]")
        if min(self.sigma_center, self.sigma_heading, self.sigma_size, self.fp_rate) < 0:
            raise ValueError("noise magnitudes must be non-negative")


NOISE_PRESETS = {
    "centerpoint-like": lambda: DetectionNoise(),
    "perfect": lambda: DetectionNoise(
        drop={c: 0.0 for c in CLASSES}, sigma_center=0.0, sigma_heading=0.0, sigma_size=0.0, fp_rate=0.0, tp_score=None
    ),
    "drop20": lambda: DetectionNoise(drop={c: 0.2 for c in CLASSES}),
}


def noise_preset(name: str) -> DetectionNoise:
    try:
        return NOISE_PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}") from None


@dataclass(frozen=True)
class LabeledBox:
    """A box with identity: ground-truth object, detection, or track state."""

    id: int
    cls: str
    box: BoxState
    gt_id: int | None = None


@dataclass
class Frame:
    t: int
    gt: list[LabeledBox]
    detections: list[LabeledBox] = field(default_factory=list)
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    point_source: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass
class Scene:
    spec: SceneSpec
    frames: list[Frame]
    noise: DetectionNoise | None = None
    detection_seed: int | None = None

    def gt_tracks(self) -> dict[int, tuple[str, list[BoxState]]]:
        out: dict[int, tuple[str, list[BoxState]]] = {}
        for fr in self.frames:
            for g in fr.gt:
                out.setdefault(g.id, (g.cls, []))[1].append(g.box)
        return out


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _trajectory(cls: str, model: str, spec: SceneSpec, rng: np.random.Generator) -> list[BoxState]:
    prof = CLASS_PROFILES[cls]
    base = np.array(prof["size"])
    size = base * (1.0 + prof["spread"] * rng.uniform(-1, 1, size=3))
    margin = 5.0
    motion = dict(
        model=model,
        speed=rng.uniform(*prof["speed"]),
        heading=rng.uniform(-math.pi, math.pi),
        omega=rng.uniform(-prof["turn"], prof["turn"]) if model == "ct" else 0.0,
        period=rng.uniform(2.0, 4.0),
        phase=rng.uniform(0, 2 * math.pi),
        x=rng.uniform(-spec.bounds + margin, spec.bounds - margin),
        y=rng.uniform(-spec.bounds + margin, spec.bounds - margin),
    )
    return rollout(cls, size, motion, spec)


def rollout(cls: str, size, motion: dict, spec: SceneSpec) -> list[BoxState]:
    """Integrate one object's motion model over ``spec.frames`` frames.

    ``motion`` keys: model (cv | ct | sg), x, y, heading, speed, and optionally
    omega (ct), period and phase (sg).
    """
    l, w, h = (float(v) for v in size)
    model = motion["model"]
    x, y, heading = float(motion["x"]), float(motion["y"]), float(motion["heading"])
    v0 = float(motion["speed"])
    omega = float(motion.get("omega", 0.0)) if model == "ct" else 0.0
    period = float(motion.get("period", 3.0))
    phase = float(motion.get("phase", 0.0))
    z = CLASS_PROFILES[cls]["z"]
    boxes = []
    for k in range(spec.frames):
        boxes.append(BoxState(x, y, z, l, w, h, heading, t=k))
        if model == "sg":
            speed = v0 * max(0.0, math.sin(phase + 2 * math.pi * k * spec.dt / period))
        else:
            speed = v0
        mid = heading + 0.5 * omega * spec.dt
        x += speed * spec.dt * math.cos(mid)
        y += speed * spec.dt * math.sin(mid)
        heading = heading + omega * spec.dt
    return boxes


def _radius(b: BoxState) -> float:
    return 0.5 * math.hypot(b.l, b.w)


def generate_scene(spec: SceneSpec, max_attempts: int = 300) -> Scene:
    """Ground-truth boxes for every frame; objects persist for the whole scene."""
    spec.validate()
    rng = _rng(spec.seed, 1)
    models = sorted(spec.motion_mix)
    weights = np.array([spec.motion_mix[m] for m in models], dtype=np.float64)
    weights = weights / weights.sum()
    placed: list[tuple[str, list[BoxState]]] = []
    for obj in spec.scripted:
        cls = obj["cls"]
        size = obj.get("size", CLASS_PROFILES[cls]["size"])
        placed.append((cls, rollout(cls, size, obj, spec)))
    for cls in CLASSES:
        for _ in range(spec.objects.get(cls, 0)):
            for _attempt in range(max_attempts):
                model = models[rng.choice(len(models), p=weights)]
                traj = _trajectory(cls, model, spec, rng)
                if _fits(traj, placed, spec):
                    placed.append((cls, traj))
                    break
            else:
                raise GenerationError(f"could not place a {cls} without conflicts after {max_attempts} attempts")
    frames = []
    for k in range(spec.frames):
        gt = [LabeledBox(i, cls, traj[k]) for i, (cls, traj) in enumerate(placed)]
        frames.append(Frame(k, gt))
    return Scene(spec, frames)


def _fits(traj: list[BoxState], placed, spec: SceneSpec) -> bool:
    lim = spec.bounds
    for b in traj:
        if abs(b.x) > lim - _radius(b) or abs(b.y) > lim - _radius(b):
            return False
    for _, other in placed:
        for a, b in zip(traj, other):
            if bev_distance(a, b) < _radius(a) + _radius(b) + spec.clearance:
                return False
    return True


def simulate_detections(scene: Scene, noise: DetectionNoise, seed: int) -> Scene:
    """Fill every frame's detection list in place (and return the scene)."""
    noise.validate()
    spec = scene.spec
    for fr in scene.frames:
        rng = _rng(seed, 2, fr.t)
        dets: list[LabeledBox] = []
        for g in fr.gt:
            drop = rng.random() < noise.drop.get(g.cls, 0.0)
            jitter = rng.normal(size=6)
            score_draw = rng.beta(*noise.tp_score) if noise.tp_score is not None else 1.0
            if drop:
                continue
            b = g.box
            box = BoxState(
                b.x + noise.sigma_center * jitter[0],
                b.y + noise.sigma_center * jitter[1],
                b.z + noise.sigma_center * 0.5 * jitter[2],
                b.l * (1.0 + noise.sigma_size * jitter[3]),
                b.w * (1.0 + noise.sigma_size * jitter[4]),
                b.h,
                b.heading + noise.sigma_heading * jitter[5],
                t=fr.t,
                score=float(score_draw),
            )
            dets.append(LabeledBox(len(dets), g.cls, box, gt_id=g.id))
        n_fp = rng.poisson(noise.fp_rate) if noise.fp_rate > 0 else 0
        for _ in range(n_fp):
            cls = CLASSES[rng.integers(len(CLASSES))]
            prof = CLASS_PROFILES[cls]
            lim = spec.bounds - 5.0
            box = BoxState(
                rng.uniform(-lim, lim),
                rng.uniform(-lim, lim),
                prof["z"],
                *prof["size"],
                rng.uniform(-math.pi, math.pi),
                t=fr.t,
                score=float(rng.beta(*noise.fp_score)),
            )
            dets.append(LabeledBox(len(dets), cls, box, gt_id=None))
        fr.detections = dets
    scene.noise = noise
    scene.detection_seed = seed
    return scene


def _surface_points(b: BoxState, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points on the sensor-facing faces of ``b`` (sensor at the origin)."""
    if n <= 0:
        return np.zeros((0, 3))
    half = 0.5 * np.array([b.l, b.w, b.h])
    c, s = math.cos(b.heading), math.sin(b.heading)
    # sensor position in the box frame
    d = -b.center
    sensor = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])
    faces = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            if sign * sensor[axis] > half[axis] or (axis == 2 and sign > 0):
                others = [a for a in range(3) if a != axis]
                area = 4 * half[others[0]] * half[others[1]]
                faces.append((axis, sign, others, area))
    if not faces:
        faces = [(2, 1.0, [0, 1], 4 * half[0] * half[1])]
    areas = np.array([f[3] for f in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=(n, 2))
    local = np.zeros((n, 3))
    for i, (axis, sign, others, _) in enumerate(faces):
        sel = choice == i
        local[sel, axis] = sign * half[axis]
        local[sel, others[0]] = u[sel, 0] * half[others[0]]
        local[sel, others[1]] = u[sel, 1] * half[others[1]]
    local += np.clip(rng.normal(scale=0.02, size=local.shape), -0.05, 0.05)
    world = np.empty_like(local)
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + b.x
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + b.y
    world[:, 2] = local[:, 2] + b.z
    return world


def expected_point_count(cls: str, b: BoxState) -> int:
    rng_m = max(math.hypot(b.x, b.y), REFERENCE_RANGE)
    return max(1, int(round(POINT_DENSITY[cls] * (REFERENCE_RANGE / rng_m) ** 2)))


def sample_points(frame: Frame, spec: SceneSpec, seed: int) -> Frame:
    """Attach a point cloud to ``frame``: object surface points plus uniform clutter."""
    rng = _rng(seed, 3, frame.t)
    chunks, sources = [], []
    for g in frame.gt:
        pts = _surface_points(g.box, expected_point_count(g.cls, g.box), rng)
        chunks.append(pts)
        sources.append(np.full(len(pts), g.id, dtype=np.int64))
    n_clutter = spec.clutter_points
    lim = spec.bounds
    clutter = np.column_stack(
        [rng.uniform(-lim, lim, n_clutter), rng.uniform(-lim, lim, n_clutter), rng.uniform(0.0, 2.0, n_clutter)]
    )
    chunks.append(clutter)
    sources.append(np.full(n_clutter, -1, dtype=np.int64))
    frame.points = np.concatenate(chunks, axis=0)
    frame.point_source = np.concatenate(sources)
    return frame


def build_scene(spec: SceneSpec, noise: DetectionNoise, with_points: bool = True) -> Scene:
    """GT, detections and point clouds, all derived from ``spec.seed``."""
    scene = generate_scene(spec)
    simulate_detections(scene, noise, seed=spec.seed)
    if with_points:
        for fr in scene.frames:
            sample_points(fr, spec, seed=spec.seed)
    return scene
