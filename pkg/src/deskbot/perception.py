"""Simulated scene, orthographic depth camera, detector, and the
bbox -> center -> depth -> world localization pipeline.

The camera is orthographic: a point at camera-frame (x, y, z) lands on
pixel (cx + x/scale, cy - y/scale) regardless of z, and the depth buffer
stores z directly. Objects are axis-aligned boxes in world coordinates;
each rasterizes as its projected bounding rectangle filled with the
object's near-face depth (the smallest camera-frame z over its corners).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import transforms
from .kinematics import DHChain, forward_kinematics

__all__ = [
    "SceneObject",
    "Scene",
    "CameraModel",
    "Detection",
    "DepthImage",
    "WorldDetection",
    "DetectorProfile",
    "NotFound",
    "OutOfImageError",
    "NoDepthError",
    "render",
    "detect",
    "bbox_center",
    "lift_to_camera",
    "camera_to_world",
    "locate",
    "load_scene",
    "scene_to_dict",
    "dump_depth_pgm",
]

LIGHTING_LEVELS = ("Bright", "Dim")


class OutOfImageError(ValueError):
    pass


class NoDepthError(RuntimeError):
    pass


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SceneObject:
    id: int
    class_label: str
    center_world: np.ndarray
    half_extents: np.ndarray
    graspable: bool = False

    def __post_init__(self):
        if not self.class_label:
            raise ValueError("class_label must be non-empty")
        object.__setattr__(self, "center_world", _vec3(self.center_world))
        he = _vec3(self.half_extents)
        if not np.all(he > 0):
            raise ValueError("half_extents must be positive")
        object.__setattr__(self, "half_extents", he)

    def __eq__(self, other):
        if not isinstance(other, SceneObject):
            return NotImplemented
        return (self.id == other.id and self.class_label == other.class_label
                and self.graspable == other.graspable
                and np.array_equal(self.center_world, other.center_world)
                and np.array_equal(self.half_extents, other.half_extents))

    def corners(self) -> np.ndarray:
        """8x3 world-frame corners of the axis-aligned box."""
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return self.center_world + signs * self.half_extents


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    lighting: str = "Bright"
    clutter_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        if self.lighting not in LIGHTING_LEVELS:
            raise ValueError(f"lighting must be one of {LIGHTING_LEVELS}")
        if not (0.0 <= self.clutter_fraction <= 1.0):
            raise ValueError("clutter_fraction must lie in [0, 1]")

    def by_label(self, label: str) -> list[SceneObject]:
        return [o for o in self.objects if o.class_label == label]


@dataclass(frozen=True)
class CameraModel:
    width_px: int = 640
    height_px: int = 480
    scale: float = 0.001  # meters per pixel
    depth_range: tuple[float, float] = (0.01, 2.0)

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("image dimensions must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        near, far = self.depth_range
        if not (near < far):
            raise ValueError("depth_range must satisfy near < far")

    @property
    def principal_point(self) -> tuple[float, float]:
        return self.width_px / 2.0, self.height_px / 2.0


@dataclass(frozen=True)
class Detection:
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    class_label: str
    confidence: float
    object_id: int | None = None  # simulator provenance; None for false boxes

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w < 1 or h < 1:
            raise ValueError("bbox must be at least 1x1 px")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]


@dataclass(frozen=True)
class DepthImage:
    width: int
    height: int
    depth: np.ndarray  # (height, width), meters; far-plane where empty

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.shape != (self.height, self.width):
            raise ValueError("depth shape must be (height, width)")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)


@dataclass(frozen=True)
class WorldDetection:
    class_label: str
    position_world: np.ndarray
    confidence: float

    def __post_init__(self):
        p = _vec3(self.position_world)
        if not np.all(np.isfinite(p)):
            raise ValueError("position must be finite")
        object.__setattr__(self, "position_world", p)


@dataclass(frozen=True)
class NotFound:
    reason: str


@dataclass(frozen=True)
class DetectorProfile:
    """Degradation knobs for the simulated detector.

    The confidence term is base * lighting_factor * (1 - clutter_penalty *
    clutter_fraction) + N(0, noise_sigma), clamped to [0, 1]; boxes under
    threshold are dropped. Dim lighting additionally scales the corner
    jitter and can drop detections outright, which is what degrades
    downstream localization rather than just the reported confidence.
    """
    base_confidence: float = 0.95
    dim_factor: float = 0.8
    clutter_penalty: float = 0.5
    noise_sigma: float = 0.03
    jitter_px: float = 2.0
    threshold: float = 0.5
    false_boxes_per_unit_clutter: int = 10
    dim_miss_rate: float = 0.35
    dim_jitter_scale: float = 2.5

    def mean_confidence(self, lighting: str, clutter_fraction: float) -> float:
        """Deterministic pre-noise confidence term."""
        factor = self.dim_factor if lighting == "Dim" else 1.0
        return self.base_confidence * factor * (1.0 - self.clutter_penalty * clutter_fraction)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _project(camera: CameraModel, pts_cam: np.ndarray) -> np.ndarray:
    """Camera-frame points (N,3) -> pixel coordinates (N,2); image y runs down."""
    cx, cy = camera.principal_point
    u = cx + pts_cam[:, 0] / camera.scale
    v = cy - pts_cam[:, 1] / camera.scale
    return np.stack([u, v], axis=1)


def _clip_bbox(camera: CameraModel, x0, y0, x1, y1):
    x0 = max(x0, 0.0)
    y0 = max(y0, 0.0)
    x1 = min(x1, float(camera.width_px))
    y1 = min(y1, float(camera.height_px))
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def render(scene: Scene, camera: CameraModel, camera_pose_world: np.ndarray):
    """Ground-truth boxes plus a depth buffer (near-face z, nearest wins).

    Objects are processed in ascending id order so equal-depth overlaps
    resolve to the lower id. An object contributes only when its center
    projects inside the frame and its near face lies within depth range.
    """
    pose = transforms.check_rigid(camera_pose_world)
    world_to_cam = transforms.invert(pose)
    near, far = camera.depth_range
    depth = np.full((camera.height_px, camera.width_px), far)
    boxes: list[Detection] = []

    for obj in sorted(scene.objects, key=lambda o: o.id):
        corners_cam = np.array([transforms.apply(world_to_cam, c) for c in obj.corners()])
        center_cam = transforms.apply(world_to_cam, obj.center_world)
        cu, cv = _project(camera, center_cam[None, :])[0]
        if not (0 <= cu < camera.width_px and 0 <= cv < camera.height_px):
            continue
        z_near = float(np.min(corners_cam[:, 2]))
        if not (near <= z_near <= far):
            continue
        px = _project(camera, corners_cam)
        bbox = _clip_bbox(camera, px[:, 0].min(), px[:, 1].min(),
                          px[:, 0].max(), px[:, 1].max())
        if bbox is None:
            continue
        boxes.append(Detection(bbox=bbox, class_label=obj.class_label,
                               confidence=1.0, object_id=obj.id))
        x, y, w, h = bbox
        ix0, iy0 = int(np.floor(x)), int(np.floor(y))
        ix1 = min(int(np.ceil(x + w)), camera.width_px)
        iy1 = min(int(np.ceil(y + h)), camera.height_px)
        region = depth[iy0:iy1, ix0:ix1]
        np.minimum(region, z_near, out=region)

    return boxes, DepthImage(width=camera.width_px, height=camera.height_px, depth=depth)


# ---------------------------------------------------------------------------
# detection degradation
# ---------------------------------------------------------------------------

def detect(ground_truth: list[Detection], scene: Scene, rng_seed,
           camera: CameraModel | None = None,
           profile: DetectorProfile | None = None) -> list[Detection]:
    """Degrade ground-truth boxes into noisy detections; pure in (inputs, seed)."""
    camera = camera or CameraModel()
    profile = profile or DetectorProfile()
    rng = np.random.default_rng(rng_seed)
    dim = scene.lighting == "Dim"
    mean_conf = profile.mean_confidence(scene.lighting, scene.clutter_fraction)
    jitter = profile.jitter_px * (profile.dim_jitter_scale if dim else 1.0)

    out: list[Detection] = []
    for det in ground_truth:
        conf = mean_conf + rng.normal(0.0, profile.noise_sigma) if profile.noise_sigma > 0 else mean_conf
        conf = float(np.clip(conf, 0.0, 1.0))
        miss = dim and profile.dim_miss_rate > 0 and rng.random() < profile.dim_miss_rate
        x, y, w, h = det.bbox
        dx0, dy0, dx1, dy1 = rng.uniform(-jitter, jitter, size=4) if jitter > 0 else (0, 0, 0, 0)
        bbox = _clip_bbox(camera, x + dx0, y + dy0, x + w + dx1, y + h + dy1)
        if miss or conf < profile.threshold or bbox is None:
            continue
        out.append(Detection(bbox=bbox, class_label=det.class_label,
                             confidence=conf, object_id=det.object_id))

    n_false = int(np.floor(profile.false_boxes_per_unit_clutter * scene.clutter_fraction))
    for _ in range(n_false):
        w = rng.uniform(10, 60)
        h = rng.uniform(10, 60)
        x = rng.uniform(0, camera.width_px - w)
        y = rng.uniform(0, camera.height_px - h)
        conf = float(rng.uniform(profile.threshold, 0.9))
        out.append(Detection(bbox=(x, y, w, h), class_label="clutter", confidence=conf))
    return out


# ---------------------------------------------------------------------------
# localization pipeline
# ---------------------------------------------------------------------------

def bbox_center(d: Detection) -> tuple[float, float]:
    x, y, w, h = d.bbox
    return x + w / 2.0, y + h / 2.0


def lift_to_camera(center: tuple[float, float], depth: DepthImage,
                   camera: CameraModel) -> np.ndarray:
    """Pixel center + bilinear depth -> camera-frame point (meters)."""
    u, v = center
    if not (0 <= u <= depth.width - 1 and 0 <= v <= depth.height - 1):
        raise OutOfImageError(f"center ({u:.1f}, {v:.1f}) outside image")
    x0, y0 = int(np.floor(u)), int(np.floor(v))
    x1, y1 = min(x0 + 1, depth.width - 1), min(y0 + 1, depth.height - 1)
    fx, fy = u - x0, v - y0
    d = (depth.depth[y0, x0] * (1 - fx) * (1 - fy)
         + depth.depth[y0, x1] * fx * (1 - fy)
         + depth.depth[y1, x0] * (1 - fx) * fy
         + depth.depth[y1, x1] * fx * fy)
    near, far = camera.depth_range
    if d >= far - 1e-12:
        raise NoDepthError(f"no depth at ({u:.1f}, {v:.1f})")
    cx, cy = camera.principal_point
    return np.array([(u - cx) * camera.scale, -(v - cy) * camera.scale, d])


def camera_to_world(t_cam, chain: DHChain, q) -> np.ndarray:
    """T2 = M . T1 with M = FK(chain, q) . mount (end-effector camera offset)."""
    m = forward_kinematics(chain, q) @ chain.mount
    return transforms.apply(m, np.asarray(t_cam, dtype=float).reshape(3))


def locate(scene: Scene, camera: CameraModel, chain: DHChain, q, class_label,
           seed, profile: DetectorProfile | None = None):
    """Full pipeline for one class: render, detect, pick a box, lift, transform.

    class_label may be a single label or a collection of acceptable labels.
    Best box = highest confidence, ties by smaller area, then lower x.
    Returns WorldDetection on success, NotFound(reason) otherwise.
    """
    labels = {class_label} if isinstance(class_label, str) else set(class_label)
    pose = forward_kinematics(chain, q) @ chain.mount
    truth, depth = render(scene, camera, pose)
    dets = [d for d in detect(truth, scene, seed, camera=camera, profile=profile)
            if d.class_label in labels]
    if not dets:
        return NotFound(reason="no-detection")
    best = min(dets, key=lambda d: (-d.confidence, d.area, d.bbox[0]))
    try:
        t_cam = lift_to_camera(bbox_center(best), depth, camera)
    except NoDepthError:
        return NotFound(reason="no-depth")
    except OutOfImageError:
        return NotFound(reason="out-of-image")
    return WorldDetection(class_label=best.class_label,
                          position_world=camera_to_world(t_cam, chain, q),
                          confidence=best.confidence)


# ---------------------------------------------------------------------------
# scene files and depth dumps
# ---------------------------------------------------------------------------

def _resolve(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    candidate = Path(str(resources.files("deskbot").joinpath(
        "data", p.name if p.suffix else f"{p.name}.json")))
    if candidate.exists():
        return candidate
    raise FileNotFoundError(f"scene file not found: {name_or_path}")


def load_scene(name_or_path) -> Scene:
    raw = json.loads(_resolve(name_or_path).read_text(encoding="utf-8"))
    objects = tuple(
        SceneObject(id=o["id"], class_label=o["class_label"],
                    center_world=o["center"], half_extents=o["half_extents"],
                    graspable=o.get("graspable", False))
        for o in raw["objects"])
    return Scene(objects=objects, lighting=raw.get("lighting", "Bright"),
                 clutter_fraction=raw.get("clutter_fraction", 0.0))


def scene_to_dict(scene: Scene) -> dict:
    return {
        "objects": [
            {"id": o.id, "class_label": o.class_label,
             "center": [float(v) for v in o.center_world],
             "half_extents": [float(v) for v in o.half_extents],
             "graspable": o.graspable}
            for o in scene.objects],
        "lighting": scene.lighting,
        "clutter_fraction": scene.clutter_fraction,
    }


def dump_depth_pgm(depth: DepthImage, path) -> None:
    """16-bit PGM in millimeters (big-endian per the format), for debugging."""
    mm = np.clip(np.round(depth.depth * 1000.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii"))
        fh.write(mm.tobytes())
