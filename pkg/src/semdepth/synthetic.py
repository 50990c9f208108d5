"""Procedural driving-like scenes with exact depth, semantics and poses.

World frame = camera frame of the centre frame t: x right, y down, z forward.
The ground is the plane y = camera_height; the sky is a fronto-parallel plane
far beyond the evaluation cap, so sky pixels carry no usable ground truth
(like lidar-less sky in real data).  Objects are yaw-rotated boxes resting on
the ground.  Textures are sums of sinusoids whose amplitudes are attenuated by
the pixel footprint, which keeps rendered images band-limited enough for
bilinear warping to reproduce them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, PoseSE3, axis_angle_to_rotation, pixel_grid

ROAD, BUILDING, CAR, VEGETATION, SKY, POLE = range(6)
CLASS_NAMES = ("road", "building", "car", "vegetation", "sky", "pole")
NUM_CLASSES = len(CLASS_NAMES)

_BASE_COLORS = {
    ROAD: (0.42, 0.40, 0.40),
    BUILDING: (0.60, 0.45, 0.35),
    CAR: (0.25, 0.30, 0.60),
    VEGETATION: (0.30, 0.55, 0.25),
    SKY: (0.55, 0.70, 0.90),
    POLE: (0.75, 0.72, 0.30),
}

# (width, height, length) ranges per object class
_SIZES = {
    BUILDING: ((4.0, 8.0), (4.0, 9.0), (4.0, 10.0)),
    CAR: ((1.6, 2.0), (1.3, 1.7), (3.5, 4.5)),
    VEGETATION: ((1.0, 3.0), (1.5, 4.0), (1.0, 3.0)),
    POLE: ((0.2, 0.4), (3.0, 5.0), (0.2, 0.4)),
}


class DegenerateCameraError(ValueError):
    """A camera centre lies inside scene geometry."""


@dataclass
class SceneSpec:
    seed: int = 0
    num_objects: int = 6
    class_mix: dict = field(default_factory=lambda: {BUILDING: 0.35, CAR: 0.3, VEGETATION: 0.2, POLE: 0.15})
    depth_range: tuple[float, float] = (5.0, 35.0)
    lateral_range: float = 9.0
    speed_range: tuple[float, float] = (0.4, 0.9)
    rotation_std: float = 0.01
    texture_frequency: float = 0.3
    textured: bool = True
    height: int = 64
    width: int = 192
    camera_height: float = 1.5
    sky_depth: float = 1000.0


@dataclass
class Texture:
    color: np.ndarray          # (3,)
    freqs: np.ndarray          # (M, 2) cycles per scene unit
    phases: np.ndarray         # (M,)
    amps: np.ndarray           # (M, 3)

    def shade(self, u: np.ndarray, v: np.ndarray, footprint_u: np.ndarray,
              footprint_v: np.ndarray | None = None) -> np.ndarray:
        """Colour at surface coordinates (u, v); each wave is attenuated by the
        pixel footprint along u and v so the rendered image stays band-limited."""
        if footprint_v is None:
            footprint_v = footprint_u
        out = np.broadcast_to(self.color[:, None], (3, u.size)).copy()
        for (fu, fv), ph, amp in zip(self.freqs, self.phases, self.amps):
            blur = np.hypot(fu * footprint_u, fv * footprint_v)
            atten = np.exp(-2.0 * (np.pi * 0.7 * blur) ** 2)
            wave = np.sin(2 * np.pi * (fu * u + fv * v) + ph) * atten
            out += amp[:, None] * wave[None]
        return out


@dataclass
class Box:
    center: np.ndarray         # (3,) world position of the box centre
    size: np.ndarray           # (3,) full extents along local x, y, z
    yaw: float
    class_id: int
    texture: Texture
    instance_id: int = 0

    @property
    def rotation(self) -> np.ndarray:
        return axis_angle_to_rotation([0.0, self.yaw, 0.0])

    def contains(self, point, margin: float = 0.0) -> bool:
        local = self.rotation.T @ (np.asarray(point, dtype=np.float64) - self.center)
        return bool(np.all(np.abs(local) <= self.size / 2 + margin))


@dataclass
class Scene:
    objects: list
    ground_texture: Texture
    sky_texture: Texture
    camera_height: float
    sky_depth: float
    cameras: dict = field(default_factory=dict)   # name -> camera-to-world PoseSE3
    intrinsics: CameraIntrinsics | None = None
    resolution: tuple[int, int] = (64, 192)


@dataclass
class SceneSample:
    frames: tuple              # (prev, cur, next), each (3, H, W) float32 in [0, 1]
    gt_depth: np.ndarray       # (H, W)
    gt_semantics: np.ndarray   # (H, W) int
    pose_prev: PoseSE3         # T_{t -> t-1}
    pose_next: PoseSE3         # T_{t -> t+1}
    intrinsics: CameraIntrinsics
    instances: np.ndarray | None = None
    ref_depths: tuple = ()     # depth maps of (prev, next), for visibility tests only

    @property
    def target(self) -> np.ndarray:
        return self.frames[1]


def default_intrinsics(height: int, width: int) -> CameraIntrinsics:
    return CameraIntrinsics(0.58 * width, 1.92 * height, 0.5 * width - 0.5, 0.5 * height - 0.5)


def _random_texture(rng, class_id, scale, textured=True, freq_range=(0.3, 2.0), n=4) -> Texture:
    color = np.array(_BASE_COLORS[class_id]) * rng.uniform(0.8, 1.2, 3)
    if not textured:
        return Texture(np.clip(color, 0.05, 0.9), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)))
    mags = rng.uniform(*freq_range, n) * scale
    angles = rng.uniform(0, np.pi, n)
    freqs = np.stack([mags * np.cos(angles), mags * np.sin(angles)], axis=1)
    amps = rng.uniform(0.03, 0.09, (n, 3)) * rng.choice([-1, 1], (n, 1))
    return Texture(np.clip(color, 0.3, 0.7), freqs, rng.uniform(0, 2 * np.pi, n), amps)


def _camera_trajectory(rng, spec: SceneSpec) -> dict:
    cams = {"cur": PoseSE3()}
    for name, sign in (("prev", -1.0), ("next", 1.0)):
        speed = rng.uniform(*spec.speed_range)
        centre = np.array([rng.normal(0, 0.03), rng.normal(0, 0.01), sign * speed])
        rot = rng.normal(0, spec.rotation_std, 3) * np.array([0.5, 1.0, 0.3])
        cams[name] = PoseSE3(rot, centre)
    return cams


def generate_scene(spec: SceneSpec) -> Scene:
    """Ground, sky and ``spec.num_objects`` boxes, each visible in the centre frame."""
    rng = np.random.default_rng(spec.seed)
    K = default_intrinsics(spec.height, spec.width)
    scene = Scene(
        objects=[],
        ground_texture=_random_texture(rng, ROAD, spec.texture_frequency, spec.textured, (0.1, 1.5), n=6),
        sky_texture=_random_texture(rng, SKY, spec.texture_frequency, spec.textured, (0.002, 0.01)),
        camera_height=spec.camera_height,
        sky_depth=spec.sky_depth,
        intrinsics=K,
        resolution=(spec.height, spec.width),
    )
    scene.cameras = _camera_trajectory(rng, spec)
    centres = [np.asarray(c.translation) for c in scene.cameras.values()]
    classes = sorted(spec.class_mix)
    probs = np.array([spec.class_mix[c] for c in classes], dtype=np.float64)
    probs /= probs.sum()
    for instance in range(1, spec.num_objects + 1):
        for _ in range(200):
            cls = int(rng.choice(classes, p=probs))
            size = np.array([rng.uniform(*r) for r in _SIZES[cls]])
            z = rng.uniform(*spec.depth_range)
            if cls == BUILDING:
                x = rng.choice([-1, 1]) * rng.uniform(4.0, spec.lateral_range + 4.0)
            elif cls == CAR:
                x = rng.uniform(-4.0, 4.0)
            else:
                x = rng.uniform(-spec.lateral_range, spec.lateral_range)
            yaw = rng.normal(0, 0.3) if cls != BUILDING else rng.normal(0, 0.15)
            centre = np.array([x, spec.camera_height - size[1] / 2, z])
            box = Box(centre, size, float(yaw), cls,
                      _random_texture(rng, cls, spec.texture_frequency, spec.textured), instance)
            if any(box.contains(c, margin=0.3) for c in centres):
                continue
            if any(_overlaps(box, other) for other in scene.objects):
                continue
            scene.objects.append(box)
            _, _, _, inst = render_frame(scene, scene.cameras["cur"], K, scene.resolution, with_instances=True)
            if all((inst == o.instance_id).sum() >= 12 for o in scene.objects):
                break
            scene.objects.pop()
        else:
            raise RuntimeError(f"could not place object {instance} visibly (seed {spec.seed})")
    return scene


def _overlaps(a: Box, b: Box) -> bool:
    ra = np.hypot(a.size[0], a.size[2]) / 2
    rb = np.hypot(b.size[0], b.size[2]) / 2
    return np.hypot(*(a.center[[0, 2]] - b.center[[0, 2]])) < ra + rb + 0.2


def _ray_box(origin, dirs, box: Box):
    """Slab test; returns hit distance (inf for miss) and in-face (u, v) coordinates."""
    R = box.rotation
    o = R.T @ (origin - box.center)
    d = R.T @ dirs
    half = box.size[:, None] / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o[:, None]) * inv
        t2 = (half - o[:, None]) * inv
    tnear = np.minimum(t1, t2)
    tfar = np.maximum(t1, t2)
    tnear = np.where(np.isnan(tnear), -np.inf, tnear)
    tfar = np.where(np.isnan(tfar), np.inf, tfar)
    axis = np.argmax(tnear, axis=0)
    t_in = tnear.max(axis=0)
    t_out = tfar.min(axis=0)
    hit = (t_out >= t_in) & (t_in > 1e-6)
    t = np.where(hit, t_in, np.inf)
    p = o[:, None] + d * np.where(hit, t_in, 0.0)
    # face-local coordinates: the two axes other than the hit axis
    u = np.where(axis == 0, p[2], p[0])
    v = np.where(axis == 1, p[2], p[1])
    cos = np.abs(np.take_along_axis(d, axis[None], axis=0)[0]) / np.linalg.norm(d, axis=0)
    return t, u + 13.7 * axis, v, cos


def render_frame(scene: Scene, camera: PoseSE3, K: CameraIntrinsics, resolution: tuple[int, int],
                 with_instances: bool = False):
    """Ray-cast the scene from a camera whose pose maps camera points to world points.

    Returns ``(rgb (3, H, W), depth (H, W), semantics (H, W))`` plus an instance
    map when ``with_instances`` is set.  Depth is the camera-frame z of the
    nearest surface.
    """
    H, W = resolution
    origin = np.asarray(camera.translation, dtype=np.float64)
    for box in scene.objects:
        if box.contains(origin):
            raise DegenerateCameraError("camera centre lies inside an object")
    if origin[1] >= scene.camera_height:
        raise DegenerateCameraError("camera below the ground plane")
    R = axis_angle_to_rotation(camera.axis_angle)
    rays = K.inverse @ pixel_grid(H, W)          # camera frame, z = 1
    dirs = R @ rays                              # world frame
    n = H * W
    best_t = np.full(n, np.inf)
    cls = np.full(n, SKY, dtype=np.int64)
    inst = np.zeros(n, dtype=np.int64)
    owner = np.full(n, -2, dtype=np.int64)       # -2 sky, -1 ground, k object k
    norm = np.linalg.norm(dirs, axis=0)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_sky = (scene.sky_depth - origin[2]) / dirs[2]
    t_sky = np.where(t_sky > 0, t_sky, np.inf)
    best_t = t_sky
    psky = origin[:, None] + dirs * np.where(np.isfinite(t_sky), t_sky, 0.0)
    u, v = psky[0].copy(), psky[1].copy()
    cos = np.abs(dirs[2]) / norm

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (scene.camera_height - origin[1]) / dirs[1]
    t_ground = np.where(t_ground > 1e-6, t_ground, np.inf)
    take = t_ground < best_t
    pg = origin[:, None] + dirs * np.where(np.isfinite(t_ground), t_ground, 0.0)
    best_t = np.where(take, t_ground, best_t)
    cls[take], owner[take] = ROAD, -1
    u = np.where(take, pg[0], u)
    v = np.where(take, pg[2], v)
    cos = np.where(take, np.abs(dirs[1]) / norm, cos)

    for k, box in enumerate(scene.objects):
        t, bu, bv, bcos = _ray_box(origin, dirs, box)
        take = t < best_t
        best_t = np.where(take, t, best_t)
        cls[take], owner[take], inst[take] = box.class_id, k, box.instance_id
        u = np.where(take, bu, u)
        v = np.where(take, bv, v)
        cos = np.where(take, bcos, cos)

    if not np.isfinite(best_t).all():
        raise DegenerateCameraError("some rays hit nothing")
    depth = best_t                                # rays have unit camera-frame z
    # world size of one pixel on the surface, widened at grazing incidence
    footprint = depth * norm / (min(K.fx, K.fy) * np.maximum(cos, 0.05))
    # on the ground only the forward axis is foreshortened
    ground_u = depth * norm / K.fx
    rgb = np.zeros((3, n))
    for key in np.unique(owner):
        sel = owner == key
        if key == -1:
            rgb[:, sel] = scene.ground_texture.shade(u[sel], v[sel], ground_u[sel], footprint[sel])
            continue
        tex = scene.sky_texture if key == -2 else scene.objects[key].texture
        rgb[:, sel] = tex.shade(u[sel], v[sel], footprint[sel])
    rgb = np.clip(rgb, 0.0, 1.0).reshape(3, H, W).astype(np.float32)
    out = (rgb, depth.reshape(H, W), cls.reshape(H, W))
    if with_instances:
        return out + (inst.reshape(H, W),)
    return out


def relative_pose(target_cam: PoseSE3, ref_cam: PoseSE3) -> PoseSE3:
    """T_{target -> ref}: maps target-camera points into the reference camera frame."""
    Tt = target_cam.matrix()
    Tr = ref_cam.matrix()
    return PoseSE3.from_matrix(np.linalg.inv(Tr) @ Tt)


def make_sample(spec: SceneSpec) -> SceneSample:
    scene = generate_scene(spec)
    K = scene.intrinsics
    renders = {name: render_frame(scene, cam, K, scene.resolution, with_instances=True)
               for name, cam in scene.cameras.items()}
    cur = scene.cameras["cur"]
    return SceneSample(
        frames=(renders["prev"][0], renders["cur"][0], renders["next"][0]),
        gt_depth=renders["cur"][1],
        gt_semantics=renders["cur"][2],
        pose_prev=relative_pose(cur, scene.cameras["prev"]),
        pose_next=relative_pose(cur, scene.cameras["next"]),
        intrinsics=K,
        instances=renders["cur"][3],
        ref_depths=(renders["prev"][1], renders["next"][1]),
    )


def make_dataset(n: int, seed: int = 0, **spec_kwargs) -> list[SceneSample]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [make_sample(SceneSpec(seed=int(s), **spec_kwargs)) for s in seeds]


def corrupt_labels(semantics: np.ndarray, jitter: int = 0, flip_rate: float = 0.0,
                   num_classes: int = NUM_CLASSES, seed: int = 0) -> np.ndarray:
    """Simulated pseudo-labels: jitter boundaries and flip isolated pixels.

    Boundary pixels (a 4-neighbour of another class) copy the label found at a
    random offset of up to ``jitter`` pixels; independently every pixel flips to
    a different random class with probability ``flip_rate``.
    """
    if jitter < 0 or not 0 <= flip_rate < 1:
        raise ValueError("need jitter >= 0 and 0 <= flip_rate < 1")
    rng = np.random.default_rng(seed)
    lab = np.asarray(semantics).copy()
    H, W = lab.shape[-2:]
    if jitter > 0:
        src = lab.copy()
        edge = np.zeros(lab.shape, dtype=bool)
        edge[..., 1:, :] |= src[..., 1:, :] != src[..., :-1, :]
        edge[..., :-1, :] |= src[..., 1:, :] != src[..., :-1, :]
        edge[..., :, 1:] |= src[..., :, 1:] != src[..., :, :-1]
        edge[..., :, :-1] |= src[..., :, 1:] != src[..., :, :-1]
        idx = np.nonzero(edge)
        dy = rng.integers(-jitter, jitter + 1, idx[0].size)
        dx = rng.integers(-jitter, jitter + 1, idx[0].size)
        ys = np.clip(idx[-2] + dy, 0, H - 1)
        xs = np.clip(idx[-1] + dx, 0, W - 1)
        lab[idx] = src[idx[:-2] + (ys, xs)]
    if flip_rate > 0:
        flip = rng.random(lab.shape) < flip_rate
        shift = rng.integers(1, num_classes, lab.shape)
        lab = np.where(flip, (lab + shift) % num_classes, lab)
    return lab


def visibility_mask(sample: SceneSample, which: str = "prev", rel_tol: float = 0.02) -> np.ndarray:
    """Pixels of frame t that are visible in the reference frame (forward z-test).

    For verification only; training never sees it.
    """
    pose = sample.pose_prev if which == "prev" else sample.pose_next
    ref_depth = sample.ref_depths[0 if which == "prev" else 1]
    H, W = sample.gt_depth.shape
    K = sample.intrinsics
    T = pose.matrix()
    pts = (K.inverse @ pixel_grid(H, W)) * sample.gt_depth.reshape(1, -1)
    ref = T[:3, :3] @ pts + T[:3, 3:4]
    z = ref[2]
    proj = K.matrix @ ref
    with np.errstate(divide="ignore", invalid="ignore"):
        x, y = proj[0] / z, proj[1] / z
    inside = (z > 1e-6) & (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xi = np.clip(np.nan_to_num(x), 0, W - 1)
    yi = np.clip(np.nan_to_num(y), 0, H - 1)
    x0 = np.minimum(np.floor(xi).astype(int), W - 2)
    y0 = np.minimum(np.floor(yi).astype(int), H - 2)
    wx, wy = xi - x0, yi - y0
    inv = 1.0 / ref_depth
    # inverse depth is affine across planes, so interpolating it only breaks at discontinuities
    interp = ((1 - wy) * ((1 - wx) * inv[y0, x0] + wx * inv[y0, x0 + 1])
              + wy * ((1 - wx) * inv[y0 + 1, x0] + wx * inv[y0 + 1, x0 + 1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = inside & (np.abs(interp * z - 1.0) <= rel_tol)
    return ok.reshape(H, W)
