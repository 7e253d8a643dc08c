"""Synthetic RGB/depth scenes and the on-disk dataset format.

Scenes are ray-cast from a level pinhole camera: an optional floor plane
(the source of the depth-vs-row correlation), an optional back wall, and a
few spheres and boxes resting on the floor. Colour is Lambertian shading of
normals estimated from the depth map, times per-primitive albedo.

On disk, depth is single-channel little-endian PFM and colour is 8-bit PPM
(P6); ``manifest.json`` lists sample ids per split::

    root/manifest.json
    root/train/<id>.ppm, root/train/<id>.pfm
    root/val/...
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import DepthRange, Sample

SPLITS = ("train", "val", "test")
KINDS = ("floor", "wall", "sphere", "box")


@dataclass(frozen=True)
class SceneSpec:
    height: int = 96
    width: int = 128
    num_primitives: int = 3
    kinds: tuple[str, ...] = KINDS
    depth_range: DepthRange = field(default_factory=DepthRange)
    seed: int = 0
    invalid_fraction: float = 0.0

    def __post_init__(self):
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown primitive kinds {sorted(unknown)}")
        if not 0.0 <= self.invalid_fraction <= 0.3:
            raise ValueError("invalid_fraction must lie in [0, 0.3]")
        if self.height < 8 or self.width < 8:
            raise ValueError("scene must be at least 8x8")


# ---------------------------------------------------------------------------
# ray casting


def _camera(spec: SceneSpec, rng: np.random.Generator):
    h, w = spec.height, spec.width
    focal = 0.9 * w
    horizon = rng.uniform(0.3, 0.45) * h
    cam_height = rng.uniform(1.2, 1.6)
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    dirs = np.stack([(u - (w - 1) / 2) / focal, (v - horizon) / focal, np.ones_like(u)], -1)
    return dirs, cam_height, horizon


def _hit_floor(dirs, cam_height):
    # y axis points down; floor is the plane y = cam_height
    dy = dirs[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dy > 1e-9, cam_height / dy, np.inf)
    return t


def _hit_wall(dirs, wall_z):
    return np.full(dirs.shape[:2], wall_z, dtype=np.float64)


def _hit_sphere(dirs, center, radius):
    # |t d - c|^2 = r^2
    a = (dirs * dirs).sum(-1)
    b = -2.0 * (dirs @ center)
    c = center @ center - radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _hit_box(dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1, t2 = lo * inv, hi * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    return np.where((tmax >= tmin) & (tmin > 0), tmin, np.inf)


def _normals(points: np.ndarray) -> np.ndarray:
    du = np.gradient(points, axis=1)
    dv = np.gradient(points, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.maximum(norm, 1e-12)
    # face the camera
    flip = (n * points).sum(-1, keepdims=True) > 0
    return np.where(flip, -n, n)


def generate_scene(spec: SceneSpec, rng: np.random.Generator | None = None,
                   sample_id: str | None = None) -> Sample:
    """Render one scene; depth is the z-distance of the nearest surface."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    d_min, d_max = spec.depth_range.d_min, spec.depth_range.d_max
    dirs, cam_height, _ = _camera(spec, rng)
    h, w = spec.height, spec.width

    hits = []  # (t map, albedo image)
    if "floor" in spec.kinds:
        t = _hit_floor(dirs, cam_height)
        pts = dirs * np.where(np.isfinite(t), t, 0)[..., None]
        checker = ((np.floor(pts[..., 0] / 0.5) + np.floor(pts[..., 2] / 0.5)) % 2)[..., None]
        base = rng.uniform(0.35, 0.7, size=3)
        hits.append((t, base * (0.75 + 0.25 * checker)))
    wall_z = None
    if "wall" in spec.kinds:
        wall_z = rng.uniform(0.6, 0.95) * d_max
        t = _hit_wall(dirs, wall_z)
        pts = dirs * t[..., None]
        stripes = (np.floor(pts[..., 0] / 0.8) % 2)[..., None]
        base = rng.uniform(0.5, 0.9, size=3)
        hits.append((t, np.broadcast_to(base * (0.85 + 0.15 * stripes), (h, w, 3))))

    far = wall_z if wall_z is not None else 0.8 * d_max
    objects = [k for k in spec.kinds if k in ("sphere", "box")]
    for _ in range(spec.num_primitives if objects else 0):
        kind = objects[rng.integers(len(objects))]
        albedo = np.broadcast_to(rng.uniform(0.2, 1.0, size=3), (h, w, 3))
        size = rng.uniform(0.3, 0.8)
        z = rng.uniform(max(d_min + 1.5, 2.0), max(far - size - 0.2, 2.5))
        x = rng.uniform(-0.35, 0.35) * z
        if kind == "sphere":
            center = np.array([x, cam_height - size, z])
            hits.append((_hit_sphere(dirs, center, size), albedo))
        else:
            half = np.array([size, rng.uniform(0.3, 1.0), size * rng.uniform(0.6, 1.4)])
            lo = np.array([x - half[0], cam_height - 2 * half[1], z - half[2]])
            hi = np.array([x + half[0], cam_height, z + half[2]])
            hits.append((_hit_box(dirs, lo, hi), albedo))

    depth = np.full((h, w), np.inf)
    albedo = np.zeros((h, w, 3))
    for t, alb in hits:
        closer = t < depth
        depth = np.where(closer, t, depth)
        albedo = np.where(closer[..., None], alb, albedo)

    # dirs has unit z, so the ray parameter is already z-depth
    valid = np.isfinite(depth) & (depth <= d_max)
    depth = np.where(valid, np.maximum(depth, d_min), 0.0)

    points = dirs * np.where(valid, depth, far)[..., None]
    normals = _normals(points)
    # direction towards the light, roughly overhead and behind the camera
    light = np.array([rng.uniform(-0.5, 0.5), -1.0, rng.uniform(-0.8, -0.2)])
    light /= np.linalg.norm(light)
    shade = 0.35 + 0.65 * np.clip((normals * light).sum(-1), 0, 1)
    rgb = albedo * shade[..., None]
    sky = np.array([0.55, 0.7, 0.9])
    rgb = np.where(valid[..., None], rgb, sky)

    if spec.invalid_fraction > 0:
        drop = rng.random((h, w)) < spec.invalid_fraction
        depth = np.where(drop, 0.0, depth)

    image = np.clip(rgb, 0, 1).transpose(2, 0, 1).astype(np.float32)
    return Sample(image=image, gt_depth=depth[None].astype(np.float32),
                  id=sample_id or f"scene_{spec.seed:06d}")


# ---------------------------------------------------------------------------
# PFM / PPM


def write_pfm(path: str | os.PathLike, data: np.ndarray) -> None:
    """Write a single-channel float map (little-endian, rows stored bottom-up)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects (H, W) or (1, H, W), got {data.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def _read_token_line(f, path) -> str:
    line = f.readline()
    if not line:
        raise ValueError(f"{path}: malformed PFM header (unexpected end of file)")
    return line.decode("ascii", errors="replace").strip()


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Read a PFM file into ``(H, W)`` (grayscale) or ``(H, W, 3)`` float32, top row first."""
    with open(path, "rb") as f:
        magic = _read_token_line(f, path)
        if magic not in ("Pf", "PF"):
            raise ValueError(f"{path}: malformed PFM header, bad magic {magic!r}")
        channels = 3 if magic == "PF" else 1
        dims = _read_token_line(f, path).split()
        try:
            w, h = int(dims[0]), int(dims[1])
        except (IndexError, ValueError):
            raise ValueError(f"{path}: malformed PFM header, bad dimensions {dims!r}") from None
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}: malformed PFM header, non-positive dimensions {w}x{h}")
        try:
            scale = float(_read_token_line(f, path))
        except ValueError:
            raise ValueError(f"{path}: malformed PFM header, bad scale") from None
        if scale == 0:
            raise ValueError(f"{path}: malformed PFM header, zero scale")
        payload = f.read()
    need = w * h * channels * 4
    if len(payload) < need:
        raise ValueError(f"{path}: unexpected end of PFM payload "
                         f"({len(payload)} of {need} bytes)")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload[:need], dtype=dtype).astype(np.float32)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return np.ascontiguousarray(arr[::-1])


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a ``(3, H, W)`` image in [0, 1] as binary 8-bit PPM."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"PPM writer expects (3, H, W), got {image.shape}")
    _, h, w = image.shape
    q = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: malformed PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: malformed PPM header, expected P6, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    need = w * h * 3
    if len(raw) - pos < need:
        raise ValueError(f"{path}: unexpected end of PPM payload")
    arr = np.frombuffer(raw[pos:pos + need], dtype=np.uint8).reshape(h, w, 3)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def write_sample(directory: str | os.PathLike, sample: Sample) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_ppm(directory / f"{sample.id}.ppm", sample.image)
    write_pfm(directory / f"{sample.id}.pfm", sample.gt_depth)


def read_sample(directory: str | os.PathLike, sample_id: str) -> Sample:
    directory = Path(directory)
    image = read_ppm(directory / f"{sample_id}.ppm")
    depth = read_pfm(directory / f"{sample_id}.pfm")
    if depth.ndim != 2:
        raise ValueError(f"{sample_id}: depth PFM must be single-channel")
    if depth.shape != image.shape[1:]:
        raise ValueError(f"{sample_id}: image {image.shape[1:]} and depth {depth.shape} "
                         "dimensions do not match")
    return Sample(image=image, gt_depth=depth[None], id=sample_id)


# ---------------------------------------------------------------------------
# dataset directories


def synthesize_dataset(root: str | os.PathLike, counts: dict[str, int], size=(96, 128),
                       seed: int = 0, depth_range: DepthRange = DepthRange(),
                       invalid_fraction: float = 0.0, num_primitives: int = 3) -> dict:
    """Generate and write a dataset; sample seeds are derived from (seed, split, index)."""
    root = Path(root)
    manifest: dict = {"size": list(size), "depth_range": [depth_range.d_min, depth_range.d_max],
                      "seed": seed, "splits": {}}
    for split_idx, (split, n) in enumerate(counts.items()):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        if n <= 0:
            raise ValueError(f"empty split {split!r}")
        ids = []
        for i in range(n):
            sid = f"{split}_{i:05d}"
            rng = np.random.default_rng([seed, split_idx, i])
            spec = SceneSpec(height=size[0], width=size[1], num_primitives=num_primitives,
                             depth_range=depth_range, seed=seed,
                             invalid_fraction=invalid_fraction)
            write_sample(root / split, generate_scene(spec, rng, sample_id=sid))
            ids.append(sid)
        manifest["splits"][split] = ids
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def read_manifest(root: str | os.PathLike) -> dict:
    root = Path(root)
    path = root / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(path.read_text())
    for split, ids in manifest.get("splits", {}).items():
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate ids in split {split!r}")
    return manifest


def load_split(root: str | os.PathLike, split: str) -> list[Sample]:
    manifest = read_manifest(root)
    if split not in manifest["splits"]:
        raise KeyError(f"split {split!r} not in manifest (have {sorted(manifest['splits'])})")
    return [read_sample(Path(root) / split, sid) for sid in manifest["splits"][split]]
