"""Synthetic moving-shapes dataset: rendering, PPM I/O, and manifests.

A scene is a handful of textured shapes (rectangles and circles) over a
smooth background, each moving with a constant velocity and spinning at
a constant rate.  ``render_scene`` is a pure function of the scene and a
time ``t``, so the middle frame of a triplet is by construction the
exact half-time state and can be re-rendered independently.

Frames are stored as binary PPM (P6, 8-bit) and read back as float
arrays in [0, 1].  A dataset directory holds one subdirectory per
triplet (``frame0.ppm``, ``frame1.ppm``, ``frame2.ppm``) plus a
``manifest.json`` describing the split and the generator parameters.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_FRAME_SIZE = 16
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# Scene description and rendering


@dataclass
class ShapeSpec:
    """One moving textured shape.

    Positions are (row, col) pixel coordinates at t=0; ``velocity`` is
    pixels per unit time, ``spin`` radians per unit time.  ``size`` is
    (half_height, half_width) for rectangles and (radius, radius) for
    circles.  ``stripe_period`` sets the texture wavelength in pixels.
    """

    kind: str
    center: tuple[float, float]
    velocity: tuple[float, float]
    size: tuple[float, float]
    angle: float
    spin: float
    color: tuple[float, float, float]
    stripe_period: float = 6.0

    def __post_init__(self):
        if self.kind not in ("rect", "circle"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if min(self.size) <= 0:
            raise ValueError(f"shape size must be positive, got {self.size}")
        if self.stripe_period <= 0:
            raise ValueError("stripe_period must be positive")


@dataclass
class SceneSpec:
    height: int
    width: int
    bg_top: tuple[float, float, float]
    bg_bottom: tuple[float, float, float]
    shapes: list[ShapeSpec] = field(default_factory=list)


def _signed_distance(shape: ShapeSpec, px: np.ndarray, py: np.ndarray
                     ) -> np.ndarray:
    if shape.kind == "circle":
        return np.hypot(px, py) - shape.size[0]
    qy = np.abs(py) - shape.size[0]
    qx = np.abs(px) - shape.size[1]
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def render_scene(scene: SceneSpec, t: float) -> np.ndarray:
    """Render the scene at time ``t`` to a [3,H,W] float image in [0,1]."""
    h, w = scene.height, scene.width
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]

    ramp = rows / max(h - 1, 1)
    top = np.asarray(scene.bg_top, dtype=np.float64)
    bottom = np.asarray(scene.bg_bottom, dtype=np.float64)
    img = top[:, None, None] * (1.0 - ramp) + bottom[:, None, None] * ramp
    img = np.broadcast_to(img, (3, h, w)).copy()

    for shape in scene.shapes:
        cy = shape.center[0] + shape.velocity[0] * t
        cx = shape.center[1] + shape.velocity[1] * t
        angle = shape.angle + shape.spin * t
        dy = rows - cy
        dx = cols - cx
        # Rotate world offsets into the shape's body frame.
        cos_a, sin_a = np.cos(angle), np.sin(angle)
        px = cos_a * dx + sin_a * dy
        py = -sin_a * dx + cos_a * dy
        sdf = _signed_distance(shape, px, py)
        coverage = np.clip(0.5 - sdf, 0.0, 1.0)
        stripes = 0.75 + 0.25 * np.sin(2.0 * np.pi * px / shape.stripe_period)
        color = np.asarray(shape.color, dtype=np.float64)[:, None, None]
        img = img * (1.0 - coverage) + color * stripes * coverage

    return np.clip(img, 0.0, 1.0)


def random_scene(rng: np.random.Generator, height: int, width: int,
                 max_shapes: int = 4,
                 velocity_range: tuple[float, float] = (0.5, 4.0),
                 rotation_range: tuple[float, float] = (0.0, 0.8)
                 ) -> SceneSpec:
    """Draw a scene with 1..max_shapes moving shapes from ``rng``."""
    def color():
        return tuple(rng.uniform(0.1, 1.0, 3))

    shapes = []
    for _ in range(int(rng.integers(1, max_shapes + 1))):
        speed = rng.uniform(*velocity_range)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        spin = rng.uniform(*rotation_range) * rng.choice((-1.0, 1.0))
        max_half = max(min(height, width) / 4.0, 6.0)
        shapes.append(ShapeSpec(
            kind=str(rng.choice(("rect", "circle"))),
            center=(rng.uniform(0.2, 0.8) * height,
                    rng.uniform(0.2, 0.8) * width),
            velocity=(speed * np.sin(heading), speed * np.cos(heading)),
            size=(rng.uniform(4.0, max_half), rng.uniform(4.0, max_half)),
            angle=rng.uniform(0.0, 2.0 * np.pi),
            spin=spin,
            color=color(),
            stripe_period=rng.uniform(4.0, 10.0)))
    return SceneSpec(height=height, width=width,
                     bg_top=color(), bg_bottom=color(), shapes=shapes)


def make_triplet(scene: SceneSpec) -> tuple[np.ndarray, np.ndarray,
                                            np.ndarray]:
    """Render the scene at t = 0, 0.5 and 1."""
    return (render_scene(scene, 0.0), render_scene(scene, 0.5),
            render_scene(scene, 1.0))


# ---------------------------------------------------------------------------
# PPM I/O (binary P6, 8-bit)


def write_ppm(path, img: np.ndarray) -> None:
    """Write a [3,H,W] float image in [0,1] as an 8-bit binary PPM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3,H,W] image, got {img.shape}")
    quant = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    interleaved = np.ascontiguousarray(quant.transpose(1, 2, 0))
    header = f"P6\n{img.shape[2]} {img.shape[1]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + interleaved.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit binary PPM into a [3,H,W] float array in [0,1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    # Header: magic, width, height, maxval — whitespace separated, with
    # optional '#' comments — followed by a single whitespace byte.
    pos, tokens = 2, []
    while len(tokens) < 3:
        if pos >= len(raw):
            raise ValueError(f"{path}: truncated PPM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            pos = raw.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            match = re.match(rb"\d+", raw[pos:])
            if not match:
                raise ValueError(f"{path}: malformed PPM header")
            tokens.append(int(match.group()))
            pos += match.end()
    pos += 1  # the single whitespace after maxval
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    expect = width * height * 3
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if data.size < expect:
        raise ValueError(f"{path}: truncated PPM pixel data")
    pixels = data[:expect].reshape(height, width, 3).transpose(2, 0, 1)
    return pixels.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# Triplets and manifests


@dataclass
class TripletSample:
    """One training example: two input frames and the half-time target."""

    i0: np.ndarray
    i_gt: np.ndarray
    i1: np.ndarray
    t: float = 0.5
    name: str = ""

    def __post_init__(self):
        if not (self.i0.shape == self.i_gt.shape == self.i1.shape):
            raise ValueError(
                f"triplet {self.name or '?'}: frame shapes differ: "
                f"{self.i0.shape}, {self.i_gt.shape}, {self.i1.shape}")


@dataclass
class DatasetManifest:
    root: str
    triplets: list[str]
    split: str
    generator: dict | None = None

    def to_json_dict(self) -> dict:
        out = {"root": self.root, "triplets": list(self.triplets),
               "split": self.split}
        if self.generator is not None:
            out["generator"] = self.generator
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetManifest":
        return cls(root=d["root"], triplets=list(d["triplets"]),
                   split=d["split"], generator=d.get("generator"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2,
                                         sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


FRAME_NAMES = ("frame0.ppm", "frame1.ppm", "frame2.ppm")


def dataset_scenes(count: int, height: int, width: int, seed: int,
                   max_shapes: int = 4,
                   velocity_range: tuple[float, float] = (0.5, 4.0),
                   rotation_range: tuple[float, float] = (0.0, 0.8)
                   ) -> list[SceneSpec]:
    """The deterministic scene list behind ``generate_dataset``."""
    rng = np.random.default_rng(seed)
    return [random_scene(rng, height, width, max_shapes, velocity_range,
                         rotation_range) for _ in range(count)]


def generate_dataset(out_dir, count: int, height: int, width: int, seed: int,
                     split: str = "train", max_shapes: int = 4,
                     velocity_range: tuple[float, float] = (0.5, 4.0),
                     rotation_range: tuple[float, float] = (0.0, 0.8)
                     ) -> DatasetManifest:
    """Render ``count`` triplets into ``out_dir`` and write a manifest."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if min(height, width) < MIN_FRAME_SIZE:
        raise ValueError(f"frame size must be >= {MIN_FRAME_SIZE}, got "
                         f"{height}x{width}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = dataset_scenes(count, height, width, seed, max_shapes,
                            velocity_range, rotation_range)
    names = []
    for k, scene in enumerate(scenes):
        name = f"triplet_{k:04d}"
        tdir = out / name
        tdir.mkdir(exist_ok=True)
        for fname, frame in zip(FRAME_NAMES, make_triplet(scene)):
            write_ppm(tdir / fname, frame)
        names.append(name)
    manifest = DatasetManifest(
        root=".", triplets=names, split=split,
        generator={"seed": seed, "count": count, "height": height,
                   "width": width, "max_shapes": max_shapes,
                   "velocity_range": list(velocity_range),
                   "rotation_range": list(rotation_range)})
    manifest.save(out / MANIFEST_NAME)
    return manifest


def load_dataset(manifest_path) -> list[TripletSample]:
    """Load every triplet listed by a manifest, validating frame shapes."""
    mpath = Path(manifest_path)
    if mpath.is_dir():
        mpath = mpath / MANIFEST_NAME
    manifest = DatasetManifest.load(mpath)
    base = (mpath.parent / manifest.root).resolve()
    samples = []
    for name in manifest.triplets:
        tdir = base / name
        frames = []
        for fname in FRAME_NAMES:
            fpath = tdir / fname
            if not fpath.exists():
                raise ValueError(f"triplet {name}: missing frame {fname}")
            frames.append(read_ppm(fpath))
        samples.append(TripletSample(i0=frames[0], i_gt=frames[1],
                                     i1=frames[2], name=name))
    return samples
