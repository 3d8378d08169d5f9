"""Procedural pseudo X-ray scenes.

Each item is a translucent shape whose per-channel transmittance is a
material colour raised to a thickness power; overlapping items multiply, so
overlaps darken and mix hues while the background stays white.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import Annotation, BoundingBox, parse_annotation_file, write_annotation_file

SHAPE_KINDS = ("rectangle", "ellipse", "capsule")

# Relative frequency of 1..10 items per image, following the real benchmark's histogram.
INSTANCE_WEIGHTS = np.array([15953, 13627, 8565, 4096, 1875, 747, 308, 132, 43, 13], dtype=np.float64)


class MaterialClass(enum.Enum):
    ORGANIC = "organic"
    INORGANIC = "inorganic"
    MIXTURE = "mixture"

    @property
    def rgb(self):
        return _MATERIAL_RGB[self]

    @property
    def attenuation(self):
        return _MATERIAL_MU[self]


# transmittance colour at unit thickness: organic renders orange, inorganic blue, mixtures green
_MATERIAL_RGB = {
    MaterialClass.ORGANIC: (0.98, 0.55, 0.12),
    MaterialClass.INORGANIC: (0.15, 0.40, 0.95),
    MaterialClass.MIXTURE: (0.25, 0.80, 0.30),
}
_MATERIAL_MU = {MaterialClass.ORGANIC: 0.7, MaterialClass.INORGANIC: 1.4, MaterialClass.MIXTURE: 1.0}


@dataclass(frozen=True)
class SceneSpec:
    height: int = 128
    width: int = 128
    seed: int = 0
    max_instances: int = 10
    min_size: int = 14
    max_size: int = 44
    noise: float = 0.01

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("scene must be at least 8x8")
        if not 1 <= self.max_instances <= len(INSTANCE_WEIGHTS):
            raise ValueError(f"max_instances must be in 1..{len(INSTANCE_WEIGHTS)}")
        if not 4 <= self.min_size <= self.max_size <= min(self.height, self.width):
            raise ValueError("need 4 <= min_size <= max_size <= image side")


@dataclass(frozen=True)
class Shape:
    kind: str
    cx: float
    cy: float
    w: float
    h: float
    material: MaterialClass
    thickness: float


@dataclass
class Scene:
    image: np.ndarray  # (H, W, 3) uint8
    shapes: list
    categories: list
    boxes: list
    occlusion: list

    def annotations(self, image_id: str):
        return [Annotation(image_id, c, b) for c, b in zip(self.categories, self.boxes)]

    def to_array(self):
        """(3, H, W) float32 in [0, 1]."""
        return self.image.transpose(2, 0, 1).astype(np.float32) / 255.0


def shape_mask(shape: Shape, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    x = xx + 0.5 - shape.cx
    y = yy + 0.5 - shape.cy
    hw, hh = shape.w / 2, shape.h / 2
    if shape.kind == "rectangle":
        return (np.abs(x) <= hw) & (np.abs(y) <= hh)
    if shape.kind == "ellipse":
        return (x / hw) ** 2 + (y / hh) ** 2 <= 1.0
    if shape.kind == "capsule":
        # stadium: points within radius r of the long axis segment
        if hw >= hh:
            r, half = hh, hw - hh
            dx = np.clip(np.abs(x) - half, 0, None)
            return dx ** 2 + y ** 2 <= r ** 2
        r, half = hw, hh - hw
        dy = np.clip(np.abs(y) - half, 0, None)
        return x ** 2 + dy ** 2 <= r ** 2
    raise ValueError(f"unknown shape kind {shape.kind!r}")


def render(shapes, height: int, width: int):
    """Product of transmittances over all shapes; returns (image float (H, W, 3), masks)."""
    image = np.ones((height, width, 3))
    masks = []
    for s in shapes:
        m = shape_mask(s, height, width)
        trans = np.asarray(s.material.rgb) ** (s.material.attenuation * s.thickness)
        image[m] *= trans
        masks.append(m)
    return image, masks


def occlusion_fractions(masks):
    """For each mask, the fraction of its pixels covered by any later mask."""
    out = []
    later = np.zeros_like(masks[0]) if masks else None
    for m in reversed(masks):
        area = m.sum()
        out.append(float((m & later).sum() / area) if area else 0.0)
        later = later | m
    return out[::-1]


def tight_box(mask) -> BoundingBox:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    return BoundingBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def _sample_shape(rng, spec: SceneSpec) -> Shape:
    kind = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
    lo, hi = spec.min_size, spec.max_size
    if kind == "capsule":
        long_side = rng.uniform(max(lo, 0.6 * hi), hi)
        upper = 0.45 * long_side
        short = rng.uniform(min(max(4.0, 0.3 * long_side), upper), upper)
        w, h = (long_side, short) if rng.random() < 0.5 else (short, long_side)
    else:
        w = rng.uniform(lo, hi)
        h = float(np.clip(w * rng.uniform(0.7, 1.4), lo, hi))
    cx = rng.uniform(w / 2, spec.width - w / 2)
    cy = rng.uniform(h / 2, spec.height - h / 2)
    material = list(MaterialClass)[rng.integers(3)]
    return Shape(kind, cx, cy, w, h, material, rng.uniform(0.8, 1.6))


def generate_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    weights = INSTANCE_WEIGHTS[: spec.max_instances]
    count = int(rng.choice(np.arange(1, spec.max_instances + 1), p=weights / weights.sum()))
    shapes = [_sample_shape(rng, spec) for _ in range(count)]
    image, masks = render(shapes, spec.height, spec.width)
    if spec.noise > 0:
        image = image + rng.normal(0.0, spec.noise, image.shape)
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    boxes = [tight_box(m) for m in masks]
    return Scene(pixels, shapes, [s.kind for s in shapes], boxes, occlusion_fractions(masks))


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, 8-bit; ``image`` is (H, W, 3) uint8."""
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("write_ppm expects an (H, W, 3) uint8 array")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def _ppm_tokens(raw: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6)")
    (w, h, maxval), offset = _ppm_tokens(raw, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=offset)
    return data.reshape(h, w, 3).copy()


def ppm_size(path):
    """(width, height) from a PPM header without reading the pixels."""
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6)")
    (w, h, _), _ = _ppm_tokens(head, 3)
    return w, h


def split_tag(index: int) -> str:
    """4:1 train/test split by index."""
    return "test" if index % 5 == 4 else "train"


@dataclass(frozen=True)
class ManifestEntry:
    filename: str
    split: str
    instances: int
    occlusion: tuple

    @property
    def image_id(self):
        return Path(self.filename).stem

    def line(self):
        occ = " ".join(f"{o:.4f}" for o in self.occlusion)
        return f"{self.filename} {self.split} {self.instances}" + (f" {occ}" if occ else "")


def write_dataset(n: int, out_dir, base_seed: int = 0, **spec_kwargs):
    """Write ``images/%06d.ppm``, ``annotations/%06d.txt`` and ``manifest.txt``; returns the manifest entries."""
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "annotations").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    entries = []
    for i in range(n):
        scene = generate_scene(SceneSpec(seed=base_seed + i, **spec_kwargs))
        name = f"{i:06d}"
        write_ppm(out / "images" / f"{name}.ppm", scene.image)
        write_annotation_file(out / "annotations" / f"{name}.txt", scene.annotations(name))
        entries.append(ManifestEntry(f"{name}.ppm", split_tag(i), len(scene.boxes), tuple(scene.occlusion)))
    (out / "manifest.txt").write_text("".join(e.line() + "\n" for e in entries))
    return entries


def read_manifest(path):
    entries = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        entries.append(ManifestEntry(parts[0], parts[1], int(parts[2]), tuple(float(v) for v in parts[3:])))
    return entries


def load_dataset(root):
    """Read a generated dataset back; returns ``(entries, images, annotations)`` keyed by image id."""
    root = Path(root)
    entries = read_manifest(root / "manifest.txt")
    images, annotations = {}, {}
    for e in entries:
        images[e.image_id] = read_ppm(root / "images" / e.filename)
        anns, errors = parse_annotation_file(root / "annotations" / f"{e.image_id}.txt", SHAPE_KINDS)
        if errors:
            raise ValueError("; ".join(map(str, errors)))
        annotations[e.image_id] = anns
    return entries, images, annotations
