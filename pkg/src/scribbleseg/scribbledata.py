"""Synthetic scribble-annotated scenes, scribble corruption and corpus I/O.

Corpus layout on disk::

    images/{id}.png      8-bit RGB
    labels/{id}.png      8-bit class index, 255 = ignore
    scribbles/{id}.png   same encoding as labels
    strokes/{id}.json    ordered stroke pixels with class and object ids
    manifest.json        splits, class count, sizes, seeds, corruption record
"""
from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

IGNORE = 255
MIN_VISIBLE_AREA = 32
MANIFEST_VERSION = 1
_FOUR = ndimage.generate_binary_structure(2, 1)

SHAPES = ("ellipse", "rectangle", "triangle")

# One base colour per object class; class c is drawn near CLASS_COLORS[c - 1].
CLASS_COLORS = np.array([
    [0.85, 0.25, 0.20],
    [0.20, 0.65, 0.30],
    [0.25, 0.35, 0.85],
    [0.90, 0.80, 0.20],
    [0.70, 0.30, 0.75],
    [0.20, 0.75, 0.80],
    [0.95, 0.55, 0.15],
])


class GenerationError(RuntimeError):
    pass


@dataclass
class SceneSpec:
    seed: int
    n_objects: int = 2
    classes: int = 4
    size: tuple[int, int] = (64, 64)
    color_jitter: float = 0.12
    noise: float = 0.02
    class_cue: str = "color"

    def __post_init__(self):
        if self.class_cue not in ("shape", "color"):
            raise ValueError(f"class_cue must be 'shape' or 'color', got {self.class_cue!r}")
        if self.class_cue == "shape" and self.classes > len(SHAPES) + 1:
            raise ValueError(f"shape-coded scenes support at most {len(SHAPES) + 1} classes")
        if self.n_objects < 1:
            raise ValueError("a scene needs at least one object")
        if not 2 <= self.classes <= len(CLASS_COLORS) + 1:
            raise ValueError(f"classes must lie in [2, {len(CLASS_COLORS) + 1}]")


@dataclass
class Stroke:
    class_id: int
    object_id: int
    pixels: np.ndarray  # (L, 2) ordered (row, col)

    def to_dict(self) -> dict:
        return {"class_id": int(self.class_id), "object_id": int(self.object_id),
                "pixels": self.pixels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Stroke":
        return cls(d["class_id"], d["object_id"], np.asarray(d["pixels"], dtype=np.int64).reshape(-1, 2))


@dataclass
class ScribbleMap:
    labels: np.ndarray
    strokes: list[Stroke] = field(default_factory=list)

    @classmethod
    def from_strokes(cls, strokes: list[Stroke], shape) -> "ScribbleMap":
        labels = np.full(shape, IGNORE, dtype=np.uint8)
        for s in strokes:
            if len(s.pixels):
                labels[s.pixels[:, 0], s.pixels[:, 1]] = s.class_id
        return cls(labels, strokes)


def _shape_mask(rng: np.random.Generator, kind: str, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    size = min(h, w)
    cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
    if kind == "ellipse":
        ry, rx = rng.uniform(0.12, 0.3, size=2) * size
        theta = rng.uniform(0, np.pi)
        c, s = np.cos(theta), np.sin(theta)
        u = (xx - cx) * c + (yy - cy) * s
        v = -(xx - cx) * s + (yy - cy) * c
        return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    if kind == "rectangle":
        hh, hw = rng.uniform(0.1, 0.28, size=2) * size
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    radius = rng.uniform(0.15, 0.35) * size
    angles = rng.uniform(0, 2 * np.pi) + np.array([0, 2, 4]) * np.pi / 3 + rng.uniform(-0.3, 0.3, 3)
    vy, vx = cy + radius * np.sin(angles), cx + radius * np.cos(angles)
    inside = np.ones((h, w), dtype=bool)
    sign = np.sign((vx[1] - vx[0]) * (vy[2] - vy[0]) - (vy[1] - vy[0]) * (vx[2] - vx[0]))
    for i in range(3):
        j = (i + 1) % 3
        cross = (vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i])
        inside &= sign * cross >= 0
    return inside


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    base = rng.uniform(0.35, 0.6, size=3)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    tex = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(1, 6, size=2)
        tex += np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    tex /= 3.0
    blotches = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma=4)
    blotches /= np.abs(blotches).max() + 1e-12
    amp = rng.uniform(0.08, 0.15, size=3)
    return base + (0.6 * tex + 0.4 * blotches)[..., None] * amp


def generate_scene(spec: SceneSpec, max_retries: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Render a seeded scene; returns an ``H x W x 3`` image in [0, 1] and its label map.

    Objects are painted in order (later ones occlude earlier ones). Each
    object's class is drawn uniformly from ``1 .. classes - 1`` and its shape
    kind uniformly from ellipse, rectangle and triangle. Every object keeps
    at least 32 visible pixels or the layout is redrawn.
    """
    h, w = spec.size
    rng = np.random.default_rng(spec.seed)
    for _ in range(max_retries):
        image = _background(rng, h, w)
        labels = np.zeros((h, w), dtype=np.uint8)
        owner = np.full((h, w), -1)
        colors = []
        for obj in range(spec.n_objects):
            cls = int(rng.integers(1, spec.classes))
            if spec.class_cue == "shape":
                kind = SHAPES[cls - 1]
                color = rng.uniform(0.05, 0.95, 3)
            else:
                kind = SHAPES[int(rng.integers(len(SHAPES)))]
                color = np.clip(CLASS_COLORS[cls - 1] + rng.uniform(-1, 1, 3) * spec.color_jitter, 0, 1)
            mask = _shape_mask(rng, kind, h, w)
            # keep colours of different objects apart
            while any(np.abs(color - c).sum() < 0.1 for c in colors):
                color = np.clip(color + rng.uniform(-0.05, 0.05, 3), 0, 1)
            colors.append(color)
            image[mask] = color
            labels[mask] = cls
            owner[mask] = obj
        areas = np.bincount(owner[owner >= 0].ravel(), minlength=spec.n_objects)
        if areas.min() >= MIN_VISIBLE_AREA:
            image = image + rng.normal(0.0, spec.noise, size=image.shape)
            return np.clip(image, 0.0, 1.0), labels
    raise GenerationError(f"could not place {spec.n_objects} objects for seed {spec.seed}")


def object_regions(labels: np.ndarray) -> list[tuple[int, np.ndarray]]:
    """``(class, mask)`` per scribbled region: the largest background component
    first, then every connected component of each object class."""
    regions = []
    bg, n_bg = ndimage.label(labels == 0, structure=_FOUR)
    if n_bg:
        sizes = ndimage.sum_labels(np.ones_like(bg), bg, index=np.arange(1, n_bg + 1))
        regions.append((0, bg == int(np.argmax(sizes)) + 1))
    for cls in np.unique(labels):
        if cls == 0 or cls == IGNORE:
            continue
        cc, k = ndimage.label(labels == cls, structure=_FOUR)
        for i in range(1, k + 1):
            regions.append((int(cls), cc == i))
    return regions


def _line(p0, p1) -> np.ndarray:
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    t = np.linspace(0.0, 1.0, n)
    pts = np.round(np.outer(1 - t, p0) + np.outer(t, p1)).astype(np.int64)
    return pts


def _stroke_in_region(rng: np.random.Generator, region: np.ndarray) -> np.ndarray:
    core = ndimage.binary_erosion(region, structure=_FOUR, iterations=2)
    if not core.any():
        core = region
    coords = np.argwhere(core)
    reach = max(3.0, 0.35 * np.sqrt(region.sum()))
    n_anchor = int(rng.integers(3, 6))
    anchors = [coords[rng.integers(len(coords))]]
    for _ in range(n_anchor - 1):
        near = coords[np.hypot(*(coords - anchors[-1]).T) <= reach]
        anchors.append(near[rng.integers(len(near))])
    seq, seen = [], set()
    for a, b in zip(anchors[:-1], anchors[1:]):
        for y, x in _line(a, b):
            if core[y, x] and (y, x) not in seen:
                seen.add((y, x))
                seq.append((y, x))
    if not seq:
        seq = [tuple(anchors[0])]
    return np.asarray(seq, dtype=np.int64)


def scribble_from_mask(labels: np.ndarray, seed: int) -> ScribbleMap:
    """One stroke per connected region (plus one on the background), inside the region."""
    rng = np.random.default_rng(seed)
    strokes = []
    for object_id, (cls, region) in enumerate(object_regions(labels)):
        strokes.append(Stroke(cls, object_id, _stroke_in_region(rng, region)))
    return ScribbleMap.from_strokes(strokes, labels.shape)


def _object_rng(seed: int, object_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(object_id)])


def drop_scribbles(s: ScribbleMap, rate: float, seed: int) -> ScribbleMap:
    """Delete all strokes of each object independently with probability ``rate``.

    The background counts as an object.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    dropped = {oid for oid in {st.object_id for st in s.strokes}
               if _object_rng(seed, oid).random() < rate}
    kept = [st for st in s.strokes if st.object_id not in dropped]
    return ScribbleMap.from_strokes(kept, s.labels.shape)


def shrink_stroke(pixels: np.ndarray, r: float) -> np.ndarray:
    """Keep the central ``1 - r`` fraction of an ordered stroke (a single mid pixel at worst)."""
    n = len(pixels)
    keep = int(round((1.0 - r) * n))
    if keep <= 1:
        mid = (n - 1) // 2
        return pixels[mid:mid + 1]
    start = (n - keep) // 2
    return pixels[start:start + keep]


def shrink_scribbles(s: ScribbleMap, rate: float, seed: int, fixed: bool = False) -> ScribbleMap:
    """Shrink every stroke towards its middle.

    Each stroke draws its own shrink fraction uniformly from ``[0, rate]``;
    with ``fixed=True`` every stroke shrinks by exactly ``rate`` (so
    ``rate=1`` leaves one spot per stroke).
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    out = []
    for st in s.strokes:
        r = rate if fixed else rng.uniform(0.0, rate)
        out.append(Stroke(st.class_id, st.object_id, shrink_stroke(st.pixels, r)))
    return ScribbleMap.from_strokes(out, s.labels.shape)


def strokes_from_components(scribbles: np.ndarray) -> list[Stroke]:
    """Stand-in strokes for corpora shipped without stroke files: one per
    connected scribble component, pixels in raster order."""
    strokes = []
    oid = 0
    for cls in np.unique(scribbles):
        if cls == IGNORE:
            continue
        cc, k = ndimage.label(scribbles == cls, structure=np.ones((3, 3)))
        for i in range(1, k + 1):
            strokes.append(Stroke(int(cls), oid, np.argwhere(cc == i)))
            oid += 1
    return strokes


# ---------------------------------------------------------------- corpus I/O

@dataclass
class CorpusConfig:
    seed: int = 0
    n_train: int = 500
    n_val: int = 100
    size: tuple[int, int] = (64, 64)
    classes: int = 4
    min_objects: int = 1
    max_objects: int = 3
    color_jitter: float = 0.12
    noise: float = 0.02
    class_cue: str = "color"


def sample_seeds(cfg: CorpusConfig, split: str, index: int) -> tuple[int, int]:
    ss = np.random.SeedSequence([cfg.seed, {"train": 0, "val": 1}[split], index])
    scene_seed, scribble_seed = ss.generate_state(2)
    return int(scene_seed), int(scribble_seed)


def generate_sample(cfg: CorpusConfig, split: str, index: int):
    scene_seed, scribble_seed = sample_seeds(cfg, split, index)
    n_obj = cfg.min_objects + scene_seed % (cfg.max_objects - cfg.min_objects + 1)
    spec = SceneSpec(scene_seed, n_obj, cfg.classes, tuple(cfg.size), cfg.color_jitter, cfg.noise, cfg.class_cue)
    image, labels = generate_scene(spec)
    return image, labels, scribble_from_mask(labels, scribble_seed)


def _save_png(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path, optimize=False)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)


def write_sample(root: Path, sample_id: str, image, labels, scribbles: ScribbleMap) -> None:
    _save_png(root / "images" / f"{sample_id}.png", to_uint8(image))
    _save_png(root / "labels" / f"{sample_id}.png", labels.astype(np.uint8))
    write_scribbles(root, sample_id, scribbles)


def write_scribbles(root: Path, sample_id: str, scribbles: ScribbleMap) -> None:
    _save_png(root / "scribbles" / f"{sample_id}.png", scribbles.labels.astype(np.uint8))
    path = root / "strokes" / f"{sample_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([s.to_dict() for s in scribbles.strokes]))


def generate_corpus(cfg: CorpusConfig, out_dir) -> dict:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    splits = {}
    for split, count in (("train", cfg.n_train), ("val", cfg.n_val)):
        ids = []
        for i in range(count):
            sample_id = f"{split}_{i:05d}"
            image, labels, scribbles = generate_sample(cfg, split, i)
            write_sample(root, sample_id, image, labels, scribbles)
            ids.append(sample_id)
        splits[split] = ids
    manifest = {
        "version": MANIFEST_VERSION,
        "num_classes": cfg.classes,
        "size": list(cfg.size),
        "splits": splits,
        "generation": asdict(cfg),
        "corruption": None,
    }
    write_manifest(root, manifest)
    return manifest


def write_manifest(root: Path, manifest: dict) -> None:
    (Path(root) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    return json.loads(path.read_text())


def load_image(root, sample_id: str) -> np.ndarray:
    arr = np.asarray(PILImage.open(Path(root) / "images" / f"{sample_id}.png").convert("RGB"))
    return arr.astype(np.float64) / 255.0


def load_labels(root, sample_id: str) -> np.ndarray:
    return np.asarray(PILImage.open(Path(root) / "labels" / f"{sample_id}.png"))


def load_scribbles(root, sample_id: str) -> ScribbleMap:
    root = Path(root)
    labels = np.asarray(PILImage.open(root / "scribbles" / f"{sample_id}.png"))
    stroke_path = root / "strokes" / f"{sample_id}.json"
    if stroke_path.exists():
        strokes = [Stroke.from_dict(d) for d in json.loads(stroke_path.read_text())]
    else:
        strokes = strokes_from_components(labels)
    return ScribbleMap(labels, strokes)


def corrupt_corpus(src, dst, mode: str, rate: float, seed: int, fixed: bool = False) -> dict:
    """Copy a corpus replacing its scribbles with dropped or shrunk versions.

    Images and labels are copied unchanged. Each sample uses its own seed
    derived from ``(seed, sample index)`` so objects are not dropped in
    lock-step across images.
    """
    if mode not in ("drop", "shrink"):
        raise ValueError(f"unknown corruption mode {mode!r}")
    src, dst = Path(src), Path(dst)
    manifest = read_manifest(src)
    dst.mkdir(parents=True, exist_ok=True)
    for sub in ("images", "labels"):
        if (dst / sub).exists():
            shutil.rmtree(dst / sub)
        shutil.copytree(src / sub, dst / sub)
    stroke_source = "strokes"
    all_ids = [i for ids in manifest["splits"].values() for i in ids]
    for idx, sample_id in enumerate(all_ids):
        if not (src / "strokes" / f"{sample_id}.json").exists():
            stroke_source = "components"
        s = load_scribbles(src, sample_id)
        sample_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
        if mode == "drop":
            out = drop_scribbles(s, rate, sample_seed)
        else:
            out = shrink_scribbles(s, rate, sample_seed, fixed=fixed)
        write_scribbles(dst, sample_id, out)
        if rate == 0:
            # keep the source files byte-for-byte
            shutil.copyfile(src / "scribbles" / f"{sample_id}.png", dst / "scribbles" / f"{sample_id}.png")
    manifest = dict(manifest)
    manifest["corruption"] = {"mode": mode, "rate": rate, "seed": seed, "fixed": fixed,
                              "stroke_source": stroke_source, "source": str(src)}
    write_manifest(dst, manifest)
    return manifest


def audit_sample(labels: np.ndarray, scribbles: ScribbleMap) -> list[str]:
    """Invariant violations of one sample (empty list when consistent)."""
    problems = []
    union = np.zeros(labels.shape, dtype=bool)
    for st in scribbles.strokes:
        if not len(st.pixels):
            continue
        ys, xs = st.pixels[:, 0], st.pixels[:, 1]
        union[ys, xs] = True
        if np.any(labels[ys, xs] != st.class_id):
            problems.append(f"stroke of object {st.object_id} leaves its region")
    if not np.array_equal(union, scribbles.labels != IGNORE):
        problems.append("scribble map differs from the union of strokes")
    return problems
