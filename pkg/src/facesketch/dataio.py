"""Paired photo/sketch/saliency/parsing data: file layout, preprocessing,
label merging and synthetic fixtures.

Arrays are channel-first ``float32`` numpy grids in ``[-1, 1]``; layouts are
``uint8`` one-hot stacks of shape ``(12, H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

from .errors import BadShape, EmptyDataset, MissingFile, UnknownLabel

NUM_CLASSES = 12
CLASS_NAMES = (
    "eyes", "eyebrows", "ears", "glasses", "lips", "inner_mouth",
    "hair", "nose", "skin", "neck", "cloth", "background",
)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}
BACKGROUND = CLASS_INDEX["background"]

# Raw CUFS geometry (width x height) and the square network geometry.
RAW_WIDTH, RAW_HEIGHT = 200, 250
NET_SIZE = 256
SCALED_WIDTH = 204
PAD_LEFT = PAD_RIGHT = (NET_SIZE - SCALED_WIDTH) // 2

# Parser-native label ids -> canonical class name. Accessories with no
# dedicated class fold into their host region.
SOURCE_LABEL_TABLES = {
    # CelebAMask-HQ ordering, used by MaskGAN.
    "celebamask": {
        0: "background", 1: "skin", 2: "nose", 3: "glasses", 4: "eyes", 5: "eyes",
        6: "eyebrows", 7: "eyebrows", 8: "ears", 9: "ears", 10: "inner_mouth",
        11: "lips", 12: "lips", 13: "hair", 14: "hair", 15: "ears", 16: "neck",
        17: "neck", 18: "cloth",
    },
    # face-parsing.PyTorch ordering, used by BiSeNet.
    "bisenet": {
        0: "background", 1: "skin", 2: "eyebrows", 3: "eyebrows", 4: "eyes", 5: "eyes",
        6: "glasses", 7: "ears", 8: "ears", 9: "ears", 10: "nose", 11: "inner_mouth",
        12: "lips", 13: "lips", 14: "neck", 15: "neck", 16: "cloth", 17: "hair",
        18: "hair",
    },
    # Already-merged maps storing the canonical index directly.
    "canonical": {i: name for i, name in enumerate(CLASS_NAMES)},
}


@dataclass(frozen=True)
class PadGeometry:
    """How a raw grid was placed inside the square network grid."""

    raw_height: int = RAW_HEIGHT
    raw_width: int = RAW_WIDTH
    scaled_width: int = SCALED_WIDTH
    left: int = PAD_LEFT
    right: int = PAD_RIGHT


CUFS_PAD = PadGeometry()


@dataclass
class PairedSample:
    photo: np.ndarray  # (3, H, W)
    sketch: np.ndarray | None  # (1, H, W); None for inference-only inputs
    saliency: np.ndarray  # (1, H, W)
    layout: np.ndarray  # (12, H, W) one-hot
    id: str
    pad: PadGeometry | None = None

    @property
    def size(self):
        return self.photo.shape[-2:]


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    photo: Path
    sketch: Path | None
    saliency: Path
    parsing: Path


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self):
        return [e.id for e in self.entries]


# --------------------------------------------------------------------------
# manifest discovery and file io

def scan_split_dir(split_dir, require_sketch=True):
    """Discover ``<split_dir>/{photos,sketches,saliency,parsing}/<id>.png``.

    Ids are taken from ``photos/``; every other component must exist for each
    id (``sketches/`` only when ``require_sketch``).
    """
    split_dir = Path(split_dir)
    photo_dir = split_dir / "photos"
    ids = sorted(p.stem for p in photo_dir.glob("*.png")) if photo_dir.is_dir() else []
    if not ids:
        raise EmptyDataset(f"no samples under {split_dir}")
    parts = ["saliency", "parsing"] + (["sketches"] if require_sketch else [])
    entries = []
    for id_ in ids:
        paths = {p: split_dir / p / f"{id_}.png" for p in parts}
        for part, path in paths.items():
            if not path.is_file():
                raise MissingFile(f"sample '{id_}': missing {part} file {path}")
        entries.append(ManifestEntry(
            id=id_, photo=photo_dir / f"{id_}.png", sketch=paths.get("sketches"),
            saliency=paths["saliency"], parsing=paths["parsing"],
        ))
    return entries


def load_manifest(root, split="train", require_sketch=True):
    root = Path(root)
    entries = scan_split_dir(root / split, require_sketch=require_sketch)
    return DatasetManifest(root=root, split=split, entries=entries)


def to_unit_range(pixels):
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0


def to_pixels(values):
    """float [-1, 1] -> uint8 [0, 255] via round((v + 1) * 127.5)."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.round((v + 1.0) * 127.5).astype(np.uint8)


def read_gray(path):
    with Image.open(path) as im:
        return to_unit_range(np.array(im.convert("L")))[None]


def read_photo(path):
    with Image.open(path) as im:
        if im.mode in ("L", "I", "I;16", "F", "1"):
            # grayscale photos (CUFSF) are replicated to three channels
            g = to_unit_range(np.array(im.convert("L")))
            return np.repeat(g[None], 3, axis=0)
        return to_unit_range(np.array(im.convert("RGB"))).transpose(2, 0, 1).copy()


def read_labels(path):
    with Image.open(path) as im:
        return np.array(im)


def write_gray(path, grid):
    grid = np.asarray(grid)
    if grid.ndim == 3:
        grid = grid.mean(axis=0)
    Image.fromarray(to_pixels(grid), mode="L").save(path)


def write_photo(path, photo):
    Image.fromarray(to_pixels(np.asarray(photo).transpose(1, 2, 0)), mode="RGB").save(path)


def write_labels(path, labels):
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


def load_sample(entry, parser="celebamask"):
    """Read one manifest entry into a network-ready :class:`PairedSample`.

    Raw 200x250 grids go through :func:`preprocess_pair`; square power-of-two
    grids are taken as already preprocessed.
    """
    photo = read_photo(entry.photo)
    sketch = read_gray(entry.sketch) if entry.sketch is not None else None
    saliency = read_gray(entry.saliency)
    layout = merge_classes(read_labels(entry.parsing), parser)
    shapes = {g.shape[-2:] for g in (photo, sketch, saliency, layout) if g is not None}
    if len(shapes) != 1:
        raise BadShape(f"sample '{entry.id}': component sizes differ {sorted(shapes)}")
    sample = PairedSample(photo, sketch, saliency, layout, entry.id)
    h, w = shapes.pop()
    if (h, w) == (RAW_HEIGHT, RAW_WIDTH):
        return preprocess_pair(sample)
    if h == w and h >= 8 and h & (h - 1) == 0:
        return sample
    raise BadShape(f"sample '{entry.id}': unsupported size {w}x{h}")


# --------------------------------------------------------------------------
# geometry

def _resize_bilinear(grid, height, width):
    t = torch.from_numpy(np.ascontiguousarray(grid, dtype=np.float32))[None]
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return out[0].numpy()


def _resize_labels(labels, height, width):
    h, w = labels.shape
    rows = np.minimum((np.arange(height) * h) // height, h - 1)
    cols = np.minimum((np.arange(width) * w) // width, w - 1)
    return labels[rows[:, None], cols[None, :]]


def labels_to_onehot(labels):
    labels = np.asarray(labels)
    return (np.arange(NUM_CLASSES)[:, None, None] == labels[None]).astype(np.uint8)


def onehot_to_labels(layout):
    return np.asarray(layout).argmax(axis=0).astype(np.uint8)


def _pad_edge(grid, left, right):
    return np.pad(grid, ((0, 0), (0, 0), (left, right)), mode="edge")


def preprocess_pair(raw, geometry=CUFS_PAD):
    """Rescale a 200x250 sample to 204x256 and edge-pad it to 256x256."""
    h, w = raw.photo.shape[-2:]
    if (h, w) != (geometry.raw_height, geometry.raw_width):
        raise BadShape(
            f"expected {geometry.raw_width}x{geometry.raw_height} input, got {w}x{h}")
    out_h, out_w = NET_SIZE, geometry.scaled_width

    def grid(g):
        if g is None:
            return None
        return _pad_edge(_resize_bilinear(g, out_h, out_w), geometry.left, geometry.right)

    labels = _resize_labels(onehot_to_labels(raw.layout), out_h, out_w)
    labels = np.pad(labels, ((0, 0), (geometry.left, geometry.right)), mode="edge")
    return PairedSample(
        photo=grid(raw.photo), sketch=grid(raw.sketch), saliency=grid(raw.saliency),
        layout=labels_to_onehot(labels), id=raw.id, pad=geometry,
    )


def unpad(grid, geometry=CUFS_PAD):
    """Invert :func:`preprocess_pair` for a (C, 256, 256) grid."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.shape[-2:] != (NET_SIZE, NET_SIZE):
        raise BadShape(f"expected {NET_SIZE}x{NET_SIZE} grid, got {grid.shape[-2:]}")
    cropped = grid[..., geometry.left:NET_SIZE - geometry.right]
    return _resize_bilinear(cropped, geometry.raw_height, geometry.raw_width)


def unpad_layout(layout, geometry=CUFS_PAD):
    labels = onehot_to_labels(layout)[:, geometry.left:NET_SIZE - geometry.right]
    return labels_to_onehot(_resize_labels(labels, geometry.raw_height, geometry.raw_width))


def merge_classes(raw_labels, parser="celebamask"):
    """Map parser-native label ids onto the 12 canonical classes (one-hot)."""
    try:
        table = SOURCE_LABEL_TABLES[parser]
    except KeyError:
        raise ValueError(f"unknown parser table '{parser}'") from None
    raw_labels = np.asarray(raw_labels)
    if raw_labels.ndim != 2:
        raise BadShape(f"label map must be 2-D, got shape {raw_labels.shape}")
    lut = np.full(256, 255, dtype=np.uint8)
    for raw_id, name in table.items():
        lut[raw_id] = CLASS_INDEX[name]
    if raw_labels.min() < 0 or raw_labels.max() > 255:
        raise UnknownLabel(f"label ids outside 0..255 for parser '{parser}'")
    merged = lut[raw_labels.astype(np.intp)]
    if (merged == 255).any():
        bad = sorted(set(np.unique(raw_labels[merged == 255]).tolist()))
        raise UnknownLabel(f"label ids {bad} not in the '{parser}' table")
    return labels_to_onehot(merged)


def canonical_to_raw(labels, parser="celebamask"):
    """Inverse of the merge: a representative raw id for each canonical class."""
    table = SOURCE_LABEL_TABLES[parser]
    rep = {}
    for raw_id, name in sorted(table.items()):
        rep.setdefault(CLASS_INDEX[name], raw_id)
    lut = np.array([rep[c] for c in range(NUM_CLASSES)], dtype=np.uint8)
    return lut[np.asarray(labels)]


def downsample_layout(layout, target):
    """Nearest-neighbour downsample of a one-hot layout by an integer factor.

    Works on numpy arrays and torch tensors alike; leading dims are kept.
    """
    h, w = layout.shape[-2:]
    th, tw = target
    if th <= 0 or tw <= 0 or h % th or w % tw:
        raise BadShape(f"cannot downsample {h}x{w} layout to {th}x{tw}")
    fh, fw = h // th, w // tw
    if fh == 1 and fw == 1:
        return layout
    return layout[..., ::fh, ::fw]


# --------------------------------------------------------------------------
# synthetic fixtures

_TONE = {  # sketch intensity per class, in [-1, 1]
    "eyes": -0.8, "eyebrows": -0.5, "ears": 0.6, "glasses": -0.4, "lips": 0.0,
    "inner_mouth": -0.8, "hair": -0.6, "nose": 0.55, "skin": 0.75, "neck": 0.65,
    "cloth": 0.1, "background": 1.0,
}


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _fixture_labels(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    j = lambda: rng.uniform(-0.02, 0.02)  # noqa: E731
    labels = np.full((size, size), BACKGROUND, dtype=np.uint8)
    cy, cx = 0.45 + j(), 0.5 + j()

    def paint(mask, name):
        labels[mask] = CLASS_INDEX[name]

    paint(yy > 0.86 + j(), "cloth")
    paint((yy > 0.7) & (yy <= 0.88) & (np.abs(xx - cx) < 0.13), "neck")
    paint(_ellipse(yy, xx, cy - 0.04, cx, 0.38, 0.34) & (yy < cy), "hair")
    for side in (-1, 1):
        paint(_ellipse(yy, xx, cy + 0.03, cx + side * 0.28, 0.07, 0.04), "ears")
    paint(_ellipse(yy, xx, cy + 0.02, cx, 0.32, 0.27) & (yy > cy - 0.18), "skin")
    glasses = rng.random() < 0.5
    for side in (-1, 1):
        ex = cx + side * 0.11
        if glasses:
            paint(_ellipse(yy, xx, cy - 0.02, ex, 0.06, 0.09), "glasses")
        paint(_ellipse(yy, xx, cy - 0.1, ex, 0.025, 0.07), "eyebrows")
        paint(_ellipse(yy, xx, cy - 0.02, ex, 0.03, 0.06), "eyes")
    paint(_ellipse(yy, xx, cy + 0.08, cx, 0.07, 0.04), "nose")
    paint(_ellipse(yy, xx, cy + 0.2, cx, 0.045, 0.1), "lips")
    paint(_ellipse(yy, xx, cy + 0.2, cx, 0.012, 0.07), "inner_mouth")
    return labels


def make_fixture(seed, n, size=64):
    """Deterministic synthetic faces for desk-scale tests."""
    if size < 32 or size & (size - 1):
        raise BadShape(f"fixture size must be a power of two >= 32, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    r = np.hypot(yy - c, xx - c)
    saliency = (1.0 - 2.0 * r / r.max())[None].astype(np.float32)

    samples = []
    for i in range(n):
        labels = _fixture_labels(rng, size)
        layout = labels_to_onehot(labels)
        palette = rng.uniform(-0.8, 0.8, size=(NUM_CLASSES, 3))
        photo = palette[labels].transpose(2, 0, 1)
        noise = rng.standard_normal((3, size, size))
        noise = ndimage.gaussian_filter(noise, sigma=(0, size / 16, size / 16))
        noise /= np.abs(noise).max() + 1e-12
        photo = ndimage.gaussian_filter(photo + 0.25 * noise, sigma=(0, 1, 1))
        photo = np.clip(photo, -1, 1)

        gray = photo.mean(axis=0)
        edges = np.hypot(ndimage.sobel(gray, 0), ndimage.sobel(gray, 1))
        edges /= edges.max() + 1e-12
        tone = np.array([_TONE[name] for name in CLASS_NAMES])[labels]
        sketch = ndimage.gaussian_filter(tone, sigma=0.7) - 1.2 * edges
        sketch = np.clip(sketch, -1, 1)

        samples.append(PairedSample(
            photo=photo.astype(np.float32),
            sketch=sketch[None].astype(np.float32),
            saliency=saliency.copy(),
            layout=layout,
            id=f"fx{seed}_{i:03d}",
        ))
    return samples


def write_dataset(samples, root, split="train", parser="celebamask", raw_geometry=False):
    """Write samples in the documented directory layout.

    With ``raw_geometry`` 256x256 samples are un-padded back to 200x250 first,
    so reading them again exercises :func:`preprocess_pair`.
    """
    split_dir = Path(root) / split
    for sub in ("photos", "sketches", "saliency", "parsing"):
        (split_dir / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        photo, sketch, sal, layout = s.photo, s.sketch, s.saliency, s.layout
        if raw_geometry:
            photo, sketch, sal = unpad(photo), unpad(sketch), unpad(sal)
            layout = unpad_layout(layout)
        write_photo(split_dir / "photos" / f"{s.id}.png", photo)
        write_gray(split_dir / "sketches" / f"{s.id}.png", sketch)
        write_gray(split_dir / "saliency" / f"{s.id}.png", sal)
        write_labels(split_dir / "parsing" / f"{s.id}.png",
                     canonical_to_raw(onehot_to_labels(layout), parser))
    return split_dir
