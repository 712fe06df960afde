"""Sketch quality metrics: SSIM and per-class masked absolute error."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .dataio import (
    CLASS_NAMES, CUFS_PAD, NUM_CLASSES, merge_classes, read_gray, read_labels,
    unpad, unpad_layout,
)
from .errors import BadShape, IdMismatch, MissingFile, ShapeMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
# columns reserved for metrics computed by external tools
EXTERNAL_COLUMNS = ("fsim", "fid", "lpips")


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _as_plane(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x.mean(axis=0)
    if x.ndim != 2:
        raise BadShape(f"expected a single-channel grid, got shape {x.shape}")
    return x


def ssim_map(a, b, data_range=1.0):
    """Local SSIM over the valid window positions of two [0, 1] images."""
    w = gaussian_window()
    if min(a.shape) < w.shape[0]:
        raise BadShape(f"image {a.shape} smaller than the {w.shape[0]}x{w.shape[0]} window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    filt = lambda x: convolve2d(x, w, mode="valid")  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b):
    """Mean SSIM of two sketches given in [-1, 1] (evaluated on [0, 1])."""
    a, b = _as_plane(a), _as_plane(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim: shapes {a.shape} and {b.shape} differ")
    a = np.clip((a + 1.0) / 2.0, 0.0, 1.0)
    b = np.clip((b + 1.0) / 2.0, 0.0, 1.0)
    return float(ssim_map(a, b).mean())


def masked_mae(a, b, layout):
    """Per-class mean absolute error (0 for empty classes) and overall MAE."""
    a, b = _as_plane(a), _as_plane(b)
    layout = np.asarray(layout)
    if a.shape != b.shape or layout.shape[-2:] != a.shape:
        raise ShapeMismatch(f"masked_mae: {a.shape}, {b.shape}, layout {layout.shape}")
    err = np.abs(a - b)
    mask = layout.astype(np.float64)
    counts = mask.sum(axis=(1, 2))
    sums = (mask * err).sum(axis=(1, 2))
    per_class = np.divide(sums, counts, out=np.zeros(NUM_CLASSES), where=counts > 0)
    return per_class, float(err.mean())


@dataclass
class SampleScore:
    id: str
    ssim: float
    mae: float
    class_mae: np.ndarray


@dataclass
class EvalReport:
    samples: list[SampleScore] = field(default_factory=list)

    def _column(self, name):
        return np.array([getattr(s, name) for s in self.samples], dtype=np.float64)

    @property
    def mean_ssim(self):
        return float(self._column("ssim").mean())

    @property
    def mean_mae(self):
        return float(self._column("mae").mean())

    def aggregate(self):
        table = np.array([[s.ssim, s.mae, *s.class_mae] for s in self.samples])
        return table.mean(axis=0), table.std(axis=0)

    def header(self):
        return ",".join(["id", "ssim", "mae"] + [f"mae_{c}" for c in CLASS_NAMES]
                        + list(EXTERNAL_COLUMNS))

    def to_csv(self):
        pad = "," * len(EXTERNAL_COLUMNS)
        fmt = lambda xs: ",".join(f"{x:.8f}" for x in xs)  # noqa: E731
        lines = [self.header()]
        for s in self.samples:
            lines.append(f"{s.id},{fmt([s.ssim, s.mae, *s.class_mae])}{pad}")
        mean, std = self.aggregate()
        lines.append(f"mean,{fmt(mean)}{pad}")
        lines.append(f"std,{fmt(std)}{pad}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_csv())


def _ids(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFile(f"directory {directory} does not exist")
    return {p.stem for p in directory.glob("*.png")}


def evaluate_dirs(pred_dir, target_dir, layout_dir, crop=CUFS_PAD, parser="celebamask",
                  report_path=None):
    """Score every ``<id>.png`` in ``pred_dir`` against ``target_dir``.

    Predictions at network resolution are mapped back to the target geometry
    with ``crop`` before scoring, so padding never enters the metrics.
    """
    pred_ids, target_ids = _ids(pred_dir), _ids(target_dir)
    missing = sorted(pred_ids ^ target_ids)
    if missing:
        raise IdMismatch(f"ids present on only one side: {', '.join(missing)}")
    if not target_ids:
        raise MissingFile(f"no images in {target_dir}")
    report = EvalReport()
    for id_ in sorted(target_ids):
        layout_path = Path(layout_dir) / f"{id_}.png"
        if not layout_path.is_file():
            raise MissingFile(f"sample '{id_}': missing layout {layout_path}")
        pred = read_gray(Path(pred_dir) / f"{id_}.png")
        target = read_gray(Path(target_dir) / f"{id_}.png")
        layout = merge_classes(read_labels(layout_path), parser)
        if pred.shape != target.shape:
            if crop is None:
                raise ShapeMismatch(f"sample '{id_}': prediction {pred.shape} vs target {target.shape}")
            pred = unpad(pred, crop)
        if layout.shape[-2:] != target.shape[-2:]:
            if crop is None:
                raise ShapeMismatch(f"sample '{id_}': layout {layout.shape} vs target {target.shape}")
            layout = unpad_layout(layout, crop)
        class_mae, mae = masked_mae(pred, target, layout)
        report.samples.append(SampleScore(id_, ssim(pred, target), mae, class_mae))
    if report_path is not None:
        report.write(report_path)
    return report
