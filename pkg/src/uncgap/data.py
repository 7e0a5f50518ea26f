"""Three overlapping Gaussian classes, uniform OOD samples, and evaluation grids."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_MEANS = ((-4.0, 0.0), (4.0, 0.0), (0.0, 5.0))
DEFAULT_SIGMA_STD = 2.0
DEFAULT_BOX = ((-15.0, 15.0), (-13.0, 17.0))

MIN_ACCEPTANCE = 0.01


class DataFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    domain_flags: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domain_flags = np.asarray(self.domain_flags, dtype=bool)
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.labels.shape != (n,) or self.domain_flags.shape != (n,):
            raise ValueError("features, labels and domain_flags must agree in length")
        if np.any(self.labels[~self.domain_flags] != -1):
            raise ValueError("OOD rows must carry label -1")
        if np.any(self.labels[self.domain_flags] < 0):
            raise ValueError("in-domain rows need labels >= 0")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def in_domain(self) -> "LabeledDataset":
        return self.subset(self.domain_flags)

    @property
    def ood(self) -> "LabeledDataset":
        return self.subset(~self.domain_flags)

    def subset(self, mask) -> "LabeledDataset":
        return LabeledDataset(self.features[mask], self.labels[mask], self.domain_flags[mask], dict(self.meta))

    @staticmethod
    def concat(*parts: "LabeledDataset") -> "LabeledDataset":
        meta = {}
        for i, p in enumerate(parts):
            meta[f"part{i}"] = p.meta
        return LabeledDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.domain_flags for p in parts]),
            meta,
        )

    def equals(self, other: "LabeledDataset") -> bool:
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domain_flags, other.domain_flags)
        )


def sample_in_domain(n_per_class: int, means=DEFAULT_MEANS, sigma: float = DEFAULT_SIGMA_STD, seed: int = 0) -> LabeledDataset:
    """``n_per_class`` isotropic Gaussian draws (std ``sigma``) around each mean."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    means = np.asarray(means, dtype=np.float64)
    rng = np.random.default_rng(seed)
    feats = [mu + sigma * rng.standard_normal((n_per_class, means.shape[1])) for mu in means]
    labels = np.repeat(np.arange(len(means)), n_per_class)
    meta = {"kind": "in_domain", "means": means.tolist(), "sigma_std": sigma,
            "n_per_class": n_per_class, "seed": seed}
    return LabeledDataset(np.concatenate(feats), labels, np.ones(labels.size, bool), meta)


def sample_ood(n: int, box=DEFAULT_BOX, exclusion_radius: float = 3 * DEFAULT_SIGMA_STD,
               means=DEFAULT_MEANS, seed: int = 0) -> LabeledDataset:
    """Uniform points in ``box`` kept only if at least ``exclusion_radius`` from every mean.

    Raises ``ValueError`` when the observed acceptance rate of the first
    proposal batch is below 1%.
    """
    box = np.asarray(box, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("box must be a list of [lo, hi] pairs with lo < hi")
    if exclusion_radius < 0:
        raise ValueError("exclusion_radius must be >= 0")
    if n < 0:
        raise ValueError("n must be >= 0")
    means = np.asarray(means, dtype=np.float64)
    rng = np.random.default_rng(seed)
    batch = max(2 * n, 1000)
    kept: list[np.ndarray] = []
    have = 0
    first = True
    while have < n:
        pts = rng.uniform(box[:, 0], box[:, 1], size=(batch, box.shape[0]))
        d = np.linalg.norm(pts[:, None, :] - means[None, :, :], axis=2)
        ok = pts[np.all(d >= exclusion_radius, axis=1)]
        if first and ok.shape[0] < MIN_ACCEPTANCE * batch:
            raise ValueError(
                f"OOD acceptance rate {ok.shape[0] / batch:.4f} < {MIN_ACCEPTANCE}: "
                "box and exclusion radius are incompatible"
            )
        first = False
        kept.append(ok)
        have += ok.shape[0]
    feats = np.concatenate(kept)[:n] if kept else np.zeros((0, box.shape[0]))
    meta = {"kind": "ood", "box": box.tolist(), "exclusion_radius": exclusion_radius,
            "means": means.tolist(), "n": n, "seed": seed}
    return LabeledDataset(feats, -np.ones(n, np.int64), np.zeros(n, bool), meta)


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: int

    def __post_init__(self):
        for name in ("x_range", "y_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: lo must be < hi, got [{lo}, {hi}]")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")


def make_grid(spec: GridSpec) -> np.ndarray:
    """Row-major lattice: x0 varies fastest, endpoints included."""
    xs = np.linspace(*spec.x_range, spec.resolution)
    ys = np.linspace(*spec.y_range, spec.resolution)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


# --- CSV ---------------------------------------------------------------------


def meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def save_csv(ds: LabeledDataset, path, write_meta: bool = True) -> None:
    d = ds.features.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(",".join([f"x{i}" for i in range(d)] + ["label", "domain"]) + "\n")
        for row, lab, dom in zip(ds.features, ds.labels, ds.domain_flags):
            fh.write(",".join([f"{v:.17g}" for v in row] + [str(int(lab)), "1" if dom else "0"]) + "\n")
    if write_meta:
        meta_path(path).write_text(json.dumps(ds.meta, indent=1, sort_keys=True) + "\n")


def load_csv(path) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    header = rows[0]
    if len(header) < 3 or header[-2:] != ["label", "domain"]:
        raise DataFormatError(f"{path}: line 1: expected header x0,...,label,domain")
    ncol = len(header)
    feats, labels, flags = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise DataFormatError(f"{path}: line {lineno}: expected {ncol} columns, got {len(row)}")
        try:
            feats.append([float(v) for v in row[:-2]])
            labels.append(int(row[-2]))
            dom = int(row[-1])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
        if dom not in (0, 1):
            raise DataFormatError(f"{path}: line {lineno}: domain must be 0 or 1")
        flags.append(bool(dom))
    if not feats:
        raise DataFormatError(f"{path}: no data rows")
    meta = {}
    mp = meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
    try:
        return LabeledDataset(np.array(feats), np.array(labels), np.array(flags), meta)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
