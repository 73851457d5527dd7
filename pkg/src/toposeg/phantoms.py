"""Synthetic phantoms with known topology.

Each generator produces an (image, labels) pair whose ground truth honors the
spec's forbidden adjacency list: classes listed there never meet inside a
Moore neighborhood.  The generator verifies this with the interaction check
and retries with derived seeds before giving up.

Kinds
-----
tube2d            one bright connected tube on background (2 classes)
nested_rings2d    concentric rings: class 1 outermost, class c-1 the core
branching_tree3d  a trunk splitting into two branches (2 classes)
nested_shells3d   concentric shells, 3D analog of the rings
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import torch
from scipy import ndimage

from .errors import GenerationError, InvalidArgument
from .interaction import pairwise_critical

KINDS = ("tube2d", "nested_rings2d", "branching_tree3d", "nested_shells3d")

MAX_RETRIES = 20


@dataclass
class PhantomSpec:
    kind: str
    extents: Tuple[int, ...]
    num_classes: int
    noise_sigma: float = 0.05
    forbidden_adjacency: List[Tuple[int, int]] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown phantom kind {self.kind!r}; choose from {KINDS}")
        self.extents = tuple(int(e) for e in self.extents)
        rank = 2 if self.kind.endswith("2d") else 3
        if len(self.extents) != rank:
            raise InvalidArgument(f"{self.kind} needs {rank} extents, got {self.extents}")
        if any(e < 16 for e in self.extents):
            raise InvalidArgument(f"extents must be at least 16 per axis, got {self.extents}")
        if self.kind in ("tube2d", "branching_tree3d") and self.num_classes != 2:
            raise InvalidArgument(f"{self.kind} is a two-class phantom")
        if self.num_classes < 2:
            raise InvalidArgument("phantoms need at least two classes")
        self.forbidden_adjacency = [tuple(int(x) for x in p) for p in self.forbidden_adjacency]

    @classmethod
    def from_json(cls, data: dict) -> "PhantomSpec":
        return cls(**data)


def _tube2d(extents, rng) -> np.ndarray:
    h, w = extents
    xs = np.arange(w)
    cy = h / 2 + rng.uniform(-h / 8, h / 8)
    amp = rng.uniform(h / 10, h / 5)
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, 2 * np.pi)
    center = cy + amp * np.sin(2 * np.pi * freq * xs / w + phase)
    radius = rng.uniform(2.0, 3.5) + 0.8 * np.sin(2 * np.pi * xs / w + rng.uniform(0, 2 * np.pi))
    rows = np.arange(h)[:, None]
    labels = (np.abs(rows - center[None, :]) <= radius[None, :]).astype(np.int64)
    return labels


def _ring_labels(extents, num_classes, rng, core_radius_frac=0.18, band_width=3.0,
                 pinch=0.0, wobble=0.0):
    """Concentric bands: background 0, outermost ring 1, core num_classes-1.

    ``wobble`` deforms the core boundary with an angular wave (the bands
    follow it), ``pinch`` additionally modulates band widths, so separator
    rings can thin down to a voxel while the ground truth still keeps
    non-adjacent classes apart.
    """
    shape = np.asarray(extents, dtype=float)
    jitter = (shape / 10.0)
    center = shape / 2 + rng.uniform(-1, 1, size=len(extents)) * jitter
    grids = np.meshgrid(*[np.arange(e) for e in extents], indexing="ij")
    r = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, center)))
    theta = np.arctan2(grids[-2] - center[-2], grids[-1] - center[-1])
    core = core_radius_frac * min(extents) + rng.uniform(-1.0, 1.0)
    labels = np.zeros(tuple(extents), dtype=np.int64)
    # Band boundaries, innermost first; each band's width may vary with angle.
    boundary = np.full(labels.shape, core)
    if wobble > 0:
        lobes = int(rng.integers(5, 9))
        phase = rng.uniform(0, 2 * np.pi)
        boundary = boundary + wobble * np.sin(lobes * theta + phase)
    edges = [boundary]
    for _ in range(num_classes - 2):
        width = band_width + rng.uniform(0.0, 1.0)
        if pinch > 0:
            lobes = int(rng.integers(2, 5))
            phase = rng.uniform(0, 2 * np.pi)
            width = np.maximum(1.0, width + pinch * np.sin(lobes * theta + phase))
        edges.append(edges[-1] + width)
    for cls in range(num_classes - 1, 0, -1):
        outer = edges[num_classes - 1 - cls]
        labels[(r <= outer) & (labels == 0)] = cls
    return _legalize_bands(labels, num_classes)


def _legalize_bands(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Grow separator bands until no non-consecutive classes touch.

    Sharp boundary wobble can pinch a band below one voxel of normal
    thickness; flipping the offending lower-class voxel into the band
    between them restores the onion topology with minimal distortion.
    """
    offsets = [off for off in np.ndindex((3,) * labels.ndim)
               if any(o != 1 for o in off)]
    for _ in range(4):
        changed = False
        for a in range(num_classes):
            for b in range(a + 2, num_classes):
                contact = np.zeros(labels.shape, dtype=bool)
                for off in offsets:
                    off = tuple(o - 1 for o in off)
                    src = tuple(slice(max(0, -o), labels.shape[ax] - max(0, o))
                                for ax, o in enumerate(off))
                    dst = tuple(slice(max(0, o), labels.shape[ax] - max(0, -o))
                                for ax, o in enumerate(off))
                    sub = contact[dst]
                    sub |= (labels[dst] == a) & (labels[src] == b)
                    contact[dst] = sub
                if contact.any():
                    labels[contact] = a + 1
                    changed = True
        if not changed:
            break
    return labels


def _branching_tree3d(extents, rng) -> np.ndarray:
    d, h, w = extents
    labels = np.zeros(extents, dtype=np.int64)
    radius = rng.uniform(1.8, 2.6)

    def draw(p0, p1):
        steps = int(np.linalg.norm(np.subtract(p1, p0)) * 2) + 1
        for t in np.linspace(0.0, 1.0, steps):
            p = np.add(p0, t * np.subtract(p1, p0))
            lo = np.maximum(np.floor(p - radius - 1).astype(int), 0)
            hi = np.minimum(np.ceil(p + radius + 1).astype(int) + 1, extents)
            zz, yy, xx = np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij")
            dist = np.sqrt((zz - p[0]) ** 2 + (yy - p[1]) ** 2 + (xx - p[2]) ** 2)
            labels[zz[dist <= radius], yy[dist <= radius], xx[dist <= radius]] = 1

    root = np.array([1.0, h / 2 + rng.uniform(-h / 8, h / 8), w / 2 + rng.uniform(-w / 8, w / 8)])
    split = root + np.array([d * rng.uniform(0.35, 0.5), rng.uniform(-3, 3), rng.uniform(-3, 3)])
    tip_a = split + np.array([d * 0.4, -h * rng.uniform(0.15, 0.3), rng.uniform(-4, 4)])
    tip_b = split + np.array([d * 0.4, h * rng.uniform(0.15, 0.3), rng.uniform(-4, 4)])
    tip_a = np.clip(tip_a, 2, np.asarray(extents) - 3)
    tip_b = np.clip(tip_b, 2, np.asarray(extents) - 3)
    draw(root, split)
    draw(split, tip_a)
    draw(split, tip_b)
    return labels


def _label_image(labels: np.ndarray, num_classes: int, noise_sigma: float, rng,
                 intensities=None) -> np.ndarray:
    base = np.linspace(0.15, 0.9, num_classes) if intensities is None else np.asarray(intensities)
    img = base[labels]
    smooth = ndimage.gaussian_filter(rng.standard_normal(labels.shape), sigma=min(labels.shape) / 8)
    img = img + 0.05 * smooth + noise_sigma * rng.standard_normal(labels.shape)
    return img.astype(np.float32)


def _ring_intensities(num_classes: int) -> np.ndarray:
    """Bright core, weak-contrast separator bands against the background."""
    base = np.full(num_classes, 0.2)
    base[num_classes - 1] = 0.9
    for k in range(1, num_classes - 1):
        base[k] = 0.2 + 0.06 * k
    return base


def _check_forbidden(labels: np.ndarray, pairs) -> bool:
    lab = torch.from_numpy(labels).unsqueeze(0)
    for a, b in pairs:
        mask_a = (lab == a).float()
        mask_b = (lab == b).float()
        if bool(pairwise_critical(mask_a, mask_b).any()):
            return False
    return True


def generate_phantom(spec: PhantomSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic (image, labels) pair for the given spec."""
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, attempt)))
        intensities = None
        if spec.kind == "tube2d":
            labels = _tube2d(spec.extents, rng)
        elif spec.kind == "nested_rings2d":
            labels = _ring_labels(spec.extents, spec.num_classes, rng,
                                  band_width=1.9, pinch=0.8, wobble=2.5)
            intensities = _ring_intensities(spec.num_classes)
        elif spec.kind == "nested_shells3d":
            labels = _ring_labels(spec.extents, spec.num_classes, rng, band_width=3.5)
        elif spec.kind == "branching_tree3d":
            labels = _branching_tree3d(spec.extents, rng)
        else:  # pragma: no cover - guarded by the spec validator
            raise InvalidArgument(spec.kind)
        if labels.max() >= spec.num_classes:
            raise GenerationError(
                f"{spec.kind} produced label {labels.max()} for {spec.num_classes} classes"
            )
        if not all((labels == cls).any() for cls in range(spec.num_classes)):
            continue
        if not _check_forbidden(labels, spec.forbidden_adjacency):
            continue
        image = _label_image(labels, spec.num_classes, spec.noise_sigma, rng, intensities)
        return image, labels
    raise GenerationError(
        f"could not satisfy forbidden adjacency {spec.forbidden_adjacency} for "
        f"{spec.kind} after {MAX_RETRIES} attempts"
    )
