"""Synthetic blob dataset with analytically measurable attributes.

Each image is a single smooth radial blob on a dark background:

    pixel(i, j) = clamp(2 * b * exp(-((i-cx)^2 + (j-cy)^2) / (2 r^2)) - 1, -1, 1)

with center (cx, cy) ~ U[0.3 S, 0.7 S], radius r ~ U[0.12 S, 0.25 S] and
peak intensity b ~ U[0.5, 0.9]. The generating parameters are kept next to
every image, which makes attribute ground truth exact: brightness is the
mean pixel value and size the fraction of pixels above zero, and both
respond monotonically to b and r. That turns "did the edit work?" into a
mechanical measurement instead of a judgement call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DegenerateDirectionError
from .guidance import Embedder, embed_image, register_attribute
from .rng import Rng

CENTER_LO, CENTER_HI = 0.3, 0.7
RADIUS_LO, RADIUS_HI = 0.12, 0.25
INTENSITY_LO, INTENSITY_HI = 0.5, 0.9


@dataclass(frozen=True)
class ToyDataset:
    images: np.ndarray  # (n, side*side) flattened, pixel range [-1, 1]
    params: np.ndarray  # (n, 4) rows of (cx, cy, r, b)
    side: int

    def __len__(self) -> int:
        return len(self.images)


def render_blob(side: int, cx: float, cy: float, r: float, b: float) -> np.ndarray:
    """Flattened blob image for explicit parameters."""
    i = np.arange(side, dtype=np.float64)[:, None]
    j = np.arange(side, dtype=np.float64)[None, :]
    d2 = (i - cx) ** 2 + (j - cy) ** 2
    img = np.clip(2.0 * b * np.exp(-d2 / (2.0 * r * r)) - 1.0, -1.0, 1.0)
    return img.ravel()


def generate_dataset(n: int, side: int = 16, rng: Rng | None = None) -> ToyDataset:
    """n valid blob images; invalid draws are rejection-resampled."""
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    if side < 8:
        raise ConfigError(f"need side >= 8, got {side}")
    rng = rng if rng is not None else Rng(0)
    images = np.empty((n, side * side))
    params = np.empty((n, 4))
    for k in range(n):
        while True:
            u = rng.uniform(4)
            cx = (CENTER_LO + u[0] * (CENTER_HI - CENTER_LO)) * side
            cy = (CENTER_LO + u[1] * (CENTER_HI - CENTER_LO)) * side
            r = (RADIUS_LO + u[2] * (RADIUS_HI - RADIUS_LO)) * side
            b = INTENSITY_LO + u[3] * (INTENSITY_HI - INTENSITY_LO)
            img = render_blob(side, cx, cy, r, b)
            if blob_validity(img):
                break
        images[k] = img
        params[k] = (cx, cy, r, b)
    images.setflags(write=False)
    params.setflags(write=False)
    return ToyDataset(images, params, side)


def attribute_measure(name: str, x) -> float:
    """Ground-truth measurement of an attribute on one image."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    arr = arr.ravel()
    if name == "brightness":
        return float(arr.mean())
    if name == "size":
        return float((arr > 0).sum() / arr.size)
    raise ConfigError(f"unknown attribute {name!r}; known: brightness, size")


# Finite-difference step per attribute, in generating-parameter units.
_FD_STEPS = {"brightness": ("b", 0.02), "size": ("r", 0.2)}


def attribute_direction(
    name: str, polarity: str, dataset: ToyDataset, embedder: Embedder
) -> tuple:
    """Build and register the embedding direction for an attribute edit.

    The direction is the normalized embedding of the dataset-mean
    finite-difference image d(image)/d(parameter). Registers a zero
    reference label ``<name>:base`` and the target ``<name>:<polarity>``
    holding the direction (negated for ``decrease``), and returns
    ``(y_ref, y_tar)``.
    """
    if name not in _FD_STEPS:
        raise ConfigError(f"unknown attribute {name!r}; known: {sorted(_FD_STEPS)}")
    if polarity not in ("increase", "decrease"):
        raise ConfigError(f"polarity must be increase or decrease, got {polarity!r}")
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    which, delta = _FD_STEPS[name]
    diff = np.zeros(dataset.side * dataset.side)
    for cx, cy, r, b in dataset.params:
        if which == "b":
            hi = render_blob(dataset.side, cx, cy, r, b + delta)
            lo = render_blob(dataset.side, cx, cy, r, b - delta)
        else:
            hi = render_blob(dataset.side, cx, cy, r + delta, b)
            lo = render_blob(dataset.side, cx, cy, r - delta, b)
        diff += (hi - lo) / (2.0 * delta)
    diff /= len(dataset)
    vec = embed_image(embedder, Tensor(diff)).data
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateDirectionError(f"attribute {name!r} embeds to the zero vector")
    vec = vec / norm
    if polarity == "decrease":
        vec = -vec
    y_ref = f"{name}:base"
    y_tar = f"{name}:{polarity}"
    register_attribute(embedder, y_ref, np.zeros_like(vec), allow_zero=True)
    register_attribute(embedder, y_tar, vec)
    return y_ref, y_tar


def blob_validity(x) -> bool:
    """Cheap sample-quality oracle: bright spot, centered mass, low noise.

    True iff the max pixel is positive, the boundary ring is darker on
    average than the central 3x3 block, and the total variation (sum of
    absolute horizontal and vertical neighbor differences) stays below
    side^2 / 2.
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    side = int(round(np.sqrt(arr.size)))
    img = arr.reshape(side, side)
    if img.max() <= 0:
        return False
    ring = np.concatenate([img[0], img[-1], img[1:-1, 0], img[1:-1, -1]])
    c = side // 2 - 1
    center = img[c : c + 3, c : c + 3]
    if ring.mean() >= center.mean():
        return False
    tv = np.abs(np.diff(img, axis=0)).sum() + np.abs(np.diff(img, axis=1)).sum()
    return bool(tv < 0.5 * side * side)
