"""Directional and identity losses over a pluggable embedding space.

A fixed random linear projection with unit-norm rows stands in for a
learned image encoder; attribute labels map to stored unit vectors the
way text prompts would map to text embeddings. The directional loss is
one minus the cosine between the cross-domain displacement vectors

    delta_T = embed(y_tar) - embed(y_ref)      (attribute side, constant)
    delta_I = embed(x_edit) - embed(x_src)     (image side, differentiable)

The attribute displacement is normalized before use, so the loss is
exactly invariant under positive rescaling of delta_T; a small epsilon in
the image-side denominator keeps the loss and its gradient finite when
the edited image has not moved yet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, matmul
from .errors import ConfigError, DegenerateDirectionError, ShapeError
from .rng import Rng

COSINE_EPS = 1e-8


@dataclass
class Embedder:
    """Shared embedding space for images and attribute labels."""

    image_proj: np.ndarray  # (dim, image_dim), unit-norm rows
    attribute_table: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.image_proj.shape[0]

    @property
    def image_dim(self) -> int:
        return self.image_proj.shape[1]


@dataclass(frozen=True)
class Direction:
    """A nonzero displacement in embedding space."""

    vector: np.ndarray
    kind: str  # "text" or "image"

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise DegenerateDirectionError(f"{self.kind} direction is not finite")
        if float(np.linalg.norm(self.vector)) == 0.0:
            raise DegenerateDirectionError(f"{self.kind} direction has zero norm")


def make_embedder(image_dim: int, dim: int = 64, seed: int = 42) -> Embedder:
    """Random projection embedder; the seed pins the geometry."""
    if dim < 1 or image_dim < 1:
        raise ConfigError(f"bad embedder dims: dim={dim}, image_dim={image_dim}")
    proj = Rng(seed).normal((dim, image_dim))
    proj /= np.linalg.norm(proj, axis=1, keepdims=True)
    proj.setflags(write=False)
    return Embedder(image_proj=proj)


def embed_image(e: Embedder, x) -> Tensor:
    """Project a flattened image into the embedding space (linear)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 1 or x.shape[0] != e.image_dim:
        raise ShapeError(f"embed_image: {x.shape} vs image_dim {e.image_dim}")
    return matmul(Tensor._wrap(np.asarray(e.image_proj)), x)


def register_attribute(e: Embedder, label: str, vector: np.ndarray,
                       allow_zero: bool = False) -> None:
    """Store an attribute vector. Non-reference labels must be unit-norm.

    ``allow_zero`` exists for reference anchors (the ``...:base`` labels),
    which represent the origin of a displacement and are stored as zero.
    """
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (e.dim,):
        raise ShapeError(f"attribute vector: {vector.shape} vs ({e.dim},)")
    norm = float(np.linalg.norm(vector))
    if allow_zero and norm == 0.0:
        pass
    elif abs(norm - 1.0) > 1e-9:
        raise ConfigError(f"attribute {label!r} must be unit-norm, got |v|={norm}")
    vector = vector.copy()
    vector.setflags(write=False)
    e.attribute_table[label] = vector


def embed_attribute(e: Embedder, label: str) -> np.ndarray:
    if label not in e.attribute_table:
        known = ", ".join(sorted(e.attribute_table)) or "(none)"
        raise ConfigError(f"unknown attribute label {label!r}; known: {known}")
    return e.attribute_table[label]


def attribute_direction_between(e: Embedder, y_tar: str, y_ref: str) -> Direction:
    """delta_T between two registered labels; errors if it degenerates."""
    vec = embed_attribute(e, y_tar) - embed_attribute(e, y_ref)
    if float(np.linalg.norm(vec)) == 0.0:
        raise DegenerateDirectionError(
            f"labels {y_tar!r} and {y_ref!r} give a zero attribute direction"
        )
    return Direction(vec, "text")


def cosine_direction_loss(delta_t, delta_i: Tensor) -> Tensor:
    """1 - cos(delta_t, delta_i); differentiable in delta_i.

    delta_t is normalized first, making the loss exactly scale-free in
    delta_t; COSINE_EPS pads only the image-side norm so a zero delta_i
    yields loss 1 with a finite gradient.
    """
    vec = delta_t.vector if isinstance(delta_t, Direction) else np.asarray(delta_t)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateDirectionError("attribute direction has zero norm")
    t_hat = Tensor._wrap(vec / norm)
    cos = delta_i.dot(t_hat) / (delta_i.l2() + COSINE_EPS)
    return 1.0 - cos


def directional_loss(x_edit, x_src, y_tar: str, y_ref: str, e: Embedder) -> Tensor:
    """Directional loss between an edited/source image pair and a label pair."""
    d_t = attribute_direction_between(e, y_tar, y_ref)
    d_i = embed_image(e, x_edit) - embed_image(e, x_src)
    return cosine_direction_loss(d_t, d_i)


def identity_loss(x_edit, x_src) -> Tensor:
    """Pixel-space L1: sum of absolute differences."""
    x_edit = x_edit if isinstance(x_edit, Tensor) else Tensor(x_edit)
    x_src = x_src if isinstance(x_src, Tensor) else Tensor(x_src)
    if x_edit.shape != x_src.shape:
        raise ShapeError(f"identity_loss: {x_edit.shape} vs {x_src.shape}")
    return (x_edit - x_src).l1()


def total_loss(x_edit, x_src, y_tar: str, y_ref: str, lam: float, e: Embedder,
               extra_terms=()) -> Tensor:
    """directional + lam * identity, plus any extra (weight, fn) terms.

    Extra terms receive ``(x_edit, x_src)`` and must return a scalar
    tensor; none are registered by default.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    loss = directional_loss(x_edit, x_src, y_tar, y_ref, e)
    if lam != 0.0:
        loss = loss + lam * identity_loss(x_edit, x_src)
    for weight, fn in extra_terms:
        loss = loss + weight * fn(x_edit, x_src)
    return loss
