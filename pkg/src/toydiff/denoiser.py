"""Time-conditioned MLP noise predictor and its from-scratch pretraining.

The model maps a flattened image plus a sinusoidal timestep embedding
through three tanh hidden layers to a noise estimate of the same shape as
the input. It is deliberately small: the point is to exercise the full
encode/estimate/decode/fine-tune pipeline with exact gradients, not to
scale past 16x16 toy images.

Training is the standard denoising objective: corrupt a clean image to a
random timestep with the closed-form forward process, predict the
injected noise, and minimize the mean squared error with Adam. All
randomness flows through one seeded stream so checkpoints are
bit-reproducible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ConfigError, DivergenceError, ShapeError
from .fileio import read_swtf, write_swtf
from .optim import Adam
from .rng import Rng
from .schedule import NoiseSchedule, make_linear_schedule

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e6


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding [sin(t*w_i), cos(t*w_i)] interleaved.

    Frequencies w_i = 10000^(-2i/dim) for i = 0..dim/2-1, so component 1
    is cos(t).
    """
    if dim % 2 != 0:
        raise ConfigError(f"time embedding dim must be even, got {dim}")
    if t < 1:
        raise ConfigError(f"timestep must be >= 1, got {t}")
    i = np.arange(dim // 2, dtype=np.float64)
    angles = t / (10000.0 ** (2.0 * i / dim))
    out = np.empty(dim)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


@dataclass
class DenoiserModel:
    """MLP noise predictor tied to the schedule it was trained under."""

    params: dict  # name -> np.ndarray, fixed insertion order w1,b1,...,w4,b4
    image_dim: int
    hidden_width: int
    time_embed_dim: int
    schedule: NoiseSchedule
    _const: dict = field(default_factory=dict, repr=False)
    _emb_table: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"parameter {name} contains non-finite values")
            arr.setflags(write=False)
        self._const = {k: Tensor._wrap(v) for k, v in self.params.items()}
        table = np.stack(
            [time_embedding(t, self.time_embed_dim)
             for t in range(1, self.schedule.timesteps + 1)]
        )
        table.setflags(write=False)
        self._emb_table = table

    def with_params(self, params: dict) -> "DenoiserModel":
        """Same architecture and schedule, new parameter values."""
        return DenoiserModel(
            params={k: np.array(v) for k, v in params.items()},
            image_dim=self.image_dim,
            hidden_width=self.hidden_width,
            time_embed_dim=self.time_embed_dim,
            schedule=self.schedule,
        )

    def embedding_at(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.schedule.timesteps:
            raise ConfigError(f"timestep {t} outside [1, {self.schedule.timesteps}]")
        return self._emb_table[t - 1]

    def predict(self, x, t: int, params: dict | None = None) -> Tensor:
        """Noise estimate for x at timestep t.

        Accepts a single image ``(image_dim,)`` or a batch ``(n,
        image_dim)``. Differentiable through both the input and, when a
        dict of recorded leaves is supplied, the parameters.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim not in (1, 2) or x.shape[-1] != self.image_dim:
            raise ShapeError(f"predict: {x.shape} vs image_dim {self.image_dim}")
        emb = Tensor._wrap(self.embedding_at(t))
        if x.ndim == 2:
            emb = emb.broadcast_to((x.shape[0], self.time_embed_dim))
        return self.forward_with_embedding(x, emb, params)

    def forward_with_embedding(self, x: Tensor, emb: Tensor,
                               params: dict | None = None) -> Tensor:
        """Forward pass with caller-supplied (possibly per-row) embeddings."""
        p = params if params is not None else self._const
        h = Tensor.concat([x, emb], axis=x.ndim - 1)
        for layer in (1, 2, 3):
            h = _affine(h, p[f"w{layer}"], p[f"b{layer}"]).tanh()
        return _affine(h, p["w4"], p["b4"])

    def leaf_params(self, tape: Tape) -> dict:
        """Wrap every parameter as a differentiable leaf on the tape."""
        return {name: tape.leaf(Tensor._wrap(arr)) for name, arr in self.params.items()}


def _affine(h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = h @ w
    if out.ndim == 2:
        b = b.broadcast_to(out.shape)
    return out + b


def init_model(
    image_dim: int,
    schedule: NoiseSchedule,
    rng: Rng,
    hidden_width: int = 256,
    time_embed_dim: int = 32,
) -> DenoiserModel:
    """Gaussian fan-in init for hidden layers; zero final layer.

    The zero output layer makes the untrained model predict zero noise,
    which keeps early training stable.
    """
    in_dim = image_dim + time_embed_dim
    dims = [in_dim, hidden_width, hidden_width, hidden_width, image_dim]
    params = {}
    for layer in range(1, 5):
        fan_in, fan_out = dims[layer - 1], dims[layer]
        if layer < 4:
            params[f"w{layer}"] = rng.normal((fan_in, fan_out)) / np.sqrt(fan_in)
        else:
            params[f"w{layer}"] = np.zeros((fan_in, fan_out))
        params[f"b{layer}"] = np.zeros(fan_out)
    return DenoiserModel(params, image_dim, hidden_width, time_embed_dim, schedule)


def pretrain(
    model: DenoiserModel,
    dataset,
    steps: int,
    lr: float = 1e-3,
    batch: int = 32,
    rng: Rng | None = None,
) -> DenoiserModel:
    """Denoising pretraining; returns a new model, input left untouched."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    rng = rng if rng is not None else Rng(0)
    sched = model.schedule
    images = np.asarray(dataset.images)
    theta = {k: np.array(v) for k, v in model.params.items()}
    opt = Adam(lr)
    dim = model.image_dim
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(images), batch)
        ts = rng.integers(1, sched.timesteps + 1, batch)
        eps = rng.normal((batch, dim))
        ab = sched.alpha_bar[ts - 1][:, None]
        x_t = np.sqrt(ab) * images[idx] + np.sqrt(1.0 - ab) * eps

        tape = Tape()
        leaves = {k: tape.leaf(Tensor._wrap(v.copy())) for k, v in theta.items()}
        emb = model._emb_table[ts - 1]
        pred = model.forward_with_embedding(
            Tensor._wrap(x_t), Tensor._wrap(emb.copy()), params=leaves
        )
        diff = pred - Tensor._wrap(eps)
        loss = (diff * diff).mean()
        val = loss.item()
        if not np.isfinite(val) or val > DIVERGENCE_BOUND:
            raise DivergenceError(step, f"training loss {val}")
        grads = tape.gradients(loss)
        opt.step(theta, {k: grads[leaf].data for k, leaf in leaves.items()})
        if step % 100 == 0 or step == steps:
            log.info("pretrain step %d/%d: mse %.5f", step, steps, val)
    return model.with_params(theta)


def epsilon_mse(model: DenoiserModel, dataset, rng: Rng, n_samples: int = 1024) -> float:
    """Held-out denoising MSE per element, averaged over random timesteps."""
    sched = model.schedule
    images = np.asarray(dataset.images)
    idx = rng.integers(0, len(images), n_samples)
    ts = rng.integers(1, sched.timesteps + 1, n_samples)
    eps = rng.normal((n_samples, model.image_dim))
    ab = sched.alpha_bar[ts - 1][:, None]
    x_t = np.sqrt(ab) * images[idx] + np.sqrt(1.0 - ab) * eps
    emb = model._emb_table[ts - 1]
    pred = model.forward_with_embedding(Tensor._wrap(x_t), Tensor._wrap(emb.copy()))
    return float(((pred.data - eps) ** 2).mean())


# -- checkpoints ----------------------------------------------------------

CHECKPOINT_FORMAT = "toydiff-checkpoint"


@dataclass(frozen=True)
class Checkpoint:
    """A model plus the metadata of the run that produced it."""

    model: DenoiserModel
    meta: dict  # steps, seed, final_loss, ...


def save_checkpoint(path, model: DenoiserModel, meta: dict | None = None) -> None:
    """JSON header line + SWTF tensor blobs, bit-exact round trip."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "image_dim": model.image_dim,
        "hidden_width": model.hidden_width,
        "time_embed_dim": model.time_embed_dim,
        "schedule": {
            "timesteps": model.schedule.timesteps,
            "beta_start": model.schedule.beta_start,
            "beta_end": model.schedule.beta_end,
        },
        "tensors": list(model.params.keys()),
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for name in header["tensors"]:
            write_swtf(fh, model.params[name])


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable checkpoint header in {path}: {exc}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        params = {name: read_swtf(fh) for name in header["tensors"]}
    sched = make_linear_schedule(
        header["schedule"]["timesteps"],
        header["schedule"]["beta_start"],
        header["schedule"]["beta_end"],
    )
    model = DenoiserModel(
        params=params,
        image_dim=header["image_dim"],
        hidden_width=header["hidden_width"],
        time_embed_dim=header["time_embed_dim"],
        schedule=sched,
    )
    return Checkpoint(model, header.get("meta", {}))
