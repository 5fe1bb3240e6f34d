"""Diffusion traversal primitives and the reconstruction sweep.

Four moves, each with an exact evaluation-count contract:

* ``ddpm_encode``     closed-form stochastic corruption to depth t0 (0 evals)
* ``estimate_x0``     single-evaluation clean-image estimate (1 eval)
* ``ddim_reverse_step`` deterministic solver hop toward t = 0, reusing one
  noise prediction for both terms (1 eval)
* ``ddim_encode`` / ``ddim_decode``  multi-step deterministic inversion and
  generation over a step subsequence (len(seq) evals each)

Decoding is fully deterministic (no stochastic mixing term). A forward
encode hop conditions the model on its source timestep; the very first
hop starts from clean data at t = 0, where the model is undefined, so it
conditions on t = 1 while still using the exact alpha_bar(0) = 1 in the
arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError
from .rng import Rng
from .schedule import NoiseSchedule, StepSequence, uniform_subsequence


@dataclass(frozen=True)
class LatentState:
    """A latent value together with the timestep it lives at."""

    x: Tensor
    t: int
    provenance: str  # ddpm-encode | ddim-encode | decode-step | initial

    def __post_init__(self):
        if self.t < 0:
            raise ConfigError(f"latent timestep {self.t} < 0")


def ddpm_encode(x0, t0: int, schedule: NoiseSchedule, rng: Rng) -> LatentState:
    """Sample the forward corruption of x0 at depth t0 in closed form.

    x = sqrt(alpha_bar(t0)) * x0 + sqrt(1 - alpha_bar(t0)) * eps. Costs no
    model evaluations; accepts a single image or a batch.
    """
    if not 1 <= t0 <= schedule.timesteps:
        raise ConfigError(f"t0={t0} outside [1, {schedule.timesteps}]")
    arr = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float64)
    ab = schedule.alpha_bar_at(t0)
    eps = rng.normal(arr.shape)
    x = np.sqrt(ab) * arr + np.sqrt(1.0 - ab) * eps
    return LatentState(Tensor._wrap(x), t0, "ddpm-encode")


def estimate_x0(x_t, t: int, model, schedule: NoiseSchedule,
                params: dict | None = None) -> Tensor:
    """Single-evaluation estimate of the clean image behind x_t.

    (x_t - sqrt(1 - alpha_bar(t)) * eps_hat) / sqrt(alpha_bar(t)),
    differentiable end to end when recorded.
    """
    if not 1 <= t <= schedule.timesteps:
        raise ConfigError(f"t={t} outside [1, {schedule.timesteps}]")
    x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    eps_hat = model.predict(x_t, t, params=params)
    ab = schedule.alpha_bar_at(t)
    return (x_t - eps_hat.scale(np.sqrt(1.0 - ab))).scale(1.0 / np.sqrt(ab))


def ddim_reverse_step(x_t, t: int, t_prev: int, model, schedule: NoiseSchedule,
                      params: dict | None = None) -> Tensor:
    """One deterministic solver hop from t down to t_prev (one evaluation).

    The single noise prediction serves both the clean-image estimate and
    the re-noising term. A hop to t_prev = 0 returns the estimate itself,
    since alpha_bar(0) = 1 makes the noise term vanish.
    """
    if not 0 <= t_prev < t:
        raise ConfigError(f"ordering: need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    if t > schedule.timesteps:
        raise ConfigError(f"t={t} outside [1, {schedule.timesteps}]")
    x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    eps_hat = model.predict(x_t, t, params=params)
    ab_t = schedule.alpha_bar_at(t)
    x0_est = (x_t - eps_hat.scale(np.sqrt(1.0 - ab_t))).scale(1.0 / np.sqrt(ab_t))
    if t_prev == 0:
        return x0_est
    ab_prev = schedule.alpha_bar_at(t_prev)
    return x0_est.scale(np.sqrt(ab_prev)) + eps_hat.scale(np.sqrt(1.0 - ab_prev))


def ddim_encode(x0, seq: StepSequence, model, schedule: NoiseSchedule) -> LatentState:
    """Deterministic inversion of x0 up to seq's final depth.

    Walks the subsequence left to right, one evaluation per hop
    (len(seq) total), conditioning each hop on its source timestep
    (clamped to 1 for the initial hop from clean data).
    """
    x = x0 if isinstance(x0, Tensor) else Tensor(x0)
    t_src = 0
    for t_next in seq.steps:
        eps_hat = model.predict(x, max(t_src, 1))
        ab_src = schedule.alpha_bar_at(t_src)
        ab_next = schedule.alpha_bar_at(t_next)
        x0_est = (x - eps_hat.scale(np.sqrt(1.0 - ab_src))).scale(1.0 / np.sqrt(ab_src))
        x = x0_est.scale(np.sqrt(ab_next)) + eps_hat.scale(np.sqrt(1.0 - ab_next))
        t_src = t_next
    return LatentState(x, seq.t0, "ddim-encode")


def ddim_decode(state: LatentState, seq: StepSequence, model,
                schedule: NoiseSchedule, params: dict | None = None) -> Tensor:
    """Deterministic generation from a latent back to t = 0.

    Walks the subsequence right to left, finishing with a hop to t = 0;
    len(seq) evaluations. Pass recorded ``params`` to differentiate
    through the whole unrolled chain.
    """
    if state.t != seq.t0:
        raise ConfigError(f"latent at t={state.t} but sequence ends at {seq.t0}")
    x = state.x
    steps = list(seq.steps)
    for i in range(len(steps) - 1, -1, -1):
        t = steps[i]
        t_prev = steps[i - 1] if i > 0 else 0
        x = ddim_reverse_step(x, t, t_prev, model, schedule, params=params)
    return x


def relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / ||b||."""
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(a @ b / denom)


@dataclass(frozen=True)
class SweepRow:
    t0: int
    encoder: str  # "ddpm" or "ddim"
    rel_l2: float
    correlation: float
    seeds: int


def reconstruction_sweep(
    x0_batch: np.ndarray,
    t0_list,
    model,
    schedule: NoiseSchedule,
    rng: Rng,
    tau_enc: int = 40,
    tau_dec: int = 6,
    n_seeds: int = 8,
) -> list:
    """Round-trip fidelity of both encoders across encode depths.

    For every t0: encode (deterministic inversion with tau_enc steps, or
    the stochastic closed form averaged over ``n_seeds`` draws), decode
    with tau_dec steps, and report the batch-mean relative L2 error and
    correlation against the originals. Step counts are clamped to t0.
    """
    batch = np.atleast_2d(np.asarray(x0_batch, dtype=np.float64))
    if batch.size == 0 or len(t0_list) == 0:
        raise ConfigError("reconstruction_sweep: empty batch or t0 list")
    rows = []
    for t0 in t0_list:
        seq_dec = uniform_subsequence(schedule, min(tau_dec, t0), t0)

        errs, cors = [], []
        for s in range(n_seeds):
            state = ddpm_encode(batch, t0, schedule, rng.spawn(t0 * 1009 + s))
            rec = ddim_decode(state, seq_dec, model, schedule).data
            errs.extend(relative_l2(rec[i], batch[i]) for i in range(len(batch)))
            cors.extend(pearson(rec[i], batch[i]) for i in range(len(batch)))
        rows.append(SweepRow(t0, "ddpm", float(np.mean(errs)), float(np.mean(cors)), n_seeds))

        seq_enc = uniform_subsequence(schedule, min(tau_enc, t0), t0)
        state = ddim_encode(batch, seq_enc, model, schedule)
        rec = ddim_decode(state, seq_dec, model, schedule).data
        errs = [relative_l2(rec[i], batch[i]) for i in range(len(batch))]
        cors = [pearson(rec[i], batch[i]) for i in range(len(batch))]
        rows.append(SweepRow(t0, "ddim", float(np.mean(errs)), float(np.mean(cors)), 1))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t0,encoder,rel_l2,correlation,seeds\n")
        for r in rows:
            fh.write(f"{r.t0},{r.encoder},{r.rel_l2:.6f},{r.correlation:.6f},{r.seeds}\n")
