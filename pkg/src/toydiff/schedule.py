"""Noise schedules and the timestep subsequences shared by all samplers.

Timesteps are 1-based: ``beta[t-1]`` holds the variance increment of step
``t``, ``alpha = 1 - beta`` and ``alpha_bar`` its running product. By
convention ``alpha_bar`` at t = 0 is exactly 1, so a terminal solver hop
to t = 0 returns the clean-image estimate unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha at timestep t, with alpha_bar(0) := 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.timesteps:
            raise ConfigError(f"timestep {t} outside [0, {self.timesteps}]")
        return float(self.alpha_bar[t - 1])


def make_linear_schedule(
    timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linearly spaced beta, inclusive of both endpoints."""
    if timesteps < 2:
        raise ConfigError(f"timesteps must be >= 2, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    beta = np.linspace(beta_start, beta_end, timesteps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for a in (beta, alpha, alpha_bar):
        a.setflags(write=False)
    return NoiseSchedule(timesteps, beta_start, beta_end, beta, alpha, alpha_bar)


@dataclass(frozen=True)
class StepSequence:
    """Strictly increasing timesteps ending at the encode depth t0."""

    steps: tuple

    @property
    def t0(self) -> int:
        return self.steps[-1]

    def __len__(self) -> int:
        return len(self.steps)


def uniform_subsequence(schedule: NoiseSchedule, k: int, t0: int) -> StepSequence:
    """k evenly spaced steps ``round(i * t0 / k)`` for i = 1..k.

    Rounding is half-up. The last step is exactly t0.
    """
    if not 1 <= t0 <= schedule.timesteps:
        raise ConfigError(f"t0={t0} outside [1, {schedule.timesteps}]")
    if not 1 <= k <= t0:
        raise ConfigError(f"need 1 <= k <= t0, got k={k}, t0={t0}")
    steps = [int(np.floor(i * t0 / k + 0.5)) for i in range(1, k + 1)]
    for a, b in zip(steps, steps[1:]):
        if a >= b:
            raise ConfigError(f"duplicate steps after rounding: {a} and {b}")
    return StepSequence(tuple(steps))
