"""Evaluation-counting wrapper around a denoiser model.

NFE (number of function evaluations) is the hardware-independent cost
unit all benchmark claims reduce to. The wrapper counts every row that
passes through ``predict``; an evaluation is "loss-bearing" when it is
recorded on a tape (its input or its parameters are attached), i.e. it
will be part of a backward pass.
"""

from __future__ import annotations

from .autodiff import Tensor


def _rows(x) -> int:
    if isinstance(x, Tensor):
        return 1 if x.ndim == 1 else x.shape[0]
    import numpy as np

    arr = np.asarray(x)
    return 1 if arr.ndim == 1 else arr.shape[0]


class InstrumentedModel:
    """Counts forward and loss-bearing (recorded) evaluations.

    Counters only grow; ``reset()`` is explicit. Everything else is
    delegated to the wrapped model.
    """

    def __init__(self, model):
        self.model = model
        self.forward_evals = 0
        self.recorded_evals = 0

    def predict(self, x, t, params=None):
        n = _rows(x)
        self.forward_evals += n
        recorded = isinstance(x, Tensor) and x._tape is not None
        if not recorded and params:
            recorded = any(
                isinstance(p, Tensor) and p._tape is not None for p in params.values()
            )
        if recorded:
            self.recorded_evals += n
        return self.model.predict(x, t, params=params)

    def reset(self) -> None:
        self.forward_evals = 0
        self.recorded_evals = 0

    def __getattr__(self, name):
        return getattr(self.model, name)
