"""Benchmark harness: exact evaluation counts, activation footprints,
and wall-clock bands for the inference and training pipelines.

Counts and footprints are deterministic and asserted exactly; wall-clock
numbers are reported as mean/std/median over repeated runs with a warm-up
run excluded, because absolute seconds depend on the host. Benchmarks run
single-threaded for timing stability.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .finetune import (EditConfig, edit_image, finetune_multistep_baseline,
                       finetune_single_step)
from .instrument import InstrumentedModel
from .rng import Rng
from .sampler import ddim_decode, ddim_encode
from .schedule import uniform_subsequence

__all__ = [
    "BenchReport",
    "InstrumentedModel",
    "bench_inference",
    "bench_training",
    "write_report",
    "write_report_json",
]


@dataclass
class BenchReport:
    scenario: str
    variant: str
    tau_enc: int
    tau_dec: int
    nfe: int  # per image (inference) or per image-iteration (training)
    peak_elems: int
    ms_samples: list = field(default_factory=list)
    runs: int = 0

    @property
    def ms_mean(self) -> float:
        return statistics.fmean(self.ms_samples) if self.ms_samples else 0.0

    @property
    def ms_std(self):
        if len(self.ms_samples) >= 2:
            return statistics.stdev(self.ms_samples)
        return None  # stddev is only defined from two runs up

    @property
    def ms_median(self) -> float:
        return statistics.median(self.ms_samples) if self.ms_samples else 0.0


def _time_runs(fn, runs: int) -> list:
    fn()  # warm-up, excluded
    samples = []
    for _ in range(runs):
        tic = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - tic) * 1000.0)
    return samples


def bench_inference(model, images, cfg_ours: EditConfig, cfg_baseline: EditConfig,
                    runs: int = 5, rng: Rng | None = None) -> tuple:
    """Per-image edit cost: free-encode pipeline vs full inversion pipeline.

    Returns ``(ours, baseline)`` reports. NFE is counted per image; the
    timed unit is one pass over the whole image batch.
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n = len(images)
    rng = rng if rng is not None else Rng(0)
    sched = model.schedule

    counted = InstrumentedModel(model)
    for i in range(n):
        edit_image(counted, images[i], cfg_ours, sched, rng.spawn(i))
    nfe_ours = counted.forward_evals // n

    seq_enc = uniform_subsequence(sched, cfg_baseline.tau_enc, cfg_baseline.t0)
    seq_dec = uniform_subsequence(sched, cfg_baseline.tau_dec, cfg_baseline.t0)
    counted = InstrumentedModel(model)
    for i in range(n):
        state = ddim_encode(images[i], seq_enc, counted, sched)
        ddim_decode(state, seq_dec, counted, sched)
    nfe_baseline = counted.forward_evals // n

    def run_ours():
        for i in range(n):
            edit_image(model, images[i], cfg_ours, sched, rng.spawn(i))

    def run_baseline():
        for i in range(n):
            state = ddim_encode(images[i], seq_enc, model, sched)
            ddim_decode(state, seq_dec, model, sched)

    ours = BenchReport("inference", "ours", 0, cfg_ours.tau_dec, nfe_ours, 0,
                       _time_runs(run_ours, runs), runs)
    baseline = BenchReport("inference", "baseline", cfg_baseline.tau_enc,
                           cfg_baseline.tau_dec, nfe_baseline, 0,
                           _time_runs(run_baseline, runs), runs)
    return ours, baseline


def bench_training(model, images, embedder, cfg_single: EditConfig,
                   cfgs_baseline, runs: int = 3, rng: Rng | None = None) -> list:
    """Per-iteration training cost of the single-step variant against the
    unrolled baseline at each requested tau_dec.

    NFE is loss-bearing evaluations per image per iteration; the timed
    sample is the mean per-iteration wall clock of one fine-tune run.
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    rng = rng if rng is not None else Rng(0)
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n = len(images)
    reports = []

    def one(cfg, fn, key):
        samples = []
        report = None
        for r in range(runs + 1):  # first run doubles as warm-up
            _, rep = fn(model, images, cfg, embedder, rng.spawn(key))
            if r > 0:
                samples.append(statistics.fmean(row.ms for row in rep.rows))
            report = rep
        nfe_iter = report.recorded_evals // (cfg.n_iter * n)
        return BenchReport("training", cfg.variant, cfg.tau_enc, cfg.tau_dec,
                           nfe_iter, report.peak_retained, samples, runs)

    reports.append(one(cfg_single, finetune_single_step, 0))
    for j, cfg in enumerate(cfgs_baseline):
        reports.append(one(cfg, finetune_multistep_baseline, j + 1))
    return reports


def write_report(reports, path) -> None:
    """Stable CSV: scenario,variant,tau_enc,tau_dec,nfe,peak_elems,ms_mean,ms_std,runs."""
    reports = list(reports)
    if not reports:
        raise ConfigError("write_report: empty report list")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scenario,variant,tau_enc,tau_dec,nfe,peak_elems,ms_mean,ms_std,runs\n")
        for r in reports:
            std = "" if r.ms_std is None else f"{r.ms_std:.3f}"
            fh.write(
                f"{r.scenario},{r.variant},{r.tau_enc},{r.tau_dec},{r.nfe},"
                f"{r.peak_elems},{r.ms_mean:.3f},{std},{r.runs}\n"
            )


def write_report_json(reports, path, config: dict | None = None) -> None:
    """JSON mirror with the full timing samples and the run config."""
    payload = {
        "config": config or {},
        "reports": [
            {
                "scenario": r.scenario,
                "variant": r.variant,
                "tau_enc": r.tau_enc,
                "tau_dec": r.tau_dec,
                "nfe": r.nfe,
                "peak_elems": r.peak_elems,
                "ms_mean": r.ms_mean,
                "ms_std": r.ms_std,
                "ms_median": r.ms_median,
                "ms_samples": r.ms_samples,
                "runs": r.runs,
            }
            for r in reports
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
