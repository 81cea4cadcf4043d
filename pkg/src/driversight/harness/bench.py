"""Throughput, parameter-count, and multiply-add reporting.

The full-scale (preset "paper") model is compared against a 54.92M reference
parameter total;
if the instantiated count falls outside +-20% the report lists the components
whose sizes the architecture description leaves open (so the gap is
explainable rather than silent).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..pipeline import BehaviorPredictor
from ..tensor import Tensor, mac_counter

PAPER_REFERENCE_PARAMS = 54_920_000
UNDERSPECIFIED_COMPONENTS = [
    "decoder channel schedule (taper committed in SaliencyDecoder)",
    "classifier MLP head width (256 hidden units committed)",
    "recurrent input width (attention-stage channels feed the Conv-GRU)",
    "encoder trunk stage repeats (MobileNet-style defaults committed)",
    "cross-attention token projections (64-dim committed)",
]


@dataclass
class BenchReport:
    images_per_s_mean: float
    images_per_s_std: float
    sequences_per_s_mean: float
    parameter_count: int
    mac_estimate: int
    batch: int
    n_iter: int
    t_len: int
    error: str | None = None

    def paper_gap_fraction(self) -> float:
        return abs(self.parameter_count - PAPER_REFERENCE_PARAMS) / PAPER_REFERENCE_PARAMS

    def as_lines(self) -> list[str]:
        lines = [
            f"batch={self.batch}",
            f"iterations={self.n_iter}",
            f"t_len={self.t_len}",
            f"images_per_s_mean={self.images_per_s_mean:.3f}",
            f"images_per_s_std={self.images_per_s_std:.3f}",
            f"sequences_per_s_mean={self.sequences_per_s_mean:.3f}",
            f"parameter_count={self.parameter_count}",
            f"mac_estimate_per_sequence={self.mac_estimate}",
            f"paper_reference_params={PAPER_REFERENCE_PARAMS}",
            f"paper_gap_fraction={self.paper_gap_fraction():.4f}",
        ]
        if self.error:
            lines.append(f"error={self.error}")
        if self.paper_gap_fraction() > 0.20:
            lines.append("parameter count outside 20% of the reference; under-specified components:")
            lines += [f"  - {c}" for c in UNDERSPECIFIED_COMPONENTS]
        return lines


def bench_throughput(model: BehaviorPredictor, batch: int, n_iter: int, warmup: int = 2, seed: int = 0) -> BenchReport:
    """Warm up, then time forward passes over random batches."""
    spec = model.spec
    rng = np.random.default_rng(seed)
    t_len = spec.t_len
    was_training = model.training
    model.eval()
    try:
        frames = Tensor(rng.random((batch, t_len, 3, spec.image_size, spec.image_size), dtype=np.float32))

        mac_counter.reset()
        mac_counter.active = True
        with T.no_grad():
            model(Tensor(frames.data[:1]))
        mac_counter.active = False
        macs_per_seq = mac_counter.total

        with T.no_grad():
            for _ in range(warmup):
                model(frames)
        rates = []
        for _ in range(n_iter):
            t0 = time.perf_counter()
            with T.no_grad():
                model(frames)
            dt = time.perf_counter() - t0
            rates.append(batch * t_len / dt)
        rates = np.asarray(rates)
        return BenchReport(
            images_per_s_mean=float(rates.mean()),
            images_per_s_std=float(rates.std()),
            sequences_per_s_mean=float(rates.mean() / t_len),
            parameter_count=model.parameter_count(),
            mac_estimate=macs_per_seq,
            batch=batch,
            n_iter=n_iter,
            t_len=t_len,
        )
    except MemoryError:
        return BenchReport(
            images_per_s_mean=0.0,
            images_per_s_std=0.0,
            sequences_per_s_mean=0.0,
            parameter_count=model.parameter_count(),
            mac_estimate=0,
            batch=batch,
            n_iter=n_iter,
            t_len=t_len,
            error=f"batch {batch} too large for available memory",
        )
    finally:
        model.train(was_training)
