"""Non-adaptive nearest-neighbor-forest prediction.

The predictor at a test point is a weighted average of the responses of the
k-potential nearest neighbors of that point.  Weights are *non-adaptive*:
they depend on point positions and exogenous scheme randomness only, never on
the responses.  When there are no voters the prediction degenerates to the
constant 0, flagged on the returned :class:`Prediction`.  That happens for an
empty sample and in one corner case: duplicated sample points can block each
other (each copy counts against the other), which can empty the voting set
even though the sample is not empty.

Scheme randomness is addressed by (scheme seed, sample seed, test point), so
predictions are reproducible, independent of evaluation order, and identical
for bitwise-equal test points within one call or across calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointConfig, as_point, kpnn_set_fast
from .process import MarkedSample, derive_key

__all__ = [
    "WeightScheme",
    "Prediction",
    "predict_uniform",
    "predict_weighted",
    "predict_multi",
    "WEIGHT_KINDS",
]

WEIGHT_KINDS = ("uniform", "dirichlet", "single-random-vote")


@dataclass(frozen=True)
class WeightScheme:
    """How voting weights are spread over the k-PNN set.

    ``uniform``: equal weights 1/L.  ``dirichlet``: a symmetric
    Dirichlet(alpha) draw over the voting set.  ``single-random-vote``: all
    mass on one uniformly chosen voter.
    """

    kind: str = "uniform"
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "dirichlet" and self.alpha <= 0:
            raise ValueError("dirichlet concentration must be positive")


@dataclass(frozen=True, eq=False)
class Prediction:
    """Predicted value plus the voting set that produced it.

    ``empty_sample`` marks the degenerate no-voter prediction (value 0):
    either the sample itself was empty or duplicate points blocked each
    other out of the voting set.
    """

    value: float
    voting: np.ndarray
    weights: np.ndarray
    voting_count: int
    empty_sample: bool = False

    @property
    def sum_weight_sq(self) -> float:
        """sum_i W_i^2 — the effective-voter denominator ingredient."""
        return float(np.dot(self.weights, self.weights)) if self.voting_count else 0.0


def _scheme_rng(scheme: WeightScheme, sample: MarkedSample, x0: np.ndarray) -> np.random.Generator:
    seed = sample.seed
    master = seed.master if seed is not None else 0
    stream = seed.stream if seed is not None else 0
    key = derive_key(scheme.seed, master, stream, x0)
    return np.random.Generator(np.random.Philox(key=key))


def _weights(scheme: WeightScheme, count: int, rng_factory) -> np.ndarray:
    if scheme.kind == "uniform":
        return np.full(count, 1.0 / count)
    rng = rng_factory()
    if scheme.kind == "dirichlet":
        return rng.dirichlet(np.full(count, scheme.alpha))
    w = np.zeros(count)
    w[int(rng.integers(count))] = 1.0
    return w


def predict_weighted(sample: MarkedSample, x0, k: int, scheme: WeightScheme) -> Prediction:
    """Weighted k-PNN forest prediction at a single test point."""
    p0 = as_point(x0)
    config = sample.config
    if config.n_points == 0:
        return Prediction(0.0, np.empty(0, np.int64), np.empty(0), 0, empty_sample=True)
    voting = kpnn_set_fast(config, p0, k)
    if voting.size == 0:  # mutually-blocking duplicate points
        return Prediction(0.0, voting, np.empty(0), 0, empty_sample=True)
    weights = _weights(scheme, voting.size, lambda: _scheme_rng(scheme, sample, p0))
    value = float(np.dot(weights, sample.responses[voting]))
    return Prediction(value, voting, weights, int(voting.size))


def predict_uniform(sample: MarkedSample, x0, k: int) -> Prediction:
    """Equal-weight prediction: the mean response over the k-PNN set."""
    return predict_weighted(sample, x0, k, WeightScheme("uniform"))


def predict_multi(sample: MarkedSample, x0s, k: int, scheme: WeightScheme) -> list[Prediction]:
    """Predictions at several test points from one shared sample.

    Equivalent to calling :func:`predict_weighted` per point; the shared
    voting-structure computation is the only difference.
    """
    pts = np.atleast_2d(np.asarray(x0s, dtype=np.float64))
    return [predict_weighted(sample, pts[i], k, scheme) for i in range(pts.shape[0])]
