"""Monte Carlo estimates that merge across independent shards."""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Estimate:
    """Sample mean of ``n_samples`` observations, kept as raw sums so shards merge exactly.

    ``stderr`` uses the plug-in variance, which for 0/1 observations is the
    binomial standard error ``sqrt(phat (1 - phat) / n)``.  Quantities derived
    from other estimates (see :meth:`derived`) carry a propagated error in
    ``sem`` instead and cannot be merged.
    """

    total: float
    total_sq: float
    n_samples: int
    seed: int = 0
    sem: float | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("an Estimate needs at least one sample")

    @classmethod
    def from_hits(cls, hits, n_samples, seed=0):
        return cls(float(hits), float(hits), int(n_samples), int(seed))

    @classmethod
    def exact(cls, value, n_samples=1, seed=0):
        """A noiseless value, e.g. an exact probability used as synthetic input."""
        v = float(value)
        return cls(v * n_samples, v * v * n_samples, int(n_samples), int(seed))

    @classmethod
    def derived(cls, value, stderr, n_samples=1, seed=0):
        """A value with an externally propagated standard error."""
        v = float(value)
        if not stderr >= 0:
            raise ValueError("stderr must be >= 0")
        return cls(v * n_samples, v * v * n_samples, int(n_samples), int(seed), float(stderr))

    @property
    def value(self):
        return self.total / self.n_samples

    @property
    def stderr(self):
        if self.sem is not None:
            return self.sem
        m = self.value
        var = self.total_sq / self.n_samples - m * m
        # rounding can push a zero variance slightly negative
        return math.sqrt(max(var, 0.0) / self.n_samples)

    def merge(self, other):
        if self.sem is not None or other.sem is not None:
            raise TypeError("derived estimates do not pool")
        return Estimate(self.total + other.total, self.total_sq + other.total_sq,
                        self.n_samples + other.n_samples, min(self.seed, other.seed))

    __add__ = merge

    def __repr__(self):
        return f"Estimate({self.value:.6g} ± {self.stderr:.2g}, n={self.n_samples})"
