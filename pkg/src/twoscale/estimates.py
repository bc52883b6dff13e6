"""Monte Carlo value estimates."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ValueEstimate:
    """Sample mean with its standard error.

    ``stderr`` is the sample standard deviation over ``sqrt(n)``; a zero
    standard error with ``n = 0`` marks a deterministic computation.
    """

    mean: float
    stderr: float
    n: int
    fingerprint: str = ""
    details: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_samples(cls, samples, fingerprint="", **details):
        samples = np.asarray(samples, dtype=float).reshape(-1)
        n = samples.size
        se = samples.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
        return cls(float(samples.mean()), float(se), int(n), fingerprint, details)

    def combined_stderr(self, other):
        return float(np.hypot(self.stderr, other.stderr))


def combined_stderr(*estimates):
    return float(np.sqrt(sum(e.stderr**2 for e in estimates)))
