"""Automatic relevance determination prior with inner-loop EM updates.

Each decoder weight has its own Gaussian precision with a Gamma hyperprior.
The precisions are never sampled; the E-step replaces them by their
conditional expectation and the M-step contributes ``-<tau> * theta`` to the
gradient of the log-posterior.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_A0 = 1e-5
DEFAULT_B0 = 1e-5
INACTIVE_THRESHOLD = 1e-4


@dataclass
class ArdState:
    a0: float
    b0: float
    expected_tau: np.ndarray

    def __post_init__(self):
        if self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("a0 and b0 must be positive")
        self.expected_tau = np.asarray(self.expected_tau, dtype=np.float64)
        if np.any(self.expected_tau <= 0):
            raise ValueError("expected_tau must be positive")

    @classmethod
    def from_theta(cls, theta, a0=DEFAULT_A0, b0=DEFAULT_B0):
        return cls(a0, b0, ard_e_step(a0, b0, theta))

    def refresh(self, theta) -> "ArdState":
        return ArdState(self.a0, self.b0, ard_e_step(self.a0, self.b0, theta))


def ard_e_step(a0, b0, theta):
    if a0 <= 0 or b0 <= 0:
        raise ValueError("a0 and b0 must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    return (a0 + 0.5) / (b0 + 0.5 * theta * theta)


def ard_log_prior_grad(state: ArdState, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != state.expected_tau.shape:
        raise ValueError("theta and expected_tau are not aligned")
    return -state.expected_tau * theta


def ard_hessian_diag(state: ArdState):
    return -state.expected_tau


def sparsity_fraction(theta, threshold=INACTIVE_THRESHOLD) -> float:
    """Fraction of entries whose magnitude is below ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size == 0:
        return 0.0
    return float(np.mean(np.abs(theta) < threshold))
