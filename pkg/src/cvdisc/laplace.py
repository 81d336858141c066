"""Diagonal Laplace approximation to the decoder-parameter posterior."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ard import ArdState
from .vae import DecoderParams, EncoderParams, decoder_gradient_fixed_latents, encode

PRECISION_FLOOR = 1e-8


@dataclass
class LaplacePosterior:
    mu: np.ndarray
    sigma_sq: np.ndarray
    n_floored: int = 0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma_sq = np.asarray(self.sigma_sq, dtype=np.float64)
        if self.mu.shape != self.sigma_sq.shape:
            raise ValueError("mu and sigma_sq must be aligned")
        if np.any(self.sigma_sq < 0) or not np.all(np.isfinite(self.sigma_sq)):
            raise ValueError("posterior variances must be finite and nonnegative")

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.sigma_sq


def laplace_sample(post: LaplacePosterior, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return post.mu + np.sqrt(post.sigma_sq) * rng.standard_normal(post.mu.shape)


def fd_diagonal_curvature(grad_fn: Callable[[np.ndarray], np.ndarray], theta, fd_step: float = 1e-3):
    """Diagonal of the Hessian by central differences of an analytic gradient.

    The step for entry k is ``fd_step * max(1, |theta_k|)``; the result is
    exact for quadratic objectives up to rounding.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    curv = np.empty_like(theta)
    work = theta.copy()
    for k in range(theta.size):
        h = fd_step * max(1.0, abs(theta[k]))
        work[k] = theta[k] + h
        gp = grad_fn(work)[k]
        work[k] = theta[k] - h
        gm = grad_fn(work)[k]
        work[k] = theta[k]
        curv[k] = (gp - gm) / (2.0 * h)
        if not np.isfinite(curv[k]):
            raise FloatingPointError(f"non-finite curvature at parameter index {k}")
    return curv


def laplace_from_gradient(grad_fn, theta_map, prior_precision, fd_step: float = 1e-3,
                          fallback_precision: float = 1.0) -> LaplacePosterior:
    """Posterior precision = -(data curvature) + prior precision, floored.

    Entries whose precision falls below ``PRECISION_FLOOR`` take the prior
    precision instead, or ``fallback_precision`` where there is no prior.
    """
    theta_map = np.asarray(theta_map, dtype=np.float64)
    prior_precision = np.broadcast_to(np.asarray(prior_precision, dtype=np.float64), theta_map.shape)
    precision = -fd_diagonal_curvature(grad_fn, theta_map, fd_step) + prior_precision
    bad = precision < PRECISION_FLOOR
    replacement = np.where(prior_precision > PRECISION_FLOOR, prior_precision, fallback_precision)
    precision = np.where(bad, replacement, precision)
    return LaplacePosterior(theta_map.copy(), 1.0 / precision, int(bad.sum()))


def laplace_fit(dec_map: DecoderParams, enc_map: EncoderParams, dataset, ard: Optional[ArdState] = None,
                fd_step: float = 1e-3, n_mc: int = 1, seed=0) -> LaplacePosterior:
    """Laplace posterior over the flattened decoder parameters at the MAP.

    Curvature comes from the full-batch lower bound with latent noise drawn
    once from ``default_rng(seed)`` as an ``(N, n_mc, dim_z)`` block and held
    fixed. ARD precisions apply to mean-network entries; log-variances carry
    no prior.
    """
    X = np.asarray(getattr(dataset, "configs", dataset), dtype=np.float64)
    lat = encode(enc_map, X)
    eps = np.random.default_rng(seed).standard_normal((X.shape[0], n_mc, enc_map.latent_dim))
    Z = lat.mu[:, None, :] + np.exp(0.5 * lat.log_var)[:, None, :] * eps

    def grad_fn(theta):
        return decoder_gradient_fixed_latents(dec_map.with_flat(theta), X, Z)

    prior = np.zeros(dec_map.size)
    if ard is not None:
        mask = dec_map.ard_mask()
        if ard.expected_tau.shape != (mask.sum(),):
            raise ValueError("ARD state does not match the decoder")
        prior[mask] = ard.expected_tau
    return laplace_from_gradient(grad_fn, dec_map.flat, prior, fd_step)
