"""Predictive sampling: ancestral draws and the Metropolis-within-Gibbs chain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .vae import (DecoderParams, EncoderParams, encode, gaussian_diag_logpdf, latent_log_density,
                  standard_normal_logpdf)


@dataclass
class ChainOutput:
    samples: np.ndarray
    latents: np.ndarray
    n_accepted: int
    n_proposed: int
    seed: Optional[int] = None
    n_chains: int = 1

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else 0.0


def ancestral_sample(dec: DecoderParams, rng, count: int, return_latents: bool = False):
    """z ~ N(0, I), then x ~ N(mu_theta(z), diag(sigma_theta^2)); one block draw each."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((count, dec.latent_dim))
    x = dec.mean(z) + np.exp(0.5 * dec.log_sigma_sq) * rng.standard_normal((count, dec.n_features))
    return (x, z) if return_latents else x


def mwg_log_ratio(enc: EncoderParams, dec: DecoderParams, x_prev, z_prev, z_prop, lat=None) -> float:
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if lat is None:
        lat = encode(enc, x_prev)
    log_joint_prop = gaussian_diag_logpdf(x_prev, dec.mean(z_prop), dec.log_sigma_sq) + standard_normal_logpdf(z_prop)
    log_joint_prev = gaussian_diag_logpdf(x_prev, dec.mean(z_prev), dec.log_sigma_sq) + standard_normal_logpdf(z_prev)
    return float(log_joint_prop - log_joint_prev - latent_log_density(lat, z_prop) + latent_log_density(lat, z_prev))


def mwg_ratio(enc: EncoderParams, dec: DecoderParams, x_prev, z_prev, z_prop) -> float:
    """Ratio of importance ratios for proposing ``z_prop`` from q(z|x_prev)."""
    return float(np.exp(mwg_log_ratio(enc, dec, x_prev, z_prev, z_prop)))


def mwg_run(enc: EncoderParams, dec: DecoderParams, x0, T: int = 10000, burn_in: int = 0, thin: int = 1,
            rng=None, z0=None) -> ChainOutput:
    """Metropolis-within-Gibbs chain over (z_t, x_t).

    ``x0`` of shape (n_f,) runs one chain; shape (C, n_f) advances C
    independent chains in lockstep. ``z0`` defaults to the encoder mean of
    ``x0``. Per step the draws are, in order: proposal noise (C, dim_z), C
    uniforms, decoder noise (C, n_f); for one chain this is the same stream as
    unbatched draws. Steps ``burn_in + 1, burn_in + 1 + thin, ...`` up to ``T``
    are kept; ``samples`` lists chain 0's kept states first, then chain 1's.
    """
    if T < 1 or not 0 <= burn_in < T or thin < 1:
        raise ValueError("need T > burn_in >= 0 and thin >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    x0 = np.asarray(x0, dtype=np.float64)
    x = np.atleast_2d(x0).copy()
    C = x.shape[0]
    z = encode(enc, x).mu if z0 is None else np.atleast_2d(np.asarray(z0, dtype=np.float64)).copy()
    if z.shape != (C, enc.latent_dim):
        raise ValueError(f"z0 has shape {z.shape}, expected {(C, enc.latent_dim)}")
    sigma = np.exp(0.5 * dec.log_sigma_sq)
    log_sig = dec.log_sigma_sq
    mean = dec.mean(z)
    dz, n_f = enc.latent_dim, dec.n_features

    n_keep = len(range(burn_in + 1, T + 1, thin))
    samples = np.empty((n_keep, C, n_f))
    latents = np.empty((n_keep, C, dz))
    log_prior = standard_normal_logpdf(z)
    accepted = 0
    k = 0
    for t in range(1, T + 1):
        lat = encode(enc, x)
        z_prop = lat.mu + np.exp(0.5 * lat.log_var) * rng.standard_normal((C, dz))
        mean_prop = dec.mean(z_prop)
        log_prior_prop = standard_normal_logpdf(z_prop)
        log_rho = (gaussian_diag_logpdf(x, mean_prop, log_sig) + log_prior_prop
                   - gaussian_diag_logpdf(x, mean, log_sig) - log_prior
                   - latent_log_density(lat, z_prop) + latent_log_density(lat, z))
        acc = rng.random(C) < np.exp(np.minimum(0.0, log_rho))
        z = np.where(acc[:, None], z_prop, z)
        mean = np.where(acc[:, None], mean_prop, mean)
        log_prior = np.where(acc, log_prior_prop, log_prior)
        accepted += int(acc.sum())
        x = mean + sigma * rng.standard_normal((C, n_f))
        if t > burn_in and (t - burn_in - 1) % thin == 0:
            samples[k] = x
            latents[k] = z
            k += 1
    return ChainOutput(samples.transpose(1, 0, 2).reshape(C * n_keep, n_f),
                       latents.transpose(1, 0, 2).reshape(C * n_keep, dz), accepted, T * C, seed, C)
