"""Encoder/decoder pair and the reparametrized lower-bound estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Activation, MlpParams, build_specs, mlp_backward, mlp_forward

LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_HIDDEN = (50, 100, 100)
DEFAULT_ENCODER_ACTIVATIONS = (Activation.SELU, Activation.SELU, Activation.LOGSIGMOID)
DEFAULT_DECODER_ACTIVATIONS = (Activation.TANH, Activation.TANH, Activation.TANH)


@dataclass
class EncoderParams:
    """Shared trunk followed by a mean head and a log-variance head."""

    trunk: MlpParams
    head_mu: MlpParams
    head_logvar: MlpParams

    def __post_init__(self):
        if self.head_mu.in_dim != self.trunk.out_dim or self.head_logvar.in_dim != self.trunk.out_dim:
            raise ValueError("encoder heads must consume the trunk output")
        if self.head_mu.out_dim != self.head_logvar.out_dim:
            raise ValueError("encoder heads must agree on the latent dimension")

    @property
    def n_features(self) -> int:
        return self.trunk.in_dim

    @property
    def latent_dim(self) -> int:
        return self.head_mu.out_dim

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.trunk.flat, self.head_mu.flat, self.head_logvar.flat])

    @property
    def size(self) -> int:
        return self.trunk.size + self.head_mu.size + self.head_logvar.size

    def with_flat(self, flat) -> "EncoderParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"expected {self.size} encoder parameters, got {flat.shape}")
        a = self.trunk.size
        b = a + self.head_mu.size
        return EncoderParams(self.trunk.with_flat(flat[:a]), self.head_mu.with_flat(flat[a:b]),
                             self.head_logvar.with_flat(flat[b:]))


@dataclass
class DecoderParams:
    """Mean network plus a z-independent log-variance per output coordinate."""

    mean_net: MlpParams
    log_sigma_sq: np.ndarray

    def __post_init__(self):
        self.log_sigma_sq = np.asarray(self.log_sigma_sq, dtype=np.float64)
        if self.log_sigma_sq.shape != (self.mean_net.out_dim,):
            raise ValueError("log_sigma_sq must have one entry per output coordinate")
        if not np.all(np.isfinite(self.log_sigma_sq)):
            raise ValueError("log_sigma_sq must be finite")

    @property
    def n_features(self) -> int:
        return self.mean_net.out_dim

    @property
    def latent_dim(self) -> int:
        return self.mean_net.in_dim

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.mean_net.flat, self.log_sigma_sq])

    @property
    def size(self) -> int:
        return self.mean_net.size + self.log_sigma_sq.size

    def ard_mask(self) -> np.ndarray:
        """True for entries of ``flat`` that carry the ARD prior (all but log-variances)."""
        mask = np.ones(self.size, dtype=bool)
        mask[self.mean_net.size:] = False
        return mask

    def with_flat(self, flat) -> "DecoderParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"expected {self.size} decoder parameters, got {flat.shape}")
        k = self.mean_net.size
        return DecoderParams(self.mean_net.with_flat(flat[:k]), flat[k:])

    def mean(self, z) -> np.ndarray:
        return mlp_forward(self.mean_net, z)[0]


@dataclass
class GaussianLatent:
    mu: np.ndarray
    log_var: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)


@dataclass
class ElboValue:
    total: float
    kl_term: float
    recon_term: float
    n_mc: int


@dataclass
class ElboGradients:
    encoder: np.ndarray
    decoder: np.ndarray


def init_encoder(n_features: int, latent_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN,
                 activations: Sequence = DEFAULT_ENCODER_ACTIVATIONS, rng=None) -> EncoderParams:
    rng = np.random.default_rng(rng)
    trunk_specs = build_specs([n_features, *hidden], activations)
    head_specs = build_specs([hidden[-1], latent_dim], [Activation.IDENTITY])
    return EncoderParams(MlpParams.glorot(trunk_specs, rng), MlpParams.glorot(head_specs, rng),
                         MlpParams.glorot(head_specs, rng))


def init_decoder(n_features: int, latent_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN,
                 activations: Sequence = DEFAULT_DECODER_ACTIVATIONS, rng=None,
                 log_sigma_sq: float = 0.0) -> DecoderParams:
    """Decoder mirrors the encoder: hidden widths are traversed in reverse."""
    rng = np.random.default_rng(rng)
    dims = [latent_dim, *reversed(list(hidden)), n_features]
    specs = build_specs(dims, [*activations, Activation.IDENTITY])
    return DecoderParams(MlpParams.glorot(specs, rng), np.full(n_features, float(log_sigma_sq)))


def _encode_with_tape(enc: EncoderParams, x):
    h, trunk_tape = mlp_forward(enc.trunk, x)
    mu, mu_tape = mlp_forward(enc.head_mu, h)
    lv, lv_tape = mlp_forward(enc.head_logvar, h)
    return GaussianLatent(mu, lv), (trunk_tape, mu_tape, lv_tape)


def encode(enc: EncoderParams, x) -> GaussianLatent:
    """q(z|x) for a single configuration or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != enc.n_features:
        raise ValueError(f"configuration has {x.shape[-1]} coordinates, encoder expects {enc.n_features}")
    return _encode_with_tape(enc, x)[0]


def reparameterize(lat: GaussianLatent, eps) -> np.ndarray:
    return lat.mu + np.exp(0.5 * lat.log_var) * eps


def gaussian_diag_logpdf(x, mean, log_var) -> np.ndarray:
    """Sum over the last axis of independent normal log-densities."""
    r = x - mean
    return -0.5 * np.sum(LOG_2PI + log_var + r * r * np.exp(-log_var), axis=-1)


def decode_log_density(dec: DecoderParams, x, z):
    return gaussian_diag_logpdf(np.asarray(x, float), dec.mean(z), dec.log_sigma_sq)


def latent_log_density(lat: GaussianLatent, z):
    return gaussian_diag_logpdf(np.asarray(z, float), lat.mu, lat.log_var)


def standard_normal_logpdf(z):
    z = np.asarray(z, float)
    return -0.5 * np.sum(LOG_2PI + z * z, axis=-1)


def kl_diag_gaussian_to_standard(lat: GaussianLatent):
    """KL(N(mu, diag(exp(log_var))) || N(0, I)), summed over the last axis."""
    mu, lv = np.asarray(lat.mu, float), np.asarray(lat.log_var, float)
    return 0.5 * np.sum(mu * mu + (np.expm1(lv) - lv), axis=-1)


def grad_log_sigma_theta(dec: DecoderParams, x, z) -> np.ndarray:
    """Derivative of log p(x|z) with respect to each log sigma_j^2."""
    r = np.asarray(x, float) - dec.mean(z)
    return -0.5 + 0.5 * r * r * np.exp(-dec.log_sigma_sq)


def elbo_minibatch(enc: EncoderParams, dec: DecoderParams, batch, n_total: int, n_mc: int = 1,
                   rng=None, eps=None, need_grad: bool = True):
    """Minibatch lower-bound estimate and its gradients.

    The estimate is ``N/M * sum_i (-KL_i + mean_l log p(x_i | z_il))`` with
    ``z_il = mu_i + sigma_i * eps_il``. Noise is drawn as one
    ``rng.standard_normal((M, L, dim_z))`` call unless ``eps`` is supplied
    with that shape.

    Returns ``(ElboValue, ElboGradients or None)``; gradients are of the
    estimate itself (ascent direction).
    """
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    M = X.shape[0]
    if M == 0:
        raise ValueError("empty minibatch")
    if X.shape[1] != enc.n_features or dec.n_features != enc.n_features:
        raise ValueError("minibatch, encoder and decoder dimensions disagree")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    dz = enc.latent_dim
    if eps is None:
        eps = np.random.default_rng(rng).standard_normal((M, n_mc, dz))
    eps = np.asarray(eps, dtype=np.float64).reshape(M, n_mc, dz)
    scale = n_total / M

    lat, (trunk_tape, mu_tape, lv_tape) = _encode_with_tape(enc, X)
    std = np.exp(0.5 * lat.log_var)
    Z = (lat.mu[:, None, :] + std[:, None, :] * eps).reshape(M * n_mc, dz)
    mean, dec_tape = mlp_forward(dec.mean_net, Z)
    Xrep = np.repeat(X, n_mc, axis=0)
    resid = Xrep - mean
    inv_var = np.exp(-dec.log_sigma_sq)
    logp = -0.5 * np.sum(LOG_2PI + dec.log_sigma_sq + resid * resid * inv_var, axis=1)
    kl = kl_diag_gaussian_to_standard(lat)

    recon = scale * logp.sum() / n_mc
    kl_sum = scale * kl.sum()
    value = ElboValue(total=float(recon - kl_sum), kl_term=float(kl_sum), recon_term=float(recon), n_mc=n_mc)
    if not need_grad:
        return value, None

    w = scale / n_mc
    g_mean = w * resid * inv_var
    g_dec_net, g_Z = mlp_backward(dec.mean_net, dec_tape, g_mean)
    g_logsig = w * np.sum(-0.5 + 0.5 * resid * resid * inv_var, axis=0)

    g_Z = g_Z.reshape(M, n_mc, dz)
    g_mu = g_Z.sum(axis=1) - scale * lat.mu
    g_lv = 0.5 * std * np.sum(g_Z * eps, axis=1) - scale * 0.5 * (np.exp(lat.log_var) - 1.0)

    g_head_mu, g_h1 = mlp_backward(enc.head_mu, mu_tape, g_mu)
    g_head_lv, g_h2 = mlp_backward(enc.head_logvar, lv_tape, g_lv)
    g_trunk, _ = mlp_backward(enc.trunk, trunk_tape, g_h1 + g_h2)

    grads = ElboGradients(
        encoder=np.concatenate([g_trunk.flat, g_head_mu.flat, g_head_lv.flat]),
        decoder=np.concatenate([g_dec_net.flat, g_logsig]),
    )
    return value, grads


def decoder_gradient_fixed_latents(dec: DecoderParams, X, Z, scale: float = 1.0):
    """Gradient of ``scale * mean_l sum_i log p(x_i|z_il)`` w.r.t. decoder parameters.

    ``Z`` has shape (N, L, dim_z). With the encoder and noise frozen the KL
    term does not depend on the decoder, so this is the decoder part of the
    lower-bound gradient.
    """
    X = np.asarray(X, float)
    N, L, dz = Z.shape
    mean, tape = mlp_forward(dec.mean_net, Z.reshape(N * L, dz))
    resid = np.repeat(X, L, axis=0) - mean
    inv_var = np.exp(-dec.log_sigma_sq)
    w = scale / L
    g_net, _ = mlp_backward(dec.mean_net, tape, w * resid * inv_var)
    g_logsig = w * np.sum(-0.5 + 0.5 * resid * resid * inv_var, axis=0)
    return np.concatenate([g_net.flat, g_logsig])
