"""Stochastic variational inference with ADAM and an optional ARD prior."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from .ard import DEFAULT_A0, DEFAULT_B0, INACTIVE_THRESHOLD, ArdState, ard_log_prior_grad, sparsity_fraction
from .vae import DecoderParams, EncoderParams, elbo_minibatch

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)


def adam_update(state: AdamState, params, grad):
    """One ADAM step that *increases* the objective whose gradient is ``grad``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params, grad and optimizer moments must be aligned")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params + state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params


@dataclass
class TrainConfig:
    batch_size: int = 64
    n_mc: int = 1
    max_epochs: int = 2000
    seed: int = 0
    ard: bool = True
    a0: float = DEFAULT_A0
    b0: float = DEFAULT_B0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    convergence_window: int = 20
    convergence_patience: int = 50
    convergence_tol: float = 1e-4
    min_epochs: int = 0
    train_noise: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.n_mc < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, n_mc and max_epochs must be >= 1")
        if not (1e-8 <= self.a0 <= 1e-4 and 1e-8 <= self.b0 <= 1e-4):
            logger.warning("ARD hyperparameters outside [1e-8, 1e-4]: a0=%g b0=%g", self.a0, self.b0)

    def effective_batch_size(self, n: int) -> int:
        return min(self.batch_size, n)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    encoder: EncoderParams
    decoder: DecoderParams
    ard_state: Optional[ArdState]
    adam_state: AdamState
    config: TrainConfig
    train_data: np.ndarray
    elbo: List[float] = field(default_factory=list)
    kl: List[float] = field(default_factory=list)
    recon: List[float] = field(default_factory=list)
    sparsity: List[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.elbo)

    @property
    def final_elbo(self) -> float:
        w = min(self.config.convergence_window, len(self.elbo))
        return float(np.mean(self.elbo[-w:]))

    @property
    def sparsity_fraction(self) -> float:
        return self.sparsity[-1] if self.sparsity else decoder_sparsity(self.decoder)

    def log_lines(self):
        yield "# epoch\telbo\tkl\trecon\tsparsity"
        for i, row in enumerate(zip(self.elbo, self.kl, self.recon, self.sparsity), start=1):
            yield f"{i}\t" + "\t".join(repr(float(v)) for v in row)


def decoder_sparsity(dec: DecoderParams, threshold=INACTIVE_THRESHOLD) -> float:
    return sparsity_fraction(dec.flat[dec.ard_mask()], threshold)


def window_average(trace, window: int) -> np.ndarray:
    """Trailing moving average; entry e averages trace[max(0, e-window+1):e+1]."""
    trace = np.asarray(trace, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(trace)])
    idx = np.arange(1, trace.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def has_converged(trace, window: int = 20, patience: int = 50, tol: float = 1e-4) -> bool:
    """Relative change of the window-averaged trace over ``patience`` epochs is below ``tol``."""
    if len(trace) < window + patience:
        return False
    avg = window_average(trace, window)
    old, new = avg[-1 - patience], avg[-1]
    return abs(new - old) <= tol * abs(old)


def epochs_to_reach(trace, target: float, rel_tol: float = 1e-3, window: int = 20) -> Optional[int]:
    """First epoch (1-based) whose window-averaged value is within ``rel_tol`` of ``target`` or above it."""
    avg = window_average(trace, window)
    hit = np.nonzero(avg >= target - rel_tol * abs(target))[0]
    return int(hit[0]) + 1 if hit.size else None


def _as_matrix(data) -> np.ndarray:
    X = getattr(data, "configs", data)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("training data must be an (N, n_f) matrix")
    return X


def train(dataset, enc: EncoderParams, dec: DecoderParams, config: TrainConfig = None, *,
          _resume: Optional[TrainReport] = None) -> TrainReport:
    """Maximize the lower bound (plus ARD log-prior on the decoder) with ADAM.

    RNG draw order, from one ``default_rng(config.seed)`` stream: per epoch a
    permutation of the data, then per minibatch one ``(M, L, dim_z)`` block of
    standard normals. Each step first refreshes the ARD expectations from the
    current decoder weights, then applies one ADAM ascent step to the
    concatenated (encoder, decoder) vector.
    """
    config = config or TrainConfig()
    X = _as_matrix(dataset)
    N = X.shape[0]
    if N == 0:
        raise ValueError("empty dataset")
    if X.shape[1] != enc.n_features or X.shape[1] != dec.n_features:
        raise ValueError(f"data has {X.shape[1]} coordinates, networks expect {enc.n_features}")
    if not np.all(np.isfinite(X)):
        raise ValueError("training data contains non-finite values")
    M = config.effective_batch_size(N)
    n_batches = N // M
    rng = np.random.default_rng(config.seed)

    n_enc = enc.size
    params = np.concatenate([enc.flat, dec.flat])
    if _resume is not None and _resume.adam_state.m.shape == params.shape:
        adam = replace(_resume.adam_state)
    else:
        adam = AdamState.zeros(params.size, alpha=config.learning_rate, beta1=config.beta1,
                               beta2=config.beta2, eps=config.adam_eps)
    ard_mask = dec.ard_mask()
    ard_state = ArdState.from_theta(dec.flat[ard_mask], config.a0, config.b0) if config.ard else None
    noise_slice = slice(n_enc + dec.mean_net.size, None)

    report = TrainReport(enc, dec, ard_state, adam, config, X)
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(N)
        totals = np.zeros(3)
        for b in range(n_batches):
            idx = perm[b * M:(b + 1) * M]
            value, grads = elbo_minibatch(enc, dec, X[idx], N, config.n_mc, rng=rng)
            if not np.isfinite(value.total):
                raise FloatingPointError(
                    f"non-finite ELBO at epoch {epoch}, minibatch {b}: total={value.total}, "
                    f"kl={value.kl_term}, recon={value.recon_term}")
            g_dec = grads.decoder
            if ard_state is not None:
                theta = dec.flat[ard_mask]
                ard_state = ard_state.refresh(theta)
                g_dec = g_dec.copy()
                g_dec[ard_mask] += ard_log_prior_grad(ard_state, theta)
            g = np.concatenate([grads.encoder, g_dec])
            if not config.train_noise:
                g[noise_slice] = 0.0
            adam, params = adam_update(adam, params, g)
            enc = enc.with_flat(params[:n_enc])
            dec = dec.with_flat(params[n_enc:])
            totals += (value.total, value.kl_term, value.recon_term)
        totals /= n_batches
        report.elbo.append(float(totals[0]))
        report.kl.append(float(totals[1]))
        report.recon.append(float(totals[2]))
        report.sparsity.append(decoder_sparsity(dec))
        if epoch >= config.min_epochs and has_converged(report.elbo, config.convergence_window,
                                                        config.convergence_patience, config.convergence_tol):
            report.converged = True
            break
    if ard_state is not None:
        ard_state = ard_state.refresh(dec.flat[ard_mask])
    report.encoder, report.decoder, report.ard_state, report.adam_state = enc, dec, ard_state, adam
    report.wall_time = time.perf_counter() - t0
    logger.info("trained %d epochs (converged=%s), final ELBO %.6g", report.epochs, report.converged,
                report.final_elbo)
    return report


def warm_start_retrain(report: TrainReport, new_data, config: TrainConfig = None) -> TrainReport:
    """Continue training from a previous MAP on the previous data augmented by ``new_data``.

    The optimizer moments are carried over so the first steps keep the
    previous step-size calibration.
    """
    config = config or report.config
    new = np.asarray(getattr(new_data, "configs", new_data), dtype=np.float64)
    old = report.train_data
    if new.size == 0:
        new = new.reshape(0, old.shape[1])
    if new.ndim != 2 or new.shape[1] != old.shape[1]:
        raise ValueError(f"new data has shape {new.shape}, previous model expects {old.shape[1]} coordinates")
    X = np.concatenate([old, new], axis=0)
    return train(X, report.encoder, report.decoder, config, _resume=report)
