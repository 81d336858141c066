"""Scikit-learn style front end for collective-variable discovery."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .laplace import LaplacePosterior, laplace_fit
from .observables import CredibleBand, credible_band
from .sampler import ChainOutput, ancestral_sample, mwg_run
from .training import TrainConfig, TrainReport, decoder_sparsity, train, warm_start_retrain
from .vae import (DEFAULT_DECODER_ACTIVATIONS, DEFAULT_ENCODER_ACTIVATIONS, DEFAULT_HIDDEN, GaussianLatent,
                  elbo_minibatch, encode, init_decoder, init_encoder)


class CVDiscovery(TransformerMixin, BaseEstimator):
    """Deep latent-variable model whose encoder means are the collective variables.

    Parameters
    ----------
    n_components : int, default=2
        Number of collective variables (latent dimension).
    hidden : tuple of int, default=(50, 100, 100)
        Encoder hidden widths; the decoder uses them in reverse order.
    encoder_activations, decoder_activations : tuple of str
        One activation per hidden layer (``identity``, ``tanh``, ``selu``,
        ``logsigmoid``).
    ard : bool, default=True
        Put the automatic relevance determination prior on decoder weights.
    a0, b0 : float, default=1e-5
        Gamma hyperparameters of the ARD precisions.
    batch_size : int, default=64
        Minibatch size; datasets smaller than this train full-batch.
    n_mc : int, default=1
        Latent samples per datum in the lower-bound estimator.
    max_epochs : int, default=2000
    learning_rate, beta1, beta2, adam_eps : float
        ADAM settings.
    convergence_window, convergence_patience : int
    convergence_tol : float
        Training stops once the ``convergence_window``-averaged lower bound
        changes by less than ``convergence_tol`` (relative) over
        ``convergence_patience`` epochs.
    min_epochs : int, default=0
    init_log_sigma_sq : float, default=0.0
        Initial decoder log-variance for every coordinate.
    warm_start : bool, default=False
        When True, ``fit`` on an already fitted model continues from its
        current parameters.
    random_state : int, default=0
        Seeds initialization (``default_rng([random_state, 1])``) and training
        (``default_rng(random_state)``).

    Attributes
    ----------
    encoder_, decoder_ : fitted network parameters (MAP estimates)
    ard_state_ : ArdState or None
    report_ : TrainReport or None (None for models loaded from a checkpoint)
    posterior_ : LaplacePosterior, after :meth:`fit_laplace`
    """

    def __init__(self, n_components=2, hidden=DEFAULT_HIDDEN,
                 encoder_activations=tuple(a.value for a in DEFAULT_ENCODER_ACTIVATIONS),
                 decoder_activations=tuple(a.value for a in DEFAULT_DECODER_ACTIVATIONS),
                 ard=True, a0=1e-5, b0=1e-5, batch_size=64, n_mc=1, max_epochs=2000,
                 learning_rate=1e-3, beta1=0.9, beta2=0.999, adam_eps=1e-8,
                 convergence_window=20, convergence_patience=50, convergence_tol=1e-4,
                 min_epochs=0, init_log_sigma_sq=0.0, warm_start=False, random_state=0):
        self.n_components = n_components
        self.hidden = hidden
        self.encoder_activations = encoder_activations
        self.decoder_activations = decoder_activations
        self.ard = ard
        self.a0 = a0
        self.b0 = b0
        self.batch_size = batch_size
        self.n_mc = n_mc
        self.max_epochs = max_epochs
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.convergence_window = convergence_window
        self.convergence_patience = convergence_patience
        self.convergence_tol = convergence_tol
        self.min_epochs = min_epochs
        self.init_log_sigma_sq = init_log_sigma_sq
        self.warm_start = warm_start
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, n_mc=self.n_mc, max_epochs=self.max_epochs, seed=self.random_state,
            ard=self.ard, a0=self.a0, b0=self.b0, learning_rate=self.learning_rate, beta1=self.beta1,
            beta2=self.beta2, adam_eps=self.adam_eps, convergence_window=self.convergence_window,
            convergence_patience=self.convergence_patience, convergence_tol=self.convergence_tol,
            min_epochs=self.min_epochs)

    def _validate(self, X, reset):
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if reset:
            if X.shape[1] % 3:
                raise ValueError(f"configurations need 3 coordinates per atom, got {X.shape[1]} columns")
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        return X

    def fit(self, X, y=None):
        """Train encoder and decoder on configurations ``X`` of shape (N, n_f)."""
        resume = self.warm_start and hasattr(self, "encoder_")
        X = self._validate(X, reset=not resume)
        if resume:
            enc, dec = self.encoder_, self.decoder_
        else:
            rng = np.random.default_rng([self.random_state, 1])
            enc = init_encoder(X.shape[1], self.n_components, self.hidden, self.encoder_activations, rng)
            dec = init_decoder(X.shape[1], self.n_components, self.hidden, self.decoder_activations, rng,
                               self.init_log_sigma_sq)
        report = train(X, enc, dec, self._train_config(), _resume=getattr(self, "report_", None) if resume else None)
        self._set_report(report)
        return self

    def augment(self, X_new):
        """Retrain on the previous training data plus ``X_new``, starting from the current MAP."""
        check_is_fitted(self, "encoder_")
        if getattr(self, "report_", None) is None:
            raise ValueError("no training data attached to this model; use fit with warm_start=True")
        X_new = np.asarray(X_new, dtype=np.float64)
        if X_new.size:
            X_new = self._validate(X_new, reset=False)
        self._set_report(warm_start_retrain(self.report_, X_new, self._train_config()))
        return self

    def _set_report(self, report: TrainReport):
        self.report_ = report
        self.encoder_ = report.encoder
        self.decoder_ = report.decoder
        self.ard_state_ = report.ard_state
        self.n_epochs_ = report.epochs
        self.posterior_ = None

    def encode(self, X) -> GaussianLatent:
        check_is_fitted(self, "encoder_")
        return encode(self.encoder_, self._validate(X, reset=False))

    def transform(self, X):
        """Collective variables: the encoder mean for each configuration."""
        return self.encode(X).mu

    def inverse_transform(self, Z):
        """Decoder mean configuration for each row of ``Z``."""
        check_is_fitted(self, "decoder_")
        Z = check_array(Z, dtype=np.float64)
        return self.decoder_.mean(Z)

    def score(self, X, y=None, n_mc=32):
        """Average per-configuration lower bound (noise seeded by ``random_state``)."""
        check_is_fitted(self, "encoder_")
        X = self._validate(X, reset=False)
        value, _ = elbo_minibatch(self.encoder_, self.decoder_, X, X.shape[0], n_mc,
                                  rng=np.random.default_rng([self.random_state, 2]), need_grad=False)
        return value.total / X.shape[0]

    @property
    def sparsity_(self) -> float:
        check_is_fitted(self, "decoder_")
        return decoder_sparsity(self.decoder_)

    @property
    def training_data_(self):
        report = getattr(self, "report_", None)
        return None if report is None else report.train_data

    def sample(self, n_samples, method="mwg", burn_in=0, thin=1, random_state=None, x0=None,
               return_chain=False):
        """Draw predictive configurations.

        ``mwg`` runs one Metropolis-within-Gibbs chain of ``burn_in + n_samples * thin``
        steps. Its start is ``x0``, else a uniformly chosen training
        configuration, else an ancestral draw.
        """
        check_is_fitted(self, "decoder_")
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        if method == "ancestral":
            return ancestral_sample(self.decoder_, rng, n_samples)
        if method != "mwg":
            raise ValueError(f"unknown sampling method {method!r}")
        if x0 is None:
            pool = self.training_data_
            x0 = pool[rng.integers(len(pool))] if pool is not None else ancestral_sample(self.decoder_, rng, 1)[0]
        chain: ChainOutput = mwg_run(self.encoder_, self.decoder_, x0, burn_in + n_samples * thin, burn_in,
                                     thin, rng)
        return chain if return_chain else chain.samples

    def fit_laplace(self, X=None, fd_step=1e-3, n_mc=1):
        """Fit the diagonal Laplace posterior over decoder parameters at the MAP."""
        check_is_fitted(self, "decoder_")
        X = self.training_data_ if X is None else self._validate(X, reset=False)
        if X is None:
            raise ValueError("training data is required to fit the Laplace posterior")
        self.posterior_: LaplacePosterior = laplace_fit(self.decoder_, self.encoder_, X, self.ard_state_,
                                                        fd_step, n_mc, seed=[self.random_state, 3])
        return self

    def credible_band(self, observable, J=3000, T=10000, levels=(0.05, 0.95), bins=100, value_range=None,
                      burn_in=0, thin=1, n_chains=1, seed=None, n_jobs=1) -> CredibleBand:
        if getattr(self, "posterior_", None) is None:
            raise ValueError("call fit_laplace before computing credible bands")
        return credible_band(self.posterior_, self.encoder_, self.decoder_, observable, J, T, levels,
                             self.random_state if seed is None else seed, bins, value_range,
                             self.training_data_, burn_in, thin, n_chains, n_jobs)
