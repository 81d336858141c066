"""Collective-variable discovery with deep Bayesian latent-variable models."""

from .ard import ArdState, ard_e_step, ard_hessian_diag, ard_log_prior_grad, sparsity_fraction
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .dataio import (SyntheticSpec, TrajectoryDataset, generate_synthetic, load_topology, load_trajectory,
                     remove_rigid_body, split, write_trajectory)
from .estimator import CVDiscovery
from .laplace import LaplacePosterior, laplace_fit, laplace_sample
from .observables import (AtomTopology, ConformationLabel, CredibleBand, classify_conformation, credible_band,
                          dihedral_angle, radius_of_gyration, ramachandran)
from .sampler import ChainOutput, ancestral_sample, mwg_ratio, mwg_run
from .training import AdamState, TrainConfig, TrainReport, adam_update, train, warm_start_retrain

__version__ = "0.1.0"
