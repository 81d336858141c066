"""Command-line pipeline: train, encode, sample, laplace, observe, report.

Exit codes: 0 success, 2 unreadable or unwritable files, 3 invalid input,
4 numerical failure. Tables are tab-separated with ``#`` header lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .checkpoint import CheckpointError, ModelCheckpoint, load_checkpoint, save_checkpoint
from .dataio import TrajectoryDataset, atomic_write, load_topology, load_trajectory, remove_rigid_body, \
    write_trajectory
from .estimator import CVDiscovery
from .laplace import laplace_fit
from .observables import (ALA2_REGIONS, RAMACHANDRAN_BINS, backbone_dihedrals, classify_conformation,
                          credible_band, histogram1d, observable_fn, ramachandran)
from .sampler import ancestral_sample, mwg_run
from .training import TrainConfig
from .vae import DEFAULT_DECODER_ACTIVATIONS, DEFAULT_ENCODER_ACTIVATIONS, DEFAULT_HIDDEN, encode

logger = logging.getLogger("cvdisc")

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4


# ------------------------------------------------------------------ config

@dataclass
class ModelOptions:
    n_components: int = 2
    hidden: Tuple[int, ...] = DEFAULT_HIDDEN
    encoder_activations: Tuple[str, ...] = tuple(a.value for a in DEFAULT_ENCODER_ACTIVATIONS)
    decoder_activations: Tuple[str, ...] = tuple(a.value for a in DEFAULT_DECODER_ACTIVATIONS)
    init_log_sigma_sq: float = 0.0
    align: bool = False


@dataclass
class SampleOptions:
    T: int = 10000
    burn_in: int = 0
    thin: int = 1


@dataclass
class LaplaceOptions:
    fd_step: float = 1e-3
    n_mc: int = 1


@dataclass
class ReportOptions:
    J: int = 3000
    T: int = 10000
    levels: Tuple[float, float] = (0.05, 0.95)
    bins: int = 100
    angle_bins: int = RAMACHANDRAN_BINS
    n_chains: int = 1
    burn_in: int = 0
    thin: int = 1


_SECTIONS = {"model": ModelOptions, "train": TrainConfig, "sample": SampleOptions, "laplace": LaplaceOptions,
             "report": ReportOptions}


@dataclass
class RunConfig:
    model: ModelOptions = field(default_factory=ModelOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleOptions = field(default_factory=SampleOptions)
    laplace: LaplaceOptions = field(default_factory=LaplaceOptions)
    report: ReportOptions = field(default_factory=ReportOptions)

    @classmethod
    def from_dict(cls, doc: Optional[dict]) -> "RunConfig":
        doc = doc or {}
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, kind in _SECTIONS.items():
            sub = doc.get(name) or {}
            bad = set(sub) - {f.name for f in fields(kind)}
            if bad:
                raise ValueError(f"unknown keys in config section {name!r}: {sorted(bad)}")
            sub = {k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()}
            parts[name] = kind(**sub)
        return cls(**parts)

    def to_dict(self) -> dict:
        return {name: {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(getattr(self, name)).items()}
                for name in _SECTIONS}


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON config: {exc}") from exc
    return RunConfig.from_dict(doc)


def n_workers() -> int:
    value = os.environ.get("CVDISC_THREADS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        raise ValueError(f"CVDISC_THREADS must be an integer, got {value!r}") from None


# ----------------------------------------------------------------- tables

def _fmt(v) -> str:
    return v if isinstance(v, str) else repr(float(v))


def format_table(header, rows, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append("# " + "\t".join(header))
    lines.extend("\t".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def read_table(path) -> np.ndarray:
    """Numeric columns of a table written by this module (``#`` lines skipped)."""
    rows = [line.split("\t") for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]
    return np.array([[float(v) for v in row if _is_number(v)] for row in rows])


def _is_number(tok) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def latent_table(mu, log_var, labels=None) -> str:
    k = mu.shape[1]
    header = [f"z_mean_{i}" for i in range(1, k + 1)] + [f"z_logvar_{i}" for i in range(1, k + 1)]
    rows = [list(m) + list(v) for m, v in zip(mu, log_var)]
    if labels is not None:
        header.append("label")
        rows = [r + [lab] for r, lab in zip(rows, labels)]
    return format_table(header, rows)


# --------------------------------------------------------------- helpers

def _estimator(cfg: RunConfig) -> CVDiscovery:
    m, t = cfg.model, cfg.train
    return CVDiscovery(n_components=m.n_components, hidden=m.hidden, encoder_activations=m.encoder_activations,
                       decoder_activations=m.decoder_activations, ard=t.ard, a0=t.a0, b0=t.b0,
                       batch_size=t.batch_size, n_mc=t.n_mc, max_epochs=t.max_epochs, learning_rate=t.learning_rate,
                       beta1=t.beta1, beta2=t.beta2, adam_eps=t.adam_eps,
                       convergence_window=t.convergence_window, convergence_patience=t.convergence_patience,
                       convergence_tol=t.convergence_tol, min_epochs=t.min_epochs,
                       init_log_sigma_sq=m.init_log_sigma_sq, random_state=t.seed)


def _load_data(path, n_features=None) -> TrajectoryDataset:
    ds = load_trajectory(path)
    if n_features is not None and ds.n_features != n_features:
        raise ValueError(f"{path}: {ds.n_features} coordinates per frame, model expects {n_features}")
    return ds


def _topology(args, ck: Optional[ModelCheckpoint] = None):
    if getattr(args, "topology", None):
        return load_topology(args.topology)
    return None if ck is None else ck.topology


def _write_log(path, report) -> None:
    comments = [f"epochs {report.epochs}", f"converged {report.converged}", f"final_elbo {report.final_elbo!r}"]
    atomic_write(path, "\n".join(f"# {c}" for c in comments) + "\n" + "\n".join(report.log_lines()) + "\n")


# --------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    topology = load_topology(args.topology) if args.topology else None
    data = _load_data(args.data)
    if topology is not None and topology.n_atoms != data.n_atoms:
        raise ValueError(f"topology has {topology.n_atoms} atoms, data has {data.n_atoms}")
    if cfg.model.align:
        if topology is not None:
            data = TrajectoryDataset(data.configs, topology.masses, data.labels, data.temperature)
        data = remove_rigid_body(data, 0)
    model = _estimator(cfg).fit(data.configs)
    report = model.report_
    ck = ModelCheckpoint(model.encoder_, model.decoder_, model.ard_state_, None, cfg.to_dict(), cfg.train.seed,
                         topology, {"epochs": report.epochs, "converged": bool(report.converged),
                                    "final_elbo": report.final_elbo, "n_train": len(data)})
    save_checkpoint(args.out, ck)
    _write_log(args.log or f"{args.out}.log", report)
    if args.latent_out:
        lat = encode(model.encoder_, data.configs)
        atomic_write(args.latent_out, latent_table(lat.mu, lat.log_var))
    print(f"trained {report.epochs} epochs, converged={report.converged}, final_elbo={report.final_elbo:.6g}")
    return EXIT_OK


def cmd_encode(args) -> int:
    ck = load_checkpoint(args.model)
    data = _load_data(args.data, ck.encoder.n_features)
    lat = encode(ck.encoder, data.configs)
    labels = None
    if args.topology:
        top = load_topology(args.topology)
        angles = backbone_dihedrals(data.configs, top)
        labels = [classify_conformation(phi, psi, ALA2_REGIONS).value for phi, psi in angles[:, 0]]
    atomic_write(args.out, latent_table(lat.mu, lat.log_var, labels))
    return EXIT_OK


def cmd_sample(args) -> int:
    ck = load_checkpoint(args.model)
    cfg = RunConfig.from_dict(ck.config).sample if ck.config else SampleOptions()
    T = cfg.T if args.T is None else args.T
    burn_in = cfg.burn_in if args.burn_in is None else args.burn_in
    thin = cfg.thin if args.thin is None else args.thin
    if T < 1 or not 0 <= burn_in < T or thin < 1:
        raise ValueError("need T > burn_in >= 0 and thin >= 1")
    rng = np.random.default_rng(args.seed)
    if args.mode == "ancestral":
        samples = ancestral_sample(ck.decoder, rng, len(range(burn_in + 1, T + 1, thin)))
    else:
        if args.data:
            x0 = _load_data(args.data, ck.encoder.n_features).configs[args.frame]
        else:
            x0 = ancestral_sample(ck.decoder, rng, 1)[0]
        chain = mwg_run(ck.encoder, ck.decoder, x0, T, burn_in, thin, rng)
        samples = chain.samples
        print(f"acceptance_rate\t{chain.acceptance_rate!r}")
    labels = ck.topology.elements if ck.topology is not None and ck.topology.elements else []
    masses = None if ck.topology is None else ck.topology.masses
    write_trajectory(args.out, TrajectoryDataset(samples, masses, list(labels)))
    return EXIT_OK


def cmd_laplace(args) -> int:
    ck = load_checkpoint(args.model)
    cfg = RunConfig.from_dict(ck.config).laplace if ck.config else LaplaceOptions()
    data = _load_data(args.data, ck.encoder.n_features)
    fd_step = cfg.fd_step if args.fd_step is None else args.fd_step
    ck.posterior = laplace_fit(ck.decoder, ck.encoder, data.configs, ck.ard_state, fd_step, cfg.n_mc,
                               seed=[args.seed, 3])
    save_checkpoint(args.out, ck)
    print(f"laplace: {ck.posterior.mu.size} parameters, {ck.posterior.n_floored} precisions floored")
    return EXIT_OK


def cmd_observe(args) -> int:
    data = load_trajectory(args.trajectory)
    top = load_topology(args.topology) if args.topology else None
    if args.observable == "rg":
        hist = histogram1d(observable_fn("rg", top)(data.configs), bins=args.bins or 100)
        text = format_table(["bin_center", "density"], zip(hist.centers, hist.density),
                            [f"observable rg, {len(data)} frames"])
    else:
        if top is None:
            raise ValueError("--topology is required for the ramachandran observable")
        hist = ramachandran(data.configs, top, bins=args.bins or RAMACHANDRAN_BINS)
        rows = [(px, py, hist.density[i, j]) for i, px in enumerate(hist.centers_x)
                for j, py in enumerate(hist.centers_y)]
        text = format_table(["phi_center", "psi_center", "density"], rows,
                            [f"observable ramachandran, {len(data)} frames"])
    atomic_write(args.out, text)
    return EXIT_OK


def cmd_report(args) -> int:
    ck = load_checkpoint(args.model)
    if ck.posterior is None:
        raise ValueError(f"{args.model} has no Laplace posterior; run the laplace command first")
    opts = RunConfig.from_dict(ck.config).report if ck.config else ReportOptions()
    J = opts.J if args.J is None else args.J
    T = opts.T if args.T is None else args.T
    levels = tuple(opts.levels if args.levels is None else args.levels)
    n_chains = opts.n_chains if args.n_chains is None else args.n_chains
    top = _topology(args, ck)
    pool = _load_data(args.data, ck.encoder.n_features).configs if args.data else None
    bins = args.bins or (opts.bins if args.observable == "rg" else opts.angle_bins)
    band = credible_band(ck.posterior, ck.encoder, ck.decoder, observable_fn(args.observable, top), J, T, levels,
                         args.seed, bins, None, pool, opts.burn_in, opts.thin, n_chains, n_workers())
    comments = [f"observable {args.observable}, J={J}, T={T}, levels={levels[0]!r},{levels[-1]!r}"]
    if args.observable == "rg":
        text = format_table(["bin_center", "value", "lower", "upper"],
                            zip(band.grid, band.map_curve, band.lower, band.upper), comments)
    else:
        text = format_table(["phi_center", "psi_center", "value", "lower", "upper"],
                            ((g[0], g[1], m, lo, hi) for g, m, lo, hi in
                             zip(band.grid, band.map_curve, band.lower, band.upper)), comments)
    atomic_write(args.out, text)
    print(f"mean band width {band.mean_width!r}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvdisc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train encoder and decoder, write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--topology")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--log", help="training log path (default: <out>.log)")
    t.add_argument("--latent-out", help="also write the encoded training data here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="encoder mean and log-variance for each frame")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--topology", help="add a conformation label column")
    e.set_defaults(func=cmd_encode)

    s = sub.add_parser("sample", help="generate configurations")
    s.add_argument("--model", required=True)
    s.add_argument("--mode", choices=("ancestral", "mwg"), default="mwg")
    s.add_argument("-T", type=int)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--data", help="trajectory supplying the initial frame (default: an ancestral draw)")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    lp = sub.add_parser("laplace", help="fit the Laplace posterior over decoder parameters")
    lp.add_argument("--model", required=True)
    lp.add_argument("--data", required=True)
    lp.add_argument("--out", required=True)
    lp.add_argument("--fd-step", type=float)
    lp.add_argument("--seed", type=int, default=0)
    lp.set_defaults(func=cmd_laplace)

    o = sub.add_parser("observe", help="histogram an observable over a trajectory")
    o.add_argument("--trajectory", required=True)
    o.add_argument("--topology")
    o.add_argument("--observable", choices=("rg", "ramachandran"), required=True)
    o.add_argument("--bins", type=int)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_observe)

    r = sub.add_parser("report", help="credible band of an observable under the Laplace posterior")
    r.add_argument("--model", required=True)
    r.add_argument("--observable", choices=("rg", "ramachandran"), required=True)
    r.add_argument("-J", type=int)
    r.add_argument("-T", type=int)
    r.add_argument("--levels", type=float, nargs=2)
    r.add_argument("--n-chains", type=int)
    r.add_argument("--bins", type=int)
    r.add_argument("--topology")
    r.add_argument("--data", help="frames used as chain starting points")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, CheckpointError, KeyError, IndexError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
