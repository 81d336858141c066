"""Observables on configuration sets and their credible bands."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from .laplace import laplace_sample
from .sampler import ancestral_sample, mwg_run


@dataclass
class AtomTopology:
    masses: np.ndarray
    elements: List[str] = field(default_factory=list)
    # one (phi quadruple, psi quadruple) pair per residue
    dihedrals: List[Tuple[Tuple[int, int, int, int], Tuple[int, int, int, int]]] = field(default_factory=list)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if np.any(self.masses <= 0):
            raise ValueError("masses must be positive")
        P = self.masses.size
        for phi, psi in self.dihedrals:
            if len(phi) != 4 or len(psi) != 4:
                raise ValueError("dihedrals need four atom indices")
            if any(not 0 <= i < P for i in (*phi, *psi)):
                raise ValueError(f"dihedral index out of range for {P} atoms")

    @property
    def n_atoms(self) -> int:
        return self.masses.size


# ---------------------------------------------------------------- geometry

def _as_atoms(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 3:
        raise ValueError(f"configuration length {x.shape[-1]} is not a multiple of 3")
    return x.reshape(*x.shape[:-1], -1, 3)


def radius_of_gyration(x, masses=None):
    """Mass-weighted radius of gyration of one configuration or of each row of a batch."""
    atoms = _as_atoms(x)
    m = np.ones(atoms.shape[-2]) if masses is None else np.asarray(masses, dtype=np.float64)
    if m.shape != (atoms.shape[-2],):
        raise ValueError(f"{m.size} masses for {atoms.shape[-2]} atoms")
    total = m.sum()
    if total <= 0:
        raise ValueError("total mass must be positive")
    com = np.einsum("p,...pk->...k", m, atoms) / total
    d2 = np.sum((atoms - com[..., None, :]) ** 2, axis=-1)
    return np.sqrt(np.einsum("p,...p->...", m, d2) / total)


def dihedral_angle(p1, p2, p3, p4, tol: float = 1e-10):
    """Signed torsion angle in degrees, in (-180, 180].

    Accepts single points or stacked arrays of shape (..., 3).
    """
    p1, p2, p3, p4 = (np.asarray(p, dtype=np.float64) for p in (p1, p2, p3, p4))
    b0 = p1 - p2
    b1 = p3 - p2
    b2 = p4 - p3
    b1n = np.linalg.norm(b1, axis=-1, keepdims=True)
    if np.any(b1n == 0):
        raise ValueError("degenerate dihedral geometry: central atoms coincide")
    u = b1 / b1n
    v = b0 - np.sum(b0 * u, axis=-1, keepdims=True) * u
    w = b2 - np.sum(b2 * u, axis=-1, keepdims=True) * u
    nv, nw = np.linalg.norm(v, axis=-1), np.linalg.norm(w, axis=-1)
    if np.any(nv <= tol * np.linalg.norm(b0, axis=-1)) or np.any(nw <= tol * np.linalg.norm(b2, axis=-1)):
        raise ValueError("degenerate dihedral geometry: collinear atoms")
    x = np.sum(v * w, axis=-1)
    y = np.sum(np.cross(u, v) * w, axis=-1)
    ang = np.degrees(np.arctan2(y, x))
    return np.where(ang <= -180.0, ang + 360.0, ang)


def backbone_dihedrals(configs, topology: AtomTopology) -> np.ndarray:
    """(phi, psi) in degrees, shape (n_configs, n_residues, 2)."""
    atoms = _as_atoms(np.atleast_2d(configs))
    if atoms.shape[1] != topology.n_atoms:
        raise ValueError(f"configurations have {atoms.shape[1]} atoms, topology has {topology.n_atoms}")
    if not topology.dihedrals:
        raise ValueError("topology defines no dihedrals")
    out = np.empty((atoms.shape[0], len(topology.dihedrals), 2))
    for r, quads in enumerate(topology.dihedrals):
        for k, (i, j, l, m) in enumerate(quads):
            out[:, r, k] = dihedral_angle(atoms[:, i], atoms[:, j], atoms[:, l], atoms[:, m])
    return out


# --------------------------------------------------------------- histograms

@dataclass
class Histogram1D:
    edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))


@dataclass
class Histogram2D:
    edges_x: np.ndarray
    edges_y: np.ndarray
    density: np.ndarray

    @property
    def centers_x(self) -> np.ndarray:
        return 0.5 * (self.edges_x[1:] + self.edges_x[:-1])

    @property
    def centers_y(self) -> np.ndarray:
        return 0.5 * (self.edges_y[1:] + self.edges_y[:-1])

    def bin_areas(self) -> np.ndarray:
        return np.outer(np.diff(self.edges_x), np.diff(self.edges_y))

    def mass(self) -> float:
        return float(np.sum(self.density * self.bin_areas()))


def histogram1d(values, bins=100, range=None, pad: float = 0.1) -> Histogram1D:
    """Normalized histogram; without ``range`` the data span is padded by ``pad`` on each side."""
    values = np.ravel(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        raise ValueError("no values to histogram")
    if np.ndim(bins) == 0 and range is None:
        lo, hi = values.min(), values.max()
        width = hi - lo if hi > lo else max(abs(hi), 1.0)
        range = (lo - pad * width, hi + pad * width)
    counts, edges = np.histogram(values, bins=bins, range=range)
    density = counts / (counts.sum() * np.diff(edges)) if counts.sum() else np.zeros(counts.shape)
    return Histogram1D(edges, density)


RAMACHANDRAN_BINS = 60


def _angle_histogram(phi, psi, bins) -> Histogram2D:
    edges = np.linspace(-180.0, 180.0, bins + 1)
    counts, ex, ey = np.histogram2d(phi, psi, bins=[edges, edges])
    area = np.outer(np.diff(ex), np.diff(ey))
    return Histogram2D(ex, ey, counts / (counts.sum() * area))


def ramachandran(configs, topology: AtomTopology, bins: int = RAMACHANDRAN_BINS, pooled: bool = True):
    """Normalized (phi, psi) density over [-180, 180]^2.

    With ``pooled`` the per-residue histograms are averaged (each residue has
    the same number of samples, so this equals histogramming all pairs).
    Otherwise a list with one histogram per residue is returned.
    """
    angles = backbone_dihedrals(configs, topology)
    per_res = [_angle_histogram(angles[:, r, 0], angles[:, r, 1], bins) for r in range(angles.shape[1])]
    if not pooled:
        return per_res
    dens = np.mean([h.density for h in per_res], axis=0)
    return Histogram2D(per_res[0].edges_x, per_res[0].edges_y, dens)


# ----------------------------------------------------------- conformations

class ConformationLabel(str, enum.Enum):
    ALPHA = "alpha"
    BETA1 = "beta1"
    BETA2 = "beta2"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class AngleBox:
    """Rectangle in (phi, psi); bounds are (lo, hi, lo_closed, hi_closed)."""

    phi: Tuple[float, float, bool, bool]
    psi: Tuple[float, float, bool, bool]

    @staticmethod
    def _inside(v, bounds):
        lo, hi, lo_closed, hi_closed = bounds
        ok_lo = v >= lo if lo_closed else v > lo
        ok_hi = v <= hi if hi_closed else v < hi
        return ok_lo and ok_hi

    def contains(self, phi, psi) -> bool:
        return self._inside(phi, self.phi) and self._inside(psi, self.psi)


# ALA-2 regions; psi wraps for beta-1 so it is split into two boxes.
ALA2_REGIONS: Dict[ConformationLabel, Tuple[AngleBox, ...]] = {
    ConformationLabel.ALPHA: (AngleBox((-180, 0, True, True), (-120, 30, True, True)),),
    ConformationLabel.BETA1: (AngleBox((-180, 0, True, True), (30, 180, False, True)),
                              AngleBox((-180, 0, True, True), (-180, -150, True, True))),
    ConformationLabel.BETA2: (AngleBox((0, 180, False, True), (-180, 180, True, True)),),
}


def classify_conformation(phi, psi, rectangles=None) -> ConformationLabel:
    rectangles = ALA2_REGIONS if rectangles is None else rectangles
    for label, boxes in rectangles.items():
        if any(box.contains(phi, psi) for box in boxes):
            return ConformationLabel(label)
    return ConformationLabel.UNCLASSIFIED


# ----------------------------------------------------------- credible bands

@dataclass
class CredibleBand:
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    map_curve: np.ndarray
    levels: Tuple[float, float]
    edges: Optional[np.ndarray] = None
    # quantiles of the per-sample trajectory average of the observable
    mean_quantiles: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.upper - self.lower))


def band_from_samples(curves, map_curve, grid, levels=(0.05, 0.95), edges=None, means=None) -> CredibleBand:
    """Per-grid-point empirical quantiles across posterior samples (rows of ``curves``)."""
    curves = np.asarray(curves, dtype=np.float64)
    levels = tuple(float(q) for q in levels)
    if curves.shape[0] < 2:
        raise ValueError("need at least two posterior samples")
    if any(not 0 < q < 1 for q in levels) or any(b <= a for a, b in zip(levels[:-1], levels[1:])):
        raise ValueError("levels must be strictly increasing in (0, 1)")
    lo, hi = np.quantile(curves, [levels[0], levels[-1]], axis=0)
    mq = None if means is None else np.quantile(np.asarray(means, float), levels)
    return CredibleBand(np.asarray(grid), lo, hi, np.asarray(map_curve, float), levels, edges, mq, curves)


def observable_fn(name: str, topology: Optional[AtomTopology] = None) -> Callable[[np.ndarray], np.ndarray]:
    """Observable by name.

    ``rg`` gives one radius of gyration per configuration. ``ramachandran``
    gives the (phi, psi) pairs of every residue, stacked as an (n * R, 2)
    array, and needs a topology with dihedral definitions.
    """
    if name == "rg":
        masses = None if topology is None else topology.masses
        return lambda X: radius_of_gyration(X, masses)
    if name == "ramachandran":
        if topology is None or not topology.dihedrals:
            raise ValueError("the ramachandran observable needs a topology with dihedrals")
        return lambda X: backbone_dihedrals(X, topology).reshape(-1, 2)
    raise ValueError(f"unknown observable {name!r}")


ANGLE_RANGE = (-180.0, 180.0)


def _chain_values(enc, dec, observable, steps, burn_in, thin, rng, inits):
    chain = mwg_run(enc, dec, inits if len(inits) > 1 else inits[0], steps, burn_in, thin, rng)
    return np.asarray(observable(chain.samples), dtype=np.float64)


def _curve(values, edges):
    """Density on fixed bins, normalized by the total sample count."""
    if values.ndim == 1:
        counts, _ = np.histogram(values, bins=edges[0])
        return counts / (values.size * np.diff(edges[0]))
    counts, _, _ = np.histogram2d(values[:, 0], values[:, 1], bins=edges)
    return (counts / (values.shape[0] * np.outer(np.diff(edges[0]), np.diff(edges[1])))).ravel()


def _posterior_chain(j, posterior, enc, dec_map, observable, steps, burn_in, thin, seed, inits, edges):
    dec_j = dec_map.with_flat(laplace_sample(posterior, np.random.default_rng([seed, j])))
    values = _chain_values(enc, dec_j, observable, steps, burn_in, thin, np.random.default_rng([seed, 0, 1]), inits)
    return _curve(values, edges), float(np.mean(values)) if values.ndim == 1 else np.nan


def credible_band(posterior, enc, dec_map, observable: Callable, J: int = 3000, T: int = 10000,
                  levels=(0.05, 0.95), seed: int = 0, bins=100, value_range=None, init_pool=None,
                  burn_in: int = 0, thin: int = 1, n_chains: int = 1, n_jobs: int = 1) -> CredibleBand:
    """Posterior credible band for the histogram of an observable.

    For each of ``J`` decoder draws from ``posterior``, Metropolis-within-Gibbs
    sampling produces ``T`` states per draw and the observable is
    histogrammed on bins shared by all draws; the band is the per-bin
    ``levels`` quantiles. The MAP curve comes from the same procedure with
    the MAP decoder.

    The ``T`` states are split over ``n_chains`` chains of ``T // n_chains``
    steps. Chain starts are drawn once, uniformly from ``init_pool`` (else
    ancestrally from the MAP decoder), and shared by every draw so that the
    spread across draws reflects the parameters rather than where chains
    started. Randomness: ``default_rng([seed, 0])`` picks the starts, draw
    ``j`` (1..J) takes its parameters from ``default_rng([seed, j])``, and
    every chain (MAP included) runs on the common stream
    ``default_rng([seed, 0, 1])``. With common chain noise a degenerate
    posterior reproduces the MAP curve exactly, and the band width measures
    parameter uncertainty rather than Monte Carlo noise.

    ``observable`` maps an (n, n_f) array to n scalars, or to an (n, 2) array
    of angles in degrees for a 2-D band over [-180, 180]^2 (flattened,
    row-major in the first angle). The 1-D bins span the MAP chain's values
    padded by 10% unless ``value_range`` is given.
    """
    if J < 2:
        raise ValueError("J must be >= 2")
    if n_chains < 1 or T // n_chains <= burn_in:
        raise ValueError("each chain needs more than burn_in steps")
    steps = T // n_chains
    rng0 = np.random.default_rng([seed, 0])
    if init_pool is not None and len(init_pool):
        inits = np.asarray(init_pool, dtype=np.float64)[rng0.integers(len(init_pool), size=n_chains)]
    else:
        inits = ancestral_sample(dec_map, rng0, n_chains)
    map_values = _chain_values(enc, dec_map, observable, steps, burn_in, thin,
                               np.random.default_rng([seed, 0, 1]), inits)
    if map_values.ndim == 2:
        n = bins if np.ndim(bins) == 0 else len(bins) - 1
        ax = np.linspace(*ANGLE_RANGE, int(n) + 1)
        edges = (ax, ax)
        cx = 0.5 * (ax[1:] + ax[:-1])
        grid = np.stack(np.meshgrid(cx, cx, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        edges = (histogram1d(map_values, bins=bins, range=value_range).edges,)
        grid = 0.5 * (edges[0][1:] + edges[0][:-1])
    map_curve = _curve(map_values, edges)

    results = Parallel(n_jobs=n_jobs)(
        delayed(_posterior_chain)(j, posterior, enc, dec_map, observable, steps, burn_in, thin, seed, inits, edges)
        for j in range(1, J + 1))
    curves = np.array([r[0] for r in results])
    means = np.array([r[1] for r in results])
    return band_from_samples(curves, map_curve, grid, levels, edges=edges,
                             means=None if np.all(np.isnan(means)) else means)
