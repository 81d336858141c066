"""Trajectory files, topology files, rigid-body alignment and synthetic data."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .observables import AtomTopology

# Standard atomic weights (u) for elements common in biomolecules.
ELEMENT_MASSES = {
    "H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "S": 32.06, "P": 30.974,
    "F": 18.998, "Cl": 35.45, "Na": 22.990, "K": 39.098, "Ca": 40.078, "Mg": 24.305,
}


class TrajectoryFormatError(ValueError):
    def __init__(self, path, line, message):
        self.path, self.line = path, line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


@dataclass
class TrajectoryDataset:
    configs: np.ndarray
    masses: np.ndarray = None
    labels: List[str] = field(default_factory=list)
    temperature: float = float("nan")

    def __post_init__(self):
        self.configs = np.atleast_2d(np.asarray(self.configs, dtype=np.float64))
        N, n_f = self.configs.shape
        if N < 1:
            raise ValueError("a dataset needs at least one configuration")
        if n_f % 3:
            raise ValueError(f"n_f={n_f} is not divisible by 3")
        if not np.all(np.isfinite(self.configs)):
            raise ValueError("configurations contain NaN or Inf")
        P = n_f // 3
        self.masses = np.ones(P) if self.masses is None else np.asarray(self.masses, dtype=np.float64)
        if self.masses.shape != (P,):
            raise ValueError(f"{self.masses.size} masses for {P} atoms")
        if not self.labels:
            self.labels = ["X"] * P
        if len(self.labels) != P:
            raise ValueError(f"{len(self.labels)} atom labels for {P} atoms")

    def __len__(self):
        return self.configs.shape[0]

    @property
    def n_features(self) -> int:
        return self.configs.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.n_features // 3

    def subset(self, idx) -> "TrajectoryDataset":
        return replace(self, configs=self.configs[np.asarray(idx)], labels=list(self.labels))


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _float(tok, path, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise TrajectoryFormatError(path, lineno, f"cannot parse number {tok!r}") from None
    if not np.isfinite(v):
        raise TrajectoryFormatError(path, lineno, f"non-finite coordinate {tok!r}")
    return v


def _read_xyz(path, lines):
    frames, elements = [], None
    i = 0
    n = len(lines)
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        try:
            count = int(lines[i].split()[0])
        except (ValueError, IndexError):
            raise TrajectoryFormatError(path, i + 1, "expected an atom count") from None
        if count < 1:
            raise TrajectoryFormatError(path, i + 1, "atom count must be positive")
        if i + 2 + count > n:
            raise TrajectoryFormatError(path, n, f"truncated frame starting at line {i + 1}")
        frame_el, coords = [], []
        for k in range(count):
            lineno = i + 3 + k
            tok = lines[lineno - 1].split()
            if len(tok) < 4:
                raise TrajectoryFormatError(path, lineno, "expected 'element x y z'")
            frame_el.append(tok[0])
            coords.extend(_float(t, path, lineno) for t in tok[1:4])
        if elements is None:
            elements = frame_el
        elif frame_el != elements:
            raise TrajectoryFormatError(path, i + 1, f"frame {len(frames) + 1} has inconsistent atoms")
        frames.append(coords)
        i += 2 + count
    if not frames:
        raise TrajectoryFormatError(path, None, "no frames found")
    masses = np.array([ELEMENT_MASSES.get(e.capitalize() if len(e) > 1 else e, 1.0) for e in elements])
    return TrajectoryDataset(np.array(frames), masses, list(elements))


def _read_csv(path, text):
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(k + 1, r) for k, r in enumerate(rows) if r and not r[0].startswith("#")]
    if not rows:
        raise TrajectoryFormatError(path, None, "empty file")
    lineno, header = rows[0]
    header = [h.strip() for h in header]
    if header != [f"x{j}" for j in range(1, len(header) + 1)]:
        raise TrajectoryFormatError(path, lineno, "header must be x1,...,x<n_f>")
    data = []
    for lineno, r in rows[1:]:
        if len(r) != len(header):
            raise TrajectoryFormatError(path, lineno, f"expected {len(header)} values, got {len(r)}")
        data.append([_float(t, path, lineno) for t in r])
    if not data:
        raise TrajectoryFormatError(path, None, "no data rows")
    if len(header) % 3:
        raise TrajectoryFormatError(path, rows[0][0], "number of columns is not a multiple of 3")
    return TrajectoryDataset(np.array(data))


def infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".xyz":
        return "xyz"
    if suffix in (".csv", ".txt"):
        return "csv"
    raise ValueError(f"cannot infer trajectory format from {path!r}; use xyz or csv")


def load_trajectory(path, format: Optional[str] = None) -> TrajectoryDataset:
    format = format or infer_format(path)
    text = Path(path).read_text()
    if format == "xyz":
        return _read_xyz(path, text.splitlines())
    if format == "csv":
        return _read_csv(path, text)
    raise ValueError(f"unknown trajectory format {format!r}")


def format_trajectory(dataset: TrajectoryDataset, format: str = "xyz") -> str:
    out = io.StringIO()
    if format == "xyz":
        P = dataset.n_atoms
        for i, frame in enumerate(dataset.configs):
            out.write(f"{P}\nframe {i}\n")
            for el, xyz in zip(dataset.labels, frame.reshape(P, 3)):
                out.write(f"{el} {float(xyz[0])!r} {float(xyz[1])!r} {float(xyz[2])!r}\n")
    elif format == "csv":
        out.write(",".join(f"x{j}" for j in range(1, dataset.n_features + 1)) + "\n")
        for frame in dataset.configs:
            out.write(",".join(repr(float(v)) for v in frame) + "\n")
    else:
        raise ValueError(f"unknown trajectory format {format!r}")
    return out.getvalue()


def write_trajectory(path, dataset: TrajectoryDataset, format: Optional[str] = None) -> None:
    atomic_write(path, format_trajectory(dataset, format or infer_format(path)))


# ------------------------------------------------------------------ topology

def parse_topology(text: str, source="<topology>") -> AtomTopology:
    atoms, phis, psis = {}, [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "dihedral":
                if len(tok) != 6 or tok[1] not in ("phi", "psi"):
                    raise ValueError("expected 'dihedral phi|psi i j k l'")
                (phis if tok[1] == "phi" else psis).append(tuple(int(t) for t in tok[2:]))
            else:
                if len(tok) != 3:
                    raise ValueError("expected 'index element mass'")
                atoms[int(tok[0])] = (tok[1], float(tok[2]))
        except ValueError as exc:
            raise TrajectoryFormatError(source, lineno, str(exc)) from None
    if sorted(atoms) != list(range(len(atoms))):
        raise TrajectoryFormatError(source, None, "atom indices must be 0..P-1")
    if len(phis) != len(psis):
        raise TrajectoryFormatError(source, None, "every residue needs one phi and one psi line")
    elements = [atoms[i][0] for i in range(len(atoms))]
    masses = [atoms[i][1] for i in range(len(atoms))]
    return AtomTopology(np.array(masses), elements, list(zip(phis, psis)))


def load_topology(path) -> AtomTopology:
    return parse_topology(Path(path).read_text(), path)


def format_topology(top: AtomTopology) -> str:
    lines = [f"{i} {el} {float(m)!r}" for i, (el, m) in enumerate(zip(top.elements, top.masses))]
    for phi, psi in top.dihedrals:
        lines.append("dihedral phi " + " ".join(map(str, phi)))
        lines.append("dihedral psi " + " ".join(map(str, psi)))
    return "\n".join(lines) + "\n"


def ala2_topology() -> AtomTopology:
    """Bundled alanine-dipeptide topology (22 atoms, one phi/psi pair)."""
    text = resources.files("cvdisc").joinpath("data/ala2.top").read_text()
    return parse_topology(text, "ala2.top")


# ---------------------------------------------------------------- alignment

def rmsd(a, b, masses=None) -> np.ndarray:
    """Mass-weighted RMSD between configurations (rows broadcast)."""
    A, B = np.asarray(a, float), np.asarray(b, float)
    A = A.reshape(*A.shape[:-1], -1, 3)
    B = B.reshape(*B.shape[:-1], -1, 3)
    m = np.ones(A.shape[-2]) if masses is None else np.asarray(masses, float)
    return np.sqrt(np.einsum("p,...p->...", m, np.sum((A - B) ** 2, axis=-1)) / m.sum())


def kabsch_rotation(mobile, target, masses) -> np.ndarray:
    """Proper rotation R minimizing sum_p m_p |R mobile_p - target_p|^2 (both centered, shape (P, 3))."""
    C = (mobile * masses[:, None]).T @ target
    U, _, Vt = np.linalg.svd(C)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    return Vt.T @ np.diag([1.0, 1.0, d]) @ U.T


def remove_rigid_body(dataset: TrajectoryDataset, reference_index: int = 0) -> TrajectoryDataset:
    """Center every frame on its center of mass and rotate it onto the reference frame."""
    N = len(dataset)
    if not -N <= reference_index < N:
        raise IndexError(f"reference frame {reference_index} out of range for {N} frames")
    m = dataset.masses
    atoms = dataset.configs.reshape(N, -1, 3)
    com = np.einsum("p,npk->nk", m, atoms) / m.sum()
    centered = atoms - com[:, None, :]
    ref = centered[reference_index]
    sv = np.linalg.svd(ref * np.sqrt(m)[:, None], compute_uv=False)
    if sv.size < 2 or sv[1] <= 1e-10 * max(sv[0], 1e-300):
        raise ValueError("reference geometry is degenerate (all atoms collinear)")
    aligned = np.empty_like(centered)
    for i in range(N):
        R = kabsch_rotation(centered[i], ref, m)
        aligned[i] = centered[i] @ R.T
    return replace(dataset, configs=aligned.reshape(N, -1), labels=list(dataset.labels))


# ------------------------------------------------------------ synthetic data

@dataclass
class SyntheticSpec:
    """Mixture of Gaussian modes in latent space pushed through a fixed random map.

    ``map_kind`` is ``"mlp"`` (x = W2 tanh(W1 z + b1) + b2) or ``"linear"``
    (x = A z + c).
    """

    latent_dim: int = 2
    n_features: int = 30
    centers: Sequence[Sequence[float]] = ((-1.5, 0.0), (1.5, 0.0))
    weights: Sequence[float] = (0.5, 0.5)
    mode_scale: float = 0.35
    map_kind: str = "mlp"
    map_hidden: int = 16
    map_scale: float = 1.0
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.centers.shape != (self.weights.size, self.latent_dim):
            raise ValueError("centers must be (n_modes, latent_dim) and match weights")
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0):
            raise ValueError("mode weights must be nonnegative and sum to 1")
        if self.noise < 0 or self.mode_scale < 0:
            raise ValueError("noise and mode_scale must be nonnegative")
        if self.n_features % 3:
            raise ValueError("n_features must be a multiple of 3")
        if self.map_kind not in ("mlp", "linear"):
            raise ValueError(f"unknown map_kind {self.map_kind!r}")

    def observation_map(self):
        """The fixed map g as a callable on (n, latent_dim) arrays; depends only on ``seed``."""
        rng = np.random.default_rng([self.seed, 1])
        if self.map_kind == "linear":
            A = rng.standard_normal((self.n_features, self.latent_dim)) * self.map_scale
            c = rng.standard_normal(self.n_features)
            return lambda z: np.asarray(z) @ A.T + c
        W1 = rng.standard_normal((self.map_hidden, self.latent_dim))
        b1 = 0.5 * rng.standard_normal(self.map_hidden)
        W2 = rng.standard_normal((self.n_features, self.map_hidden)) * self.map_scale / np.sqrt(self.map_hidden)
        b2 = rng.standard_normal(self.n_features)
        return lambda z: np.tanh(np.asarray(z) @ W1.T + b1) @ W2.T + b2


def generate_synthetic(spec: SyntheticSpec, n: int):
    """Draw ``n`` configurations; returns ``(dataset, latents, mode_labels)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([spec.seed, 2])
    labels = rng.choice(spec.weights.size, size=n, p=spec.weights)
    z = spec.centers[labels] + spec.mode_scale * rng.standard_normal((n, spec.latent_dim))
    x = spec.observation_map()(z) + spec.noise * rng.standard_normal((n, spec.n_features))
    return TrajectoryDataset(x), z, labels


# ------------------------------------------------------------------ splitting

def split_indices(n: int, n_train: int, seed=None) -> Tuple[np.ndarray, np.ndarray]:
    if not 1 <= n_train < n:
        raise ValueError(f"n_train must be in [1, {n - 1}], got {n_train}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(dataset: TrajectoryDataset, n_train: int, seed=None):
    train_idx, test_idx = split_indices(len(dataset), n_train, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)
