"""PCA reduction of flow states.

Every row of a flow matrix (one coordinate of every particle at one frame)
is an observation; particles are the dimensions. Training examples are
stacked row-wise, centered with their column mean and decomposed with a
thin SVD.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from . import container

DEFAULT_MODES = 8


@dataclass(frozen=True)
class PcaBasis:
    """Principal modes of stacked training flow states.

    Attributes
    ----------
    modes : (n, k) ndarray
        All computed modes, ordered by decreasing eigenvalue.
    mean_row : (n,) ndarray
        Column mean of the stacked training matrix.
    eigenvalues : (k,) ndarray
        ``sigma_i**2 / (rows - 1)``, non-increasing.
    r : int
        Number of modes used by :attr:`U`.
    """

    modes: np.ndarray
    mean_row: np.ndarray
    eigenvalues: np.ndarray
    r: int
    rows: int = 0
    degenerate: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("modes", "mean_row", "eigenvalues"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not 1 <= self.r <= self.modes.shape[1]:
            raise ValueError(f"r={self.r} outside 1..{self.modes.shape[1]}")

    @property
    def U(self) -> np.ndarray:
        return self.modes[:, : self.r]

    @property
    def n(self) -> int:
        return self.modes.shape[0]

    def with_modes(self, r: int) -> "PcaBasis":
        return PcaBasis(self.modes, self.mean_row, self.eigenvalues, int(r), self.rows,
                        self.degenerate, dict(self.info))

    def fingerprint(self) -> str:
        return container.array_fingerprint(self.U, self.mean_row)


def stack(examples) -> np.ndarray:
    mats = [np.asarray(S, dtype=np.float64) for S in examples]
    if not mats:
        raise ValueError("need at least one training example")
    n = mats[0].shape[1]
    if n == 0:
        raise ValueError("flow matrices have no particles")
    for i, S in enumerate(mats):
        if S.ndim != 2 or S.shape[1] != n:
            raise ValueError(f"example {i} has shape {S.shape}, expected (*, {n})")
    return np.vstack(mats)


def _sign_fix(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def fit(train_examples, r: int = DEFAULT_MODES) -> PcaBasis:
    """Fit the basis on a list of training flow matrices ``S_i`` (3m x n).

    ``r`` is clipped to the number of available modes.
    """
    X = stack(train_examples)
    rows, n = X.shape
    mean_row = X.mean(axis=0)
    Xc = X - mean_row
    _, sigma, Vt = la.svd(Xc, full_matrices=False, lapack_driver="gesdd")
    V = _sign_fix(Vt.T)
    denom = max(rows - 1, 1)
    eig = sigma**2 / denom
    degenerate = not np.any(eig > 0)
    if degenerate:
        warnings.warn("zero-variance training data: all PCA eigenvalues are 0", RuntimeWarning)
    return PcaBasis(V, mean_row, eig, min(int(r), V.shape[1]), rows, degenerate)


def transform(S: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Reduced flow states ``(S - mean_row) U``, shape ``(3m, r)``."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] != basis.n:
        raise ValueError(f"S has {S.shape[-1]} columns, basis expects {basis.n}")
    return (S - basis.mean_row) @ basis.U


def inverse_transform(Sp: np.ndarray, basis: PcaBasis) -> np.ndarray:
    """Map reduced states back to full space: ``Sp U^T + mean_row``."""
    Sp = np.asarray(Sp, dtype=np.float64)
    if Sp.ndim != 2 or Sp.shape[1] != basis.r:
        raise ValueError(f"Sp has {Sp.shape[-1]} columns, basis has r={basis.r}")
    out = Sp @ basis.U.T
    out += basis.mean_row
    return out


def reduce_example(example, basis: PcaBasis) -> dict:
    """``Sp`` and the system state ``Z = [Sp R]`` for one example."""
    Sp = transform(example.S, basis)
    return {"Sp": Sp, "Z": np.hstack([Sp, example.R]), "conditions": dict(example.conditions)}


def energy(basis: PcaBasis, r: int) -> float:
    """Fraction of total variance carried by the first ``r`` modes."""
    lam = basis.eigenvalues
    if not 1 <= r <= lam.size:
        raise ValueError(f"r must be in 1..{lam.size}")
    total = lam.sum()
    if total <= 0:
        warnings.warn("all eigenvalues are zero; energy defined as 1", RuntimeWarning)
        return 1.0
    return float(lam[:r].sum() / total)


def energy_curve(basis: PcaBasis) -> np.ndarray:
    lam = basis.eigenvalues
    total = lam.sum()
    if total <= 0:
        return np.ones_like(lam)
    return np.cumsum(lam) / total


def select_modes(basis: PcaBasis, threshold: float = 0.99) -> int:
    """Smallest ``r`` whose energy exceeds ``threshold``."""
    curve = energy_curve(basis)
    hits = np.flatnonzero(curve > threshold)
    return int(hits[0]) + 1 if hits.size else curve.size


def position_error(S_hat: np.ndarray, S_ref: np.ndarray) -> np.ndarray:
    """Per-particle mean over frames of the squared 3-D position error.

    Both inputs are flow matrices ``(3m, n)``; returns shape ``(n,)``.
    """
    S_hat = np.asarray(S_hat, dtype=np.float64)
    S_ref = np.asarray(S_ref, dtype=np.float64)
    if S_hat.shape != S_ref.shape:
        raise ValueError(f"shape mismatch {S_hat.shape} vs {S_ref.shape}")
    if S_hat.ndim != 2 or S_hat.shape[0] % 3:
        raise ValueError(f"flow matrices must be (3m, n), got {S_hat.shape}")
    d2 = (S_hat - S_ref) ** 2
    m = d2.shape[0] // 3
    return d2.reshape(m, 3, -1).sum(axis=1).mean(axis=0)


def reconstruction_mse(S: np.ndarray, basis: PcaBasis) -> float:
    """Position MSE (squared distance, averaged over frames and particles)
    after a reduce / map-back round trip."""
    S = np.asarray(S, dtype=np.float64)
    return float(position_error(inverse_transform(transform(S, basis), basis), S).mean())


def reconstruction_sweep(examples, basis: PcaBasis, mode_counts) -> list[tuple[int, float, float]]:
    """Per ``r``: mean and std over examples of the full-space position MSE
    after a reduce / map-back round trip."""
    counts = [int(r) for r in mode_counts]
    if counts != sorted(counts):
        raise ValueError("mode_counts must be sorted ascending")
    out = []
    for r in counts:
        b = basis.with_modes(min(r, basis.modes.shape[1]))
        errs = np.array([reconstruction_mse(S, b) for S in examples])
        out.append((r, float(errs.mean()), float(errs.std())))
    return out


def save_basis(basis: PcaBasis, path) -> str:
    meta = {
        "kind": "basis",
        "r": basis.r,
        "rows": basis.rows,
        "degenerate": basis.degenerate,
        "fingerprint": basis.fingerprint(),
        "info": basis.info,
    }
    blocks = {"modes": basis.modes, "mean_row": basis.mean_row, "eigenvalues": basis.eigenvalues}
    return container.write(path, meta, blocks)


def load_basis(path) -> PcaBasis:
    meta, blocks = container.read(path)
    if meta.get("kind") != "basis":
        raise container.FormatError(f"{path} is not a basis file (kind={meta.get('kind')!r})")
    return PcaBasis(blocks["modes"], blocks["mean_row"], blocks["eigenvalues"], meta["r"],
                    meta.get("rows", 0), meta.get("degenerate", False), meta.get("info", {}))
