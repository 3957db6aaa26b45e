"""Influence-curve inference: EIC assembly, Wald intervals, simultaneous
max-|Z| intervals and contrasts between regimes."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

logger = logging.getLogger(__name__)

__all__ = [
    "InferenceError",
    "RegimeValueVector",
    "IntervalSet",
    "assemble_eic",
    "wald_ci",
    "individual_ci",
    "repair_correlation",
    "simultaneous_quantile",
    "simultaneous_ci",
    "contrast",
    "simultaneous_contrasts",
    "DEFAULT_DRAWS",
]

DEFAULT_DRAWS = 100_000
#: Perturbation above which a PSD repair of the correlation matrix is flagged.
REPAIR_FLAG_TOL = 1e-8
_CHUNK = 20_000


class InferenceError(ValueError):
    pass


def assemble_eic(ys: np.ndarray, stack, follow1: np.ndarray, follow2: np.ndarray,
                 cg1: np.ndarray, cg2: np.ndarray, psi: float) -> np.ndarray:
    """Efficient influence curve of a two-stage regime value at targeted fits.

    Parameters
    ----------
    ys : ndarray
        Outcome on the [0, 1] scale.
    stack : IceStack
        Targeted predictions ``q3_star`` (at the regime's treatments) and
        ``q2_star``, and the outcome range used for scaling.
    follow1, follow2 : ndarray of bool
        Regime-following indicators through stages 1 and 2.
    cg1, cg2 : ndarray
        Truncated cumulative treatment probabilities.
    psi : float
        Estimate on the original outcome scale.

    Returns
    -------
    ndarray
        Per-observation EIC on the original outcome scale.
    """
    a, b = stack.bounds
    psi_s = (psi - a) / (b - a)
    q3, q2 = stack.q3_star, stack.q2_star
    term2 = np.where(follow2, (ys - q3) / cg2, 0.0)
    term1 = np.where(follow1, (q3 - q2) / cg1, 0.0)
    return (b - a) * (term2 + term1 + q2 - psi_s)


@dataclass(frozen=True)
class RegimeValueVector:
    """Stacked estimates and influence curves for D regimes."""

    ids: tuple[str, ...]
    psi: np.ndarray
    ic: np.ndarray

    def __post_init__(self):
        ic = np.asarray(self.ic, dtype=float)
        if ic.ndim == 1:
            ic = ic[:, None]
        object.__setattr__(self, "ic", ic)
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float))
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if ic.shape[1] != len(self.ids) or len(self.psi) != len(self.ids):
            raise InferenceError("ids, psi and IC columns must have equal length")

    @classmethod
    def from_results(cls, results: Sequence) -> "RegimeValueVector":
        if any(r.ic is None for r in results):
            raise InferenceError("every result needs influence-curve values")
        return cls(tuple(r.regime_id for r in results), np.array([r.psi for r in results]),
                   np.column_stack([r.ic for r in results]))

    @property
    def n(self) -> int:
        return self.ic.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        """Covariance of the ICs (uncentred second moment, matching ``mean(IC**2)``)."""
        return self.ic.T @ self.ic / self.n

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma) / self.n)

    @property
    def rho(self) -> np.ndarray:
        s = self.sigma
        d = np.sqrt(np.diag(s))
        with np.errstate(invalid="ignore", divide="ignore"):
            r = s / np.outer(d, d)
        r[~np.isfinite(r)] = 0.0
        np.fill_diagonal(r, 1.0)
        return np.clip(r, -1.0, 1.0)


@dataclass(frozen=True)
class IntervalSet:
    """Intervals for several regimes (or contrasts) at a common critical value."""

    ids: tuple[str, ...]
    psi: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    kind: str
    critical: float
    flags: dict = field(default_factory=dict)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def rows(self) -> list[dict]:
        return [{"id": i, "estimate": float(p), "lower": float(lo), "upper": float(hi),
                 "critical": float(self.critical), "kind": self.kind, "level": self.level}
                for i, p, lo, hi in zip(self.ids, self.psi, self.lower, self.upper)]


def _z(level: float) -> float:
    if not 0 < level < 1:
        raise InferenceError(f"level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2))


def wald_ci(psi: float, ic: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    """``psi -/+ z * sigma / sqrt(n)`` with ``sigma**2 = mean(ic**2)``."""
    ic = np.asarray(ic, dtype=float)
    n = ic.size
    if n < 2:
        raise InferenceError("at least two observations are needed")
    sigma = float(np.sqrt(np.mean(ic ** 2)))
    if sigma == 0:
        warnings.warn("influence curve has zero variance; interval is degenerate", stacklevel=2)
    half = _z(level) * sigma / np.sqrt(n)
    return psi - half, psi + half


def individual_ci(vec: RegimeValueVector, level: float = 0.95) -> IntervalSet:
    z = _z(level)
    half = z * vec.se
    return IntervalSet(vec.ids, vec.psi, vec.psi - half, vec.psi + half, level, "individual", z)


def repair_correlation(rho: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest-in-spirit PSD correlation: clip negative eigenvalues, reset the diagonal to 1.

    Returns the repaired matrix and the max absolute perturbation.
    """
    rho = (np.asarray(rho, dtype=float) + np.asarray(rho, dtype=float).T) / 2
    w, v = np.linalg.eigh(rho)
    if w.min() >= 0:
        return rho, 0.0
    fixed = (v * np.clip(w, 0, None)) @ v.T
    d = np.sqrt(np.diag(fixed))
    d[d == 0] = 1.0
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return fixed, float(np.max(np.abs(fixed - rho)))


def simultaneous_quantile(rho: np.ndarray, level: float = 0.95, draws: int = DEFAULT_DRAWS,
                          seed: int = 0, degenerate: np.ndarray | None = None) -> tuple[float, dict]:
    """Empirical ``level``-quantile of ``max_j |Z_j|`` for ``Z ~ N(0, rho)``.

    Columns flagged ``degenerate`` contribute ``Z_j = 0``. Draws are generated
    in fixed-size chunks from a single seeded stream so the result depends on
    ``(rho, level, draws, seed)`` only.
    """
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    D = rho.shape[0]
    flags: dict = {}
    keep = np.ones(D, bool) if degenerate is None else ~np.asarray(degenerate, bool)
    if not keep.all():
        flags["degenerate_columns"] = int((~keep).sum())
    if not keep.any():
        return 0.0, flags
    sub, perturb = repair_correlation(rho[np.ix_(keep, keep)])
    if perturb > REPAIR_FLAG_TOL:
        flags["psd_repair"] = perturb
    w, v = np.linalg.eigh(sub)
    factor = v * np.sqrt(np.clip(w, 0, None))
    if not np.all(np.isfinite(factor)):
        raise InferenceError("correlation factorisation failed")
    rng = np.random.default_rng(seed)
    maxabs = np.empty(draws)
    for start in range(0, draws, _CHUNK):
        m = min(_CHUNK, draws - start)
        z = rng.standard_normal((m, factor.shape[0])) @ factor.T
        maxabs[start:start + m] = np.abs(z).max(axis=1)
    return float(np.quantile(maxabs, level)), flags


def simultaneous_ci(vec: RegimeValueVector, level: float = 0.95, draws: int = DEFAULT_DRAWS,
                    seed: int = 0) -> IntervalSet:
    se = vec.se
    q, flags = simultaneous_quantile(vec.rho, level, draws, seed, degenerate=se == 0)
    half = q * se
    return IntervalSet(vec.ids, vec.psi, vec.psi - half, vec.psi + half, level, "simultaneous", q, flags)


def _contrast_vector(vec: RegimeValueVector, pairs: Sequence[tuple[int, int]]) -> RegimeValueVector:
    D = len(vec.ids)
    for i, j in pairs:
        if not (0 <= i < D and 0 <= j < D):
            raise InferenceError(f"contrast index out of range: ({i}, {j}) with D={D}")
    ids = tuple(f"{vec.ids[i]}-{vec.ids[j]}" for i, j in pairs)
    psi = np.array([vec.psi[i] - vec.psi[j] for i, j in pairs])
    ic = np.column_stack([vec.ic[:, i] - vec.ic[:, j] for i, j in pairs])
    return RegimeValueVector(ids, psi, ic)


def contrast(vec: RegimeValueVector, i: int, j: int, level: float = 0.95) -> IntervalSet:
    """Difference of regimes ``i`` and ``j`` (0-based) with a Wald interval from the IC difference."""
    return individual_ci(_contrast_vector(vec, [(i, j)]), level)


def simultaneous_contrasts(vec: RegimeValueVector, pairs: Sequence[tuple[int, int]], level: float = 0.95,
                           draws: int = DEFAULT_DRAWS, seed: int = 0) -> IntervalSet:
    """Max-|Z| simultaneous intervals over the requested contrasts."""
    return simultaneous_ci(_contrast_vector(vec, pairs), level, draws, seed)
