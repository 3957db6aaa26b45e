"""Regression learners: IRLS GLMs, saturated stratum means and a discrete
cross-validated selector.

Designs are described by term strings over named frame columns:

=====================  ===============================================
``"x"``                main effect (dummy-coded if ``x`` is categorical)
``"a:b"``              pairwise interaction of the expanded columns
``"x^2"``              square of a numeric column
``"log|x|"``           ``log(|x| + 0.01)``
``"strata(a,b,...)"``  full cross-classification (saturated model)
=====================  ===============================================

An intercept is always included; a spec with no terms is intercept-only.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.special import expit, xlogy
from sklearn.model_selection import KFold, StratifiedKFold

logger = logging.getLogger(__name__)

__all__ = [
    "LearnerError",
    "EmptyStratumError",
    "DesignSpec",
    "CvEnsembleSpec",
    "GlmModel",
    "SaturatedModel",
    "fit_glm",
    "fit_saturated",
    "fit_learner",
    "cv_select",
    "cv_losses",
    "default_library",
]

#: IRLS stops when the largest coefficient change falls below this.
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
#: Link-scale coefficient cap applied under (quasi-)separation.
COEF_CAP = 40.0
#: Relative diagonal tolerance of the pivoted QR used to detect aliasing.
ALIAS_TOL = 1e-7
LOG_OFFSET = 0.01
_PROB_CLIP = 1e-15


class LearnerError(RuntimeError):
    """A learner could not be fit."""


class EmptyStratumError(LearnerError):
    """Prediction was requested for a stratum with no training rows."""


_STRATA_RE = re.compile(r"^strata\((.*)\)$")


@dataclass(frozen=True)
class DesignSpec:
    """A regression design: term strings, response column and family."""

    terms: tuple[str, ...] = ()
    response: str = "y"
    family: str = "binomial"
    name: str | None = None

    def __post_init__(self):
        if self.family not in ("binomial", "gaussian"):
            raise ValueError(f"unknown family {self.family!r}")
        terms = tuple(t.replace(" ", "") for t in self.terms if t.strip() not in ("1", "intercept"))
        object.__setattr__(self, "terms", terms)
        strata = [t for t in terms if _STRATA_RE.match(t)]
        if strata and len(terms) > 1:
            raise ValueError("a strata(...) term cannot be combined with other terms")

    @property
    def label(self) -> str:
        return self.name or ("intercept" if not self.terms else " + ".join(self.terms))

    @property
    def strata(self) -> tuple[str, ...] | None:
        if len(self.terms) == 1:
            m = _STRATA_RE.match(self.terms[0])
            if m:
                return tuple(c for c in m.group(1).split(",") if c)
        return None

    def columns(self) -> list[str]:
        """Frame columns referenced by the design."""
        out: list[str] = []
        for t in self.terms:
            m = _STRATA_RE.match(t)
            names = m.group(1).split(",") if m else [_base(p) for p in t.split(":")]
            out.extend(n for n in names if n and n not in out)
        return out

    def with_response(self, response: str) -> "DesignSpec":
        return DesignSpec(self.terms, response, self.family, self.name)

    def to_dict(self) -> dict:
        return {"terms": list(self.terms), "response": self.response, "family": self.family, "name": self.name}

    @classmethod
    def from_dict(cls, d) -> "DesignSpec":
        return cls(tuple(d.get("terms", ())), d.get("response", "y"), d.get("family", "binomial"), d.get("name"))


def _base(part: str) -> str:
    if part.endswith("^2"):
        return part[:-2]
    if part.startswith("log|") and part.endswith("|"):
        return part[4:-1]
    return part


class DesignEncoder:
    """Builds model matrices for a :class:`DesignSpec`, freezing the dummy
    coding of categorical columns at construction time."""

    def __init__(self, spec: DesignSpec, frame: pd.DataFrame):
        self.spec = spec
        self.levels: dict[str, list[str]] = {}
        for col in spec.columns():
            if col not in frame.columns:
                raise LearnerError(f"design references unknown column {col!r}")
            if frame[col].dtype == object:
                vals = frame[col].dropna().astype(str)
                self.levels[col] = sorted(vals.unique())

    def _expand(self, frame: pd.DataFrame, part: str) -> tuple[list[str], list[np.ndarray]]:
        if part.endswith("^2"):
            x = frame[part[:-2]].to_numpy(dtype=float)
            return [part], [x * x]
        if part.startswith("log|") and part.endswith("|"):
            x = frame[part[4:-1]].to_numpy(dtype=float)
            return [part], [np.log(np.abs(x) + LOG_OFFSET)]
        if part in self.levels:
            vals = frame[part].to_numpy().astype(str)
            unknown = set(np.unique(vals)) - set(self.levels[part]) - {"None", "nan"}
            if unknown:
                raise EmptyStratumError(f"unseen level(s) {sorted(unknown)} of {part!r}")
            return ([f"{part}[{lv}]" for lv in self.levels[part][1:]],
                    [(vals == lv).astype(float) for lv in self.levels[part][1:]])
        return [part], [frame[part].to_numpy(dtype=float)]

    def matrix(self, frame: pd.DataFrame) -> tuple[np.ndarray, list[str]]:
        names, cols = ["(intercept)"], [np.ones(len(frame))]
        for term in self.spec.terms:
            parts = term.split(":")
            tn, tc = self._expand(frame, parts[0])
            for p in parts[1:]:
                pn, pc = self._expand(frame, p)
                tn = [f"{a}:{b}" for a in tn for b in pn]
                tc = [a * b for a in tc for b in pc]
            names.extend(tn)
            cols.extend(tc)
        return np.column_stack(cols), names


@dataclass(frozen=True)
class GlmModel:
    """A fitted GLM. Coefficients of aliased columns are reported as ``nan``
    and ignored in prediction."""

    spec: DesignSpec
    coef: np.ndarray
    names: tuple[str, ...]
    converged: bool
    n_iter: int
    deviance: float
    aliased: tuple[str, ...] = ()
    separated: bool = False
    encoder: DesignEncoder | None = field(default=None, repr=False, compare=False)

    def linear_predictor(self, X: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
        beta = np.where(np.isnan(self.coef), 0.0, self.coef)
        eta = X @ beta
        return eta if offset is None else eta + offset

    def predict_matrix(self, X: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
        eta = self.linear_predictor(X, offset)
        return expit(eta) if self.spec.family == "binomial" else eta

    def predict(self, frame: pd.DataFrame, offset: np.ndarray | None = None) -> np.ndarray:
        if self.encoder is None:
            raise LearnerError("model was fit from a raw matrix; use predict_matrix")
        X, _ = self.encoder.matrix(frame)
        return self.predict_matrix(X, offset)

    @property
    def diagnostics(self) -> dict:
        return {"learner": self.spec.label, "converged": self.converged, "n_iter": self.n_iter,
                "deviance": self.deviance, "aliased": list(self.aliased), "separated": self.separated}

    def to_dict(self) -> dict:
        return {**self.diagnostics,
                "coefficients": {n: (None if np.isnan(c) else float(c)) for n, c in zip(self.names, self.coef)}}


@dataclass(frozen=True)
class SaturatedModel:
    """Weighted stratum means over a cross-classification."""

    spec: DesignSpec
    strata: tuple[str, ...]
    means: dict
    counts: dict

    def _keys(self, frame: pd.DataFrame) -> list[tuple]:
        if not self.strata:
            return [()] * len(frame)
        cols = [_key_column(frame[c]) for c in self.strata]
        return list(zip(*cols))

    def predict(self, frame: pd.DataFrame, offset=None) -> np.ndarray:
        keys = self._keys(frame)
        uniq = {}
        out = np.empty(len(keys))
        for i, k in enumerate(keys):
            v = uniq.get(k)
            if v is None:
                if k not in self.means:
                    raise EmptyStratumError(f"no training rows in stratum {dict(zip(self.strata, k))}")
                v = uniq[k] = self.means[k]
            out[i] = v
        return out

    converged = True
    separated = False

    @property
    def diagnostics(self) -> dict:
        return {"learner": self.spec.label, "converged": True, "n_strata": len(self.means)}

    def to_dict(self) -> dict:
        return {**self.diagnostics,
                "strata": [{"key": [_jsonable(v) for v in k], "mean": float(self.means[k]), "n": int(self.counts[k])}
                           for k in sorted(self.means, key=repr)]}


def _key_column(s: pd.Series) -> list:
    if s.dtype == object:
        return s.astype(str).tolist()
    return s.to_numpy(dtype=float).tolist()


def _jsonable(v):
    return v if isinstance(v, str) else float(v)


def fit_saturated(strata: Sequence[str], response: str | np.ndarray, frame: pd.DataFrame,
                  weights: np.ndarray | None = None, family: str = "binomial") -> SaturatedModel:
    """Stratum-specific (weighted) response means.

    Parameters
    ----------
    strata : sequence of str
        Finite categorical columns to cross-classify; empty gives the global mean.
    response : str or ndarray
        Response column name or values aligned with ``frame``.
    weights : ndarray, optional
        Nonnegative row weights; zero-weight rows do not create strata.
    """
    strata = tuple(strata)
    y = frame[response].to_numpy(dtype=float) if isinstance(response, str) else np.asarray(response, float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    if not (w > 0).any():
        raise LearnerError("all weights are zero")
    keep = w > 0
    if strata:
        sub = frame.loc[keep, list(strata)]
        combined = np.zeros(len(sub), dtype=np.int64)
        col_uniques = []
        for c in strata:
            col = sub[c].astype(str) if sub[c].dtype == object else sub[c].astype(float)
            if col.isna().any():
                raise LearnerError("strata columns contain missing values")
            cc, uu = pd.factorize(col)
            combined = combined * len(uu) + cc
            col_uniques.append(uu)
        first, codes = np.unique(combined, return_inverse=True)
        uniques = []
        for key in first:
            parts = []
            for uu in reversed(col_uniques):
                key, r = divmod(int(key), len(uu))
                parts.append(uu[r])
            uniques.append(tuple(reversed(parts)))
        codes = codes.ravel()
    else:
        codes, uniques = np.zeros(int(keep.sum()), dtype=np.intp), [()]
    sw = np.bincount(codes, weights=w[keep], minlength=len(uniques))
    swy = np.bincount(codes, weights=w[keep] * y[keep], minlength=len(uniques))
    cnt = np.bincount(codes, minlength=len(uniques))
    means, counts = {}, {}
    for j, key in enumerate(uniques):
        key = key if isinstance(key, tuple) else (key,)
        key = tuple(k if isinstance(k, str) else float(k) for k in key)
        means[key] = swy[j] / sw[j]
        counts[key] = int(cnt[j])
    name = f"strata({','.join(strata)})"
    spec = DesignSpec((name,) if strata else (), response if isinstance(response, str) else "y", family)
    return SaturatedModel(spec, strata, means, counts)


def _alias_columns(X: np.ndarray) -> np.ndarray:
    """Indices of a maximal linearly independent subset of columns (pivoted QR)."""
    if X.shape[1] == 0:
        return np.arange(0)
    scale = np.sqrt((X * X).sum(axis=0))
    scale[scale == 0] = 1.0
    _, R, piv = scipy.linalg.qr(X / scale, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.arange(0)
    rank = int((d > ALIAS_TOL * d[0]).sum())
    return np.sort(piv[:rank])


def _solve_wls(X: np.ndarray, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    Xw = X * w[:, None]
    A = X.T @ Xw
    b = Xw.T @ z
    try:
        c = scipy.linalg.cho_factor(A, check_finite=False)
        return scipy.linalg.cho_solve(c, b, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return np.linalg.lstsq(A, b, rcond=None)[0]


def _binomial_deviance(y, mu, w):
    mu = np.clip(mu, _PROB_CLIP, 1 - _PROB_CLIP)
    return 2.0 * float(np.sum(w * (xlogy(y, y / mu) + xlogy(1 - y, (1 - y) / (1 - mu)))))


def irls(X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None, offset: np.ndarray | None = None,
         family: str = "binomial") -> tuple[np.ndarray, bool, int, float, np.ndarray, bool]:
    """Maximum-likelihood GLM fit on a raw design matrix.

    Returns ``(coef, converged, n_iter, deviance, kept_columns, separated)``
    where ``coef`` covers only ``kept_columns`` (aliased columns removed).
    """
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    off = np.zeros(n) if offset is None else np.asarray(offset, float)
    if np.any(w < 0):
        raise LearnerError("weights must be nonnegative")
    active = w > 0
    if not active.any():
        raise LearnerError("all weights are zero")
    X, y, w, off = X[active], np.asarray(y, float)[active], w[active], off[active]
    if family == "binomial" and (np.any(y < 0) or np.any(y > 1)):
        raise LearnerError("binomial responses must lie in [0, 1]")
    kept = _alias_columns(X)
    Xk = X[:, kept]
    if family == "gaussian":
        beta = _solve_wls(Xk, w, y - off) if kept.size else np.zeros(0)
        resid = y - off - Xk @ beta
        return beta, True, 1, float(np.sum(w * resid ** 2)), kept, False

    beta = np.zeros(kept.size)
    eta = off + Xk @ beta
    mu = expit(eta)
    dev = _binomial_deviance(y, mu, w)
    converged, separated, it = False, False, 0
    for it in range(1, IRLS_MAX_ITER + 1):
        var = np.maximum(mu * (1 - mu), 1e-12)
        z = (eta - off) + (y - mu) / var
        new = _solve_wls(Xk, w * var, z) if kept.size else beta
        step = new - beta
        # step halving guards against deviance increases far from the optimum
        for _ in range(30):
            cand = np.clip(beta + step, -COEF_CAP, COEF_CAP)
            eta_c = off + Xk @ cand
            mu_c = expit(eta_c)
            dev_c = _binomial_deviance(y, mu_c, w)
            if dev_c <= dev * (1 + 1e-12) + 1e-12:
                break
            step = step / 2
        delta = np.max(np.abs(cand - beta)) if kept.size else 0.0
        beta, eta, mu, dev = cand, eta_c, mu_c, dev_c
        if np.any(np.abs(beta) >= COEF_CAP):
            separated = True
        if delta < IRLS_TOL:
            converged = True
            break
    if separated:
        converged = False
        logger.debug("IRLS hit the coefficient cap (separation)")
    return beta, converged, it, dev, kept, separated


def fit_glm(spec: DesignSpec, frame: pd.DataFrame, y: np.ndarray | None = None,
            weights: np.ndarray | None = None, offset: np.ndarray | None = None,
            encoder: DesignEncoder | None = None, X: np.ndarray | None = None) -> GlmModel:
    """Fit ``spec`` by iteratively reweighted least squares.

    Parameters
    ----------
    spec : DesignSpec
    frame : DataFrame
        Rows to fit on; supplies the design columns and (unless ``y`` is given)
        the response column.
    y, weights, offset : ndarray, optional
        Response override, nonnegative row weights, link-scale offset.
    encoder, X : optional
        A prebuilt encoder and/or design matrix for ``frame`` (used by
        cross-validation to avoid rebuilding).

    Notes
    -----
    Aliased columns are dropped (reported in ``aliased``); non-convergence
    returns the last iterate with ``converged=False``. Coefficients are capped
    at ``|40|`` with ``separated=True``.
    """
    if spec.strata is not None:
        raise LearnerError("strata designs are fit with fit_saturated")
    if encoder is None:
        encoder = DesignEncoder(spec, frame)
    if X is None:
        X, names = encoder.matrix(frame)
    else:
        names = encoder.matrix(frame.iloc[:0])[1]
    yy = frame[spec.response].to_numpy(dtype=float) if y is None else np.asarray(y, float)
    beta, conv, it, dev, kept, sep = irls(X, yy, weights, offset, spec.family)
    coef = np.full(X.shape[1], np.nan)
    coef[kept] = beta
    aliased = tuple(n for j, n in enumerate(names) if j not in set(kept))
    return GlmModel(spec, coef, tuple(names), conv, it, dev, aliased, sep, encoder)


def fit_learner(spec: DesignSpec, frame: pd.DataFrame, y: np.ndarray | None = None,
                weights: np.ndarray | None = None):
    """Fit a design, routing ``strata(...)`` designs to :func:`fit_saturated`."""
    if spec.strata is not None:
        resp = spec.response if y is None else y
        return fit_saturated(spec.strata, resp, frame, weights, spec.family)
    return fit_glm(spec, frame, y, weights)


@dataclass(frozen=True)
class CvEnsembleSpec:
    """Discrete super learner: pick the candidate with the smallest V-fold CV loss."""

    candidates: tuple[DesignSpec, ...]
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValueError("candidate list must be nonempty")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")

    def with_response(self, response: str) -> "CvEnsembleSpec":
        return CvEnsembleSpec(tuple(c.with_response(response) for c in self.candidates), self.folds, self.seed)

    def to_dict(self) -> dict:
        return {"candidates": [c.to_dict() for c in self.candidates], "folds": self.folds, "seed": self.seed}


def _loss(family: str, y: np.ndarray, pred: np.ndarray) -> float:
    if family == "binomial":
        p = np.clip(pred, _PROB_CLIP, 1 - _PROB_CLIP)
        return float(-np.mean(xlogy(y, p) + xlogy(1 - y, 1 - p)))
    return float(np.mean((y - pred) ** 2))


def fold_indices(y: np.ndarray, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fold splits, stratified on the response when it is binary."""
    n = len(y)
    if folds > n:
        raise LearnerError(f"folds ({folds}) exceed the number of rows ({n})")
    binary = np.isin(y, (0.0, 1.0)).all()
    if binary and np.bincount(y.astype(int), minlength=2).min() >= folds:
        splitter = StratifiedKFold(folds, shuffle=True, random_state=seed)
        return list(splitter.split(np.zeros(n), y.astype(int)))
    return list(KFold(folds, shuffle=True, random_state=seed).split(np.zeros(n)))


def cv_losses(ensemble: CvEnsembleSpec, frame: pd.DataFrame, y: np.ndarray | None = None) -> np.ndarray:
    """Per-candidate mean cross-validated loss (``inf`` for candidates that fail on a fold)."""
    family = ensemble.candidates[0].family
    yy = frame[ensemble.candidates[0].response].to_numpy(dtype=float) if y is None else np.asarray(y, float)
    splits = fold_indices(yy, ensemble.folds, ensemble.seed)
    out = np.zeros(len(ensemble.candidates))
    for k, cand in enumerate(ensemble.candidates):
        if cand.strata is None:
            enc = DesignEncoder(cand, frame)
            X, _ = enc.matrix(frame)
        total = 0.0
        for train, test in splits:
            try:
                if cand.strata is not None:
                    m = fit_saturated(cand.strata, yy[train], frame.iloc[train], family=family)
                    pred = m.predict(frame.iloc[test])
                else:
                    beta, _, _, _, kept, _ = irls(X[train], yy[train], None, None, family)
                    eta = X[test][:, kept] @ beta
                    pred = expit(eta) if family == "binomial" else eta
                total += _loss(family, yy[test], pred) * len(test)
            except (LearnerError, np.linalg.LinAlgError, ValueError) as exc:
                logger.info("candidate %s failed on a fold: %s", cand.label, exc)
                total = np.inf
                break
        out[k] = total / len(yy)
    return out


def cv_select(ensemble: CvEnsembleSpec, frame: pd.DataFrame, y: np.ndarray | None = None):
    """Refit the minimum-CV-loss candidate on all rows (ties go to the earliest).

    The returned model carries ``cv_losses`` and ``selected`` attributes via
    :class:`SelectedModel`.
    """
    losses = cv_losses(ensemble, frame, y)
    if not np.isfinite(losses).any():
        raise LearnerError("every candidate failed cross-validation")
    best = int(np.argmin(losses))
    model = fit_learner(ensemble.candidates[best], frame, y)
    return SelectedModel(model, best, losses)


@dataclass(frozen=True)
class SelectedModel:
    """The refit winner of :func:`cv_select`."""

    model: object
    index: int
    losses: np.ndarray

    @property
    def spec(self) -> DesignSpec:
        return self.model.spec

    @property
    def converged(self) -> bool:
        return self.model.converged

    @property
    def separated(self) -> bool:
        return self.model.separated

    def predict(self, frame: pd.DataFrame, offset=None) -> np.ndarray:
        return self.model.predict(frame)

    @property
    def diagnostics(self) -> dict:
        return {**self.model.diagnostics, "selected": self.model.spec.label,
                "cv_losses": [None if not np.isfinite(v) else float(v) for v in self.losses]}

    def to_dict(self) -> dict:
        return {**self.model.to_dict(), "selected": self.model.spec.label,
                "cv_losses": [None if not np.isfinite(v) else float(v) for v in self.losses]}


def default_library(columns: Sequence[str], frame: pd.DataFrame, strata: Sequence[str] = (),
                    response: str = "y", family: str = "binomial", folds: int = 10, seed: int = 0) -> CvEnsembleSpec:
    """The fixed candidate set used in place of an R super learner library.

    Candidates, in tie-breaking order: intercept-only; main terms; main terms
    plus all pairwise interactions; main terms plus squares of numeric columns
    with more than two distinct values; saturated over ``strata``.
    """
    columns = list(columns)
    pairs = [f"{a}:{b}" for i, a in enumerate(columns) for b in columns[i + 1:]]
    squares = [f"{c}^2" for c in columns
               if frame[c].dtype != object and frame[c].nunique(dropna=True) > 2]
    cands = [
        DesignSpec((), response, family, "intercept"),
        DesignSpec(tuple(columns), response, family, "main"),
        DesignSpec(tuple(columns + pairs), response, family, "main+pairwise"),
        DesignSpec(tuple(columns + squares), response, family, "main+squares"),
    ]
    if strata:
        cands.append(DesignSpec((f"strata({','.join(strata)})",), response, family, "saturated"))
    return CvEnsembleSpec(tuple(cands), folds, seed)
