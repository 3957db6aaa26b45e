"""Estimators of embedded-regime values: IPW (unstabilised and
Horvitz-Thompson), ICE G-computation and longitudinal TMLE for two stages.

All estimators share a :class:`Workspace`, which caches the regime-independent
pieces of a fit (the treatment mechanism and the outcome regression on the
full history) so that evaluating D regimes or several estimator arms does not
refit them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .data import (EmbeddedRegime, KnownTable, SmartDesign, TrialDataset, allowable_masks,
                   condition_mask, follows_regime)
from .learners import (CvEnsembleSpec, DesignSpec, LearnerError, cv_select, default_library,
                       fit_glm, fit_learner, fit_saturated)

logger = logging.getLogger(__name__)

__all__ = [
    "EstimationError",
    "StageMechanism",
    "TreatmentMechanism",
    "FittedMechanism",
    "IceStack",
    "EstimateResult",
    "ArmConfig",
    "Workspace",
    "scale_outcome",
    "unscale_outcome",
    "cumulative_g",
    "ipw_estimate",
    "ice_gcomp_estimate",
    "tmle_estimate",
    "estimate_all",
    "ESTIMATORS",
]

ESTIMATORS = ("ipw_known", "ipw_saturated", "ipw_adjusted", "gcomp", "tmle")
DEFAULT_BOUND = 0.01
#: Initial ICE predictions are kept this far from 0 and 1 before taking logits.
Q_CLIP = 1e-10


class EstimationError(RuntimeError):
    """An estimator could not produce a value for a regime."""


# ---------------------------------------------------------------------------
# Outcome scaling
# ---------------------------------------------------------------------------

def scale_outcome(y, bounds: tuple[float, float]):
    """Map ``y`` from ``[a, b]`` to ``[0, 1]``; values outside are clipped with a warning."""
    a, b = float(bounds[0]), float(bounds[1])
    if not a < b:
        raise ValueError(f"degenerate outcome range ({a}, {b})")
    y = np.asarray(y, dtype=float)
    out = (y - a) / (b - a)
    if np.any((out < 0) | (out > 1)):
        logger.warning("outcome values outside the declared range were clipped")
        out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def unscale_outcome(s, bounds: tuple[float, float]):
    a, b = float(bounds[0]), float(bounds[1])
    if not a < b:
        raise ValueError(f"degenerate outcome range ({a}, {b})")
    out = a + (b - a) * np.asarray(s, dtype=float)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Adjustment sets
# ---------------------------------------------------------------------------

def g_columns(design: SmartDesign, stage: int, adjustment: str) -> list[str]:
    """Covariates of the stage-``stage`` treatment model."""
    s = design.schema
    if adjustment == "minimal":
        cols = list(s.tailoring1)
        if stage == 2:
            cols += [s.stage1_treatment] + list(s.tailoring2)
    elif adjustment == "full":
        cols = [c for c in s.history(stage) if c not in s.absorbing]
    else:
        raise ValueError(f"unknown adjustment set {adjustment!r}")
    return list(dict.fromkeys(cols))


def q_columns(design: SmartDesign, stage: int, adjustment: str) -> list[str]:
    """Covariates of the ICE regression whose pseudo-outcome follows stage ``stage``.

    ``stage=2`` is the regression of Y on the history through A(2);
    ``stage=1`` is the regression of the stage-2 pseudo-outcome on (X(1), A(1)).
    """
    s = design.schema
    if adjustment == "minimal":
        cols = list(s.tailoring1) + [s.stage1_treatment]
        if stage == 2:
            cols += list(s.tailoring2) + [s.stage2_treatment]
    elif adjustment == "full":
        cols = list(s.baseline) + [s.stage1_treatment]
        if stage == 2:
            cols += [c for c in s.timevarying if c not in s.absorbing] + [s.stage2_treatment]
    else:
        raise ValueError(f"unknown adjustment set {adjustment!r}")
    return list(dict.fromkeys(cols))


def _strata_columns(design: SmartDesign, cols: Sequence[str]) -> list[str]:
    """The finite-valued columns among ``cols``."""
    s = design.schema
    finite = set(s.treatments) | set(s.tailoring1) | set(s.tailoring2) | set(s.domains)
    if s.response:
        finite.add(s.response)
    return [c for c in cols if c in finite]


def _make_learner(kind, cols: list[str], design: SmartDesign, frame: pd.DataFrame, response: str,
                  folds: int, seed: int):
    if isinstance(kind, (DesignSpec, CvEnsembleSpec)):
        return kind.with_response(response)
    if kind == "glm":
        return DesignSpec(tuple(cols), response, "binomial", "main")
    if kind == "saturated":
        strata = _strata_columns(design, cols)
        if len(strata) != len(cols):
            raise EstimationError(f"saturated learner needs finite columns; {sorted(set(cols) - set(strata))} are not")
        return DesignSpec((f"strata({','.join(cols)})",), response, "binomial", "saturated")
    if kind == "library":
        return default_library(cols, frame, _strata_columns(design, cols), response, "binomial", folds, seed)
    raise ValueError(f"unknown learner {kind!r}")


def _fit(learner, frame: pd.DataFrame, y: np.ndarray):
    if isinstance(learner, CvEnsembleSpec):
        if len(frame) < learner.folds:
            raise EstimationError(f"{len(frame)} rows is fewer than {learner.folds} folds")
        return cv_select(learner, frame, y)
    return fit_learner(learner, frame, y)


# ---------------------------------------------------------------------------
# Treatment mechanism
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageMechanism:
    """How one stage's treatment probabilities are obtained.

    ``source`` is ``"known"`` (design constants), ``"saturated"`` (stratum
    proportions over ``adjustment``) or ``"modeled"`` (per-level logistic
    models over ``adjustment``; ``learner`` is ``"glm"``, ``"library"`` or a
    spec).
    """

    source: str = "known"
    adjustment: str = "minimal"
    learner: object = "glm"

    def __post_init__(self):
        if self.source not in ("known", "saturated", "modeled"):
            raise ValueError(f"unknown mechanism source {self.source!r}")


@dataclass(frozen=True)
class TreatmentMechanism:
    """Per-stage treatment mechanism plus the cumulative truncation bound.

    Stage-2 histories whose allowable set is a single level are deterministic:
    the forced level has probability exactly 1.
    """

    stage1: StageMechanism = StageMechanism()
    stage2: StageMechanism = StageMechanism()
    bound: float = DEFAULT_BOUND
    folds: int = 10
    seed: int = 0

    def stage(self, t: int) -> StageMechanism:
        return self.stage1 if t == 1 else self.stage2

    def fit(self, data: TrialDataset, design: SmartDesign) -> "FittedMechanism":
        tables, diags = {}, {}
        for t in (1, 2):
            tables[t], diags[t] = _fit_stage(data, design, t, self.stage(t), self.folds, self.seed)
        return FittedMechanism(self, tables[1], tables[2], diags)


def _fit_stage(data: TrialDataset, design: SmartDesign, t: int, sm: StageMechanism, folds: int, seed: int):
    """Probability of every level at each row's observed history (``nan`` where not allowed)."""
    s = design.schema
    frame = data.frame
    levels = s.levels(t)
    active = np.ones(data.n, bool) if t == 1 else ~data.voided
    probs = np.full((data.n, len(levels)), np.nan)
    allowed = np.zeros((data.n, len(levels)), bool)
    for mask, lv in allowable_masks(design.rules, frame, t, rows=active):
        for level in lv:
            allowed[mask & active, levels.index(level)] = True
    n_allowed = allowed.sum(axis=1)
    forced = active & (n_allowed == 1)
    probs[forced] = np.where(allowed[forced], 1.0, np.nan)
    free = active & (n_allowed > 1)
    diag: dict = {"source": sm.source, "adjustment": sm.adjustment, "models": {}}

    if sm.source == "known":
        if design.known is None:
            raise EstimationError("known treatment mechanism requested but the design declares none")
        for when, table in design.known.rows(t):
            m = condition_mask(frame, when) & free
            for level, p in table.items():
                probs[m, levels.index(str(level))] = p
        missing = free[:, None] & allowed & np.isnan(probs)
        if missing.any():
            raise EstimationError(f"known stage-{t} probabilities do not cover row {int(np.flatnonzero(missing.any(1))[0])}")
        return probs, diag

    cols = g_columns(design, t, sm.adjustment)
    a = data.treatment(t).astype(str)
    for j, level in enumerate(levels):
        rows = free & allowed[:, j]
        if not rows.any():
            continue
        sub = frame.loc[rows]
        y = (a[rows] == level).astype(float)
        if sm.source == "saturated":
            if len(_strata_columns(design, cols)) != len(cols):
                raise EstimationError("saturated mechanism needs finite adjustment columns")
            model = fit_saturated(cols, y, sub)
        else:
            learner = _make_learner(sm.learner, cols, design, sub, "_a", folds, seed + 7919 * t + j)
            model = _fit(learner, sub, y)
        probs[rows, j] = model.predict(sub)
        diag["models"][level] = model.diagnostics
    # renormalise over the allowed set (one-vs-rest fits need not sum to one)
    if free.any():
        sub = probs[free]
        sub = np.where(allowed[free], sub, np.nan)
        total = np.nansum(sub, axis=1, keepdims=True)
        probs[free] = sub / total
    return probs, diag


@dataclass
class FittedMechanism:
    """Level probabilities at each observed history for both stages."""

    spec: TreatmentMechanism
    stage1: np.ndarray
    stage2: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def prob(self, t: int, assigned: np.ndarray, levels: Sequence[str]) -> np.ndarray:
        """Probability of the regime-assigned level; ``nan`` where unassigned or not allowed."""
        table = self.stage1 if t == 1 else self.stage2
        idx = {lv: j for j, lv in enumerate(levels)}
        out = np.full(len(assigned), np.nan)
        for lv, j in idx.items():
            m = assigned == lv
            out[m] = table[m, j]
        return out


def cumulative_g(data: TrialDataset, regime: EmbeddedRegime, through_stage: int,
                 mech: FittedMechanism) -> tuple[np.ndarray, np.ndarray]:
    """Truncated cumulative probability of the regime's treatments at observed histories.

    Returns ``(g, truncated)``. Stages voided by an absorbing event and
    undefined factors (histories the regime cannot reach) contribute 1.
    """
    s = data.schema
    g1 = mech.prob(1, regime.assign(data.frame, 1), s.stage1_levels)
    cum = np.where(np.isnan(g1), 1.0, g1)
    if through_stage >= 2:
        g2 = mech.prob(2, regime.assign(data.frame, 2), s.stage2_levels)
        g2 = np.where(np.isnan(g2) | data.voided, 1.0, g2)
        cum = cum * g2
    bound = mech.spec.bound
    truncated = cum < bound
    return np.maximum(cum, bound), truncated


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class IceStack:
    """Initial and targeted ICE predictions at the regime (scaled outcome).

    ``q3`` is the outcome regression at (history, A(1)=d1, A(2)=d2);
    ``q2`` the regression of that pseudo-outcome on (X(1), A(1)=d1).
    """

    q3_init: np.ndarray
    q2_init: np.ndarray
    q3_star: np.ndarray | None = None
    q2_star: np.ndarray | None = None
    eps: tuple[float, float] | None = None
    converged: tuple[bool, bool] | None = None
    bounds: tuple[float, float] = (0.0, 1.0)
    #: (follows through 1, follows through 2, cumulative g1, cumulative g2)
    weights: tuple | None = field(default=None, repr=False)


@dataclass
class EstimateResult:
    """One estimator applied to one regime.

    ``ic`` and ``variance`` are ``None`` for G-computation, which carries no
    inference.
    """

    regime_id: str
    estimator: str
    psi: float
    ic: np.ndarray | None
    variance: float | None
    n: int
    n_follow: int
    diagnostics: dict = field(default_factory=dict)
    stack: IceStack | None = field(default=None, repr=False)

    @property
    def se(self) -> float | None:
        return None if self.variance is None else float(np.sqrt(self.variance))


def _follow(data: TrialDataset, regime: EmbeddedRegime):
    return follows_regime(data, regime, 1), follows_regime(data, regime, 2)


# ---------------------------------------------------------------------------
# IPW
# ---------------------------------------------------------------------------

def ipw_estimate(data: TrialDataset, regime: EmbeddedRegime, mech: FittedMechanism,
                 stabilized: bool = False, estimator: str = "ipw") -> EstimateResult:
    """Inverse-probability-weighted value of ``regime`` on the original outcome scale.

    Parameters
    ----------
    stabilized : bool
        ``False`` gives ``mean(I w Y)``; ``True`` the Horvitz-Thompson ratio
        ``sum(I w Y) / sum(I w)``.
    """
    _, f2 = _follow(data, regime)
    n_follow = int(f2.sum())
    if n_follow == 0:
        raise EstimationError(f"no records follow regime {regime.id}")
    cg, trunc = cumulative_g(data, regime, 2, mech)
    iw = np.where(f2, 1.0 / cg, 0.0)
    y = data.y
    n = data.n
    if stabilized:
        psi = float(np.sum(iw * y) / np.sum(iw))
        ic = iw * (y - psi)
    else:
        psi = float(np.mean(iw * y))
        ic = iw * y - psi
    diag = {
        "min_weight": float(iw[f2].min()),
        "max_weight": float(iw[f2].max()),
        "n_truncated": int((trunc & f2).sum()),
        "stabilized": bool(stabilized),
    }
    if diag["n_truncated"] == n_follow:
        diag["all_truncated"] = True
        logger.warning("every follower of regime %s hit the truncation bound", regime.id)
    return EstimateResult(regime.id, estimator, psi, ic, float(np.mean(ic ** 2) / n), n, n_follow, diag)


# ---------------------------------------------------------------------------
# ICE: G-computation and TMLE
# ---------------------------------------------------------------------------

def counterfactual_frame(data: TrialDataset, regime: EmbeddedRegime) -> tuple[pd.DataFrame, np.ndarray, np.ndarray]:
    """Observed histories with treatments set to the regime.

    The stage-2 rule is evaluated on Z(2) with A(1) already set to d1.
    Returns the frame plus the assigned levels at both stages.
    """
    s = data.schema
    cf = data.frame.copy()
    d1 = regime.assign(cf, 1)
    if np.any(d1 == None):  # noqa: E711
        raise EstimationError(f"regime {regime.id} leaves some stage-1 strata unassigned")
    cf[s.stage1_treatment] = d1
    d2 = regime.assign(cf, 2)
    cf[s.stage2_treatment] = np.where(data.voided, None, d2)
    return cf, d1, d2


def _fluctuate(q: np.ndarray, y: np.ndarray, w: np.ndarray, rows: np.ndarray):
    """Intercept-only weighted logistic fit with offset ``logit(q)`` among ``rows``."""
    off = logit(q)
    if not rows.any():
        return 0.0, True
    # A score already at the clipping resolution cannot be improved; fitting
    # would only chase epsilon towards +-inf for degenerate (all-0/all-1) strata.
    wr = w[rows]
    if abs(np.sum(wr * (y[rows] - q[rows]))) <= 10 * Q_CLIP * np.sum(wr):
        return 0.0, True
    spec = DesignSpec((), "_y", "binomial", "fluctuation")
    frame = pd.DataFrame(index=np.arange(int(rows.sum())))
    m = fit_glm(spec, frame, y=y[rows], weights=w[rows], offset=off[rows], X=np.ones((int(rows.sum()), 1)))
    eps = float(m.coef[0]) if not np.isnan(m.coef[0]) else 0.0
    return eps, m.converged


@dataclass(frozen=True)
class ArmConfig:
    """One estimator arm of an analysis or experiment.

    Parameters
    ----------
    estimator : {"ipw_known", "ipw_saturated", "ipw_adjusted", "gcomp", "tmle"}
    adjustment : {"minimal", "full"}
        Covariates of the ICE regressions (``gcomp``/``tmle``).
    g_adjustment : {"minimal", "full"}, optional
        Covariates of the treatment mechanism; defaults to ``minimal`` for
        ``ipw_saturated`` and ``full`` for ``ipw_adjusted``/``tmle``.
    g_source : {"known", "saturated", "modeled"}, optional
        Mechanism source for ``tmle`` (default ``modeled``).
    learner : {"library", "saturated", "glm"}
        ICE learner; ``library`` is the cross-validated discrete selector.
    g_learner : {"glm", "library"}
        Learner of modeled mechanisms.
    """

    name: str
    estimator: str
    adjustment: str = "full"
    g_adjustment: str | None = None
    g_source: str | None = None
    learner: str = "library"
    g_learner: str = "glm"
    stabilized: bool = False
    bound: float = DEFAULT_BOUND
    folds: int = 10

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        for attr in ("adjustment", "g_adjustment"):
            v = getattr(self, attr)
            if v is not None and v not in ("minimal", "full"):
                raise ValueError(f"{attr} must be 'minimal' or 'full', got {v!r}")
        if not 0 < self.bound < 1:
            raise ValueError("truncation bound must lie in (0, 1)")

    @property
    def uses_ice(self) -> bool:
        return self.estimator in ("gcomp", "tmle")

    def mechanism(self, seed: int = 0) -> TreatmentMechanism | None:
        if self.estimator == "gcomp":
            return None
        source = {"ipw_known": "known", "ipw_saturated": "saturated", "ipw_adjusted": "modeled"}.get(
            self.estimator, self.g_source or "modeled")
        adj = self.g_adjustment or ("minimal" if source in ("known", "saturated") else "full")
        sm = StageMechanism(source, adj, self.g_learner)
        return TreatmentMechanism(sm, sm, self.bound, self.folds, seed)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArmConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown arm field(s): {sorted(unknown)}")
        d = dict(d)
        d.setdefault("name", d.get("estimator"))
        return cls(**d)


class Workspace:
    """Caches regime-independent fits for one dataset.

    Parameters
    ----------
    data : TrialDataset
        Complete-case data.
    design : SmartDesign
    seed : int
        Seed for cross-validation fold assignment.
    """

    def __init__(self, data: TrialDataset, design: SmartDesign, seed: int = 0):
        if np.isnan(data.y).any():
            raise EstimationError("outcomes are missing; apply complete_case_filter first")
        self.data = data
        self.design = design
        self.seed = int(seed)
        self.ys = scale_outcome(data.y, data.schema.outcome_range)
        self._mech: dict = {}
        self._q3: dict = {}

    def mechanism(self, spec: TreatmentMechanism) -> FittedMechanism:
        if spec not in self._mech:
            self._mech[spec] = spec.fit(self.data, self.design)
        return self._mech[spec]

    def outcome_model(self, learner, adjustment: str, folds: int = 10):
        """Regression of the scaled outcome on the history through A(2), among non-voided rows."""
        key = (learner if isinstance(learner, str) else repr(learner), adjustment, folds)
        if key not in self._q3:
            rows = ~self.data.voided
            if not rows.any():
                self._q3[key] = None
            else:
                cols = q_columns(self.design, 2, adjustment)
                sub = self.data.frame.loc[rows]
                spec = _make_learner(learner, cols, self.design, sub, "_q", folds, self.seed)
                self._q3[key] = _fit(spec, sub, self.ys[rows])
        return self._q3[key]

    # -- per regime -------------------------------------------------------

    def ice(self, regime: EmbeddedRegime, learner, adjustment: str, folds: int = 10,
            mech: FittedMechanism | None = None) -> tuple[IceStack, dict]:
        """Run the ICE recursion; with ``mech`` each regression is targeted first."""
        data, s = self.data, self.data.schema
        voided = data.voided
        cf, d1, _ = counterfactual_frame(data, regime)
        diag: dict = {}
        q3 = self.ys.copy()  # deterministic Q: voided rows keep their observed outcome
        model3 = self.outcome_model(learner, adjustment, folds)
        live = ~voided
        if live.any():
            q3[live] = model3.predict(cf.loc[live])
        diag["q3_learner"] = model3.diagnostics if model3 is not None else None
        q3_init = q3.copy()

        if mech is not None:
            f1, f2 = _follow(data, regime)
            cg2, tr2 = cumulative_g(data, regime, 2, mech)
            cg1, tr1 = cumulative_g(data, regime, 1, mech)
            q3c = np.clip(q3_init, Q_CLIP, 1 - Q_CLIP)
            rows = f2 & live
            eps3, conv3 = _fluctuate(q3c, self.ys, 1.0 / cg2, rows)
            q3 = np.where(live, expit(logit(q3c) + eps3), self.ys)
        # stage-1 regression of the pseudo-outcome on (X(1), A(1)), predicted at A(1)=d1
        cols = q_columns(self.design, 1, adjustment)
        spec2 = _make_learner(learner, cols, self.design, data.frame, "_q", folds, self.seed + 1)
        model2 = _fit(spec2, data.frame, q3)
        q2_init = model2.predict(cf)
        diag["q2_learner"] = model2.diagnostics
        stack = IceStack(q3_init, q2_init, bounds=s.outcome_range)
        if mech is None:
            return stack, diag

        q2c = np.clip(q2_init, Q_CLIP, 1 - Q_CLIP)
        eps2, conv2 = _fluctuate(q2c, q3, 1.0 / cg1, f1)
        q2 = expit(logit(q2c) + eps2)
        stack.q3_star, stack.q2_star = q3, q2
        stack.eps, stack.converged = (eps3, eps2), (conv3, conv2)
        diag.update({
            "epsilon": [eps3, eps2],
            "fluctuation_converged": [bool(conv3), bool(conv2)],
            "min_weight": float((1.0 / cg2)[f2].min()) if f2.any() else None,
            "max_weight": float((1.0 / cg2)[f2].max()) if f2.any() else None,
            "n_truncated": int((tr2 & f2).sum()),
        })
        stack.weights = (f1, f2, cg1, cg2)
        return stack, diag


def ice_gcomp_estimate(ws: Workspace, regime: EmbeddedRegime, learner="library", adjustment: str = "full",
                       folds: int = 10, estimator: str = "gcomp") -> EstimateResult:
    """ICE G-computation; returns no influence curve or variance."""
    stack, diag = ws.ice(regime, learner, adjustment, folds)
    psi = unscale_outcome(float(np.mean(stack.q2_init)), ws.data.schema.outcome_range)
    n_follow = int(follows_regime(ws.data, regime, 2).sum())
    return EstimateResult(regime.id, estimator, float(psi), None, None, ws.data.n, n_follow, diag, stack)


def tmle_estimate(ws: Workspace, regime: EmbeddedRegime, mech: FittedMechanism, learner="library",
                  adjustment: str = "full", folds: int = 10, estimator: str = "tmle") -> EstimateResult:
    """Longitudinal TMLE with logistic fluctuations weighted by inverse cumulative g."""
    from .inference import assemble_eic

    stack, diag = ws.ice(regime, learner, adjustment, folds, mech)
    f1, f2, cg1, cg2 = stack.weights
    if not f2.any():
        raise EstimationError(f"no records follow regime {regime.id}")
    psi_s = float(np.mean(stack.q2_star))
    psi = float(unscale_outcome(psi_s, ws.data.schema.outcome_range))
    ic = assemble_eic(ws.ys, stack, f1, f2, cg1, cg2, psi)
    diag["mean_eic"] = float(np.mean(ic))
    return EstimateResult(regime.id, estimator, psi, ic, float(np.mean(ic ** 2) / ws.data.n),
                          ws.data.n, int(f2.sum()), diag, stack)


def estimate_arm(ws: Workspace, regimes: Sequence[EmbeddedRegime], arm: ArmConfig) -> list[EstimateResult]:
    """Apply one estimator arm to every regime, sharing mechanism and outcome fits."""
    spec = arm.mechanism(ws.seed)
    mech = ws.mechanism(spec) if spec is not None else None
    out = []
    for r in regimes:
        if arm.estimator == "gcomp":
            res = ice_gcomp_estimate(ws, r, arm.learner, arm.adjustment, arm.folds, arm.name)
        elif arm.estimator == "tmle":
            res = tmle_estimate(ws, r, mech, arm.learner, arm.adjustment, arm.folds, arm.name)
        else:
            res = ipw_estimate(ws.data, r, mech, arm.stabilized, arm.name)
        out.append(res)
    if mech is not None and out:
        out[0].diagnostics["mechanism"] = mech.diagnostics
    return out


def estimate_all(data: TrialDataset, design: SmartDesign, regimes: Sequence[EmbeddedRegime],
                 arms: Sequence[ArmConfig], seed: int = 0) -> dict[str, list[EstimateResult]]:
    """Every arm on every regime, keyed by arm name."""
    ws = Workspace(data, design, seed)
    return {arm.name: estimate_arm(ws, regimes, arm) for arm in arms}
