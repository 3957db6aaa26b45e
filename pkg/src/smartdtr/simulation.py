"""Simulation harness: data-generating processes, Monte-Carlo truth oracles
and the replicate experiment runner.

Seeds
-----
Every random stream is derived from ``(master seed, replicate index, tag)``
through :class:`numpy.random.SeedSequence` with
``spawn_key=(replicate, crc32(tag))``, so replicate ``r`` sees the same data
and the same fold splits whatever the execution order or worker count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .data import EmbeddedRegime, SmartDesign, TrialDataset
from .designs import ADAPTR_STAGE1, ADAPTR_STAGE2, adaptr_design, dgp1_design
from .estimators import ArmConfig, EstimationError, Workspace, estimate_arm
from .inference import RegimeValueVector, individual_ci, simultaneous_ci
from .io import atomic_write_text
from .learners import LearnerError

logger = logging.getLogger(__name__)

__all__ = [
    "derive_seed",
    "derive_rng",
    "Dgp1Config",
    "dgp1_sample",
    "dgp1_truth",
    "dgp1_truths",
    "SyntheticCovariates",
    "ResampleCovariates",
    "Dgp2StyleConfig",
    "dgp2_style_sample",
    "dgp2_style_truth",
    "dgp2_style_truths",
    "ExperimentGrid",
    "MetricsTable",
    "run_experiment",
    "dgp_from_dict",
    "compute_truths",
    "DGP1_C",
    "DGP2_C",
]

DGP1_C = tuple(1 - v for v in (.28, .26, .28, .3, .29, .3, .21, .2))
DGP2_C = tuple(1 - v for v in (.28, .26, .28, .3, .29, .3, .21, .2, .21, .18, .18, .22, .13, .22))
_TRUTH_CHUNK = 1_000_000


def derive_seed(master: int, replicate: int, tag: str) -> np.random.SeedSequence:
    """Seed sequence for stream ``tag`` of replicate ``replicate``."""
    return np.random.SeedSequence(int(master), spawn_key=(int(replicate), zlib.crc32(tag.encode())))


def derive_rng(master: int, replicate: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, replicate, tag))


def derive_int(master: int, replicate: int, tag: str) -> int:
    """A 32-bit integer seed (for libraries that take ints)."""
    return int(derive_seed(master, replicate, tag).generate_state(1)[0])


# ---------------------------------------------------------------------------
# DGP 1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dgp1Config:
    """The simple 8-regime SMART.

    ``c`` holds the outcome-law constants, one per (A(1), A(2)) path cell,
    indexed ``a1 + 2 * (a2 - 1)``.
    """

    n: int = 1692
    seed: int = 0
    c: tuple[float, ...] = DGP1_C

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        if len(self.c) != 8:
            raise ValueError("DGP 1 needs 8 constants")
        if not all(0 < v <= 1 for v in self.c):
            raise ValueError("constants must lie in (0, 1]")
        if self.n < 1:
            raise ValueError("n must be positive")

    def to_dict(self) -> dict:
        return {"name": "dgp1", "n": self.n, "seed": self.seed, "c": list(self.c)}


def _dgp1_prob(c: np.ndarray, x1, s2):
    with np.errstate(divide="ignore"):
        return expit(logit(c) + s2 + 0.5 * x1 ** 2 + np.log(np.abs(x1) + 0.01))


def dgp1_arrays(n: int, rng: np.random.Generator, c: Sequence[float] = DGP1_C) -> dict[str, np.ndarray]:
    c = np.asarray(c, dtype=float)
    x1 = rng.standard_normal(n)
    a1 = (rng.random(n) < 0.5).astype(int)
    l2 = (rng.random(n) < expit(x1 + a1)).astype(int)
    s2 = x1 + 2 * a1 + rng.standard_normal(n)
    coin = (rng.random(n) < 0.5).astype(int)
    a2 = np.where(l2 == 1, 1 + coin, 3 + coin)
    p = _dgp1_prob(c[a1 + 2 * (a2 - 1)], x1, s2)
    y = (rng.random(n) < p).astype(float)
    return {"x1": x1, "a1": a1, "l2": l2, "s2": s2, "a2": a2, "y": y}


def dgp1_sample(config: Dgp1Config, rng: np.random.Generator | None = None) -> TrialDataset:
    """Draw ``config.n`` records (from ``rng`` if given, else ``config.seed``)."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    arr = dgp1_arrays(config.n, rng, config.c)
    frame = pd.DataFrame({
        "x1": arr["x1"], "a1": arr["a1"].astype(str), "l2": arr["l2"].astype(float),
        "s2": arr["s2"], "a2": arr["a2"].astype(str), "y": arr["y"],
    })
    return TrialDataset(dgp1_design().schema, frame)


def dgp1_truths(regimes: Sequence[EmbeddedRegime], mc_size: int, seed: int,
                c: Sequence[float] = DGP1_C) -> list[tuple[float, float]]:
    """Counterfactual means ``(value, standard error)`` for each regime.

    Uses common random numbers across regimes and averages the outcome
    probability (rather than Bernoulli draws), which lowers MC variance.
    """
    c = np.asarray(c, dtype=float)
    rng = np.random.default_rng(seed)
    sums = np.zeros(len(regimes))
    sq = np.zeros(len(regimes))
    done = 0
    while done < mc_size:
        m = min(_TRUTH_CHUNK, mc_size - done)
        x1 = rng.standard_normal(m)
        u = rng.random(m)
        e = rng.standard_normal(m)
        for k, reg in enumerate(regimes):
            a1 = int(reg.stage1[()])
            l2 = (u < expit(x1 + a1)).astype(int)
            a2 = np.where(l2 == 1, int(reg.stage2[(1.0,)]), int(reg.stage2[(0.0,)]))
            p = _dgp1_prob(c[a1 + 2 * (a2 - 1)], x1, x1 + 2 * a1 + e)
            sums[k] += p.sum()
            sq[k] += (p * p).sum()
        done += m
    mean = sums / mc_size
    var = np.maximum(sq / mc_size - mean ** 2, 0.0)
    return [(float(v), float(np.sqrt(s / mc_size))) for v, s in zip(mean, var)]


def dgp1_truth(regime: EmbeddedRegime | int, mc_size: int, seed: int, c: Sequence[float] = DGP1_C):
    """Truth for one regime (object or 1-based index)."""
    if not isinstance(regime, EmbeddedRegime):
        regime = dgp1_design().regimes()[int(regime) - 1]
    return dgp1_truths([regime], mc_size, seed, c)[0]


# ---------------------------------------------------------------------------
# DGP-2 style (ADAPT-R shaped)
# ---------------------------------------------------------------------------

_DGP2_COLUMNS = ("sex", "age", "alcohol", "d2", "m2", "l2", "time_rerand")


@dataclass(frozen=True)
class SyntheticCovariates:
    """Independent covariate draws with documented ranges.

    ``sex`` is 1 for male with probability ``p_male``; ``age`` is uniform on
    the integers ``age_range``; ``alcohol`` takes levels 0-3 with
    ``alcohol_probs``; death and transfer are mutually exclusive with
    probabilities ``p_death`` and ``p_transfer``; among the rest, ``l2`` is
    Bernoulli(``p_lapse``) and ``time_rerand`` uniform on ``time_range`` days.
    Time-varying covariates are missing after death or transfer.
    """

    p_male: float = 0.4
    age_range: tuple[int, int] = (18, 60)
    alcohol_probs: tuple[float, ...] = (0.55, 0.2, 0.15, 0.1)
    p_death: float = 0.02
    p_transfer: float = 0.05
    p_lapse: float = 0.3
    time_range: tuple[float, float] = (0.0, 365.0)

    def draw(self, n: int, rng: np.random.Generator) -> pd.DataFrame:
        sex = (rng.random(n) < self.p_male).astype(float)
        age = rng.integers(self.age_range[0], self.age_range[1] + 1, n).astype(float)
        alcohol = rng.choice(len(self.alcohol_probs), size=n, p=np.asarray(self.alcohol_probs)).astype(float)
        u = rng.random(n)
        d2 = (u < self.p_death).astype(float)
        m2 = ((u >= self.p_death) & (u < self.p_death + self.p_transfer)).astype(float)
        l2 = (rng.random(n) < self.p_lapse).astype(float)
        time = rng.uniform(self.time_range[0], self.time_range[1], n)
        gone = (d2 + m2) > 0
        l2[gone] = np.nan
        time[gone] = np.nan
        return pd.DataFrame({"sex": sex, "age": age, "alcohol": alcohol, "d2": d2, "m2": m2,
                             "l2": l2, "time_rerand": time})

    def to_dict(self) -> dict:
        return {"kind": "synthetic", **{k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}}


@dataclass(frozen=True)
class ResampleCovariates:
    """Rows drawn with replacement from a covariate table (CSV path or frame)."""

    table: pd.DataFrame = field(compare=False)
    path: str | None = None

    def __post_init__(self):
        missing = [c for c in _DGP2_COLUMNS if c not in self.table.columns]
        if missing:
            raise ValueError(f"covariate source lacks column(s) {missing}")

    @classmethod
    def from_csv(cls, path: str) -> "ResampleCovariates":
        return cls(pd.read_csv(path), str(path))

    def draw(self, n: int, rng: np.random.Generator) -> pd.DataFrame:
        idx = rng.integers(0, len(self.table), n)
        return self.table.iloc[idx][list(_DGP2_COLUMNS)].reset_index(drop=True).astype(float)

    def to_dict(self) -> dict:
        return {"kind": "resample", "path": self.path,
                "sha256": hashlib.sha256(self.table.to_csv(index=False).encode()).hexdigest()}


@dataclass(frozen=True)
class Dgp2StyleConfig:
    """ADAPT-R-shaped generator with a pluggable covariate source.

    ``c`` holds 14 constants, one per reachable (A(1), A(2)) path cell:
    index ``a1 + 3 * a2`` for A(1) in (SOC, SMS, CCT) and A(2) in (SOC,
    SMS+CCT, Nav, Continue), then 12 and 13 for SMS and CCT followed by
    Discontinue. Setting ``zero_covariates`` drops the covariate terms of
    the main-branch outcome law.
    """

    n: int = 1692
    seed: int = 0
    c: tuple[float, ...] = DGP2_C
    source: object = field(default_factory=SyntheticCovariates)
    q1_base: float = 0.35
    q1_alcohol: float = 0.1
    zero_covariates: bool = False

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        if len(self.c) != 14:
            raise ValueError("the DGP-2-style generator needs 14 constants")
        if not all(0 < v < 1 for v in self.c):
            raise ValueError("constants must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"name": "dgp2_style", "n": self.n, "seed": self.seed, "c": list(self.c),
                "source": self.source.to_dict(), "q1_base": self.q1_base, "q1_alcohol": self.q1_alcohol,
                "zero_covariates": self.zero_covariates}


def _dgp2_cell(a1_idx: np.ndarray, a2_idx: np.ndarray) -> np.ndarray:
    cell = a1_idx + 3 * a2_idx
    disc = a2_idx == 4
    cell = np.where(disc, 12 + (a1_idx - 1), cell)
    return cell


def _dgp2_prob(cfg: Dgp2StyleConfig, cov: pd.DataFrame, a1_idx: np.ndarray, a2_idx: np.ndarray) -> np.ndarray:
    """Outcome probability per record (0 after death, Q1 after transfer, else Q2)."""
    c = np.asarray(cfg.c)
    d2 = cov["d2"].to_numpy() == 1
    m2 = cov["m2"].to_numpy() == 1
    alcohol = cov["alcohol"].to_numpy()
    q1 = cfg.q1_base + cfg.q1_alcohol * np.isin(alcohol, (1, 2))
    live = ~(d2 | m2)
    cell = np.where(live, _dgp2_cell(a1_idx, np.where(live, a2_idx, 0)), 0)
    lin = logit(c[cell])
    if not cfg.zero_covariates:
        l2 = np.nan_to_num(cov["l2"].to_numpy())
        t = np.nan_to_num(cov["time_rerand"].to_numpy())
        male = cov["sex"].to_numpy() == 1
        lin = lin + l2 + t / 300 - male * cov["age"].to_numpy() / 10
    q2 = expit(lin)
    return np.where(d2, 0.0, np.where(m2, q1, q2))


def _dgp2_stage2(a1_idx: np.ndarray, l2: np.ndarray, live: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(a1_idx)
    u3 = rng.integers(0, 3, n)
    u2 = rng.integers(0, 2, n)
    a2 = np.where(l2 == 1, u3, np.where(a1_idx == 0, 3, 3 + u2))
    return np.where(live, a2, -1)


def dgp2_style_sample(config: Dgp2StyleConfig, rng: np.random.Generator | None = None) -> TrialDataset:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n = config.n
    cov = config.source.draw(n, rng)
    a1_idx = rng.integers(0, 3, n)
    live = ~((cov["d2"].to_numpy() == 1) | (cov["m2"].to_numpy() == 1))
    a2_idx = _dgp2_stage2(a1_idx, cov["l2"].to_numpy(), live, rng)
    p = _dgp2_prob(config, cov, a1_idx, a2_idx)
    y = (rng.random(n) < p).astype(float)
    frame = cov.copy()
    frame["a1"] = np.asarray(ADAPTR_STAGE1, dtype=object)[a1_idx]
    frame["a2"] = np.where(a2_idx >= 0, np.asarray(ADAPTR_STAGE2, dtype=object)[np.maximum(a2_idx, 0)], None)
    frame["y"] = y
    return TrialDataset(adaptr_design().schema, frame)


def dgp2_style_truths(regimes: Sequence[EmbeddedRegime], config: Dgp2StyleConfig, mc_size: int,
                      seed: int) -> list[tuple[float, float]]:
    rng = np.random.default_rng(seed)
    sums = np.zeros(len(regimes))
    sq = np.zeros(len(regimes))
    done = 0
    while done < mc_size:
        m = min(_TRUTH_CHUNK, mc_size - done)
        cov = config.source.draw(m, rng)
        l2 = cov["l2"].to_numpy()
        for k, reg in enumerate(regimes):
            a1 = reg.stage1[()]
            a1_idx = np.full(m, ADAPTR_STAGE1.index(a1))
            lapse = ADAPTR_STAGE2.index(reg.stage2[(a1, 1.0)])
            stay = ADAPTR_STAGE2.index(reg.stage2[(a1, 0.0)])
            a2_idx = np.where(l2 == 1, lapse, stay)
            p = _dgp2_prob(config, cov, a1_idx, a2_idx)
            sums[k] += p.sum()
            sq[k] += (p * p).sum()
        done += m
    mean = sums / mc_size
    var = np.maximum(sq / mc_size - mean ** 2, 0.0)
    return [(float(v), float(np.sqrt(s / mc_size))) for v, s in zip(mean, var)]


def dgp2_style_truth(regime: EmbeddedRegime, config: Dgp2StyleConfig, mc_size: int, seed: int):
    return dgp2_style_truths([regime], config, mc_size, seed)[0]


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def dgp_from_dict(d: Mapping):
    """Build a DGP config from its JSON form (``{"name": "dgp1" | "dgp2_style", ...}``)."""
    d = dict(d)
    name = d.pop("name", None)
    if name == "dgp1":
        unknown = set(d) - {"n", "seed", "c"}
        if unknown:
            raise ValueError(f"unknown DGP 1 field(s): {sorted(unknown)}")
        return Dgp1Config(**d)
    if name == "dgp2_style":
        src = dict(d.pop("source", {"kind": "synthetic"}))
        kind = src.pop("kind", "synthetic")
        if kind == "synthetic":
            source = SyntheticCovariates(**{k: tuple(v) if isinstance(v, list) else v for k, v in src.items()})
        elif kind == "resample":
            source = ResampleCovariates.from_csv(src["path"])
        else:
            raise ValueError(f"unknown covariate source {kind!r}")
        if "c" in d:
            d["c"] = tuple(d["c"])
        return Dgp2StyleConfig(source=source, **d)
    raise ValueError(f"unknown DGP {name!r}; expected 'dgp1' or 'dgp2_style'")


def dgp_design(dgp) -> SmartDesign:
    return dgp1_design() if isinstance(dgp, Dgp1Config) else adaptr_design()


def dgp_sample(dgp, rng: np.random.Generator) -> TrialDataset:
    return dgp1_sample(dgp, rng) if isinstance(dgp, Dgp1Config) else dgp2_style_sample(dgp, rng)


def compute_truths(dgp, regimes: Sequence[EmbeddedRegime], mc_size: int, seed: int) -> list[tuple[float, float]]:
    if isinstance(dgp, Dgp1Config):
        return dgp1_truths(regimes, mc_size, seed, dgp.c)
    return dgp2_style_truths(regimes, dgp, mc_size, seed)


def dgp_hash(dgp) -> str:
    d = dgp.to_dict()
    d.pop("n", None)
    d.pop("seed", None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def cached_truths(dgp, regimes: Sequence[EmbeddedRegime], mc_size: int, seed: int,
                  cache_dir: str | Path | None) -> list[tuple[float, float]]:
    """Truths, read from / written to a JSON sidecar keyed by (DGP hash, mc_size, seed)."""
    if cache_dir is None:
        return compute_truths(dgp, regimes, mc_size, seed)
    path = Path(cache_dir) / f"truths-{dgp_hash(dgp)}-{mc_size}-{seed}.json"
    ids = [r.id for r in regimes]
    if path.exists():
        blob = json.loads(path.read_text())
        if blob.get("regimes") == ids:
            return [tuple(v) for v in blob["truths"]]
    vals = compute_truths(dgp, regimes, mc_size, seed)
    atomic_write_text(path, json.dumps({"dgp": dgp.to_dict(), "mc_size": mc_size, "seed": seed,
                                        "regimes": ids, "truths": [list(v) for v in vals]}, indent=2))
    return vals


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentGrid:
    """A replicate experiment: DGP, replicate count, estimator arms and inference options."""

    dgp: object
    replicates: int
    arms: tuple[ArmConfig, ...]
    master_seed: int
    regimes: tuple[str, ...] | None = None
    level: float = 0.95
    mc_draws: int = 100_000
    truth_mc_size: int = 1_000_000
    truth_seed: int = 1
    truths: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.arms:
            raise ValueError("at least one estimator arm is required")
        if len({a.name for a in self.arms}) != len(self.arms):
            raise ValueError("arm names must be unique")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")

    def design(self) -> SmartDesign:
        return dgp_design(self.dgp)

    def selected_regimes(self) -> list[EmbeddedRegime]:
        regs = self.design().regimes()
        if self.regimes is None:
            return regs
        by_id = {r.id: r for r in regs}
        missing = [i for i in self.regimes if i not in by_id]
        if missing:
            raise ValueError(f"unknown regime id(s) {missing}")
        return [by_id[i] for i in self.regimes]

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentGrid":
        known = {"dgp", "replicates", "arms", "master_seed", "regimes", "level", "mc_draws",
                 "truth_mc_size", "truth_seed", "truths"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown grid field(s): {sorted(unknown)}")
        for k in ("dgp", "replicates", "arms", "master_seed"):
            if k not in d:
                raise ValueError(f"grid is missing {k!r}")
        return cls(
            dgp=dgp_from_dict(d["dgp"]),
            replicates=int(d["replicates"]),
            arms=tuple(ArmConfig.from_dict(a) for a in d["arms"]),
            master_seed=int(d["master_seed"]),
            regimes=tuple(str(r) for r in d["regimes"]) if d.get("regimes") else None,
            level=float(d.get("level", 0.95)),
            mc_draws=int(d.get("mc_draws", 100_000)),
            truth_mc_size=int(d.get("truth_mc_size", 1_000_000)),
            truth_seed=int(d.get("truth_seed", 1)),
            truths=tuple(float(v) for v in d["truths"]) if d.get("truths") else None,
        )


@dataclass
class ReplicateResult:
    """Per-arm arrays for one replicate (``None`` for an arm that failed)."""

    index: int
    psi: dict
    ind: dict
    sim: dict
    mean_eic: dict
    converged: dict
    failures: dict


def run_replicate(grid: ExperimentGrid, r: int) -> ReplicateResult:
    regimes = grid.selected_regimes()
    design = grid.design()
    data = dgp_sample(grid.dgp, derive_rng(grid.master_seed, r, "data"))
    ws = Workspace(data, design, seed=derive_int(grid.master_seed, r, "learners"))
    out = ReplicateResult(r, {}, {}, {}, {}, {}, {})
    for arm in grid.arms:
        try:
            res = estimate_arm(ws, regimes, arm)
        except (EstimationError, LearnerError, np.linalg.LinAlgError, ValueError) as exc:
            out.failures[arm.name] = f"{type(exc).__name__}: {exc}"
            continue
        out.psi[arm.name] = np.array([x.psi for x in res])
        if res[0].ic is not None:
            vec = RegimeValueVector.from_results(res)
            ind = individual_ci(vec, grid.level)
            sim = simultaneous_ci(vec, grid.level, grid.mc_draws, derive_int(grid.master_seed, r, "simultaneous"))
            out.ind[arm.name] = np.vstack([ind.lower, ind.upper])
            out.sim[arm.name] = np.vstack([sim.lower, sim.upper])
        if arm.estimator == "tmle":
            out.mean_eic[arm.name] = np.array([x.diagnostics["mean_eic"] for x in res])
            out.converged[arm.name] = np.array([all(x.diagnostics["fluctuation_converged"]) for x in res])
    return out


def _run_chunk(args):
    grid, indices = args
    return [run_replicate(grid, r) for r in indices]


@dataclass
class MetricsTable:
    """Performance of each (regime, arm) pair over the replicates.

    ``rows`` have one line per (regime, estimator) pair; inference columns are
    ``None`` for arms without influence curves (rendered as ``N/A``).
    """

    rows: list[dict]
    excluded: dict
    failures: list[dict]
    replicates: int
    mean_eic: dict = field(default_factory=dict)

    COLUMNS = ("rule", "estimator", "truth", "abs_bias", "variance", "ci_width", "ind_cov_pct",
               "simult_cov_pct", "n_used", "n_excluded")

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt_cell(row[c]) for c in self.COLUMNS))
        return "\n".join(lines) + "\n"

    def lookup(self, arm: str) -> list[dict]:
        return [r for r in self.rows if r["estimator"] == arm]

    def to_dict(self) -> dict:
        return {"rows": self.rows, "excluded": self.excluded, "failures": self.failures,
                "replicates": self.replicates}


def _fmt_cell(v) -> str:
    if v is None:
        return "N/A"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def aggregate(grid: ExperimentGrid, truths: Sequence[float], results: Sequence[ReplicateResult]) -> MetricsTable:
    """Order-independent aggregation of replicate results (sorted by index first)."""
    results = sorted(results, key=lambda r: r.index)
    regimes = grid.selected_regimes()
    truth = np.asarray(truths, dtype=float)
    rows, excluded, failures, eic = [], {}, [], {}
    for r in results:
        for arm, msg in r.failures.items():
            failures.append({"replicate": r.index, "arm": arm, "error": msg})
    for arm in grid.arms:
        ok = [r for r in results if arm.name in r.psi]
        excluded[arm.name] = len(results) - len(ok)
        psi = np.array([r.psi[arm.name] for r in ok]).reshape(len(ok), len(regimes))
        has_ci = bool(ok) and arm.name in ok[0].ind
        if has_ci:
            ind = np.array([r.ind[arm.name] for r in ok])
            sim = np.array([r.sim[arm.name] for r in ok])
            cov_i = (ind[:, 0] <= truth) & (truth <= ind[:, 1])
            cov_s = (sim[:, 0] <= truth) & (truth <= sim[:, 1])
            sim_all = 100.0 * float(np.mean(cov_s.all(axis=1)))
        if arm.name in (ok[0].mean_eic if ok else {}):
            eic[arm.name] = {
                "max_abs_mean_eic_converged": float(max(
                    (np.abs(r.mean_eic[arm.name][r.converged[arm.name]]).max(initial=0.0) for r in ok), default=0.0)),
                "n_fits": int(sum(r.converged[arm.name].size for r in ok)),
                "n_converged": int(sum(r.converged[arm.name].sum() for r in ok)),
            }
        for j, reg in enumerate(regimes):
            col = psi[:, j]
            row = {
                "rule": reg.id, "estimator": arm.name, "truth": float(truth[j]),
                "abs_bias": float(abs(col.mean() - truth[j])) if len(col) else None,
                "variance": float(col.var(ddof=1)) if len(col) > 1 else (0.0 if len(col) else None),
                "ci_width": None, "ind_cov_pct": None, "simult_cov_pct": None,
                "n_used": len(ok), "n_excluded": excluded[arm.name],
            }
            if has_ci:
                row["ci_width"] = float(np.mean(ind[:, 1, j] - ind[:, 0, j]))
                row["ind_cov_pct"] = 100.0 * float(np.mean(cov_i[:, j]))
                row["simult_cov_pct"] = sim_all
            rows.append(row)
    return MetricsTable(rows, excluded, failures, len(results), eic)


def run_experiment(grid: ExperimentGrid, threads: int = 1, truths: Sequence[float] | None = None,
                   cache_dir: str | Path | None = None, progress=None) -> MetricsTable:
    """Run every replicate and aggregate.

    Parameters
    ----------
    threads : int
        Worker processes; results do not depend on this.
    truths : sequence of float, optional
        Regime truths; otherwise ``grid.truths`` or a Monte-Carlo oracle run
        (cached under ``cache_dir``).
    progress : callable, optional
        Called with the number of finished replicates.
    """
    regimes = grid.selected_regimes()
    if truths is None:
        truths = grid.truths
    if truths is None:
        truths = [v for v, _ in cached_truths(grid.dgp, regimes, grid.truth_mc_size, grid.truth_seed, cache_dir)]
    if len(truths) != len(regimes):
        raise ValueError(f"{len(truths)} truths given for {len(regimes)} regimes")
    indices = list(range(grid.replicates))
    results: list[ReplicateResult] = []
    if threads <= 1:
        for r in indices:
            results.append(run_replicate(grid, r))
            if progress:
                progress(len(results))
    else:
        chunks = [indices[k::threads * 4] for k in range(min(len(indices), threads * 4))]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(_run_chunk, [(grid, c) for c in chunks]):
                results.extend(part)
                if progress:
                    progress(len(results))
    return aggregate(grid, truths, results)


def default_dgp1_arms(folds: int = 10) -> tuple[ArmConfig, ...]:
    """The five estimator arms compared on DGP 1."""
    return (
        ArmConfig("ipw_g0", "ipw_known", folds=folds),
        ArmConfig("ipw_gn_min", "ipw_saturated", g_adjustment="minimal", folds=folds),
        ArmConfig("ipw_gn_full", "ipw_adjusted", g_adjustment="full", folds=folds),
        ArmConfig("gcomp_full", "gcomp", adjustment="full", learner="library", folds=folds),
        ArmConfig("tmle_full", "tmle", adjustment="full", learner="library", g_source="modeled",
                  g_adjustment="full", folds=folds),
    )
