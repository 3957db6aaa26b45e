"""Command-line front end.

::

    smartdtr [--out DIR] [--threads N] [--quiet] analyze  config.json
    smartdtr [--out DIR] [--threads N] [--quiet] simulate grid.json
    smartdtr [--out DIR] [--threads N] [--quiet] truths   dgp.json --mc-size N --seed S

All artifacts are computed in memory first and then written atomically, so a
failed run leaves no partial output. Failures print a JSON error report on
stderr and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .data import EmbeddedRegime, SmartDesign, complete_case_filter, load_csv
from .designs import DESIGNS
from .estimators import ArmConfig, Workspace, estimate_arm
from .inference import (DEFAULT_DRAWS, RegimeValueVector, contrast, individual_ci, simultaneous_ci,
                        simultaneous_contrasts)
from .io import atomic_write_text
from .simulation import ExperimentGrid, compute_truths, derive_int, dgp_design, dgp_from_dict, run_experiment

logger = logging.getLogger("smartdtr")

__all__ = ["main", "cmd_analyze", "cmd_simulate", "cmd_truths", "check_plotdata", "ConfigError"]


class ConfigError(ValueError):
    """The configuration document is invalid."""


# ---------------------------------------------------------------------------
# Formatting helpers
# ---------------------------------------------------------------------------

def _num(v) -> str:
    if v is None:
        return "N/A"
    return repr(float(v))


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _parse_num(s: str):
    return None if s == "N/A" else float(s)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

VALUES_COLUMNS = ("regime", "estimator", "estimate", "variance", "ind_lower", "ind_upper", "sim_lower",
                  "sim_upper", "z_critical", "q_critical", "n_follow")
CONTRAST_COLUMNS = ("pair", "estimator", "estimate", "variance", "lower", "upper", "sim_lower", "sim_upper",
                    "z_critical", "q_critical")


def _load_design(spec) -> SmartDesign:
    if isinstance(spec, str):
        if spec not in DESIGNS:
            raise ConfigError(f"unknown design {spec!r}; expected one of {sorted(DESIGNS)} or an object")
        return DESIGNS[spec]()
    if isinstance(spec, Mapping):
        return SmartDesign.from_dict(spec)
    raise ConfigError("design must be a name or an object")


def _select_regimes(design: SmartDesign, spec) -> list[EmbeddedRegime]:
    enumerated = design.regimes()
    if spec in (None, "enumerate"):
        return enumerated
    if not isinstance(spec, list) or not spec:
        raise ConfigError("regimes must be 'enumerate' or a nonempty list")
    if all(isinstance(r, (str, int)) for r in spec):
        by_id = {r.id: r for r in enumerated}
        missing = [str(r) for r in spec if str(r) not in by_id]
        if missing:
            raise ConfigError(f"unknown regime id(s): {missing}")
        return [by_id[str(r)] for r in spec]
    return [EmbeddedRegime.from_dict(r) for r in spec]


def _parse_analysis(config: Mapping, base: Path) -> dict:
    known = {"data", "design", "regimes", "arms", "inference", "contrasts", "seed", "output"}
    unknown = set(config) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    if "data" not in config or "path" not in config["data"]:
        raise ConfigError("config needs data.path")
    design = _load_design(config.get("design"))
    arms = [ArmConfig.from_dict(a) for a in config.get("arms", [])]
    if not arms:
        raise ConfigError("at least one estimator arm is required")
    if len({a.name for a in arms}) != len(arms):
        raise ConfigError("arm names must be unique")
    inf = dict(config.get("inference", {}))
    level = float(inf.get("level", 0.95))
    if not 0 < level < 1:
        raise ConfigError("inference.level must lie in (0, 1)")
    simultaneous = bool(inf.get("simultaneous", True))
    if simultaneous and "seed" not in inf:
        raise ConfigError("inference.seed is required when simultaneous intervals are enabled")
    if any(a.learner == "library" and a.uses_ice or a.g_learner == "library" for a in arms) and "seed" not in config:
        raise ConfigError("seed is required when cross-validated learners are used")
    regimes = _select_regimes(design, config.get("regimes", "enumerate"))
    ids = [r.id for r in regimes]
    pairs = []
    for p in config.get("contrasts", []):
        if len(p) != 2 or str(p[0]) == str(p[1]):
            raise ConfigError(f"contrast {p} must name two distinct regimes")
        try:
            pairs.append((ids.index(str(p[0])), ids.index(str(p[1]))))
        except ValueError:
            raise ConfigError(f"contrast {p} references a regime that is not analysed") from None
    path = Path(config["data"]["path"])
    if not path.is_absolute():
        path = base / path
    return {"design": design, "arms": arms, "level": level, "simultaneous": simultaneous,
            "draws": int(inf.get("mc_draws", DEFAULT_DRAWS)), "inf_seed": int(inf.get("seed", 0)),
            "regimes": regimes, "pairs": pairs, "path": path, "seed": int(config.get("seed", 0))}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def analyze(config: Mapping, base: Path = Path(".")) -> dict[str, str]:
    """Run an analysis and return ``{filename: text}`` for every artifact."""
    cfg = _parse_analysis(config, base)
    design, regimes = cfg["design"], cfg["regimes"]
    raw = load_csv(cfg["path"], design.schema, design.rules)
    data = complete_case_filter(raw)
    ws = Workspace(data, design, cfg["seed"])
    warnings_: list[str] = []
    diag: dict = {"n_records": raw.n, "n_complete": data.n, "n_dropped_missing_outcome": raw.n - data.n,
                  "arms": {}, "warnings": warnings_}
    value_rows, contrast_rows = [], []
    for k, arm in enumerate(cfg["arms"]):
        results = estimate_arm(ws, regimes, arm)
        arm_diag = {r.regime_id: r.diagnostics for r in results}
        diag["arms"][arm.name] = {"config": arm.to_dict(), "regimes": arm_diag}
        for r in results:
            d = r.diagnostics
            if d.get("n_truncated"):
                warnings_.append(f"{arm.name}/regime {r.regime_id}: {d['n_truncated']} truncated weights")
            if "fluctuation_converged" in d and not all(d["fluctuation_converged"]):
                warnings_.append(f"{arm.name}/regime {r.regime_id}: fluctuation did not converge")
            for key in ("q3_learner", "q2_learner"):
                if d.get(key) and not d[key].get("converged", True):
                    warnings_.append(f"{arm.name}/regime {r.regime_id}: {key} did not converge")
        if results[0].ic is None:
            for r in results:
                value_rows.append([r.regime_id, arm.name, _num(r.psi)] + ["N/A"] * 7 + [r.n_follow])
            continue
        vec = RegimeValueVector.from_results(results)
        ind = individual_ci(vec, cfg["level"])
        sim = None
        if cfg["simultaneous"]:
            sim = simultaneous_ci(vec, cfg["level"], cfg["draws"], derive_int(cfg["inf_seed"], k, "values"))
            if "psd_repair" in sim.flags:
                warnings_.append(f"{arm.name}: correlation matrix repaired ({sim.flags['psd_repair']:.3g})")
            if "degenerate_columns" in sim.flags:
                warnings_.append(f"{arm.name}: {sim.flags['degenerate_columns']} regimes with zero IC variance")
        for j, r in enumerate(results):
            value_rows.append([
                r.regime_id, arm.name, _num(r.psi), _num(r.variance), _num(ind.lower[j]), _num(ind.upper[j]),
                _num(sim.lower[j]) if sim else "N/A", _num(sim.upper[j]) if sim else "N/A",
                _num(ind.critical), _num(sim.critical) if sim else "N/A", r.n_follow])
        if cfg["pairs"]:
            csim = None
            if cfg["simultaneous"]:
                csim = simultaneous_contrasts(vec, cfg["pairs"], cfg["level"], cfg["draws"],
                                              derive_int(cfg["inf_seed"], k, "contrasts"))
            for m, (i, j) in enumerate(cfg["pairs"]):
                c = contrast(vec, i, j, cfg["level"])
                var = float(np.mean((vec.ic[:, i] - vec.ic[:, j]) ** 2) / vec.n)
                contrast_rows.append([
                    c.ids[0], arm.name, _num(c.psi[0]), _num(var), _num(c.lower[0]), _num(c.upper[0]),
                    _num(csim.lower[m]) if csim else "N/A", _num(csim.upper[m]) if csim else "N/A",
                    _num(c.critical), _num(csim.critical) if csim else "N/A"])
    values = _csv_text(VALUES_COLUMNS, value_rows)
    contrasts = _csv_text(CONTRAST_COLUMNS, contrast_rows)
    diag["regimes"] = {r.id: r.describe() for r in regimes}
    return {
        "values.csv": values,
        "contrasts.csv": contrasts,
        "diagnostics.json": json.dumps(_jsonable(diag), indent=2, sort_keys=True, allow_nan=False) + "\n",
        "plotdata.json": json.dumps(plotdata_from_values(values), indent=2, sort_keys=True) + "\n",
    }


def plotdata_from_values(values_csv: str) -> dict:
    """Point-and-error-bar series per estimator, derived only from ``values.csv``."""
    rows = list(csv.DictReader(_io.StringIO(values_csv)))
    series: dict = {}
    for row in rows:
        s = series.setdefault(row["estimator"], {"regime": [], "estimate": [], "ind": [], "sim": []})
        s["regime"].append(row["regime"])
        s["estimate"].append(_parse_num(row["estimate"]))
        s["ind"].append([_parse_num(row["ind_lower"]), _parse_num(row["ind_upper"])])
        s["sim"].append([_parse_num(row["sim_lower"]), _parse_num(row["sim_upper"])])
    return {"kind": "values", "series": series}


METRIC_PANELS = ("abs_bias", "variance", "ci_width", "ind_cov_pct")


def plotdata_from_metrics(metrics_csv: str) -> dict:
    """Four-panel series (bias, variance, width, coverage) derived only from ``metrics.csv``."""
    rows = list(csv.DictReader(_io.StringIO(metrics_csv)))
    panels: dict = {p: {} for p in METRIC_PANELS}
    simult: dict = {}
    for row in rows:
        for p in METRIC_PANELS:
            panels[p].setdefault(row["estimator"], {"rule": [], "value": []})
            panels[p][row["estimator"]]["rule"].append(row["rule"])
            panels[p][row["estimator"]]["value"].append(_parse_num(row[p]))
        simult[row["estimator"]] = _parse_num(row["simult_cov_pct"])
    panels["simult_cov_pct"] = simult
    return {"kind": "metrics", "panels": panels}


def check_plotdata(out_dir: str | Path) -> bool:
    """True iff ``plotdata.json`` in ``out_dir`` is exactly derivable from the CSV beside it."""
    out = Path(out_dir)
    plot = json.loads((out / "plotdata.json").read_text())
    if plot.get("kind") == "values":
        expected = plotdata_from_values((out / "values.csv").read_text())
    else:
        expected = plotdata_from_metrics((out / "metrics.csv").read_text())
    return json.loads(json.dumps(expected)) == plot


# ---------------------------------------------------------------------------
# simulate / truths
# ---------------------------------------------------------------------------

def simulate(grid_doc: Mapping, threads: int = 1, cache_dir: Path | None = None, progress=None) -> dict[str, str]:
    grid = ExperimentGrid.from_dict(grid_doc)
    t0 = time.perf_counter()
    table = run_experiment(grid, threads=threads, cache_dir=cache_dir, progress=progress)
    logger.info("simulation finished in %.1f s", time.perf_counter() - t0)
    metrics = table.to_csv()
    summary = {"replicates": table.replicates, "excluded": table.excluded, "failures": table.failures,
               "tmle_score": table.mean_eic}
    return {
        "metrics.csv": metrics,
        "plotdata.json": json.dumps(plotdata_from_metrics(metrics), indent=2, sort_keys=True) + "\n",
        "run.json": json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
    }


def truths(dgp_doc: Mapping, mc_size: int, seed: int) -> dict[str, str]:
    if mc_size < 1:
        raise ConfigError("--mc-size must be positive")
    dgp = dgp_from_dict(dgp_doc)
    regimes = dgp_design(dgp).regimes()
    vals = compute_truths(dgp, regimes, mc_size, seed)
    rows = [{"regime": r.id, "description": r.describe(), "truth": v, "se": s} for r, (v, s) in zip(regimes, vals)]
    doc = {"dgp": dgp.to_dict(), "mc_size": mc_size, "seed": seed, "truths": rows}
    csv_text = _csv_text(("regime", "truth", "se"), [[r["regime"], _num(r["truth"]), _num(r["se"])] for r in rows])
    return {"truths.json": json.dumps(doc, indent=2, sort_keys=True) + "\n", "truths.csv": csv_text}


def _write_all(out: Path, files: Mapping[str, str]) -> None:
    for name, text in files.items():
        atomic_write_text(out / name, text)


def _read_json(path: str) -> tuple[dict, Path]:
    p = Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8")), p.resolve().parent
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def cmd_analyze(config_path: str, out: Path) -> None:
    doc, base = _read_json(config_path)
    _write_all(out, analyze(doc, base))


def cmd_simulate(grid_path: str, out: Path, threads: int = 1) -> None:
    doc, _ = _read_json(grid_path)
    _write_all(out, simulate(doc, threads, cache_dir=out))


def cmd_truths(dgp_path: str, out: Path, mc_size: int, seed: int) -> None:
    doc, _ = _read_json(dgp_path)
    _write_all(out, truths(doc, mc_size, seed))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smartdtr", description="Estimate the values of regimes embedded in a SMART.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for simulations")
    p.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", help="estimate regime values for a trial dataset")
    a.add_argument("config")
    s = sub.add_parser("simulate", help="run a replicate experiment grid")
    s.add_argument("grid")
    t = sub.add_parser("truths", help="Monte-Carlo true values of a simulation DGP")
    t.add_argument("dgp")
    t.add_argument("--mc-size", type=int, required=True)
    t.add_argument("--seed", type=int, required=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("SMARTDTR_LOG_LEVEL", "WARNING" if args.quiet else "INFO")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        if args.command == "analyze":
            cmd_analyze(args.config, out)
        elif args.command == "simulate":
            cmd_simulate(args.grid, out, args.threads)
        else:
            cmd_truths(args.dgp, out, args.mc_size, args.seed)
    except Exception as exc:  # every failure becomes a machine-readable report
        report = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(report), file=sys.stderr)
        return 1
    if not args.quiet:
        print(json.dumps({"status": "ok", "command": args.command, "out": str(out)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
