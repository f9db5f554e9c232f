"""Run statistics and the CSV/JSON files written after a Monte Carlo run."""

import csv
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import LocalizationError

TRIAL_COLUMNS = (
    "trial",
    "ue",
    "solver",
    "error_m",
    "iterations",
    "converged",
    "gdop",
    "ref_snr_db",
    "peb_m",
    "mults",
    "inversions",
    "failure",
    "snrs_db",
)


class IoError(LocalizationError, OSError):
    pass


@dataclass(frozen=True)
class SolverSummary:
    solver: str
    samples: int
    failures: int
    failure_rate: float
    median_error_m: float
    p90_error_m: float
    rmse_m: float
    mean_iterations: float
    convergence_rate: float
    mean_mults: float
    mean_inversions: float
    cdf: tuple  # sorted finite errors


@dataclass(frozen=True)
class RunSummary:
    solvers: dict
    mean_peb_m: float
    rms_peb_m: float
    mean_gdop: float
    trials: int

    def to_json(self):
        return {
            "trials": self.trials,
            "peb_overlay": {"mean_peb_m": self.mean_peb_m, "rms_peb_m": self.rms_peb_m},
            "mean_gdop": self.mean_gdop,
            "solvers": {
                name: {f.name: getattr(s, f.name) for f in fields(s) if f.name != "cdf"}
                for name, s in self.solvers.items()
            },
        }


def _finite_mean(values):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(values.mean()) if values.size else math.nan


def summarize(records, scn=None):
    solvers = {}
    names = list(scn.solvers) if scn is not None else sorted({r.solver for r in records})
    for name in names:
        recs = [r for r in records if r.solver == name]
        errors = np.array([r.error_m for r in recs], dtype=float)
        ok = np.isfinite(errors)
        good = np.sort(errors[ok])
        n = len(recs)
        solvers[name] = SolverSummary(
            solver=name,
            samples=n,
            failures=int(n - ok.sum()),
            failure_rate=float((n - ok.sum()) / n) if n else math.nan,
            median_error_m=float(np.median(good)) if good.size else math.nan,
            p90_error_m=float(np.percentile(good, 90)) if good.size else math.nan,
            rmse_m=float(np.sqrt(np.mean(good**2))) if good.size else math.nan,
            mean_iterations=_finite_mean([r.iterations for r, k in zip(recs, ok) if k]),
            convergence_rate=float(np.mean([r.converged for r in recs])) if n else math.nan,
            mean_mults=_finite_mean([r.mults for r, k in zip(recs, ok) if k]),
            mean_inversions=_finite_mean([r.inversions for r, k in zip(recs, ok) if k]),
            cdf=tuple(float(e) for e in good),
        )
    # one PEB/GDOP value per UE drop
    drops = {(r.trial, r.ue): r for r in records}
    pebs = np.array([r.peb_m for r in drops.values()], dtype=float)
    pebs = pebs[np.isfinite(pebs)]
    return RunSummary(
        solvers=solvers,
        mean_peb_m=float(pebs.mean()) if pebs.size else math.nan,
        rms_peb_m=float(np.sqrt(np.mean(pebs**2))) if pebs.size else math.nan,
        mean_gdop=_finite_mean([r.gdop for r in drops.values()]),
        trials=len({r.trial for r in records}),
    )


def _cell(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ";".join(_cell(v) for v in value)
    return str(value)


def write_trials_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
        for r in records:
            writer.writerow([_cell(getattr(r, c)) for c in TRIAL_COLUMNS])


def code_version():
    from .. import __version__

    return __version__


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def emit_outputs(records, summary, out_dir, scn=None):
    """Write trials.csv, cdf_<solver>.csv, summary.json and run_manifest.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_trials_csv(records, out / "trials.csv")
        for name, s in summary.solvers.items():
            n = len(s.cdf)
            with open(out / f"cdf_{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(("error_m", "cumulative_prob"))
                for i, e in enumerate(s.cdf):
                    writer.writerow((repr(e), repr((i + 1) / n)))
        with open(out / "summary.json", "w") as fh:
            json.dump(_json_safe(summary.to_json()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if scn is not None:
            manifest = {
                "manifest_version": 1,
                "code_version": code_version(),
                "master_seed": scn.master_seed,
                "scenario": scn.to_dict(),
            }
            with open(out / "run_manifest.json", "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write outputs to {out}: {exc}") from exc
    return out
