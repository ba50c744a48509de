"""Experiment orchestration: seeded training, evaluation sweeps, reports.

Layout of an output directory::

    config.resolved.ini      resolved configuration, echoed on every command
    seed_<N>/checkpoint.npz  final (or latest) TD3 parameters for seed N
    seed_<N>/metrics.csv     step, hypervolume, crashes, mean_speed, mean_emission
    points.csv               one row per (seed, omega) from the evaluation sweep
    aggregate.csv            per-omega means and 95% half-widths across seeds
    report.json              front report built from the per-omega means
    front.csv, fairness.csv, boxstats.csv
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .networks import load_checkpoint
from .pareto import FrontReport, ParetoPoint, build_report, select_policy
from .td3 import QUANTILES, evaluate, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NO_POLICY = 3

Z95 = 1.959963984540054

_QCOLS = [f"q{int(round(q * 100)):02d}" for q in QUANTILES]
POINT_COLUMNS = (
    ["seed", "omega", "mean_speed", "mean_emission", "delta_f", "crashes", "trips_petrol", "trips_electric"]
    + [f"speed_{c}" for c in _QCOLS]
    + [f"emission_{c}" for c in _QCOLS]
)
AGG_FIELDS = ("mean_speed", "mean_emission", "delta_f", "crashes")
AGGREGATE_COLUMNS = ["omega", "n_seeds"] + [f"{f}_{s}" for f in AGG_FIELDS for s in ("mean", "ci95")]
FRONT_COLUMNS = ["omega", "speed", "emission", "cluster"]
FAIRNESS_COLUMNS = ["omega", "delta_f", "delta_f_ci95", "n_seeds"]
BOXSTATS_COLUMNS = ["omega"] + [f"speed_{c}" for c in _QCOLS] + [f"emission_{c}" for c in _QCOLS]


class HarnessError(RuntimeError):
    pass


def eval_seed(seed: int) -> int:
    """World seed base for evaluation sweeps of training seed ``seed``."""
    return seed * 1000 + 7919


def seed_dir(cfg: ExperimentConfig, seed: int) -> str:
    return os.path.join(cfg.run.out, f"seed_{seed}")


def _fmt(v):
    if v is None:
        return "nan"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def echo_config(cfg: ExperimentConfig):
    os.makedirs(cfg.run.out, exist_ok=True)
    with open(os.path.join(cfg.run.out, "config.resolved.ini"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_text())


# ------------------------------------------------------------------ commands

def cmd_train(cfg: ExperimentConfig, resume=False):
    echo_config(cfg)
    results = {}
    for seed in cfg.run.seeds:
        out = seed_dir(cfg, seed)
        log.info("training seed %d into %s", seed, out)
        _, rows = train(
            cfg.world_config(seed),
            cfg.train_config(seed),
            out,
            emission=cfg.reward,
            hidden=cfg.neural.hidden,
            omega_hidden=cfg.neural.omega_hidden,
            omega_grid=cfg.eval.omega_grid,
            resume=resume,
            eval_seed=eval_seed(seed),
        )
        results[seed] = rows
    return results


def point_row(seed, p: ParetoPoint):
    row = {
        "seed": seed,
        "omega": p.omega,
        "mean_speed": p.obj_speed,
        "mean_emission": p.obj_emission,
        "delta_f": p.delta_f,
        "crashes": p.crashes,
        "trips_petrol": p.aux.get("trips_petrol", 0),
        "trips_electric": p.aux.get("trips_electric", 0),
    }
    for c, q in zip(_QCOLS, p.aux.get("speed_q", [math.nan] * len(_QCOLS))):
        row[f"speed_{c}"] = q
    for c, q in zip(_QCOLS, p.aux.get("emission_q", [math.nan] * len(_QCOLS))):
        row[f"emission_{c}"] = q
    return row


def cmd_eval(cfg: ExperimentConfig):
    """Sweep the omega grid with every seed's checkpoint; writes points.csv."""
    echo_config(cfg)
    rows = []
    for seed in cfg.run.seeds:
        path = os.path.join(seed_dir(cfg, seed), "checkpoint.npz")
        if not os.path.exists(path):
            raise HarnessError(f"missing checkpoint for seed {seed}: {path} (run 'train' first)")
        stores, _ = load_checkpoint(path)
        points = evaluate(
            stores["actor"],
            cfg.world_config(seed),
            cfg.eval.omega_grid,
            cfg.eval.steps_per_omega,
            cfg.reward,
            seed=eval_seed(seed),
        )
        rows.extend(point_row(seed, p) for p in points)
    _write_csv(os.path.join(cfg.run.out, "points.csv"), POINT_COLUMNS, rows)
    return rows


def read_points(path):
    out = []
    for r in _read_csv(path):
        row = {}
        for k, v in r.items():
            if k in ("seed", "crashes", "trips_petrol", "trips_electric"):
                row[k] = int(v)
            else:
                x = float(v)
                row[k] = None if (k == "delta_f" and math.isnan(x)) else x
        out.append(row)
    return out


def mean_ci(values):
    """(mean, 95% normal-approximation half-width); None entries are skipped."""
    xs = np.array([v for v in values if v is not None and math.isfinite(v)], dtype=np.float64)
    if len(xs) == 0:
        return math.nan, math.nan
    if len(xs) == 1:
        return float(xs[0]), math.nan
    return float(xs.mean()), float(Z95 * xs.std(ddof=1) / math.sqrt(len(xs)))


@dataclass
class Analysis:
    report: FrontReport
    aggregate: list


def aggregate_points(rows):
    by_omega = {}
    for r in rows:
        by_omega.setdefault(r["omega"], []).append(r)
    agg = []
    for omega in sorted(by_omega):
        group = by_omega[omega]
        row = {"omega": omega, "n_seeds": len(group)}
        for f in AGG_FIELDS:
            row[f"{f}_mean"], row[f"{f}_ci95"] = mean_ci([g[f] for g in group])
        for col in BOXSTATS_COLUMNS[1:]:
            row[col] = mean_ci([g[col] for g in group])[0]
        row["n_delta_f"] = sum(1 for g in group if g["delta_f"] is not None)
        agg.append(row)
    return agg


def cmd_analyze(cfg: ExperimentConfig) -> Analysis:
    """Aggregate points.csv over seeds and write the front report and plot CSVs."""
    echo_config(cfg)
    path = os.path.join(cfg.run.out, "points.csv")
    if not os.path.exists(path):
        raise HarnessError(f"missing {path} (run 'eval' first)")
    agg = aggregate_points(read_points(path))
    points = []
    for a in agg:
        df = a["delta_f_mean"]
        points.append(
            ParetoPoint(
                omega=a["omega"],
                obj_speed=a["mean_speed_mean"],
                obj_emission=a["mean_emission_mean"],
                delta_f=None if math.isnan(df) else df,
                crashes=int(round(a["crashes_mean"])) if math.isfinite(a["crashes_mean"]) else 0,
                aux={"speed_ci95": a["mean_speed_ci95"], "emission_ci95": a["mean_emission_ci95"]},
            )
        )
    rng = np.random.default_rng(cfg.run.seeds[0])
    report = build_report(points, rng) if points else FrontReport([], [], 0.0, (0.0, 0.0), {})
    out = cfg.run.out
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json() + "\n")
    _write_csv(os.path.join(out, "aggregate.csv"), AGGREGATE_COLUMNS, agg)
    front_rows = [
        {
            "omega": points[i].omega,
            "speed": points[i].obj_speed,
            "emission": points[i].obj_emission,
            "cluster": report.clusters.get(i, "Unclustered"),
        }
        for i in report.front
    ]
    with open(os.path.join(out, "front.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONT_COLUMNS)
        for r in front_rows:
            w.writerow([_fmt(r["omega"]), _fmt(r["speed"]), _fmt(r["emission"]), r["cluster"]])
    fair = [
        {"omega": a["omega"], "delta_f": a["delta_f_mean"], "delta_f_ci95": a["delta_f_ci95"], "n_seeds": a["n_delta_f"]}
        for a in agg
    ]
    _write_csv(os.path.join(out, "fairness.csv"), FAIRNESS_COLUMNS, fair)
    _write_csv(os.path.join(out, "boxstats.csv"), BOXSTATS_COLUMNS, agg)
    return Analysis(report, agg)


def cmd_select(cfg: ExperimentConfig):
    """Fairest feasible front policy from report.json; None if infeasible."""
    path = os.path.join(cfg.run.out, "report.json")
    if not os.path.exists(path):
        raise HarnessError(f"missing {path} (run 'analyze' first)")
    with open(path, encoding="utf-8") as fh:
        report = FrontReport.from_json(fh.read())
    return select_policy(report, cfg.eval.emission_cap, cfg.eval.speed_floor)
