"""Experiment orchestration: seeded sweeps over poisoning rates, group
sizes, model families, and repeats, with JSON-lines records, aggregated
summaries, and plot emission.

Per-cell seeds are derived by hashing the master seed with the cell
coordinates, so any subset of a sweep reproduces bit-identically. Reported
MSEs are computed on the clean training fold (the poison is excluded from
evaluation); test-fold MSEs are recorded alongside.

The summary's time columns follow the iteration-count timing convention
(work units divided by a configurable iterations-per-second rate), which is
deterministic; raw wall-clock measurements stay in the per-cell records.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import svgplot
from .attack import AttackConfig, nopt_attack, opt_attack
from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    merge,
    poison_count,
    split_three,
)
from .defend import ProdaConfig, proda_defend, subset_size, trim_defend, trim_worst_case_iterations
from .regress import fit, mse, select_lambda

SCHEMA_VERSION = 1

ATTACKS = ("none", "opt", "nopt")
DEFENSES = ("none", "trim", "proda")

DEFAULT_ALPHA_GRID = (0.04, 0.08, 0.12, 0.16, 0.20)

SUMMARY_COLUMNS = (
    "dataset",
    "family",
    "attack",
    "defense",
    "alpha",
    "alpha_assumed",
    "gamma",
    "mse_clean",
    "mse_poisoned",
    "mse_defended",
    "time_attack_s",
    "time_defense_s",
)


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: dataset source, model families, attack/defense choices,
    and the grids to iterate."""

    dataset_name: str = "synthetic"
    csv_path: str | None = None
    target_column: str | int | None = None
    categorical: tuple[str, ...] = ()
    synthetic: SyntheticSpec | None = None
    families: tuple[str, ...] = ("ols",)
    lambda_policy: str | float = "select"  # "select" on the validation fold, or a fixed value
    rho: float = 0.5
    attack: str = "none"
    defense: str = "none"
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    gamma_grid: tuple[int, ...] = ()
    alpha_assumed: float | None = None  # None: defender knows the cell's real alpha
    repeats: int = 5
    master_seed: int = 1337
    max_features: int | None = None
    train_subsample: int | None = None
    surrogate_fraction: float | None = None
    attack_eps_conv: float = 1e-6
    attack_max_outer: int = 30
    defense_epsilon: float = 1e-5
    defense_max_iters: int = 100
    rate_iters_per_s: float = 1e9  # iteration-count timing conversion

    def __post_init__(self):
        if (self.csv_path is None) == (self.synthetic is None):
            raise ValueError("exactly one of csv_path and synthetic must be given")
        if self.csv_path is not None and self.target_column is None:
            raise ValueError("target_column is required with csv_path")
        if self.attack not in ATTACKS:
            raise ValueError(f"attack must be one of {ATTACKS}")
        if self.defense not in DEFENSES:
            raise ValueError(f"defense must be one of {DEFENSES}")
        if not self.families:
            raise ValueError("families must be nonempty")
        if not self.alpha_grid:
            raise ValueError("alpha_grid must be nonempty")
        if self.defense == "proda" and not self.gamma_grid:
            raise ValueError("gamma_grid must be nonempty for the proda defense")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def cell_seed(master_seed: int, *coords) -> int:
    """Stable 63-bit seed from the master seed and cell coordinates."""
    key = "|".join([str(master_seed)] + [repr(c) for c in coords])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def load_base_dataset(spec: ExperimentSpec) -> Dataset:
    if spec.synthetic is not None:
        ds, _ = generate_synthetic(spec.synthetic)
    else:
        ds, _ = load_csv(spec.csv_path, spec.target_column, spec.categorical or None)
    if spec.max_features is not None and spec.max_features < ds.d:
        ds = Dataset(
            ds.features[:, : spec.max_features].copy(),
            ds.responses.copy(),
            ds.feature_names[: spec.max_features],
            ds.provenance,
        )
    return ds


def _resolve_lambda(spec, family, train, validation):
    if family == "ols":
        return 0.0
    if spec.lambda_policy == "select":
        return select_lambda(train, validation, family, rho=spec.rho)
    return float(spec.lambda_policy)


def run_cell(
    spec: ExperimentSpec,
    family: str,
    alpha: float,
    gamma: int | None,
    repeat: int,
    base: Dataset | None = None,
) -> dict:
    """One (dataset, family, attack, defense, alpha, gamma, repeat) cell.

    Returns the record dict; failures land in the record's error field."""
    seed = cell_seed(
        spec.master_seed, spec.dataset_name, family, spec.attack, spec.defense, alpha, gamma, repeat
    )
    alpha_assumed = spec.alpha_assumed
    if alpha_assumed is None:
        alpha_assumed = alpha if spec.attack != "none" else 0.0
    record = {
        "record_type": "cell",
        "dataset": spec.dataset_name,
        "family": family,
        "attack": spec.attack,
        "defense": spec.defense,
        "alpha": alpha,
        "alpha_assumed": alpha_assumed if spec.defense != "none" else None,
        "gamma": gamma,
        "repeat": repeat,
        "seed": seed,
    }
    try:
        _fill_cell(record, spec, family, alpha, gamma, alpha_assumed, seed, base)
    except Exception as exc:  # noqa: BLE001 - a failed cell is recorded, not dropped
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def _fill_cell(record, spec, family, alpha, gamma, alpha_assumed, seed, base):
    ds = base if base is not None else load_base_dataset(spec)
    split = split_three(ds, seed)
    train, validation, test = split.train, split.validation, split.test
    sub_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    if spec.train_subsample is not None and train.n > spec.train_subsample:
        idx = sub_rng.choice(train.n, size=spec.train_subsample, replace=False)
        train = train.take(np.sort(idx))

    lam = _resolve_lambda(spec, family, train, validation)
    record["lambda"] = lam

    clean_report = fit(train, family, lam, rho=spec.rho)
    record["mse_clean"] = clean_report.train_mse
    record["mse_clean_test"] = mse(test, clean_report.model)

    training_pool = train
    if spec.attack != "none":
        view = train
        n_poison = None
        if spec.surrogate_fraction is not None:
            k = max(train.d + 1, int(round(spec.surrogate_fraction * train.n)))
            view_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
            view = train.take(np.sort(view_rng.choice(train.n, size=min(k, train.n), replace=False)))
            n_poison = poison_count(train.n, alpha)
        cfg = AttackConfig(
            alpha=alpha,
            eps_conv=spec.attack_eps_conv,
            max_outer_iters=spec.attack_max_outer,
            seed=cell_seed(seed, "attack"),
            n_poison=n_poison,
        )
        attack_fn = nopt_attack if spec.attack == "nopt" else opt_attack
        t0 = time.perf_counter()
        state = attack_fn(view, cfg, family, lam, rho=spec.rho)
        record["wall_time_attack_s"] = time.perf_counter() - t0
        record["attack_iterations"] = state.iterations
        record["attack_converged"] = state.converged
        record["attack_refits"] = state.refit_count
        record["time_attack_s"] = state.refit_count * train.n / spec.rate_iters_per_s
        poisoned, _ = merge(train, state.poison)
        poisoned_report = fit(poisoned, family, lam, rho=spec.rho)
        record["mse_poisoned"] = mse(train, poisoned_report.model)
        # the collective-training-set MSE is the attack figure of merit
        record["mse_poisoned_trainset"] = mse(poisoned, poisoned_report.model)
        record["mse_poisoned_test"] = mse(test, poisoned_report.model)
        training_pool = poisoned

    if spec.defense != "none":
        if spec.defense == "proda":
            dcfg = ProdaConfig(
                gamma=int(gamma),
                epsilon=spec.defense_epsilon,
                alpha_assumed=alpha_assumed,
                seed=cell_seed(seed, "defense"),
            )
            t0 = time.perf_counter()
            result = proda_defend(training_pool, dcfg, family, lam, rho=spec.rho)
            record["wall_time_defense_s"] = time.perf_counter() - t0
            record["beta_used"] = result.beta_used
            work = result.beta_used * training_pool.n
        else:
            t0 = time.perf_counter()
            result = trim_defend(
                training_pool,
                alpha_assumed,
                family,
                lam,
                rho=spec.rho,
                max_iters=spec.defense_max_iters,
                seed=cell_seed(seed, "defense"),
            )
            record["wall_time_defense_s"] = time.perf_counter() - t0
            work = result.iterations * training_pool.n
            record["trim_worst_case_iterations"] = str(
                trim_worst_case_iterations(training_pool.n, subset_size(training_pool.n, alpha_assumed))
            )
        record["defense_iterations"] = result.iterations
        record["time_defense_s"] = work / spec.rate_iters_per_s
        record["mse_defended"] = mse(train, result.model)
        record["mse_defended_test"] = mse(test, result.model)


def _cells(spec: ExperimentSpec):
    gammas = spec.gamma_grid if spec.defense == "proda" else (None,)
    for family in spec.families:
        for alpha in spec.alpha_grid:
            for gamma in gammas:
                for repeat in range(spec.repeats):
                    yield family, alpha, gamma, repeat


def _run_cell_star(args):
    spec, family, alpha, gamma, repeat = args
    return run_cell(spec, family, alpha, gamma, repeat)


def run_sweep(spec: ExperimentSpec, jobs: int = 1):
    """Iterate the full Cartesian product of grids x repeats, yielding one
    record per cell in deterministic order."""
    cells = list(_cells(spec))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            yield from pool.map(_run_cell_star, [(spec,) + c for c in cells], chunksize=1)
        return
    base = load_base_dataset(spec)
    for family, alpha, gamma, repeat in cells:
        yield run_cell(spec, family, alpha, gamma, repeat, base=base)


def header_record(spec: ExperimentSpec) -> dict:
    return {
        "record_type": "header",
        "schema_version": SCHEMA_VERSION,
        "dataset": spec.dataset_name,
        "attack": spec.attack,
        "defense": spec.defense,
        "families": list(spec.families),
        "alpha_grid": list(spec.alpha_grid),
        "gamma_grid": list(spec.gamma_grid),
        "repeats": spec.repeats,
        "master_seed": spec.master_seed,
    }


def write_records(path, spec: ExperimentSpec, records) -> int:
    """JSON-lines file: header record first, then one record per line."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header_record(spec)) + "\n")
        for record in records:
            fh.write(json.dumps({k: v for k, v in record.items() if v is not None}) + "\n")
            count += 1
    return count


def read_records(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


_CELL_KEYS = ("dataset", "family", "attack", "defense", "alpha", "alpha_assumed", "gamma")
_METRICS = ("mse_clean", "mse_poisoned", "mse_poisoned_trainset", "mse_defended")


def _stats(values):
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def aggregate(records) -> list[dict]:
    """Group cell records by coordinates (everything but the repeat) and
    attach mean/median/min/max per metric; deterministic row order."""
    cells = {}
    for rec in records:
        if rec.get("record_type") != "cell":
            continue
        key = tuple(rec.get(k) for k in _CELL_KEYS)
        cells.setdefault(key, []).append(rec)
    if not cells:
        raise ValueError("no cell records to aggregate")

    def sort_key(key):
        return tuple((v is None, v) for v in key)

    rows = []
    for key in sorted(cells, key=sort_key):
        group = cells[key]
        ok = [r for r in group if "error" not in r]
        row = dict(zip(_CELL_KEYS, key))
        row["n_records"] = len(group)
        row["n_errors"] = len(group) - len(ok)
        for metric in _METRICS:
            values = [r[metric] for r in ok if metric in r]
            if values:
                for stat, v in _stats(values).items():
                    row[f"{metric}_{stat}"] = v
        for tkey in ("time_attack_s", "time_defense_s"):
            values = [r[tkey] for r in ok if tkey in r]
            if values:
                row[f"{tkey}_mean"] = float(np.mean(values))
        rows.append(row)
    return rows


def summary_csv(summary: list[dict]) -> str:
    """Fixed-column CSV of per-cell means; floats via repr for bit-exact
    round trips."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in summary:
        out = []
        for col in SUMMARY_COLUMNS:
            if col in ("dataset", "family", "attack", "defense"):
                v = row.get(col)
            elif col in ("alpha", "alpha_assumed", "gamma"):
                v = row.get(col)
            else:
                v = row.get(f"{col}_mean")
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        writer.writerow(out)
    return buf.getvalue()


_SERIES_LABELS = {"opt": "Opt", "nopt": "Nopt", "trim": "TRIM", "proda": "Proda"}


def _series_for(summary, x_key):
    families = sorted({r["family"] for r in summary})
    multi = len(families) > 1
    series: dict = {}

    def add(name, x, y):
        if x is None or y is None:
            return
        series.setdefault(name, []).append((float(x), float(y)))

    for row in summary:
        prefix = f"{row['family']} " if multi else ""
        add(prefix + "Unpoison", row.get(x_key), row.get("mse_clean_mean"))
        if row.get("attack") not in (None, "none"):
            add(
                prefix + _SERIES_LABELS.get(row["attack"], row["attack"]),
                row.get(x_key),
                row.get("mse_poisoned_mean"),
            )
        if row.get("defense") not in (None, "none"):
            add(
                prefix + _SERIES_LABELS.get(row["defense"], row["defense"]),
                row.get(x_key),
                row.get("mse_defended_mean"),
            )

    def collapse(pts):
        # summaries from combined record files repeat an x (one clean
        # baseline per sweep); average them into one point
        by_x: dict = {}
        for x, y in pts:
            by_x.setdefault(x, []).append(y)
        return [(x, sum(ys) / len(ys)) for x, ys in sorted(by_x.items())]

    return {name: collapse(pts) for name, pts in series.items() if pts}


def emit_plot(summary, kind: str, path):
    """Render an aggregated summary as an SVG chart plus companion CSV.

    kind: mse_vs_alpha | mse_vs_gamma | scatter_fit. For scatter_fit,
    summary is {"points": [(x, y), ...], "lines": [{name, weight, bias}]}.
    Returns (svg_path, csv_path).
    """
    if kind == "mse_vs_alpha":
        series = _series_for(summary, "alpha")
        if not series:
            raise ValueError("summary has no plottable alpha series")
        return svgplot.write_line_chart(series, "poisoning rate alpha", "MSE", path)
    if kind == "mse_vs_gamma":
        series = _series_for([r for r in summary if r.get("gamma") is not None], "gamma")
        if not series:
            raise ValueError("summary has no plottable gamma series")
        return svgplot.write_line_chart(series, "group size gamma", "MSE", path)
    if kind == "scatter_fit":
        from pathlib import Path

        points = summary["points"]
        lines = summary.get("lines", ())
        svg = svgplot.render_scatter_fit(points, lines, "x", "y")
        svg_path = Path(path)
        svg_path.write_text(svg, encoding="utf-8")
        csv_path = svg_path.with_suffix(".csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["series", "x", "y"])
            for x, y in points:
                writer.writerow(["data", repr(float(x)), repr(float(y))])
        return svg_path, csv_path
    raise ValueError(f"unknown plot kind {kind!r}")
