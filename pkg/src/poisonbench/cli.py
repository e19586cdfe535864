"""Command-line entry point: fit, attack, defend, sweep, and report.

Precedence for every option: command-line flag > config file (key=value
lines with section prefixes, e.g. attack.alpha=0.2) > environment > built-in
default. All randomness flows from --seed (default 1337, never wall clock).

Exit codes: 0 success, 1 computational failure, 2 usage error. Diagnostics
go to stderr; data goes to files under the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import harness
from .attack import AttackConfig, nopt_attack, opt_attack, poison_to_csv
from .data import SyntheticSpec, generate_synthetic, load_csv, split_three
from .defend import (
    ProdaConfig,
    proda_defend,
    subset_size,
    trim_defend,
    trim_worst_case_iterations,
)
from .regress import FAMILIES, fit, mse, select_lambda

DEFAULT_SEED = 1337
DEFAULT_OUT = "poisonbench-out"


class UsageError(ValueError):
    """Invalid configuration; reported on stderr with exit code 2."""


@dataclass
class CliConfig:
    command: str
    options: dict

    def __getattr__(self, name):
        try:
            return self.options[name]
        except KeyError as exc:
            raise AttributeError(name) from exc


def _parse_float_list(text: str) -> tuple[float, ...]:
    """Comma list or start:stop:step range (endpoints inclusive)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        count = int(round((stop - start) / step)) + 1
        return tuple(round(start + i * step, 12) for i in range(count))
    return tuple(float(p) for p in text.split(","))


def _parse_int_list(text: str) -> tuple[int, ...]:
    values = _parse_float_list(text)
    out = []
    for v in values:
        if v != int(v):
            raise argparse.ArgumentTypeError(f"expected integers, got {v}")
        out.append(int(v))
    return tuple(out)


def _parse_families(text: str) -> tuple[str, ...]:
    families = tuple(f.strip().lower() for f in text.split(","))
    for f in families:
        if f not in FAMILIES:
            raise argparse.ArgumentTypeError(f"unknown family {f!r} (choose from {FAMILIES})")
    return families


def _parse_synthetic(text: str) -> dict:
    """d=5,n=300,noise=0.1[,seed=0][,w=0.3;0.2;...][,b=0.25]"""
    fields = {}
    for item in text.split(","):
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected key=value in --synthetic, got {item!r}")
        key, value = item.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        spec = {
            "d": int(fields.pop("d")),
            "n": int(fields.pop("n")),
            "noise": float(fields.pop("noise", "0.1")),
            "seed": int(fields.pop("seed", "0")),
        }
        if "w" in fields:
            spec["w"] = tuple(float(v) for v in fields.pop("w").split(";"))
        if "b" in fields:
            spec["b"] = float(fields.pop("b"))
    except (KeyError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"bad --synthetic value: {exc}") from exc
    if fields:
        raise argparse.ArgumentTypeError(f"unknown --synthetic keys: {sorted(fields)}")
    return spec


def build_synthetic_spec(fields: dict) -> SyntheticSpec:
    d, n = fields["d"], fields["n"]
    if "w" in fields:
        w = fields["w"]
        if len(w) != d:
            raise UsageError(f"--synthetic w has {len(w)} entries, expected d={d}")
    else:
        rng = np.random.default_rng(np.random.SeedSequence([fields["seed"], 0xC0FFEE]))
        w = tuple(rng.uniform(-1.0, 1.0, size=d))
    b = fields.get("b")
    if b is None:
        rng = np.random.default_rng(np.random.SeedSequence([fields["seed"], 0xB1A5]))
        b = float(rng.uniform(0.0, 1.0))
    return SyntheticSpec(
        d=d, n=n, true_weights=w, true_bias=b, noise_std=fields["noise"], seed=fields["seed"]
    )


_CONVERTERS = {
    "alpha": float,
    "alphas": _parse_float_list,
    "alpha_assumed": float,
    "gamma": int,
    "gammas": _parse_int_list,
    "epsilon": float,
    "epsilon_conv": float,
    "lam": str,
    "rho": float,
    "family": str,
    "families": _parse_families,
    "attack": str,
    "defense": str,
    "method": str,
    "csv": str,
    "target": str,
    "categorical": lambda s: tuple(p.strip() for p in s.split(",")),
    "synthetic": _parse_synthetic,
    "seed": int,
    "out": str,
    "max_iters": int,
    "repeats": int,
    "jobs": int,
    "max_features": int,
    "train_subsample": int,
    "surrogate_fraction": float,
    "records": str,
    "verbose": lambda s: s.lower() in ("1", "true", "yes"),
}

_DEFAULTS = {
    "seed": DEFAULT_SEED,
    "lam": "0.0",
    "rho": 0.5,
    "family": "ols",
    "families": ("ols",),
    "epsilon": 1e-5,
    "epsilon_conv": 1e-6,
    "max_iters": 100,
    "alphas": harness.DEFAULT_ALPHA_GRID,
    "repeats": 5,
    "jobs": 1,
    "attack": "none",
    "defense": "none",
    "verbose": False,
}


def _add_dataset_args(sub):
    group = sub.add_argument_group("dataset")
    group.add_argument("--csv", help="path to a headered CSV dataset")
    group.add_argument("--target", help="target column name (required with --csv)")
    group.add_argument(
        "--categorical", type=_CONVERTERS["categorical"], help="comma list of categorical columns"
    )
    group.add_argument(
        "--synthetic",
        type=_parse_synthetic,
        help="synthetic spec, e.g. d=5,n=300,noise=0.1[,seed=0][,w=..;..][,b=..]",
    )


def _add_model_args(sub, multi=False):
    group = sub.add_argument_group("model")
    if multi:
        group.add_argument(
            "--families", type=_parse_families, help=f"comma list from {FAMILIES} (default ols)"
        )
    else:
        group.add_argument("--family", choices=FAMILIES, help="model family (default ols)")
    group.add_argument(
        "--lambda", dest="lam", help="regularization strength, or 'auto' for validation-grid selection"
    )
    group.add_argument("--rho", type=float, help="elastic-net l1 mix in [0, 1] (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisonbench",
        description="Poisoning attacks (Nopt, Opt) and defenses (Proda, TRIM) for linear regression.",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("--config", help="key=value config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    common = dict(argument_default=argparse.SUPPRESS)

    p_fit = sub.add_parser("fit", help="fit one model and write it as JSON", **common)
    _add_dataset_args(p_fit)
    _add_model_args(p_fit)

    p_attack = sub.add_parser("attack", help="poison a dataset with nopt or opt", **common)
    _add_dataset_args(p_attack)
    _add_model_args(p_attack)
    p_attack.add_argument("--method", choices=("opt", "nopt"), help="attack algorithm (default nopt)")
    p_attack.add_argument("--alpha", type=float, help="poisoning rate in (0, 0.2]")
    p_attack.add_argument("--epsilon-conv", dest="epsilon_conv", type=float,
                          help="attack stopping threshold (default 1e-6)")
    p_attack.add_argument("--max-iters", dest="max_iters", type=int,
                          help="max outer iterations (default 100)")

    p_defend = sub.add_parser("defend", help="run the proda or trim defense", **common)
    _add_dataset_args(p_defend)
    _add_model_args(p_defend)
    p_defend.add_argument("--method", choices=("proda", "trim"), help="defense algorithm (required)")
    p_defend.add_argument("--gamma", type=int, help="proda group size (>= d+1)")
    p_defend.add_argument("--epsilon", type=float, help="proda failure budget (default 1e-5)")
    p_defend.add_argument("--alpha-assumed", dest="alpha_assumed", type=float,
                          help="defender's poisoning-rate estimate (default 0.2)")
    p_defend.add_argument("--alpha", type=float, help="alias for --alpha-assumed")
    p_defend.add_argument("--max-iters", dest="max_iters", type=int,
                          help="trim iteration cap (default 100)")

    p_sweep = sub.add_parser("sweep", help="run a seeded experiment grid", **common)
    _add_dataset_args(p_sweep)
    _add_model_args(p_sweep, multi=True)
    p_sweep.add_argument("--attack", choices=harness.ATTACKS, help="attack to sweep (default none)")
    p_sweep.add_argument("--defense", choices=harness.DEFENSES, help="defense to sweep (default none)")
    p_sweep.add_argument("--alphas", type=_parse_float_list,
                         help="alpha grid: comma list or start:stop:step (default 0.04:0.20:0.04)")
    p_sweep.add_argument("--gammas", type=_parse_int_list, help="gamma grid for proda")
    p_sweep.add_argument("--alpha-assumed", dest="alpha_assumed", type=float,
                         help="fixed assumed alpha (default: the cell's real alpha)")
    p_sweep.add_argument("--epsilon", type=float, help="proda failure budget (default 1e-5)")
    p_sweep.add_argument("--repeats", type=int, help="repeats per cell (default 5)")
    p_sweep.add_argument("--jobs", type=int, help="parallel cell workers (default 1)")
    p_sweep.add_argument("--max-features", dest="max_features", type=int,
                         help="keep only the first K feature columns")
    p_sweep.add_argument("--train-subsample", dest="train_subsample", type=int,
                         help="subsample the training fold to this size")
    p_sweep.add_argument("--surrogate-fraction", dest="surrogate_fraction", type=float,
                         help="grey-box attacker view as a fraction of the training fold")

    p_report = sub.add_parser("report", help="aggregate a records file into CSV + SVGs", **common)
    p_report.add_argument("--records", help="records.jsonl produced by sweep (required)")

    for p in (p_fit, p_attack, p_defend, p_sweep, p_report):
        p.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
        p.add_argument("--out", help="output directory (default $POISONBENCH_OUT or ./poisonbench-out)")
        p.add_argument("--verbose", action="store_true", help="chatty progress on stderr")
    return parser


def _load_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read --config file: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.split(".")[-1].replace("-", "_")
        if dest == "lambda":
            dest = "lam"
        if dest not in _CONVERTERS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[dest] = _CONVERTERS[dest](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def parse_args(argv) -> CliConfig:
    """Resolve the full configuration: flags > config file > defaults."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    explicit = vars(ns)
    command = explicit.pop("command")
    options = dict(_DEFAULTS)
    if "config" in explicit:
        options.update(_load_config_file(explicit.pop("config")))
    options.update(explicit)
    options.setdefault("out", os.environ.get("POISONBENCH_OUT", DEFAULT_OUT))
    cfg = CliConfig(command=command, options=options)
    _validate(cfg)
    return cfg


def _validate(cfg: CliConfig):
    opts = cfg.options
    if cfg.command in ("fit", "attack", "defend", "sweep"):
        has_csv = "csv" in opts
        has_syn = "synthetic" in opts
        if has_csv == has_syn:
            raise UsageError("exactly one of --csv and --synthetic is required")
        if has_csv and "target" not in opts:
            raise UsageError("--target is required with --csv")
    if cfg.command == "attack" and "alpha" not in opts:
        raise UsageError("--alpha is required for attack")
    if cfg.command == "attack":
        opts.setdefault("method", "nopt")
    if cfg.command == "defend":
        if "method" not in opts:
            raise UsageError("--method is required for defend (proda or trim)")
        if opts["method"] == "proda" and "gamma" not in opts:
            raise UsageError("--gamma is required for the proda defense")
        opts.setdefault("alpha_assumed", opts.get("alpha", 0.2))
    if cfg.command == "sweep":
        if opts.get("defense") == "proda" and "gammas" not in opts:
            raise UsageError("--gammas is required when sweeping the proda defense")
    if cfg.command == "report" and "records" not in opts:
        raise UsageError("--records is required for report")
    if "lam" in opts and opts["lam"] != "auto":
        try:
            lam = float(opts["lam"])
        except ValueError as exc:
            raise UsageError(f"--lambda must be a number or 'auto', got {opts['lam']!r}") from exc
        if lam < 0:
            raise UsageError("--lambda must be >= 0")


def _load_dataset(cfg: CliConfig):
    opts = cfg.options
    if "csv" in opts:
        ds, norm = load_csv(opts["csv"], opts["target"], opts.get("categorical"))
        name = Path(opts["csv"]).stem
        target = opts["target"]
    else:
        spec = build_synthetic_spec(opts["synthetic"])
        ds, norm = generate_synthetic(spec)
        name = "synthetic"
        target = "y"
    return ds, norm, name, target


def _resolve_lambda_cli(cfg, ds):
    opts = cfg.options
    family = opts.get("family", "ols")
    if opts["lam"] == "auto":
        if family == "ols":
            return 0.0
        split = split_three(ds, opts["seed"])
        return select_lambda(split.train, split.validation, family, rho=opts["rho"])
    return float(opts["lam"])


def _out_dir(cfg: CliConfig) -> Path:
    out = Path(cfg.options["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_fit(cfg: CliConfig) -> int:
    ds, norm, name, _ = _load_dataset(cfg)
    lam = _resolve_lambda_cli(cfg, ds)
    family = cfg.options.get("family", "ols")
    report = fit(ds, family, lam, rho=cfg.options["rho"])
    out = _out_dir(cfg)
    (out / f"{name}_model.json").write_text(report.model.to_json(), encoding="utf-8")
    (out / f"{name}_normalization.json").write_text(norm.to_json(), encoding="utf-8")
    print(f"family={family} lambda={lam} train_mse={report.train_mse}")
    if ds.d == 1:
        harness.emit_plot(
            {
                "points": list(zip(ds.features[:, 0], ds.responses)),
                "lines": [
                    {"name": family, "weight": float(report.model.weights[0]),
                     "bias": report.model.bias}
                ],
            },
            "scatter_fit",
            out / f"{name}_fit.svg",
        )
    return 0


def _cmd_attack(cfg: CliConfig) -> int:
    opts = cfg.options
    ds, _, name, target = _load_dataset(cfg)
    lam = _resolve_lambda_cli(cfg, ds)
    family = opts.get("family", "ols")
    attack_cfg = AttackConfig(
        alpha=opts["alpha"],
        eps_conv=opts["epsilon_conv"],
        max_outer_iters=opts["max_iters"],
        seed=opts["seed"],
    )
    attack_fn = nopt_attack if opts["method"] == "nopt" else opt_attack
    state = attack_fn(ds, attack_cfg, family, lam, rho=opts["rho"])
    out = _out_dir(cfg)
    (out / f"{name}_poison.csv").write_text(poison_to_csv(state, target), encoding="utf-8")
    (out / f"{name}_attack_trace.jsonl").write_text(state.to_jsonl(), encoding="utf-8")
    summary = {
        "method": opts["method"],
        "objective": state.objective_name,
        "final_objective": state.e_trace[-1],
        "clean_ref_loss": state.clean_ref_loss,
        "iterations": state.iterations,
        "converged": state.converged,
        "n_poison": state.poison.n,
        "model": json.loads(state.model.to_json()),
    }
    (out / f"{name}_attack.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(
        f"method={opts['method']} n_poison={state.poison.n} "
        f"final_objective={state.e_trace[-1]} converged={state.converged}"
    )
    return 0


def _cmd_defend(cfg: CliConfig) -> int:
    opts = cfg.options
    ds, _, name, _ = _load_dataset(cfg)
    lam = _resolve_lambda_cli(cfg, ds)
    family = opts.get("family", "ols")
    alpha_assumed = opts["alpha_assumed"]
    if opts["method"] == "proda":
        dcfg = ProdaConfig(
            gamma=opts["gamma"],
            epsilon=opts["epsilon"],
            alpha_assumed=alpha_assumed,
            seed=opts["seed"],
        )
        result = proda_defend(ds, dcfg, family, lam, rho=opts["rho"])
    else:
        result = trim_defend(
            ds, alpha_assumed, family, lam, rho=opts["rho"],
            max_iters=opts["max_iters"], seed=opts["seed"],
        )
    out = _out_dir(cfg)
    doc = json.loads(result.to_json())
    doc["method"] = opts["method"]
    doc["alpha_assumed"] = alpha_assumed
    n = subset_size(ds.n, alpha_assumed)
    doc["trim_worst_case_iterations"] = str(trim_worst_case_iterations(ds.n, n))
    doc["trim_worst_case_note"] = (
        f"iterative trimming may traverse C({ds.n}, {n}) subsets in the worst case"
    )
    if opts["method"] == "trim":
        doc["max_iters"] = opts["max_iters"]
    (out / f"{name}_defense.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    print(
        f"method={opts['method']} subset_mse={result.subset_mse} "
        f"beta_used={result.beta_used} iterations={result.iterations}"
    )
    return 0


def _build_experiment_spec(cfg: CliConfig) -> harness.ExperimentSpec:
    opts = cfg.options
    kwargs = dict(
        families=opts["families"],
        lambda_policy="select" if opts["lam"] == "auto" else float(opts["lam"]),
        rho=opts["rho"],
        attack=opts["attack"],
        defense=opts["defense"],
        alpha_grid=opts["alphas"],
        gamma_grid=opts.get("gammas", ()),
        alpha_assumed=opts.get("alpha_assumed"),
        repeats=opts["repeats"],
        master_seed=opts["seed"],
        max_features=opts.get("max_features"),
        train_subsample=opts.get("train_subsample"),
        surrogate_fraction=opts.get("surrogate_fraction"),
        defense_epsilon=opts["epsilon"],
        defense_max_iters=opts["max_iters"],
    )
    if "csv" in opts:
        kwargs.update(
            dataset_name=Path(opts["csv"]).stem,
            csv_path=opts["csv"],
            target_column=opts["target"],
            categorical=opts.get("categorical", ()),
        )
    else:
        kwargs.update(dataset_name="synthetic", synthetic=build_synthetic_spec(opts["synthetic"]))
    try:
        return harness.ExperimentSpec(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _write_report(out: Path, records) -> None:
    summary = harness.aggregate(records)
    (out / "summary.csv").write_text(harness.summary_csv(summary), encoding="utf-8")
    alphas = {r.get("alpha") for r in summary if r.get("alpha") is not None}
    gammas = {r.get("gamma") for r in summary if r.get("gamma") is not None}
    if len(alphas) > 1:
        harness.emit_plot(summary, "mse_vs_alpha", out / "mse_vs_alpha.svg")
    if len(gammas) > 1:
        harness.emit_plot(summary, "mse_vs_gamma", out / "mse_vs_gamma.svg")
    lines = ["poisonbench report", f"cells: {len(summary)}"]
    trims = [r for r in records if r.get("record_type") == "cell" and r.get("defense") == "trim"]
    if trims:
        iters = [r.get("defense_iterations", 0) for r in trims if "defense_iterations" in r]
        bound = next((r["trim_worst_case_iterations"] for r in trims
                      if "trim_worst_case_iterations" in r), None)
        lines.append(
            f"trim iterations: max {max(iters) if iters else 'n/a'} (bounded by max_iters); "
            f"worst case C(N, n) = {bound} subset traversals"
        )
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_sweep(cfg: CliConfig) -> int:
    spec = _build_experiment_spec(cfg)
    out = _out_dir(cfg)
    records = []
    verbose = cfg.options["verbose"]
    for record in harness.run_sweep(spec, jobs=cfg.options["jobs"]):
        records.append(record)
        if verbose:
            print(
                f"[{len(records)}] {record['family']} alpha={record['alpha']} "
                f"gamma={record['gamma']} repeat={record['repeat']} "
                f"{'error=' + record['error'] if 'error' in record else 'ok'}",
                file=sys.stderr,
            )
    harness.write_records(out / "records.jsonl", spec, records)
    _write_report(out, records)
    print(f"wrote {len(records)} records to {out / 'records.jsonl'}")
    return 0


def _cmd_report(cfg: CliConfig) -> int:
    records = harness.read_records(cfg.options["records"])
    out = _out_dir(cfg)
    _write_report(out, records)
    print(f"wrote summary for {len(records)} records to {out / 'summary.csv'}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "attack": _cmd_attack,
    "defend": _cmd_defend,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def dispatch(cfg: CliConfig) -> int:
    """Run the configured subcommand; exceptions map to exit codes."""
    try:
        return _COMMANDS[cfg.command](cfg)
    except UsageError:
        raise
    except Exception as exc:  # noqa: BLE001 - computational failure -> exit 1
        print(f"poisonbench: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    try:
        cfg = parse_args(argv if argv is not None else sys.argv[1:])
    except UsageError as exc:
        print(f"poisonbench: {exc}", file=sys.stderr)
        return 2
    try:
        return dispatch(cfg)
    except UsageError as exc:
        print(f"poisonbench: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
