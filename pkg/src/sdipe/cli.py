"""Command-line entry point: ``sdipe {simulate,sweep-delta,balance,analyze}``.

Settings resolve in order: built-in defaults, ``--config`` file, flags.
The config file is plain ``key = value`` lines; ``#`` starts a comment and
list-valued keys take comma-separated values.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .datamodel import ColumnRoles, load_csv
from .errors import ConfigError, SdipeError, UnstableBootstrapError
from .estimators import point_estimate, sdipe
from .impute import ImputationConfig
from .inference import (
    BALANCE_COLUMNS,
    MAX_BOOTSTRAP_FAILURE,
    SIM_COLUMNS,
    SWEEP_COLUMNS,
    McScenario,
    average_balance,
    bootstrap_distribution,
    default_delta_grid,
    percentile_interval,
    run_monte_carlo,
    sensitivity_sweep,
    write_table,
)
from .numstat import RngStream
from .simgen import SimConfig

LIST_KEYS = {"n": int, "prevalence": float, "missing": float, "delta": float, "methods": str, "covariates": str}
SCALAR_KEYS = {
    "seed": int, "replicates": int, "bootstrap": int, "m": int, "proper": bool, "deterministic": bool,
    "beta0": float, "noise_sd": float, "ci_level": float, "workers": int, "out": str,
    "input": str, "outcome": str, "treatment": str, "mnar": str, "na_token": str,
}

SUBCOMMAND_DEFAULTS = {
    "simulate": {"n": [500, 1000], "prevalence": [0.2, 0.4], "missing": [0.1, 0.3, 0.5], "delta": [0.0],
                 "replicates": 500, "bootstrap": 200},
    "sweep-delta": {"n": [500, 1000], "prevalence": [0.2, 0.4], "missing": [0.1, 0.3, 0.5],
                    "delta": default_delta_grid(), "replicates": 500, "bootstrap": 200},
    "balance": {"n": [500], "prevalence": [0.2, 0.4], "missing": [0.1, 0.3, 0.5], "delta": [0.0],
                "replicates": 500, "bootstrap": 200},
    "analyze": {"n": [], "prevalence": [], "missing": [], "delta": [0.0], "replicates": 1, "bootstrap": 500},
}


@dataclass
class RunConfig:
    subcommand: str
    n: list = field(default_factory=list)
    prevalence: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    delta: list = field(default_factory=lambda: [0.0])
    methods: list = field(default_factory=lambda: ["sdipe", "baseline"])
    seed: int = 2025
    replicates: int = 500
    bootstrap: int = 200
    m: int = 10
    proper: bool = True
    deterministic: bool = False
    beta0: float = 0.0
    noise_sd: float = 1.0
    ci_level: float = 0.95
    workers: int = 1
    out: str = "results"
    input: str | None = None
    outcome: str | None = None
    treatment: str | None = None
    mnar: str | None = None
    covariates: list = field(default_factory=list)
    na_token: str = "NA"

    def validate(self) -> None:
        def bad(msg):
            raise ConfigError(msg)

        if self.subcommand != "analyze":
            for key in ("n", "prevalence", "missing"):
                if not getattr(self, key):
                    bad(f"{key} grid is empty")
            if any(v < 2 for v in self.n):
                bad("every n must be >= 2")
            for key in ("prevalence", "missing"):
                if any(not 0.01 < v < 0.99 for v in getattr(self, key)):
                    bad(f"{key} values must lie in (0.01, 0.99)")
            if self.replicates < 1:
                bad("replicates must be >= 1")
        if not self.delta:
            bad("delta grid is empty")
        unknown = set(self.methods) - {"sdipe", "baseline"}
        if unknown or not self.methods:
            bad(f"methods must be a subset of sdipe,baseline (got {','.join(self.methods)})")
        if self.bootstrap < 2:
            bad("bootstrap must be >= 2")
        if self.m < 1:
            bad("m must be >= 1")
        if self.deterministic and self.proper:
            bad("deterministic imputation requires proper = false")
        if not 0.0 < self.ci_level < 1.0:
            bad("ci_level must lie in (0, 1)")
        if self.noise_sd < 0:
            bad("noise_sd must be >= 0")
        if self.seed < 0:
            bad("seed must be >= 0")
        if self.subcommand == "analyze":
            for key in ("input", "outcome", "treatment", "mnar"):
                if not getattr(self, key):
                    bad(f"analyze requires --{key}")
        out = Path(self.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            bad(f"cannot create output directory {out}: {exc}")
        if not os.access(out, os.W_OK):
            bad(f"output directory {out} is not writable")

    def icfg(self, delta: float) -> ImputationConfig:
        return ImputationConfig(m=self.m, delta=delta, proper=self.proper, deterministic=self.deterministic)

    def sim(self, n: int, prevalence: float, missing: float) -> SimConfig:
        return SimConfig(n=n, prevalence_target=prevalence, missing_target=missing,
                         beta0=self.beta0, noise_sd=self.noise_sd, seed=self.seed)


def _convert(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in LIST_KEYS:
            typ = LIST_KEYS[key]
            return [typ(v.strip()) for v in raw.split(",") if v.strip()]
        typ = SCALAR_KEYS[key]
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return typ(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def read_config_file(path: str) -> dict:
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in LIST_KEYS and key not in SCALAR_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, val)
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdipe", description="Stratified delta-imputed propensity estimation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--replicates", type=int)
        p.add_argument("--bootstrap", type=int, help="bootstrap resamples")
        p.add_argument("--m", type=int, help="number of imputations")
        p.add_argument("--delta", help="imputation shift (comma list for grids)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--ci-level", type=float, dest="ci_level")
        p.add_argument("--improper", dest="proper", action="store_const", const=False,
                       help="plug-in rather than parameter-draw imputation")

    def grid(p):
        p.add_argument("--n", help="sample sizes, comma separated")
        p.add_argument("--prevalence", help="treatment prevalence targets")
        p.add_argument("--missing", help="missingness targets (fractions)")
        p.add_argument("--methods", help="sdipe,baseline")
        p.add_argument("--beta0", type=float)
        p.add_argument("--noise-sd", type=float, dest="noise_sd")

    for name, help_ in (("simulate", "Monte Carlo bias / CI / coverage table"),
                        ("sweep-delta", "average bias across a delta grid"),
                        ("balance", "weighted covariate balance by subgroup")):
        p = sub.add_parser(name, help=help_)
        common(p)
        grid(p)

    p = sub.add_parser("analyze", help="estimate the ATE on a CSV file")
    common(p)
    p.add_argument("--input")
    p.add_argument("--outcome")
    p.add_argument("--treatment")
    p.add_argument("--mnar", help="column with the partially observed confounder")
    p.add_argument("--covariates", help="fully observed covariate columns, comma separated")
    p.add_argument("--na-token", dest="na_token")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(SUBCOMMAND_DEFAULTS[args.subcommand])
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key, val in vars(args).items():
        if key in ("config", "subcommand") or val is None:
            continue
        if key in LIST_KEYS and isinstance(val, str):
            val = _convert(key, val)
        elif key == "delta":
            val = _convert(key, val)
        values[key] = val
    if args.subcommand == "analyze" and len(values.get("delta", [0.0])) != 1:
        raise ConfigError("analyze takes a single delta")
    cfg = RunConfig(subcommand=args.subcommand, **values)
    cfg.validate()
    return cfg


def _manifest(cfg: RunConfig, outputs: list[str], started: float) -> dict:
    return {
        "subcommand": cfg.subcommand,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "outputs": outputs,
        "versions": {"sdipe": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_s": round(time.time() - started, 3),
    }


def _write_manifest(cfg: RunConfig, name: str, outputs: list[str], started: float) -> None:
    path = Path(cfg.out) / name
    path.write_text(json.dumps(_manifest(cfg, outputs, started), indent=2) + "\n", encoding="utf-8")


class ScenarioFailure(SdipeError):
    pass


def _scenario_label(**kw) -> str:
    return ", ".join(f"{k}={v}" for k, v in kw.items())


def cmd_simulate(cfg: RunConfig) -> list[str]:
    started = time.time()
    rows = []
    for n, prev, miss, delta in itertools.product(cfg.n, cfg.prevalence, cfg.missing, cfg.delta):
        for method in cfg.methods:
            sc = McScenario(sim=cfg.sim(n, prev, miss), icfg=cfg.icfg(delta), replicates=cfg.replicates,
                            bootstrap_b=cfg.bootstrap, ci_level=cfg.ci_level, estimator=method)
            try:
                rows.append(run_monte_carlo(sc, RngStream(cfg.seed), workers=cfg.workers).row())
            except SdipeError as exc:
                raise ScenarioFailure(f"scenario ({_scenario_label(method=method, n=n, prevalence=prev, missing=miss, delta=delta)}): {exc}") from exc
    path = Path(cfg.out) / "simulate.csv"
    write_table(path, SIM_COLUMNS, rows)
    _write_manifest(cfg, "simulate_manifest.json", [path.name], started)
    return [str(path)]


def cmd_sweep_delta(cfg: RunConfig) -> list[str]:
    started = time.time()
    outputs = []
    for method in cfg.methods:
        for prev in cfg.prevalence:
            rows = []
            for n, miss in itertools.product(cfg.n, cfg.missing):
                sc = McScenario(sim=cfg.sim(n, prev, miss), icfg=cfg.icfg(0.0), replicates=cfg.replicates,
                                bootstrap_b=cfg.bootstrap, ci_level=cfg.ci_level, estimator=method)
                try:
                    rows.extend(sensitivity_sweep(sc, cfg.delta, RngStream(cfg.seed), workers=cfg.workers))
                except SdipeError as exc:
                    raise ScenarioFailure(f"scenario ({_scenario_label(method=method, n=n, prevalence=prev, missing=miss)}): {exc}") from exc
            path = Path(cfg.out) / f"sensitivity_{method}_prev{round(prev * 100):d}.csv"
            write_table(path, SWEEP_COLUMNS, rows)
            outputs.append(path.name)
    _write_manifest(cfg, "sweep_delta_manifest.json", outputs, started)
    return [str(Path(cfg.out) / o) for o in outputs]


def cmd_balance(cfg: RunConfig) -> list[str]:
    started = time.time()
    outputs = []
    delta = cfg.delta[0]
    for n in cfg.n:
        rows = []
        for prev, miss in itertools.product(cfg.prevalence, cfg.missing):
            try:
                rows.extend(average_balance(cfg.sim(n, prev, miss), cfg.icfg(delta), cfg.replicates,
                                            RngStream(cfg.seed), methods=cfg.methods, workers=cfg.workers))
            except SdipeError as exc:
                raise ScenarioFailure(f"scenario ({_scenario_label(n=n, prevalence=prev, missing=miss)}): {exc}") from exc
        path = Path(cfg.out) / f"balance_n{n}.csv"
        write_table(path, BALANCE_COLUMNS, rows)
        outputs.append(path.name)
    _write_manifest(cfg, "balance_manifest.json", outputs, started)
    return [str(Path(cfg.out) / o) for o in outputs]


def analyze(cfg: RunConfig) -> dict:
    """Run SDIPE with a bootstrap interval on the configured CSV."""
    roles = ColumnRoles(outcome=cfg.outcome, treatment=cfg.treatment, mnar=cfg.mnar, covariates=tuple(cfg.covariates))
    ds = load_csv(cfg.input, roles, na_tokens=("", cfg.na_token))
    delta = cfg.delta[0]
    icfg = cfg.icfg(delta)
    master = RngStream(cfg.seed)
    est = sdipe(ds, icfg, master.substream(1))

    def estimator(d, r):
        return point_estimate("sdipe", icfg, d, r)

    boots, failed = bootstrap_distribution(ds, estimator, cfg.bootstrap, master.substream(2))
    if failed > MAX_BOOTSTRAP_FAILURE * cfg.bootstrap:
        raise UnstableBootstrapError(f"{failed} of {cfg.bootstrap} bootstrap resamples failed")
    lo, hi = percentile_interval(boots, cfg.ci_level)

    treated = ds.a == 1
    miss = ds.r_z == 0

    def pct(mask):
        return float(100.0 * miss[mask].mean()) if mask.any() else None

    result = {
        "tau_hat": est.tau_hat,
        "ci": [lo, hi],
        "ci_level": cfg.ci_level,
        "p_obs": est.p_obs,
        "tau_obs": est.tau_obs,
        "n": ds.n,
        "missing_pct": float(100.0 * miss.mean()),
        "missing_pct_by_arm": {"treated": pct(treated), "control": pct(~treated)},
        "delta": delta,
        "m": cfg.m,
        "seed": cfg.seed,
        "bootstrap_b": cfg.bootstrap,
        "bootstrap_failed": failed,
        "weight_diagnostics": est.diagnostics,
        "clip_counts": {k: v["clip_count"] for k, v in est.diagnostics.items()},
    }
    if est.tau_miss is not None:
        result["tau_miss"] = est.tau_miss
        result["per_imputation_tau_miss"] = est.per_imputation_tau_miss.tolist()
    return result


def cmd_analyze(cfg: RunConfig) -> list[str]:
    result = analyze(cfg)
    result["config"] = asdict(cfg)
    path = Path(cfg.out) / "analysis.json"
    path.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return [str(path)]


COMMANDS = {"simulate": cmd_simulate, "sweep-delta": cmd_sweep_delta, "balance": cmd_balance, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"sdipe {args.subcommand}: error: {exc}", file=sys.stderr)
        return 2
    try:
        outputs = COMMANDS[cfg.subcommand](cfg)
    except SdipeError as exc:
        print(f"sdipe {cfg.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sdipe {cfg.subcommand}: {exc}", file=sys.stderr)
        return 1
    for o in outputs:
        print(o)
    return 0


if __name__ == "__main__":
    sys.exit(main())
