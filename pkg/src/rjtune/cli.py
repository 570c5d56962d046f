"""Command-line front end.

    rjtune sample | tune | curves | experiment | limitcheck [options]

Each subcommand reads an optional JSON (or TOML) config document; command-line
flags override it. Unknown keys are rejected. Exit codes: 0 success, 2 bad
configuration, 3 refused by the budget guard, 4 numerical guard.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .constants import OPTIMAL_UPDATE_RATE
from .diagnostics import summarize
from .diffusion import figure1_curves, limit_check_birth_rate, limit_check_z1_marginal
from .errors import BudgetExceededError, NumericalGuardError
from .experiment import CSV_HEADER, estimate_cost, run_experiment
from .io import write_csv, write_json
from .rjmcmc import MoveConfig, MoveKind, run_chain
from .rng import RngHandle
from .target import TargetSpec
from .tuning import optimal_tau_closed_form, trial_run_tune

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_NUMERIC = 0, 2, 3, 4

TRACE_HEADER = ("iter", "k", "x1", "move_kind", "accepted")
LIMIT_HEADER = ("check", "n", "seed", "estimate", "se", "target", "distance", "finite_n_exact")


class ConfigError(ValueError):
    pass


COMMON = {
    "seed": (int, 0),
    "workers": (int, None),
    "out": (str, "rjtune-out"),
    "budget_seconds": (float, 3600.0),
    "override_budget": (bool, False),
}

DEFAULT_TARGET = {"n": 20, "density": {"family": "normal", "mu": 0.0, "sigma": 1.0},
                  "proposal": {"mode": "same_as_f", "Astar": 1.0}}

SCHEMAS = {
    "sample": {
        "target": (dict, DEFAULT_TARGET),
        "tau": (float, None),
        "ell": (float, None),
        "iterations": (int, 1000),
        "burn_in": (int, 0),
        "chains": (int, 1),
        "init": (str, "from_target"),
    },
    "tune": {
        "target": (dict, {**DEFAULT_TARGET, "n": 200}),
        "tau": (float, None),
        "rate_target": (float, OPTIMAL_UPDATE_RATE),
        "tolerance": (float, 0.02),
        "iterations": (int, 400_000),
        "A_known": (bool, True),
    },
    "curves": {
        "A_list": (list, [2.0, 5.0, 25.0]),
        "tau_grid": (list, [round(0.01 * i, 2) for i in range(1, 100)]),
        "A_range": (list, [2.0 + 0.5 * i for i in range(197)]),
    },
    "experiment": {
        "n": (int, 20),
        "mu": (float, 0.0),
        "sigma": (float, 1.0),
        "A_list": (list, [2.0, 5.0, 25.0]),
        "tau_grid": (list, [round(0.1 * i, 1) for i in range(1, 10)]),
        "replicates": (int, 100),
        "iterations": (int, 20_000),
        "burn_in": (int, 0),
    },
    "limitcheck": {
        "n_ladder": (list, [50, 200, 1000]),
        "A": (float, 2.0),
        "tau": (float, None),
        "iterations": (int, 1_000_000),
        "draws": (int, 1_000_000),
        "seeds": (int, 3),
        "z1_mode": (str, "exact"),
    },
}


def _coerce(key, typ, value):
    if value is None:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
    elif typ is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif typ is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif typ is str:
        if isinstance(value, str):
            return value
    elif typ is list:
        if isinstance(value, (list, tuple)) and all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return list(value)
    elif typ is dict:
        if isinstance(value, dict):
            return value
    raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}")


def load_document(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from None
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            doc = tomllib.loads(raw.decode("utf-8"))
        else:
            doc = json.loads(raw)
    except Exception as e:
        raise ConfigError(f"config: cannot parse {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a key/value document")
    return doc


def resolve_config(command: str, doc: dict, overrides: dict) -> dict:
    """Merge defaults, config document and flag overrides (flags win); validate types."""
    schema = {**COMMON, **SCHEMAS[command]}
    unknown = set(doc) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys for '{command}': {sorted(unknown)}")
    cfg = {}
    for key, (typ, default) in schema.items():
        value = doc.get(key, default)
        cfg[key] = _coerce(key, typ, value)
    for key, value in overrides.items():
        if key.startswith("target."):
            t = json.loads(json.dumps(cfg["target"]))
            *path, leaf = key.split(".")[1:]
            node = t
            for p in path:
                node = node.setdefault(p, {})
            node[leaf] = value
            cfg["target"] = t
        elif value is not None:
            cfg[key] = _coerce(key, schema[key][0], value)
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    if cfg["workers"] < 1:
        raise ConfigError("workers: must be >= 1")
    if cfg["seed"] < 0 or cfg["seed"] >= 2**64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    return cfg


def _target(cfg) -> TargetSpec:
    try:
        return TargetSpec.from_dict(cfg["target"])
    except (ValueError, TypeError) as e:
        raise ConfigError(f"target: {e}") from None


def _move_config(target, tau, ell, key_prefix="") -> MoveConfig:
    if tau is None:
        tau = optimal_tau_closed_form(target.proposal.A)
    try:
        return MoveConfig.for_target(target, tau, ell)
    except ValueError as e:
        raise ConfigError(f"{key_prefix}{e}") from None


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


# -- subcommands ---------------------------------------------------------------

def _sample_chain(args):
    target_doc, tau, A, ell, iterations, burn_in, init, seed, stream = args
    target = TargetSpec.from_dict(target_doc)
    tr = run_chain(target, MoveConfig(tau, A, ell), init, iterations, burn_in,
                   RngHandle(seed, stream))
    return tr


def cmd_sample(cfg) -> int:
    target = _target(cfg)
    mc = _move_config(target, cfg["tau"], cfg["ell"])
    _require(cfg["burn_in"] >= 0, "burn_in: must be >= 0")
    _require(cfg["iterations"] >= cfg["burn_in"], "iterations: must be >= burn_in")
    _require(cfg["chains"] >= 1, "chains: must be >= 1")
    _require(cfg["init"] in ("from_target", "cold"), "init: must be 'from_target' or 'cold'")
    tasks = [(target.to_dict(), mc.tau, mc.A, mc.ell, cfg["iterations"], cfg["burn_in"],
              cfg["init"], cfg["seed"], i) for i in range(cfg["chains"])]
    if cfg["workers"] > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg["workers"], len(tasks))) as ex:
            traces = list(ex.map(_sample_chain, tasks))
    else:
        traces = [_sample_chain(t) for t in tasks]

    out = Path(cfg["out"])
    chains = []
    files = []
    for i, tr in enumerate(traces):
        name = "trace.csv" if len(traces) == 1 else f"trace_chain{i}.csv"
        rows = zip(range(tr.burn_in, tr.burn_in + tr.iterations), tr.k, tr.x1,
                   (MoveKind(m).label for m in tr.move_kind), tr.accepted)
        files.append((out / name, rows))
        info = tr.summary()
        info["stream"] = i
        if tr.iterations:
            s = summarize(tr, target.prior)
            info.update(k_mode_hat=s.k_mode_hat, mu_hat=s.mu_hat, sigma_hat=s.sigma_hat,
                        acceptance=s.acceptance, ess=s.ess)
        chains.append(info)
    for path, rows in files:
        write_csv(path, TRACE_HEADER, rows)
    write_json(out / "summary.json", {
        "command": "sample", "version": __version__, "seed": cfg["seed"],
        "target": target.to_dict(), "move_config": {"tau": mc.tau, "A": mc.A, "ell": mc.ell},
        "iterations": cfg["iterations"], "burn_in": cfg["burn_in"], "init": cfg["init"],
        "chains": chains})
    print(f"wrote {len(files)} trace file(s) and summary.json to {out}")
    return EXIT_OK


def cmd_tune(cfg) -> int:
    target = _target(cfg)
    _require(0.0 < cfg["rate_target"] < 1.0, "rate_target: must lie in the open interval (0, 1)")
    _require(cfg["tolerance"] > 0, "tolerance: must be positive")
    _require(cfg["iterations"] > 0, "iterations: must be positive")
    mc = _move_config(target, cfg["tau"], None)
    rep = trial_run_tune(target, mc, cfg["iterations"], RngHandle(cfg["seed"]),
                         A_known=cfg["A_known"], rate_target=cfg["rate_target"],
                         tolerance=cfg["tolerance"])
    doc = rep.to_dict()
    doc.update(command="tune", version=__version__, seed=cfg["seed"],
               target=target.to_dict(), tau_used=mc.tau)
    write_json(Path(cfg["out"]) / "tune_report.json", doc)
    print(rep.table())
    return EXIT_OK


def cmd_curves(cfg) -> int:
    _require(all(a > 0 for a in cfg["A_list"]), "A_list: values must be positive")
    _require(all(a > 0 for a in cfg["A_range"]), "A_range: values must be positive")
    _require(cfg["tau_grid"] and all(0 < t < 1 for t in cfg["tau_grid"]),
             "tau_grid: values must lie in the open interval (0, 1)")
    tables = figure1_curves(cfg["A_list"], cfg["tau_grid"], cfg["A_range"])
    out = Path(cfg["out"])
    write_csv(out / "figure1_inefficiency.csv", ("A", "tau", "inefficiency"), tables.inefficiency)
    write_csv(out / "figure1_tau_star.csv", ("A", "tau_star"), tables.tau_star)
    print(f"wrote figure1_inefficiency.csv and figure1_tau_star.csv to {out}")
    return EXIT_OK


def cmd_experiment(cfg) -> int:
    _require(cfg["n"] >= 7, "n: must be >= 7")
    _require(cfg["sigma"] > 0, "sigma: must be positive")
    _require(cfg["A_list"] and all(a >= 2 for a in cfg["A_list"]), "A_list: values must be >= 2")
    _require(cfg["tau_grid"] and all(0 < t < 1 for t in cfg["tau_grid"]),
             "tau_grid: values must lie in the open interval (0, 1)")
    _require(cfg["replicates"] >= 2, "replicates: must be >= 2")
    _require(0 <= cfg["burn_in"] < cfg["iterations"], "iterations: must exceed burn_in >= 0")
    t0 = time.perf_counter()
    res = run_experiment(cfg["n"], cfg["mu"], cfg["sigma"], cfg["A_list"], cfg["tau_grid"],
                         cfg["replicates"], cfg["iterations"], cfg["burn_in"], cfg["seed"],
                         cfg["workers"], cfg["budget_seconds"], cfg["override_budget"])
    out = Path(cfg["out"])
    write_csv(out / "experiment.csv", CSV_HEADER, res.rows())
    meta = res.metadata()
    meta["command"] = "experiment"
    write_json(out / "experiment.json", meta)
    print(f"experiment finished in {time.perf_counter() - t0:.1f}s; wrote {out}")
    return EXIT_OK


def cmd_limitcheck(cfg) -> int:
    ladder = cfg["n_ladder"]
    _require(ladder and all(float(n).is_integer() and n >= 7 for n in ladder),
             "n_ladder: values must be integers >= 7")
    _require(cfg["A"] >= 2, "A: must be >= 2")
    _require(cfg["seeds"] >= 1, "seeds: must be >= 1")
    _require(cfg["iterations"] > 0 and cfg["draws"] > 1, "iterations/draws: must be positive")
    _require(cfg["z1_mode"] in ("exact", "chain"), "z1_mode: must be 'exact' or 'chain'")
    tau = cfg["tau"] if cfg["tau"] is not None else optimal_tau_closed_form(cfg["A"])
    _require(0 < tau < 1, "tau: must lie in (0, 1)")
    if not cfg["override_budget"]:
        est = sum(estimate_cost(int(n), [cfg["A"]], [tau], cfg["seeds"], cfg["iterations"])
                  for n in ladder)
        if est > cfg["budget_seconds"]:
            raise BudgetExceededError(f"estimated {est:.0f}s exceeds the budget")
    rows = []
    for i, n in enumerate(int(n) for n in ladder):
        target = TargetSpec.build(n, astar=cfg["A"] / 2.0)
        mc = MoveConfig(tau, cfg["A"], 2.38)
        for s in range(cfg["seeds"]):
            handle = RngHandle(cfg["seed"], i * cfg["seeds"] + s)
            gen = handle.generator()
            b = limit_check_birth_rate(target, mc, cfg["iterations"], gen)
            rows.append(("birth_rate", n, s, b.estimate, b.se, b.limit, b.distance,
                         b.finite_n_exact))
            z = limit_check_z1_marginal(target, mc, cfg["draws"], gen, mode=cfg["z1_mode"])
            rows.append(("z1_ks_jittered", n, s, z.ks_jittered, None, 0.0, z.ks_jittered,
                         z.ks_jittered_exact))
    write_csv(Path(cfg["out"]) / "limitcheck.csv", LIMIT_HEADER, rows)
    print(f"wrote limitcheck.csv ({len(rows)} rows) to {cfg['out']}")
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "tune": cmd_tune, "curves": cmd_curves,
            "experiment": cmd_experiment, "limitcheck": cmd_limitcheck}


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or TOML config document")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--budget-seconds", type=float, dest="budget_seconds")
    common.add_argument("--override-budget", action="store_const", const=True,
                        dest="override_budget")

    p = argparse.ArgumentParser(prog="rjtune", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="run chains and write traces")
    s.add_argument("--n", type=int, dest="target.n")
    s.add_argument("--astar", type=float, dest="target.proposal.Astar")
    s.add_argument("--iters", type=int, dest="iterations")
    s.add_argument("--burn-in", type=int, dest="burn_in")
    s.add_argument("--tau", type=float)
    s.add_argument("--ell", type=float)
    s.add_argument("--chains", type=int)
    s.add_argument("--init", choices=("from_target", "cold"))

    t = sub.add_parser("tune", parents=[common], help="trial-run tuning of ell and tau")
    t.add_argument("--n", type=int, dest="target.n")
    t.add_argument("--astar", type=float, dest="target.proposal.Astar")
    t.add_argument("--tau", type=float)
    t.add_argument("--rate-target", type=float, dest="rate_target")
    t.add_argument("--tolerance", type=float)
    t.add_argument("--iters", type=int, dest="iterations")
    t.add_argument("--a-unknown", action="store_const", const=False, dest="A_known")

    c = sub.add_parser("curves", parents=[common], help="inefficiency curves and optimal tau")
    c.add_argument("--A-list", type=_floats, dest="A_list")
    c.add_argument("--tau-grid", type=_floats, dest="tau_grid")
    c.add_argument("--A-range", type=_floats, dest="A_range")

    e = sub.add_parser("experiment", parents=[common], help="replicated MAD experiment")
    e.add_argument("--n", type=int)
    e.add_argument("--A-list", type=_floats, dest="A_list")
    e.add_argument("--tau-grid", type=_floats, dest="tau_grid")
    e.add_argument("--replicates", type=int)
    e.add_argument("--iters", type=int, dest="iterations")
    e.add_argument("--burn-in", type=int, dest="burn_in")

    m = sub.add_parser("limitcheck", parents=[common], help="finite-n checks of the limits")
    m.add_argument("--n-ladder", type=_floats, dest="n_ladder")
    m.add_argument("--A", type=float)
    m.add_argument("--tau", type=float)
    m.add_argument("--iters", type=int, dest="iterations")
    m.add_argument("--draws", type=int)
    m.add_argument("--seeds", type=int)
    m.add_argument("--z1-mode", choices=("exact", "chain"), dest="z1_mode")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config") and v is not None}
    try:
        doc = load_document(args.config) if args.config else {}
        cfg = resolve_config(args.command, doc, flags)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as e:
        print(f"budget refusal: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (NumericalGuardError, FloatingPointError) as e:
        print(f"numerical guard: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
