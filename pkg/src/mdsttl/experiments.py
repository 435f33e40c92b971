"""Experiment runner: presets, strict flat configs and CSV result files.

A run is described by one flat mapping. Its keys are the union of the
:class:`~mdsttl.scenario.ScenarioConfig` fields, the
:class:`~mdsttl.ddpg.DdpgConfig` fields and the run keys of :data:`RUN_DEFAULTS`.
Unknown keys are rejected and ``seed`` is mandatory. Every CSV written here
starts with ``#`` comment lines echoing the resolved config, the seed and a
build stamp, so a run can be repeated from its own output.

Output layout of one run directory::

    summary.csv       one row per (method, seed[, sweep value])
    training.csv      episode, return, L_over_omega, noise_var   (train-*)
    curve.csv         episode, L_over_omega, L_over_omega_ma       (train-*)
    eval_ledger.csv   episode, L_MBS, L_SBS, L_C, L, L_over_omega
    agent*.npz        checkpoints                                  (train-*)
    oracle.csv        file, x0..xK                                 (oracle)
"""
from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, Union

import numpy as np

from . import __version__
from .baselines import (evaluate_policy, greedy_static_fractions, grid_search, static_policy,
                        zero_policy)
from .caching import LEDGER_COLUMNS
from .ddpg import DdpgAgent, DdpgConfig, evaluate, noise_schedule, train
from .marl import MarlEnv
from .sarl import SarlEnv
from .scenario import DegenerateEpisodeError, ScenarioConfig, generate_trace

__all__ = [
    "COMMANDS",
    "RUN_DEFAULTS",
    "PRESETS",
    "ConfigError",
    "resolve_config",
    "load_config",
    "moving_average",
    "build_stamp",
    "run_experiment",
    "run_method",
    "report",
    "read_summary",
]

logger = logging.getLogger(__name__)

COMMANDS = ("train-sarl", "train-marl", "evaluate", "oracle", "sweep")
METHODS = ("sarl", "marl", "oracle", "greedy", "zero")
SUMMARY_COLUMNS = ("experiment", "method", "seed", "sweep_key", "sweep_value", "L_over_omega",
                   "objective", "penalized_objective", "steps", "reference", "threshold")

RUN_DEFAULTS: dict[str, Any] = dict(
    command="train-sarl",
    name="run",
    seed=None,
    episodes=100,
    anneal_episodes=0,        # SARL only; MARL keeps exploring
    episode_requests=200,
    eval_episodes=5,
    eval_requests=2000,
    policy="greedy",          # evaluate: zero | greedy | static | oracle
    fractions=None,           # evaluate with policy=static
    mode="sync",              # sync | async replay of fixed policies
    grid_step=0.05,
    monotone=False,
    constraint="penalty",     # penalty | hard
    oracle_requests=20000,
    oracle_episodes=1,
    oracle_budget=50000,
    oracle_uniform=True,      # optimize on a spatially uniform process
    sweep_key=None,
    sweep_values=None,
    seeds=None,               # sweep: defaults to [seed]
    methods=None,             # sweep: subset of METHODS
    expect_order=None,        # sweep: [a, b] means load(a) <= load(b) at each point
    expect_from=None,         # only check expect_order for sweep values >= this
    strict_order=False,       # use < instead of <= in the order check
    workers=1,
    reference=None,           # published L/omega for this configuration
    threshold=None,           # report fails when L/omega exceeds it
    moving_window=500,
)

_SCENARIO_KEYS = {f.name for f in dataclasses.fields(ScenarioConfig)}
_DDPG_KEYS = {f.name for f in dataclasses.fields(DdpgConfig)}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# -- presets -----------------------------------------------------------------
_R_SMALL = 1.0 / math.sqrt(2.0)
_FIG = dict(num_files=20, num_sbs=4, weibull_shape=0.6, zipf_alpha=0.7, aggregate_rate=100.0,
            num_updates=2, update_period=0.5, cache_capacity=4.0, update_cost=0.05)
_DESK = dict(num_files=3, num_sbs=4, weibull_shape=0.6, zipf_alpha=0.7, aggregate_rate=10.0,
             num_updates=2, update_period=0.5, cache_capacity=1.0, update_cost=0.05,
             episodes=300, episode_requests=100, eval_episodes=4, eval_requests=2000)
_TINY = dict(num_files=1, num_sbs=2, num_updates=1, update_period=0.5, weibull_shape=0.6,
             update_cost=0.05, cache_capacity=1.0, aggregate_rate=2.0, comm_range=_R_SMALL)

PRESETS: dict[str, dict] = {
    # Training curves, synchronous caches.
    "fig3": dict(_FIG, command="train-sarl", name="fig3", comm_range=_R_SMALL, episodes=6000,
                 anneal_episodes=1000, episode_requests=1000, eval_episodes=10,
                 eval_requests=10000, reference=0.511, threshold=0.57),
    "fig3-r1": dict(_FIG, command="train-sarl", name="fig3-r1", comm_range=1.0, episodes=6000,
                    anneal_episodes=1000, episode_requests=1000, eval_episodes=10,
                    eval_requests=10000, reference=0.203, threshold=0.25),
    # Update-cost sweep, SARL against MARL.
    "fig4": dict(_FIG, command="sweep", name="fig4", comm_range=_R_SMALL, episodes=6000,
                 anneal_episodes=1000, episode_requests=1000, eval_episodes=10,
                 eval_requests=10000, sweep_key="update_cost",
                 sweep_values=[0.0, 0.05, 0.1, 0.2, 0.3], methods=["sarl", "marl"],
                 expect_order=["sarl", "marl"]),
    # Heterogeneous sweep, MARL against the greedy synchronous fill.
    "fig5": dict(_FIG, command="sweep", name="fig5", comm_range=_R_SMALL, update_cost=0.1,
                 cache_capacity=2.0, episodes=5000, episode_requests=1000, eval_episodes=10,
                 eval_requests=10000, sweep_key="zeta",
                 sweep_values=[0.1, 0.2, 0.3, math.pi / 8, 0.5, 0.7, 0.9],
                 methods=["marl", "greedy"], mode="async"),
    "fig5-c4": dict(_FIG, command="sweep", name="fig5-c4", comm_range=_R_SMALL, update_cost=0.1,
                    cache_capacity=4.0, episodes=5000, episode_requests=1000, eval_episodes=10,
                    eval_requests=10000, sweep_key="zeta",
                    sweep_values=[0.1, 0.2, 0.3, math.pi / 8, 0.5, 0.7, 0.9],
                    methods=["marl", "greedy"], mode="async"),
    # Desk scale: minutes on one core.
    "desk-sarl": dict(_DESK, command="train-sarl", name="desk-sarl", anneal_episodes=100),
    "desk-marl": dict(_DESK, command="train-marl", name="desk-marl"),
    "desk-fig4": dict(_DESK, command="sweep", name="desk-fig4", anneal_episodes=100,
                      sweep_key="update_cost", sweep_values=[0.05], methods=["sarl", "marl"],
                      seeds=[0, 1, 2, 3], expect_order=["sarl", "marl"]),
    "desk-fig5": dict(num_files=2, num_sbs=2, num_updates=1, update_period=0.5,
                      weibull_shape=0.6, zipf_alpha=0.7, aggregate_rate=4.0, comm_range=_R_SMALL,
                      cache_capacity=1.0, update_cost=0.1, command="sweep", name="desk-fig5",
                      episodes=300, episode_requests=100, eval_episodes=4, eval_requests=2000,
                      sweep_key="zeta", sweep_values=[0.9], methods=["marl", "oracle"],
                      grid_step=0.1, mode="async", seeds=[0, 1, 2, 3],
                      expect_order=["marl", "oracle"], strict_order=True),
    "tiny-oracle": dict(_TINY, command="oracle", name="tiny-oracle", grid_step=0.05,
                        eval_episodes=1, eval_requests=100000),
    "tiny-sarl": dict(_TINY, command="train-sarl", name="tiny-sarl", episodes=2000,
                      anneal_episodes=500, episode_requests=100, eval_episodes=5,
                      eval_requests=20000),
    # Smallest useful run, for smoke and determinism checks.
    "smoke": dict(_TINY, command="train-sarl", name="smoke", episodes=5, episode_requests=30,
                  eval_episodes=1, eval_requests=200),
}


# -- configuration -----------------------------------------------------------
def resolve_config(raw: dict, preset: Optional[str] = None) -> dict:
    """Merge defaults, preset and ``raw``; reject unknown keys and a missing seed."""
    if preset is None:
        preset = raw.get("preset")
    raw = {k: v for k, v in raw.items() if k != "preset"}
    merged: dict[str, Any] = dict(ScenarioConfig().to_dict())
    merged.update(DdpgConfig().to_dict())
    merged.update(RUN_DEFAULTS)  # seed: None, so it must be given
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    allowed = set(RUN_DEFAULTS) | _SCENARIO_KEYS | _DDPG_KEYS
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    merged.update(raw)
    if merged["seed"] is None:
        raise ConfigError("a seed is required")
    if merged["command"] not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}")
    merged["seed"] = int(merged["seed"])
    if merged["zeta"] == "uniform":
        merged["zeta"] = None
    merged["hidden"] = list(merged["hidden"])
    try:
        _scenario(merged)
        _ddpg(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if merged["command"] == "sweep":
        if merged["sweep_key"] not in _SCENARIO_KEYS | _DDPG_KEYS:
            raise ConfigError("sweep_key must name a scenario or DDPG parameter")
        if not merged["sweep_values"]:
            raise ConfigError("sweep_values must be a non-empty list")
        bad = set(merged["methods"] or ()) - set(METHODS)
        if bad or not merged["methods"]:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}")
    return merged


def load_config(path: Union[str, Path], overrides: Optional[dict] = None) -> dict:
    """Read a flat JSON config file and resolve it (``overrides`` win)."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    raw.update(overrides or {})
    return resolve_config(raw)


def _scenario(cfg: dict) -> ScenarioConfig:
    data = {k: cfg[k] for k in _SCENARIO_KEYS}
    data["seed"] = cfg["seed"]
    return ScenarioConfig.from_dict(data)


def _ddpg(cfg: dict) -> DdpgConfig:
    return DdpgConfig.from_dict({k: cfg[k] for k in _DDPG_KEYS})


# -- small helpers -----------------------------------------------------------
def moving_average(series: Sequence[float], window: int = 500) -> np.ndarray:
    """Trailing mean over ``window`` points; the first points average the prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def build_stamp() -> str:
    """Version plus a digest of the package sources (stable across runs and clones)."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _sub_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# Streams of the per-run seed sequence.
_TRAIN, _EVAL, _AGENT = 1, 2, 3


def _trace(scenario: ScenarioConfig, n: int, seed: int, stream: int, episode: int, usable):
    for attempt in range(100):
        rng = np.random.default_rng([seed, stream, episode, attempt])
        tr = generate_trace(scenario, num_requests=n, rng=rng)
        if usable(tr):
            return tr
    raise DegenerateEpisodeError(f"no usable trace after 100 draws (episode {episode})")


def _env_factory(scenario: ScenarioConfig, multi: bool, n: int, seed: int, stream: int):
    def usable(tr):
        if multi:
            return any(tr.subset(tr.coverage[:, b]).episode_length() > 0
                       for b in range(scenario.num_sbs))
        return tr.episode_length() > 0

    def make(ep: int):
        env = MarlEnv(scenario) if multi else SarlEnv(scenario)
        env.reset(_trace(scenario, n, seed, stream, ep, usable))
        return env

    return make


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _header(cfg: dict) -> str:
    return (f"# config: {json.dumps(cfg, sort_keys=True)}\n# seed: {cfg['seed']}\n"
            f"# build: {build_stamp()}\n")


def _write_csv(path: Path, cfg: dict, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue(), encoding="utf-8")
    os.replace(tmp, path)


def _read_csv(path: Path) -> tuple[dict, list[dict]]:
    """Rows of a result CSV plus its embedded config echo."""
    cfg: dict = {}
    lines = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# config: "):
            cfg = json.loads(line[len("# config: "):])
        elif not line.startswith("#"):
            lines.append(line)
    return cfg, list(csv.DictReader(lines))


# -- methods -----------------------------------------------------------------
def _ledger_rows(records) -> list[list]:
    return [r.ledger.csv_row(r.episode) for r in records]


def _summary_row(cfg: dict, method: str, res: dict) -> dict:
    key = cfg.get("sweep_key")
    return dict(experiment=cfg["name"], method=method, seed=cfg["seed"],
                sweep_key=key if cfg["command"] == "sweep" else None,
                sweep_value=cfg.get(key) if cfg["command"] == "sweep" else None,
                L_over_omega=res["L_over_omega"], objective=res["objective"],
                penalized_objective=res["penalized_objective"], steps=res["steps"],
                reference=cfg.get("reference"), threshold=cfg.get("threshold"))


def _train(cfg: dict, out: Path, multi: bool) -> dict:
    sc, dc, seed = _scenario(cfg), _ddpg(cfg), cfg["seed"]
    env_train = _env_factory(sc, multi, cfg["episode_requests"], seed, _TRAIN)
    env_eval = _env_factory(sc, multi, cfg["eval_requests"], seed, _EVAL)
    probe = env_train(0)
    n_agents = sc.num_sbs if multi else 1
    agents = [DdpgAgent(probe.state_dim, probe.action_dim, dc, seed=_sub_seed(seed, _AGENT, b))
              for b in range(n_agents)]
    schedule = None if multi else noise_schedule(dc.noise_var, cfg["episodes"], cfg["anneal_episodes"])
    log = train(agents, lambda ep: probe if ep == 0 else env_train(ep), cfg["episodes"], schedule)
    ev = evaluate(agents, env_eval, cfg["eval_episodes"])

    loads = [r.normalized_load for r in log]
    _write_csv(out / "training.csv", cfg, ("episode", "return", "L_over_omega", "noise_var"),
               [(r.episode, float(r.ret), float(r.normalized_load), float(r.noise_var)) for r in log])
    _write_csv(out / "curve.csv", cfg, ("episode", "L_over_omega", "L_over_omega_ma"),
               zip(range(len(loads)), loads, moving_average(loads, cfg["moving_window"])))
    _write_csv(out / "eval_ledger.csv", cfg, LEDGER_COLUMNS, _ledger_rows(ev))
    if multi:
        for b, a in enumerate(agents):
            a.save(out / f"agent{b + 1}.npz")
    else:
        agents[0].save(out / "agent.npz")
    total = ev[0].ledger
    for r in ev[1:]:
        total = total + r.ledger
    steps = sum(r.steps for r in ev)
    return dict(L_over_omega=total.normalized_load, objective=total.objective,
                penalized_objective=sum(r.ret for r in ev) / steps, steps=steps)


def _eval_traces(cfg: dict, sc: ScenarioConfig) -> list:
    return [_trace(sc, cfg["eval_requests"], cfg["seed"], _EVAL, ep, lambda tr: tr.episode_length() > 0)
            for ep in range(cfg["eval_episodes"])]


def _policy_result(policy: np.ndarray, cfg: dict) -> dict:
    sc = _scenario(cfg)
    ev = evaluate_policy(policy, sc, mode=cfg["mode"], traces=_eval_traces(cfg, sc))
    return dict(L_over_omega=ev.normalized_load, objective=ev.objective,
                penalized_objective=ev.penalized_objective, steps=ev.steps)


def _fixed_policy(cfg: dict) -> np.ndarray:
    sc = _scenario(cfg)
    kind = cfg["policy"]
    if kind == "zero":
        return zero_policy(sc.num_files, sc.num_updates)
    if kind == "greedy":
        return static_policy(greedy_static_fractions(sc.popularity, sc.cache_capacity), sc.num_updates)
    if kind == "static":
        if cfg["fractions"] is None or len(cfg["fractions"]) != sc.num_files:
            raise ConfigError("policy=static needs one fraction per file")
        return static_policy(cfg["fractions"], sc.num_updates)
    raise ConfigError(f"unknown fixed policy {kind!r}")


def _oracle(cfg: dict, out: Path) -> dict:
    sc = _scenario(cfg)
    target = sc.replace(zeta=None) if cfg["oracle_uniform"] else sc
    res = grid_search(target, cfg["grid_step"], monotone=cfg["monotone"],
                      constraint=cfg["constraint"], num_requests=cfg["oracle_requests"],
                      seed=_sub_seed(cfg["seed"], 4), episodes=cfg["oracle_episodes"],
                      budget=cfg["oracle_budget"], cache_dir=out / ".oracle-cache")
    k = sc.num_updates
    _write_csv(out / "oracle.csv", cfg, ("file", *[f"x{j}" for j in range(k + 1)], "score", "candidates"),
               [(f + 1, *map(float, res.policy[f]), res.score, res.candidates)
                for f in range(sc.num_files)])
    return _policy_result(res.policy, cfg)


def run_method(cfg: dict, method: str, out: Union[str, Path]) -> dict:
    """Run one method under ``cfg`` into ``out`` and return its summary row."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if method in ("sarl", "marl"):
        res = _train(cfg, out, multi=method == "marl")
    elif method == "oracle":
        res = _oracle(cfg, out)
    elif method in ("greedy", "zero"):
        res = _policy_result(_fixed_policy(dict(cfg, policy=method)), cfg)
    elif method == "fixed":
        res = _policy_result(_fixed_policy(cfg), cfg)
    else:
        raise ConfigError(f"unknown method {method!r}")
    row = _summary_row(cfg, method, res)
    _write_csv(out / "summary.csv", cfg, SUMMARY_COLUMNS, [[row[c] for c in SUMMARY_COLUMNS]])
    return row


def _evaluate_checkpoints(cfg: dict, out: Path, checkpoints: Sequence[Path]) -> dict:
    sc = _scenario(cfg)
    agents = [DdpgAgent.load(p) for p in checkpoints]
    multi = len(agents) > 1
    if multi and len(agents) != sc.num_sbs:
        raise ConfigError("multi-agent evaluation needs one checkpoint per SBS")
    ev = evaluate(agents, _env_factory(sc, multi, cfg["eval_requests"], cfg["seed"], _EVAL),
                  cfg["eval_episodes"])
    _write_csv(out / "eval_ledger.csv", cfg, LEDGER_COLUMNS, _ledger_rows(ev))
    total = ev[0].ledger
    for r in ev[1:]:
        total = total + r.ledger
    steps = sum(r.steps for r in ev)
    res = dict(L_over_omega=total.normalized_load, objective=total.objective,
               penalized_objective=sum(r.ret for r in ev) / steps, steps=steps)
    row = _summary_row(cfg, "marl" if multi else "sarl", res)
    _write_csv(out / "summary.csv", cfg, SUMMARY_COLUMNS, [[row[c] for c in SUMMARY_COLUMNS]])
    return row


def _sweep_point(args) -> dict:
    cfg, method, out = args
    if (Path(out) / "summary.csv").exists():
        logger.info("skipping completed point %s", out)
        _, rows = _read_csv(Path(out) / "summary.csv")
        return rows[0]
    return run_method(cfg, method, out)


def _sweep(cfg: dict, out: Path) -> list[dict]:
    key = cfg["sweep_key"]
    seeds = cfg["seeds"] or [cfg["seed"]]
    jobs = []
    for value in cfg["sweep_values"]:
        for seed in seeds:
            for method in cfg["methods"]:
                point = dict(cfg, **{key: value, "seed": seed})
                jobs.append((point, method, out / "points" / f"{key}={value!r}" / method / f"seed{seed}"))
    if cfg["workers"] > 1:
        with concurrent.futures.ProcessPoolExecutor(cfg["workers"]) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    rows = [{c: r[c] for c in SUMMARY_COLUMNS} for r in rows]
    _write_csv(out / "summary.csv", cfg, SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in rows])
    return rows


def run_experiment(cfg: dict, out_dir: Union[str, Path],
                   checkpoints: Optional[Sequence[Union[str, Path]]] = None) -> list[dict]:
    """Execute ``cfg['command']`` (a resolved config) and write results to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmd = cfg["command"]
    logger.info("running %s (%s, seed %d) into %s", cmd, cfg["name"], cfg["seed"], out)
    if cmd == "train-sarl":
        return [run_method(cfg, "sarl", out)]
    if cmd == "train-marl":
        return [run_method(cfg, "marl", out)]
    if cmd == "oracle":
        return [run_method(cfg, "oracle", out)]
    if cmd == "evaluate":
        if checkpoints:
            return [_evaluate_checkpoints(cfg, out, [Path(p) for p in checkpoints])]
        return [run_method(cfg, "fixed", out)]
    return _sweep(cfg, out)


# -- reporting ---------------------------------------------------------------
def read_summary(path: Union[str, Path]) -> tuple[dict, list[dict]]:
    return _read_csv(Path(path))


def _num(s: str) -> Optional[float]:
    return float(s) if s not in ("", None) else None


def report(results: Union[str, Path], stream=None) -> int:
    """Print every summary found under ``results`` and check the thresholds.

    Returns the process exit code: 0 when every check passes, 1 when any
    fails and 2 when there are no results at all.
    """
    import sys
    stream = stream or sys.stdout
    root = Path(results)
    paths = sorted(p for p in root.rglob("summary.csv") if "points" not in p.relative_to(root).parts)
    if not paths:
        print(f"no results under {root}", file=stream)
        return 2
    failures = 0
    cols = ("experiment", "method", "seed", "sweep_value", "L_over_omega", "objective", "reference")
    print("  ".join(f"{c:>14}" for c in cols) + "  check", file=stream)
    for path in paths:
        cfg, rows = _read_csv(path)
        for r in rows:
            thr = _num(r["threshold"])
            status = ""
            if thr is not None:
                ok = float(r["L_over_omega"]) <= thr
                failures += not ok
                status = f"{'PASS' if ok else 'FAIL'} (<= {thr:g})"
            cells = [r[c] if c not in ("L_over_omega", "objective") else f"{float(r[c]):.4f}" for c in cols]
            print("  ".join(f"{c:>14}" for c in cells) + "  " + status, file=stream)
        order = cfg.get("expect_order")
        if order:
            failures += _check_order(cfg, rows, order, stream)
    print(f"{failures} failed check(s)" if failures else "all checks passed", file=stream)
    return 1 if failures else 0


def _check_order(cfg: dict, rows: list[dict], order: Sequence[str], stream) -> int:
    a, b = order
    loads = {(r["sweep_value"], r["seed"], r["method"]): float(r["L_over_omega"]) for r in rows}
    lo = cfg.get("expect_from")
    failures = 0
    for value in dict.fromkeys(r["sweep_value"] for r in rows):
        if lo is not None and float(value) < lo:
            continue
        seeds = sorted({r["seed"] for r in rows if r["sweep_value"] == value}, key=int)
        wins = 0
        for s in seeds:
            la, lb = loads.get((value, s, a)), loads.get((value, s, b))
            if la is None or lb is None:
                continue
            wins += la < lb if cfg.get("strict_order") else la <= lb
        need = len(seeds) if len(seeds) < 4 else len(seeds) - 1
        ok = wins >= need
        failures += not ok
        rel = "<" if cfg.get("strict_order") else "<="
        print(f"order {a} {rel} {b} at {cfg['sweep_key']}={value}: {wins}/{len(seeds)} seeds "
              f"{'PASS' if ok else 'FAIL'}", file=stream)
    return failures
