"""Reference caching policies and a brute-force grid-search oracle.

Fixed (state-independent) policies are scored by replaying a request trace.
For synchronous updates the replay is vectorized over both the trace and a
batch of candidate policies, which is what makes exhaustive grid search over
tiny instances affordable. The score is the same per-step reward the
learners maximize, so oracle and agents optimize an identical objective.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .caching import LoadLedger
from .marl import MarlEnv
from .scenario import DegenerateEpisodeError, RequestTrace, ScenarioConfig, generate_trace

__all__ = [
    "static_policy",
    "zero_policy",
    "greedy_static_fractions",
    "is_monotone",
    "PolicyEvaluation",
    "evaluate_sync_batch",
    "evaluate_policy",
    "evaluate_async",
    "BudgetExceededError",
    "OracleResult",
    "policy_grid",
    "grid_search",
]


def static_policy(fractions: Sequence[float], num_updates: int) -> np.ndarray:
    """Policy set holding ``fractions[f]`` of file ``f`` in every slot."""
    fr = np.asarray(fractions, dtype=float)
    return np.repeat(fr[:, None], num_updates + 1, axis=1)


def zero_policy(num_files: int, num_updates: int) -> np.ndarray:
    return np.zeros((num_files, num_updates + 1))


def greedy_static_fractions(popularity: Sequence[float], capacity: float) -> np.ndarray:
    """Fill the cache with the most popular files first (last one fractionally)."""
    p = np.asarray(popularity, dtype=float)
    out = np.zeros_like(p)
    left = float(capacity)
    for f in np.argsort(-p, kind="stable"):
        take = min(1.0, max(left, 0.0))
        out[f] = take
        left -= take
    return out


def is_monotone(policy: np.ndarray) -> bool:
    """True when every per-file vector is non-increasing across slots."""
    return bool(np.all(np.diff(np.asarray(policy), axis=-1) <= 0))


@dataclass
class PolicyEvaluation:
    objective: float            # per-request L_SBS - c_C L_C
    penalized_objective: float  # mean per-step reward (with the memory penalty)
    normalized_load: float      # L / omega
    mean_occupancy: float       # mean over steps of the summed occupancy estimates
    objective_se: float
    penalized_se: float
    steps: int
    ledger: Optional[LoadLedger] = None


def _batch_means_se(values: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Standard error from batch means along the last axis."""
    n = values.shape[-1]
    k = min(n_batches, n)
    if k < 2:
        return np.full(values.shape[:-1], np.nan)
    usable = (n // k) * k
    means = values[..., :usable].reshape(*values.shape[:-1], k, n // k).mean(axis=-1)
    return means.std(axis=-1, ddof=1) / math.sqrt(k)


def evaluate_sync_batch(policies: np.ndarray, trace: RequestTrace, scenario: ScenarioConfig) -> dict:
    """Score a batch of synchronous policy sets on one episode of ``trace``.

    ``policies`` has shape ``(n, F, K+1)``. Returns a dict of per-candidate
    arrays plus the step count; the episode follows the same termination rule
    as the single-agent environment.
    """
    P = np.clip(np.asarray(policies, dtype=float), 0.0, 1.0)
    if P.ndim == 2:
        P = P[None]
    n, F, K1 = P.shape
    if F != scenario.num_files or K1 != scenario.num_updates + 1:
        raise ValueError("policy shape does not match the scenario")
    S = trace.episode_length()
    if S == 0:
        raise DegenerateEpisodeError("trace has no usable steps")
    T, K, B = scenario.update_period, scenario.num_updates, scenario.num_sbs
    f = trace.files[:S]
    tau = trace.gaps[:S]
    prev = trace.prev_index[:S]
    has_prev = prev >= 0
    prev_safe = np.where(has_prev, prev, 0)
    cov_now = trace.coverage_size[:S]
    cov_next = trace.coverage_size[trace.next_index[:S]]
    ell = np.minimum(np.floor(tau / T), K).astype(np.int64)

    rises = np.concatenate([np.zeros((n, F, 1)), np.cumsum(np.maximum(np.diff(P, axis=2), 0.0), axis=2)], axis=2)
    below = np.concatenate([np.zeros((n, F, 1)), np.cumsum(P, axis=2)[..., :-1]], axis=2)

    x_l = P[:, f, ell]
    mu_prev = np.where(has_prev, x_l[:, prev_safe], 0.0)
    r_upd = B * (np.maximum(P[:, f, 0] - mu_prev, 0.0) + rises[:, f, ell])
    occ = (T * below[:, f, ell] + (tau - ell * T) * x_l) / tau
    occ_prev = np.where(has_prev, occ[:, prev_safe], 0.0)
    total_occ = np.cumsum(occ - occ_prev, axis=1)
    r_sbs = np.minimum(cov_next * x_l, 1.0)
    r_mem = np.abs(total_occ - scenario.cache_capacity)
    reward = r_sbs - scenario.update_cost * r_upd - r_mem

    served = np.minimum(cov_now * mu_prev, 1.0)
    per_request = served - scenario.update_cost * r_upd
    weighted = (1.0 - served) + scenario.sbs_cost * served + scenario.update_cost * r_upd
    return dict(
        steps=S,
        elapsed=float(trace.times[S - 1]),
        reward=reward,
        sbs_bytes=served.sum(axis=1),
        update_bytes=r_upd.sum(axis=1),
        objective=per_request.mean(axis=1),
        objective_se=_batch_means_se(per_request),
        penalized_objective=reward.mean(axis=1),
        penalized_se=_batch_means_se(reward),
        normalized_load=weighted.mean(axis=1),
        mean_occupancy=total_occ.mean(axis=1),
    )


def _combine(parts: Sequence[dict]) -> dict:
    """Step-weighted average of per-trace results (standard errors in quadrature)."""
    w = np.array([p["steps"] for p in parts], dtype=float)
    w = w / w.sum()
    out = {}
    for key in ("objective", "penalized_objective", "normalized_load", "mean_occupancy"):
        out[key] = sum(wi * p[key] for wi, p in zip(w, parts))
    for key in ("objective_se", "penalized_se"):
        out[key] = np.sqrt(sum((wi * p[key]) ** 2 for wi, p in zip(w, parts)))
    out["steps"] = int(sum(p["steps"] for p in parts))
    out["sbs_bytes"] = sum(p["sbs_bytes"] for p in parts)
    out["update_bytes"] = sum(p["update_bytes"] for p in parts)
    out["elapsed"] = sum(p["elapsed"] for p in parts)
    return out


def _traces(scenario: ScenarioConfig, num_requests: int, seed: int, episodes: int) -> list[RequestTrace]:
    rng = np.random.default_rng(seed)
    return [generate_trace(scenario, num_requests=num_requests, rng=rng) for _ in range(episodes)]


def evaluate_async(policies: np.ndarray, trace: RequestTrace, scenario: ScenarioConfig) -> PolicyEvaluation:
    """Replay fixed per-SBS policies (``(B, F, K+1)``, or ``(F, K+1)`` for all
    SBSs) through the multi-agent environment: each SBS updates only on
    requests within its own range. ``mean_occupancy`` here is the final
    occupancy estimate averaged over SBSs."""
    P = np.asarray(policies, dtype=float)
    if P.ndim == 2:
        P = np.broadcast_to(P, (scenario.num_sbs, *P.shape))
    env = MarlEnv(scenario)
    env.reset(trace)
    rewards = []
    while not env.done:
        b = env.current_agent
        g = env.schedule[env.cursor][0]
        tr = env.step(P[b, int(trace.files[g])])
        rewards.append(tr.reward)
    rewards = np.array(rewards)
    led = env.ledger
    return PolicyEvaluation(
        objective=led.objective, penalized_objective=float(rewards.mean()),
        normalized_load=led.normalized_load,
        mean_occupancy=float(np.mean([c.avg_occupancy.sum() for c in env.caches])),
        objective_se=float("nan"), penalized_se=float(_batch_means_se(rewards)),
        steps=len(rewards), ledger=led)


def evaluate_policy(policies: np.ndarray, scenario: ScenarioConfig, num_requests: int = 100_000,
                    seed: int = 0, episodes: int = 1, mode: str = "sync",
                    traces: Optional[Sequence[RequestTrace]] = None) -> PolicyEvaluation:
    """Monte-Carlo score of a fixed policy set on fresh traces.

    ``mode="sync"`` applies the policy at every SBS on every request;
    ``mode="async"`` lets each SBS update only on requests in its range.
    """
    traces = list(traces) if traces is not None else _traces(scenario, num_requests, seed, episodes)
    if mode == "async":
        evs = [evaluate_async(policies, tr, scenario) for tr in traces]
        ledger = evs[0].ledger
        for e in evs[1:]:
            ledger = ledger + e.ledger
        w = np.array([e.steps for e in evs], dtype=float) / sum(e.steps for e in evs)
        return PolicyEvaluation(
            objective=ledger.objective,
            penalized_objective=float(sum(wi * e.penalized_objective for wi, e in zip(w, evs))),
            normalized_load=ledger.normalized_load,
            mean_occupancy=float(sum(wi * e.mean_occupancy for wi, e in zip(w, evs))),
            objective_se=float("nan"),
            penalized_se=float(np.sqrt(sum((wi * e.penalized_se) ** 2 for wi, e in zip(w, evs)))),
            steps=int(sum(e.steps for e in evs)), ledger=ledger)
    if mode != "sync":
        raise ValueError(f"unknown mode {mode!r}")
    res = _combine([evaluate_sync_batch(policies, tr, scenario) for tr in traces])
    ledger = LoadLedger(scenario.update_cost, scenario.sbs_cost,
                        sbs_bytes=float(res["sbs_bytes"][0]),
                        mbs_bytes=float(res["steps"] - res["sbs_bytes"][0]),
                        update_bytes=float(res["update_bytes"][0]),
                        requests=res["steps"], elapsed_time=res["elapsed"])
    return PolicyEvaluation(
        objective=float(res["objective"][0]),
        penalized_objective=float(res["penalized_objective"][0]),
        normalized_load=float(res["normalized_load"][0]),
        mean_occupancy=float(res["mean_occupancy"][0]),
        objective_se=float(res["objective_se"][0]),
        penalized_se=float(res["penalized_se"][0]),
        steps=res["steps"], ledger=ledger)


class BudgetExceededError(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"grid has {count} candidate policy sets, budget is {budget}")
        self.count, self.budget = count, budget


@dataclass
class OracleResult:
    policy: np.ndarray
    score: float
    evaluation: PolicyEvaluation
    candidates: int


def policy_grid(step: float, num_updates: int, monotone: bool = False) -> np.ndarray:
    """Per-file candidate vectors over ``{0, step, ..., 1}^(K+1)`` in lexicographic order."""
    n = int(round(1.0 / step))
    if step <= 0 or not math.isclose(n * step, 1.0, abs_tol=1e-9):
        raise ValueError("grid step must divide 1")
    values = np.arange(n + 1) / n
    cands = np.array(list(itertools.product(values, repeat=num_updates + 1)))
    if monotone:
        cands = cands[np.all(np.diff(cands, axis=1) <= 0, axis=1)]
    return cands


def _cache_key(scenario, step, monotone, constraint, num_requests, seed, episodes) -> str:
    blob = json.dumps(dict(scenario=scenario.to_dict(), step=step, monotone=monotone,
                           constraint=constraint, num_requests=num_requests, seed=seed,
                           episodes=episodes), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def grid_search(scenario: ScenarioConfig, step: float = 0.05, *, monotone: bool = False,
                constraint: str = "penalty", num_requests: int = 20_000, seed: int = 0,
                episodes: int = 1, budget: int = 50_000, chunk_elements: int = 4_000_000,
                cache_dir: Union[str, Path, None] = None,
                traces: Optional[Sequence[RequestTrace]] = None) -> OracleResult:
    """Exhaustive search over synchronous policy sets, with common random numbers.

    ``constraint="penalty"`` maximizes the mean reward (memory deviation
    penalized exactly as in training); ``"hard"`` maximizes the per-request
    objective among candidates whose mean occupancy stays within capacity.
    Ties go to the lexicographically smallest policy set. ``traces``
    replaces the generated traces (and disables the disk cache).
    """
    if constraint not in ("penalty", "hard"):
        raise ValueError("constraint must be 'penalty' or 'hard'")
    per_file = policy_grid(step, scenario.num_updates, monotone)
    count = len(per_file) ** scenario.num_files
    if count > budget:
        raise BudgetExceededError(count, budget)

    cache_path = None
    if cache_dir is not None and traces is None:
        key = _cache_key(scenario, step, monotone, constraint, num_requests, seed, episodes)
        cache_path = Path(cache_dir) / f"oracle-{key}.json"
        if cache_path.exists():
            data = json.loads(cache_path.read_text())
            policy = np.array(data["policy"])
            ev = evaluate_policy(policy, scenario, num_requests, seed, episodes)
            return OracleResult(policy, data["score"], ev, data["candidates"])

    traces = list(traces) if traces is not None else _traces(scenario, num_requests, seed, episodes)
    steps = sum(tr.episode_length() for tr in traces)
    chunk = max(1, chunk_elements // max(steps, 1))
    idx = np.array(list(itertools.product(range(len(per_file)), repeat=scenario.num_files)))
    best_score, best_i = -np.inf, -1
    for start in range(0, count, chunk):
        block = per_file[idx[start:start + chunk]]
        res = _combine([evaluate_sync_batch(block, tr, scenario) for tr in traces])
        if constraint == "penalty":
            score = res["penalized_objective"]
        else:
            score = np.where(res["mean_occupancy"] <= scenario.cache_capacity + 1e-12,
                             res["objective"], -np.inf)
        i = int(np.argmax(score))
        if score[i] > best_score:
            best_score, best_i = float(score[i]), start + i
    if best_i < 0:
        raise ValueError("no feasible candidate policy")
    policy = per_file[idx[best_i]]
    ev = evaluate_policy(policy, scenario, traces=traces)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        cache_path.write_text(json.dumps(dict(policy=policy.tolist(), score=best_score,
                                              candidates=count), sort_keys=True))
    return OracleResult(policy, best_score, ev, count)
