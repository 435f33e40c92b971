"""Single-agent caching MDP with synchronously updated caches.

Every request is one time-step. The agent picks the policy vector for the
requested file; all ``B`` SBSs apply it, so they always hold the same amount
of each file. The reward uses the (non-causally revealed) gap to the next
request for that file and the coverage set of that next request.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .caching import CacheState, LoadLedger, update_traffic
from .scenario import DegenerateEpisodeError, RequestTrace, ScenarioConfig

__all__ = ["Transition", "EpisodeExhaustedError", "SarlEnv", "sarl_state_dim"]


class EpisodeExhaustedError(RuntimeError):
    """Stepping an environment whose episode already terminated."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def sarl_state_dim(num_files: int) -> int:
    return 3 * num_files


class SarlEnv:
    """Environment for one episode over a request trace."""

    multi_agent = False

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.trace: Optional[RequestTrace] = None

    @property
    def state_dim(self) -> int:
        return sarl_state_dim(self.scenario.num_files)

    @property
    def action_dim(self) -> int:
        return self.scenario.num_updates + 1

    def reset(self, trace: RequestTrace) -> np.ndarray:
        if trace.num_files != self.scenario.num_files or trace.num_sbs != self.scenario.num_sbs:
            raise ValueError("trace does not match the scenario dimensions")
        n_steps = trace.episode_length()
        if n_steps == 0:
            raise DegenerateEpisodeError("no request in the trace has a successor for its file")
        sc = self.scenario
        self.trace = trace
        self.n_steps = n_steps
        self.t = 0
        self.done = False
        self.cache = CacheState(sc.num_files, sc.num_updates, sc.update_period)
        self.ledger = LoadLedger(update_cost=sc.update_cost, sbs_cost=sc.sbs_cost)
        self.log: list[dict] = []
        return self.state()

    def state(self) -> np.ndarray:
        return self._encode(int(self.trace.files[self.t]))

    def _encode(self, file: int) -> np.ndarray:
        onehot = np.zeros(self.scenario.num_files)
        onehot[file] = 1.0
        return np.concatenate([onehot, self.cache.cached, self.cache.avg_occupancy])

    def step(self, action) -> Transition:
        if self.trace is None or self.done:
            raise EpisodeExhaustedError("episode is over; call reset()")
        sc, tr, t = self.scenario, self.trace, self.t
        x = np.clip(np.asarray(action, dtype=float), 0.0, 1.0)
        if x.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},)")
        state = self.state()
        f = int(tr.files[t])
        now = float(tr.times[t])

        # Serve the current request from what is cached on arrival.
        self.ledger.serve(min(tr.coverage_size[t] * self.cache.cached[f], 1.0), now)

        nxt = int(tr.next_index[t])
        tau = float(tr.gaps[t])
        mu_prev, ell = self.cache.apply(f, x, now, tau)
        r_sbs = min(tr.coverage_size[nxt] * self.cache.cached[f], 1.0)
        r_upd = update_traffic(x, mu_prev, ell, sc.num_sbs)
        r_mem = abs(float(self.cache.avg_occupancy.sum()) - sc.cache_capacity)
        reward = r_sbs - sc.update_cost * r_upd - r_mem
        self.ledger.add_update(r_upd)

        self.t = t + 1
        self.done = self.t >= self.n_steps
        next_state = self.state()
        info = dict(file=f, time=now, tau=tau, slot=ell, r_sbs=r_sbs, r_upd=r_upd, r_mem=r_mem)
        self.log.append(dict(step=t, action=x.copy(), reward=reward, **info))
        return Transition(state, x, next_state, reward, self.done, info)

    def write_log_csv(self, path) -> None:
        """Per-step log: step, file (1-based), time, tau, slot, rewards, action."""
        k = self.action_dim
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "file", "time", "tau", "slot", "r_sbs", "r_upd", "r_mem", "reward"]
                       + [f"x{j}" for j in range(k)])
            for row in self.log:
                w.writerow([row["step"], row["file"] + 1, repr(row["time"]), repr(row["tau"]),
                            row["slot"], repr(row["r_sbs"]), repr(row["r_upd"]), repr(row["r_mem"]),
                            repr(row["reward"])] + [repr(float(v)) for v in row["action"]])
