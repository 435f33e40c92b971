"""Multi-agent caching MDP with asynchronously updated caches.

Each SBS is an independent agent that only sees requests within its own
range and only pays for updating its own cache. Agents learn what their
neighbours hold through an :class:`EstimateBoard` on which every agent
publishes the cached fraction implied by its latest decision.

Agent steps are interleaved in global real-time order (ties broken by SBS
index), which makes the staleness of board reads well defined.
"""
from __future__ import annotations

import csv
from typing import Optional

import numpy as np

from .caching import CacheState, LoadLedger, update_traffic
from .sarl import EpisodeExhaustedError, Transition
from .scenario import DegenerateEpisodeError, RequestTrace, ScenarioConfig

__all__ = ["EstimateBoard", "marl_filter_trace", "MarlEnv", "marl_state_dim"]


def marl_state_dim(num_files: int, num_sbs: int) -> int:
    return 3 * num_files + num_sbs - 1


def marl_filter_trace(trace: RequestTrace, sbs: int) -> RequestTrace:
    """Requests whose coverage set contains ``sbs``, relinked per file."""
    return trace.subset(trace.coverage[:, sbs])


class EstimateBoard:
    """Latest cached fraction each agent has published for each file."""

    def __init__(self, num_sbs: int, num_files: int):
        self._table = np.zeros((num_sbs, num_files))
        self.history: list[tuple[float, int, int, float]] = []

    def publish(self, owner: int, file: int, value: float, time: float) -> None:
        self._table[owner, file] = value
        self.history.append((time, owner, file, value))

    def read(self, sbs: int, file: int) -> float:
        return float(self._table[sbs, file])

    def snapshot(self) -> np.ndarray:
        return self._table.copy()


class MarlEnv:
    """All agents of one episode, driven by a single real-time scheduler.

    Usage::

        env.reset(trace)
        while not env.done:
            b = env.current_agent
            tr = env.step(policy[b](env.state()))
    """

    multi_agent = True

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.trace: Optional[RequestTrace] = None

    @property
    def num_agents(self) -> int:
        return self.scenario.num_sbs

    @property
    def state_dim(self) -> int:
        return marl_state_dim(self.scenario.num_files, self.scenario.num_sbs)

    @property
    def action_dim(self) -> int:
        return self.scenario.num_updates + 1

    def reset(self, trace: RequestTrace) -> None:
        sc = self.scenario
        if trace.num_files != sc.num_files or trace.num_sbs != sc.num_sbs:
            raise ValueError("trace does not match the scenario dimensions")
        self.trace = trace
        self.local: list[RequestTrace] = []
        self.global_index: list[np.ndarray] = []
        self.steps_left = np.zeros(sc.num_sbs, dtype=int)
        schedule = []
        for b in range(sc.num_sbs):
            idx = np.flatnonzero(trace.coverage[:, b])
            local = trace.subset(trace.coverage[:, b])
            n = local.episode_length()
            self.local.append(local)
            self.global_index.append(idx)
            self.steps_left[b] = n
            schedule.extend((int(idx[i]), b, i) for i in range(n))
        if not schedule:
            raise DegenerateEpisodeError("every agent's filtered trace is degenerate")
        schedule.sort()
        self.schedule = schedule
        self.cursor = 0
        self.served_upto = -1
        self.caches = [CacheState(sc.num_files, sc.num_updates, sc.update_period)
                       for _ in range(sc.num_sbs)]
        self.board = EstimateBoard(sc.num_sbs, sc.num_files)
        self.ledger = LoadLedger(update_cost=sc.update_cost, sbs_cost=sc.sbs_cost)
        self.agent_update_bytes = np.zeros(sc.num_sbs)
        self.returns = np.zeros(sc.num_sbs)
        self.log: list[dict] = []

    @property
    def done(self) -> bool:
        return self.trace is None or self.cursor >= len(self.schedule)

    @property
    def active(self) -> np.ndarray:
        return self.steps_left > 0

    @property
    def current_agent(self) -> int:
        if self.done:
            raise EpisodeExhaustedError("episode is over; call reset()")
        return self.schedule[self.cursor][1]

    def _encode(self, sbs: int, file: int) -> np.ndarray:
        onehot = np.zeros(self.scenario.num_files)
        onehot[file] = 1.0
        cache = self.caches[sbs]
        others = [self.board.read(b, file) for b in range(self.scenario.num_sbs) if b != sbs]
        return np.concatenate([onehot, cache.cached, cache.avg_occupancy, others])

    def state(self) -> np.ndarray:
        """Observation of the agent due to act next, read from the board now."""
        g, b, _ = self.schedule[self.cursor]
        return self._encode(b, int(self.trace.files[g]))

    def _serve_until(self, g: int) -> None:
        tr = self.trace
        for h in range(self.served_upto + 1, g + 1):
            f = int(tr.files[h])
            t = float(tr.times[h])
            amount = sum(self.caches[b].cached_at(f, t) for b in np.flatnonzero(tr.coverage[h]))
            self.ledger.serve(min(amount, 1.0), t)
        self.served_upto = max(self.served_upto, g)

    def step(self, action) -> Transition:
        if self.done:
            raise EpisodeExhaustedError("episode is over; call reset()")
        sc = self.scenario
        g, b, i = self.schedule[self.cursor]
        self._serve_until(g)
        x = np.clip(np.asarray(action, dtype=float), 0.0, 1.0)
        if x.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},)")
        local = self.local[b]
        f = int(local.files[i])
        now = float(local.times[i])
        state = self._encode(b, f)

        tau = float(local.gaps[i])
        nxt = int(local.next_index[i])
        cache = self.caches[b]
        mu_prev, ell = cache.apply(f, x, now, tau)
        self.board.publish(b, f, float(cache.cached[f]), now)
        in_range = np.flatnonzero(local.coverage[nxt])
        neighbours = sum(self.board.read(o, f) for o in in_range if o != b)
        r_sbs = min(float(cache.cached[f]) + neighbours, 1.0)
        r_upd = update_traffic(x, mu_prev, ell, 1)
        r_mem = abs(float(cache.avg_occupancy.sum()) - sc.cache_capacity)
        reward = r_sbs - sc.update_cost * r_upd - r_mem
        self.ledger.add_update(r_upd)
        self.agent_update_bytes[b] += r_upd
        self.returns[b] += reward

        self.steps_left[b] -= 1
        done = self.steps_left[b] == 0
        next_state = self._encode(b, int(local.files[i + 1]))
        self.cursor += 1
        info = dict(agent=b, file=f, time=now, tau=tau, slot=ell, r_sbs=r_sbs, r_upd=r_upd,
                    r_mem=r_mem, global_index=g)
        self.log.append(dict(action=x.copy(), reward=reward, **info))
        return Transition(state, x, next_state, reward, bool(done), info)

    def write_log_csv(self, path) -> None:
        k = self.action_dim
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["agent", "file", "time", "tau", "slot", "r_sbs", "r_upd", "r_mem", "reward"]
                       + [f"x{j}" for j in range(k)])
            for row in self.log:
                w.writerow([row["agent"] + 1, row["file"] + 1, repr(row["time"]), repr(row["tau"]),
                            row["slot"], repr(row["r_sbs"]), repr(row["r_upd"]), repr(row["r_mem"]),
                            repr(row["reward"])] + [repr(float(v)) for v in row["action"]])
