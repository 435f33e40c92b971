"""Soft-TTL caching policies, cache state and network-load accounting.

A caching policy for one file is a vector ``x[0..K]``: after a request the
cache holds ``x[j]`` of the file during ``[jT, (j+1)T)`` and ``x[K]`` from
``KT`` onwards. Cached amounts are real fractions of a file; MDS coding makes
any set of fractions summing to one sufficient to decode.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "slot_index",
    "sbs_download",
    "mbs_download",
    "update_traffic",
    "average_occupancy",
    "CacheState",
    "LoadLedger",
    "LEDGER_COLUMNS",
    "write_ledger_csv",
]


def slot_index(tau: float, period: float, num_updates: int) -> int:
    """Time-slot ``min(floor(tau / T), K)`` in which a request at lag ``tau`` falls."""
    if tau < 0:
        raise ValueError("inter-request time must be non-negative")
    if period <= 0 or num_updates < 0:
        raise ValueError("period must be positive and num_updates >= 0")
    return int(min(math.floor(tau / period), num_updates))


def sbs_download(cached: Sequence[float]) -> float:
    """Amount fetched from the SBSs in range holding ``cached`` fractions."""
    return min(float(sum(cached)), 1.0)


def mbs_download(cached: Sequence[float]) -> float:
    """Amount still missing after the SBS download, fetched from the MBS."""
    return max(1.0 - float(sum(cached)), 0.0)


def update_traffic(policy: Sequence[float], mu_prev: float, slot: int, num_caches: int) -> float:
    """Data pushed to caches between a request and the next one in ``slot``.

    Counts the refill to ``x[0]`` at the request plus every increase between
    consecutive slots up to ``slot``, once per updated cache.
    """
    x = np.asarray(policy, dtype=float)
    if not 0 <= slot < len(x):
        raise ValueError(f"slot {slot} outside 0..{len(x) - 1}")
    total = max(x[0] - mu_prev, 0.0)
    for j in range(1, slot + 1):
        total += max(x[j] - x[j - 1], 0.0)
    return num_caches * total


def average_occupancy(policy: Sequence[float], tau: float, period: float) -> float:
    """Time-average of the cached fraction over an inter-request time ``tau``."""
    if tau <= 0:
        raise ValueError("average occupancy needs a positive inter-request time")
    x = np.asarray(policy, dtype=float)
    ell = slot_index(tau, period, len(x) - 1)
    return (period * float(x[:ell].sum()) + (tau - ell * period) * float(x[ell])) / tau


class CacheState:
    """Cached fraction and occupancy estimate per file at one cache (or cache group).

    Also remembers the last policy applied to each file and when, so the
    exact cached amount at any later time can be recovered.
    """

    def __init__(self, num_files: int, num_updates: int, period: float):
        self.period = period
        self.cached = np.zeros(num_files)
        self.avg_occupancy = np.zeros(num_files)
        self.last_policy = np.zeros((num_files, num_updates + 1))
        self.last_time = np.full(num_files, np.nan)

    def apply(self, file: int, policy: np.ndarray, time: float, tau: float) -> tuple[float, int]:
        """Install ``policy`` at a request for ``file``; returns (previous amount, slot)."""
        k = self.last_policy.shape[1] - 1
        mu_prev = float(self.cached[file])
        ell = slot_index(tau, self.period, k)
        self.cached[file] = policy[ell]
        self.avg_occupancy[file] = average_occupancy(policy, tau, self.period)
        self.last_policy[file] = policy
        self.last_time[file] = time
        return mu_prev, ell

    def cached_at(self, file: int, time: float) -> float:
        if math.isnan(self.last_time[file]):
            return 0.0
        k = self.last_policy.shape[1] - 1
        return float(self.last_policy[file, slot_index(time - self.last_time[file], self.period, k)])


LEDGER_COLUMNS = ("episode", "L_MBS", "L_SBS", "L_C", "L", "L_over_omega")


@dataclass
class LoadLedger:
    """Accumulated MBS, SBS and cache-update traffic over served requests.

    Rates divide by elapsed real time. ``normalized_load`` divides the load
    by the empirical request rate instead, i.e. it is the weighted traffic per
    request, which is what ``L / omega`` estimates.
    """

    update_cost: float = 0.0
    sbs_cost: float = 0.0
    sbs_bytes: float = 0.0
    mbs_bytes: float = 0.0
    update_bytes: float = 0.0
    requests: int = 0
    elapsed_time: float = 0.0

    def serve(self, sbs_amount: float, time: Optional[float] = None) -> None:
        self.sbs_bytes += sbs_amount
        self.mbs_bytes += 1.0 - sbs_amount
        self.requests += 1
        if time is not None:
            self.elapsed_time = max(self.elapsed_time, time)

    def add_update(self, amount: float) -> None:
        self.update_bytes += amount

    def __add__(self, other: "LoadLedger") -> "LoadLedger":
        if (self.update_cost, self.sbs_cost) != (other.update_cost, other.sbs_cost):
            raise ValueError("cannot merge ledgers with different link costs")
        return LoadLedger(self.update_cost, self.sbs_cost,
                          self.sbs_bytes + other.sbs_bytes,
                          self.mbs_bytes + other.mbs_bytes,
                          self.update_bytes + other.update_bytes,
                          self.requests + other.requests,
                          self.elapsed_time + other.elapsed_time)

    def _weighted(self) -> float:
        return self.mbs_bytes + self.sbs_cost * self.sbs_bytes + self.update_cost * self.update_bytes

    @property
    def rates(self) -> dict:
        t = self.elapsed_time
        if t <= 0:
            raise ValueError("ledger has no elapsed time")
        return {"L_MBS": self.mbs_bytes / t, "L_SBS": self.sbs_bytes / t,
                "L_C": self.update_bytes / t, "L": self._weighted() / t}

    @property
    def normalized_load(self) -> float:
        return self._weighted() / self.requests

    @property
    def objective(self) -> float:
        """Per-request ``L_SBS - c_C L_C``, the quantity being maximized."""
        return (self.sbs_bytes - self.update_cost * self.update_bytes) / self.requests

    def finalize(self) -> dict:
        out = dict(self.rates) if self.elapsed_time > 0 else {}
        out.update(objective=self.objective, L_over_omega=self.normalized_load)
        return out

    def csv_row(self, episode: int) -> list:
        r = self.rates
        return [episode, r["L_MBS"], r["L_SBS"], r["L_C"], r["L"], self.normalized_load]


def write_ledger_csv(ledgers: Sequence[LoadLedger], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for i, led in enumerate(ledgers):
            w.writerow([repr(v) if isinstance(v, float) else v for v in led.csv_row(i)])

