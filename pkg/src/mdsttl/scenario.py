"""Scenario geometry and request-trace generation.

SBSs sit on the corners of one unit square of a grid. Users placing a request
are dropped in the square (uniformly, or conditioned on the file class when a
heterogeneous ``zeta`` is set) and can reach every SBS within ``comm_range``.
Requests for each file form an independent Weibull renewal process; the
processes are superposed into one time-ordered trace.

Files and SBSs are 0-indexed in code. File ``i`` is the ``(i+1)``-th most
popular file; SBS ``b`` sits at ``SBS_POSITIONS[b]``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "SBS_POSITIONS",
    "ScenarioConfig",
    "RequestTrace",
    "DegenerateEpisodeError",
    "zipf_popularity",
    "weibull_scale_from_rate",
    "associated_sbs",
    "sample_coverage",
    "generate_trace",
    "write_trace_csv",
    "read_trace_csv",
]

# Corners of the unit square, walked counter-clockwise from the origin.
SBS_POSITIONS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

GapSampler = Callable[[np.random.Generator, int, int], np.ndarray]


class DegenerateEpisodeError(ValueError):
    """A trace too short to form a single MDP transition."""


@dataclass(frozen=True)
class ScenarioConfig:
    num_files: int = 20
    num_sbs: int = 4
    comm_range: float = 1.0 / math.sqrt(2.0)
    cache_capacity: float = 4.0
    zipf_alpha: float = 0.7
    weibull_shape: float = 0.6
    aggregate_rate: float = 100.0
    zeta: Optional[float] = None  # None: users uniform in the square
    update_period: float = 0.5
    num_updates: int = 2
    update_cost: float = 0.05
    sbs_cost: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_files < 1:
            raise ValueError("num_files must be positive")
        if not 1 <= self.num_sbs <= len(SBS_POSITIONS):
            raise ValueError(f"num_sbs must be in 1..{len(SBS_POSITIONS)} (one grid square)")
        if not (1.0 / math.sqrt(2.0) - 1e-12 <= self.comm_range <= 1.0):
            raise ValueError("comm_range must lie in [1/sqrt(2), 1]")
        if self.zipf_alpha < 0:
            raise ValueError("zipf_alpha must be >= 0")
        if not 0 < self.weibull_shape <= 1:
            raise ValueError("weibull_shape must lie in (0, 1]")
        if self.aggregate_rate <= 0:
            raise ValueError("aggregate_rate must be positive")
        if self.zeta is not None and not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")
        if self.update_period <= 0 or self.num_updates < 0:
            raise ValueError("update_period must be positive and num_updates >= 0")
        if self.cache_capacity < 0:
            raise ValueError("cache_capacity must be >= 0")

    @property
    def popularity(self) -> np.ndarray:
        return zipf_popularity(self.num_files, self.zipf_alpha)

    @property
    def file_rates(self) -> np.ndarray:
        return self.aggregate_rate * self.popularity

    @property
    def weibull_scales(self) -> np.ndarray:
        return np.array([weibull_scale_from_rate(self.weibull_shape, w) for w in self.file_rates])

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
        data = dict(data)
        if data.get("zeta") == "uniform":
            data["zeta"] = None
        return cls(**data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScenarioConfig":
        """Load a flat JSON object whose keys match the dataclass fields."""
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def zipf_popularity(num_files: int, alpha: float) -> np.ndarray:
    """Zipf probability mass over ranks ``1..num_files``."""
    if num_files < 1:
        raise ValueError("num_files must be positive")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    weights = np.arange(1, num_files + 1, dtype=float) ** -alpha
    return weights / weights.sum()


def weibull_scale_from_rate(shape: float, rate: float) -> float:
    """Scale giving a Weibull(shape, scale) inter-request time of mean ``1/rate``."""
    if not 0 < shape <= 1:
        raise ValueError("Weibull shape must lie in (0, 1]")
    if rate <= 0:
        raise ValueError("request rate must be positive")
    return 1.0 / (rate * math.gamma(1.0 + 1.0 / shape))


def associated_sbs(file: int, num_sbs: int) -> int:
    """SBS that file class ``file mod B`` is tied to in the heterogeneous setup.

    With 1-based labels file ``f`` maps to SBS ``(f mod B) + 1``; in 0-based
    indices that is ``(file + 1) % B``.
    """
    return (file + 1) % num_sbs


def _within_range(points: np.ndarray, num_sbs: int, comm_range: float) -> np.ndarray:
    diff = points[:, None, :] - SBS_POSITIONS[None, :num_sbs, :]
    return np.hypot(diff[..., 0], diff[..., 1]) <= comm_range


def _sample_region(rng: np.random.Generator, n: int, centre: np.ndarray, comm_range: float,
                   inside: bool) -> np.ndarray:
    # Rejection against the unit square; acceptance is at least pi/8 either way.
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        need = n - filled
        cand = rng.random((max(2 * need, 16), 2))
        hit = np.hypot(cand[:, 0] - centre[0], cand[:, 1] - centre[1]) <= comm_range
        keep = cand[hit == inside][:need]
        out[filled:filled + len(keep)] = keep
        filled += len(keep)
    return out


def sample_user_positions(cfg: ScenarioConfig, files: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    files = np.asarray(files)
    n = len(files)
    if cfg.zeta is None:
        return rng.random((n, 2))
    if not 0.0 <= cfg.zeta <= 1.0:
        raise ValueError("zeta must lie in [0, 1]")
    anchors = associated_sbs(files, cfg.num_sbs)
    inside = rng.random(n) < cfg.zeta
    pos = np.empty((n, 2))
    for b in range(cfg.num_sbs):
        for flag in (True, False):
            idx = np.flatnonzero((anchors == b) & (inside == flag))
            if len(idx):
                pos[idx] = _sample_region(rng, len(idx), SBS_POSITIONS[b], cfg.comm_range, flag)
    return pos


def sample_coverage(cfg: ScenarioConfig, files, rng: np.random.Generator) -> np.ndarray:
    """Coverage sets for requests of ``files`` as a boolean ``(n, B)`` matrix.

    Accepts a single file index too, returning a length-``B`` vector.
    """
    scalar = np.ndim(files) == 0
    files = np.atleast_1d(np.asarray(files, dtype=int))
    pos = sample_user_positions(cfg, files, rng)
    cov = _within_range(pos, cfg.num_sbs, cfg.comm_range)
    return cov[0] if scalar else cov


def _weibull_gaps(shape: float, scale: float) -> GapSampler:
    def draw(rng: np.random.Generator, n: int, file: int) -> np.ndarray:
        return scale * rng.weibull(shape, n)
    return draw


@dataclass(frozen=True)
class RequestTrace:
    """Time-ordered request records with per-file linkage precomputed.

    ``gaps[i]`` is the inter-request time from record ``i`` to the next
    request for the same file (NaN on the last one) and ``next_index`` /
    ``prev_index`` point at the neighbouring requests for that file (-1 when
    absent).
    """

    times: np.ndarray
    files: np.ndarray
    coverage: np.ndarray
    num_files: int
    next_index: np.ndarray = field(init=False, repr=False)
    prev_index: np.ndarray = field(init=False, repr=False)
    gaps: np.ndarray = field(init=False, repr=False)
    is_last: np.ndarray = field(init=False, repr=False)
    coverage_size: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        files = np.asarray(self.files, dtype=np.int64)
        coverage = np.asarray(self.coverage, dtype=bool)
        if coverage.ndim != 2 or len(coverage) != len(times) or len(files) != len(times):
            raise ValueError("times, files and coverage must describe the same records")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("request times must be strictly increasing")
        if len(files) and (files.min() < 0 or files.max() >= self.num_files):
            raise ValueError("file index out of range")
        n = len(times)
        next_index = np.full(n, -1, dtype=np.int64)
        prev_index = np.full(n, -1, dtype=np.int64)
        order = np.lexsort((np.arange(n), files))
        same = files[order][1:] == files[order][:-1]
        next_index[order[:-1][same]] = order[1:][same]
        prev_index[order[1:][same]] = order[:-1][same]
        gaps = np.full(n, np.nan)
        has_next = next_index >= 0
        gaps[has_next] = times[next_index[has_next]] - times[has_next]
        arrays = dict(times=times, files=files, coverage=coverage, next_index=next_index,
                      prev_index=prev_index, gaps=gaps, is_last=~has_next,
                      coverage_size=coverage.sum(axis=1))
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def num_sbs(self) -> int:
        return self.coverage.shape[1]

    @property
    def coverage_bitmask(self) -> np.ndarray:
        weights = 1 << np.arange(self.num_sbs)
        return self.coverage.astype(np.int64) @ weights

    def inter_request_times(self, file: int) -> np.ndarray:
        idx = np.flatnonzero((self.files == file) & ~self.is_last)
        return self.gaps[idx]

    def subset(self, mask: np.ndarray) -> "RequestTrace":
        """Subsequence of records; linkage is recomputed on the subsequence."""
        mask = np.asarray(mask, dtype=bool)
        return RequestTrace(self.times[mask], self.files[mask], self.coverage[mask], self.num_files)

    def episode_length(self) -> int:
        """Number of MDP steps before termination fires.

        The episode stops once the request at the next time-step is the last
        one for its file, so records ``0..n-1`` are stepped where ``n`` is the
        first index >= 1 flagged as last.
        """
        if len(self) == 0 or self.is_last[0]:
            return 0
        return int(np.argmax(self.is_last[1:])) + 1


def generate_trace(cfg: ScenarioConfig, *, num_requests: Optional[int] = None,
                   horizon: Optional[float] = None,
                   rng: Union[np.random.Generator, int, None] = None,
                   gap_sampler: Optional[GapSampler] = None) -> RequestTrace:
    """Superpose per-file renewal processes and attach coverage sets.

    Give either a request-count budget (``num_requests``) or a real-time
    ``horizon``; the budget is the default unit for episodes. ``gap_sampler``
    overrides the Weibull draws and is called as ``sampler(rng, n, file)``.
    """
    if (num_requests is None) == (horizon is None):
        raise ValueError("give exactly one of num_requests or horizon")
    if num_requests is not None and num_requests <= 0 or horizon is not None and horizon <= 0:
        raise ValueError("the trace budget must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(cfg.seed if rng is None else rng)
    rates = cfg.file_rates
    samplers = [gap_sampler or _weibull_gaps(cfg.weibull_shape, s) for s in cfg.weibull_scales]
    span = horizon if horizon is not None else 1.5 * num_requests / cfg.aggregate_rate + 1.0
    while True:
        times, files = _renewal_arrivals(rng, samplers, rates, span)
        if horizon is not None or len(times) >= num_requests:
            break
        span *= 2.0
    if num_requests is not None:
        times, files = times[:num_requests], files[:num_requests]
    if len(times) == 0:
        raise DegenerateEpisodeError("horizon too small: no requests generated")
    times = _strictly_increasing(times)
    coverage = sample_coverage(cfg, files, rng)
    return RequestTrace(times, files, coverage, cfg.num_files)


def _renewal_arrivals(rng, samplers, rates, span):
    all_t, all_f = [], []
    for f, (draw, rate) in enumerate(zip(samplers, rates)):
        block = int(rate * span * 1.2) + 16
        t = np.cumsum(draw(rng, block, f))
        while t[-1] <= span:
            t = np.concatenate([t, t[-1] + np.cumsum(draw(rng, block, f))])
        t = t[t <= span]
        all_t.append(t)
        all_f.append(np.full(len(t), f, dtype=np.int64))
    times = np.concatenate(all_t)
    files = np.concatenate(all_f)
    order = np.argsort(times, kind="stable")
    return times[order], files[order]


def _strictly_increasing(times: np.ndarray) -> np.ndarray:
    times = times.copy()
    for i in np.flatnonzero(np.diff(times) <= 0) + 1:
        times[i] = max(times[i], np.nextafter(times[i - 1], np.inf))
    return times


def write_trace_csv(trace: RequestTrace, path: Union[str, Path]) -> None:
    """Columns: time, file (1-based), coverage bitmask (bit ``b`` = SBS ``b+1``)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "file", "coverage"])
        for t, f, m in zip(trace.times, trace.files, trace.coverage_bitmask):
            w.writerow([repr(float(t)), int(f) + 1, int(m)])


def read_trace_csv(path: Union[str, Path], num_files: int, num_sbs: int) -> RequestTrace:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["time"]) for r in rows])
    files = np.array([int(r["file"]) - 1 for r in rows], dtype=np.int64)
    masks = np.array([int(r["coverage"]) for r in rows], dtype=np.int64)
    coverage = (masks[:, None] >> np.arange(num_sbs)) & 1
    return RequestTrace(times, files, coverage.astype(bool).reshape(len(rows), num_sbs), num_files)
