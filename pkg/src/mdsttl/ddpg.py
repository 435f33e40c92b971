"""Deep deterministic policy gradient on top of :mod:`mdsttl.nn`.

Defaults follow the hyperparameters used for the caching experiments: two
hidden layers of 64 units with batch norm, actor/critic learning rates
1e-4/1e-3, polyak 0.999, buffer 1e6, batch 64, discount 0.99 and Gaussian
exploration noise of variance 0.01.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .caching import LoadLedger
from .nn import Adam, Mlp

__all__ = [
    "DdpgConfig",
    "ReplayBuffer",
    "DdpgAgent",
    "EpisodeRecord",
    "noise_schedule",
    "train",
    "evaluate",
    "write_training_log",
    "CHECKPOINT_VERSION",
]

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DdpgConfig:
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    polyak: float = 0.999
    buffer_size: int = 1_000_000
    batch_size: int = 64
    discount: float = 0.99
    noise_var: float = 0.01
    hidden: tuple = (64, 64)
    batch_norm: bool = True
    final_init: float = 3e-3

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DdpgConfig":
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling (with replacement).

    Storage grows geometrically up to ``capacity`` so that a 1e6 buffer does
    not allocate gigabytes for short runs.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.state_dim, self.action_dim = state_dim, action_dim
        self._alloc(min(capacity, 1024))
        self.size = 0
        self.pos = 0

    def _alloc(self, n: int) -> None:
        old = getattr(self, "s", None)
        new = dict(s=np.zeros((n, self.state_dim)), a=np.zeros((n, self.action_dim)),
                   r=np.zeros(n), s2=np.zeros((n, self.state_dim)), d=np.zeros(n))
        if old is not None:
            for k, arr in new.items():
                arr[:self.size] = getattr(self, k)[:self.size]
        for k, arr in new.items():
            setattr(self, k, arr)

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state, done) -> None:
        if self.size == len(self.r) and self.size < self.capacity:
            self._alloc(min(2 * len(self.r), self.capacity))
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = state, action, reward, next_state, done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        if self.size < batch_size:
            raise ValueError("not enough transitions to sample a batch")
        return rng.integers(0, self.size, batch_size)

    def sample(self, rng: np.random.Generator, batch_size: int) -> tuple:
        idx = self.sample_indices(rng, batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx]


class DdpgAgent:
    def __init__(self, state_dim: int, action_dim: int, config: DdpgConfig = DdpgConfig(),
                 seed: int = 0):
        self.config = config
        self.state_dim, self.action_dim = state_dim, action_dim
        self.rng = np.random.default_rng(seed)
        init_rng = np.random.default_rng(self.rng.integers(2**63))
        kw = dict(hidden=config.hidden, batch_norm=config.batch_norm, rng=init_rng,
                  final_init=config.final_init)
        self.actor = Mlp(state_dim, action_dim, output="sigmoid", **kw)
        self.critic = Mlp(state_dim + action_dim, 1, output="linear", **kw)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor.flat_params, config.actor_lr)
        self.critic_opt = Adam(self.critic.flat_params, config.critic_lr)
        self.buffer = ReplayBuffer(config.buffer_size, state_dim, action_dim)
        self.noise_var = config.noise_var
        self.updates = 0

    # -- acting -----------------------------------------------------------
    def act(self, state: np.ndarray, explore: bool = False) -> np.ndarray:
        action = self.actor.forward(state, train=False)[0]
        if explore and self.noise_var > 0:
            action = action + self.rng.normal(0.0, np.sqrt(self.noise_var), self.action_dim)
            action = np.clip(action, 0.0, 1.0)
        return action

    def remember(self, transition) -> None:
        self.buffer.add(transition.state, transition.action, transition.reward,
                        transition.next_state, float(transition.done))

    # -- learning ---------------------------------------------------------
    def critic_target(self, rewards: np.ndarray, next_states: np.ndarray, dones: np.ndarray) -> np.ndarray:
        a2 = self.target_actor.forward(next_states, train=False)
        q2 = self.target_critic.forward(np.hstack([next_states, a2]), train=False)[:, 0]
        return rewards + self.config.discount * (1.0 - dones) * q2

    def critic_loss_and_grads(self, states, actions, targets, update_stats: bool = True):
        q = self.critic.forward(np.hstack([states, actions]), train=True,
                                update_stats=update_stats)[:, 0]
        err = q - targets
        grads, _ = self.critic.backward((2.0 / len(err)) * err[:, None])
        return float(np.mean(err ** 2)), grads

    def critic_update(self, batch) -> float:
        s, a, r, s2, d = batch
        y = self.critic_target(r, s2, d)
        loss, grads = self.critic_loss_and_grads(s, a, y)
        self.critic_opt.step(self.critic.flat_params, grads.flat)
        return loss

    def actor_objective_and_grads(self, states, update_stats: bool = True):
        """Mean critic value of the actor's actions and its gradient wrt actor weights.

        The critic is evaluated with its running batch-norm statistics here:
        batch statistics would cancel any action shift shared by the whole
        batch and hide exactly the direction the actor needs.
        """
        a = self.actor.forward(states, train=True, update_stats=update_stats)
        q = self.critic.forward(np.hstack([states, a]), train=False)[:, 0]
        _, dx = self.critic.backward(np.full((len(q), 1), 1.0 / len(q)))
        grads, _ = self.actor.backward(dx[:, self.state_dim:])
        return float(q.mean()), grads

    def actor_update(self, batch) -> float:
        value, grads = self.actor_objective_and_grads(batch[0])
        # Ascent on the critic's value.
        self.actor_opt.step(self.actor.flat_params, -grads.flat)
        return value

    def polyak_update(self, rho: Optional[float] = None) -> None:
        rho = self.config.polyak if rho is None else rho
        self.target_actor.blend_from(self.actor, rho)
        self.target_critic.blend_from(self.critic, rho)

    def learn(self) -> Optional[float]:
        """One critic step, one actor step and a target blend, once a batch is available."""
        if len(self.buffer) < self.config.batch_size:
            return None
        batch = self.buffer.sample(self.rng, self.config.batch_size)
        loss = self.critic_update(batch)
        self.actor_update(batch)
        self.polyak_update()
        self.updates += 1
        return loss

    def all_finite(self) -> bool:
        return all(net.all_finite() for net in
                   (self.actor, self.critic, self.target_actor, self.target_critic))

    # -- persistence ------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("actor", "critic", "target_actor", "target_critic"):
            net = getattr(self, name)
            out.update({f"{name}/param/{k}": v for k, v in net.params.items()})
            out.update({f"{name}/stat/{k}": v for k, v in net.stats.items()})
        for name in ("actor_opt", "critic_opt"):
            opt = getattr(self, name)
            out[f"{name}/m"] = opt.m
            out[f"{name}/v"] = opt.v
            out[f"{name}/t"] = np.array(opt.t)
        return out

    def save(self, path: Union[str, Path]) -> None:
        """Write an ``.npz`` holding every tensor plus a JSON header."""
        meta = dict(version=CHECKPOINT_VERSION, state_dim=self.state_dim,
                    action_dim=self.action_dim, config=self.config.to_dict(),
                    noise_var=self.noise_var, updates=self.updates)
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)), **self.state_dict())
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: Union[str, Path], seed: int = 0) -> "DdpgAgent":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            agent = cls(meta["state_dim"], meta["action_dim"], DdpgConfig.from_dict(meta["config"]), seed)
            agent.noise_var = meta["noise_var"]
            agent.updates = meta["updates"]
            for key in data.files:
                if key == "__meta__":
                    continue
                owner, *rest = key.split("/")
                if owner.endswith("_opt"):
                    opt = getattr(agent, owner)
                    if rest[0] == "t":
                        opt.t = int(data[key])
                    else:
                        getattr(opt, rest[0])[...] = data[key]
                else:
                    net = getattr(agent, owner)
                    store = net.params if rest[0] == "param" else net.stats
                    store[rest[1]][...] = data[key]
        return agent


def noise_schedule(base_var: float, episodes: int, anneal_episodes: int) -> Callable[[int], float]:
    """Constant variance, then a linear ramp to zero over the last ``anneal_episodes``."""
    start = episodes - anneal_episodes

    def var(episode: int) -> float:
        if anneal_episodes <= 0 or episode < start:
            return base_var
        return base_var * max(0.0, 1.0 - (episode - start + 1) / anneal_episodes)

    return var


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    normalized_load: float
    noise_var: float
    steps: int
    ledger: LoadLedger


def _run_episode(agents: Sequence[DdpgAgent], env, explore: bool, learn: bool) -> tuple[float, int]:
    total, steps = 0.0, 0
    if env.multi_agent:
        while not env.done:
            agent = agents[env.current_agent]
            tr = env.step(agent.act(env.state(), explore))
            if learn:
                agent.remember(tr)
                agent.learn()
            total += tr.reward
            steps += 1
    else:
        (agent,) = agents
        state = env.state()
        while not env.done:
            tr = env.step(agent.act(state, explore))
            if learn:
                agent.remember(tr)
                agent.learn()
            state = tr.next_state
            total += tr.reward
            steps += 1
    return total, steps


def train(agents: Union[DdpgAgent, Sequence[DdpgAgent]], env_factory: Callable[[int], object],
          episodes: int, schedule: Optional[Callable[[int], float]] = None,
          callback: Optional[Callable[[EpisodeRecord], None]] = None) -> list[EpisodeRecord]:
    """Train one agent (single-agent env) or one agent per SBS (multi-agent env).

    ``env_factory(episode)`` must return an environment already reset on a
    fresh trace. ``schedule(episode)`` gives the exploration variance; by
    default each agent keeps its configured variance throughout.
    """
    agents = [agents] if isinstance(agents, DdpgAgent) else list(agents)
    log = []
    for ep in range(episodes):
        if schedule is not None:
            for a in agents:
                a.noise_var = schedule(ep)
        env = env_factory(ep)
        ret, steps = _run_episode(agents, env, explore=True, learn=True)
        bad = [i for i, a in enumerate(agents) if not a.all_finite()]
        if bad or not np.isfinite(ret):
            raise FloatingPointError(f"non-finite parameters in agents {bad} after episode {ep} "
                                     f"(return {ret})")
        rec = EpisodeRecord(ep, ret, env.ledger.normalized_load, agents[0].noise_var, steps, env.ledger)
        log.append(rec)
        if callback is not None:
            callback(rec)
        logger.debug("episode %d return %.4f load %.4f", ep, ret, rec.normalized_load)
    return log


def evaluate(agents: Union[DdpgAgent, Sequence[DdpgAgent]], env_factory: Callable[[int], object],
             episodes: int) -> list[EpisodeRecord]:
    """Roll out the deterministic policies with no noise and no parameter updates."""
    agents = [agents] if isinstance(agents, DdpgAgent) else list(agents)
    out = []
    for ep in range(episodes):
        env = env_factory(ep)
        ret, steps = _run_episode(agents, env, explore=False, learn=False)
        out.append(EpisodeRecord(ep, ret, env.ledger.normalized_load, 0.0, steps, env.ledger))
    return out


def write_training_log(records: Sequence[EpisodeRecord], path: Union[str, Path]) -> None:
    """CSV columns: episode, return, L_over_omega, noise_var."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "L_over_omega", "noise_var"])
        for r in records:
            w.writerow([r.episode, repr(float(r.ret)), repr(float(r.normalized_load)),
                        repr(float(r.noise_var))])
