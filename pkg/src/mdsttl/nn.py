"""Small fully connected networks with batch norm and hand-written backprop.

Hidden layers are ``linear -> batch norm -> relu``; the output layer is linear,
optionally squashed by a sigmoid. Everything is float64 numpy so gradients
can be checked against finite differences.
"""
from __future__ import annotations

import copy
from typing import Iterable, Optional

import numpy as np

__all__ = ["Mlp", "Adam"]


class Mlp:
    def __init__(self, in_dim: int, out_dim: int, hidden: Iterable[int] = (64, 64),
                 output: str = "linear", batch_norm: bool = True,
                 rng: Optional[np.random.Generator] = None, final_init: float = 3e-3,
                 bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        if output not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output activation {output!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.sizes = [in_dim, *hidden, out_dim]
        self.output = output
        self.batch_norm = batch_norm
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        params: dict[str, np.ndarray] = {}
        stats: dict[str, np.ndarray] = {}
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            bound = final_init if i == n_layers - 1 else 1.0 / np.sqrt(fan_in)
            params[f"W{i}"] = rng.uniform(-bound, bound, (fan_in, fan_out))
            params[f"b{i}"] = rng.uniform(-bound, bound, fan_out)
            if batch_norm and i < n_layers - 1:
                params[f"gamma{i}"] = np.ones(fan_out)
                params[f"beta{i}"] = np.zeros(fan_out)
                stats[f"mean{i}"] = np.zeros(fan_out)
                stats[f"var{i}"] = np.ones(fan_out)
        # Parameters and running stats each live in one flat buffer; the dict
        # entries are views into it, so optimizers work on the flat vector.
        self.flat_params, self.params = _pack(params)
        self.flat_stats, self.stats = _pack(stats)
        self._cache = None

    @property
    def num_hidden(self) -> int:
        return len(self.sizes) - 2

    def copy(self) -> "Mlp":
        new = copy.copy(self)
        new.flat_params, new.params = _pack(self.params)
        new.flat_stats, new.stats = _pack(self.stats)
        new._cache = None
        return new

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True) -> np.ndarray:
        """Batch forward pass.

        In ``train`` mode batch norm uses the batch statistics (and folds them
        into the running averages unless ``update_stats`` is False); otherwise
        it uses the running averages, so single samples are fine.
        """
        p = self.params
        a = np.atleast_2d(np.asarray(x, dtype=float))
        cache = {"a0": a, "train": train}
        for i in range(self.num_hidden):
            z = a @ p[f"W{i}"] + p[f"b{i}"]
            if self.batch_norm:
                if train:
                    mean = z.mean(axis=0)
                    zc = z - mean
                    var = (zc * zc).mean(axis=0)
                    if update_stats:
                        m = self.bn_momentum
                        n = len(z)
                        run_mean, run_var = self.stats[f"mean{i}"], self.stats[f"var{i}"]
                        run_mean *= 1 - m
                        run_mean += m * mean
                        run_var *= 1 - m
                        run_var += m * (var * n / (n - 1) if n > 1 else var)
                else:
                    zc = z - self.stats[f"mean{i}"]
                    var = self.stats[f"var{i}"]
                inv_std = 1.0 / np.sqrt(var + self.bn_eps)
                xhat = zc * inv_std
                h = p[f"gamma{i}"] * xhat + p[f"beta{i}"]
                cache[f"xhat{i}"] = xhat
                cache[f"inv_std{i}"] = inv_std
            else:
                h = z
            cache[f"h{i}"] = h
            a = np.maximum(h, 0.0)
            cache[f"a{i + 1}"] = a
        last = self.num_hidden
        z = a @ p[f"W{last}"] + p[f"b{last}"]
        y = 1.0 / (1.0 + np.exp(-z)) if self.output == "sigmoid" else z
        cache["y"] = y
        self._cache = cache
        return y

    def backward(self, dy: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given ``dL/dy`` for the last forward pass.

        Returns the parameter gradients and ``dL/dx``. The gradient dict is
        backed by a flat vector laid out like ``flat_params`` (``grads.flat``).
        """
        c, p = self._cache, self.params
        if c is None:
            raise RuntimeError("backward() called before forward()")
        flat = np.empty_like(self.flat_params)
        grads = _GradDict(flat, {k: flat[sl].reshape(v.shape) for k, v, sl in _slices(p)})
        last = self.num_hidden
        dz = np.asarray(dy, dtype=float)
        if self.output == "sigmoid":
            dz = dz * c["y"] * (1.0 - c["y"])
        a = c[f"a{last}"]
        grads[f"W{last}"][...] = a.T @ dz
        grads[f"b{last}"][...] = dz.sum(axis=0)
        da = dz @ p[f"W{last}"].T
        for i in reversed(range(last)):
            dh = da * (c[f"h{i}"] > 0)
            if self.batch_norm:
                xhat, inv_std = c[f"xhat{i}"], c[f"inv_std{i}"]
                grads[f"gamma{i}"][...] = (dh * xhat).sum(axis=0)
                grads[f"beta{i}"][...] = dh.sum(axis=0)
                dxhat = dh * p[f"gamma{i}"]
                if c["train"]:
                    n = len(dxhat)
                    dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0)
                                        - xhat * (dxhat * xhat).sum(axis=0))
                else:
                    dz = dxhat * inv_std
            else:
                dz = dh
            a = c[f"a{i}"]
            grads[f"W{i}"][...] = a.T @ dz
            grads[f"b{i}"][...] = dz.sum(axis=0)
            da = dz @ p[f"W{i}"].T
        return grads, da

    def blend_from(self, other: "Mlp", rho: float) -> None:
        """``self <- rho * self + (1 - rho) * other`` for weights and running stats."""
        for mine, theirs in ((self.flat_params, other.flat_params),
                             (self.flat_stats, other.flat_stats)):
            mine *= rho
            mine += (1.0 - rho) * theirs

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat_params)))

    def num_params(self) -> int:
        return self.flat_params.size


class Adam:
    """Adam on a flat parameter vector, updated in place."""

    def __init__(self, flat_params: np.ndarray, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros_like(flat_params)
        self.v = np.zeros_like(flat_params)
        self.t = 0

    def step(self, flat_params: np.ndarray, flat_grad: np.ndarray) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        self.m *= b1
        self.m += (1 - b1) * flat_grad
        self.v *= b2
        self.v += (1 - b2) * flat_grad * flat_grad
        flat_params -= lr_t * self.m / (np.sqrt(self.v) + self.eps)


class _GradDict(dict):
    def __init__(self, flat: np.ndarray, views: dict):
        super().__init__(views)
        self.flat = flat


def _slices(arrays: dict[str, np.ndarray]):
    start = 0
    for k, v in arrays.items():
        yield k, v, slice(start, start + v.size)
        start += v.size


def _pack(arrays: dict[str, np.ndarray]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    flat = np.empty(sum(v.size for v in arrays.values()))
    views = {}
    for k, v, sl in _slices(arrays):
        flat[sl] = v.ravel()
        views[k] = flat[sl].reshape(v.shape)
    return flat, views
