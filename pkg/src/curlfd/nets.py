"""Minimal dense network stack: MLPs, layer norm, backprop, Adam, checkpoints.

Everything is float64 numpy; the networks here are tiny, so determinism and
tight gradient checks matter more than speed.  Parameters live in flat
``{name: array}`` dicts shared by the optimizer and checkpoint code.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")
LN_EPS = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or gradient aborts training."""


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "tanh":
        return np.tanh(h)
    if name == "linear":
        return h
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, h: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (h > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - out * out
    if name == "linear":
        return np.ones_like(h)
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Fully connected net with optional per-layer layer normalization.

    Layer i computes ``act(ln(x @ W + b))`` where ``ln`` is identity unless
    ``layer_norm[i]`` is set (normalization before the activation, with
    learnable gain ``g{i}`` and bias ``beta{i}``).
    """

    def __init__(
        self,
        sizes: list[int],
        activations: list[str],
        layer_norm: list[bool] | None = None,
        rng: np.random.Generator | None = None,
        final_scale: float = 1.0,
    ):
        n_layers = len(sizes) - 1
        if len(activations) != n_layers:
            raise ValueError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.layer_norm = list(layer_norm) if layer_norm is not None else [False] * n_layers
        if len(self.layer_norm) != n_layers:
            raise ValueError("need one layer_norm flag per layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, np.ndarray] = {}
        for i in range(n_layers):
            fan_in = sizes[i]
            bound = 1.0 / np.sqrt(fan_in)
            scale = final_scale if i == n_layers - 1 else 1.0
            self.params[f"W{i}"] = rng.uniform(-bound, bound, (sizes[i], sizes[i + 1])) * scale
            self.params[f"b{i}"] = rng.uniform(-bound, bound, sizes[i + 1]) * scale
            if self.layer_norm[i]:
                self.params[f"g{i}"] = np.ones(sizes[i + 1])
                self.params[f"beta{i}"] = np.zeros(sizes[i + 1])

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def clone(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.layer_norm = list(self.layer_norm)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[dict]]:
        """Batched forward pass; returns (output, cache for backward)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input dim {x.shape[1]} != {self.sizes[0]}")
        cache: list[dict] = []
        for i in range(self.n_layers):
            z = x @ self.params[f"W{i}"] + self.params[f"b{i}"]
            layer: dict = {"x": x, "z": z}
            if self.layer_norm[i]:
                mu = z.mean(axis=1, keepdims=True)
                d = z - mu
                var = np.einsum("ij,ij->i", d, d)[:, None] / z.shape[1]
                inv = 1.0 / np.sqrt(var + LN_EPS)
                hhat = d * inv
                h = self.params[f"g{i}"] * hhat + self.params[f"beta{i}"]
                layer.update(hhat=hhat, inv=inv)
            else:
                h = z
            out = _act(self.activations[i], h)
            layer.update(h=h, out=out)
            cache.append(layer)
            x = out
        if squeeze:
            return x[0], cache
        return x, cache

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without building the backward cache (hot path)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input dim {x.shape[1]} != {self.sizes[0]}")
        for i in range(self.n_layers):
            z = x @ self.params[f"W{i}"]
            z += self.params[f"b{i}"]
            if self.layer_norm[i]:
                mu = z.mean(axis=1, keepdims=True)
                z -= mu
                var = np.einsum("ij,ij->i", z, z)[:, None] / z.shape[1]
                z *= 1.0 / np.sqrt(var + LN_EPS)
                z *= self.params[f"g{i}"]
                z += self.params[f"beta{i}"]
            act = self.activations[i]
            if act == "relu":
                np.maximum(z, 0.0, out=z)
            elif act == "tanh":
                np.tanh(z, out=z)
            x = z
        return x[0] if squeeze else x

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.infer(x)

    def backward(
        self, cache: list[dict], grad_out: np.ndarray
    ) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Backprop for a summed/batch loss.

        `grad_out` is dL/d(output), shape (batch, out) or (out,).  Returns
        (parameter gradients, dL/d(input)).
        """
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(self.n_layers)):
            layer = cache[i]
            g = g * _act_grad(self.activations[i], layer["h"], layer["out"])
            if self.layer_norm[i]:
                hhat, inv = layer["hhat"], layer["inv"]
                grads[f"beta{i}"] = g.sum(axis=0)
                grads[f"g{i}"] = (g * hhat).sum(axis=0)
                gh = g * self.params[f"g{i}"]
                g = inv * (
                    gh
                    - gh.mean(axis=1, keepdims=True)
                    - hhat * (gh * hhat).mean(axis=1, keepdims=True)
                )
            grads[f"W{i}"] = layer["x"].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads, g


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment optimizer state over a parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        st.m = {k: np.zeros_like(p) for k, p in params.items()}
        st.v = {k: np.zeros_like(p) for k, p in params.items()}
        return st


def adam_step(params: dict[str, np.ndarray], opt: AdamState, grads: dict[str, np.ndarray]) -> None:
    """One in-place Adam update; aborts on non-finite gradients."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {k!r}")
    opt.step += 1
    b1c = 1.0 - opt.beta1**opt.step
    b2c = 1.0 - opt.beta2**opt.step
    for k, g in grads.items():
        m, v = opt.m[k], opt.v[k]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        denom = np.sqrt(v / b2c)
        denom += opt.eps
        params[k] -= opt.lr * (m / b1c) / denom


def polyak_update(target: dict[str, np.ndarray], online: dict[str, np.ndarray], tau: float) -> None:
    """In-place soft update: target <- (1 - tau) * target + tau * online."""
    for k in target:
        target[k] *= 1.0 - tau
        target[k] += tau * online[k]


CHECKPOINT_VERSION = 1


def save_checkpoint(path, groups: dict[str, dict[str, np.ndarray]], meta: dict | None = None) -> None:
    """Write named parameter groups to a single npz file (bit-exact)."""
    payload = {}
    for group, params in groups.items():
        for name, arr in params.items():
            payload[f"{group}/{name}"] = arr
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    payload["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        groups: dict[str, dict[str, np.ndarray]] = {}
        for key in data.files:
            if key == "__header__":
                continue
            group, name = key.split("/", 1)
            groups.setdefault(group, {})[name] = data[key]
    return groups, header["meta"]


class GaussianPolicy:
    """Tanh-squashed mean with a state-independent learnable log-std.

    Actions are distributed ``N(tanh(net(s)), diag(exp(log_std))^2)``; the
    mean is bounded to the action box, samples are clipped by the caller.
    """

    LOG_STD_MIN = -5.0
    LOG_STD_MAX = 2.0

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        hidden: tuple[int, ...],
        rng: np.random.Generator,
        log_std_init: float = -1.0,
        final_scale: float = 1e-2,
    ):
        sizes = [obs_dim, *hidden, act_dim]
        acts = ["relu"] * len(hidden) + ["tanh"]
        self.net = Mlp(sizes, acts, rng=rng, final_scale=final_scale)
        self.log_std = np.full(act_dim, float(log_std_init))
        self.act_dim = act_dim

    @property
    def params(self) -> dict[str, np.ndarray]:
        d = {f"net.{k}": v for k, v in self.net.params.items()}
        d["log_std"] = self.log_std
        return d

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            if k == "log_std":
                self.log_std[:] = v
            else:
                self.net.params[k.removeprefix("net.")][...] = v

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, self.LOG_STD_MIN, self.LOG_STD_MAX, out=self.log_std)

    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return self.net(obs)

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.net(obs)
        return mu + self.std() * rng.standard_normal(mu.shape)

    def act(self, obs: np.ndarray, deterministic: bool, rng: np.random.Generator) -> np.ndarray:
        a = self.mean(obs) if deterministic else self.sample(obs, rng)
        return np.clip(a, -1.0, 1.0)

    def log_prob(self, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        mu = self.net(np.atleast_2d(obs))
        act = np.atleast_2d(act)
        std = self.std()
        z = (act - mu) / std
        return (-0.5 * z * z - self.log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)

    def weighted_logprob_loss(
        self, obs: np.ndarray, act: np.ndarray, weights: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Loss -mean(w * log pi(a|s)) and its parameter gradients.

        Weights are treated as constants; no gradient flows through them.
        """
        obs = np.atleast_2d(obs)
        act = np.atleast_2d(act)
        w = np.asarray(weights, dtype=float)
        n = obs.shape[0]
        mu, cache = self.net.forward(obs)
        std = self.std()
        var = std * std
        z = (act - mu) / std
        logp = (-0.5 * z * z - self.log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)
        loss = float(-(w * logp).mean())
        # dL/dmu = -(w/n) * (a - mu) / var
        dmu = -(w[:, None] / n) * (act - mu) / var
        net_grads, _ = self.net.backward(cache, dmu)
        dlogstd = -(w[:, None] / n) * (z * z - 1.0)
        grads = {f"net.{k}": v for k, v in net_grads.items()}
        grads["log_std"] = dlogstd.sum(axis=0)
        return loss, grads


class DeterministicPolicy:
    """Tanh-bounded deterministic actor for the DDPG-style baseline."""

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        hidden: tuple[int, ...],
        rng: np.random.Generator,
        final_scale: float = 1e-2,
    ):
        sizes = [obs_dim, *hidden, act_dim]
        acts = ["relu"] * len(hidden) + ["tanh"]
        self.net = Mlp(sizes, acts, rng=rng, final_scale=final_scale)
        self.act_dim = act_dim

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.net.params

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return self.net(obs)

    def act(
        self,
        obs: np.ndarray,
        deterministic: bool,
        rng: np.random.Generator,
        noise_sigma: float = 0.1,
    ) -> np.ndarray:
        a = self.net(obs)
        if not deterministic:
            a = a + noise_sigma * rng.standard_normal(a.shape)
        return np.clip(a, -1.0, 1.0)


def make_critic(obs_dim: int, act_dim: int, hidden: tuple[int, ...], rng, layer_norm: bool = True) -> Mlp:
    """Q-network over concatenated (obs, action), layer-normalized by default."""
    sizes = [obs_dim + act_dim, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["linear"]
    ln = [layer_norm] * len(hidden) + [False]
    return Mlp(sizes, acts, layer_norm=ln, rng=rng)
