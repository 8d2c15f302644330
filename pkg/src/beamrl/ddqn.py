"""Numpy Q-network, Adam, uniform replay and the double-DQN update."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

CKPT_MAGIC = "BEAMRL-QNET 1"


class Mlp:
    """Fully connected net, ReLU on hidden layers, identity output.

    Weights are stored as ``(fan_in, fan_out)`` so that ``x @ W + b`` maps a
    batch of row vectors.
    """

    def __init__(self, layer_dims, rng: np.random.Generator | None = None):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"bad layer dims {layer_dims}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self._bind(np.zeros(self.n_params))
        for w in self.weights:
            fan_in, fan_out = w.shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-lim, lim, size=w.shape)

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def _bind(self, flat: np.ndarray) -> None:
        # every weight and bias is a view into one contiguous buffer
        self.flat_params = flat
        self.weights, self.biases = [], []
        off = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self.weights.append(flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            self.biases.append(flat[off:off + fan_out])
            off += fan_out

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"expected input of length {self.layer_dims[0]}, got {x.shape[-1]}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check(x)
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < n - 1:
                x = np.maximum(x, 0.0)
        return x

    __call__ = forward

    def forward_cached(self, x):
        x = self._check(np.atleast_2d(x))
        acts = [x]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < n - 1:
                x = np.maximum(x, 0.0)
            acts.append(x)
        return x, acts

    def backward(self, acts, grad_out) -> list[np.ndarray]:
        """Gradients w.r.t. ``params`` given dLoss/dOutput for a cached forward pass."""
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in reversed(range(len(self.weights))):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        return grads

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.layer_dims = self.layer_dims
        new._bind(self.flat_params.copy())
        return new

    def load_params(self, other: "Mlp") -> None:
        self.flat_params[...] = other.flat_params

    def flat(self) -> np.ndarray:
        return self.flat_params.copy()


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads) -> None:
        """In-place bias-corrected Adam update."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        for i, g in enumerate(grads):
            if g.shape != params[i].shape:
                raise ValueError(f"gradient {i} has shape {g.shape}, parameter {params[i].shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.sum(~np.isfinite(g)))
                raise FloatingPointError(f"non-finite gradient in tensor {i} ({bad} entries) at step {self.t + 1}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            _adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=float).reshape(-1), m.reshape(-1),
                         v.reshape(-1), self.lr, self.beta1, self.beta2, self.eps, c1, c2)


@njit(cache=True)
def _adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2):
    for i in range(p.size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_step(params, grads, opt: Adam, lr: float | None = None):
    if lr is not None:
        opt.lr = lr
    opt.step(params, grads)
    return params


class Experience(NamedTuple):
    s: np.ndarray
    a: int
    r: float
    s2: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring; the oldest experience is overwritten first."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def add(self, e: Experience) -> None:
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = e.s, e.a, e.r, e.s2, e.done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator):
        i = self.sample_indices(n, rng)
        return self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i]


@dataclass
class Hyperparams:
    gamma: float = 0.9
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    target_sync_period: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    decay_horizon: int = 1000
    epochs: int = 4
    batch_size: int = 32
    replay_size: int = 5000
    loss: str = "mse"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.loss not in ("mse", "huber"):
            raise ValueError(f"unknown loss {self.loss!r}")


def epsilon_at(step: int, start: float = 1.0, end: float = 0.05, horizon: int = 1000) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if horizon <= 0 or step >= horizon:
        return end
    return start + (end - start) * step / horizon


def ddqn_targets(batch, online: Mlp, target: Mlp, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * Q_target(s', argmax_a Q_online(s', a))``."""
    _, _, r, s2, done = batch
    a_star = np.argmax(online.forward(s2), axis=1)
    q_next = target.forward(s2)[np.arange(len(a_star)), a_star]
    return np.asarray(r, dtype=float) + gamma * (1.0 - np.asarray(done, dtype=float)) * q_next


def td_loss_grad(q_sa: np.ndarray, y: np.ndarray, kind: str = "mse") -> tuple[float, np.ndarray]:
    err = q_sa - y
    n = len(err)
    if kind == "huber":
        a = np.abs(err)
        loss = np.where(a <= 1.0, 0.5 * err ** 2, a - 0.5).mean()
        return float(loss), np.clip(err, -1.0, 1.0) / n
    return float(np.mean(err ** 2)), 2.0 * err / n


class Learner:
    """Online/target network pair with optimizer state and step counter."""

    def __init__(self, online: Mlp, hp: Hyperparams):
        self.online = online
        self.target = online.copy()
        self.hp = hp
        self.opt = Adam(hp.learning_rate, hp.beta1, hp.beta2, hp.eps_adam)
        self.steps = 0


def loss_and_grads(batch, learner: Learner):
    s, a, _, _, _ = batch
    y = ddqn_targets(batch, learner.online, learner.target, learner.hp.gamma)
    q, acts = learner.online.forward_cached(s)
    idx = np.arange(len(a))
    loss, g_sa = td_loss_grad(q[idx, a], y, learner.hp.loss)
    g = np.zeros_like(q)
    g[idx, a] = g_sa
    return loss, learner.online.backward(acts, g)


def train_step(replay: ReplayBuffer, learner: Learner, rng: np.random.Generator, batch=None) -> float | None:
    """One minibatch update; ``None`` while the buffer holds fewer than a batch."""
    hp = learner.hp
    if batch is None:
        if len(replay) < hp.batch_size:
            return None
        batch = replay.sample(hp.batch_size, rng)
    loss, grads = loss_and_grads(batch, learner)
    learner.opt.step([learner.online.flat_params], [np.concatenate([g.ravel() for g in grads])])
    learner.steps += 1
    if learner.steps % hp.target_sync_period == 0:
        learner.target.load_params(learner.online)
    return loss


def save_checkpoint(net: Mlp, path, hp: Hyperparams | None = None) -> None:
    lines = [CKPT_MAGIC, "layer_dims " + " ".join(map(str, net.layer_dims))]
    if hp is not None:
        lines += [f"{k} {v}" for k, v in asdict(hp).items()]
    flat = net.flat()
    lines += [f"n_params {flat.size}", "dtype <f8", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[Mlp, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    header = {}
    if buf.readline().decode("ascii").strip() != CKPT_MAGIC:
        raise ValueError(f"{path}: not a Q-network checkpoint")
    for raw in buf:
        line = raw.decode("ascii").strip()
        if line == "end_header":
            break
        key, _, val = line.partition(" ")
        header[key] = val
    else:
        raise ValueError(f"{path}: truncated header")
    dims = [int(d) for d in header["layer_dims"].split()]
    flat = np.frombuffer(buf.read(), dtype="<f8")
    if flat.size != int(header["n_params"]):
        raise ValueError(f"{path}: expected {header['n_params']} parameters, found {flat.size}")
    net = Mlp.__new__(Mlp)
    net.layer_dims = tuple(dims)
    if flat.size != net.n_params:
        raise ValueError(f"{path}: layer dims need {net.n_params} parameters, found {flat.size}")
    net._bind(flat.astype(float))
    return net, header
