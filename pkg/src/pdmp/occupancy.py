"""Fully-connected occupancy classifier with analytic input gradients.

``f(x) = sigmoid(W_L tanh(... tanh(W_1 u + b_1) ...) + b_L)`` where ``u`` is
``x`` rescaled from the workspace bounds to [-1, 1].

Evaluation runs in zero-padded blocks of a fixed row count.  BLAS picks
different kernels for different matrix heights, so without the padding a
point's output would depend on how many other points shared its batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_VERSION = 1
BLOCK = 256


@dataclass(frozen=True)
class NetArch:
    input_dim: int = 2
    hidden: tuple = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden and min(self.hidden) < 1:
            raise ValueError("hidden widths must be positive")

    def validate(self):
        """Arch usable for training: at least one hidden layer."""
        if not self.hidden:
            raise ValueError("hidden must be a non-empty list of widths")
        return self

    @property
    def widths(self):
        return (self.input_dim, *self.hidden, 1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.1      # final lr = learning_rate * lr_decay (cosine)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size must be >= 1 and learning_rate > 0")


_P_MIN = np.nextafter(0.0, 1.0)
_P_MAX = np.nextafter(1.0, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True, eq=False)
class OccupancyNet:
    """Immutable trained (or freshly initialised) occupancy network.

    ``weights`` are per-layer ``(W, b)`` with ``W`` of shape (out, in).
    ``lo``/``hi`` are the normalisation bounds of the input; ``None`` means
    inputs are used unscaled.
    """

    arch: NetArch
    weights: tuple
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    train_loss: tuple = field(default=(), compare=False)

    def __post_init__(self):
        ws = tuple((np.array(W, dtype=float), np.array(b, dtype=float)) for W, b in self.weights)
        widths = self.arch.widths
        if len(ws) != len(widths) - 1:
            raise ValueError("layer count does not match arch")
        for k, (W, b) in enumerate(ws):
            if W.shape != (widths[k + 1], widths[k]) or b.shape != (widths[k + 1],):
                raise ValueError(f"layer {k} has shapes {W.shape}, {b.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("weights must be finite")
            W.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        if self.lo is not None:
            lo = np.array(self.lo, dtype=float)
            hi = np.array(self.hi, dtype=float)
            scale = 2.0 / (hi - lo)
        else:
            lo = hi = None
            scale = np.ones(self.arch.input_dim)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "_scale", scale)

    @property
    def input_dim(self) -> int:
        return self.arch.input_dim

    def _normalise(self, x):
        if self.lo is None:
            return x
        return (x - self.lo) * self._scale - 1.0

    def _check(self, points):
        x = np.asarray(points, dtype=float)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, self.input_dim)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected points of shape (N, {self.input_dim}), got {x.shape}")
        return x

    def _blocks(self, x):
        x = np.ascontiguousarray(x)
        n = len(x)
        for s in range(0, n, BLOCK):
            chunk = x[s:s + BLOCK]
            if len(chunk) < BLOCK:
                chunk = np.concatenate([chunk, np.zeros((BLOCK - len(chunk), x.shape[1]))])
            yield s, min(n - s, BLOCK), chunk

    def _forward_block(self, u):
        acts = [u]
        h = u
        for W, b in self.weights[:-1]:
            h = np.tanh(h @ W.T + b)
            acts.append(h)
        W, b = self.weights[-1]
        return acts, (h @ W.T + b)[:, 0]

    def logits(self, points) -> np.ndarray:
        x = self._check(points)
        out = np.empty(len(x))
        for s, m, chunk in self._blocks(self._normalise(x)):
            out[s:s + m] = self._forward_block(chunk)[1][:m]
        return out

    def forward_batch(self, points) -> np.ndarray:
        """Occupancy probability for each row of ``points``, kept inside (0, 1)."""
        return np.clip(_sigmoid(self.logits(points)), _P_MIN, _P_MAX)

    def input_grad_batch(self, points) -> np.ndarray:
        """Gradient of the occupancy probability with respect to each input row."""
        x = self._check(points)
        out = np.empty_like(x)
        for s, m, chunk in self._blocks(self._normalise(x)):
            acts, z = self._forward_block(chunk)
            p = _sigmoid(z)
            delta = (p * (1.0 - p))[:, None]          # d p / d z_out, (B, 1)
            W, _ = self.weights[-1]
            g = delta @ W                              # (B, h_last)
            for k in range(len(self.weights) - 2, -1, -1):
                a = acts[k + 1]
                g = (g * (1.0 - a * a)) @ self.weights[k][0]
            out[s:s + m] = g[:m] * self._scale
        return out

    __call__ = forward_batch

    # --- serialisation ---

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "arch": {"input_dim": self.arch.input_dim, "hidden": list(self.arch.hidden),
                     "activation": "tanh", "output": "sigmoid"},
            "normalization": None if self.lo is None else {"min": self.lo.tolist(), "max": self.hi.tolist()},
            "layers": [{"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
                       for W, b in self.weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OccupancyNet":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        arch = NetArch(d["arch"]["input_dim"], tuple(d["arch"]["hidden"]))
        layers = [(np.array(L["weight"], dtype=float).reshape(L["shape"]), L["bias"]) for L in d["layers"]]
        norm = d.get("normalization")
        lo, hi = (None, None) if norm is None else (norm["min"], norm["max"])
        return cls(arch, layers, lo, hi)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "OccupancyNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_net(arch: NetArch, seed: int, lo=None, hi=None) -> OccupancyNet:
    """Zero-mean normal weights with std 1/sqrt(fan_in), zero biases."""
    arch.validate()
    rng = np.random.default_rng(seed)
    widths = arch.widths
    layers = [(rng.normal(0.0, 1.0 / np.sqrt(widths[k]), size=(widths[k + 1], widths[k])),
               np.zeros(widths[k + 1])) for k in range(len(widths) - 1)]
    return OccupancyNet(arch, layers, lo, hi)


def zero_net(arch: NetArch, lo=None, hi=None) -> OccupancyNet:
    widths = arch.widths
    layers = [(np.zeros((widths[k + 1], widths[k])), np.zeros(widths[k + 1])) for k in range(len(widths) - 1)]
    return OccupancyNet(arch, layers, lo, hi)


def forward_batch(net: OccupancyNet, points) -> np.ndarray:
    return net.forward_batch(points)


def input_grad_batch(net: OccupancyNet, points) -> np.ndarray:
    return net.input_grad_batch(points)


def _bce_step(weights, u, y, w):
    """Weighted mean BCE and its parameter gradients for one mini-batch."""
    acts = [u]
    h = u
    for W, b in weights[:-1]:
        h = np.tanh(h @ W.T + b)
        acts.append(h)
    W, b = weights[-1]
    z = (h @ W.T + b)[:, 0]
    # log(1 + exp(-|z|)) form is stable for large |z|
    loss_terms = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    wsum = w.sum()
    loss = float(np.dot(w, loss_terms) / wsum)
    delta = ((_sigmoid(z) - y) * w / wsum)[:, None]
    grads = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        a = acts[k]
        grads[k] = (delta.T @ a, delta.sum(axis=0))
        if k:
            delta = (delta @ weights[k][0]) * (1.0 - a * a)
    return loss, grads


def accuracy(net: OccupancyNet, points, labels, threshold: float = 0.5) -> float:
    pred = net.forward_batch(points) > threshold
    return float(np.mean(pred == np.asarray(labels).astype(bool)))


def train_net(dataset, arch: NetArch | None = None, cfg: TrainConfig | None = None,
              lo=None, hi=None) -> OccupancyNet:
    """Fit an occupancy net by mini-batch Adam on the binary cross-entropy.

    ``lo``/``hi`` set the input normalisation; they default to the bounding
    box of the dataset.  When one class makes up less than 10% of the data
    the loss terms are reweighted by inverse class frequency.
    """
    arch = (arch or NetArch(dataset.points.shape[1])).validate()
    cfg = cfg or TrainConfig()
    x = np.asarray(dataset.points, dtype=float)
    y = np.asarray(dataset.labels, dtype=float)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if x.shape[1] != arch.input_dim:
        raise ValueError("dataset dimension does not match arch.input_dim")
    pos = y.mean()
    if pos == 0.0 or pos == 1.0:
        raise ValueError("dataset contains a single class")
    if lo is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
    net = init_net(arch, cfg.seed, lo, hi)
    u = net._normalise(x)

    if pos < 0.1 or pos > 0.9:
        sample_w = np.where(y > 0.5, 0.5 / pos, 0.5 / (1.0 - pos))
    else:
        sample_w = np.ones_like(y)

    params = [[W.copy(), b.copy()] for W, b in net.weights]
    m = [[np.zeros_like(W), np.zeros_like(b)] for W, b in params]
    v = [[np.zeros_like(W), np.zeros_like(b)] for W, b in params]
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(y)
    steps_per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    t = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = _bce_step(params, u[idx], y[idx], sample_w[idx])
            running += loss * len(idx)
            t += 1
            frac = (t - 1) / max(total - 1, 1)
            lr = cfg.learning_rate * (cfg.lr_decay + (1 - cfg.lr_decay) * 0.5 * (1 + np.cos(np.pi * frac)))
            c1 = 1 - cfg.beta1**t
            c2 = 1 - cfg.beta2**t
            for k, (gW, gb) in enumerate(grads):
                for j, g in enumerate((gW, gb)):
                    m[k][j] = cfg.beta1 * m[k][j] + (1 - cfg.beta1) * g
                    v[k][j] = cfg.beta2 * v[k][j] + (1 - cfg.beta2) * g * g
                    params[k][j] -= lr * (m[k][j] / c1) / (np.sqrt(v[k][j] / c2) + cfg.eps)
        history.append(running / n)
    return OccupancyNet(arch, [tuple(p) for p in params], net.lo, net.hi, tuple(history))
