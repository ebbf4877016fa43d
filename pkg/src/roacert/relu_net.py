"""Feedforward ReLU networks: evaluation, interval bounds, training and JSON I/O.

A network with layers ``[(W_0, b_0), ..., (W_L, b_L)]`` computes::

    z_0 = x
    z_{l+1} = max(W_l z_l + b_l, 0)     l = 0 .. L-1
    f(x) = W_L z_L + b_L
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class NetworkFormatError(ValueError):
    """Raised for malformed network JSON or a broken dimension chain."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ReluNetwork:
    """Immutable ReLU network; the last layer is affine (no activation)."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise NetworkFormatError("need at least one layer and one bias per weight matrix")
        ws, bs = [], []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.atleast_2d(np.asarray(W, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise NetworkFormatError(f"layer {i}: W {W.shape} does not match b {b.shape}")
            if i > 0 and W.shape[1] != ws[-1].shape[0]:
                raise NetworkFormatError(
                    f"layer {i}: expects {W.shape[1]} inputs, previous layer emits {ws[-1].shape[0]}"
                )
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NetworkFormatError(f"layer {i}: non-finite entries")
            ws.append(_frozen(W))
            bs.append(_frozen(b))
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @classmethod
    def from_layers(cls, layers: Sequence[tuple]) -> "ReluNetwork":
        return cls(tuple(W for W, _ in layers), tuple(b for _, b in layers))

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "ReluNetwork":
        """Network of the given layer sizes with all weights and biases zero."""
        return cls(
            tuple(np.zeros((b, a)) for a, b in zip(sizes[:-1], sizes[1:])),
            tuple(np.zeros(b) for b in sizes[1:]),
        )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def hidden_sizes(self) -> list[int]:
        return [W.shape[0] for W in self.weights[:-1]]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [W.shape[0] for W in self.weights]

    def __call__(self, x):
        return forward(self, x)

    def pre_activations(self, x) -> list[np.ndarray]:
        """Affine outputs of every layer (hidden pre-activations, then the output)."""
        h = np.asarray(x, dtype=float)
        out = []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            p = h @ W.T + b
            out.append(p)
            h = np.maximum(p, 0.0)
        return out

    def activation_pattern(self, x) -> list[np.ndarray]:
        return [p > 0 for p in self.pre_activations(x)[:-1]]

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for W, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(W).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReluNetwork":
        try:
            layers = d["layers"]
            return cls.from_layers([(np.array(l["W"], dtype=float), np.array(l["b"], dtype=float)) for l in layers])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, NetworkFormatError):
                raise
            raise NetworkFormatError(f"malformed network description: {exc}") from exc


def forward(net: ReluNetwork, x) -> np.ndarray:
    """Evaluate ``f_NN`` at a single point ``(n,)`` or a batch ``(N, n)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    h = x
    last = net.n_layers - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class ActivationBounds:
    """Per-layer bounds on affine outputs over an input box.

    ``lower[l]``/``upper[l]`` bound ``W_l z_l + b_l``; the final entry is the
    network output, the others are ReLU pre-activations.
    """

    lower: tuple
    upper: tuple
    box_lo: np.ndarray
    box_hi: np.ndarray

    @property
    def hidden_lower(self) -> tuple:
        return self.lower[:-1]

    @property
    def hidden_upper(self) -> tuple:
        return self.upper[:-1]


def interval_bounds(net: ReluNetwork, lo, hi) -> ActivationBounds:
    """Interval bound propagation over the box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (net.input_dim,) or hi.shape != (net.input_dim,):
        raise ValueError("box dimension does not match network input")
    if np.any(lo > hi):
        raise ValueError("empty box: lo > hi")
    lows, highs = [], []
    l, h = lo, hi
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        Wp, Wn = np.maximum(W, 0), np.minimum(W, 0)
        pl = Wp @ l + Wn @ h + b
        ph = Wp @ h + Wn @ l + b
        lows.append(_frozen(pl))
        highs.append(_frozen(ph))
        l, h = np.maximum(pl, 0), np.maximum(ph, 0)
    return ActivationBounds(tuple(lows), tuple(highs), _frozen(lo), _frozen(hi))


class NeuronStatus(IntEnum):
    INACTIVE = 0
    ACTIVE = 1
    UNSTABLE = 2


def neuron_status(bounds: ActivationBounds) -> list[np.ndarray]:
    """Classify each hidden neuron from its pre-activation bounds."""
    out = []
    for l, h in zip(bounds.hidden_lower, bounds.hidden_upper):
        s = np.full(l.shape, NeuronStatus.UNSTABLE, dtype=int)
        s[h <= 0] = NeuronStatus.INACTIVE
        s[l >= 0] = NeuronStatus.ACTIVE
        out.append(s)
    return out


def count_status(statuses: list[np.ndarray]) -> dict:
    flat = np.concatenate(statuses) if statuses else np.zeros(0, dtype=int)
    return {s.name: int(np.sum(flat == s)) for s in NeuronStatus}


def lipschitz_upper(net: ReluNetwork, A=None) -> float:
    """Upper bound on the l-inf Lipschitz constant of ``x -> A x + f_NN(x)``."""
    prod = 1.0
    for W in net.weights:
        prod *= np.abs(W).sum(axis=1).max(initial=0.0)
    a = 0.0 if A is None else float(np.abs(np.asarray(A, dtype=float)).sum(axis=1).max(initial=0.0))
    return a + prod


def anchor_at_origin(net: ReluNetwork) -> ReluNetwork:
    """Shift the output bias so the network maps 0 to 0."""
    f0 = forward(net, np.zeros(net.input_dim))
    biases = list(net.biases)
    biases[-1] = biases[-1] - f0
    return ReluNetwork(net.weights, tuple(biases))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 3e-3
    l1: float = 1e-4
    batch_size: int = 256
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # optional worst-case refinement: mean (|r| / r_max)^p after the MAE stage
    refine_epochs: int = 0
    refine_power: float = 8.0
    refine_learning_rate: float = 3e-3
    refine_batch_size: int = 1024

    def __post_init__(self):
        if self.epochs < 0 or self.refine_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.l1 < 0:
            raise ValueError("invalid training hyperparameters")
        if self.refine_power < 1:
            raise ValueError("refine_power must be >= 1")


@dataclass
class TrainResult:
    network: ReluNetwork
    history: list = field(default_factory=list)  # training MAE per epoch
    refine_history: list = field(default_factory=list)  # training max residual per refinement epoch


def _he_init(sizes, rng):
    Ws = [rng.normal(size=(b, a)) * np.sqrt(2.0 / a) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(b) for b in sizes[1:]]
    return Ws, bs


def train(X, Y, hidden: Sequence[int], config: TrainConfig | None = None) -> TrainResult:
    """Fit a ReLU network by Adam on mean absolute error plus an l1 weight penalty.

    The learning rate follows a cosine decay over ``config.epochs``. With
    ``refine_epochs > 0`` a second stage minimizes a high power of the
    residual, which trades a little mean error for a smaller worst case.
    Results are deterministic for a given seed.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y) or len(X) == 0:
        raise ValueError("X and Y must be 2-D arrays with the same, nonzero number of rows")
    sizes = [X.shape[1], *hidden, Y.shape[1]]
    rng = np.random.default_rng(config.seed)
    Ws, bs = _he_init(sizes, rng)
    history = _adam(Ws, bs, X, Y, config, rng, config.epochs, config.learning_rate, config.batch_size, None, config.l1)
    refine = []
    if config.refine_epochs:
        scale = max(float(np.max(np.abs(_predict(Ws, bs, X) - Y))), 1e-12)
        refine = _adam(Ws, bs, X, Y, config, rng, config.refine_epochs, config.refine_learning_rate,
                       config.refine_batch_size, (config.refine_power, scale), 0.0)
    return TrainResult(ReluNetwork(tuple(Ws), tuple(bs)), history, refine)


def _adam(Ws, bs, X, Y, config, rng, epochs, lr0, batch, power, l1):
    """Adam with cosine decay; MAE loss, or mean (|r|/scale)^p when ``power`` is given.

    In power mode the returned weights are the epoch snapshot with the
    smallest training max residual.
    """
    params = Ws + bs
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    n_layers = len(Ws)
    N = len(X)
    step = 0
    history = []
    best = (np.inf, None)
    b1, b2 = config.beta1, config.beta2
    for epoch in range(epochs):
        lr = lr0 * 0.5 * (1 + np.cos(np.pi * epoch / epochs)) + 1e-3 * lr0
        perm = rng.permutation(N)
        for start in range(0, N, batch):
            idx = perm[start : start + batch]
            acts, pres = [X[idx]], []
            h = X[idx]
            for i in range(n_layers):
                p = h @ Ws[i].T + bs[i]
                pres.append(p)
                h = np.maximum(p, 0.0) if i < n_layers - 1 else p
                acts.append(h)
            r = acts[-1] - Y[idx]
            if power is None:
                g = np.sign(r) / r.size
            else:
                g = np.sign(r) * np.abs(r / power[1]) ** (power[0] - 1) / r.size
            grads_W, grads_b = [None] * n_layers, [None] * n_layers
            for i in reversed(range(n_layers)):
                grads_W[i] = g.T @ acts[i] + l1 * np.sign(Ws[i])
                grads_b[i] = g.sum(axis=0)
                if i > 0:
                    g = (g @ Ws[i]) * (pres[i - 1] > 0)
            step += 1
            for j, gr in enumerate(grads_W + grads_b):
                m[j] = b1 * m[j] + (1 - b1) * gr
                v[j] = b2 * v[j] + (1 - b2) * gr * gr
                mh = m[j] / (1 - b1**step)
                vh = v[j] / (1 - b2**step)
                params[j] -= lr * mh / (np.sqrt(vh) + config.eps)
        err = _predict(Ws, bs, X) - Y
        mae = float(np.mean(np.abs(err)))
        if not np.isfinite(mae):
            raise TrainingDivergedError(epoch, mae)
        if power is None:
            history.append(mae)
        else:
            worst = float(np.max(np.abs(err)))
            history.append(worst)
            if worst < best[0]:
                best = (worst, [p.copy() for p in params])
        if epoch % 100 == 0:
            logger.debug("epoch %d  mae %.6g", epoch, mae)
    if power is not None and best[1] is not None:
        for p, q in zip(params, best[1]):
            p[...] = q
    return history


def _predict(Ws, bs, X):
    h = X
    for i, (W, b) in enumerate(zip(Ws, bs)):
        h = h @ W.T + b
        if i < len(Ws) - 1:
            h = np.maximum(h, 0.0)
    return h


# ---------------------------------------------------------------------------
# I/O


def save(net: ReluNetwork, path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=1) + "\n")


def load(path) -> ReluNetwork:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: invalid JSON: {exc}") from exc
    return ReluNetwork.from_dict(d)


def write_dataset_csv(path, X, Y) -> None:
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i + 1}" for i in range(X.shape[1])] + [f"y_{i + 1}" for i in range(Y.shape[1])])
        for xr, yr in zip(X, Y):
            w.writerow([repr(float(v)) for v in (*xr, *yr)])


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    header = rows[0]
    xi = [i for i, h in enumerate(header) if h.startswith("x_")]
    yi = [i for i, h in enumerate(header) if h.startswith("y_")]
    if not xi or not yi:
        raise ValueError(f"{path}: header must name x_1..x_n and y_1..y_n columns")
    data = np.array(rows[1:], dtype=float)
    return data[:, xi], data[:, yi]
