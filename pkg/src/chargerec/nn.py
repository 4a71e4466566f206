"""Dense networks in plain numpy: forward, backward, optimizers, checkpoints.

Weights are stored ``(fan_in, fan_out)`` so a batch ``x`` of shape
``(B, fan_in)`` maps to ``x @ W + b``. Every hidden layer applies a leaky
rectifier; the output layer is linear. All arithmetic is float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import CheckpointError, ShapeError

CHECKPOINT_VERSION = 1
LEAKY_SLOPE = 0.01


@dataclass
class MLPParams:
    layer_dims: list
    weights: list
    biases: list
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        dims = list(self.layer_dims)
        if len(dims) < 2:
            raise ShapeError("an MLP needs at least an input and an output width")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("one weight matrix and bias per layer expected")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i}: got W{w.shape} b{b.shape} for dims {dims[i]}->{dims[i + 1]}")

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "MLPParams":
        return MLPParams(list(self.layer_dims), [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases], self.slope)

    def copy(self) -> "MLPParams":
        return MLPParams(list(self.layer_dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.slope)

    def arrays(self):
        yield from self.weights
        yield from self.biases

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other: "MLPParams") -> bool:
        return (
            list(self.layer_dims) == list(other.layer_dims)
            and self.slope == other.slope
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )


@dataclass
class Gradients:
    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, params: MLPParams) -> "Gradients":
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])

    def arrays(self):
        yield from self.weights
        yield from self.biases

    def add(self, other: "Gradients") -> "Gradients":
        return Gradients([a + b for a, b in zip(self.weights, other.weights)], [a + b for a, b in zip(self.biases, other.biases)])


@dataclass
class Cache:
    params_id: int
    inputs: list  # input to each layer
    pre: list  # pre-activations of each layer
    squeeze: bool = False


def init_mlp(layer_dims, rng: np.random.Generator, slope: float = LEAKY_SLOPE, zero: bool = False) -> MLPParams:
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero."""
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        if zero:
            weights.append(np.zeros((a, b)))
        else:
            bound = 1.0 / math.sqrt(a)
            weights.append(rng.uniform(-bound, bound, size=(a, b)))
        biases.append(np.zeros(b))
    return MLPParams(dims, weights, biases, slope)


def _matmul(x, w, rowwise):
    # einsum reduces each row in a fixed order, so a row's result does not depend on
    # its position in the batch; BLAS matmul is faster but can differ in the last bit.
    return np.einsum("ij,jk->ik", x, w) if rowwise else x @ w


def _leaky(z, slope):
    if 0.0 <= slope <= 1.0:
        return np.maximum(z, slope * z)
    return np.where(z > 0, z, slope * z)


def forward(params: MLPParams, x, rowwise: bool = False):
    """Run the network. Returns ``(output, cache)``; a 1-D input yields a 1-D output.

    Arithmetic happens in the dtype of the weights.
    """
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.n_in:
        raise ShapeError(f"input has shape {x.shape}, network expects (*, {params.n_in})")
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = _matmul(h, w, rowwise)
        z += b
        pre.append(z)
        h = z if i == last else _leaky(z, params.slope)
    cache = Cache(id(params), inputs, pre, squeeze)
    return (h[0] if squeeze else h), cache


def predict(params: MLPParams, x, rowwise: bool = False) -> np.ndarray:
    return forward(params, x, rowwise)[0]


def backward(params: MLPParams, cache: Cache, grad_out):
    """Reverse-mode gradients. Returns ``(Gradients, grad_input)``."""
    if len(cache.inputs) != len(params.weights):
        raise ShapeError("cache does not match this network's depth")
    g = np.asarray(grad_out, dtype=params.dtype)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"output gradient has shape {g.shape}, expected {cache.pre[-1].shape}")
    one, slope = params.dtype.type(1.0), params.dtype.type(params.slope)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if cache.inputs[i].shape[1] != params.weights[i].shape[0]:
            raise ShapeError("stale cache: layer widths changed since forward")
        if i != last:
            g = g * np.where(cache.pre[i] > 0, one, slope)
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    dx = g[0] if cache.squeeze else g
    return Gradients(gw, gb), dx


def sgd_step(params: MLPParams, grads: Gradients, lr: float) -> MLPParams:
    """Plain gradient descent: ``params - lr * grads`` (returns a new object)."""
    return MLPParams(
        list(params.layer_dims),
        [w - lr * g for w, g in zip(params.weights, grads.weights)],
        [b - lr * g for b, g in zip(params.biases, grads.biases)],
        params.slope,
    )


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, nets: dict, grads: dict) -> None:
        for name, g in grads.items():
            nets[name] = sgd_step(nets[name], g, self.lr)


class Adam:
    """Adam over a dict of named networks; updates them in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, clip: Optional[float] = 10.0):
        self.lr, self.beta1, self.beta2, self.eps, self.clip = lr, beta1, beta2, eps, clip
        self.t = 0
        self._m: dict = {}
        self._v: dict = {}

    def step(self, nets: dict, grads: dict) -> None:
        self.t += 1
        if self.clip is not None:
            norm = math.sqrt(sum(float((a * a).sum()) for g in grads.values() for a in g.arrays()))
            scale = self.clip / norm if norm > self.clip else 1.0
        else:
            scale = 1.0
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            params = nets[name]
            m = self._m.setdefault(name, [np.zeros_like(a) for a in params.arrays()])
            v = self._v.setdefault(name, [np.zeros_like(a) for a in params.arrays()])
            for i, (p, ga) in enumerate(zip(params.arrays(), g.arrays())):
                ga = ga * scale
                m[i] *= self.beta1
                m[i] += (1.0 - self.beta1) * ga
                v[i] *= self.beta2
                v[i] += (1.0 - self.beta2) * ga * ga
                p -= self.lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + self.eps)


def dueling_combine(value, advantages) -> np.ndarray:
    """Q_a = V + A_a - mean(A).

    The mean is an exactly rounded sum, so it does not depend on the order of
    the advantages and permuting actions permutes Q exactly.
    """
    a = np.asarray(advantages, dtype=np.float64)
    if a.size == 0:
        raise ShapeError("dueling_combine needs at least one advantage")
    mean = math.fsum(a.tolist()) / a.size
    return float(value) + a - mean


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model_kind: str, nets: dict, hyperparameters: Optional[dict] = None) -> None:
    names = sorted(nets)
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_kind": model_kind,
        "networks": names,
        "layer_dims": {n: list(nets[n].layer_dims) for n in names},
        "slopes": {n: nets[n].slope for n in names},
        "weights": {n: [w.tolist() for w in nets[n].weights] for n in names},
        "biases": {n: [b.tolist() for b in nets[n].biases] for n in names},
        "hyperparameters": hyperparameters or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Returns ``(model_kind, nets, hyperparameters)``."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {p}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint {p} is corrupt or truncated: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {p}: unsupported format_version {doc.get('format_version') if isinstance(doc, dict) else None}")
    try:
        nets = {}
        for n in doc["networks"]:
            nets[n] = MLPParams(
                [int(d) for d in doc["layer_dims"][n]],
                [np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in zip(doc["weights"][n], doc["layer_dims"][n][:-1], doc["layer_dims"][n][1:])],
                [np.array(b, dtype=np.float64) for b in doc["biases"][n]],
                float(doc["slopes"][n]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {p} is malformed: {exc!r}") from exc
    return doc["model_kind"], nets, doc.get("hyperparameters", {})


# -- finite-difference verification --------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: dict = field(default_factory=dict)
    n_configs: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a|| + ||n||, 1e-12) over a whole parameter tensor."""
    num = float(np.linalg.norm(analytic - numeric))
    den = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), 1e-12)
    return num / den


def check_gradients(params: MLPParams, x: np.ndarray, proj: np.ndarray, h: float = 1e-5, backward_fn: Callable = backward) -> dict:
    """Compare ``backward`` against central differences of the scalar ``sum(proj * f(x))``.

    Returns the relative error for every weight, bias and the input.
    """
    y, cache = forward(params, x)
    grads, dx = backward_fn(params, cache, proj)

    def loss(p, xx):
        return float((predict(p, xx) * proj).sum())

    errors = {}
    for kind, tensors, got in (("W", params.weights, grads.weights), ("b", params.biases, grads.biases)):
        for i, (t, g) in enumerate(zip(tensors, got)):
            numeric = np.zeros_like(t)
            it = np.nditer(t, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = t[idx]
                t[idx] = orig + h
                up = loss(params, x)
                t[idx] = orig - h
                down = loss(params, x)
                t[idx] = orig
                numeric[idx] = (up - down) / (2 * h)
            errors[f"{kind}{i}"] = relative_error(g, numeric)
    numeric = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = loss(params, x)
        x[idx] = orig - h
        down = loss(params, x)
        x[idx] = orig
        numeric[idx] = (up - down) / (2 * h)
    errors["input"] = relative_error(dx, numeric)
    return errors


def gradcheck_suite(n_configs: int = 100, seed: int = 0, h: float = 1e-5, backward_fn: Callable = backward) -> GradCheckResult:
    """Random nets of depth 1-4 and widths 1-32, each checked against central differences."""
    rng = np.random.default_rng(seed)
    result = GradCheckResult(0.0, {}, n_configs)
    for c in range(n_configs):
        depth = int(rng.integers(1, 5))
        dims = [int(d) for d in rng.integers(1, 33, size=depth + 1)]
        params = init_mlp(dims, rng)
        for b in params.biases:
            b[:] = rng.normal(0.0, 0.1, size=b.shape)
        batch = int(rng.integers(1, 5))
        x = rng.normal(size=(batch, dims[0]))
        proj = rng.normal(size=(batch, dims[-1]))
        for name, err in check_gradients(params, x, proj, h, backward_fn).items():
            if err > result.max_rel_error:
                result.max_rel_error = err
                result.worst = {"config": c, "dims": dims, "batch": batch, "tensor": name, "rel_error": err}
    return result
