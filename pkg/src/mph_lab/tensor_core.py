"""Small dense-network engine: tanh MLPs with hand-written backward passes and Adam.

Tensors are plain float64 numpy arrays. Every network in the package is built
from :class:`MLPParams`, so every gradient can be checked against finite
differences.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CHECKPOINT_VERSION = 1
HIDDEN = (64, 64)


class DimensionError(ValueError):
    """Raised when array shapes do not chain."""


def as_tensor(x, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected {ndim}-d array, got shape {arr.shape}")
    return arr


@dataclass
class MLPParams:
    """Weights ``[in x out]`` and biases ``[out]`` per layer.

    Hidden layers use tanh, the output layer is linear.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("weights and biases must be non-empty and paired")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {i} input {w.shape[0]} does not chain")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "MLPParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MLPParams":
        return MLPParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])


# Gradients have exactly the same layout as parameters.
MLPGrads = MLPParams


def init_params(layer_dims: Sequence[int], seed) -> MLPParams:
    """Fan-in uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise DimensionError(f"invalid layer dims {dims}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def mlp_dims(in_dim: int, out_dim: int, hidden: Sequence[int] = HIDDEN) -> list[int]:
    return [in_dim, *hidden, out_dim]


def _check_input(params: MLPParams, x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(f"input shape {x.shape} does not match in_dim {params.in_dim}")
    return x


def _forward_cache(params: MLPParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def mlp_forward(params: MLPParams, x) -> np.ndarray:
    """Pre-activation output of the final layer for a ``[batch x in]`` input."""
    x = _check_input(params, x)
    return _forward_cache(params, x)[-1]


def mlp_backward(params: MLPParams, x, upstream) -> tuple[MLPGrads, np.ndarray]:
    """Gradients of ``sum(upstream * mlp_forward(params, x))``.

    Returns parameter gradients and the gradient with respect to ``x``.
    """
    x = _check_input(params, x)
    upstream = as_tensor(upstream)
    if upstream.shape != (x.shape[0], params.out_dim):
        raise DimensionError(f"upstream shape {upstream.shape} != {(x.shape[0], params.out_dim)}")
    acts = _forward_cache(params, x)
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    g = upstream
    for i in reversed(range(n)):
        if i != n - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return MLPParams(gw, gb), g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params, lr: float) -> "AdamState":
        arrays = _arrays(params)
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], float(lr))


def _arrays(p) -> list[np.ndarray]:
    return p.arrays() if isinstance(p, MLPParams) else list(p)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update.

    ``params``/``grads`` are either :class:`MLPParams` or lists of arrays; the
    result has the same type as ``params``. Inputs are not modified.
    """
    p_arr, g_arr = _arrays(params), _arrays(grads)
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m):
        raise DimensionError("params, grads and Adam moments differ in length")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, state.lr, step, b1, b2, state.eps)
    if isinstance(params, MLPParams):
        return MLPParams.from_arrays(new_p), new_state
    return new_p, new_state


def all_finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in _arrays(arrays))


# -- checkpoints ------------------------------------------------------------

def save_arrays(path_or_file, groups: dict[str, Sequence[np.ndarray]]) -> None:
    """Write named groups of arrays to an ``.npz`` archive (bit-exact)."""
    payload = {"__version__": np.array(CHECKPOINT_VERSION)}
    for name, arrays in groups.items():
        if "/" in name:
            raise ValueError(f"group name may not contain '/': {name}")
        for i, a in enumerate(arrays):
            payload[f"{name}/{i}"] = np.asarray(a, dtype=np.float64)
    np.savez(path_or_file, **payload)


def load_arrays(path_or_file) -> dict[str, list[np.ndarray]]:
    with np.load(path_or_file) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        groups: dict[str, dict[int, np.ndarray]] = {}
        for key in data.files:
            if key == "__version__":
                continue
            name, idx = key.rsplit("/", 1)
            groups.setdefault(name, {})[int(idx)] = data[key]
    return {k: [v[i] for i in sorted(v)] for k, v in groups.items()}


def params_to_bytes(params: MLPParams) -> bytes:
    buf = io.BytesIO()
    save_arrays(buf, {"mlp": params.arrays()})
    return buf.getvalue()


def params_from_bytes(blob: bytes) -> MLPParams:
    return MLPParams.from_arrays(load_arrays(io.BytesIO(blob))["mlp"])
