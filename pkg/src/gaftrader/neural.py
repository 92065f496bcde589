"""Minimal dense/convolutional network core with explicit backpropagation.

No autodiff graph: each layer implements its own forward and backward pass,
and every backward pass is held to a central finite-difference check in the
test suite. Everything is double precision; the networks here are small
enough that verifiability beats speed.

Conventions: batches are leading, images are channels-last (N, H, W, C),
dense activations are (N, D). Layer parameters live in a dict per layer
({"W": ..., "b": ...}), and a network's parameters/gradients are aligned
lists of such dicts.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """Input shape incompatible with a layer."""


class NumericsError(RuntimeError):
    """Non-finite value where training cannot continue."""


def he_normal(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Dense:
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            weight = np.zeros((in_features, out_features))
        else:
            weight = he_normal(rng, in_features, (in_features, out_features))
        self.params = {"W": weight, "b": np.zeros(out_features)}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"dense: expected (N, {self.in_features}), got {x.shape}"
            )
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, dout, cache):
        x = cache
        grads = {"W": x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T, grads

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}


class Relu:
    kind = "relu"
    params: dict = {}

    def forward(self, x):
        return np.maximum(x, 0.0), x

    def backward(self, dout, cache):
        return dout * (cache > 0.0), {}

    def spec(self):
        return {"kind": self.kind}


class Flatten:
    kind = "flatten"
    params: dict = {}

    def forward(self, x):
        if x.ndim < 2:
            raise ShapeError(f"flatten: expected batched input, got {x.shape}")
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), {}

    def spec(self):
        return {"kind": self.kind}


class MaxPool2x2:
    kind = "maxpool2x2"
    params: dict = {}

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2x2: expected (N, H, W, C), got {x.shape}")
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2: H and W must be even, got {x.shape}")
        tiles = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        tiles = tiles.reshape(n, h // 2, w // 2, c, 4)
        idx = tiles.argmax(axis=-1)
        y = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, dout, cache):
        idx, (n, h, w, c) = cache
        dtiles = np.zeros((n, h // 2, w // 2, c, 4))
        np.put_along_axis(dtiles, idx[..., None], dout[..., None], axis=-1)
        dtiles = dtiles.reshape(n, h // 2, w // 2, c, 2, 2)
        dx = dtiles.transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return dx, {}

    def spec(self):
        return {"kind": self.kind}


class Conv2d:
    """Valid (no padding) stride-1 2-D convolution via im2col."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator | None = None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = kernel_size * kernel_size * in_channels
        if rng is None:
            weight = np.zeros((kernel_size, kernel_size, in_channels, out_channels))
        else:
            weight = he_normal(rng, fan_in,
                               (kernel_size, kernel_size, in_channels, out_channels))
        self.params = {"W": weight, "b": np.zeros(out_channels)}

    def _check(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"conv2d: expected (N, H, W, {self.in_channels}), got {x.shape}"
            )
        k = self.kernel_size
        if x.shape[1] < k or x.shape[2] < k:
            raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {k}")

    def _im2col(self, x):
        n, h, w, c = x.shape
        k = self.kernel_size
        oh, ow = h - k + 1, w - k + 1
        cols = np.empty((n, oh, ow, k * k * c))
        for i in range(k):
            for j in range(k):
                cols[..., (i * k + j) * c : (i * k + j + 1) * c] = x[:, i : i + oh, j : j + ow, :]
        return cols

    def forward(self, x):
        self._check(x)
        n, h, w, _ = x.shape
        k = self.kernel_size
        oh, ow = h - k + 1, w - k + 1
        cols = self._im2col(x)
        wmat = self.params["W"].reshape(-1, self.out_channels)
        y = cols.reshape(-1, wmat.shape[0]) @ wmat + self.params["b"]
        return y.reshape(n, oh, ow, self.out_channels), (cols, x.shape)

    def backward(self, dout, cache):
        cols, x_shape = cache
        n, h, w, c = x_shape
        k = self.kernel_size
        oh, ow = h - k + 1, w - k + 1
        dflat = dout.reshape(-1, self.out_channels)
        wmat = self.params["W"].reshape(-1, self.out_channels)
        grads = {
            "W": (cols.reshape(-1, wmat.shape[0]).T @ dflat).reshape(self.params["W"].shape),
            "b": dflat.sum(axis=0),
        }
        dcols = (dflat @ wmat.T).reshape(n, oh, ow, k * k * c)
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                dx[:, i : i + oh, j : j + ow, :] += dcols[..., (i * k + j) * c : (i * k + j + 1) * c]
        return dx, grads

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": self.kernel_size}


class Softmax:
    kind = "softmax"
    params: dict = {}

    def forward(self, x):
        if x.ndim != 2:
            raise ShapeError(f"softmax: expected (N, K), got {x.shape}")
        y = softmax(x)
        return y, y

    def backward(self, dout, cache):
        y = cache
        dx = y * (dout - np.sum(dout * y, axis=1, keepdims=True))
        return dx, {}

    def spec(self):
        return {"kind": self.kind}


_LAYER_BUILDERS = {
    "dense": lambda s, rng: Dense(s["in_features"], s["out_features"], rng),
    "relu": lambda s, rng: Relu(),
    "flatten": lambda s, rng: Flatten(),
    "maxpool2x2": lambda s, rng: MaxPool2x2(),
    "conv2d": lambda s, rng: Conv2d(s["in_channels"], s["out_channels"], s["kernel_size"], rng),
    "softmax": lambda s, rng: Softmax(),
}


def layer_from_spec(spec: dict, rng: np.random.Generator | None = None):
    kind = spec.get("kind")
    if kind not in _LAYER_BUILDERS:
        raise ValueError(f"unknown layer kind {kind!r}")
    return _LAYER_BUILDERS[kind](spec, rng)


class Network:
    """An ordered layer stack with combined forward/backward passes."""

    def __init__(self, layers: list):
        self.layers = list(layers)

    def forward(self, x: np.ndarray):
        caches = []
        out = x
        for i, layer in enumerate(self.layers):
            try:
                out, cache = layer.forward(out)
            except ShapeError as exc:
                raise ShapeError(f"layer {i}: {exc}") from exc
            caches.append(cache)
        caches.append(out.shape)
        return out, caches

    def backward(self, caches: list, dout: np.ndarray):
        out_shape = caches[-1]
        if dout.shape != out_shape:
            raise ShapeError(
                f"output gradient shape {dout.shape} does not match the cached "
                f"forward output {out_shape}; stale cache?"
            )
        grads: list[dict] = [None] * len(self.layers)
        d = dout
        for i in range(len(self.layers) - 1, -1, -1):
            d, g = self.layers[i].backward(d, caches[i])
            grads[i] = g
        return d, grads

    def params(self) -> list[dict]:
        return [layer.params for layer in self.layers]

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def state(self) -> list[dict]:
        return [{k: v.copy() for k, v in p.items()} for p in self.params()]

    def load_state(self, state: list[dict]) -> None:
        if len(state) != len(self.layers):
            raise ShapeError("state has a different number of layers")
        for layer, saved in zip(self.layers, state):
            if set(layer.params) != set(saved):
                raise ShapeError("state parameter names do not match")
            for k, v in saved.items():
                if layer.params[k].shape != v.shape:
                    raise ShapeError(f"parameter {k} shape mismatch")
                layer.params[k] = v.copy()

    def n_parameters(self) -> int:
        return sum(v.size for p in self.params() for v in p.values())


def network_from_specs(specs: list[dict], rng: np.random.Generator | None = None) -> Network:
    return Network([layer_from_spec(s, rng) for s in specs])


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, target_class: int) -> tuple[float, np.ndarray]:
    """Stable cross-entropy of 1-D logits against an integer class.

    Returns the loss and its exact gradient softmax(logits) - one_hot(target).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError(f"expected 1-D logits, got shape {logits.shape}")
    if not 0 <= target_class < logits.shape[0]:
        raise ValueError(f"target class {target_class} out of range for {logits.shape[0]} logits")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[target_class] -= 1.0
    return float(-logp[target_class]), grad


def softmax_cross_entropy_batch(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch plus the gradient of that mean."""
    if logits.ndim != 2:
        raise ShapeError(f"expected (N, K) logits, got shape {logits.shape}")
    targets = np.asarray(targets)
    n = logits.shape[0]
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise ValueError("target class out of range")
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), targets].mean())
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a list of parameter dicts (updated in place)."""

    def __init__(self, params: list[dict], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, grads: list[dict]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError("gradient list does not match parameter list")
        for p, g in zip(self.params, grads):
            for k in p:
                if g[k].shape != p[k].shape:
                    raise ShapeError(f"gradient shape {g[k].shape} != parameter shape {p[k].shape}")
                if not np.all(np.isfinite(g[k])):
                    raise NumericsError(f"non-finite gradient for parameter {k!r}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for m, v, p, g in zip(self.m, self.v, self.params, grads):
            for k in p:
                m[k] = b1 * m[k] + (1.0 - b1) * g[k]
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] ** 2
                m_hat = m[k] / (1.0 - b1**t)
                v_hat = v[k] / (1.0 - b2**t)
                p[k] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def global_grad_norm(grads: list[dict]) -> float:
    total = 0.0
    for g in grads:
        for v in g.values():
            total += float(np.sum(v * v))
    return float(np.sqrt(total))


def clip_grads_(grads: list[dict], max_norm: float) -> float:
    """Scale gradients in place to the given global norm; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            for k in g:
                g[k] = g[k] * scale
    return norm


# ---------------------------------------------------------------------------
# Checkpoints: npz archive with an embedded JSON header, exact round trip
# ---------------------------------------------------------------------------

def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    payload = {f"arr_{k}": np.ascontiguousarray(v) for k, v in arrays.items()}
    np.savez(path, __meta__=json.dumps(meta, sort_keys=True), **payload)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        arrays = {k[4:]: archive[k] for k in archive.files if k.startswith("arr_")}
    return arrays, meta


def save_network(path: str | Path, network: Network, extra_meta: dict | None = None) -> None:
    arrays = {}
    for i, p in enumerate(network.params()):
        for k, v in p.items():
            arrays[f"layer{i}_{k}"] = v
    meta = {"specs": network.specs(), "extra": extra_meta or {}}
    save_arrays(path, arrays, meta)


def load_network(path: str | Path) -> tuple[Network, dict]:
    arrays, meta = load_arrays(path)
    net = network_from_specs(meta["specs"])
    state = []
    for i, layer in enumerate(net.layers):
        state.append({k: arrays[f"layer{i}_{k}"] for k in layer.params})
    net.load_state(state)
    return net, meta.get("extra", {})
