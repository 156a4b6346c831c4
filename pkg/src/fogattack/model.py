"""A small numpy CNN with hand-written reverse-mode gradients.

Images are ``(H, W, C)`` and batches ``(N, H, W, C)``. Forward passes
return a cache that the caller hands back to ``backward``; a model is
never mutated by inference, so a frozen model can be shared freely.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PROB_FLOOR = 1e-12


def _as_f32(a: np.ndarray) -> np.ndarray:
    # parameters hold float32-representable values so checkpoints round-trip
    return a.astype(np.float32).astype(np.float64)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, grad):
        """Return ``(grad_input, {param_name: grad})``."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}

    def output_shape(self, shape):
        return shape


class Conv3x3(Layer):
    """3x3 convolution with zero padding 1 and stride 1."""

    kind = "conv3x3"

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.params = {
            "weight": np.zeros((3, 3, in_channels, out_channels)),
            "bias": np.zeros(out_channels),
        }

    @property
    def fan_in(self):
        return 9 * self.in_channels

    def describe(self):
        return {"kind": self.kind, "in": self.in_channels, "out": self.out_channels}

    def output_shape(self, shape):
        h, w, _ = shape
        return (h, w, self.out_channels)

    def forward(self, x):
        n, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # (N, H, W, C, 3, 3) -> (N*H*W, 3*3*C) matching weight layout
        cols = sliding_window_view(xp, (3, 3), axis=(1, 2))
        cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, 9 * c)
        out = cols @ self.params["weight"].reshape(9 * c, -1) + self.params["bias"]
        return out.reshape(n, h, w, -1), (cols, x.shape)

    def backward(self, cache, grad):
        cols, (n, h, w, c) = cache
        g = grad.reshape(n * h * w, -1)
        weight = self.params["weight"]
        grads = {
            "weight": (cols.T @ g).reshape(weight.shape),
            "bias": g.sum(axis=0),
        }
        dcols = (g @ weight.reshape(9 * c, -1).T).reshape(n, h, w, 3, 3, c)
        dxp = np.zeros((n, h + 2, w + 2, c))
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        return dxp[:, 1:-1, 1:-1, :], grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, grad):
        return np.where(cache, grad, 0.0), {}


class AvgPool2(Layer):
    kind = "avgpool2"

    def output_shape(self, shape):
        h, w, c = shape
        if h % 2 or w % 2:
            raise ValueError(f"2x2 pooling needs even spatial dims, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x):
        n, h, w, c = x.shape
        return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4)), None

    def backward(self, cache, grad):
        up = np.repeat(np.repeat(grad, 2, axis=1), 2, axis=2)
        return up * 0.25, {}


class GlobalAvgPool(Layer):
    kind = "gap"

    def output_shape(self, shape):
        return (shape[-1],)

    def forward(self, x):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, cache, grad):
        n, h, w, c = cache
        return np.broadcast_to(grad[:, None, None, :] / (h * w), cache).copy(), {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad):
        return grad.reshape(cache), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((in_features, out_features)),
            "bias": np.zeros(out_features),
        }

    @property
    def fan_in(self):
        return self.in_features

    def describe(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}

    def output_shape(self, shape):
        return (self.out_features,)

    def forward(self, x):
        return x @ self.params["weight"] + self.params["bias"], x

    def backward(self, cache, grad):
        grads = {"weight": cache.T @ grad, "bias": grad.sum(axis=0)}
        return grad @ self.params["weight"].T, grads


LAYER_KINDS = {
    cls.kind: cls for cls in (Conv3x3, ReLU, AvgPool2, GlobalAvgPool, Flatten, Dense)
}


def layer_from_description(desc: dict) -> Layer:
    try:
        cls = LAYER_KINDS[desc["kind"]]
    except KeyError:
        raise ValueError(f"unknown layer kind {desc.get('kind')!r}") from None
    if cls in (Conv3x3, Dense):
        return cls(int(desc["in"]), int(desc["out"]))
    return cls()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p: np.ndarray, y) -> np.ndarray | float:
    """Per-sample ``-log p[y]`` with the probability floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    k = p.shape[-1]
    y_arr = np.asarray(y)
    if np.any(y_arr < 0) or np.any(y_arr >= k):
        raise ValueError(f"label out of range for {k} classes: {y}")
    if p.ndim == 1:
        return float(-np.log(max(p[int(y)], PROB_FLOOR)))
    py = p[np.arange(p.shape[0]), y_arr]
    return -np.log(np.maximum(py, PROB_FLOOR))


class Model:
    """Sequential classifier ending in a dense head that emits logits."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], seed: int = 0):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise ValueError("the last layer must produce a flat logit vector")
        self.n_classes = shape[0]

    def describe(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "layers": [layer.describe() for layer in self.layers],
        }

    def parameters(self) -> list[tuple[int, str, np.ndarray]]:
        return [
            (i, name, arr)
            for i, layer in enumerate(self.layers)
            for name, arr in sorted(layer.params.items())
        ]

    def initialize(self, seed: int) -> "Model":
        """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
        rng = np.random.default_rng(seed)
        self.seed = int(seed)
        for layer in self.layers:
            if not layer.params:
                continue
            s = 1.0 / np.sqrt(layer.fan_in)
            for name in sorted(layer.params):
                arr = layer.params[name]
                arr[...] = _as_f32(rng.uniform(-s, s, size=arr.shape))
        return self

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match model {self.input_shape}")
        return x

    def forward_cached(self, x: np.ndarray):
        """Batched logits plus the per-layer cache needed by ``backward``."""
        out = self._check(x)
        caches = []
        for layer in self.layers:
            out, cache = layer.forward(out)
            caches.append(cache)
        return out, caches

    def backward(self, caches, grad_logits, need_params: bool = True):
        grad = grad_logits
        param_grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            grad, grads = layer.backward(caches[i], grad)
            if need_params:
                for name, g in grads.items():
                    param_grads[(i, name)] = g
        return grad, param_grads

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities; a single image yields a 1-D vector."""
        p = softmax(self.logits(x))
        return p[0] if np.ndim(x) == 3 else p

    forward = predict_proba

    def predict(self, x: np.ndarray) -> np.ndarray:
        p = self.predict_proba(x)
        return np.argmax(p, axis=-1)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Activations feeding the final dense head."""
        out = self._check(x)
        for layer in self.layers[:-1]:
            out, _ = layer.forward(out)
        return out[0] if np.ndim(x) == 3 else out

    def loss_and_input_grad(self, x: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample cross-entropy and its gradient with respect to each input."""
        batch = self._check(x)
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        if y.shape != (batch.shape[0],):
            raise ValueError("one label per image is required")
        logits, caches = self.forward_cached(batch)
        p = softmax(logits)
        loss = cross_entropy(p, y)
        dlogits = p.copy()
        rows = np.arange(len(y))
        dlogits[rows, y] -= 1.0
        # the floor makes the loss flat once p_y underflows
        dlogits[p[rows, y] < PROB_FLOOR] = 0.0
        grad, _ = self.backward(caches, dlogits, need_params=False)
        if np.ndim(x) == 3:
            return loss[0], grad[0]
        return loss, grad

    def copy(self) -> "Model":
        clone = Model([layer_from_description(layer.describe()) for layer in self.layers],
                      self.input_shape, self.seed)
        for (i, name, arr) in self.parameters():
            clone.layers[i].params[name] = arr.copy()
        return clone


def backward_input(model: Model, x: np.ndarray, y) -> np.ndarray:
    return model.loss_and_input_grad(x, y)[1]


def build_cnn(
    input_shape=(32, 32, 3), n_classes: int = 4, width: int = 8, seed: int = 0
) -> Model:
    """Two conv/relu/pool stages, global average pool, dense head."""
    c = input_shape[-1]
    layers = [
        Conv3x3(c, width), ReLU(), AvgPool2(),
        Conv3x3(width, width), ReLU(), AvgPool2(),
        GlobalAvgPool(),
        Dense(width, n_classes),
    ]
    return Model(layers, input_shape, seed).initialize(seed)
