"""Small feed-forward network engine with hand-written reverse-mode gradients.

Tensors are plain ``numpy.ndarray`` objects in float64. Images use a
channels-last ``(H, W, C)`` layout; every batched entry point takes a
leading batch axis.

Supported layers are dense, conv2d (valid padding), maxpool and relu.
Dense layers flatten whatever they receive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAYER_KINDS = ("dense", "conv2d", "maxpool", "relu")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    window: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.in_features <= 0 or self.out_features <= 0):
            raise ValueError("dense layer needs positive in_features/out_features")
        if self.kind == "conv2d" and min(self.in_channels, self.out_channels,
                                         self.kernel, self.stride) <= 0:
            raise ValueError("conv2d needs positive channels, kernel and stride")
        if self.kind == "maxpool" and self.window <= 0:
            raise ValueError("maxpool needs a positive window")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v not in (0, None) or k == "kind"}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def dense(in_features: int, out_features: int, seed: int | None = None) -> LayerSpec:
    return LayerSpec("dense", in_features=in_features, out_features=out_features, seed=seed)


def conv2d(in_channels: int, out_channels: int, kernel: int, stride: int = 1,
           seed: int | None = None) -> LayerSpec:
    return LayerSpec("conv2d", in_channels=in_channels, out_channels=out_channels,
                     kernel=kernel, stride=stride, seed=seed)


def maxpool(window: int) -> LayerSpec:
    return LayerSpec("maxpool", window=window)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Model:
    """An ordered stack of layers plus their parameters.

    ``params`` holds ``[W, b]`` for every dense/conv layer in order; the
    model never mutates them during forward or gradient evaluation.
    """

    def __init__(self, input_shape, layers, seed: int = 0, params=None):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = list(layers)
        self.seed = seed
        self._shapes = [self.input_shape]
        self._param_slots: list[int | None] = []
        shape = self.input_shape
        n_params = 0
        for i, spec in enumerate(self.layers):
            shape = self._out_shape(i, spec, shape)
            self._shapes.append(shape)
            if spec.kind in ("dense", "conv2d"):
                self._param_slots.append(n_params)
                n_params += 2
            else:
                self._param_slots.append(None)
        if len(shape) != 1 or shape[0] < 2:
            raise ShapeError(f"model must end in a logit vector with >= 2 classes, got {shape}")
        self.class_count = shape[0]
        if params is None:
            params = self._init_params()
        self.params = [np.asarray(p, dtype=np.float64) for p in params]
        expected = self.param_shapes()
        got = [p.shape for p in self.params]
        if got != expected:
            raise ShapeError(f"parameter shapes {got} do not match layers {expected}")

    def _out_shape(self, i, spec, shape):
        if spec.kind == "dense":
            flat = int(np.prod(shape))
            if flat != spec.in_features:
                raise ShapeError(f"layer {i} (dense) expects {spec.in_features} inputs, "
                                 f"receives shape {shape}")
            return (spec.out_features,)
        if spec.kind == "relu":
            return shape
        if len(shape) != 3:
            raise ShapeError(f"layer {i} ({spec.kind}) needs an (H, W, C) input, got {shape}")
        h, w, c = shape
        if spec.kind == "conv2d":
            if c != spec.in_channels:
                raise ShapeError(f"layer {i} (conv2d) expects {spec.in_channels} channels, got {c}")
            if spec.kernel > min(h, w):
                raise ShapeError(f"layer {i} (conv2d) kernel {spec.kernel} exceeds input {shape}")
            return ((h - spec.kernel) // spec.stride + 1,
                    (w - spec.kernel) // spec.stride + 1, spec.out_channels)
        if spec.window > min(h, w):
            raise ShapeError(f"layer {i} (maxpool) window {spec.window} exceeds input {shape}")
        return (h // spec.window, w // spec.window, c)

    def param_shapes(self) -> list[tuple]:
        shapes = []
        for i, spec in enumerate(self.layers):
            if spec.kind == "dense":
                shapes += [(spec.in_features, spec.out_features), (spec.out_features,)]
            elif spec.kind == "conv2d":
                k = spec.kernel
                shapes += [(k, k, spec.in_channels, spec.out_channels), (spec.out_channels,)]
        return shapes

    def _init_params(self):
        params = []
        for i, spec in enumerate(self.layers):
            if spec.kind not in ("dense", "conv2d"):
                continue
            seed = spec.seed if spec.seed is not None else [self.seed, i]
            rng = np.random.default_rng(seed)
            if spec.kind == "dense":
                shape = (spec.in_features, spec.out_features)
                w = _glorot(rng, shape, spec.in_features, spec.out_features)
                params += [w, np.zeros(spec.out_features)]
            else:
                k = spec.kernel
                shape = (k, k, spec.in_channels, spec.out_channels)
                w = _glorot(rng, shape, k * k * spec.in_channels, k * k * spec.out_channels)
                params += [w, np.zeros(spec.out_channels)]
        return params

    def copy(self) -> "Model":
        return Model(self.input_shape, self.layers, self.seed,
                     params=[p.copy() for p in self.params])

    # batched internals -------------------------------------------------

    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 expects inputs of shape {self.input_shape}, "
                             f"got {x.shape[1:]}")
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Logits for a batch ``x`` of shape ``(n, *input_shape)``."""
        out, _ = self._forward(self._check_batch(x), keep=False)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def _forward(self, x, keep=True):
        caches = []
        a = x
        for i, spec in enumerate(self.layers):
            slot = self._param_slots[i]
            if spec.kind == "dense":
                w, b = self.params[slot], self.params[slot + 1]
                flat = a.reshape(a.shape[0], -1)
                caches.append((a.shape, flat) if keep else None)
                a = flat @ w + b
            elif spec.kind == "relu":
                caches.append(a > 0 if keep else None)
                a = np.maximum(a, 0.0)
            elif spec.kind == "conv2d":
                w, b = self.params[slot], self.params[slot + 1]
                cols = _im2col(a, spec.kernel, spec.stride)
                caches.append((a.shape, cols) if keep else None)
                a = np.einsum("nhwcij,ijco->nhwo", cols, w, optimize=True) + b
            else:
                a, arg = _maxpool_forward(a, spec.window)
                caches.append((a.shape, arg, spec.window) if keep else None)
        return a, caches

    def _backward(self, grad_out, caches, want_params=True):
        grads = [None] * len(self.params)
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            spec = self.layers[i]
            cache = caches[i]
            slot = self._param_slots[i]
            if spec.kind == "dense":
                in_shape, flat = cache
                w = self.params[slot]
                if want_params:
                    grads[slot] = flat.T @ g
                    grads[slot + 1] = g.sum(axis=0)
                g = (g @ w.T).reshape(in_shape)
            elif spec.kind == "relu":
                g = g * cache
            elif spec.kind == "conv2d":
                in_shape, cols = cache
                w = self.params[slot]
                if want_params:
                    grads[slot] = np.einsum("nhwcij,nhwo->ijco", cols, g, optimize=True)
                    grads[slot + 1] = g.sum(axis=(0, 1, 2))
                g = _conv_input_grad(g, w, in_shape, spec.stride)
            else:
                g = _maxpool_backward(g, cache, self._shapes[i])
        return g, grads

    def evaluate(self, x, y, input_grad=False, param_grads=False):
        """Per-example losses and logits for a batch; optionally gradients.

        The input gradient has one row per example (each row is the gradient
        of that example's own loss). Parameter gradients are of the MEAN loss.
        """
        x = self._check_batch(x)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise ShapeError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        keep = input_grad or param_grads
        logits, caches = self._forward(x, keep=keep)
        losses, dlogits = softmax_cross_entropy(logits, y)
        gx = gp = None
        if keep:
            if param_grads:
                gx, gp = self._backward(dlogits / x.shape[0], caches, want_params=True)
                if input_grad:
                    gx = gx * x.shape[0]
            else:
                gx, _ = self._backward(dlogits, caches, want_params=False)
        return losses, logits, (gx if input_grad else None), gp


def _im2col(x, k, stride):
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    return win[:, ::stride, ::stride]


def _conv_input_grad(g, w, in_shape, stride):
    dx = np.zeros(in_shape)
    k = w.shape[0]
    ho, wo = g.shape[1], g.shape[2]
    for i in range(k):
        for j in range(k):
            dx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += \
                g @ w[i, j].T
    return dx


def _maxpool_forward(x, s):
    n, h, w, c = x.shape
    ho, wo = h // s, w // s
    blocks = x[:, :ho * s, :wo * s, :].reshape(n, ho, s, wo, s, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, s * s)
    # first maximal element in row-major scan order
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _maxpool_backward(g, cache, in_shape):
    out_shape, arg, s = cache
    n, ho, wo, c = out_shape
    blocks = np.zeros((n, ho, wo, c, s * s))
    np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
    blocks = blocks.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros((n,) + tuple(in_shape))
    dx[:, :ho * s, :wo * s, :] = blocks.reshape(n, ho * s, wo * s, c)
    return dx


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray):
    """Per-row cross-entropy and its gradient with respect to the logits."""
    shift = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    idx = np.arange(len(y))
    losses = lse - shift[idx, y]
    probs = np.exp(shift - lse[:, None])
    probs[idx, y] -= 1.0
    return losses, probs


# single-example API -------------------------------------------------------

def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits for one input of shape ``model.input_shape``."""
    x = np.asarray(x, dtype=np.float64)
    return model.logits(x[None])[0]


def loss_and_input_grad(model: Model, x: np.ndarray, y: int):
    y = int(y)
    if not 0 <= y < model.class_count:
        raise ValueError(f"label {y} outside [0, {model.class_count})")
    x = np.asarray(x, dtype=np.float64)
    losses, _, gx, _ = model.evaluate(x[None], np.array([y]), input_grad=True)
    return float(losses[0]), gx[0]


def loss_and_param_grads(model: Model, batch):
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    losses, _, _, grads = model.evaluate(x, y, param_grads=True)
    return float(losses.mean()), grads


# optimizers ---------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    buffers: list = field(default_factory=list)
    buffers2: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def optimizer_step(state: OptimizerState, model: Model, grads):
    """Apply one update in place; returns ``(model, state)`` for chaining."""
    if len(grads) != len(model.params) or any(
            g.shape != p.shape for g, p in zip(grads, model.params)):
        raise ShapeError("gradient shapes do not match model parameters")
    if not state.buffers:
        state.buffers = [np.zeros_like(p) for p in model.params]
        state.buffers2 = [np.zeros_like(p) for p in model.params]
    state.step += 1
    for i, (p, g) in enumerate(zip(model.params, grads)):
        if state.weight_decay:
            g = g + state.weight_decay * p
        if state.kind == "sgd":
            if state.momentum:
                state.buffers[i] = state.momentum * state.buffers[i] + g
                g = state.buffers[i]
            model.params[i] = p - state.lr * g
        else:
            m = state.buffers[i] = state.beta1 * state.buffers[i] + (1 - state.beta1) * g
            v = state.buffers2[i] = state.beta2 * state.buffers2[i] + (1 - state.beta2) * g * g
            m_hat = m / (1 - state.beta1 ** state.step)
            v_hat = v / (1 - state.beta2 ** state.step)
            model.params[i] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    return model, state


def mnist_cnn(seed: int = 0, input_shape=(28, 28, 1), class_count: int = 10) -> Model:
    """Two conv blocks and two dense layers, a scaled-down Madry-style CNN."""
    h, w, c = input_shape
    layers = [conv2d(c, 8, 5), relu(), maxpool(2), conv2d(8, 16, 5), relu(), maxpool(2)]
    h = ((h - 4) // 2 - 4) // 2
    w = ((w - 4) // 2 - 4) // 2
    layers += [dense(h * w * 16, 64), relu(), dense(64, class_count)]
    return Model(input_shape, layers, seed=seed)


def mlp(input_shape, hidden, class_count: int, seed: int = 0) -> Model:
    """Dense ReLU network; ``hidden`` lists hidden widths (may be empty)."""
    sizes = [int(np.prod(input_shape))] + list(hidden) + [class_count]
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(dense(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(relu())
    return Model(input_shape, layers, seed=seed)
