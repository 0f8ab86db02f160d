"""Small feed-forward network kernel with hand-written reverse mode.

Networks are plain sequences of layers acting on 2-D float64 arrays of shape
``(batch, features)``. Convolutional layers view their features as
``(channels, length)`` in row-major order. ``forward`` returns the output and
a tape; ``backward`` consumes the tape and returns gradients for every
parameter *and* for the input, since latent-space optimization needs the
latter.

Optimizers (RMSProp, classical momentum) and value clipping live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError

LAYER_KINDS = ("dense", "conv1d", "batchnorm", "relu", "leakyrelu", "identity")
MODES = ("training", "frozen")

INIT_STD = 0.02
BN_DECAY = 0.99


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    # conv1d only
    in_channels: int = 1
    out_channels: int = 1
    kernel_width: int = 4
    stride: int = 2
    # leakyrelu only
    leak: float = 0.2
    # batchnorm only
    eps: float = 1e-9

    @property
    def in_length(self) -> int:
        return self.in_dim // self.in_channels

    @property
    def out_length(self) -> int:
        return self.out_dim // self.out_channels

    def validate(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ConfigError(f"{self.kind}: dimensions must be positive")
        if self.kind == "conv1d":
            if self.kernel_width <= 0 or self.stride <= 0:
                raise ConfigError("conv1d: kernel_width and stride must be positive")
            if self.in_dim % self.in_channels:
                raise ConfigError("conv1d: in_dim not divisible by in_channels")
            length = (self.in_length - self.kernel_width) // self.stride + 1
            if length <= 0 or self.out_dim != self.out_channels * length:
                raise ConfigError(
                    f"conv1d: out_dim {self.out_dim} inconsistent with "
                    f"{self.out_channels} channels x length {length}"
                )
        elif self.kind != "dense" and self.in_dim != self.out_dim:
            raise ConfigError(f"{self.kind}: in_dim must equal out_dim")
        if self.kind == "leakyrelu" and not 0.0 < self.leak < 1.0:
            raise ConfigError("leakyrelu: leak must lie in (0, 1)")


def dense(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("dense", in_dim, out_dim)


def conv1d(in_channels: int, in_length: int, out_channels: int,
           kernel_width: int = 4, stride: int = 2) -> LayerSpec:
    out_length = (in_length - kernel_width) // stride + 1
    return LayerSpec("conv1d", in_channels * in_length, out_channels * out_length,
                     in_channels=in_channels, out_channels=out_channels,
                     kernel_width=kernel_width, stride=stride)


def batchnorm(dim: int, eps: float = 1e-9) -> LayerSpec:
    return LayerSpec("batchnorm", dim, dim, eps=eps)


def relu(dim: int) -> LayerSpec:
    return LayerSpec("relu", dim, dim)


def leakyrelu(dim: int, leak: float = 0.2) -> LayerSpec:
    return LayerSpec("leakyrelu", dim, dim, leak=leak)


def identity(dim: int) -> LayerSpec:
    return LayerSpec("identity", dim, dim)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        if self.layers[0].kind == "batchnorm":
            raise ConfigError("batchnorm may not act directly on the raw input")
        for layer in self.layers:
            layer.validate()
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(
                    f"layer dims do not chain: {prev.kind} out {prev.out_dim} "
                    f"-> {nxt.kind} in {nxt.in_dim}"
                )


Params = list  # list[dict[str, np.ndarray]], one dict per layer


def init_weights(spec: NetworkSpec, seed) -> Params:
    """Weights ~ N(0, 0.02), biases zero, batch-norm scale one and shift zero."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec.layers:
        if layer.kind == "dense":
            params.append({
                "W": rng.normal(0.0, INIT_STD, size=(layer.in_dim, layer.out_dim)),
                "b": np.zeros(layer.out_dim),
            })
        elif layer.kind == "conv1d":
            shape = (layer.out_channels, layer.in_channels, layer.kernel_width)
            params.append({
                "W": rng.normal(0.0, INIT_STD, size=shape),
                "b": np.zeros(layer.out_channels),
            })
        elif layer.kind == "batchnorm":
            params.append({"gamma": np.ones(layer.in_dim), "beta": np.zeros(layer.in_dim)})
        else:
            params.append({})
    return params


def init_bn_state(spec: NetworkSpec) -> list:
    return [
        {"mean": np.zeros(layer.in_dim), "var": np.ones(layer.in_dim)}
        if layer.kind == "batchnorm" else None
        for layer in spec.layers
    ]


@dataclass
class Tape:
    """Everything ``backward`` needs from one ``forward`` call."""

    spec: NetworkSpec
    params: Params
    mode: str
    caches: list = field(default_factory=list)
    output_shape: tuple = ()


def _conv_index(layer: LayerSpec) -> np.ndarray:
    starts = np.arange(layer.out_length) * layer.stride
    return starts[:, None] + np.arange(layer.kernel_width)[None, :]


def forward(spec: NetworkSpec, params: Params, x, mode: str = "frozen",
            bn_state: list | None = None):
    """Run the network on a ``(batch, input_dim)`` array. Returns ``(output, tape)``."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected input of shape (batch, {spec.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite value in network input")

    tape = Tape(spec=spec, params=params, mode=mode)
    batch = x.shape[0]
    for i, (layer, p) in enumerate(zip(spec.layers, params)):
        kind = layer.kind
        if kind == "dense":
            tape.caches.append(x)
            x = x @ p["W"] + p["b"]
        elif kind == "conv1d":
            idx = _conv_index(layer)
            xs = x.reshape(batch, layer.in_channels, layer.in_length)
            # (B, C_in, L_out, K) -> (B, L_out, C_in*K)
            cols = xs[:, :, idx].transpose(0, 2, 1, 3).reshape(batch, layer.out_length, -1)
            wmat = p["W"].reshape(layer.out_channels, -1).T
            y = cols @ wmat + p["b"]
            tape.caches.append(cols)
            x = y.transpose(0, 2, 1).reshape(batch, layer.out_dim)
        elif kind == "batchnorm":
            if mode == "training":
                mean = x.mean(axis=0)
                var = x.var(axis=0)
            else:
                if bn_state is None or bn_state[i] is None:
                    raise ConfigError("frozen mode needs batch-norm running statistics")
                mean, var = bn_state[i]["mean"], bn_state[i]["var"]
            inv_std = 1.0 / np.sqrt(var + layer.eps)
            xhat = (x - mean) * inv_std
            tape.caches.append((xhat, inv_std, mean, var))
            x = xhat * p["gamma"] + p["beta"]
        elif kind == "relu":
            mask = x > 0
            tape.caches.append(mask)
            x = x * mask
        elif kind == "leakyrelu":
            slope = np.where(x > 0, 1.0, layer.leak)
            tape.caches.append(slope)
            x = x * slope
        else:
            tape.caches.append(None)
    tape.output_shape = x.shape
    return x, tape


def backward(tape: Tape, grad_out):
    """Reverse pass. Returns ``(param_grads, input_grad)``."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != tape.output_shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {tape.output_shape}")
    spec, params = tape.spec, tape.params
    grads: list = [None] * len(spec.layers)
    batch = g.shape[0]
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, p, cache = spec.layers[i], params[i], tape.caches[i]
        kind = layer.kind
        if kind == "dense":
            grads[i] = {"W": cache.T @ g, "b": g.sum(axis=0)}
            g = g @ p["W"].T
        elif kind == "conv1d":
            cols = cache
            c_out, c_in, k = layer.out_channels, layer.in_channels, layer.kernel_width
            gt = g.reshape(batch, c_out, layer.out_length).transpose(0, 2, 1)
            wmat = p["W"].reshape(c_out, -1).T
            dw = cols.reshape(-1, c_in * k).T @ gt.reshape(-1, c_out)
            grads[i] = {"W": dw.T.reshape(c_out, c_in, k), "b": gt.sum(axis=(0, 1))}
            dcols = (gt @ wmat.T).reshape(batch, layer.out_length, c_in, k).transpose(0, 2, 1, 3)
            dx = np.zeros((batch, c_in, layer.in_length))
            idx = _conv_index(layer)
            # positions within one kernel offset never collide, so += is safe
            for j in range(k):
                dx[:, :, idx[:, j]] += dcols[:, :, :, j]
            g = dx.reshape(batch, layer.in_dim)
        elif kind == "batchnorm":
            xhat, inv_std, _, _ = cache
            grads[i] = {"gamma": (g * xhat).sum(axis=0), "beta": g.sum(axis=0)}
            dxhat = g * p["gamma"]
            if tape.mode == "training":
                n = batch
                g = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                g = dxhat * inv_std
        elif kind in ("relu", "leakyrelu"):
            grads[i] = {}
            g = g * cache
        else:
            grads[i] = {}
    return grads, g


def update_running_stats(bn_state: list, tape: Tape, decay: float = BN_DECAY) -> list:
    """Exponential moving average of batch statistics recorded on a training tape."""
    if tape.mode != "training":
        return bn_state
    out = []
    for state, layer, cache in zip(bn_state, tape.spec.layers, tape.caches):
        if layer.kind != "batchnorm":
            out.append(state)
            continue
        _, _, mean, var = cache
        out.append({
            "mean": decay * state["mean"] + (1.0 - decay) * mean,
            "var": decay * state["var"] + (1.0 - decay) * var,
        })
    return out


@dataclass
class Network:
    """A network spec bundled with its parameters and batch-norm statistics."""

    spec: NetworkSpec
    params: Params
    bn_state: list

    @classmethod
    def initialize(cls, spec: NetworkSpec, seed) -> "Network":
        return cls(spec, init_weights(spec, seed), init_bn_state(spec))

    def forward(self, x, mode: str = "frozen"):
        return forward(self.spec, self.params, x, mode, self.bn_state)

    def backward(self, tape: Tape, grad_out):
        return backward(tape, grad_out)

    def __call__(self, x, mode: str = "frozen") -> np.ndarray:
        return self.forward(x, mode)[0]

    def copy(self) -> "Network":
        return Network(self.spec, copy_params(self.params), copy_params(self.bn_state))


def copy_params(params: list) -> list:
    return [None if p is None else {k: v.copy() for k, v in p.items()} for p in params]


def flatten_params(params: list) -> np.ndarray:
    parts = [v.ravel() for p in params if p for _, v in sorted(p.items())]
    return np.concatenate(parts) if parts else np.zeros(0)


def max_abs(params: list) -> float:
    flat = flatten_params(params)
    return float(np.max(np.abs(flat))) if flat.size else 0.0


# -- optimizers ---------------------------------------------------------------

class RMSProp:
    """acc <- rho*acc + (1-rho)*g^2;  theta <- theta - lr*g/sqrt(acc + eps)."""

    def __init__(self, lr: float, decay: float = 0.9, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.acc: list | None = None

    def step(self, params: Params, grads: Params) -> Params:
        if self.acc is None:
            self.acc = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        new_params = []
        for p, g, a in zip(params, grads, self.acc):
            updated = {}
            for name, value in p.items():
                a[name] = self.decay * a[name] + (1.0 - self.decay) * g[name] ** 2
                updated[name] = value - self.lr * g[name] / np.sqrt(a[name] + self.eps)
            new_params.append(updated)
        return new_params

    def state_dict(self) -> dict:
        return {"lr": self.lr, "decay": self.decay, "eps": self.eps, "acc": self.acc}

    @classmethod
    def from_state_dict(cls, state: dict) -> "RMSProp":
        opt = cls(state["lr"], state["decay"], state["eps"])
        opt.acc = state["acc"]
        return opt


class Momentum:
    """Classical momentum: v <- mu*v + g;  x <- x - lr*v."""

    def __init__(self, lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.velocity: np.ndarray | None = None

    def direction(self, grad: np.ndarray) -> np.ndarray:
        """Velocity after absorbing ``grad``, without committing it."""
        v = np.zeros_like(grad) if self.velocity is None else self.velocity
        return self.momentum * v + grad

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.velocity = self.direction(grad)
        return x - self.lr * self.velocity

    def reset(self) -> None:
        self.velocity = None


def clip_values(t, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ConfigError(f"clip bounds reversed: lo={lo} > hi={hi}")
    return np.clip(np.asarray(t, dtype=np.float64), lo, hi)


def clip_params(params: Params, c: float) -> Params:
    return [{k: clip_values(v, -c, c) for k, v in p.items()} for p in params]


# -- serialization ------------------------------------------------------------

def _array_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _array_from_json(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def arrays_to_json(items: list) -> list:
    return [None if p is None else {k: _array_to_json(v) for k, v in sorted(p.items())}
            for p in items]


def arrays_from_json(items: list) -> list:
    return [None if p is None else {k: _array_from_json(v) for k, v in p.items()}
            for p in items]


def spec_to_json(spec: NetworkSpec) -> list:
    return [layer.__dict__.copy() for layer in spec.layers]


def spec_from_json(layers: list) -> NetworkSpec:
    return NetworkSpec(tuple(LayerSpec(**d) for d in layers))


def network_to_json(net: Network) -> dict:
    return {
        "spec": spec_to_json(net.spec),
        "params": arrays_to_json(net.params),
        "bn_state": arrays_to_json(net.bn_state),
    }


def network_from_json(d: dict) -> Network:
    return Network(spec_from_json(d["spec"]), arrays_from_json(d["params"]),
                   arrays_from_json(d["bn_state"]))
