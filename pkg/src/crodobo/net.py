"""Small feed-forward classifier with hand-written backprop and Adam.

Architecture: ``[dense -> batch-norm -> relu] * len(hidden_dims) -> dense -> softmax``.
Everything is plain numpy; gradients are taken with respect to the network
parameters given the gradient of a scalar loss with respect to the logits.
"""
from __future__ import annotations

import base64
import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class NetworkError(ValueError):
    pass


@dataclass
class NetworkSpec:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [128, 256])
    num_classes: int = 2
    batch_norm_eps: float = 1e-5
    batch_norm_momentum: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise NetworkError("all layer dimensions must be >= 1")
        if self.num_classes < 2:
            raise NetworkError("num_classes must be >= 2")
        if not self.batch_norm_eps > 0:
            raise NetworkError("batch_norm_eps must be positive")
        if not 0 < self.batch_norm_momentum < 1:
            raise NetworkError("batch_norm_momentum must lie in (0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise NetworkError(f"unsupported dtype {self.dtype!r}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        fan_in = self.input_dim
        for i, h in enumerate(self.hidden_dims):
            shapes[f"dense{i}.W"] = (fan_in, h)
            shapes[f"dense{i}.b"] = (h,)
            shapes[f"bn{i}.gamma"] = (h,)
            shapes[f"bn{i}.beta"] = (h,)
            fan_in = h
        shapes["head.W"] = (fan_in, self.num_classes)
        shapes["head.b"] = (self.num_classes,)
        return shapes


@dataclass
class Network:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    # bumped on every parameter update; used to reject stale caches
    version: int = 0

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list[np.ndarray]
    xhat: list[np.ndarray]
    inv_std: list[np.ndarray]
    relu_mask: list[np.ndarray]
    batch_mean: list[np.ndarray]
    batch_var: list[np.ndarray]
    head_input: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    mode: str = "train"


@dataclass
class OptimizerState:
    learning_rate: float = 8e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise NetworkError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise NetworkError("Adam betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise NetworkError("Adam epsilon must be positive")


def init_network(spec: NetworkSpec, seed: int) -> Network:
    """He-uniform weights for layers feeding a ReLU, Xavier-uniform for the head,
    zero biases, BN scale 1 / shift 0, running mean 0 / variance 1."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(spec.dtype)
    params: dict[str, np.ndarray] = {}
    running: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        layer, kind = name.split(".")
        if kind == "W":
            fan_in, fan_out = shape
            if layer == "head":
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            else:
                limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    for i, h in enumerate(spec.hidden_dims):
        running[f"bn{i}.mean"] = np.zeros(h, dtype=dtype)
        running[f"bn{i}.var"] = np.ones(h, dtype=dtype)
    return Network(spec=spec, params=params, running=running)


def init_optimizer(net: Network, learning_rate=8e-4, beta1=0.9, beta2=0.999,
                   epsilon=1e-8) -> OptimizerState:
    return OptimizerState(
        learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon,
        m={k: np.zeros_like(p) for k, p in net.params.items()},
        v={k: np.zeros_like(p) for k, p in net.params.items()},
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(net: Network, x, mode: str = "train", track_running_stats: bool = True):
    """Return ``(probs, cache)``. ``cache`` is None in eval mode.

    Train mode normalises with batch statistics and (unless
    ``track_running_stats`` is False) folds them into the running estimates.
    Eval mode uses the running estimates and mutates nothing.
    """
    spec = net.spec
    x = np.asarray(x, dtype=spec.dtype)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise NetworkError(
            f"expected input of shape (B, {spec.input_dim}), got {x.shape}")
    if mode not in ("train", "eval"):
        raise NetworkError(f"unknown mode {mode!r}")
    train = mode == "train"
    if train and x.shape[0] < 2:
        raise NetworkError("train-mode forward needs a batch of at least 2 rows")

    p = net.params
    eps = spec.batch_norm_eps
    mom = spec.batch_norm_momentum
    n = x.shape[0]
    inputs, xhats, inv_stds, masks, means, vars_ = [], [], [], [], [], []
    a = x
    for i in range(len(spec.hidden_dims)):
        inputs.append(a)
        z = a @ p[f"dense{i}.W"] + p[f"dense{i}.b"]
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if track_running_stats:
                rm, rv = net.running[f"bn{i}.mean"], net.running[f"bn{i}.var"]
                # running variance tracks the unbiased estimate
                rm *= 1 - mom
                rm += mom * mu
                rv *= 1 - mom
                rv += mom * var * (n / (n - 1))
        else:
            mu = net.running[f"bn{i}.mean"]
            var = net.running[f"bn{i}.var"]
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mu) * inv_std
        y = p[f"bn{i}.gamma"] * xhat + p[f"bn{i}.beta"]
        mask = y > 0
        a = y * mask
        if train:
            xhats.append(xhat)
            inv_stds.append(inv_std)
            masks.append(mask)
            means.append(mu)
            vars_.append(var)
    logits = a @ p["head.W"] + p["head.b"]
    probs = softmax(logits)
    if not train:
        return probs, None
    cache = ForwardCache(
        net_id=id(net), version=net.version, inputs=inputs, xhat=xhats,
        inv_std=inv_stds, relu_mask=masks, batch_mean=means, batch_var=vars_,
        head_input=a, logits=logits, probs=probs,
    )
    return probs, cache


def _bn_backward(dy, xhat, inv_std, gamma):
    """Gradient of batch-norm w.r.t. its input, scale and shift."""
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dz = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                          - xhat * (dxhat * xhat).sum(axis=0))
    return dz, dgamma, dbeta


def backward(net: Network, cache: ForwardCache, loss_grad) -> dict[str, np.ndarray]:
    """Back-propagate ``loss_grad`` (d loss / d logits) through the network."""
    if cache is None or cache.mode != "train":
        raise NetworkError("backward needs the cache of a train-mode forward")
    if cache.net_id != id(net) or cache.version != net.version:
        raise NetworkError("stale cache: network changed since the forward pass")
    g = np.asarray(loss_grad, dtype=net.spec.dtype)
    if g.shape != cache.logits.shape:
        raise NetworkError(
            f"loss_grad shape {g.shape} does not match logits {cache.logits.shape}")
    p = net.params
    grads: dict[str, np.ndarray] = {}
    grads["head.W"] = cache.head_input.T @ g
    grads["head.b"] = g.sum(axis=0)
    da = g @ p["head.W"].T
    for i in reversed(range(len(net.spec.hidden_dims))):
        dy = da * cache.relu_mask[i]
        dz, dgamma, dbeta = _bn_backward(
            dy, cache.xhat[i], cache.inv_std[i], p[f"bn{i}.gamma"])
        grads[f"bn{i}.gamma"] = dgamma
        grads[f"bn{i}.beta"] = dbeta
        grads[f"dense{i}.W"] = cache.inputs[i].T @ dz
        grads[f"dense{i}.b"] = dz.sum(axis=0)
        if i > 0:
            da = dz @ p[f"dense{i}.W"].T
    return {k: grads[k] for k in p}


def adam_step(net: Network, grads: dict[str, np.ndarray], opt: OptimizerState):
    """Bias-corrected Adam update, in place. Returns ``(net, opt)``."""
    if set(grads) != set(net.params):
        raise NetworkError("gradient keys do not match network parameters")
    for k, w in net.params.items():
        if grads[k].shape != w.shape:
            raise NetworkError(f"gradient shape mismatch for {k}")
        if k not in opt.m:
            opt.m[k] = np.zeros_like(w)
            opt.v[k] = np.zeros_like(w)
        elif opt.m[k].shape != w.shape:
            raise NetworkError(f"moment shape mismatch for {k}")
    opt.step += 1
    t = opt.step
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for k, w in net.params.items():
        g = grads[k]
        m = opt.m[k]
        v = opt.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        w -= opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.epsilon)
    net.version += 1
    return net, opt


# -- checkpoints -------------------------------------------------------------

def _encode(a: np.ndarray) -> dict:
    raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(raw).decode("ascii")}


def _decode(d: dict, dtype) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(dtype)


def network_to_dict(net: Network) -> dict:
    return {
        "spec": asdict(net.spec),
        "encoding": "base64 little-endian float64",
        "params": {k: _encode(v) for k, v in net.params.items()},
        "running": {k: _encode(v) for k, v in net.running.items()},
    }


def network_from_dict(d: dict) -> Network:
    spec = NetworkSpec(**d["spec"])
    net = Network(
        spec=spec,
        params={k: _decode(v, spec.dtype) for k, v in d["params"].items()},
        running={k: _decode(v, spec.dtype) for k, v in d["running"].items()},
    )
    expected = spec.param_shapes()
    if {k: v.shape for k, v in net.params.items()} != expected:
        raise NetworkError("checkpoint parameters do not match its spec")
    return net


def save_networks(path, nets: list[Network]) -> None:
    payload = {"format": "crodobo-checkpoint", "version": 1,
               "learners": [network_to_dict(n) for n in nets]}
    Path(path).write_text(json.dumps(payload))


def load_networks(path) -> list[Network]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "crodobo-checkpoint":
        raise NetworkError(f"{path} is not a checkpoint file")
    return [network_from_dict(d) for d in payload["learners"]]
