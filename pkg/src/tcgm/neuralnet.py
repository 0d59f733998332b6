"""Small feed-forward softmax classifiers with hand-written backprop."""

from __future__ import annotations

import json
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import softmax

ACTIVATIONS = ("relu", "tanh")


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(kind, z, a):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - a * a


class ClassifierNet:
    """Multi-layer perceptron ending in a softmax over the classes.

    ``layer_dims`` runs from the input dimension through the hidden widths to
    the number of classes. Weights use Glorot-uniform initialization and
    biases start at zero.
    """

    def __init__(self, layer_dims: Sequence[int], activation: str = "relu", seed: int = 0,
                 init: str = "glorot"):
        if len(layer_dims) < 2 or any(int(d) < 1 for d in layer_dims):
            raise ValueError("layer_dims needs an input and an output width, all >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.activation = activation
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            if init == "zeros":
                w = np.zeros((fan_in, fan_out))
            elif init == "glorot":
                a = np.sqrt(6.0 / (fan_in + fan_out))
                w = self.rng.uniform(-a, a, size=(fan_in, fan_out))
            else:
                raise ValueError(f"unknown init {init!r}")
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self) -> "ClassifierNet":
        return ClassifierNet.from_dict(self.to_dict())

    def forward(self, x):
        """Class probabilities for a batch, plus the cache ``backward`` needs."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise ValueError(f"expected input of shape (N, {self.layer_dims[0]}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input")
        acts, pre = [x], []
        a = x
        last = len(self.weights) - 1
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = softmax(z, axis=1) if j == last else _act(self.activation, z)
            acts.append(a)
        return a, {"acts": acts, "pre": pre}

    def predict_proba(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, upstream) -> List[np.ndarray]:
        """Parameter gradients given dL/d(probabilities); same order as ``params``."""
        if cache is None:
            raise ValueError("backward needs the cache from forward")
        acts, pre = cache["acts"], cache["pre"]
        probs = acts[-1]
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != probs.shape:
            raise ValueError(f"upstream grads shape {g.shape} does not match outputs {probs.shape}")
        dz = probs * (g - np.sum(probs * g, axis=1, keepdims=True))
        grads = [None] * (2 * len(self.weights))
        for j in range(len(self.weights) - 1, -1, -1):
            grads[2 * j] = acts[j].T @ dz
            grads[2 * j + 1] = dz.sum(axis=0)
            if j > 0:
                da = dz @ self.weights[j].T
                dz = da * _act_grad(self.activation, pre[j - 1], acts[j])
        return grads

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "activation": self.activation,
            "rng_seed": self.rng_seed,
            "rng_state": self.rng.bit_generator.state,
            "params": self.get_flat().tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ClassifierNet":
        net = cls(obj["layer_dims"], obj["activation"], obj.get("rng_seed", 0), init="zeros")
        net.set_flat(obj["params"])
        if "rng_state" in obj:
            net.rng.bit_generator.state = obj["rng_state"]
        return net


class SGD:
    kind = "sgd"

    def __init__(self, learning_rate: float):
        if not learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        self.learning_rate = float(learning_rate)

    def step(self, net: ClassifierNet, grads):
        _check_grads(net, grads)
        for p, g in zip(net.params, grads):
            p -= self.learning_rate * g

    def state_dict(self) -> dict:
        return {"kind": self.kind, "learning_rate": self.learning_rate}


class Adam:
    kind = "adam"

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        self.learning_rate = float(learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(self, net: ClassifierNet, grads):
        _check_grads(net, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in net.params]
            self.v = [np.zeros_like(p) for p in net.params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(net.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": None if self.m is None else [a.ravel().tolist() for a in self.m],
            "v": None if self.v is None else [a.ravel().tolist() for a in self.v],
        }

    def load_state(self, state: dict, net: ClassifierNet):
        self.t = state["t"]
        if state["m"] is not None:
            self.m = [np.array(a).reshape(p.shape) for a, p in zip(state["m"], net.params)]
            self.v = [np.array(a).reshape(p.shape) for a, p in zip(state["v"], net.params)]


def make_optimizer(kind: str, learning_rate: float):
    if kind == "sgd":
        return SGD(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_from_state(state: dict, net: ClassifierNet):
    opt = make_optimizer(state["kind"], state["learning_rate"])
    if isinstance(opt, Adam):
        opt.beta1, opt.beta2, opt.eps = state["beta1"], state["beta2"], state["eps"]
        opt.load_state(state, net)
    return opt


def _check_grads(net, grads):
    if len(grads) != len(net.params):
        raise ValueError("gradient list does not match parameters")
    for p, g in zip(net.params, grads):
        if np.shape(g) != p.shape:
            raise ValueError("gradient shape mismatch")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")


def step(net: ClassifierNet, grads, optimizer) -> None:
    """Apply one optimizer update to ``net`` in place."""
    optimizer.step(net, grads)


def save_checkpoint(path, net: ClassifierNet, optimizer=None):
    obj = net.to_dict()
    obj["optimizer"] = None if optimizer is None else optimizer.state_dict()
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path):
    with open(path) as fh:
        obj = json.load(fh)
    net = ClassifierNet.from_dict(obj)
    opt = optimizer_from_state(obj["optimizer"], net) if obj.get("optimizer") else None
    return net, opt


def numerical_gradient(fn, net: ClassifierNet, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``fn(net)`` over the flat parameters."""
    theta = net.get_flat()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + eps
        net.set_flat(theta)
        up = fn(net)
        theta[i] = old - eps
        net.set_flat(theta)
        down = fn(net)
        theta[i] = old
        grad[i] = (up - down) / (2 * eps)
    net.set_flat(theta)
    return grad


def gradient_check(fn, grad_fn, net: ClassifierNet, eps: float = 1e-6) -> float:
    """Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).

    ``grad_fn(net)`` returns the analytic gradient list; the numeric side is
    central finite differences of ``fn``.
    """
    analytic = np.concatenate([g.ravel() for g in grad_fn(net)])
    numeric = numerical_gradient(fn, net, eps)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)
