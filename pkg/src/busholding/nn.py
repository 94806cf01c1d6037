"""Small feed-forward networks with hand-written backpropagation."""

import copy
import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "busholding-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Mlp:
    """tanh hidden layers, linear output. Weights are stored (fan_in, fan_out)."""

    def __init__(self, sizes, rng=None, output_scale=1.0, weights=None, biases=None):
        self.sizes = [int(s) for s in sizes]
        if weights is not None:
            self.weights = [np.array(w, dtype=float) for w in weights]
            self.biases = [np.array(b, dtype=float) for b in biases]
            self._check_shapes()
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for k, (m, n) in enumerate(zip(self.sizes, self.sizes[1:])):
            w = rng.standard_normal((m, n)) / np.sqrt(m)
            if k == len(self.sizes) - 2:
                w *= output_scale
            self.weights.append(w)
            self.biases.append(np.zeros(n))

    def _check_shapes(self):
        if len(self.weights) != len(self.sizes) - 1:
            raise CheckpointError("layer count does not match sizes")
        for w, b, m, n in zip(self.weights, self.biases, self.sizes, self.sizes[1:]):
            if w.shape != (m, n) or b.shape != (n,):
                raise CheckpointError(f"layer shape {w.shape}/{b.shape} != ({m}, {n})")

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x):
        """Output for a batch ``x`` of shape (B, in); returns (y, cache)."""
        if not all(np.all(np.isfinite(p)) for p in self.params):
            raise FloatingPointError("non-finite network parameters")
        acts = [np.atleast_2d(np.asarray(x, dtype=float))]
        a = acts[0]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if k == last else np.tanh(z)
            acts.append(a)
        return a, acts

    def backward(self, acts, dy):
        """Gradients of sum(dy * y) w.r.t. params, in ``params`` order."""
        grads = [None] * (2 * len(self.weights))
        g = np.atleast_2d(dy)
        for k in range(len(self.weights) - 1, -1, -1):
            if k != len(self.weights) - 1:
                g = g * (1.0 - acts[k + 1] ** 2)
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return grads

    def copy(self):
        return copy.deepcopy(self)

    def to_dict(self):
        return {"sizes": self.sizes,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d, expected_sizes=None):
        if expected_sizes is not None and list(d["sizes"]) != list(expected_sizes):
            raise CheckpointError(f"network sizes {d['sizes']} != expected {list(expected_sizes)}")
        return cls(d["sizes"], weights=d["weights"], biases=d["biases"])


class PolicyParams:
    """Gaussian policy: an Mlp for the mean plus a state-independent log-std."""

    def __init__(self, mean_net, log_std):
        self.mean_net = mean_net
        self.log_std = np.array(log_std, dtype=float).reshape(1)

    @classmethod
    def init(cls, n_in=2, hidden=(64, 64), rng=None, log_std=np.log(0.3), output_scale=0.01):
        net = Mlp([n_in, *hidden, 1], rng=rng, output_scale=output_scale)
        return cls(net, [log_std])

    @property
    def params(self):
        return self.mean_net.params + [self.log_std]

    def copy(self):
        return copy.deepcopy(self)

    def to_dict(self):
        return {"mean_net": self.mean_net.to_dict(), "log_std": self.log_std.tolist()}

    @classmethod
    def from_dict(cls, d, expected_sizes=None):
        return cls(Mlp.from_dict(d["mean_net"], expected_sizes), d["log_std"])


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """In-place descent step on ``params``."""
        if self.lr == 0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def save_checkpoint(path, theta, phi, meta=None):
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
           "policy": theta.to_dict(), "value": phi.to_dict(), "meta": meta or {}}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path, policy_sizes=None, value_sizes=None):
    """(theta, phi, meta); rejects foreign files and shape mismatches."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    theta = PolicyParams.from_dict(doc["policy"], policy_sizes)
    phi = Mlp.from_dict(doc["value"], value_sizes)
    return theta, phi, doc.get("meta", {})
