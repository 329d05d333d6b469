"""Two-hidden-layer tanh network with a softmax policy head and a value head.

Backpropagation is written out by hand; parameters live in a dict of
float64 arrays so they can be flattened, perturbed and saved.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import ValidationError

MAGIC = b"EPICALW1"
PARAM_ORDER = ("W1", "b1", "W2", "b2", "Wp", "bp", "Wv", "bv")


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class PolicyNet:
    """Shared trunk ``in -> hidden -> hidden`` feeding logits and a value.

    Parameters
    ----------
    n_inputs, n_actions : int
    hidden : int
        Width of both hidden layers.
    seed : int
        Seeds Glorot-uniform initialization.  The logit layer starts 100x
        smaller so the initial policy is close to uniform.
    """

    def __init__(self, n_inputs: int, n_actions: int, hidden: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out, gain=1.0):
            lim = gain * np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        self.params = {
            "W1": glorot(n_inputs, hidden), "b1": np.zeros(hidden),
            "W2": glorot(hidden, hidden), "b2": np.zeros(hidden),
            "Wp": glorot(hidden, n_actions, 0.01), "bp": np.zeros(n_actions),
            "Wv": glorot(hidden, 1), "bv": np.zeros(1),
        }

    @property
    def n_inputs(self):
        return self.params["W1"].shape[0]

    @property
    def n_actions(self):
        return self.params["Wp"].shape[1]

    def forward(self, obs):
        """Return ``(logits, values, cache)`` for a batch of observations."""
        p = self.params
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        h1 = np.tanh(x @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        logits = h2 @ p["Wp"] + p["bp"]
        values = (h2 @ p["Wv"] + p["bv"])[:, 0]
        return logits, values, (x, h1, h2)

    def probs(self, obs):
        return softmax(self.forward(obs)[0])

    def backward(self, cache, d_logits, d_values):
        """Gradients of a scalar loss given its derivative w.r.t. the outputs."""
        p = self.params
        x, h1, h2 = cache
        g = {
            "Wp": h2.T @ d_logits, "bp": d_logits.sum(axis=0),
            "Wv": h2.T @ d_values[:, None], "bv": np.array([d_values.sum()]),
        }
        dh2 = d_logits @ p["Wp"].T + d_values[:, None] @ p["Wv"].T
        dz2 = dh2 * (1.0 - h2 ** 2)
        g["W2"] = h1.T @ dz2
        g["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["W2"].T
        dz1 = dh1 * (1.0 - h1 ** 2)
        g["W1"] = x.T @ dz1
        g["b1"] = dz1.sum(axis=0)
        return g

    # -- flat views --------------------------------------------------------
    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat(self, flat):
        i = 0
        for k in PARAM_ORDER:
            a = self.params[k]
            self.params[k] = np.asarray(flat[i:i + a.size], dtype=np.float64).reshape(a.shape)
            i += a.size

    def copy(self) -> PolicyNet:
        other = PolicyNet.__new__(PolicyNet)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    # -- persistence ---------------------------------------------------------
    def save(self, path):
        """Write the weights in the documented binary layout.

        ``b"EPICALW1"``, uint32 array count, then per array: uint32 ndim,
        ndim x uint32 dims, and the data as little-endian float64 in row-major
        order.  Arrays appear in ``PARAM_ORDER``.
        """
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(PARAM_ORDER)))
            for k in PARAM_ORDER:
                a = np.ascontiguousarray(self.params[k], dtype="<f8")
                fh.write(struct.pack("<I", a.ndim))
                fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
                fh.write(a.tobytes(order="C"))

    @classmethod
    def load(cls, path) -> PolicyNet:
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:8] != MAGIC:
            raise ValidationError(f"{path}: not an epical weights file")
        off = 8
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        if count != len(PARAM_ORDER):
            raise ValidationError(f"{path}: expected {len(PARAM_ORDER)} arrays, found {count}")
        params = {}
        for k in PARAM_ORDER:
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n = int(np.prod(shape))
            params[k] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
        net = cls.__new__(cls)
        net.params = params
        return net


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        """Descend on ``grads`` in place."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
