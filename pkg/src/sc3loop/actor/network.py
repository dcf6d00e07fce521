"""Pairing network in plain numpy (float64), with Adam.

Sensor and actuator traits pass through one-layer encoders; every
(sensor, actuator) pair then goes through a shared MLP that outputs a
scalar score. The first MLP layer acts on the concatenation
[enc_s, enc_a], which is computed as enc_s @ Ws + enc_a @ Wa so the
S x K x 256 tensor is never materialized.
"""
import math

import numpy as np
from numba import njit

from ..rng import stream

PARAM_ORDER = ("enc_s.W", "enc_s.b", "enc_a.W", "enc_a.b", "pair1.Ws", "pair1.Wa",
               "pair1.b", "pair2.W", "pair2.b", "pair3.W", "pair3.b", "head.W", "head.b")


@njit(cache=True)
def leaky_relu(z, slope):
    out = np.empty_like(z)
    zf, of = z.ravel(), out.ravel()
    for i in range(zf.size):
        v = zf[i]
        of[i] = v if v > 0 else slope * v
    return out


@njit(cache=True)
def _leaky_relu_back(d, act, slope):
    # in place; act > 0 exactly where the pre-activation was > 0
    df, af = d.ravel(), act.ravel()
    for i in range(af.size):
        if not af[i] > 0:
            df[i] *= slope
    return d


def column_softmax(raw, mask=None):
    """Softmax over sensors (axis -2) with masked entries forced to zero."""
    raw = np.asarray(raw, dtype=float)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), raw.shape)
        if not np.all(mask.any(axis=-2)):
            raise ValueError("a column has no admissible sensor")
        raw = np.where(mask, raw, -np.inf)
    z = raw - raw.max(axis=-2, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-2, keepdims=True)


def _check_targets(mask, targets):
    if not np.all(mask[targets, np.arange(mask.shape[1])[None, :]]):
        raise ValueError("a target pairs an actuator with a sensor outside its range")


class PairingPolicy:
    """Weights and forward/backward passes of the pairing network."""

    def __init__(self, params, slope=0.1):
        self.params = params
        self.slope = slope

    @property
    def widths(self):
        p = self.params
        return (p["enc_s.W"].shape[1], p["pair1.Ws"].shape[1], p["pair2.W"].shape[1],
                p["pair3.W"].shape[1])

    @classmethod
    def initialize(cls, seed, enc_dim=128, hidden=(512, 256, 128), slope=0.1):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        rng = stream(seed, "policy_init")
        h1, h2, h3 = hidden

        def u(fan_in, shape):
            b = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-b, b, size=shape)

        params = {
            "enc_s.W": u(2, (2, enc_dim)), "enc_s.b": u(2, enc_dim),
            "enc_a.W": u(2, (2, enc_dim)), "enc_a.b": u(2, enc_dim),
            "pair1.Ws": u(2 * enc_dim, (enc_dim, h1)), "pair1.Wa": u(2 * enc_dim, (enc_dim, h1)),
            "pair1.b": u(2 * enc_dim, h1),
            "pair2.W": u(h1, (h1, h2)), "pair2.b": u(h1, h2),
            "pair3.W": u(h2, (h2, h3)), "pair3.b": u(h2, h3),
            "head.W": u(h3, (h3, 1)), "head.b": u(h3, 1),
        }
        return cls(params, slope)

    def copy(self):
        return PairingPolicy({k: v.copy() for k, v in self.params.items()}, self.slope)

    # -- forward
    def _forward(self, xs, xa):
        """Batched pass; xs is G x S x 2, xa is G x K x 2."""
        p, a = self.params, self.slope
        G, S, _ = xs.shape
        K = xa.shape[1]
        hs = leaky_relu(xs.reshape(-1, 2) @ p["enc_s.W"] + p["enc_s.b"], a)     # GS x e
        ha = leaky_relu(xa.reshape(-1, 2) @ p["enc_a.W"] + p["enc_a.b"], a)     # GK x e
        ps = (hs @ p["pair1.Ws"]).reshape(G, S, 1, -1)
        pa = (ha @ p["pair1.Wa"] + p["pair1.b"]).reshape(G, 1, K, -1)
        a1 = leaky_relu((ps + pa).reshape(G * S * K, -1), a)
        a2 = leaky_relu(a1 @ p["pair2.W"] + p["pair2.b"], a)
        a3 = leaky_relu(a2 @ p["pair3.W"] + p["pair3.b"], a)
        raw = (a3 @ p["head.W"])[:, 0] + p["head.b"][0]
        cache = (G, S, K, xs, xa, hs, ha, a1, a2, a3)
        return raw.reshape(G, S, K), cache

    def scores(self, xs, xa):
        """Raw pair scores Y_raw (S x K) for one instance."""
        raw, _ = self._forward(np.asarray(xs, float)[None], np.asarray(xa, float)[None])
        return raw[0]

    def forward(self, xs, xa, mask):
        """(Y, Y_raw): masked column-softmax probabilities and raw scores."""
        raw = self.scores(xs, xa)
        return column_softmax(raw, mask), raw

    # -- loss
    def loss_and_grad(self, xs, xa, mask, targets):
        """Mean per-actuator cross-entropy of the masked softmax and its gradient.

        xs: G x S x 2, xa: G x K x 2, mask: S x K, targets: G x K sensor ids.
        """
        xs = np.asarray(xs, dtype=float)
        xa = np.asarray(xa, dtype=float)
        targets = np.asarray(targets, dtype=int)
        G, S, _ = xs.shape
        K = xa.shape[1]
        mask = np.asarray(mask, dtype=bool)
        cols = np.arange(K)
        _check_targets(mask, targets)
        raw, cache = self._forward(xs, xa)
        y = column_softmax(raw, mask)
        gi = np.arange(G)[:, None]
        picked = y[gi, targets, cols[None, :]]
        loss = float(-np.log(picked).mean())
        d_raw = y.copy()
        d_raw[gi, targets, cols[None, :]] -= 1.0
        d_raw /= G * K
        return loss, self._backward(d_raw, cache)

    def loss(self, xs, xa, mask, targets):
        xs = np.asarray(xs, dtype=float)
        xa = np.asarray(xa, dtype=float)
        targets = np.asarray(targets, dtype=int)
        _check_targets(np.asarray(mask, dtype=bool), targets)
        raw, _ = self._forward(xs, xa)
        y = column_softmax(raw, mask)
        K = xa.shape[1]
        picked = y[np.arange(len(xs))[:, None], targets, np.arange(K)[None, :]]
        return float(-np.log(picked).mean())

    def _backward(self, d_raw, cache):
        p, a = self.params, self.slope
        G, S, K, xs, xa, hs, ha, a1, a2, a3 = cache
        back = _leaky_relu_back

        g = {}
        d = np.ascontiguousarray(d_raw.reshape(-1, 1))
        g["head.W"] = a3.T @ d
        g["head.b"] = np.array([d.sum()])
        dz3 = back(d @ p["head.W"].T, a3, a)
        g["pair3.W"] = a2.T @ dz3
        g["pair3.b"] = dz3.sum(axis=0)
        dz2 = back(dz3 @ p["pair3.W"].T, a2, a)
        g["pair2.W"] = a1.T @ dz2
        g["pair2.b"] = dz2.sum(axis=0)
        dz1 = back(dz2 @ p["pair2.W"].T, a1, a).reshape(G, S, K, -1)
        d_ps = dz1.sum(axis=2).reshape(G * S, -1)
        d_pa = dz1.sum(axis=1).reshape(G * K, -1)
        g["pair1.Ws"] = hs.T @ d_ps
        g["pair1.Wa"] = ha.T @ d_pa
        g["pair1.b"] = d_pa.sum(axis=0)
        dzs = back(d_ps @ p["pair1.Ws"].T, hs, a)
        dza = back(d_pa @ p["pair1.Wa"].T, ha, a)
        g["enc_s.W"] = xs.reshape(-1, 2).T @ dzs
        g["enc_s.b"] = dzs.sum(axis=0)
        g["enc_a.W"] = xa.reshape(-1, 2).T @ dza
        g["enc_a.b"] = dza.sum(axis=0)
        return g


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def update(self, params, grads, lr):
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for k in PARAM_ORDER:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_step(policy: PairingPolicy, opt: Adam, xs, xa, mask, targets, lr) -> float:
    """One Adam update on a mini-batch; returns the loss before the update."""
    loss, grads = policy.loss_and_grad(xs, xa, mask, targets)
    opt.update(policy.params, grads, lr)
    return loss
