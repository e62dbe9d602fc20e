"""Neural network layers with explicit forward caches and reverse-mode gradients.

All layers operate on per-node feature matrices H of shape (N, C).  Graph
layers take a dict of precomputed propagation operators for the current graph
(see `graph_operators`).  Gradients are accumulated into `.grads` by
`backward`, which returns the gradient with respect to the layer input.
"""

from __future__ import annotations

import numpy as np


def graph_operators(adjacency: np.ndarray) -> dict:
    """Propagation matrices used by the graph layers.

    gcn:  D̂^{-1/2} (A + I) D̂^{-1/2} with D̂ the degree of A + I
    sym:  D^{-1/2} A D^{-1/2}
    mean: D^{-1} A  (row-normalized neighbor averaging)
    """
    a = np.asarray(adjacency, dtype=np.float64)
    n = a.shape[0]
    a_hat = a + np.eye(n)
    d_hat = a_hat.sum(axis=1)
    inv_sqrt_hat = 1.0 / np.sqrt(d_hat)
    gcn = inv_sqrt_hat[:, None] * a_hat * inv_sqrt_hat[None, :]
    deg = a.sum(axis=1)
    safe = np.where(deg > 0, deg, 1.0)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(safe), 0.0)
    sym = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    mean = a / safe[:, None]
    return {"gcn": gcn, "sym": sym, "mean": mean}


class Layer:
    """Base: subclasses define params/grads dicts and forward/backward."""

    needs_graph = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def zero_grads(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def init_weights(self, rng: np.random.Generator):
        pass

    def forward(self, h, ops=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Dense(Layer):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.params = {"W": np.zeros((in_ch, out_ch)), "b": np.zeros(out_ch)}
        self.zero_grads()

    def init_weights(self, rng):
        self.params["W"] = _glorot(rng, self.in_ch, self.out_ch)
        self.params["b"] = np.zeros(self.out_ch)

    def forward(self, h, ops=None):
        self._cache = h
        return h @ self.params["W"] + self.params["b"]

    def backward(self, grad_out):
        h = self._cache
        self.grads["W"] += h.T @ grad_out
        self.grads["b"] += grad_out.sum(axis=0)
        return grad_out @ self.params["W"].T


class GCNConv(Layer):
    """H' = S H W + b with S the renormalized propagation matrix."""

    needs_graph = True

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.params = {"W": np.zeros((in_ch, out_ch)), "b": np.zeros(out_ch)}
        self.zero_grads()

    def init_weights(self, rng):
        self.params["W"] = _glorot(rng, self.in_ch, self.out_ch)
        self.params["b"] = np.zeros(self.out_ch)

    def forward(self, h, ops=None):
        s = ops["gcn"]
        sh = s @ h
        self._cache = (s, sh)
        return sh @ self.params["W"] + self.params["b"]

    def backward(self, grad_out):
        s, sh = self._cache
        self.grads["W"] += sh.T @ grad_out
        self.grads["b"] += grad_out.sum(axis=0)
        return s.T @ (grad_out @ self.params["W"].T)


class SAGEConv(Layer):
    """H' = H W_self + (M H) W_neigh + b with M the neighbor-mean operator."""

    needs_graph = True

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.params = {
            "W_self": np.zeros((in_ch, out_ch)),
            "W_neigh": np.zeros((in_ch, out_ch)),
            "b": np.zeros(out_ch),
        }
        self.zero_grads()

    def init_weights(self, rng):
        self.params["W_self"] = _glorot(rng, self.in_ch, self.out_ch)
        self.params["W_neigh"] = _glorot(rng, self.in_ch, self.out_ch)
        self.params["b"] = np.zeros(self.out_ch)

    def forward(self, h, ops=None):
        m = ops["mean"]
        mh = m @ h
        self._cache = (m, h, mh)
        return (h @ self.params["W_self"] + mh @ self.params["W_neigh"]
                + self.params["b"])

    def backward(self, grad_out):
        m, h, mh = self._cache
        self.grads["W_self"] += h.T @ grad_out
        self.grads["W_neigh"] += mh.T @ grad_out
        self.grads["b"] += grad_out.sum(axis=0)
        return (grad_out @ self.params["W_self"].T
                + m.T @ (grad_out @ self.params["W_neigh"].T))


class TAGConv(Layer):
    """H' = sum_{k=0..K} S^k H W_k + b with S the symmetric normalized adjacency."""

    needs_graph = True

    def __init__(self, in_ch: int, out_ch: int, hops: int = 3):
        super().__init__()
        if hops < 0:
            raise ValueError("hops must be >= 0")
        self.in_ch, self.out_ch, self.hops = in_ch, out_ch, hops
        self.params = {f"W{k}": np.zeros((in_ch, out_ch)) for k in range(hops + 1)}
        self.params["b"] = np.zeros(out_ch)
        self.zero_grads()

    def init_weights(self, rng):
        for k in range(self.hops + 1):
            self.params[f"W{k}"] = _glorot(rng, self.in_ch, self.out_ch)
        self.params["b"] = np.zeros(self.out_ch)

    def forward(self, h, ops=None):
        s = ops["sym"]
        powers = [h]
        for _ in range(self.hops):
            powers.append(s @ powers[-1])
        self._cache = (s, powers)
        out = powers[0] @ self.params["W0"] + self.params["b"]
        for k in range(1, self.hops + 1):
            out += powers[k] @ self.params[f"W{k}"]
        return out

    def backward(self, grad_out):
        s, powers = self._cache
        self.grads["b"] += grad_out.sum(axis=0)
        grad_in = np.zeros_like(powers[0])
        # S is symmetric, so (S^k)^T = S^k
        for k in range(self.hops + 1):
            self.grads[f"W{k}"] += powers[k].T @ grad_out
        for k in range(self.hops + 1):
            g = grad_out @ self.params[f"W{k}"].T
            for _ in range(k):
                g = s.T @ g
            grad_in += g
        return grad_in


class ReLU(Layer):
    def forward(self, h, ops=None):
        self._cache = h > 0
        return np.where(self._cache, h, 0.0)

    def backward(self, grad_out):
        return np.where(self._cache, grad_out, 0.0)


class Sigmoid(Layer):
    def forward(self, h, ops=None):
        out = 1.0 / (1.0 + np.exp(-h))
        self._cache = out
        return out

    def backward(self, grad_out):
        out = self._cache
        return grad_out * out * (1.0 - out)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient with respect to `pred`."""
    pred = np.asarray(pred, float).reshape(-1)
    target = np.asarray(target, float).reshape(-1)
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad
