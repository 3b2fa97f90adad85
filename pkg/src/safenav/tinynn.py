"""Small dense networks in float64 numpy with hand-written backprop and Adam.

Every network keeps its parameters in one contiguous vector; the per-layer
weight and bias arrays are views into it, so optimizer and target updates run
as single vector operations.
"""

from __future__ import annotations

import numpy as np


def _layout(sizes: list[int]):
    """Offsets of each layer's weight matrix and bias vector inside the flat vector."""
    out, off = [], 0
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        out.append((off, fi, fo, off + fi * fo))
        off += fi * fo + fo
    return out, off


class DenseNet:
    """Feed-forward stack with ReLU hidden layers.

    ``head`` is ``"linear"`` (raw logits) or ``"tanh"``.  Weights are stored as
    ``(fan_in, fan_out)`` matrices so a batch ``x`` of shape ``(B, fan_in)``
    multiplies on the left.
    """

    def __init__(self, sizes, weights, biases, head: str = "linear"):
        if head not in ("linear", "tanh"):
            raise ValueError(f"unknown head {head!r}")
        self.sizes = [int(s) for s in sizes]
        self.head = head
        if len(weights) != len(self.sizes) - 1 or len(biases) != len(weights):
            raise ValueError("layer count does not match sizes")
        layout, total = _layout(self.sizes)
        self.flat = np.empty(total)
        self.weights, self.biases = _views(self.flat, layout)
        for i, (w, b) in enumerate(zip(weights, biases)):
            w, b = np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected "
                                 f"{self.weights[i].shape}/{self.biases[i].shape}")
            self.weights[i][...] = w
            self.biases[i][...] = b

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, head: str = "linear",
             final_scale: float = 1.0) -> "DenseNet":
        """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

        ``final_scale`` shrinks the last layer so initial outputs start near zero.
        """
        sizes = [int(s) for s in sizes]
        weights, biases = [], []
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fi)
            if i == len(sizes) - 2:
                bound *= final_scale
            weights.append(rng.uniform(-bound, bound, size=(fi, fo)))
            biases.append(rng.uniform(-bound, bound, size=fo))
        return cls(sizes, weights, biases, head)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.flat]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, self.weights, self.biases, self.head)

    def same_architecture(self, other: "DenseNet") -> bool:
        return self.sizes == other.sizes and self.head == other.head

    def __eq__(self, other):
        if not isinstance(other, DenseNet):
            return NotImplemented
        return self.same_architecture(other) and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"DenseNet(sizes={self.sizes}, head={self.head!r})"


def _views(flat: np.ndarray, layout):
    ws, bs = [], []
    for off, fi, fo, boff in layout:
        ws.append(flat[off:off + fi * fo].reshape(fi, fo))
        bs.append(flat[boff:boff + fo])
    return ws, bs


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input has shape {x.shape}, network expects {net.in_dim} features")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return x, single


def _forward_cache(net: DenseNet, x: np.ndarray):
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w
        z += b
        if i < last:
            h = np.maximum(z, 0.0, out=z)
        else:
            h = np.tanh(z, out=z) if net.head == "tanh" else z
        acts.append(h)
    return acts


def forward(net: DenseNet, x) -> np.ndarray:
    """Run the network on one input vector or a ``(B, in)`` batch."""
    xb, single = _as_batch(net, x)
    out = _forward_cache(net, xb)[-1]
    return out[0] if single else out


class Grads:
    """Parameter gradients (one flat vector, with per-layer views) and the input gradient."""

    def __init__(self, net: DenseNet, flat: np.ndarray | None, input_grad: np.ndarray | None):
        self.flat = flat
        self.input = input_grad
        if flat is not None:
            self.weights, self.biases = _views(flat, _layout(net.sizes)[0])
        else:
            self.weights = self.biases = None

    @property
    def params(self) -> list[np.ndarray]:
        return [self.flat]


def _backward(net: DenseNet, acts, upstream: np.ndarray, need_params: bool = True) -> Grads:
    g = upstream
    if net.head == "tanh":
        g = g * (1.0 - acts[-1] ** 2)
    grads = Grads(net, np.empty_like(net.flat) if need_params else None, None)
    for i in range(len(net.weights) - 1, -1, -1):
        if need_params:
            np.matmul(acts[i].T, g, out=grads.weights[i])
            np.sum(g, axis=0, out=grads.biases[i])
        g = g @ net.weights[i].T
        if i > 0:
            g *= acts[i] > 0.0
    grads.input = g
    return grads


def gradients(net: DenseNet, x, upstream) -> Grads:
    """Gradients of ``<upstream, forward(net, x)>`` w.r.t. every parameter and ``x``.

    For a batch the parameter gradients are summed over rows and the input
    gradient keeps one row per sample.
    """
    xb, single = _as_batch(net, x)
    up = np.asarray(upstream, dtype=np.float64)
    if single:
        up = up[None, :]
    if up.shape != (xb.shape[0], net.out_dim):
        raise ValueError(f"upstream has shape {up.shape}, expected {(xb.shape[0], net.out_dim)}")
    grads = _backward(net, _forward_cache(net, xb), up)
    if single:
        grads.input = grads.input[0]
    return grads


def forward_backward(net: DenseNet, x: np.ndarray, upstream_fn, need_params: bool = True):
    """Forward a batch, let ``upstream_fn(output)`` return ``(value, upstream)``, backprop.

    Saves a second forward pass when the upstream gradient depends on the output.
    With ``need_params=False`` only the input gradient is computed.
    """
    xb, _ = _as_batch(net, x)
    acts = _forward_cache(net, xb)
    value, up = upstream_fn(acts[-1])
    return value, acts[-1], _backward(net, acts, up, need_params)


class OptimState:
    """Adam moments for a list of parameter arrays."""

    def __init__(self, lr: float, m, v, t: int = 0, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.m, self.v, self.t = lr, list(m), list(v), t
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._scratch = None

    @classmethod
    def for_params(cls, params, lr: float, **kw) -> "OptimState":
        return cls(lr, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)

    def copy(self) -> "OptimState":
        return OptimState(self.lr, [a.copy() for a in self.m], [a.copy() for a in self.v],
                          self.t, self.beta1, self.beta2, self.eps)

    def __eq__(self, other):
        if not isinstance(other, OptimState):
            return NotImplemented
        return ((self.lr, self.t, self.beta1, self.beta2, self.eps)
                == (other.lr, other.t, other.beta1, other.beta2, other.eps)
                and all(np.array_equal(a, b) for a, b in zip(self.m + self.v, other.m + other.v)))


def optim_step(params: list[np.ndarray], grads: list[np.ndarray], st: OptimState):
    """One Adam step with bias correction, applied in place; returns ``(params, st)``.

    Per element: ``p -= lr * (m / c1) / (sqrt(v / c2) + eps)`` with
    ``c1 = 1 - beta1**t`` and ``c2 = 1 - beta2**t``.
    """
    if len(params) != len(grads) or len(params) != len(st.m):
        raise ValueError("parameter, gradient and optimizer-state counts differ")
    for p, g, m in zip(params, grads, st.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient passed to optimizer")
    if st._scratch is None or [s.shape for s, _ in st._scratch] != [p.shape for p in params]:
        st._scratch = [(np.empty_like(p), np.empty_like(p)) for p in params]
    st.t += 1
    b1, b2 = st.beta1, st.beta2
    c1, c2 = 1.0 - b1 ** st.t, 1.0 - b2 ** st.t
    for p, g, m, v, (t1, t2) in zip(params, grads, st.m, st.v, st._scratch):
        m *= b1
        np.multiply(g, 1.0 - b1, out=t1)
        m += t1
        v *= b2
        np.multiply(g, g, out=t1)
        t1 *= 1.0 - b2
        v += t1
        np.divide(v, c2, out=t1)
        np.sqrt(t1, out=t1)
        t1 += st.eps
        np.divide(m, c1, out=t2)
        t2 *= st.lr
        t2 /= t1
        p -= t2
    return params, st


def polyak_update(target: DenseNet, online: DenseNet, rho: float) -> DenseNet:
    """``target <- (1 - rho) * target + rho * online``, in place."""
    if not target.same_architecture(online):
        raise ValueError("target and online networks have different architectures")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"polyak coefficient {rho} outside [0, 1]")
    if rho == 0.0:
        return target
    if rho == 1.0:
        target.flat[...] = online.flat
        return target
    target.flat *= 1.0 - rho
    target.flat += rho * online.flat
    return target
