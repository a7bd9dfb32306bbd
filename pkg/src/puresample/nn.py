"""Dense networks with explicit reverse-mode gradients and Adam.

Everything is plain float64 numpy. Networks are small (a few thousand
parameters), so forward/backward passes are batched matrix products and the
2x2 input Jacobian needed by the flow density is computed exactly with two
reverse passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

# Forward-pass row counter, used to account velocity-net evaluations when
# comparing distilled samplers against their teachers.
_eval_rows = 0


def reset_eval_count():
    global _eval_rows
    _eval_rows = 0


def get_eval_count() -> int:
    return _eval_rows


def silu(x):
    return x / (1.0 + np.exp(-x))


def _silu_grad_from_sig(z, s):
    return s * (1.0 + z * (1.0 - s))


@dataclass
class DenseNet:
    """Fully connected net; hidden activations are SiLU, output is linear.

    ``residual[k]`` marks hidden layer k as a residual block: the skip input
    is added to the pre-activation, which requires matching widths. The
    smooth activation keeps the velocity field C^1 so accumulated Jacobians
    stay continuous.
    """

    sizes: tuple
    weights: list
    biases: list
    activation: str = "silu"
    residual: tuple = ()

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params: list):
        k = 0
        for i in range(len(self.weights)):
            self.weights[i] = params[k]
            self.biases[i] = params[k + 1]
            k += 2

    def copy(self) -> "DenseNet":
        return DenseNet(
            sizes=self.sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            residual=self.residual,
        )

    def snap_f32(self):
        """Round parameters to float32-representable values (still stored
        as float64) so serialized f32 blobs reproduce evaluations bitwise."""
        self.weights = [w.astype(np.float32).astype(np.float64) for w in self.weights]
        self.biases = [b.astype(np.float32).astype(np.float64) for b in self.biases]


def make_net(rng: Rng, sizes, activation="silu", residual=()) -> DenseNet:
    """He-style fan-in uniform initialization."""
    sizes = tuple(int(s) for s in sizes)
    if residual:
        residual = tuple(bool(r) for r in residual)
        if len(residual) != len(sizes) - 2:
            raise ValueError("residual flags must cover the hidden layers")
        for k, r in enumerate(residual):
            if r and sizes[k] != sizes[k + 1]:
                raise ValueError("residual layer requires matching widths")
    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / n_in)
        ws.append(rng.uniform((n_out, n_in)) * 2.0 * bound - bound)
        bs.append(np.zeros(n_out))
    return DenseNet(sizes=sizes, weights=ws, biases=bs, activation=activation, residual=residual)


def zero_net(sizes, activation="silu", residual=()) -> DenseNet:
    sizes = tuple(int(s) for s in sizes)
    ws = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(o) for o in sizes[1:]]
    return DenseNet(sizes=sizes, weights=ws, biases=bs, activation=activation, residual=tuple(residual))


def _as_batch(x, width, name):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{name}: expected shape (batch, {width}), got {x.shape}")
    return x, single


def forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the net; accepts a single input vector or a batch."""
    x, single = _as_batch(x, net.n_in, "forward input")
    h = _forward_cached(net, x)[0]
    return h[0] if single else h


def _forward_cached(net: DenseNet, x):
    """Returns (output, per-layer cache of (z, sigmoid(z), input, residual))."""
    global _eval_rows
    _eval_rows += x.shape[0]
    n_layers = len(net.weights)
    cache = []
    h = x
    for k in range(n_layers):
        z = h @ net.weights[k].T + net.biases[k]
        last = k == n_layers - 1
        res = (not last) and k > 0 and k - 1 < len(net.residual) and net.residual[k - 1]
        if res:
            z = z + h
        if last or net.activation == "identity":
            cache.append((z, None, h, res))
            h = z
        else:
            s = 1.0 / (1.0 + np.exp(-z))
            cache.append((z, s, h, res))
            h = z * s
    return h, cache


def backward(net: DenseNet, x, upstream):
    """Gradients of <upstream, forward(net, x)>.

    Returns (param_grads, input_grad) where param_grads matches
    ``net.params()`` order. Batched inputs sum parameter gradients over the
    batch and return per-row input gradients.
    """
    x, single = _as_batch(x, net.n_in, "backward input")
    upstream, su = _as_batch(upstream, net.n_out, "backward upstream")
    if upstream.shape[0] != x.shape[0]:
        raise ValueError("backward: batch sizes of x and upstream differ")
    _, cache = _forward_cached(net, x)
    n_layers = len(net.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    delta = upstream
    for k in range(n_layers - 1, -1, -1):
        z, s, h_in, res = cache[k]
        if s is not None:
            delta = delta * _silu_grad_from_sig(z, s)
        grads_w[k] = delta.T @ h_in
        grads_b[k] = delta.sum(axis=0)
        dh = delta @ net.weights[k]
        if res:
            dh = dh + delta
        delta = dh
    params_g = []
    for gw, gb in zip(grads_w, grads_b):
        params_g.append(gw)
        params_g.append(gb)
    return params_g, (delta[0] if single else delta)


def input_gradient(net: DenseNet, x, upstream) -> np.ndarray:
    """Input gradient only; skips parameter gradient assembly."""
    x, single = _as_batch(x, net.n_in, "input")
    upstream, _ = _as_batch(upstream, net.n_out, "upstream")
    _, cache = _forward_cached(net, x)
    delta = upstream
    for k in range(len(net.weights) - 1, -1, -1):
        z, s, _, res = cache[k]
        if s is not None:
            delta = delta * _silu_grad_from_sig(z, s)
        dh = delta @ net.weights[k]
        if res:
            dh = dh + delta
        delta = dh
    return delta[0] if single else delta


def input_jacobian_2d(net: DenseNet, x, cond=None) -> np.ndarray:
    """Exact Jacobian of the first two outputs w.r.t. the first two inputs.

    ``x`` may be the full input vector, or the 2-vector of spatial inputs
    with ``cond`` providing the remaining entries. Two reverse passes, one
    per output row.
    """
    if cond is not None:
        x = np.concatenate([np.asarray(x, dtype=np.float64), np.asarray(cond, dtype=np.float64)], axis=-1)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    jac = input_jacobian_2d_batch(net, xb)
    return jac[0] if single else jac


def forward_and_jacobian_2d(net: DenseNet, x):
    """One cached forward pass returning (outputs, batched 2x2 Jacobians)."""
    x, _ = _as_batch(x, net.n_in, "jacobian input")
    out, cache = _forward_cached(net, x)
    return out, _jac_from_cache(net, x.shape[0], cache)


def input_jacobian_2d_batch(net: DenseNet, x) -> np.ndarray:
    """Batched 2x2 input Jacobians, shape (batch, 2, 2)."""
    x, _ = _as_batch(x, net.n_in, "jacobian input")
    b = x.shape[0]
    if net.n_out < 2:
        raise ValueError("input_jacobian_2d requires at least 2 outputs")
    _, cache = _forward_cached(net, x)
    return _jac_from_cache(net, b, cache)


def _jac_from_cache(net: DenseNet, b, cache):
    sg = [None] * len(cache)
    for k, (z, s, _, _) in enumerate(cache):
        if s is not None:
            sg[k] = _silu_grad_from_sig(z, s)
    jac = np.empty((b, 2, 2))
    for row in range(2):
        up = np.zeros((b, net.n_out))
        up[:, row] = 1.0
        delta = up
        for k in range(len(net.weights) - 1, -1, -1):
            res = cache[k][3]
            if sg[k] is not None:
                delta = delta * sg[k]
            dh = delta @ net.weights[k]
            if res:
                dh = dh + delta
            delta = dh
        jac[:, row, :] = delta[:, :2]
    return jac


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def make_adam(params: list, lr: float) -> AdamState:
    return AdamState(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """Bias-corrected Adam update; mutates params in place and returns them."""
    if len(params) != len(grads):
        raise ValueError("adam_step: params/grads length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError(f"adam_step: non-finite gradient at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p -= state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
    return params
