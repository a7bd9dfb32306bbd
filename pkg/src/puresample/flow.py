"""Flow-matching model of the conditional outgoing-direction distribution.

A velocity net ``u(x, t, cond)`` transports a standard 2D Gaussian to the
distribution of accepted walk exits on the projected-hemisphere disk.
Sampling integrates the ODE forward with fixed-step Euler; the density of a
sampled point is recovered by inverting each Euler step exactly (Newton on
the 2x2 system) and accumulating per-step Jacobian determinants, so sampler
and density agree by construction up to the solver tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .dataset import Dataset
from .geom import disk_to_dir, gaussian2d_pdf, gaussian2d_sample, sample_uniform_hemisphere
from .rng import Rng

log = logging.getLogger(__name__)

MAX_REDRAWS = 32
DISK_EDGE = 1.0 - 1e-6
_NEWTON_TOL = 1e-11
_NEWTON_MAX_ITERS = 12


@dataclass
class NeuralTexture:
    """Trainable 2D grid of latent features, bilinearly interpolated."""

    data: np.ndarray  # (h, w, f)

    @property
    def feature_dim(self) -> int:
        return self.data.shape[2]

    def copy(self) -> "NeuralTexture":
        return NeuralTexture(self.data.copy())

    def _coords(self, uv):
        h, w, _ = self.data.shape
        x = np.clip(uv[:, 0] * w - 0.5, 0.0, w - 1.0)
        y = np.clip(uv[:, 1] * h - 0.5, 0.0, h - 1.0)
        x0 = np.minimum(x.astype(np.int64), w - 2) if w > 1 else np.zeros(len(x), np.int64)
        y0 = np.minimum(y.astype(np.int64), h - 2) if h > 1 else np.zeros(len(y), np.int64)
        fx = x - x0
        fy = y - y0
        return x0, y0, fx, fy

    def lookup(self, uv) -> np.ndarray:
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        x0, y0, fx, fy = self._coords(uv)
        d = self.data
        f00 = d[y0, x0]
        f10 = d[y0, x0 + 1]
        f01 = d[y0 + 1, x0]
        f11 = d[y0 + 1, x0 + 1]
        wx = fx[:, None]
        wy = fy[:, None]
        return (
            f00 * (1 - wx) * (1 - wy)
            + f10 * wx * (1 - wy)
            + f01 * (1 - wx) * wy
            + f11 * wx * wy
        )

    def scatter_grad(self, uv, grad) -> np.ndarray:
        """Accumulate per-sample feature gradients back onto the grid."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        x0, y0, fx, fy = self._coords(uv)
        out = np.zeros_like(self.data)
        wx = fx[:, None]
        wy = fy[:, None]
        np.add.at(out, (y0, x0), grad * (1 - wx) * (1 - wy))
        np.add.at(out, (y0, x0 + 1), grad * wx * (1 - wy))
        np.add.at(out, (y0 + 1, x0), grad * (1 - wx) * wy)
        np.add.at(out, (y0 + 1, x0 + 1), grad * wx * wy)
        return out


def make_texture(rng: Rng, size: int = 256, feature_dim: int = 32) -> NeuralTexture:
    return NeuralTexture(rng.normal((size, size, feature_dim)) * 0.1)


def tv_loss(texture: NeuralTexture):
    """Total variation of the latent grid (L1 neighbor differences, no
    wraparound). Returns (loss, gradient w.r.t. the grid)."""
    t = texture.data if isinstance(texture, NeuralTexture) else np.asarray(texture, dtype=np.float64)
    dx = t[:, 1:, :] - t[:, :-1, :]
    dy = t[1:, :, :] - t[:-1, :, :]
    loss = np.abs(dx).sum() + np.abs(dy).sum()
    grad = np.zeros_like(t)
    sx = np.sign(dx)
    sy = np.sign(dy)
    grad[:, 1:, :] += sx
    grad[:, :-1, :] -= sx
    grad[1:, :, :] += sy
    grad[:-1, :, :] -= sy
    return loss, grad


@dataclass
class FlowModel:
    """Velocity net plus inference-step count.

    Net input layout: [x (2), t (1), incident direction (3),
    channel one-hot (3), latent feature (feature_dim, sv only)].
    """

    net: nn.DenseNet
    steps: int = 50
    sv: bool = False
    feature_dim: int = 0
    train_log: list = field(default_factory=list)

    @property
    def cond_dim(self) -> int:
        return 6 + self.feature_dim

    def copy(self) -> "FlowModel":
        return replace(self, net=self.net.copy(), train_log=list(self.train_log))


def make_flow_model(rng: Rng, sv=False, feature_dim=0, hidden=None, n_hidden=5, steps=50) -> FlowModel:
    if hidden is None:
        hidden = 128 if sv else 64
    if not sv:
        feature_dim = 0
    sizes = (9 + feature_dim,) + (hidden,) * n_hidden + (2,)
    return FlowModel(net=nn.make_net(rng, sizes), steps=steps, sv=sv, feature_dim=feature_dim)


def build_cond(wi_dirs, channels, features=None) -> np.ndarray:
    """Stack conditioning rows from directions, channel ids, and features."""
    wi_dirs = np.atleast_2d(np.asarray(wi_dirs, dtype=np.float64))
    channels = np.atleast_1d(np.asarray(channels))
    onehot = np.zeros((len(channels), 3))
    onehot[np.arange(len(channels)), channels.astype(int)] = 1.0
    parts = [wi_dirs, onehot]
    if features is not None:
        parts.append(np.atleast_2d(np.asarray(features, dtype=np.float64)))
    return np.concatenate(parts, axis=1)


def _net_inputs(x, t, cond):
    return np.concatenate([x, t[:, None], cond], axis=1)


def velocity(model: FlowModel, x, t, cond) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    if cond.shape[0] == 1 and x.shape[0] > 1:
        cond = np.broadcast_to(cond, (x.shape[0], cond.shape[1]))
    t = np.full(x.shape[0], t) if np.isscalar(t) else np.asarray(t, dtype=np.float64)
    return nn.forward(model.net, _net_inputs(x, t, cond))


# -- training -----------------------------------------------------------------


def cfm_loss(model: FlowModel, x1, cond, rng: Rng, x0=None):
    """Conditional flow-matching loss on a batch.

    Draws t ~ U[0,1] and base points X0 ~ g per element (unless a coupled
    ``x0`` is given, as in distillation), regresses the velocity at the
    linear interpolant onto X1 - X0. Returns (loss, parameter gradients,
    conditioning-input gradients).
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    b = x1.shape[0]
    if b == 0:
        raise ValueError("cfm_loss: empty batch")
    t = rng.uniform(b)
    if x0 is None:
        x0 = gaussian2d_sample(rng, b)
    else:
        x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    xt = t[:, None] * x1 + (1.0 - t[:, None]) * x0
    target = x1 - x0
    inputs = _net_inputs(xt, t, cond)
    u = nn.forward(model.net, inputs)
    resid = u - target
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    if not np.isfinite(loss):
        raise ValueError("cfm_loss: non-finite loss")
    upstream = 2.0 * resid / b
    param_grads, input_grad = nn.backward(model.net, inputs, upstream)
    cond_grad = input_grad[:, 3:]
    return loss, param_grads, cond_grad


@dataclass
class FlowTrainConfig:
    epochs: int = 500
    lr: float = 3e-3
    batch: int = 16384
    steps: int = 50
    hidden: int | None = None
    n_hidden: int = 5
    texture_size: int = 256
    latent_dim: int = 32
    tv_lambda: float = 1e-4
    lr_decay: str = "cosine"  # anneal to ~0 over the run; "none" keeps lr fixed
    log_every: int = 0


def train_flow(dataset: Dataset, config: FlowTrainConfig, rng: Rng):
    """Train a flow model on the accepted samples of a dataset.

    Returns (model, texture) where texture is None for non-sv data. The sv
    path jointly optimizes the latent texture with a total-variation
    penalty.
    """
    sv = dataset.sv
    acc = dataset.accepted_mask()
    counts = np.bincount(dataset.channel[acc], minlength=3)
    for c in range(3):
        if counts[c] == 0:
            raise ValueError(f"channel {c} has no accepted samples")
    x1 = dataset.wo[acc].astype(np.float64)
    wi_dirs = disk_to_dir(dataset.wi[acc].astype(np.float64))
    channels = dataset.channel[acc]
    uv = dataset.uv[acc].astype(np.float64) if sv else None

    texture = make_texture(rng.substream(10), config.texture_size, config.latent_dim) if sv else None
    model = make_flow_model(
        rng.substream(11),
        sv=sv,
        feature_dim=config.latent_dim if sv else 0,
        hidden=config.hidden,
        n_hidden=config.n_hidden,
        steps=config.steps,
    )
    base_cond = build_cond(wi_dirs, channels)  # feature columns appended per batch

    params = model.net.params()
    if sv:
        params = params + [texture.data]
    adam = nn.make_adam(params, config.lr)
    n = x1.shape[0]
    batch = min(config.batch, n)
    order_rng = rng.substream(12)
    draw_rng = rng.substream(13)
    model.train_log = []
    for epoch in range(config.epochs):
        if config.lr_decay == "cosine":
            adam.lr = config.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / config.epochs))
        perm = order_rng.permutation(n)
        losses = []
        for lo in range(0, n, batch):
            idx = perm[lo : lo + batch]
            if sv:
                feats = texture.lookup(uv[idx])
                cond = np.concatenate([base_cond[idx], feats], axis=1)
            else:
                cond = base_cond[idx]
            loss, pgrads, cond_grad = cfm_loss(model, x1[idx], cond, draw_rng)
            if sv:
                tex_grad = texture.scatter_grad(uv[idx], cond_grad[:, 6:])
                tvl, tvg = tv_loss(texture)
                tex_grad += config.tv_lambda * tvg
                loss += config.tv_lambda * tvl
                grads = pgrads + [tex_grad]
            else:
                grads = pgrads
            nn.adam_step(adam, params, grads)
            losses.append(loss)
        model.train_log.append(float(np.mean(losses)))
        if config.log_every and (epoch + 1) % config.log_every == 0:
            log.info("flow epoch %d/%d loss %.5f", epoch + 1, config.epochs, model.train_log[-1])
    model.net.snap_f32()
    if sv:
        texture.data = texture.data.astype(np.float32).astype(np.float64)
    return model, texture


# -- inference ------------------------------------------------------------------


def _integrate_forward(model: FlowModel, x0, cond):
    x = np.array(x0, dtype=np.float64)
    dt = 1.0 / model.steps
    for k in range(model.steps):
        x += dt * velocity(model, x, k * dt, cond)
    return x


def flow_sample(model: FlowModel, cond, rng: Rng, n: int | None = None):
    """Draw sample(s) from the learned conditional distribution.

    Integrates base draws through the velocity field; finishes outside the
    unit disk trigger a redraw (up to 32 rounds) and finally a radial clamp.
    Returns (disk points, density per projected solid angle at them).
    """
    m = 1 if n is None else n
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    cond_b = np.broadcast_to(cond, (m, cond.shape[1])) if cond.shape[0] == 1 else cond
    x = _integrate_forward(model, gaussian2d_sample(rng, m), cond_b)
    off = np.sum(x * x, axis=1) > 1.0
    tries = 0
    while off.any() and tries < MAX_REDRAWS:
        redo = _integrate_forward(model, gaussian2d_sample(rng, int(off.sum())), cond_b[off])
        x[off] = redo
        off = np.sum(x * x, axis=1) > 1.0
        tries += 1
    if off.any():
        log.debug("flow_sample: clamping %d stubborn off-disk samples", int(off.sum()))
        r = np.sqrt(np.sum(x[off] ** 2, axis=1))
        x[off] *= (DISK_EDGE / r)[:, None]
    pdf = flow_pdf(model, cond_b, x)
    if n is None:
        return x[0], float(pdf[0])
    return x, pdf


def flow_pdf(model: FlowModel, cond, wo) -> np.ndarray:
    """Density (per projected solid angle) of the discretized sampler.

    Each forward Euler step ``x -> x + dt u(x, t)`` is inverted exactly by
    Newton iteration; per-step log|det| of the forward step Jacobian
    ``I + dt J`` accumulates into the change of variables from the base
    Gaussian. Zero outside the unit disk and for non-invertible steps.
    """
    pts = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    if cond.shape[0] == 1 and pts.shape[0] > 1:
        cond = np.broadcast_to(cond, (pts.shape[0], cond.shape[1]))
    b = pts.shape[0]
    inside = np.sum(pts * pts, axis=1) <= 1.0 + 1e-12
    x = pts.copy()
    logdet = np.zeros(b)
    alive = inside.copy()
    dt = 1.0 / model.steps
    for k in range(model.steps - 1, -1, -1):
        if not alive.any():
            break
        t = k * dt
        idx = np.where(alive)[0]
        y = x[idx]
        c = cond[idx]
        # initial guess: explicit reverse step
        xi = y - dt * velocity(model, y, t, c)
        converged = np.zeros(len(idx), dtype=bool)
        jac = np.zeros((len(idx), 2, 2))
        for _ in range(_NEWTON_MAX_ITERS):
            inputs = _net_inputs(xi, np.full(len(idx), t), c)
            u, jraw = nn.forward_and_jacobian_2d(model.net, inputs)
            f = xi + dt * u - y
            jnow = np.eye(2)[None, :, :] + dt * jraw
            jac = jnow
            res = np.abs(f).max(axis=1)
            newly = res < _NEWTON_TOL
            converged |= newly
            if converged.all():
                break
            det = jnow[:, 0, 0] * jnow[:, 1, 1] - jnow[:, 0, 1] * jnow[:, 1, 0]
            bad = np.abs(det) < 1e-300
            det = np.where(bad, 1.0, det)
            dx0 = (jnow[:, 1, 1] * f[:, 0] - jnow[:, 0, 1] * f[:, 1]) / det
            dx1 = (-jnow[:, 1, 0] * f[:, 0] + jnow[:, 0, 0] * f[:, 1]) / det
            step = np.stack([dx0, dx1], axis=1)
            xi = xi - np.where(newly[:, None] | bad[:, None], 0.0, step)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        ok = converged & (det > 1e-300)
        if not ok.all():
            log.debug("flow_pdf: %d rows hit a singular or non-converged step", int((~ok).sum()))
        logdet[idx[ok]] -= np.log(det[ok])
        alive[idx[~ok]] = False
        x[idx] = xi
    pdf = np.zeros(b)
    pdf[alive] = gaussian2d_pdf(x[alive]) * np.exp(logdet[alive])
    pdf[~inside] = 0.0
    return pdf


def flow_pdf_scalar(model: FlowModel, cond, wo) -> float:
    return float(flow_pdf(model, cond, np.asarray(wo, dtype=np.float64)[None, :])[0])


# -- distillation ----------------------------------------------------------------


@dataclass
class ReflowConfig:
    epochs: int = 3000
    pairs_per_epoch: int = 1_048_576
    lr: float = 3e-3
    batch: int = 16384
    student_steps: int = 10


def reflow_distill(model: FlowModel, config: ReflowConfig, rng: Rng, texture: NeuralTexture | None = None) -> FlowModel:
    """Rectified-flow distillation: retrain a copy of the teacher on its own
    (base draw, ODE output) couplings, then run it with fewer steps."""
    student = model.copy()
    student.train_log = []
    params = student.net.params()
    adam = nn.make_adam(params, config.lr)
    pair_rng = rng.substream(20)
    draw_rng = rng.substream(21)
    for epoch in range(config.epochs):
        npairs = config.pairs_per_epoch
        wi = sample_uniform_hemisphere(pair_rng, npairs)
        channel = pair_rng.integers(0, 3, size=npairs)
        if model.sv:
            uv = pair_rng.uniform((npairs, 2))
            feats = texture.lookup(uv)
            cond = build_cond(wi, channel, feats)
        else:
            cond = build_cond(wi, channel)
        x0 = gaussian2d_sample(pair_rng, npairs)
        x1 = _integrate_forward(model, x0, cond)
        losses = []
        for lo in range(0, npairs, config.batch):
            sl = slice(lo, lo + config.batch)
            loss, pgrads, _ = cfm_loss(student, x1[sl], cond[sl], draw_rng, x0=x0[sl])
            nn.adam_step(adam, params, pgrads)
            losses.append(loss)
        student.train_log.append(float(np.mean(losses)))
    student.steps = config.student_steps
    student.net.snap_f32()
    return student
