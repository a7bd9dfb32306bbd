"""View-dependent albedo: the Monte Carlo estimator and the regression net.

The fraction of walks that survive Russian roulette is an unbiased estimate
of the hemispherical reflectance for the incident direction, so a small net
regressing those per-group ratios (L1 loss) against a spherical-harmonic
encoding of the direction reproduces the albedo term everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .dataset import Dataset
from .geom import disk_to_dir, sh_encode
from .microgeo import MicrogeometryScene, trace_walks
from .rng import Rng


def mc_albedo_estimate(scene: MicrogeometryScene, wi, channel: int, n: int, rng: Rng, uv=None, threads: int = 1) -> float:
    """Fraction of n walks from direction wi that exit (are not absorbed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    wi = np.asarray(wi, dtype=np.float64)
    wi_rep = np.tile(wi, (n, 1))
    uv_rep = None if uv is None else np.tile(np.asarray(uv, dtype=np.float64), (n, 1))
    status, _, _ = trace_walks(scene, wi_rep, channel, rng, uv=uv_rep, threads=threads)
    return float((status == 1).mean())


@dataclass
class AlbedoModel:
    """SH-encoded direction (plus optional latent feature) -> RGB albedo."""

    net: nn.DenseNet
    sv: bool = False
    feature_dim: int = 0
    train_log: list = field(default_factory=list)

    def copy(self) -> "AlbedoModel":
        return replace(self, net=self.net.copy(), train_log=list(self.train_log))


def make_albedo_model(rng: Rng, sv=False, feature_dim=0) -> AlbedoModel:
    if not sv:
        feature_dim = 0
        sizes = (25, 32, 32, 3)
        residual = ()
    else:
        sizes = (25 + feature_dim, 128, 128, 128, 128, 128, 3)
        residual = (False, False, True, False, False)
    return AlbedoModel(
        net=nn.make_net(rng, sizes, residual=residual), sv=sv, feature_dim=feature_dim
    )


def albedo_eval(model: AlbedoModel, wi, feature=None) -> np.ndarray:
    """RGB albedo at incident direction(s), clamped to [0, 1]."""
    wi = np.asarray(wi, dtype=np.float64)
    single = wi.ndim == 1
    enc = sh_encode(np.atleast_2d(wi))
    if model.sv:
        if feature is None:
            raise ValueError("sv albedo model requires a latent feature")
        feat = np.atleast_2d(np.asarray(feature, dtype=np.float64))
        enc = np.concatenate([enc, feat], axis=1)
    elif feature is not None:
        raise ValueError("non-sv albedo model takes no feature")
    out = np.clip(nn.forward(model.net, enc), 0.0, 1.0)
    return out[0] if single else out


@dataclass
class AlbedoTrainConfig:
    iterations: int = 3000
    lr: float = 1e-4
    batch: int = 4096


def _group_targets(dataset: Dataset):
    """Per-(wi[, uv]) acceptance ratios as an (n_groups, 3) RGB target."""
    cols = [dataset.wi]
    if dataset.sv:
        cols.append(dataset.uv)
    key = np.concatenate(cols, axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    n_groups = uniq.shape[0]
    sums = np.zeros((n_groups, 3))
    counts = np.zeros((n_groups, 3))
    np.add.at(sums, (inverse, dataset.channel), dataset.accepted.astype(np.float64))
    np.add.at(counts, (inverse, dataset.channel), 1.0)
    if np.any(counts == 0):
        raise ValueError("a (wi, channel) group has no records")
    targets = sums / counts
    wi_dirs = disk_to_dir(uniq[:, :2].astype(np.float64))
    uv = uniq[:, 2:4].astype(np.float64) if dataset.sv else None
    return wi_dirs, uv, targets


def train_albedo(dataset: Dataset, config: AlbedoTrainConfig, rng: Rng, texture=None) -> AlbedoModel:
    """Fit the albedo net to per-group acceptance ratios with an L1 loss.

    For sv datasets a trained (frozen) neural texture supplies the latent
    feature at each group's uv.
    """
    wi_dirs, uv, targets = _group_targets(dataset)
    if dataset.sv and texture is None:
        raise ValueError("sv albedo training requires the trained texture")
    enc = sh_encode(wi_dirs)
    if dataset.sv:
        enc = np.concatenate([enc, texture.lookup(uv)], axis=1)
    model = make_albedo_model(
        rng.substream(30), sv=dataset.sv, feature_dim=texture.feature_dim if dataset.sv else 0
    )
    params = model.net.params()
    adam = nn.make_adam(params, config.lr)
    n = enc.shape[0]
    batch = min(config.batch, n)
    order = rng.substream(31)
    model.train_log = []
    for it in range(config.iterations):
        idx = order.integers(0, n, size=batch) if batch < n else np.arange(n)
        x = enc[idx]
        y = targets[idx]
        pred = nn.forward(model.net, x)
        resid = pred - y
        loss = float(np.mean(np.abs(resid)))
        upstream = np.sign(resid) / (resid.shape[0] * 3.0)
        grads, _ = nn.backward(model.net, x, upstream)
        nn.adam_step(adam, params, grads)
        if it % 50 == 0:
            model.train_log.append(loss)
    model.net.snap_f32()
    return model
