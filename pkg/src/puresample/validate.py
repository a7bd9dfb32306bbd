"""Statistical validators tying learned models back to their oracles.

Equal-area disk binning (rings at radii sqrt(k/R) crossed with angular
sectors) keeps the expected count uniform, which maximizes chi-square power
against the uniform oracle. The chi-square tail probability is computed
here via the regularized incomplete gamma function rather than imported, so
the validators stand on their own.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowModel, flow_pdf, flow_sample
from .geom import stratified_hemisphere
from .rng import Rng


# -- regularized incomplete gamma and the chi-square tail ----------------------


def _gamma_p_series(a, x):
    term = 1.0 / a
    total = term
    for n in range(1, 10000):
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * 1e-15:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_cf(a, x):
    # Lentz continued fraction for Q(a, x), x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if x < 0 or a <= 0:
        raise ValueError("gamma_q requires x >= 0, a > 0")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_cf(a, x)


def chi2_sf(stat: float, dof: int) -> float:
    """Chi-square survival function (p-value of the statistic)."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    return gamma_q(0.5 * dof, 0.5 * stat)


# -- equal-area disk binning -----------------------------------------------------


def _bin_layout(n_bins: int):
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2 (chi-square needs dof >= 1)")
    rings = int(round(math.sqrt(n_bins)))
    while rings > 1 and n_bins % rings != 0:
        rings -= 1
    sectors = n_bins // rings
    return rings, sectors


def disk_bin_index(points, n_bins: int):
    """Equal-area bin ids for disk points; rings x sectors layout."""
    rings, sectors = _bin_layout(n_bins)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    r2 = np.sum(pts * pts, axis=1)
    ring = np.minimum((r2 * rings).astype(np.int64), rings - 1)
    phi = np.arctan2(pts[:, 1], pts[:, 0]) % (2.0 * math.pi)
    sect = np.minimum((phi / (2.0 * math.pi) * sectors).astype(np.int64), sectors - 1)
    return ring * sectors + sect


def chi2_equal_area_disk(samples, n_bins: int):
    """Pearson chi-square of disk samples against the uniform density.

    Returns (statistic, p-value). Raises when the expected per-bin count is
    below 5; draw more samples instead."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = samples.shape[0]
    expected = n / n_bins
    if expected < 5.0:
        raise ValueError(f"expected count {expected:.1f} per bin is below 5; need more samples")
    counts = np.bincount(disk_bin_index(samples, n_bins), minlength=n_bins)
    stat = float(((counts - expected) ** 2 / expected).sum())
    return stat, chi2_sf(stat, n_bins - 1)


def disk_bin_quadrature(model: FlowModel, cond, n_bins: int, sub: int = 8):
    """Per-bin probability masses of the model density via midpoint
    quadrature in (r^2, phi), ``sub`` x ``sub`` nodes per bin."""
    rings, sectors = _bin_layout(n_bins)
    masses = np.empty(n_bins)
    cell_area = math.pi / n_bins
    for ring in range(rings):
        u0, u1 = ring / rings, (ring + 1) / rings
        us = u0 + (u1 - u0) * (np.arange(sub) + 0.5) / sub
        rr = np.sqrt(us)
        for sect in range(sectors):
            p0, p1 = 2 * math.pi * sect / sectors, 2 * math.pi * (sect + 1) / sectors
            ps = p0 + (p1 - p0) * (np.arange(sub) + 0.5) / sub
            r, phi = np.meshgrid(rr, ps, indexing="ij")
            pts = np.stack([(r * np.cos(phi)).ravel(), (r * np.sin(phi)).ravel()], axis=1)
            vals = flow_pdf(model, cond, pts)
            masses[ring * sectors + sect] = vals.mean() * cell_area
    return masses


def hist_vs_pdf(model: FlowModel, cond, n_samples: int, n_bins: int, rng: Rng):
    """Chi-square agreement between sampler draws and density quadrature.

    Bin probabilities are normalized over the disk, making this a shape
    test; total mass is covered by :func:`normalization`."""
    if n_samples / n_bins < 5.0:
        raise ValueError("expected count per bin below 5; need more samples")
    pts, _ = flow_sample(model, cond, rng, n=n_samples)
    counts = np.bincount(disk_bin_index(pts, n_bins), minlength=n_bins)
    masses = disk_bin_quadrature(model, cond, n_bins)
    total = masses.sum()
    if total <= 0:
        raise ValueError("model density has no mass on the disk")
    expected = n_samples * masses / total
    if expected.min() <= 0:
        return float("inf"), 0.0
    stat = float(((counts - expected) ** 2 / expected).sum())
    return stat, chi2_sf(stat, n_bins - 1)


def normalization(model: FlowModel, cond, grid_n: int = 128) -> float:
    """Midpoint quadrature of the model density over the unit disk on a
    grid_n x grid_n polar (r^2, phi) grid."""
    if grid_n < 64:
        raise ValueError("grid_n must be >= 64")
    us = (np.arange(grid_n) + 0.5) / grid_n
    rr = np.sqrt(us)
    ps = 2.0 * math.pi * (np.arange(grid_n) + 0.5) / grid_n
    r, phi = np.meshgrid(rr, ps, indexing="ij")
    pts = np.stack([(r * np.cos(phi)).ravel(), (r * np.sin(phi)).ravel()], axis=1)
    vals = flow_pdf(model, cond, pts)
    return float(vals.mean() * math.pi)


def furnace(target, n_dirs: int = 64, n_walks: int = 4096, rng: Rng | None = None, channel: int = 0):
    """Max |albedo - 1| over stratified incident directions.

    ``target`` is a scene (Monte Carlo estimate) or a material (albedo
    net). Returns (max deviation, lossless flag); for lossy scenes the
    number is reported but meaningless as a furnace result."""
    from .albedo import albedo_eval, mc_albedo_estimate
    from .material import PureSampleMaterial
    from .microgeo import MicrogeometryScene

    rings = int(round(math.sqrt(n_dirs)))
    dirs = stratified_hemisphere(rings, n_dirs // rings)
    if isinstance(target, MicrogeometryScene):
        if rng is None:
            raise ValueError("furnace on a scene needs an rng")
        lossless = target.is_lossless()
        devs = [
            abs(mc_albedo_estimate(target, d, channel, n_walks, rng.substream(i)) - 1.0)
            for i, d in enumerate(dirs)
        ]
    elif isinstance(target, PureSampleMaterial):
        lossless = True  # the training scene's losslessness is the caller's claim
        a = albedo_eval(target.albedo, dirs)
        devs = np.abs(a - 1.0).max(axis=1)
    else:
        raise TypeError("furnace expects a scene or a material")
    return float(np.max(devs)), lossless


# -- report ----------------------------------------------------------------------


@dataclass
class Report:
    entries: list = field(default_factory=list)

    def add(self, name: str, statistic: float, p: float | None, passed: bool, seed: int, **extra):
        e = {"test": name, "statistic": statistic, "p": p, "pass": bool(passed), "seed": seed}
        e.update(extra)
        self.entries.append(e)
        return e

    @property
    def all_passed(self) -> bool:
        return all(e["pass"] for e in self.entries)

    def to_json(self) -> str:
        return json.dumps({"results": self.entries, "pass": self.all_passed}, indent=2)

    def to_csv(self) -> str:
        lines = ["test,statistic,p,pass,seed"]
        for e in self.entries:
            p = "" if e["p"] is None else f"{e['p']:.6g}"
            lines.append(f"{e['test']},{e['statistic']:.6g},{p},{int(e['pass'])},{e['seed']}")
        return "\n".join(lines) + "\n"


def run_model_report(material, rng: Rng, n_dirs: int = 4, n_samples: int = 100_000, n_bins: int = 64) -> Report:
    """Standard validation suite for a trained material."""
    from .flow import build_cond
    from .geom import sample_uniform_hemisphere

    report = Report()
    flow = material.flow
    dirs = sample_uniform_hemisphere(rng.substream(1), n_dirs)
    for i, d in enumerate(dirs):
        for c in range(3):
            feats = material.texture.lookup(np.array([[0.5, 0.5]])) if material.sv else None
            cond = build_cond(d, np.array([c]), feats)
            norm = normalization(flow, cond, 128)
            report.add(
                f"normalization[dir{i},ch{c}]", norm, None,
                0.95 <= norm <= 1.05, rng.seed,
            )
            stat, p = hist_vs_pdf(flow, cond, n_samples, n_bins, rng.substream(100 + 10 * i + c))
            report.add(f"hist_vs_pdf[dir{i},ch{c}]", stat, p, p > 0.001, rng.seed)
    return report
