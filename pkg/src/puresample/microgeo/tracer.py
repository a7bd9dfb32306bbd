"""Forward particle tracer: unit-throughput walks over microgeometry.

``trace_walks`` runs a batch of walks for one color channel and returns
status/outgoing-direction/event arrays. Work is split into fixed-size
chunks, each keyed by its chunk index, so results are bitwise independent
of the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..geom import normalized
from ..rng import Rng, mix64, _GOLDEN, _MASK64
from . import kernels
from .scene import MicroBrdf, MicrogeometryScene

CHUNK = 1 << 16

STATUS_NAMES = {0: "absorbed", 1: "exited", 2: "absorbed"}  # trapped reports as absorbed


@dataclass
class WalkOutcome:
    status: str
    wo: np.ndarray | None
    events: int
    trapped: bool = False


def micro_sample(brdf: MicroBrdf, wi_local, channel: int, rng: Rng):
    """Importance-sample one micro-interaction in the local frame.

    Returns (outgoing direction, weight in [0, 1]). ``wi_local`` points
    toward the source with z > 0 for surface kinds; for phase kinds it is
    the current propagation direction.
    """
    wi_local = np.asarray(wi_local, dtype=np.float64)
    kid, p0, rough, ior = brdf.channel_params(channel)
    key = np.uint64(rng.integers(0, 2 ** 63, dtype=np.int64))
    ox, oy, oz, w, _ = kernels.micro_event(
        kid, p0, rough, ior, wi_local[0], wi_local[1], wi_local[2], key
    )
    return np.array([ox, oy, oz]), float(min(1.0, max(0.0, w)))


def _walk_keys(rng: Rng, n: int) -> np.ndarray:
    base = np.uint64(rng.integers(0, 2 ** 63, dtype=np.int64))
    idx = (np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN) + base) & np.uint64(_MASK64)
    x = idx
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _texel_maps(scene: MicrogeometryScene, channel: int, n: int):
    kind = np.empty((n, n), dtype=np.int64)
    p0 = np.empty((n, n), dtype=np.float64)
    rough = np.empty((n, n), dtype=np.float64)
    ior = np.empty((n, n), dtype=np.float64)
    if scene.texel_index is not None:
        params = [b.channel_params(channel) for b in scene.texel_palette]
        for idx, (kid, q0, rg, io) in enumerate(params):
            m = scene.texel_index == idx
            kind[m], p0[m], rough[m], ior[m] = kid, q0, rg, io
    else:
        kid, q0, rg, io = scene.brdf.channel_params(channel)
        kind[:], p0[:], rough[:], ior[:] = kid, q0, rg, io
    return kind, p0, rough, ior


def trace_walks(
    scene: MicrogeometryScene,
    wi,
    channel: int,
    rng: Rng,
    uv=None,
    threads: int = 1,
):
    """Trace one walk per row of ``wi`` (directions, shape (n, 3)).

    ``uv`` gives entry points in [0,1)^2 for scenes with a material plane;
    when omitted they are drawn from ``rng``. Returns (status, wo, events)
    where status uses kernel codes (0 absorbed, 1 exited, 2 trapped).
    """
    wi = np.ascontiguousarray(np.atleast_2d(np.asarray(wi, dtype=np.float64)))
    n = wi.shape[0]
    if np.any(wi[:, 2] < 0):
        raise ValueError("incident directions must lie in the upper hemisphere")
    keys = _walk_keys(rng, n)
    if uv is None:
        uv = rng.uniform((n, 2))
    else:
        uv = np.ascontiguousarray(np.atleast_2d(np.asarray(uv, dtype=np.float64)))
        if uv.shape[0] != n:
            raise ValueError("uv must have one row per walk")

    status = np.zeros(n, dtype=np.uint8)
    wo = np.zeros((n, 3), dtype=np.float64)
    events = np.zeros(n, dtype=np.int32)

    def run_chunk(lo, hi):
        s_wi = wi[lo:hi]
        s_keys = keys[lo:hi]
        s_uv = uv[lo:hi]
        s_status = status[lo:hi]
        s_wo = wo[lo:hi]
        s_events = events[lo:hi]
        if scene.variant == "flat":
            kid, p0, rough, ior = scene.brdf.channel_params(channel)
            kernels.trace_flat(kid, p0, rough, ior, s_wi, s_keys, s_status, s_wo, s_events)
        elif scene.variant == "heightfield":
            ncell = scene.heights.shape[0]
            hx = scene.uv_extent[0] / ncell
            hy = scene.uv_extent[1] / ncell
            kind, p0m, roughm, iorm = _texel_maps(scene, channel, ncell)
            kernels.trace_heightfield(
                scene.heights, hx, hy, kind, p0m, roughm, iorm,
                s_wi, s_uv, s_keys, scene.max_events, s_status, s_wo, s_events,
            )
        elif scene.variant == "sphere-field":
            kid, p0, rough, ior = scene.brdf.channel_params(channel)
            gkid, gp0, grough, gior = scene.ground.channel_params(channel)
            kernels.trace_spherefield(
                np.ascontiguousarray(scene.sphere_xy[:, 0]),
                np.ascontiguousarray(scene.sphere_xy[:, 1]),
                scene.sphere_radius, scene.uv_extent[0], scene.uv_extent[1],
                kid, p0, rough, ior, gkid, gp0, grough, gior,
                s_wi, s_uv, s_keys, scene.max_events, s_status, s_wo, s_events,
            )
        elif scene.variant == "layered-slab":
            phase_kid = kernels.KIND_PHASE_HG if scene.medium.phase.kind == "henyey-greenstein" else kernels.KIND_PHASE_ISOTROPIC
            kernels.trace_slab(
                scene.top.roughness, scene.top.ior,
                1 if scene.bottom is not None else 0,
                float(scene.bottom.reflectance[channel]) if scene.bottom is not None else 0.0,
                scene.bottom.roughness if scene.bottom is not None else 0.1,
                float(scene.medium.sigma_t[channel]),
                float(scene.medium.albedo[channel]),
                phase_kid, scene.medium.phase.g, scene.thickness,
                s_wi, s_keys, scene.max_events, s_status, s_wo, s_events,
            )
        else:
            raise ValueError(f"unknown scene variant {scene.variant}")

    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda b: run_chunk(*b), bounds))
    else:
        for b in bounds:
            run_chunk(*b)
    return status, wo, events


def trace_walk(scene: MicrogeometryScene, wi, channel: int, rng: Rng, uv=None) -> WalkOutcome:
    """Single-walk convenience wrapper."""
    wi = np.asarray(wi, dtype=np.float64)
    uv_arr = None if uv is None else np.asarray(uv, dtype=np.float64)[None, :]
    status, wo, events = trace_walks(scene, wi[None, :], channel, rng, uv=uv_arr)
    exited = status[0] == kernels.STATUS_EXITED
    return WalkOutcome(
        status="exited" if exited else "absorbed",
        wo=normalized(wo[0]) if exited else None,
        events=int(events[0]),
        trapped=status[0] == kernels.STATUS_TRAPPED,
    )
