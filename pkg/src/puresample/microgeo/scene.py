"""Declarative microgeometry scenes and their JSON schema.

A scene describes what the forward particle tracer walks: a flat analytic
surface, a periodic heightfield (optionally with a per-texel micro-BRDF for
spatial variation), a field of spheres resting on a ground plane, or a
layered slab (rough dielectric over an optional rough conductor with a
scattering medium in between). See README for the schema; the parser
reports violations with the offending field path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..rng import Rng
from . import kernels

BRDF_KINDS = {
    "lambertian": kernels.KIND_LAMBERTIAN,
    "mirror": kernels.KIND_MIRROR,
    "rough-conductor": kernels.KIND_ROUGH_CONDUCTOR,
    "rough-dielectric": kernels.KIND_ROUGH_DIELECTRIC,
    "isotropic": kernels.KIND_PHASE_ISOTROPIC,
    "henyey-greenstein": kernels.KIND_PHASE_HG,
}


class SceneError(ValueError):
    """Scene description violates the schema; message names the field."""


def _err(path, msg):
    raise SceneError(f"{path}: {msg}")


def _rgb(value, path, lo=0.0, hi=1.0):
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        _err(path, "expected an [r, g, b] triple")
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        _err(path, "components must be finite")
    if np.any(arr < lo) or (hi is not None and np.any(arr > hi)):
        _err(path, f"components must lie in [{lo}, {hi}]" if hi is not None else f"components must be >= {lo}")
    return arr


@dataclass
class MicroBrdf:
    """Analytic micro-BRDF (or phase function) applied at each interaction."""

    kind: str
    albedo: np.ndarray | None = None        # lambertian
    reflectance: np.ndarray | None = None   # mirror / rough-conductor
    roughness: float = 0.0                  # rough lobes
    ior: float = 1.5                        # rough-dielectric
    g: float = 0.0                          # henyey-greenstein

    def channel_params(self, channel: int):
        """(kind_id, p0, roughness, ior) scalars for one color channel."""
        kid = BRDF_KINDS[self.kind]
        if self.kind == "lambertian":
            p0 = float(self.albedo[channel])
        elif self.kind in ("mirror", "rough-conductor"):
            p0 = float(self.reflectance[channel])
        elif self.kind == "henyey-greenstein":
            p0 = float(self.g)
        else:
            p0 = 0.0
        return kid, p0, float(self.roughness), float(self.ior)


def brdf_from_json(obj, path, allow_phase=False):
    if not isinstance(obj, dict):
        _err(path, "expected an object")
    kind = obj.get("kind")
    if kind not in BRDF_KINDS:
        _err(f"{path}.kind", f"unknown kind {kind!r}")
    if kind in ("isotropic", "henyey-greenstein") and not allow_phase:
        _err(f"{path}.kind", "phase functions are only valid inside a medium")
    b = MicroBrdf(kind=kind)
    if kind == "lambertian":
        b.albedo = _rgb(obj.get("albedo"), f"{path}.albedo")
    elif kind == "mirror":
        b.reflectance = _rgb(obj.get("reflectance"), f"{path}.reflectance")
    elif kind == "rough-conductor":
        b.reflectance = _rgb(obj.get("reflectance"), f"{path}.reflectance")
        b.roughness = _roughness(obj.get("roughness"), f"{path}.roughness")
    elif kind == "rough-dielectric":
        b.roughness = _roughness(obj.get("roughness"), f"{path}.roughness")
        ior = obj.get("ior", 1.5)
        if not isinstance(ior, (int, float)) or not np.isfinite(ior) or ior <= 0:
            _err(f"{path}.ior", "must be a positive number")
        b.ior = float(ior)
    elif kind == "henyey-greenstein":
        g = obj.get("g", 0.0)
        if not isinstance(g, (int, float)) or not abs(g) < 1.0:
            _err(f"{path}.g", "must satisfy |g| < 1")
        b.g = float(g)
    return b


def _roughness(value, path):
    if not isinstance(value, (int, float)) or not (0.0 < value <= 1.0):
        _err(path, "must lie in (0, 1]")
    return float(value)


@dataclass
class Medium:
    sigma_t: np.ndarray
    albedo: np.ndarray
    phase: MicroBrdf


@dataclass
class MicrogeometryScene:
    variant: str
    max_events: int = 256
    sv: bool = False
    uv_extent: tuple = (1.0, 1.0)
    brdf: MicroBrdf | None = None
    # heightfield
    heights: np.ndarray | None = None
    texel_palette: list = field(default_factory=list)
    texel_index: np.ndarray | None = None
    # sphere field
    sphere_xy: np.ndarray | None = None
    sphere_radius: float = 0.0
    ground: MicroBrdf | None = None
    # layered slab
    top: MicroBrdf | None = None
    bottom: MicroBrdf | None = None
    medium: Medium | None = None
    thickness: float = 1.0
    source_json: str = ""

    def scene_hash(self) -> str:
        return hashlib.sha256(self.source_json.encode()).hexdigest()

    def is_lossless(self) -> bool:
        """True when every possible interaction weight is identically 1."""

        def b_lossless(b):
            if b is None:
                return True
            if b.kind == "mirror":
                return bool(np.all(b.reflectance == 1.0))
            if b.kind == "lambertian":
                return bool(np.all(b.albedo == 1.0))
            return False

        if self.variant == "layered-slab":
            return False
        brdfs = [self.brdf, self.ground] + list(self.texel_palette)
        return all(b_lossless(b) for b in brdfs)


def beckmann_heightfield(resolution: int, roughness: float, seed: int, corr_px: float = 2.0) -> np.ndarray:
    """Periodic Gaussian heightfield whose slope distribution matches a
    Beckmann normal distribution with the given roughness: slopes per axis
    are N(0, roughness^2 / 2)."""
    from scipy.ndimage import gaussian_filter

    rng = Rng(seed, stream=0x48465348)  # heightfield synthesis stream
    noise = rng.normal((resolution, resolution))
    h = gaussian_filter(noise, sigma=corr_px, mode="wrap")
    cell = 1.0 / resolution
    sx = (np.roll(h, -1, axis=0) - h) / cell
    sy = (np.roll(h, -1, axis=1) - h) / cell
    rms = np.sqrt(0.5 * (np.mean(sx * sx) + np.mean(sy * sy)))
    target = roughness / np.sqrt(2.0)
    return h * (target / rms)


def poisson_disk_spheres(extent, radius: float, seed: int, max_count: int = 4096) -> np.ndarray:
    """Dart-throwing Poisson-disk sphere centers on a periodic plane.
    Throws darts until 200 consecutive rejections."""
    ex, ey = extent
    rng = Rng(seed, stream=0x53504852)
    pts = []
    misses = 0
    min_d2 = (2.0 * radius) ** 2
    while misses < 200 and len(pts) < max_count:
        cand = np.array([rng.uniform() * ex, rng.uniform() * ey])
        ok = True
        for p in pts:
            dx = abs(cand[0] - p[0])
            dy = abs(cand[1] - p[1])
            dx = min(dx, ex - dx)
            dy = min(dy, ey - dy)
            if dx * dx + dy * dy < min_d2:
                ok = False
                break
        if ok:
            pts.append(cand)
            misses = 0
        else:
            misses += 1
    return np.array(pts) if pts else np.zeros((0, 2))


def scene_from_json(text: str) -> MicrogeometryScene:
    """Parse and validate a scene description."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(f"json: {e}") from e
    if not isinstance(obj, dict):
        _err("$", "expected a JSON object")
    variant = obj.get("variant")
    if variant == "flat-analytic":
        variant = "flat"
    if variant not in ("flat", "heightfield", "sphere-field", "layered-slab"):
        _err("variant", f"unknown variant {variant!r}")

    max_events = obj.get("max_events", 256)
    if not isinstance(max_events, int) or max_events < 1:
        _err("max_events", "must be an integer >= 1")
    sv = bool(obj.get("sv", False))
    uv_extent = obj.get("uv_extent", [1.0, 1.0])
    if not isinstance(uv_extent, (list, tuple)) or len(uv_extent) != 2 or any(
        not isinstance(v, (int, float)) or v <= 0 for v in uv_extent
    ):
        _err("uv_extent", "expected two positive numbers")

    scene = MicrogeometryScene(
        variant=variant,
        max_events=max_events,
        sv=sv,
        uv_extent=(float(uv_extent[0]), float(uv_extent[1])),
        source_json=json.dumps(obj, sort_keys=True, separators=(",", ":")),
    )

    if variant == "flat":
        scene.brdf = brdf_from_json(obj.get("brdf"), "brdf")
        if sv:
            _err("sv", "flat scenes are not spatially varying")
        return scene

    if variant == "heightfield":
        heights = obj.get("heights")
        if isinstance(heights, dict):
            res = heights.get("resolution", 64)
            if not isinstance(res, int) or res < 1:
                _err("heights.resolution", "must be an integer >= 1")
            rough = _roughness(heights.get("roughness", 0.5), "heights.roughness")
            hseed = heights.get("seed", 0)
            corr = heights.get("corr_px", 2.0)
            scene.heights = beckmann_heightfield(res, rough, hseed, corr)
        elif isinstance(heights, list):
            arr = np.asarray(heights, dtype=np.float64)
            if arr.ndim != 2 or arr.size == 0:
                _err("heights", "must be a non-empty 2D grid")
            if arr.shape[0] != arr.shape[1]:
                _err("heights", "grid must be square")
            if not np.all(np.isfinite(arr)):
                _err("heights", "heights must be finite")
            scene.heights = arr
        else:
            _err("heights", "expected a 2D grid or a procedural spec")
        if "texels" in obj:
            tex = obj["texels"]
            if not isinstance(tex, dict):
                _err("texels", "expected an object")
            palette = tex.get("palette")
            if not isinstance(palette, list) or not palette:
                _err("texels.palette", "expected a non-empty list of brdfs")
            scene.texel_palette = [
                brdf_from_json(b, f"texels.palette[{i}]") for i, b in enumerate(palette)
            ]
            index = np.asarray(tex.get("index"), dtype=np.int64)
            n = scene.heights.shape[0]
            if index.shape != (n, n):
                _err("texels.index", f"expected shape ({n}, {n})")
            if index.min() < 0 or index.max() >= len(palette):
                _err("texels.index", "palette index out of range")
            scene.texel_index = index
        else:
            scene.brdf = brdf_from_json(obj.get("brdf"), "brdf")
        return scene

    if variant == "sphere-field":
        radius = obj.get("radius")
        if not isinstance(radius, (int, float)) or not (0 < radius < min(uv_extent) / 2):
            _err("radius", "must be positive and smaller than half the extent")
        scene.sphere_radius = float(radius)
        scene.sphere_xy = poisson_disk_spheres(scene.uv_extent, scene.sphere_radius, obj.get("seed", 0))
        scene.brdf = brdf_from_json(obj.get("brdf"), "brdf")
        scene.ground = (
            brdf_from_json(obj["ground"], "ground") if "ground" in obj else scene.brdf
        )
        if sv:
            _err("sv", "sphere-field scenes are not spatially varying")
        return scene

    # layered slab
    top = brdf_from_json(obj.get("top"), "top")
    if top.kind != "rough-dielectric":
        _err("top.kind", "top interface must be rough-dielectric")
    scene.top = top
    if "bottom" in obj and obj["bottom"] is not None:
        bottom = brdf_from_json(obj["bottom"], "bottom")
        if bottom.kind != "rough-conductor":
            _err("bottom.kind", "bottom interface must be rough-conductor")
        scene.bottom = bottom
    med = obj.get("medium")
    if not isinstance(med, dict):
        _err("medium", "expected an object")
    sigma_t = _rgb(med.get("sigma_t"), "medium.sigma_t", lo=0.0, hi=None)
    albedo = _rgb(med.get("albedo"), "medium.albedo")
    phase = brdf_from_json(med.get("phase", {"kind": "isotropic"}), "medium.phase", allow_phase=True)
    if phase.kind not in ("isotropic", "henyey-greenstein"):
        _err("medium.phase.kind", "must be a phase function")
    scene.medium = Medium(sigma_t=sigma_t, albedo=albedo, phase=phase)
    thickness = obj.get("thickness", 1.0)
    if not isinstance(thickness, (int, float)) or thickness <= 0:
        _err("thickness", "must be positive")
    scene.thickness = float(thickness)
    if sv:
        _err("sv", "layered-slab scenes are not spatially varying")
    return scene


def scene_from_file(path) -> MicrogeometryScene:
    with open(path, "r") as f:
        return scene_from_json(f.read())
