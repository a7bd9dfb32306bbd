"""Minimal tile-parallel path tracer exercising the material interface.

Quad geometry, point lights via explicit connection (delta lights need no
MIS), a constant environment combined by power-heuristic MIS between
material sampling and uniform hemisphere sampling. Each tile owns an RNG
stream keyed by its index, so images are bitwise identical for any thread
count.

The tracer conditions materials on the camera-side direction at each hit;
the learned representation is not assumed reciprocal, so this convention is
fixed and used consistently by all three strategies.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import material as material_mod
from .rng import Rng

TILE = 32
RR_DEPTH = 5
MAX_DEPTH = 16
_SPP_CHUNK = 16


class RenderSceneError(ValueError):
    pass


@dataclass
class AnalyticLambertian:
    """Builtin diffuse material for A/B estimator tests."""

    albedo: np.ndarray

    def eval_many(self, wi, wo, uv=None):
        wi = np.atleast_2d(wi)
        wo = np.atleast_2d(wo)
        ok = (wi[:, 2] >= 0) & (wo[:, 2] >= 0)
        return np.where(ok[:, None], self.albedo[None, :] / np.pi, 0.0)

    def sample_many(self, wi, rng: Rng, uv=None):
        wi = np.atleast_2d(wi)
        n = wi.shape[0]
        u1 = rng.uniform(n)
        u2 = rng.uniform(n)
        r = np.sqrt(u1)
        phi = 2 * np.pi * u2
        z = np.sqrt(np.maximum(0.0, 1.0 - u1))
        wo = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        pdf = z / np.pi
        weight = np.where(
            (wi[:, 2] >= 0)[:, None] & (pdf > 0)[:, None], self.albedo[None, :], 0.0
        )
        return wo, pdf, weight

    def pdf_many(self, wi, wo, uv=None):
        wi = np.atleast_2d(wi)
        wo = np.atleast_2d(wo)
        ok = (wi[:, 2] >= 0) & (wo[:, 2] >= 0)
        return np.where(ok, np.maximum(wo[:, 2], 0.0) / np.pi, 0.0)


class NeuralMaterialAdapter:
    """Batched adapter around a loaded PureSample material."""

    def __init__(self, mat: material_mod.PureSampleMaterial):
        self.mat = mat

    def _uv(self, uv):
        return uv if self.mat.sv else None

    def eval_many(self, wi, wo, uv=None):
        return material_mod.eval_many(self.mat, wi, wo, self._uv(uv))

    def sample_many(self, wi, rng, uv=None):
        return material_mod.sample_many(self.mat, wi, rng, self._uv(uv))

    def pdf_many(self, wi, wo, uv=None):
        return material_mod.pdf_many(self.mat, wi, wo, self._uv(uv))


@dataclass
class Quad:
    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    material: str
    normal: np.ndarray = field(init=False)

    def __post_init__(self):
        n = np.cross(self.edge_u, self.edge_v)
        ln = np.linalg.norm(n)
        if ln < 1e-12:
            raise RenderSceneError("quad: degenerate edges")
        self.normal = n / ln


@dataclass
class Camera:
    origin: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_deg: float


@dataclass
class RenderScene:
    camera: Camera
    quads: list
    point_lights: list  # (position, intensity rgb)
    env_radiance: np.ndarray | None
    width: int
    height: int
    spp: int
    materials: dict


def _vec(obj, path, n=3):
    if not isinstance(obj, (list, tuple)) or len(obj) != n:
        raise RenderSceneError(f"{path}: expected {n} numbers")
    return np.asarray(obj, dtype=np.float64)


def scene_from_json(text: str, base_dir=".") -> RenderScene:
    import os

    obj = json.loads(text)
    cam = obj.get("camera")
    if not isinstance(cam, dict):
        raise RenderSceneError("camera: missing")
    camera = Camera(
        origin=_vec(cam.get("origin"), "camera.origin"),
        look_at=_vec(cam.get("look_at"), "camera.look_at"),
        up=_vec(cam.get("up", [0, 0, 1]), "camera.up"),
        fov_deg=float(cam.get("fov", 40.0)),
    )
    img = obj.get("image", {})
    width, height, spp = int(img.get("width", 64)), int(img.get("height", 64)), int(img.get("spp", 16))
    if width < 1 or height < 1 or spp < 1:
        raise RenderSceneError("image: width, height, spp must be >= 1")
    quads = []
    for i, q in enumerate(obj.get("quads", [])):
        quads.append(
            Quad(
                corner=_vec(q.get("corner"), f"quads[{i}].corner"),
                edge_u=_vec(q.get("edge_u"), f"quads[{i}].edge_u"),
                edge_v=_vec(q.get("edge_v"), f"quads[{i}].edge_v"),
                material=q.get("material", "default"),
            )
        )
    lights = []
    for i, l in enumerate(obj.get("point_lights", [])):
        lights.append(
            (_vec(l.get("position"), f"point_lights[{i}].position"),
             _vec(l.get("intensity"), f"point_lights[{i}].intensity"))
        )
    env = obj.get("environment")
    env_radiance = _vec(env.get("radiance"), "environment.radiance") if env else None
    materials = {}
    for name, m in obj.get("materials", {}).items():
        kind = m.get("kind")
        if kind == "lambertian":
            materials[name] = AnalyticLambertian(_vec(m.get("albedo"), f"materials.{name}.albedo"))
        elif kind == "neural":
            path = m.get("path")
            if not path:
                raise RenderSceneError(f"materials.{name}.path: missing")
            full = path if os.path.isabs(path) else os.path.join(base_dir, path)
            if not os.path.exists(full):
                raise RenderSceneError(f"materials.{name}.path: file not found: {full}")
            materials[name] = NeuralMaterialAdapter(material_mod.load(full))
        else:
            raise RenderSceneError(f"materials.{name}.kind: unknown kind {kind!r}")
    for q in quads:
        if q.material not in materials:
            raise RenderSceneError(f"quad material {q.material!r} is not defined")
    return RenderScene(camera, quads, lights, env_radiance, width, height, spp, materials)


def scene_from_file(path) -> RenderScene:
    import os

    with open(path) as f:
        return scene_from_json(f.read(), base_dir=os.path.dirname(os.path.abspath(path)))


# -- intersection ----------------------------------------------------------------


def _intersect(scene: RenderScene, origins, dirs, tmin=1e-6):
    """Nearest quad hit per ray. Returns (t, quad index, u, v)."""
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_q = np.full(n, -1, dtype=np.int64)
    best_uv = np.zeros((n, 2))
    for qi, q in enumerate(scene.quads):
        denom = dirs @ q.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((q.corner - origins) @ q.normal) / denom
        valid = (np.abs(denom) > 1e-12) & (t > tmin) & (t < best_t)
        if not valid.any():
            continue
        p = origins[valid] + dirs[valid] * t[valid][:, None]
        rel = p - q.corner
        uu = q.edge_u @ q.edge_u
        vv = q.edge_v @ q.edge_v
        uvdot = q.edge_u @ q.edge_v
        ru = rel @ q.edge_u
        rv = rel @ q.edge_v
        det = uu * vv - uvdot * uvdot
        a = (ru * vv - rv * uvdot) / det
        b = (rv * uu - ru * uvdot) / det
        inside = (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        vidx = np.where(valid)[0][inside]
        best_t[vidx] = t[vidx]
        best_q[vidx] = qi
        best_uv[vidx, 0] = a[inside]
        best_uv[vidx, 1] = b[inside]
    return best_t, best_q, best_uv


def _occluded(scene, origins, targets):
    d = targets - origins
    dist = np.linalg.norm(d, axis=1)
    dirs = d / dist[:, None]
    t, q, _ = _intersect(scene, origins, dirs)
    return (q >= 0) & (t < dist - 1e-6)


def _luminance(rgb):
    return rgb @ np.array([0.2126, 0.7152, 0.0722])


# -- the integrator ---------------------------------------------------------------


def _shade_tile(scene: RenderScene, strategy, px, py, rng: Rng):
    """Radiance samples for pixel centers (px, py) with one sample each."""
    cam = scene.camera
    fwd = cam.look_at - cam.origin
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, cam.up)
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    tan_half = np.tan(np.radians(cam.fov_deg) / 2.0)
    aspect = scene.width / scene.height

    n = px.shape[0]
    jx = rng.uniform(n)
    jy = rng.uniform(n)
    sx = ((px + jx) / scene.width * 2.0 - 1.0) * tan_half * aspect
    sy = (1.0 - (py + jy) / scene.height * 2.0) * tan_half
    dirs = fwd[None, :] + sx[:, None] * right[None, :] + sy[:, None] * up[None, :]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.origin, (n, 3)).copy()

    radiance = np.zeros((n, 3))
    throughput = np.ones((n, 3))
    active = np.ones(n, dtype=bool)
    # weight applied to an env hit by the continuation ray (MIS bookkeeping)
    # strategy 'light': 0 after first bounce; 'material': 1; 'mis': power heuristic
    env_mis_pdf = np.zeros(n)  # material pdf of the continuation direction
    had_bounce = np.zeros(n, dtype=bool)

    for depth in range(MAX_DEPTH):
        if not active.any():
            break
        idx = np.where(active)[0]
        t, qidx, quv = _intersect(scene, origins[idx], dirs[idx])
        hit = qidx >= 0
        # env contribution for rays that left the scene
        if scene.env_radiance is not None:
            esc = idx[~hit]
            if esc.size:
                w = np.ones(esc.size)
                if had_bounce[esc].any():
                    hb = had_bounce[esc]
                    if strategy == "light":
                        w[hb] = 0.0
                    elif strategy == "mis":
                        p_mat = env_mis_pdf[esc][hb]
                        p_env = 1.0 / (2.0 * np.pi)
                        w[hb] = p_mat ** 2 / (p_mat ** 2 + p_env ** 2)
                radiance[esc] += throughput[esc] * w[:, None] * scene.env_radiance[None, :]
        active[idx[~hit]] = False
        if not hit.any():
            break
        hidx = idx[hit]
        th = t[hit]
        p = origins[hidx] + dirs[hidx] * th[:, None]
        # group by quad (and thus material)
        for qi in np.unique(qidx[hit]):
            sel = hidx[qidx[hit] == qi]
            quad = scene.quads[qi]
            mat = scene.materials[quad.material]
            uv_sel = quv[hit][qidx[hit] == qi]
            nrm = quad.normal
            view = -dirs[sel]
            cos_view = view @ nrm
            front = cos_view > 1e-9
            dead = sel[~front]
            active[dead] = False
            sel = sel[front]
            if sel.size == 0:
                continue
            uv_sel = uv_sel[front]
            tsel = th[qidx[hit] == qi][front]
            psel = origins[sel] + dirs[sel] * tsel[:, None]
            # local frame: z along quad normal
            frame = _frame(nrm)
            wi_cam = _to_local(view, frame)  # camera-side direction, local

            # point lights: explicit connection
            for (lp, li) in scene.point_lights:
                tol = lp[None, :] - psel
                dist2 = np.sum(tol * tol, axis=1)
                dist = np.sqrt(dist2)
                ldir = tol / dist[:, None]
                cos_l = ldir @ nrm
                vis = cos_l > 1e-9
                if vis.any():
                    offs = psel[vis] + nrm * 1e-6
                    occ = _occluded(scene, offs, np.broadcast_to(lp, (int(vis.sum()), 3)))
                    lit = np.where(vis)[0][~occ]
                    if lit.size:
                        wl = _to_local(ldir[lit], frame)
                        f = mat.eval_many(wi_cam[lit], wl, uv_sel[lit])
                        contrib = f * (cos_l[lit] / dist2[lit])[:, None] * li[None, :]
                        radiance[sel[lit]] += throughput[sel[lit]] * contrib

            # environment via light sampling (uniform hemisphere)
            if scene.env_radiance is not None and strategy in ("light", "mis"):
                u1 = rng.uniform(sel.size)
                u2 = rng.uniform(sel.size)
                z = u1
                r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
                phi = 2 * np.pi * u2
                wl = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
                wworld = _to_world(wl, frame)
                offs = psel + nrm * 1e-6
                far = offs + wworld * 1e6
                occ = _occluded(scene, offs, far)
                open_sky = ~occ
                if open_sky.any():
                    f = mat.eval_many(wi_cam[open_sky], wl[open_sky], uv_sel[open_sky])
                    p_env = 1.0 / (2.0 * np.pi)
                    if strategy == "mis":
                        p_mat = mat.pdf_many(wi_cam[open_sky], wl[open_sky], uv_sel[open_sky])
                        w = p_env ** 2 / (p_env ** 2 + p_mat ** 2)
                    else:
                        w = np.ones(int(open_sky.sum()))
                    contrib = f * (wl[open_sky][:, 2] / p_env * w)[:, None] * scene.env_radiance[None, :]
                    radiance[sel[open_sky]] += throughput[sel[open_sky]] * contrib

            # continuation by material sampling
            wo_l, pdf_s, wgt = mat.sample_many(wi_cam, rng, uv_sel)
            ok = (pdf_s > 1e-12) & np.all(np.isfinite(wgt), axis=1)
            dead = sel[~ok]
            active[dead] = False
            sel = sel[ok]
            if sel.size == 0:
                continue
            throughput[sel] *= wgt[ok]
            new_dir = _to_world(wo_l[ok], frame)
            origins[sel] = psel[ok] + nrm * 1e-6
            dirs[sel] = new_dir
            env_mis_pdf[sel] = pdf_s[ok]
            had_bounce[sel] = True

        # Russian roulette on throughput
        if depth >= RR_DEPTH:
            aidx = np.where(active)[0]
            if aidx.size:
                q = np.clip(_luminance(throughput[aidx]), 0.05, 0.95)
                u = rng.uniform(aidx.size)
                kill = u >= q
                active[aidx[kill]] = False
                throughput[aidx[~kill]] /= q[~kill][:, None]
    return radiance


def _frame(n):
    s = 1.0 if n[2] >= 0 else -1.0
    a = -1.0 / (s + n[2])
    b = n[0] * n[1] * a
    t1 = np.array([1.0 + s * n[0] * n[0] * a, s * b, -s * n[0]])
    t2 = np.array([b, s + n[1] * n[1] * a, -n[1]])
    return np.stack([t1, t2, n])


def _to_local(v, frame):
    return v @ frame.T


def _to_world(v, frame):
    return v @ frame


def render(scene: RenderScene, rng: Rng, threads: int = 1, strategy: str = "mis") -> np.ndarray:
    """Path-trace the scene; returns a linear-radiance image (h, w, 3)."""
    if strategy not in ("mis", "material", "light"):
        raise ValueError("strategy must be one of mis, material, light")
    h, w = scene.height, scene.width
    image = np.zeros((h, w, 3))
    tiles = []
    ti = 0
    for ty in range(0, h, TILE):
        for tx in range(0, w, TILE):
            tiles.append((ti, tx, ty))
            ti += 1

    def run_tile(args):
        ti, tx, ty = args
        tw = min(TILE, w - tx)
        thh = min(TILE, h - ty)
        ys, xs = np.mgrid[ty : ty + thh, tx : tx + tw]
        px = xs.ravel().astype(np.float64)
        py = ys.ravel().astype(np.float64)
        acc = np.zeros((px.size, 3))
        for ci, s0 in enumerate(range(0, scene.spp, _SPP_CHUNK)):
            ns = min(_SPP_CHUNK, scene.spp - s0)
            tile_rng = rng.substream(ti * 1_000_003 + ci)
            out = _shade_tile(scene, strategy, np.tile(px, ns), np.tile(py, ns), tile_rng)
            acc += out.reshape(ns, px.size, 3).sum(axis=0)
        return ti, tx, ty, tw, thh, acc / scene.spp

    if threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run_tile, tiles))
    else:
        results = [run_tile(t) for t in tiles]
    for ti, tx, ty, tw, thh, acc in results:
        image[ty : ty + thh, tx : tx + tw] = acc.reshape(thh, tw, 3)
    return image


# -- image io ---------------------------------------------------------------------


def write_pfm(image, path):
    """Little-endian color PFM, rows bottom-to-top."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("write_pfm expects an (h, w, 3) image")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()

    def token(pos):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos], pos + 1

    magic, pos = token(0)
    if magic != b"PF":
        raise ValueError(f"bad PFM magic {magic!r} (only color 'PF' supported)")
    wtok, pos = token(pos)
    htok, pos = token(pos)
    stok, pos = token(pos)
    w, h = int(wtok), int(htok)
    scale = float(stok)
    if scale >= 0:
        raise ValueError("big-endian PFM (scale >= 0) is not supported")
    need = w * h * 3 * 4
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise ValueError("truncated PFM payload")
    img = np.frombuffer(raw, dtype="<f4").reshape(h, w, 3)
    return img[::-1].copy()


def write_ppm(image, path, gamma: float = 2.2, scale: float = 1.0):
    """8-bit preview with gamma for quick inspection; PFM stays linear."""
    img = np.clip(np.asarray(image, dtype=np.float64) * scale, 0.0, 1.0)
    img = (img ** (1.0 / gamma) * 255.0 + 0.5).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())
