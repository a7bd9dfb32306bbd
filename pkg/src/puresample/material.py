"""The learned material: distribution net x albedo net behind the three
rendering operations (evaluate, importance-sample, pdf).

Measure bookkeeping: the flow density lives on the projected-hemisphere
disk, i.e. per projected solid angle, and the product density * albedo IS
the BRDF value f with integral f d(sigma_perp) = albedo. Renderers use
f * cos(theta) as the usual solid-angle integrand; ``pdf_projected_to_solid``
is the single conversion point.

Container format (.psm), little-endian: magic "PSM1" | u32 header length |
header JSON | concatenated f32 parameter blobs in header order. The header
records architecture, shapes, metadata, and a SHA-256 digest of the blob
bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .albedo import AlbedoModel, albedo_eval
from .flow import FlowModel, NeuralTexture, build_cond, flow_pdf, flow_sample
from .geom import dir_to_disk, disk_to_dir, pdf_projected_to_solid
from .rng import Rng

log = logging.getLogger(__name__)

MAGIC = b"PSM1"


class MaterialFormatError(ValueError):
    pass


@dataclass
class PureSampleMaterial:
    flow: FlowModel
    albedo: AlbedoModel
    texture: NeuralTexture | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.flow.sv != self.albedo.sv:
            raise ValueError("flow/albedo sv flags disagree")
        if self.flow.sv and self.texture is None:
            raise ValueError("sv material requires a texture")
        if not self.flow.sv and self.texture is not None:
            raise ValueError("non-sv material must not carry a texture")

    @property
    def sv(self) -> bool:
        return self.flow.sv

    def _features(self, uv, n):
        if not self.sv:
            if uv is not None:
                log.debug("uv ignored by non-sv material")
            return None
        if uv is None:
            raise ValueError("sv material requires uv")
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        feats = self.texture.lookup(uv)
        if feats.shape[0] == 1 and n > 1:
            feats = np.broadcast_to(feats, (n, feats.shape[1]))
        return feats


def _albedo_rgb(mat: PureSampleMaterial, wi, feats):
    return albedo_eval(mat.albedo, wi, feats[0] if feats is not None else None)


def eval_brdf(mat: PureSampleMaterial, wi, wo, uv=None) -> np.ndarray:
    """RGB BRDF value (per the projected-solid-angle product form).

    One flow density query per color channel times the albedo. Directions
    below the horizon yield zero.
    """
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if wi[2] < 0.0 or wo[2] < 0.0:
        log.debug("eval: direction below horizon")
        return np.zeros(3)
    feats = mat._features(uv, 1)
    a = _albedo_rgb(mat, wi, feats)
    f3 = None if feats is None else np.broadcast_to(feats, (3, feats.shape[1]))
    cond = build_cond(np.broadcast_to(wi, (3, 3)), np.arange(3), f3)
    rho = flow_pdf(mat.flow, cond, np.broadcast_to(dir_to_disk(wo), (3, 2)))
    return rho * a


def sample_dir(mat: PureSampleMaterial, wi, rng: Rng, uv=None):
    """Importance-sample an outgoing direction.

    The channel with the largest albedo drives the flow sampler (ties pick
    the lowest index). Returns (direction, pdf per solid angle, RGB weight
    = eval * cos / pdf).
    """
    wi = np.asarray(wi, dtype=np.float64)
    if wi[2] < 0.0:
        raise ValueError("sample: incident direction below horizon")
    feats = mat._features(uv, 1)
    a = _albedo_rgb(mat, wi, feats)
    k = int(np.argmax(a))
    cond = build_cond(wi, np.array([k]), feats)
    pt, rho_k = flow_sample(mat.flow, cond, rng)
    wo = disk_to_dir(pt)
    pdf_solid = float(pdf_projected_to_solid(rho_k, wo))
    f3 = None if feats is None else np.broadcast_to(feats, (3, feats.shape[1]))
    cond3 = build_cond(np.broadcast_to(wi, (3, 3)), np.arange(3), f3)
    rho = flow_pdf(mat.flow, cond3, np.broadcast_to(pt, (3, 2)))
    rho[k] = rho_k
    weight = np.zeros(3) if rho_k <= 0.0 else a * rho / rho_k
    return wo, pdf_solid, weight


def pdf_dir(mat: PureSampleMaterial, wi, wo, uv=None) -> float:
    """Sampling density per solid angle for the pair (wi, wo); matches the
    channel selection of :func:`sample_dir`."""
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if wi[2] < 0.0 or wo[2] < 0.0:
        return 0.0
    feats = mat._features(uv, 1)
    a = _albedo_rgb(mat, wi, feats)
    k = int(np.argmax(a))
    cond = build_cond(wi, np.array([k]), feats)
    rho = flow_pdf(mat.flow, cond, dir_to_disk(wo)[None, :])[0]
    return float(pdf_projected_to_solid(rho, wo))


# -- batched variants (renderer path) -----------------------------------------


def eval_many(mat: PureSampleMaterial, wi, wo, uv=None) -> np.ndarray:
    """Batched eval: wi, wo of shape (n, 3) -> (n, 3) RGB."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    n = wi.shape[0]
    ok = (wi[:, 2] >= 0.0) & (wo[:, 2] >= 0.0)
    feats = mat._features(uv, n)
    a = albedo_eval(mat.albedo, wi, feats)
    out = np.zeros((n, 3))
    pts = wo[:, :2]
    for c in range(3):
        cond = build_cond(wi, np.full(n, c), feats)
        out[:, c] = flow_pdf(mat.flow, cond, pts) * a[:, c]
    out[~ok] = 0.0
    return out


def sample_many(mat: PureSampleMaterial, wi, rng: Rng, uv=None):
    """Batched sample: returns (wo (n,3), pdf_solid (n,), weight (n,3))."""
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    n = wi.shape[0]
    feats = mat._features(uv, n)
    a = albedo_eval(mat.albedo, wi, feats)
    k = np.argmax(a, axis=1)
    cond = build_cond(wi, k, feats)
    pts, rho_k = flow_sample(mat.flow, cond, rng, n=n)
    wo = disk_to_dir(pts)
    pdf_solid = pdf_projected_to_solid(rho_k, wo)
    rho = np.empty((n, 3))
    for c in range(3):
        condc = build_cond(wi, np.full(n, c), feats)
        rho[:, c] = np.where(k == c, rho_k, flow_pdf(mat.flow, condc, pts))
    safe = rho_k > 0.0
    weight = np.zeros((n, 3))
    weight[safe] = a[safe] * rho[safe] / rho_k[safe, None]
    return wo, pdf_solid, weight


def pdf_many(mat: PureSampleMaterial, wi, wo, uv=None) -> np.ndarray:
    wi = np.atleast_2d(np.asarray(wi, dtype=np.float64))
    wo = np.atleast_2d(np.asarray(wo, dtype=np.float64))
    n = wi.shape[0]
    ok = (wi[:, 2] >= 0.0) & (wo[:, 2] >= 0.0)
    feats = mat._features(uv, n)
    a = albedo_eval(mat.albedo, wi, feats)
    k = np.argmax(a, axis=1)
    cond = build_cond(wi, k, feats)
    rho = flow_pdf(mat.flow, cond, wo[:, :2])
    return np.where(ok, pdf_projected_to_solid(rho, wo), 0.0)


# -- container io ---------------------------------------------------------------


def _net_spec(net: nn.DenseNet) -> dict:
    return {
        "sizes": list(net.sizes),
        "activation": net.activation,
        "residual": list(net.residual),
    }


def _net_blobs(prefix, net: nn.DenseNet):
    out = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out.append((f"{prefix}.w{i}", w))
        out.append((f"{prefix}.b{i}", b))
    return out


def save(mat: PureSampleMaterial, path):
    blobs = _net_blobs("flow", mat.flow.net) + _net_blobs("albedo", mat.albedo.net)
    if mat.texture is not None:
        blobs.append(("texture", mat.texture.data))
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in blobs)
    header = {
        "format": "psm",
        "version": 1,
        "sv": mat.sv,
        "metadata": mat.metadata,
        "flow": {
            "net": _net_spec(mat.flow.net),
            "steps": mat.flow.steps,
            "feature_dim": mat.flow.feature_dim,
        },
        "albedo": {
            "net": _net_spec(mat.albedo.net),
            "feature_dim": mat.albedo.feature_dim,
        },
        "texture": list(mat.texture.data.shape) if mat.texture is not None else None,
        "blobs": [{"name": name, "shape": list(a.shape)} for name, a in blobs],
        "digest": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(payload)


def load(path) -> PureSampleMaterial:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise MaterialFormatError("bad magic")
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise MaterialFormatError("truncated header")
    header = json.loads(data[8 : 8 + hlen].decode())
    if header.get("version") != 1:
        raise MaterialFormatError(f"unsupported version {header.get('version')}")
    payload = data[8 + hlen :]
    expect = sum(int(np.prod(b["shape"])) for b in header["blobs"]) * 4
    if len(payload) != expect:
        raise MaterialFormatError(f"blob size mismatch: expected {expect} bytes, found {len(payload)}")
    if hashlib.sha256(payload).hexdigest() != header["digest"]:
        raise MaterialFormatError("blob digest mismatch")
    arrays = {}
    off = 0
    for b in header["blobs"]:
        size = int(np.prod(b["shape"]))
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(b["shape"])
        arrays[b["name"]] = arr.astype(np.float64)
        off += size * 4

    def load_net(prefix, spec):
        sizes = tuple(spec["sizes"])
        ws, bs = [], []
        for i in range(len(sizes) - 1):
            w = arrays[f"{prefix}.w{i}"]
            b_ = arrays[f"{prefix}.b{i}"]
            if w.shape != (sizes[i + 1], sizes[i]) or b_.shape != (sizes[i + 1],):
                raise MaterialFormatError(f"shape mismatch in {prefix} layer {i}")
            ws.append(w)
            bs.append(b_)
        return nn.DenseNet(
            sizes=sizes,
            weights=ws,
            biases=bs,
            activation=spec["activation"],
            residual=tuple(spec["residual"]),
        )

    flow = FlowModel(
        net=load_net("flow", header["flow"]["net"]),
        steps=int(header["flow"]["steps"]),
        sv=bool(header["sv"]),
        feature_dim=int(header["flow"]["feature_dim"]),
    )
    alb = AlbedoModel(
        net=load_net("albedo", header["albedo"]["net"]),
        sv=bool(header["sv"]),
        feature_dim=int(header["albedo"]["feature_dim"]),
    )
    texture = NeuralTexture(arrays["texture"]) if header["texture"] is not None else None
    return PureSampleMaterial(flow=flow, albedo=alb, texture=texture, metadata=header["metadata"])
