"""Walk-sample datasets: generation recipes and the on-disk format.

Records keep rejected walks (1-byte flag) so a single dataset serves both
the distribution model (accepted outgoing directions) and the albedo model
(acceptance ratios). File layout, little-endian:

    magic "PSMP" | u32 version=1 | u8 flags (bit0 = sv) | u64 count
    count records of {f32 wi_u, f32 wi_v, u8 channel, u8 accepted,
                      f32 wo_u, f32 wo_v, [f32 u, f32 v when sv]}
    optional trailer: "PSMT" | u32 length | metadata JSON

The trailer carries the scene hash, generation seed, per-channel counts and
trap statistics; readers that only understand the record block can stop
after ``count`` records.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .geom import dir_to_disk, sample_uniform_hemisphere
from .microgeo import MicrogeometryScene, trace_walks
from .rng import Rng

MAGIC = b"PSMP"
TRAILER_MAGIC = b"PSMT"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Columnar path-sample storage (one row per walk)."""

    sv: bool
    wi: np.ndarray        # (n, 2) f32 disk points
    channel: np.ndarray   # (n,) u8
    accepted: np.ndarray  # (n,) u8
    wo: np.ndarray        # (n, 2) f32, zeros when rejected
    uv: np.ndarray | None = None  # (n, 2) f32 when sv
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.wi.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_uv = (self.uv is None) == (other.uv is None) and (
            self.uv is None or np.array_equal(self.uv, other.uv)
        )
        return (
            self.sv == other.sv
            and np.array_equal(self.wi, other.wi)
            and np.array_equal(self.channel, other.channel)
            and np.array_equal(self.accepted, other.accepted)
            and np.array_equal(self.wo, other.wo)
            and same_uv
            and self.meta == other.meta
        )

    def channel_counts(self):
        return np.bincount(self.channel, minlength=3)

    def accepted_mask(self, channel=None):
        m = self.accepted.astype(bool)
        if channel is not None:
            m &= self.channel == channel
        return m


def _record_arrays(scene, wi_dirs, channel, rng, uv=None, threads=1):
    status, wo, _ = trace_walks(scene, wi_dirs, channel, rng, uv=uv, threads=threads)
    accepted = (status == 1).astype(np.uint8)
    trapped = int((status == 2).sum())
    wo_disk = np.where(accepted[:, None].astype(bool), wo[:, :2], 0.0).astype(np.float32)
    return accepted, wo_disk, trapped


def generate_homogeneous(
    scene: MicrogeometryScene,
    rng: Rng,
    n_wi: int = 4096,
    n_per_wi: int = 5000,
    threads: int = 1,
) -> Dataset:
    """Uniform incident directions, ``n_per_wi`` walks per direction per
    channel, all outcomes recorded."""
    if scene.sv:
        raise ValueError("generate_homogeneous requires a non-sv scene")
    dirs = sample_uniform_hemisphere(rng.substream(0), n_wi)
    total = n_wi * n_per_wi * 3
    wi = np.empty((total, 2), dtype=np.float32)
    channel = np.empty(total, dtype=np.uint8)
    accepted = np.empty(total, dtype=np.uint8)
    wo = np.empty((total, 2), dtype=np.float32)
    trapped = 0
    row = 0
    walk_rng = rng.substream(1)
    for c in range(3):
        wi_rep = np.repeat(dirs, n_per_wi, axis=0)
        acc, wo_disk, tr = _record_arrays(scene, wi_rep, c, walk_rng, threads=threads)
        n = wi_rep.shape[0]
        wi[row : row + n] = wi_rep[:, :2].astype(np.float32)
        channel[row : row + n] = c
        accepted[row : row + n] = acc
        wo[row : row + n] = wo_disk
        trapped += tr
        row += n
    return Dataset(
        sv=False,
        wi=wi,
        channel=channel,
        accepted=accepted,
        wo=wo,
        meta=_meta(scene, rng, trapped, total),
    )


def generate_sv(
    scene: MicrogeometryScene,
    rng: Rng,
    n_pairs: int = 500_000_000,
    threads: int = 1,
) -> Dataset:
    """One walk per record at a uniform (incident direction, uv, channel)."""
    if not scene.sv:
        raise ValueError("generate_sv requires an sv scene")
    dirs = sample_uniform_hemisphere(rng.substream(0), n_pairs)
    uv = rng.substream(2).uniform((n_pairs, 2))
    channel = rng.substream(3).integers(0, 3, size=n_pairs).astype(np.uint8)
    accepted = np.empty(n_pairs, dtype=np.uint8)
    wo = np.empty((n_pairs, 2), dtype=np.float32)
    trapped = 0
    walk_rng = rng.substream(1)
    for c in range(3):
        m = channel == c
        if not m.any():
            continue
        acc, wo_disk, tr = _record_arrays(scene, dirs[m], c, walk_rng, uv=uv[m], threads=threads)
        accepted[m] = acc
        wo[m] = wo_disk
        trapped += tr
    return Dataset(
        sv=True,
        wi=dirs[:, :2].astype(np.float32),
        channel=channel,
        accepted=accepted,
        wo=wo,
        uv=uv.astype(np.float32),
        meta=_meta(scene, rng, trapped, n_pairs),
    )


def generate_albedo_sv(
    scene: MicrogeometryScene,
    rng: Rng,
    n_wi: int = 1_000_000,
    n_per: int = 100,
    threads: int = 1,
) -> Dataset:
    """Groups of ``n_per`` walks sharing (incident direction, uv), per
    channel, for acceptance-ratio regression targets."""
    if not scene.sv:
        raise ValueError("generate_albedo_sv requires an sv scene")
    dirs = sample_uniform_hemisphere(rng.substream(0), n_wi)
    uv = rng.substream(2).uniform((n_wi, 2))
    total = n_wi * n_per * 3
    wi = np.empty((total, 2), dtype=np.float32)
    channel = np.empty(total, dtype=np.uint8)
    accepted = np.empty(total, dtype=np.uint8)
    wo = np.empty((total, 2), dtype=np.float32)
    uv_out = np.empty((total, 2), dtype=np.float32)
    trapped = 0
    row = 0
    walk_rng = rng.substream(1)
    for c in range(3):
        wi_rep = np.repeat(dirs, n_per, axis=0)
        uv_rep = np.repeat(uv, n_per, axis=0)
        acc, wo_disk, tr = _record_arrays(scene, wi_rep, c, walk_rng, uv=uv_rep, threads=threads)
        n = wi_rep.shape[0]
        wi[row : row + n] = wi_rep[:, :2].astype(np.float32)
        channel[row : row + n] = c
        accepted[row : row + n] = acc
        wo[row : row + n] = wo_disk
        uv_out[row : row + n] = uv_rep.astype(np.float32)
        trapped += tr
        row += n
    ds = Dataset(
        sv=True,
        wi=wi,
        channel=channel,
        accepted=accepted,
        wo=wo,
        uv=uv_out,
        meta=_meta(scene, rng, trapped, total),
    )
    ds.meta["group_size"] = n_per
    return ds


def _meta(scene, rng, trapped, total):
    return {
        "scene_hash": scene.scene_hash(),
        "seed": rng.seed,
        "stream": rng.stream,
        "trapped": trapped,
        "total": total,
    }


# -- binary io ----------------------------------------------------------------


def write(dataset: Dataset, path):
    n = len(dataset)
    rec = np.zeros(
        n,
        dtype=_record_dtype(dataset.sv),
    )
    rec["wi_u"] = dataset.wi[:, 0]
    rec["wi_v"] = dataset.wi[:, 1]
    rec["channel"] = dataset.channel
    rec["accepted"] = dataset.accepted
    rec["wo_u"] = dataset.wo[:, 0]
    rec["wo_v"] = dataset.wo[:, 1]
    if dataset.sv:
        rec["u"] = dataset.uv[:, 0]
        rec["v"] = dataset.uv[:, 1]
    meta_meta = dict(dataset.meta)
    meta_blob = json.dumps(meta_meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<B", 1 if dataset.sv else 0))
        f.write(struct.pack("<Q", n))
        f.write(rec.tobytes())
        f.write(TRAILER_MAGIC)
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)


def _record_dtype(sv):
    fields = [
        ("wi_u", "<f4"),
        ("wi_v", "<f4"),
        ("channel", "u1"),
        ("accepted", "u1"),
        ("wo_u", "<f4"),
        ("wo_v", "<f4"),
    ]
    if sv:
        fields += [("u", "<f4"), ("v", "<f4")]
    return np.dtype(fields)


def read(path) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 17:
        raise DatasetFormatError("truncated header")
    if data[:4] != MAGIC:
        raise DatasetFormatError("bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    (flags,) = struct.unpack_from("<B", data, 8)
    sv = bool(flags & 1)
    (count,) = struct.unpack_from("<Q", data, 9)
    dt = _record_dtype(sv)
    start = 17
    nbytes = count * dt.itemsize
    if len(data) < start + nbytes:
        raise DatasetFormatError("truncated records")
    rec = np.frombuffer(data[start : start + nbytes], dtype=dt)
    meta = {}
    off = start + nbytes
    if len(data) >= off + 8 and data[off : off + 4] == TRAILER_MAGIC:
        (mlen,) = struct.unpack_from("<I", data, off + 4)
        if len(data) < off + 8 + mlen:
            raise DatasetFormatError("truncated trailer")
        meta = json.loads(data[off + 8 : off + 8 + mlen].decode())
    return Dataset(
        sv=sv,
        wi=np.stack([rec["wi_u"], rec["wi_v"]], axis=1),
        channel=rec["channel"].copy(),
        accepted=rec["accepted"].copy(),
        wo=np.stack([rec["wo_u"], rec["wo_v"]], axis=1),
        uv=np.stack([rec["u"], rec["v"]], axis=1) if sv else None,
        meta=meta,
    )
