import json

import numpy as np
import pytest

from puresample.geom import sample_uniform_hemisphere
from puresample.microgeo import (
    MicroBrdf,
    SceneError,
    micro_sample,
    scene_from_json,
    trace_walk,
    trace_walks,
)
from puresample.rng import Rng
from puresample.validate import chi2_equal_area_disk

FLAT_LAMBERTIAN = '{"variant":"flat","brdf":{"kind":"lambertian","albedo":[0.8,0.5,0.2]}}'


def mirror_heightfield_json(roughness=0.5, resolution=48, seed=7):
    return json.dumps(
        {
            "variant": "heightfield",
            "heights": {"resolution": resolution, "roughness": roughness, "seed": seed},
            "brdf": {"kind": "mirror", "reflectance": [1.0, 1.0, 1.0]},
        }
    )


SLAB = json.dumps(
    {
        "variant": "layered-slab",
        "top": {"kind": "rough-dielectric", "roughness": 0.35, "ior": 1.5},
        "bottom": {"kind": "rough-conductor", "roughness": 0.3, "reflectance": [1.0, 0.7, 0.4]},
        "medium": {
            "sigma_t": [0.4, 0.4, 0.4],
            "albedo": [0.95, 0.9, 0.8],
            "phase": {"kind": "henyey-greenstein", "g": 0.4},
        },
    }
)


# -- micro_sample ------------------------------------------------------------------


def test_micro_sample_lambertian_weight():
    b = MicroBrdf(kind="lambertian", albedo=np.array([0.8, 0.5, 0.2]))
    rng = Rng(1)
    wi = np.array([0.3, 0.2, np.sqrt(1 - 0.09 - 0.04)])
    for c, expect in enumerate([0.8, 0.5, 0.2]):
        wo, w = micro_sample(b, wi, c, rng)
        assert w == pytest.approx(expect)
        assert wo[2] > 0


def test_micro_sample_mirror():
    b = MicroBrdf(kind="mirror", reflectance=np.array([1.0, 1.0, 1.0]))
    wi = np.array([0.6, 0.0, 0.8])
    wo, w = micro_sample(b, wi, 0, Rng(2))
    assert np.allclose(wo, [-0.6, 0.0, 0.8])
    assert w == 1.0


def test_micro_weights_in_unit_interval():
    rng = Rng(3)
    brdfs = [
        MicroBrdf(kind="lambertian", albedo=np.array([0.9, 0.4, 0.1])),
        MicroBrdf(kind="mirror", reflectance=np.array([0.7, 0.7, 0.7])),
        MicroBrdf(kind="rough-conductor", roughness=0.4, reflectance=np.array([1.0, 0.9, 0.6])),
        MicroBrdf(kind="rough-dielectric", roughness=0.25, ior=1.5),
        MicroBrdf(kind="isotropic"),
        MicroBrdf(kind="henyey-greenstein", g=0.6),
    ]
    dirs = sample_uniform_hemisphere(rng, 10_000)
    for b in brdfs:
        for i in range(0, 10_000, 997):
            wo, w = micro_sample(b, dirs[i], i % 3, rng)
            assert 0.0 <= w <= 1.0


def test_micro_sample_weight_clamped(monkeypatch):
    # a lambertian albedo above 1 would give weight above 1; the sampler clamps
    b = MicroBrdf(kind="lambertian", albedo=np.array([1.3, 1.3, 1.3]))
    wo, w = micro_sample(b, np.array([0.0, 0.0, 1.0]), 0, Rng(4))
    assert w == 1.0


# -- trace_walk --------------------------------------------------------------------


def test_flat_lambertian_acceptance_fraction():
    scene = scene_from_json(FLAT_LAMBERTIAN)
    rng = Rng(5)
    wi = sample_uniform_hemisphere(rng, 100_000)
    status, _, _ = trace_walks(scene, wi, 0, rng)
    assert abs((status == 1).mean() - 0.8) < 0.01


def test_mirror_heightfield_all_exit():
    scene = scene_from_json(mirror_heightfield_json())
    rng = Rng(6)
    wi = sample_uniform_hemisphere(rng, 50_000)
    status, wo, events = trace_walks(scene, wi, 0, rng)
    assert np.all(status == 1)
    assert wo[:, 2].min() > 0.0
    assert events.max() <= scene.max_events


def test_flat_lambertian_disk_uniform():
    scene = scene_from_json(FLAT_LAMBERTIAN)
    rng = Rng(7)
    wi = sample_uniform_hemisphere(rng, 150_000)
    status, wo, _ = trace_walks(scene, wi, 0, rng)
    stat, p = chi2_equal_area_disk(wo[status == 1][:, :2], 64)
    assert p > 0.01


def test_unbiasedness_flat_lambertian():
    # indicator(exited) estimates the albedo within 3 binomial sigma
    scene = scene_from_json(FLAT_LAMBERTIAN)
    rng = Rng(8)
    n = 1_000_000
    wi = sample_uniform_hemisphere(rng, n)
    status, _, _ = trace_walks(scene, wi, 1, rng)
    a = 0.5
    sigma = np.sqrt(a * (1 - a) / n)
    assert abs((status == 1).mean() - a) <= 3 * sigma


def test_walk_determinism():
    scene = scene_from_json(SLAB)
    wi = sample_uniform_hemisphere(Rng(9), 5000)
    s1, w1, e1 = trace_walks(scene, wi, 2, Rng(10, 3))
    s2, w2, e2 = trace_walks(scene, wi, 2, Rng(10, 3))
    assert np.array_equal(s1, s2)
    assert np.array_equal(w1, w2)
    assert np.array_equal(e1, e2)


def test_walk_thread_count_invariance():
    scene = scene_from_json(mirror_heightfield_json(resolution=32))
    wi = sample_uniform_hemisphere(Rng(11), 70_000)  # spans two chunks
    s1, w1, _ = trace_walks(scene, wi, 0, Rng(12), threads=1)
    s2, w2, _ = trace_walks(scene, wi, 0, Rng(12), threads=3)
    assert np.array_equal(s1, s2)
    assert np.array_equal(w1, w2)


def test_slab_exits_upper_hemisphere():
    scene = scene_from_json(SLAB)
    rng = Rng(13)
    wi = sample_uniform_hemisphere(rng, 20_000)
    status, wo, events = trace_walks(scene, wi, 0, rng)
    frac = (status == 1).mean()
    assert 0.2 < frac < 0.9
    assert wo[status == 1][:, 2].min() > 0.0
    assert events.max() <= scene.max_events


def test_spherefield_traces():
    scene = scene_from_json(
        '{"variant":"sphere-field","radius":0.06,"seed":3,"brdf":{"kind":"lambertian","albedo":[0.9,0.6,0.3]}}'
    )
    rng = Rng(14)
    wi = sample_uniform_hemisphere(rng, 20_000)
    status, wo, events = trace_walks(scene, wi, 0, rng)
    frac = (status == 1).mean()
    # multibounce absorbs a bit more than the single-event albedo
    assert 0.6 < frac <= 0.9
    assert wo[status == 1][:, 2].min() > 0.0


def test_trace_walk_single():
    scene = scene_from_json(FLAT_LAMBERTIAN)
    out = trace_walk(scene, np.array([0.0, 0.0, 1.0]), 0, Rng(15))
    assert out.status in ("exited", "absorbed")
    if out.status == "exited":
        assert out.wo[2] >= 0
    assert out.events == 1


def test_trace_rejects_lower_hemisphere():
    scene = scene_from_json(FLAT_LAMBERTIAN)
    with pytest.raises(ValueError):
        trace_walks(scene, np.array([[0.0, 0.0, -1.0]]), 0, Rng(16))


# -- scene parsing -----------------------------------------------------------------


def test_scene_from_json_flat():
    scene = scene_from_json(FLAT_LAMBERTIAN)
    assert scene.variant == "flat"
    assert np.allclose(scene.brdf.albedo, [0.8, 0.5, 0.2])
    assert scene.max_events == 256


def test_scene_negative_sigma_t_names_field():
    bad = json.loads(SLAB)
    bad["medium"]["sigma_t"] = [-0.1, 0.4, 0.4]
    with pytest.raises(SceneError, match="sigma_t"):
        scene_from_json(json.dumps(bad))


def test_scene_empty_heightfield_rejected():
    with pytest.raises(SceneError, match="heights"):
        scene_from_json(
            '{"variant":"heightfield","heights":[],"brdf":{"kind":"mirror","reflectance":[1,1,1]}}'
        )


def test_scene_unknown_variant():
    with pytest.raises(SceneError, match="variant"):
        scene_from_json('{"variant":"torus"}')


def test_scene_bad_albedo_range():
    with pytest.raises(SceneError, match="albedo"):
        scene_from_json('{"variant":"flat","brdf":{"kind":"lambertian","albedo":[1.5,0,0]}}')


def test_scene_roughness_range():
    with pytest.raises(SceneError, match="roughness"):
        scene_from_json(
            '{"variant":"flat","brdf":{"kind":"rough-conductor","roughness":0.0,"reflectance":[1,1,1]}}'
        )


def test_scene_hash_stable():
    a = scene_from_json(FLAT_LAMBERTIAN)
    b = scene_from_json(FLAT_LAMBERTIAN)
    assert a.scene_hash() == b.scene_hash()


def test_sv_heightfield_per_texel():
    scene = scene_from_json(
        json.dumps(
            {
                "variant": "heightfield",
                "sv": True,
                "heights": [[0.0, 0.0], [0.0, 0.0]],
                "texels": {
                    "palette": [
                        {"kind": "lambertian", "albedo": [0.9, 0.9, 0.9]},
                        {"kind": "lambertian", "albedo": [0.1, 0.1, 0.1]},
                    ],
                    "index": [[0, 0], [1, 1]],
                },
            }
        )
    )
    rng = Rng(17)
    n = 4000
    # entry uv pinned inside texel (0, 0) -> bright, texel (1, *) -> dark
    wi = np.tile(np.array([0.0, 0.0, 1.0]), (n, 1))
    uv_bright = np.tile(np.array([0.25, 0.25]), (n, 1))
    uv_dark = np.tile(np.array([0.75, 0.25]), (n, 1))
    s_b, _, _ = trace_walks(scene, wi, 0, rng, uv=uv_bright)
    s_d, _, _ = trace_walks(scene, wi, 0, rng, uv=uv_dark)
    assert abs((s_b == 1).mean() - 0.9) < 0.05
    assert abs((s_d == 1).mean() - 0.1) < 0.05
