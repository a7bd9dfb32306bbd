import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from puresample import geom
from puresample.rng import Rng


def test_dir_to_disk_examples():
    assert np.allclose(geom.dir_to_disk(geom.direction(0, 0, 1)), [0, 0])
    d = geom.direction(np.sin(np.radians(60)), 0, np.cos(np.radians(60)))
    assert np.allclose(geom.dir_to_disk(d), [0.8660254, 0], atol=1e-6)
    assert np.allclose(geom.dir_to_disk(np.array([0.0, 1.0, 0.0])), [0, 1])


def test_dir_to_disk_rejects_lower_hemisphere():
    with pytest.raises(geom.OffManifoldError):
        geom.dir_to_disk(np.array([0.0, 0.0, -0.5]))
    with pytest.raises(geom.OffManifoldError):
        geom.direction(0.0, 0.0, -1.0)


def test_disk_to_dir_examples():
    assert np.allclose(geom.disk_to_dir(np.array([0.6, 0.0])), [0.6, 0.0, 0.8])
    assert np.allclose(geom.disk_to_dir(np.array([0.0, 0.0])), [0, 0, 1])
    d = geom.disk_to_dir(np.array([0.8660254, 0.0]))
    assert abs(d[2] - 0.5) < 1e-6


def test_disk_to_dir_rejects_outside():
    with pytest.raises(geom.OffManifoldError):
        geom.disk_to_dir(np.array([0.9, 0.9]))


def test_round_trip_many():
    rng = Rng(3)
    d = geom.sample_uniform_hemisphere(rng, 100_000)
    back = geom.disk_to_dir(geom.dir_to_disk(d))
    assert np.abs(back - d).max() <= 1e-6


@given(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999))
@settings(max_examples=200, deadline=None)
def test_round_trip_property(u, v):
    if u * u + v * v > 1.0:
        return
    p = np.array([u, v])
    assert np.abs(geom.dir_to_disk(geom.disk_to_dir(p)) - p).max() <= 1e-9


def test_pdf_projected_to_solid():
    n = geom.direction(0, 0, 1)
    assert np.isclose(geom.pdf_projected_to_solid(1 / np.pi, n), 1 / np.pi)
    d60 = geom.direction(np.sin(np.radians(60)), 0, 0.5)
    assert np.isclose(geom.pdf_projected_to_solid(1 / np.pi, d60), 0.15915494, atol=1e-6)
    assert geom.pdf_projected_to_solid(0.0, d60) == 0.0


def test_uniform_hemisphere_statistics():
    rng = Rng(11)
    d = geom.sample_uniform_hemisphere(rng, 1_000_000)
    assert d[:, 2].min() >= 0.0
    assert abs(d[:, 2].mean() - 0.5) < 0.002
    assert abs((d[:, 2] > 0.5).mean() - 0.5) < 0.003
    assert np.abs(np.linalg.norm(d, axis=1) - 1).max() < 1e-12


def test_gaussian2d():
    assert np.isclose(geom.gaussian2d_pdf(np.array([0.0, 0.0])), 0.15915494, atol=1e-6)
    assert np.isclose(geom.gaussian2d_pdf(np.array([1.0, 0.0])), 0.09653235, atol=1e-6)
    rng = Rng(5)
    x = geom.gaussian2d_sample(rng, 1_000_000)
    assert abs(x[:, 0].var() - 1.0) < 0.005
    assert abs(x[:, 1].var() - 1.0) < 0.005
    assert abs(x.mean()) < 0.005


def test_gaussian2d_integrates_to_one():
    n = 400
    xs = np.linspace(-6, 6, n, endpoint=False) + 6.0 / n
    gx, gy = np.meshgrid(xs, xs)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    total = geom.gaussian2d_pdf(pts).sum() * (12.0 / n) ** 2
    assert abs(total - 1.0) < 1e-4


def test_sh_first_coefficient_and_zonal():
    rng = Rng(7)
    d = geom.sample_uniform_hemisphere(rng, 100)
    enc = geom.sh_encode(d)
    assert np.allclose(enc[:, 0], 0.282095, atol=1e-6)
    pole = geom.sh_encode(np.array([0.0, 0.0, 1.0]))
    nonzonal = [i for i in range(25) if i not in (0, 2, 6, 12, 20)]
    assert np.abs(pole[nonzonal]).max() < 1e-12


def test_sh_orthonormality_mc():
    # Monte Carlo Gram matrix over the full sphere
    rng = Rng(13)
    n = 1_000_000
    g = rng.normal((n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    enc = geom.sh_encode(g)
    gram = enc.T @ enc / n * 4 * np.pi
    assert np.abs(gram - np.eye(25)).max() < 0.01


def test_sh_matches_scipy():
    # cross-check a few directions against scipy's spherical harmonics
    from scipy.special import sph_harm_y

    rng = Rng(17)
    d = geom.sample_uniform_hemisphere(rng, 16)
    theta = np.arccos(d[:, 2])
    phi = np.arctan2(d[:, 1], d[:, 0])
    enc = geom.sh_encode(d)
    idx = 0
    for l in range(5):
        for m in range(-l, l + 1):
            y = sph_harm_y(l, abs(m), theta, phi)
            if m == 0:
                ref = y.real
            elif m > 0:
                ref = np.sqrt(2) * (-1.0) ** m * y.real
            else:
                ref = np.sqrt(2) * (-1.0) ** m * y.imag
            assert np.abs(enc[:, idx] - ref).max() < 1e-10, (l, m)
            idx += 1
