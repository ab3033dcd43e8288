import numpy as np
import pytest

from skinsynth.anatomy import LayerConfig, SkinConfig, build_skin_model, embed_lesion, build_layers
from skinsynth.lesion import LesionParams, LesionVolume, grow
from skinsynth.optics import OpticsConfig
from skinsynth.render import Camera, MaterialOverrides, RenderConfig, render, render_mask
from skinsynth.render.color import (
    bin_weights, spectral_to_linear_rgb, spectral_to_srgb, srgb_decode, srgb_encode, to_uint8,
)
from skinsynth.render.envmap import EnvMap, load_envmap, sky_gradient, uniform_env
from skinsynth.formats import write_pfm

SMALL = Camera(16, 16)


def _model(seed=0, lesion=None, **kw):
    cfg = SkinConfig(layers=LayerConfig(resolution=32), **kw)
    return build_skin_model(cfg, np.random.default_rng(seed), lesion)


# -- environment maps -------------------------------------------------------

def test_uniform_env_lookup():
    env = load_envmap("uniform(1.0)")
    d = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_allclose(env.lookup(d), 1.0)
    assert load_envmap("uniform").name == "uniform(1)"


def test_pfm_env_azimuth(tmp_path):
    img = np.zeros((1, 2, 3), np.float32)
    img[0, 0] = (1, 0, 0)
    img[0, 1] = (0, 0, 1)
    write_pfm(tmp_path / "e.pfm", img)
    env = load_envmap(tmp_path / "e.pfm")
    np.testing.assert_allclose(env.lookup([0.0, -1.0, 0.0]), [1, 0, 0], atol=1e-6)
    np.testing.assert_allclose(env.lookup([0.0, 1.0, 0.0]), [0, 0, 1], atol=1e-6)


@pytest.mark.parametrize("suffix", [".pfm", ".hdr"])
def test_env_roundtrip(tmp_path, suffix):
    env = sky_gradient(8, 16)
    env.save(tmp_path / f"s{suffix}")
    back = load_envmap(tmp_path / f"s{suffix}")
    if suffix == ".pfm":
        np.testing.assert_array_equal(back.image, env.image)
    else:
        bound = env.image.max(axis=2, keepdims=True) / 128
        assert np.all(np.abs(back.image - env.image) <= bound)
        back.save(tmp_path / "t.hdr")
        assert (tmp_path / "t.hdr").read_bytes() == (tmp_path / "s.hdr").read_bytes()


def test_env_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_envmap(tmp_path / "missing.hdr")
    with pytest.raises(ValueError):
        EnvMap(-np.ones((1, 1, 3)))
    assert load_envmap("uniform(2)", scale=0.5).lookup([0, 0, 1]) == pytest.approx([1, 1, 1])


# -- camera and colour -------------------------------------------------------

def test_camera_geometry():
    cam = Camera(64, 64, 75.0, 15.0)
    d = cam.ray_directions()
    assert d.shape == (64, 64, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0)
    # the edge of the image sees the half field of view
    edge = np.degrees(np.arctan2(-d[32, 0, 0] * 1, -d[32, 0, 2]))
    assert abs(edge) == pytest.approx(37.5, abs=0.6)
    assert d[0, 32, 1] > 0 and d[63, 32, 1] < 0
    assert cam.footprint_mm() == pytest.approx(15 * np.tan(np.radians(37.5)))
    for bad in ({"fov_deg": 180}, {"width": 8}, {"height_mm": 0}):
        with pytest.raises(ValueError):
            Camera(**bad)


def test_colour_conversion():
    k = 16
    assert np.all(spectral_to_srgb(np.zeros(k)) == 0)
    flat = to_uint8(spectral_to_srgb(np.full(k, 0.5)))
    assert abs(int(flat[0]) - int(flat[1])) < 3 and abs(int(flat[1]) - int(flat[2])) < 3
    s = np.random.default_rng(0).uniform(0, 0.3, size=(10, k))
    np.testing.assert_allclose(spectral_to_linear_rgb(2 * s), 2 * spectral_to_linear_rgb(s), rtol=1e-12)
    np.testing.assert_allclose(spectral_to_linear_rgb(np.ones(k)), 1.0, atol=1e-12)
    x = np.linspace(0, 1, 101)
    np.testing.assert_allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)
    assert bin_weights(k)[:, 1].sum() == pytest.approx(1.0)


def test_flat_spectrum_neutral_against_tabulated_cmf():
    # white point from the bundled CIE table by direct trapezoidal integration
    from skinsynth.render.color import cie_table
    t = cie_table()
    sel = (t[:, 0] >= 380) & (t[:, 0] <= 780)
    xyz = np.array([np.trapezoid(t[sel, c], t[sel, 0]) for c in (1, 2, 3)])
    xyz /= xyz[1]
    w = bin_weights(16).sum(axis=0)
    np.testing.assert_allclose(w, xyz, rtol=5e-3)


# -- rendering ----------------------------------------------------------------

def test_empty_scene_returns_env():
    out = render(None, SMALL, uniform_env(0.5), RenderConfig(spp=256, seed=1))
    np.testing.assert_allclose(out.radiance, 0.5, rtol=0.01)
    assert out.mask.sum() == 0
    assert out.metadata["nonfinite_samples"] == 0


def test_opaque_epidermis_is_black():
    m = _model()
    k = OpticsConfig().n_wavelengths
    mu_a = np.zeros((5, k))
    mu_a[0] = 1e5
    ov = MaterialOverrides(mu_a=mu_a)
    out = render(m, SMALL, uniform_env(1.0), RenderConfig(spp=8), optics=OpticsConfig(roughness=0.001),
                 overrides=ov)
    # only the specular reflection of the env survives (about 2.8% at normal incidence)
    assert out.radiance.mean() < 0.06


def test_render_determinism_and_threads():
    m = _model(1)
    a = render(m, SMALL, "sky-gradient", RenderConfig(spp=4, seed=3, threads=1))
    b = render(m, SMALL, "sky-gradient", RenderConfig(spp=4, seed=3, threads=2))
    c = render(m, SMALL, "sky-gradient", RenderConfig(spp=4, seed=4, threads=1))
    np.testing.assert_array_equal(a.spectral, b.spectral)
    assert not np.array_equal(a.spectral, c.spectral)
    assert a.image.dtype == np.uint8 and a.image.shape == (16, 16, 3)


def test_render_outputs_saved(tmp_path):
    out = render(None, SMALL, uniform_env(0.2), RenderConfig(spp=4))
    paths = out.save(tmp_path, "x", pfm=True)
    assert all(p.exists() for p in paths.values())


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(spp=0)
    with pytest.raises(ValueError):
        RenderConfig(wavelengths_per_path=3)


# -- masks ----------------------------------------------------------------------

def _single_voxel_lesion(n=32):
    occ = np.zeros((n, n, n), bool)
    occ[n // 2, n // 2, n // 2] = True
    birth = np.where(occ, 0, -1).astype(np.int32)
    return LesionVolume(occ, birth, (n // 2, n // 2, n // 2), pitch_um=500.0,
                        clamp_depth=n // 2 - 2)


def test_mask_without_lesion_is_empty():
    lesion, _ = grow(LesionParams(timepoints=10, seed=2, grid_shape=(48, 48, 48)))
    m = _model(lesion=lesion)
    cam = Camera(64, 64)
    assert render_mask(m, cam).sum() > 0
    assert render_mask(m.without_lesion(), cam).sum() == 0


def test_single_voxel_mask_centred():
    stack = build_layers(LayerConfig(resolution=32, roughness_um=(0, 0, 0, 0)), np.random.default_rng(0))
    m = embed_lesion(stack, _single_voxel_lesion())
    mask = render_mask(m, Camera(64, 64))
    assert 0 < mask.sum() < 20
    rows, cols = np.nonzero(mask)
    assert abs(rows.mean() - 31.5) <= 1 and abs(cols.mean() - 31.5) <= 1


def test_mask_area_grows_with_snapshots():
    p = LesionParams(timepoints=8, seed=6, grid_shape=(48, 48, 48))
    _, snaps = grow(p, snapshots=range(1, 9))
    stack = build_layers(LayerConfig(resolution=32), np.random.default_rng(1))
    cam = Camera(48, 48)
    # a fixed placement keeps the comparison about the lesion only
    base = embed_lesion(stack, snaps[8]).placement
    areas = [render_mask(embed_lesion(stack, snaps[t], base), cam).sum() for t in range(1, 9)]
    assert all(b >= a for a, b in zip(areas, areas[1:]))
