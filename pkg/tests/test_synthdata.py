import math
import struct

import numpy as np
import pytest
from scipy import ndimage
from sklearn.linear_model import LogisticRegression

from casvae import container
from casvae.errors import BadMagicError, ConfigError, DomainError, TruncatedError, VersionMismatchError
from casvae.evaluation import auc_score
from casvae.rng import Rng
from casvae.synthdata import (GALAXY, STAR, ImageSet, NormStats, SceneParams, add_noise_and_contaminant,
                              generate_dataset, load_set, normalize, render_galaxy, render_star, save_set)


def second_moment(plane):
    """Mean of the two axis variances of an intensity-weighted pixel grid."""
    plane = np.asarray(plane, dtype=np.float64)
    y, x = np.mgrid[:plane.shape[0], :plane.shape[1]]
    t = plane.sum()
    cy, cx = (plane * y).sum() / t, (plane * x).sum() / t
    return ((plane * ((y - cy) ** 2 + (x - cx) ** 2)).sum() / t) / 2


# -- rendering ---------------------------------------------------------------

def test_star_centered_and_symmetric():
    img = render_star(SceneParams(STAR, 500.0, psf_sigma=1.3), 2, 33, 33)
    for plane in img:
        assert np.unravel_index(plane.argmax(), plane.shape) == (16, 16)
        for other in (plane[::-1], plane[:, ::-1], plane.T):
            np.testing.assert_allclose(plane, other, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("sigma", [0.8, 1.5, 2.5, 4.0])
def test_star_flux_and_moment(sigma):
    img = render_star(SceneParams(STAR, 1000.0, psf_sigma=sigma), 1, 32, 32)
    assert abs(img.sum() / 1000.0 - 1) < 0.01
    assert abs(second_moment(img[0]) / sigma ** 2 - 1) < 0.05


def test_channel_ratios_scale_bands():
    img = render_star(SceneParams(STAR, 100.0, channel_ratios=(0.5, 1.0, 1.5)), 3, 32, 32)
    np.testing.assert_allclose(img.sum(axis=(1, 2)), [50, 100, 150], rtol=1e-3)


def test_out_of_frame_jitter():
    with pytest.raises(DomainError):
        render_star(SceneParams(STAR, 10.0, center_jitter=(20.0, 0.0)), 1, 32, 32)


def test_galaxy_round_is_symmetric():
    img = render_galaxy(SceneParams(GALAXY, 800.0, psf_sigma=1.2, half_light_radius=3.0), 1, 33, 33)[0]
    peak = img.max()
    for other in (img[::-1], img[:, ::-1], img.T):
        assert np.abs(img - other).max() < 0.01 * peak


def test_galaxy_wider_than_star_and_conserves_flux():
    for hlr, q, angle in [(1.6, 1.0, 0.0), (2.5, 0.5, 0.7), (4.0, 0.3, 2.0)]:
        g = render_galaxy(SceneParams(GALAXY, 1000.0, psf_sigma=1.2, half_light_radius=hlr,
                                      axis_ratio=q, position_angle=angle), 1, 32, 32)
        s = render_star(SceneParams(STAR, 1000.0, psf_sigma=1.2), 1, 32, 32)
        assert second_moment(g[0]) > second_moment(s[0])
        assert abs(g.sum() / 1000.0 - 1) < 0.02


def test_galaxy_requires_extended_radius():
    with pytest.raises(DomainError):
        render_galaxy(SceneParams(GALAXY, 1.0, psf_sigma=2.0, half_light_radius=1.5), 1, 16, 16)


# -- noise and contamination ---------------------------------------------------------

def test_noise_free_is_identity():
    img = render_star(SceneParams(STAR, 100.0), 3, 16, 16)
    out = add_noise_and_contaminant(img, 0.0, 0.0, Rng(0))
    assert np.array_equal(out, img)


def test_blank_frame_noise_level():
    out = add_noise_and_contaminant(np.zeros((1, 100, 100), np.float32), 2.5, 0.0, Rng(4))
    assert abs(out.std() / 2.5 - 1) < 0.02


def test_contamination_adds_second_peak():
    noise = 1.0
    for i in range(40):
        r = Rng.derive(9, i)
        cls = i % 2
        primary = SceneParams(cls, 3000.0, psf_sigma=1.2, half_light_radius=2.0)
        img = render_star(primary, 1, 32, 32) if cls == STAR else render_galaxy(primary, 1, 32, 32)
        out = add_noise_and_contaminant(img, noise, 1.0, r, primary)[0]
        smooth = ndimage.gaussian_filter(out, 1.0)
        peaks = (smooth == ndimage.maximum_filter(smooth, size=5)) & (out > 5 * noise)
        assert peaks.sum() >= 2


def test_negative_noise_rejected():
    with pytest.raises(DomainError):
        add_noise_and_contaminant(np.zeros((1, 4, 4)), -1.0, 0.0, Rng(0))


# -- dataset generation ----------------------------------------------------------------

def test_balance_and_determinism():
    a = generate_dataset(100, 0.5, seed=3, H=16, W=16)
    assert int(a.labels.sum()) == 50
    b = generate_dataset(100, 0.5, seed=3, H=16, W=16)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    c = generate_dataset(101, 0.7, seed=3, H=16, W=16)
    assert abs(int(c.labels.sum()) - 0.7 * 101) <= 1
    assert not np.array_equal(generate_dataset(100, 0.5, seed=4, H=16, W=16).images, a.images)


def test_dataset_shapes_and_full_size():
    d = generate_dataset(4, seed=0, C=5, H=64, W=64)
    assert d.images.shape == (4, 5, 64, 64) and d.images.dtype == np.float32
    assert np.all(np.isfinite(d.images))


def test_invalid_arguments():
    with pytest.raises(ConfigError):
        generate_dataset(10, 1.5)
    with pytest.raises(ValueError):
        generate_dataset(1)


def test_stars_are_more_compact_population():
    d = generate_dataset(400, 0.5, contamination_prob=0.0, noise_sigma=0.0, seed=5)
    moments = np.array([second_moment(img.sum(axis=0)) for img in d.images])
    star, gal = moments[d.labels == STAR], moments[d.labels == GALAXY]
    gap = gal.mean() - star.mean()
    se = math.sqrt(star.var() / len(star) + gal.var() / len(gal))
    assert gap > 3 * se


def test_classes_separable_by_moment_probe():
    d = generate_dataset(1200, 0.5, seed=21)
    y, x = np.mgrid[:32, :32]
    r2 = (y - 15.5) ** 2 + (x - 15.5) ** 2
    aperture = r2 < 8 ** 2
    feats = []
    for img in d.images:
        plane = np.clip(img.sum(axis=0), 0, None) * aperture
        t = plane.sum()
        feats.append([(plane * r2).sum() / t, math.log(t + 1), plane.max() / t])
    feats = np.array(feats)
    feats = (feats - feats.mean(0)) / feats.std(0)
    model = LogisticRegression().fit(feats[:800], d.labels[:800])
    assert auc_score(model.decision_function(feats[800:]), d.labels[800:]) > 0.95


# -- normalization ----------------------------------------------------------------------

def test_normalize_train_statistics():
    d = generate_dataset(200, seed=1, H=16, W=16)
    out, stats = normalize(d)
    assert np.all(np.abs(out.images.mean(axis=(0, 2, 3))) < 1e-5)
    std = out.images.std(axis=(0, 2, 3))
    assert np.all((std > 0.999) & (std < 1.001))
    assert "norm_beta" in out.meta


def test_normalize_reuses_train_stats_exactly():
    train = generate_dataset(100, seed=1, H=16, W=16)
    evals = generate_dataset(50, seed=2, H=16, W=16)
    _, stats = normalize(train)
    a, s1 = normalize(evals, stats)
    b, s2 = normalize(evals, stats)
    assert s1 is stats and s2 is stats
    assert np.array_equal(a.images, b.images)


def test_normalize_constant_channel_with_stats():
    images = np.zeros((3, 1, 4, 4), np.float32)
    stats = NormStats([2.0], [0.0], [1e-12])
    out, _ = normalize(ImageSet(images), stats)
    assert np.all(out.images == 0)


def test_normalize_zero_variance_channel_errors():
    with pytest.raises(DomainError):
        normalize(ImageSet(np.ones((3, 1, 4, 4), np.float32)))


def test_norm_stats_round_trip(tmp_path):
    _, stats = normalize(generate_dataset(20, seed=1, H=8, W=8))
    stats.save(tmp_path / "s.cvt")
    back = NormStats.load(tmp_path / "s.cvt")
    for f in ("beta", "mean", "std"):
        assert np.array_equal(getattr(back, f), getattr(stats, f))


# -- container -------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    d = generate_dataset(12, seed=8, H=8, W=8)
    save_set(d, tmp_path / "d.cvt")
    back = load_set(tmp_path / "d.cvt")
    assert np.array_equal(back.images, d.images)
    assert np.array_equal(back.labels, d.labels)
    assert back.meta == d.meta


def test_file_size_arithmetic(tmp_path):
    images = np.random.default_rng(0).standard_normal((3, 2, 5, 4)).astype(np.float32)
    sections = {"images": images}
    container.write_sections(tmp_path / "x.cvt", sections)
    size = (tmp_path / "x.cvt").stat().st_size
    assert size == container.header_size(sections) + 4 * images.size
    # magic + version + count | name_len + "images" | ndim + 4 dims | dtype
    assert container.header_size(sections) == 12 + 4 + 6 + 4 + 16 + 1


def test_bad_magic(tmp_path):
    p = tmp_path / "d.cvt"
    save_set(generate_dataset(4, seed=0, H=8, W=8), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError, match="bad magic"):
        load_set(p)


def test_truncated_and_version(tmp_path):
    p = tmp_path / "d.cvt"
    save_set(generate_dataset(4, seed=0, H=8, W=8), p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-10])
    with pytest.raises(TruncatedError):
        load_set(p)
    p.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(VersionMismatchError):
        load_set(p)


def test_unlabeled_file_and_label_skip(tmp_path):
    d = generate_dataset(6, seed=0, H=8, W=8)
    save_set(d, tmp_path / "u.cvt", include_labels=False)
    assert load_set(tmp_path / "u.cvt").labels is None
    save_set(d, tmp_path / "l.cvt")
    assert load_set(tmp_path / "l.cvt", with_labels=False).labels is None


def test_meta_encoding_rejects_newlines():
    with pytest.raises(container.ContainerError):
        container.encode_meta({"k": "a\nb"})
