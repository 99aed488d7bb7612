import numpy as np
import pytest

from bronchus_idg.core.config import IdgConfig
from bronchus_idg.core.errors import EmptyMaskError, NormalizationError, ParameterError
from bronchus_idg.grid import BinaryMask3, Volume3
from bronchus_idg.intensity import (
    airway_intensity_profile,
    build_dark_hard_weight_map,
    build_intensity_weight_map,
    difficulty_F,
    fit_airway_model,
)
from bronchus_idg.morphology import build_dilated_region


@pytest.fixture
def noisy_case(tube, rng):
    """归一化图像: 气道内约 0.1, 气道外约 0.3。"""
    inside = rng.normal(0.1, 0.02, size=tube.shape.extents)
    outside = rng.normal(0.3, 0.05, size=tube.shape.extents)
    image = Volume3(tube.shape, np.clip(np.where(tube.data, inside, outside), 0.0, 1.0))
    return image, tube


def test_difficulty_ramp_values():
    assert difficulty_F(0.5, 0.1, 1.5, 0.5) == pytest.approx(0.5)
    assert difficulty_F(0.5, 0.1, 1.5, 0.65) == pytest.approx(1.0)
    assert difficulty_F(0.5, 0.1, 1.5, 0.35) == pytest.approx(0.0, abs=1e-12)
    assert difficulty_F(0.5, 0.1, 1.5, 0.9) == 1.0
    assert difficulty_F(0.5, 0.1, 1.5, 0.0) == 0.0
    assert difficulty_F(0.5, 0.1, 1.5, 0.425) == pytest.approx(0.25)


def test_difficulty_ramp_is_monotone_and_bounded():
    x = np.linspace(-1.0, 2.0, 2001)
    f = difficulty_F(0.3, 0.05, 1.5, x)
    assert f.min() == 0.0 and f.max() == 1.0
    assert np.all(np.diff(f) >= 0.0)


def test_difficulty_ramp_is_affine_equivariant():
    mu, sigma, theta = 0.2, 0.05, 1.5
    a, b = 2.0, 0.3
    x = np.linspace(-0.2, 0.6, 81)
    base = difficulty_F(mu, sigma, theta, x)
    moved = difficulty_F(a * mu + b, a * sigma, theta, a * x + b)
    assert np.allclose(moved, base, rtol=0.0, atol=1e-12)


@pytest.mark.parametrize("sigma, theta", [(0.0, 1.5), (-1.0, 1.5), (0.1, 0.0)])
def test_difficulty_rejects_bad_parameters(sigma, theta):
    with pytest.raises(ParameterError):
        difficulty_F(0.5, sigma, theta, 0.5)


def test_fit_airway_model_statistics(noisy_case):
    image, mask = noisy_case
    model = fit_airway_model(image, mask, IdgConfig())
    x = image.data.astype(np.float64)
    inside = x[mask.data]
    d_o = 1.0 - (x[~mask.data] - inside.mean())
    assert model.mu_in == pytest.approx(inside.mean())
    assert model.sigma_in == pytest.approx(inside.std())
    assert model.mu_out == pytest.approx(d_o.mean())
    assert model.sigma_out == pytest.approx(d_o.std())
    assert model.n_in == mask.count()
    assert model.n_out == mask.shape.size - mask.count()


def test_fit_airway_model_constant_intensity_uses_floor(tube):
    image = Volume3(tube.shape, np.full(tube.shape.extents, 0.2))
    cfg = IdgConfig(sigma_floor=1e-3)
    model = fit_airway_model(image, tube, cfg)
    assert model.sigma_in == 1e-3
    assert model.sigma_out == 1e-3
    assert model.mu_out == pytest.approx(1.0)


def test_fit_airway_model_whole_grid_airway():
    mask = BinaryMask3.from_array(np.ones((3, 3, 3), dtype=bool))
    image = Volume3(mask.shape, np.full((3, 3, 3), 0.4))
    model = fit_airway_model(image, mask, IdgConfig())
    assert model.mu_out == 1.0
    assert model.sigma_out == IdgConfig().sigma_floor


def test_fit_requires_airway_and_normalized_image(tube):
    image = Volume3(tube.shape, np.full(tube.shape.extents, 0.2))
    with pytest.raises(EmptyMaskError):
        fit_airway_model(image, BinaryMask3.empty(tube.shape), IdgConfig())
    hu = Volume3(tube.shape, np.full(tube.shape.extents, -800.0))
    with pytest.raises(NormalizationError):
        fit_airway_model(hu, tube, IdgConfig())


def test_intensity_weights_range_and_outside(noisy_case):
    image, mask = noisy_case
    cfg = IdgConfig(kernel_size=5)
    region = build_dilated_region(mask, cfg.kernel_size)
    model = fit_airway_model(image, mask, cfg)
    w = build_intensity_weight_map(image, region, model, cfg).w
    assert np.all(w[~region.dilated.data] == 1.0)
    assert w.min() >= 1.0 and w.max() <= 1.0 + cfg.w_dila


def test_intensity_weights_zero_amplitude(noisy_case):
    image, mask = noisy_case
    cfg = IdgConfig(kernel_size=5, w_dila=0.0)
    region = build_dilated_region(mask, cfg.kernel_size)
    model = fit_airway_model(image, mask, cfg)
    assert np.all(build_intensity_weight_map(image, region, model, cfg).w == 1.0)


def test_intensity_weights_hardness_direction():
    """气道内越亮越难; 气道外越暗越难。"""
    arr = np.zeros((9, 9, 9), dtype=bool)
    arr[3:6, 3:6, 3:6] = True
    mask = BinaryMask3.from_array(arr)
    rng = np.random.default_rng(3)
    x = np.where(arr, rng.normal(0.1, 0.02, arr.shape), rng.normal(0.4, 0.05, arr.shape))
    x = np.clip(x, 0.0, 1.0)
    # 两个气道内体素: 一暗一亮; 两个外部体素: 一暗一亮
    x[4, 4, 4], x[3, 3, 3] = 0.05, 0.2
    x[2, 4, 4], x[6, 4, 4] = 0.15, 0.6
    image = Volume3(mask.shape, x)
    cfg = IdgConfig(kernel_size=3)
    region = build_dilated_region(mask, 3)
    model = fit_airway_model(image, mask, cfg)
    w = build_intensity_weight_map(image, region, model, cfg).w
    assert w[3, 3, 3] > w[4, 4, 4]
    assert w[2, 4, 4] > w[6, 4, 4]


def test_intensity_weights_thread_independent(noisy_case):
    image, mask = noisy_case
    cfg = IdgConfig(kernel_size=7)
    region = build_dilated_region(mask, cfg.kernel_size)
    model = fit_airway_model(image, mask, cfg)
    w1 = build_intensity_weight_map(image, region, model, cfg, threads=1).w
    w4 = build_intensity_weight_map(image, region, model, cfg, threads=4).w
    assert np.array_equal(w1, w4)


def test_dark_hard_scores_inner_voxels_as_outer(noisy_case):
    image, mask = noisy_case
    cfg = IdgConfig(kernel_size=5)
    region = build_dilated_region(mask, cfg.kernel_size)
    model = fit_airway_model(image, mask, cfg)
    w = build_dark_hard_weight_map(image, region, model, cfg).w
    x = image.data.astype(np.float64)[mask.data]
    expected = 1.0 + difficulty_F(model.mu_out, model.sigma_out, cfg.theta, 1.0 - (x - model.mu_in))
    assert np.allclose(w[mask.data], expected)
    assert np.all(w[~region.dilated.data] == 1.0)


def test_intensity_profile_counts(noisy_case):
    image, mask = noisy_case
    profile = airway_intensity_profile(image, mask, bins=16)
    assert len(profile["edges"]) == 17
    assert profile["airway"].sum() == mask.count()
    assert profile["background"].sum() == mask.shape.size - mask.count()
