import numpy as np
import pytest

from padreg.errors import ConfigError
from padreg.force import DeltaForceVariant, ForcePair, delta_force
from padreg.phantom import (
    LABEL_ARTERY,
    LABEL_BACKGROUND,
    LABEL_VEIN,
    Inclusion,
    PhantomConfig,
    SpeckleKind,
    SpeckleSpec,
    make_scene,
    render_pair,
)

ARTERY = Inclusion(24.0, 20.0, 7.0, 0.3, LABEL_ARTERY)
VEIN = Inclusion(36.0, 44.0, 9.0, 2.0, LABEL_VEIN)


def scene_config(**kwargs):
    base = dict(height=64, width=64, inclusions=(ARTERY, VEIN))
    base.update(kwargs)
    return PhantomConfig(**base)


def test_inclusion_validation():
    with pytest.raises(ConfigError):
        Inclusion(10.0, 10.0, -1.0, 0.5, LABEL_ARTERY)
    with pytest.raises(ConfigError):
        Inclusion(10.0, 10.0, 3.0, 0.0, LABEL_ARTERY)
    with pytest.raises(ConfigError):
        Inclusion(10.0, 10.0, 3.0, 0.5, 7)


def test_inclusion_must_fit_scene():
    with pytest.raises(ConfigError):
        scene_config(inclusions=(Inclusion(5.0, 5.0, 8.0, 0.5, LABEL_ARTERY),))


def test_speckle_spec_validation():
    assert SpeckleSpec.none().kind is SpeckleKind.NONE
    assert SpeckleSpec.multiplicative(0.3).sigma == 0.3
    with pytest.raises(ConfigError):
        SpeckleSpec.multiplicative(0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        scene_config(height=1)
    with pytest.raises(ConfigError):
        scene_config(base_kx=0.0)
    with pytest.raises(ConfigError):
        scene_config(depth_decay=1.5)
    with pytest.raises(ConfigError):
        scene_config(ky_scale=-0.1)


def test_stiffness_construction():
    cfg = scene_config(base_kx=5.0, depth_decay=0.15, ky_scale=0.1)
    scene = make_scene(cfg)
    kx = scene.k_true.kx.values
    ky = scene.k_true.ky.values
    # top background row holds base_kx exactly, bottom decays to 0.15x
    assert kx[0, 0] == pytest.approx(5.0)
    assert kx[63, 0] == pytest.approx(5.0 * 0.15)
    # inside the artery the profile is scaled by its factor
    assert kx[24, 20] == pytest.approx(5.0 * (1.0 - 0.85 * 24.0 / 63.0) * 0.3)
    # vein is softer than the background at the same depth
    assert kx[36, 44] == pytest.approx(kx[36, 0] * 2.0)
    # lateral component flips sign across the midline and scales with kx
    assert ky[10, 10] == pytest.approx(-0.1 * kx[10, 10])
    assert ky[10, 50] == pytest.approx(0.1 * kx[10, 50])


def test_midline_column_has_zero_lateral_motion():
    cfg = PhantomConfig(height=16, width=17)
    scene = make_scene(cfg)
    assert not scene.k_true.ky.values[:, 8].any()


def test_masks_and_intensities():
    scene = make_scene(scene_config(blur_sigma=0.0))
    labels = scene.masks.values
    assert labels[24, 20] == LABEL_ARTERY
    assert labels[36, 44] == LABEL_VEIN
    assert labels[0, 0] == LABEL_BACKGROUND
    img = scene.rest_image.values
    assert img[24, 20] == pytest.approx(0.15)
    assert img[36, 44] == pytest.approx(0.10)
    assert img[0, 0] == pytest.approx(0.50)


def test_later_inclusion_wins_overlap():
    first = Inclusion(20.0, 20.0, 6.0, 0.3, LABEL_ARTERY)
    second = Inclusion(20.0, 24.0, 6.0, 2.0, LABEL_VEIN)
    scene = make_scene(PhantomConfig(height=40, width=40,
                                     inclusions=(first, second)))
    assert scene.masks.values[20, 22] == LABEL_VEIN


def test_scene_determinism():
    cfg = scene_config(speckle=SpeckleSpec.multiplicative(0.35), seed=11)
    a = make_scene(cfg)
    b = make_scene(cfg)
    assert np.array_equal(a.rest_image.values, b.rest_image.values)
    c = make_scene(scene_config(speckle=SpeckleSpec.multiplicative(0.35), seed=12))
    assert not np.array_equal(a.rest_image.values, c.rest_image.values)


def test_speckle_changes_texture_not_truth():
    plain = make_scene(scene_config())
    noisy = make_scene(scene_config(speckle=SpeckleSpec.multiplicative(0.35)))
    assert not np.array_equal(plain.rest_image.values, noisy.rest_image.values)
    assert np.array_equal(plain.k_true.kx.values, noisy.k_true.kx.values)
    assert np.array_equal(plain.masks.values, noisy.masks.values)


def test_intensities_stay_in_unit_range():
    scene = make_scene(scene_config(speckle=SpeckleSpec.multiplicative(0.8), seed=3))
    assert scene.rest_image.values.min() >= 0.0
    assert scene.rest_image.values.max() <= 1.0


def test_render_pair_follows_proportional_law():
    scene = make_scene(scene_config())
    forces = ForcePair(3.0, 6.0)
    pair = render_pair(scene, forces)
    df = delta_force(forces, DeltaForceVariant.NORMALIZED)
    assert pair.df_true == df
    assert np.array_equal(pair.d_true.dx.values, scene.k_true.kx.values * df)
    assert np.array_equal(pair.d_true.dy.values, scene.k_true.ky.values * df)
    assert pair.moving is scene.rest_image


def test_render_pair_identical_forces_is_identity():
    scene = make_scene(scene_config(speckle=SpeckleSpec.multiplicative(0.35)))
    pair = render_pair(scene, ForcePair(4.0, 4.0))
    assert pair.df_true == 0.0
    assert np.array_equal(pair.target.values, pair.moving.values)
    assert np.array_equal(pair.masks_target.values, pair.masks_moving.values)


def test_render_pair_masks_stay_crisp():
    scene = make_scene(scene_config())
    pair = render_pair(scene, ForcePair(3.0, 6.0))
    assert set(np.unique(pair.masks_target.values)) <= {0.0, 1.0, 2.0}
    # the vein is softer, so its mask visibly moves
    assert not np.array_equal(pair.masks_target.values, pair.masks_moving.values)
