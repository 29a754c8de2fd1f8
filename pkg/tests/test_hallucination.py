import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adhfr.autodiff import Adam, Tensor
from adhfr.config import ExperimentConfig
from adhfr.hallucination import (Discriminator, Generator, build_hallucination_models, discriminator_step, generate,
                                 generator_step, loss_cyc, loss_d_adv, loss_g_adv, loss_generator_total,
                                 loss_intensity, sample_ycbcr, train_hallucination)
from adhfr.imaging import Image, rgb_to_ycbcr
from adhfr.synth import NIR, VIS, make_dataset

EPS = 1e-7
TOY = ExperimentConfig(image_size=36, crop_size=32, gen_downsample=1, hal_iterations=3)


def scores(value, n=4):
    return Tensor(np.full((n, 1), value))


def images(n=2, size=8, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, size=(n, 3, size, size))


@pytest.fixture(scope="module")
def toy_data():
    return make_dataset(4, 2, 2, seed=0, size=36)


# -- architecture ------------------------------------------------------------------

@pytest.mark.parametrize("size", [144, 128])
def test_generator_preserves_size(size):
    g = Generator(4, 32, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).uniform(size=(1, 3, size, size)).astype(np.float32))
    out = g(x, np.array([[[size // 2 - 10, size // 2 - 24], [size // 2 - 10, size // 2 + 24]]]))
    assert out.shape == x.shape
    assert 0.0 <= out.data.min() and out.data.max() <= 1.0


def test_single_stage_generator_on_toy_crop():
    g = Generator(4, 8, np.random.default_rng(0), downsample=1)
    x = Tensor(np.random.default_rng(1).uniform(size=(2, 3, 32, 32)).astype(np.float32))
    eyes = np.array([[[12, 9], [12, 22]], [[14, 8], [14, 24]]])
    assert g(x, eyes).shape == (2, 3, 32, 32)


def test_zeroed_output_conv_gives_mid_grey():
    g = Generator(2, 8, np.random.default_rng(0), downsample=1)
    g.g_out.weight.data[...] = 0
    g.g_out.bias.data[...] = 0
    img = rgb_to_ycbcr(Image(np.random.default_rng(2).uniform(size=(32, 32, 3)), "rgb"))
    out = generate(g, img, ((12, 10), (12, 22)))
    np.testing.assert_array_equal(out.values, np.full((32, 32, 3), 0.5))
    assert out.colorspace == "ycbcr"


def test_generate_is_deterministic():
    g = Generator(2, 8, np.random.default_rng(0), downsample=1)
    img = rgb_to_ycbcr(Image(np.random.default_rng(3).uniform(size=(32, 32, 3)), "rgb"))
    a = generate(g, img, ((12, 10), (12, 22)))
    b = generate(g, img, ((12, 10), (12, 22)))
    assert a.values.tobytes() == b.values.tobytes()


def test_generator_rejects_bad_eyes_and_sizes():
    g = Generator(2, 8, np.random.default_rng(0))
    x = Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32))
    with pytest.raises(ValueError):
        g(x, np.array([[[2, 10], [12, 22]]]))
    with pytest.raises(ValueError):
        g(Tensor(np.zeros((1, 3, 30, 30), dtype=np.float32)), np.array([[[12, 10], [12, 20]]]))
    with pytest.raises(ValueError):
        g(x, np.array([[12, 10], [12, 22]]))


def test_generators_do_not_share_weights():
    m = build_hallucination_models(TOY)
    assert not np.array_equal(m.g_v.g_in.weight.data, m.g_n.g_in.weight.data)
    assert m.g_v.g_in.weight is not m.g_n.g_in.weight


def test_discriminator_scores_in_open_interval():
    d = Discriminator(4, 32, np.random.default_rng(0))
    out = d(Tensor(np.random.default_rng(1).uniform(size=(3, 3, 32, 32)).astype(np.float32)))
    assert out.shape == (3, 1)
    assert np.all((out.data > 0) & (out.data < 1))


# -- losses -----------------------------------------------------------------------

def test_adversarial_constants():
    assert loss_g_adv(scores(0.5)).item() == pytest.approx(math.log(2), abs=1e-12)
    assert loss_g_adv(scores(1 - EPS)).item() == pytest.approx(0, abs=1e-6)
    assert loss_d_adv(scores(0.5), scores(0.5)).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert loss_d_adv(scores(1 - EPS), scores(EPS)).item() == pytest.approx(0, abs=1e-6)


def test_adversarial_rejects_non_positive_scores():
    with pytest.raises(ValueError):
        loss_g_adv(scores(0.0))


def test_cycle_loss_examples():
    x = images()
    assert loss_cyc(Tensor(x), Tensor(x)).item() == 0.0
    assert loss_cyc(Tensor(x), Tensor(x + 0.1)).item() == pytest.approx(0.1)
    with pytest.raises(ValueError):
        loss_cyc(Tensor(x), Tensor(x[:1]))


def test_intensity_loss_examples():
    x = images()
    chroma = x.copy()
    chroma[:, 1:] = np.random.default_rng(9).uniform(size=chroma[:, 1:].shape)
    assert loss_intensity(Tensor(x), Tensor(x)).item() == 0.0
    assert loss_intensity(Tensor(x), Tensor(chroma)).item() == 0.0
    shifted = x.copy()
    shifted[:, 0] += 0.2
    assert loss_intensity(Tensor(x), Tensor(shifted)).item() == pytest.approx(0.2)


def test_losses_accept_images():
    a = Image(np.full((4, 4, 3), 0.3), "ycbcr")
    b = Image(np.full((4, 4, 3), 0.5), "ycbcr")
    assert loss_cyc(a, b).item() == pytest.approx(0.2)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (1, 3, 4, 4), elements=st.floats(0, 1, width=64)),
       arrays(np.float64, (1, 3, 4, 4), elements=st.floats(0, 1, width=64)))
def test_pixel_losses_are_symmetric_and_non_negative(a, b):
    ab = loss_cyc(Tensor(a), Tensor(b)).item()
    assert ab == loss_cyc(Tensor(b), Tensor(a)).item()
    assert ab >= 0 and (ab == 0) == np.array_equal(a, b)
    li = loss_intensity(Tensor(a), Tensor(b)).item()
    assert li >= 0 and (li == 0) == np.array_equal(a[:, 0], b[:, 0])


def test_total_generator_loss():
    assert loss_generator_total(1.0, 2.0, 3.0, 10, 5) == 36
    assert loss_generator_total(1.5, 2.0, 3.0, 0, 0) == 1.5
    t = loss_generator_total(Tensor(np.array(1.0)), Tensor(np.array(2.0)), Tensor(np.array(3.0)), 10, 5)
    assert t.item() == 36
    with pytest.raises(ValueError):
        loss_generator_total(1.0, 2.0, 3.0, -1, 5)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 20), st.floats(0, 20))
def test_total_generator_loss_is_linear(adv, cyc, inten, a1, a2):
    base = loss_generator_total(adv, cyc, inten, a1, a2)
    assert loss_generator_total(adv + 1, cyc, inten, a1, a2) == pytest.approx(base + 1)
    assert loss_generator_total(adv, cyc + 1, inten, a1, a2) == pytest.approx(base + a1)
    assert loss_generator_total(adv, cyc, inten + 1, a1, a2) == pytest.approx(base + a2)


# -- training ----------------------------------------------------------------------

def _batch(ds, modality):
    picks = [s for s in ds if s.modality == modality][:2]
    x = np.stack([sample_ycbcr(s)[:, 2:34, 2:34] for s in picks])
    eyes = np.array([s.eye_centers for s in picks]) - 2
    return Tensor(x), eyes


def _snapshot(module):
    return {k: v.copy() for k, v in module.state_dict().items()}


def _same(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


def test_update_partition(toy_data):
    m = build_hallucination_models(TOY)
    xv, ev = _batch(toy_data, VIS)
    xn, en = _batch(toy_data, NIR)
    opt_g = Adam(m.g_v.parameters() + m.g_n.parameters(), 1e-2)
    opt_d = Adam(m.d_v.parameters() + m.d_n.parameters(), 1e-2)

    g_before, d_before = _snapshot(m.g_v), _snapshot(m.d_v)
    discriminator_step(m, opt_d, xv, ev, xn, en)
    assert _same(g_before, _snapshot(m.g_v)) and not _same(d_before, _snapshot(m.d_v))

    g_before, d_before = _snapshot(m.g_n), _snapshot(m.d_n)
    generator_step(m, opt_g, xv, ev, xn, en, 10.0, 5.0)
    assert _same(d_before, _snapshot(m.d_n)) and not _same(g_before, _snapshot(m.g_n))


def test_zero_lr_leaves_parameters(toy_data):
    cfg = TOY.replace(hal_lr=0.0)
    before = build_hallucination_models(cfg).state_dict()
    after = train_hallucination(toy_data, cfg).state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_history_is_reproducible(toy_data):
    a = train_hallucination(toy_data, TOY).history
    b = train_hallucination(toy_data, TOY).history
    assert a == b and len(a) == TOY.hal_iterations


def test_outputs_stay_in_unit_range_while_training(toy_data):
    m = build_hallucination_models(TOY)
    x, eyes = _batch(toy_data, NIR)
    for _ in range(3):
        train_hallucination(toy_data, TOY.replace(hal_iterations=1), models=m)
        out = m.g_v(x, eyes).data
        assert out.min() >= 0 and out.max() <= 1


def test_single_modality_dataset_rejected(toy_data):
    with pytest.raises(ValueError):
        train_hallucination([s for s in toy_data if s.modality == VIS], TOY)
