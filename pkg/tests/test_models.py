import numpy as np
import pytest

import scanpath_forge.autodiff as ad
from scanpath_forge.autodiff import Tape, Tensor, numerical_grad, relative_error
from scanpath_forge.core import validate_scanpath
from scanpath_forge.errors import LengthMismatch, ShapeMismatch
from scanpath_forge.models import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    Module,
    count_parameters,
    discriminator_forward,
    generator_forward,
    predict_scanpath,
)


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(0).uniform(size=(64, 64, 3))


def test_generator_output_contract(image):
    gen = Generator(seed=3)
    sp = generator_forward(gen, image, 10)
    assert len(sp) == 10
    assert np.all((sp.xy >= 0) & (sp.xy <= 1))
    validate_scanpath(sp)


@pytest.mark.parametrize("length", [2, 5, 17, 32])
def test_variable_length(image, length):
    sp = predict_scanpath(Generator(seed=1), image, 640, 480, seq_len=length)
    assert len(sp) == length
    validate_scanpath(sp)


def test_flatten_bridge_lengths(image):
    gen = Generator(GeneratorConfig(bridge="flatten"), seed=1)
    for length in (2, 9, 32, 70):
        assert gen.forward(image[None], length).shape == (1, 2, length)


def test_generator_determinism(image):
    a = Generator(seed=5).forward(image[None], 10).data
    b = Generator(seed=5).forward(image[None], 10).data
    assert np.array_equal(a, b)
    c = Generator(seed=6).forward(image[None], 10).data
    assert not np.array_equal(a, c)


def test_generator_rejects_bad_shape():
    with pytest.raises(ShapeMismatch):
        Generator().forward(np.zeros((1, 32, 64, 3)), 10)


def test_feature_path_matches_encoder(image):
    gen = Generator(seed=2)
    feats = gen.encode(image[None]).data
    assert feats.shape == (1, 64, 8, 8)
    direct = gen.forward(image[None], 7).data
    via = gen.forward(features=feats, seq_len=7).data
    np.testing.assert_allclose(via, direct, rtol=0, atol=1e-14)
    with pytest.raises(ShapeMismatch):
        gen.forward(features=np.zeros((1, 64, 4, 4)), seq_len=7)


def test_prior_sigma_gradient_matches_fd(image):
    gen = Generator(seed=4)
    proj = np.random.default_rng(1).normal(size=(1, 2, 10))
    with Tape() as tape:
        loss = ad.sum_(ad.mul(gen.forward(image[None], 10), proj))
    tape.backward(loss)
    f = lambda: float((gen.forward(image[None], 10).data * proj).sum())
    checked = 0
    for name, p in gen.named_parameters().items():
        if "log_sigma" not in name:
            continue
        assert p.grad is not None and abs(float(p.grad)) > 0
        fd = numerical_grad(f, p.data.reshape(1), step=1e-6)
        assert relative_error(np.reshape(p.grad, 1), fd) < 1e-3, name
        checked += 1
        if checked == 6:
            break
    assert checked == 6


def test_discriminator_range_and_shapes():
    disc = Discriminator(seed=0)
    x = np.random.default_rng(0).uniform(size=(8, 2, 10))
    p = disc(x).data
    assert p.shape == (8,)
    assert np.all((p > 0) & (p < 1))
    with pytest.raises(ShapeMismatch):
        disc(np.zeros((8, 3, 10)))
    with pytest.raises(LengthMismatch):
        discriminator_forward(disc, np.zeros(10), np.zeros(9))


def test_discriminator_not_saturated_at_init():
    rng = np.random.default_rng(42)
    for seed in range(100):
        x = rng.uniform(size=(1, 2, 10))
        p = float(Discriminator(seed=seed)(x).data[0])
        assert 0.01 < p < 0.99, seed


def test_swapping_branches_changes_output():
    disc = Discriminator(seed=0)
    x = np.random.default_rng(3).uniform(size=10)
    y = np.random.default_rng(4).uniform(size=10)
    assert discriminator_forward(disc, x, y) != discriminator_forward(disc, y, x)


def test_discriminator_input_gradient_matches_fd():
    disc = Discriminator(seed=1)
    x = np.random.default_rng(5).uniform(size=(2, 2, 10))
    t = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        out = ad.sum_(disc(t))
    tape.backward(out)
    fd = numerical_grad(lambda: float(disc(x).data.sum()), x, step=1e-6)
    assert relative_error(t.grad, fd) < 1e-3


def test_fc_parameter_arithmetic():
    disc = Discriminator()
    fc = sum(p.data.size for n, p in disc.named_parameters().items() if ".fc" in n)
    assert fc == 64 * 128 + 64 + 32 * 64 + 32 + 1 * 32 + 1 == 10369


def test_count_parameters_defaults():
    assert count_parameters(Module()) == 0
    assert count_parameters({}) == 0
    n = count_parameters(Generator())
    assert n < 200_000
    # the 32 prior means are frozen by default
    frozen = sum(p.data.size for p in Generator().named_parameters().values() if not p.trainable)
    assert frozen == 32


def test_doubling_widths_roughly_quadruples_conv_params():
    def conv_params(disc):
        return sum(p.data.size for n, p in disc.named_parameters().items() if "branch" in n and "weight" in n)

    base = conv_params(Discriminator(DiscriminatorConfig(branch_channels=(1, 16, 32, 64), fc=(128, 64, 32, 1))))
    wide = conv_params(Discriminator(DiscriminatorConfig(branch_channels=(1, 32, 64, 128), fc=(256, 64, 32, 1))))
    # the 1-channel input layer only doubles, so the ratio sits just below 4
    assert 3.8 < wide / base <= 4.0


def test_gradient_reaches_prior_bank_through_discriminator(image):
    gen, disc = Generator(seed=0), Discriminator(seed=0)
    images = np.stack([image, image[::-1]])
    with Tape() as tape:
        loss = ad.neg(ad.mean(ad.log(disc(gen.forward(images, 10)))))
    tape.backward(loss)
    bank_norm = sum(float(np.sum(p.grad**2)) for n, p in gen.named_parameters().items() if "priors" in n and p.grad is not None)
    assert bank_norm > 0
