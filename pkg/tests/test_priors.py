import math

import numpy as np
import pytest
from scipy import integrate

from scanpath_forge.autodiff import Tape, mul, numerical_grad, relative_error, sum_
from scanpath_forge.errors import NotSquare
from scanpath_forge.optim import Adam
from scanpath_forge.priors import GaussianPrior, PriorBank, eval_gaussian, init_bank, render_bank


def test_peak_value_unit_sigma():
    p = GaussianPrior(0.3, 0.7, 0.0, 0.0)
    assert eval_gaussian(p, 0.3, 0.7) == pytest.approx(1 / (2 * math.pi), abs=1e-12)
    assert eval_gaussian(p, 0.3, 0.7) == pytest.approx(0.159155, abs=1e-6)


@pytest.mark.parametrize("sx, sy", [(0.1, 0.2), (0.05, 0.05), (1.3, 0.4)])
def test_peak_value_general(sx, sy):
    p = GaussianPrior(0.5, 0.5, math.log(sx), math.log(sy))
    assert abs(eval_gaussian(p, 0.5, 0.5) - 1 / (2 * math.pi * sx * sy)) < 1e-9


def test_axial_symmetry():
    p = GaussianPrior(0.4, 0.6, math.log(0.2), math.log(0.1))
    for d in (0.01, 0.1, 0.37):
        assert eval_gaussian(p, 0.4 + d, 0.6) == pytest.approx(eval_gaussian(p, 0.4 - d, 0.6), rel=1e-14)
        assert eval_gaussian(p, 0.4, 0.6 + d) == pytest.approx(eval_gaussian(p, 0.4, 0.6 - d), rel=1e-14)


@pytest.mark.parametrize("sx, sy", [(0.15, 0.15), (0.05, 0.3)])
def test_integrates_to_one(sx, sy):
    p = GaussianPrior(0.5, 0.5, math.log(sx), math.log(sy))
    # midpoint rule on a fine grid over +-6 sigma
    n = 801
    xs = 0.5 + np.linspace(-6 * sx, 6 * sx, n)
    ys = 0.5 + np.linspace(-6 * sy, 6 * sy, n)
    dx, dy = xs[1] - xs[0], ys[1] - ys[0]
    total = eval_gaussian(p, xs[None, :], ys[:, None]).sum() * dx * dy
    assert abs(total - 1.0) < 1e-3
    # adaptive quadrature as a second opinion
    val, _ = integrate.dblquad(
        lambda y, x: float(eval_gaussian(p, x, y)), 0.5 - 6 * sx, 0.5 + 6 * sx, 0.5 - 6 * sy, 0.5 + 6 * sy
    )
    assert abs(val - 1.0) < 1e-3


def test_init_bank_grid():
    bank = init_bank(16)
    mus = [(p.mu_x, p.mu_y) for p in bank.priors]
    assert len(bank) == 16
    assert mus[0] == (0.125, 0.125)
    assert mus[-1] == (0.875, 0.875)
    assert sorted({m[0] for m in mus}) == pytest.approx([0.125, 0.375, 0.625, 0.875])
    assert all(p.log_sigma_x == pytest.approx(math.log(0.15)) for p in bank.priors)
    assert len(init_bank(9)) == 9
    with pytest.raises(NotSquare):
        init_bank(5)


def test_default_trainable_fields():
    bank = init_bank(16)
    params = bank.named_parameters()
    trainable = [k for k, p in params.items() if p.trainable]
    assert len(trainable) == 32
    assert all("log_sigma" in k for k in trainable)
    alt = init_bank(16, trainable_means=True)
    assert all("mu_" in k for k, p in alt.named_parameters().items() if p.trainable)


def test_render_shape_and_center_peak():
    assert render_bank(init_bank(16), 8, 8).shape == (16, 8, 8)
    bank = PriorBank([GaussianPrior(0.5, 0.5, math.log(0.2), math.log(0.2))])
    maps = render_bank(bank, 9, 9).data
    assert np.unravel_index(np.argmax(maps[0]), (9, 9)) == (4, 4)


def test_rendered_peak_matches_density():
    bank = init_bank(16)
    h = w = 8
    maps = render_bank(bank, h, w).data
    for n, p in enumerate(bank.priors):
        c = int(round(p.mu_x * w - 0.5))
        r = int(round(p.mu_y * h - 0.5))
        at_centre = eval_gaussian(p, (c + 0.5) / w, (r + 0.5) / h)
        assert maps[n, r, c] == pytest.approx(at_centre, rel=1e-12)
        assert maps[n].max() == pytest.approx(at_centre, rel=1e-12)
        # the nearest pixel centre is within half a pixel of the mean
        assert maps[n].max() <= 1 / (2 * math.pi * p.sigma_x * p.sigma_y)


def _bank_grad_errors(bank, h, w, seed=0):
    proj = np.random.default_rng(seed).normal(size=(len(bank), h, w))
    with Tape() as tape:
        loss = sum_(mul(render_bank(bank, h, w), proj))
    tape.backward(loss)
    errs = []
    for name, p in bank.named_parameters().items():
        if not p.trainable:
            continue
        fd = numerical_grad(lambda: float((render_bank(bank, h, w).data * proj).sum()), p.data.reshape(1), step=1e-6)
        errs.append(relative_error(p.grad.reshape(1), fd))
    return errs


def test_bank_gradients_vs_finite_differences():
    bank = init_bank(16)
    assert max(_bank_grad_errors(bank, 8, 8)) < 1e-4


def test_mean_gradients_vs_finite_differences():
    bank = init_bank(9, trainable_means=True)
    assert max(_bank_grad_errors(bank, 7, 5, seed=1)) < 1e-4


def test_sigma_stays_positive_under_updates():
    bank = init_bank(4)
    opt = Adam(bank.named_parameters(), lr=0.5)
    for _ in range(200):
        with Tape() as tape:
            loss = sum_(render_bank(bank, 6, 6))
        tape.backward(loss)
        opt.step()
        opt.zero_grad()
    assert all(p.sigma_x > 0 and p.sigma_y > 0 for p in bank.priors)
    assert all(np.isfinite(render_bank(bank, 6, 6).data).all() for _ in range(1))


def test_means_clamped():
    bank = init_bank(4, trainable_means=True)
    bank.params[0]["mu_x"].data = np.array(1.7)
    bank.params[1]["mu_y"].data = np.array(-0.2)
    bank.clamp_means()
    assert bank.priors[0].mu_x == 1.0 and bank.priors[1].mu_y == 0.0
