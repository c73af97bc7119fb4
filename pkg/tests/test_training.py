import json
import math

import numpy as np
import pytest

import scanpath_forge.autodiff as ad
from scanpath_forge.autodiff import Tape, numerical_grad, relative_error
from scanpath_forge.core import ObserverPool, Scanpath
from scanpath_forge.data import SyntheticSpec, generate_synthetic
from scanpath_forge.errors import CorruptCheckpoint, EmptyPool, NonFiniteLoss
from scanpath_forge.models import Discriminator, Generator, GeneratorConfig, Module
from scanpath_forge.training import (
    StepReport,
    Trainer,
    TrainConfig,
    TrainItem,
    d_loss,
    g_loss,
    harmonize_length,
    load_checkpoint,
    observer_index,
    sample_real,
    save_checkpoint,
)

SMALL = GeneratorConfig(image_size=(16, 16))


def test_d_loss_values():
    assert d_loss(0.5, 0.5) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert d_loss(0.9, 0.1) == pytest.approx(-2 * math.log(0.9), abs=1e-12)
    assert d_loss(0.9, 0.1) == pytest.approx(0.2107, abs=1e-4)
    assert d_loss(1 - 1e-12, 1e-12) < 1e-6
    assert math.isfinite(d_loss(0.0, 1.0))


def test_g_loss_values():
    assert g_loss(0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert g_loss(0.5, saturating=True) == pytest.approx(-math.log(2), abs=1e-12)
    assert g_loss(1 - 1e-12) < 1e-6
    assert math.isfinite(g_loss(0.0))


def test_label_smoothing_value():
    # smoothed real term: -(0.9 log p + 0.1 log(1 - p))
    want = -(0.9 * math.log(0.8) + 0.1 * math.log(0.2) + math.log(0.7))
    assert d_loss(0.8, 0.3, real_label=0.9) == pytest.approx(want, abs=1e-12)


def test_losses_batch_mean():
    real, fake = np.array([0.9, 0.6]), np.array([0.2, 0.4])
    assert d_loss(real, fake) == pytest.approx(np.mean(-np.log(real) - np.log(1 - fake)), abs=1e-12)


@pytest.mark.parametrize("which", ["d", "g"])
def test_loss_gradients_through_discriminator(which):
    disc = Discriminator(seed=2)
    rng = np.random.default_rng(0)
    real, fake = rng.uniform(size=(3, 2, 6)), rng.uniform(size=(3, 2, 6))

    def value():
        if which == "d":
            return float(d_loss(disc(real), disc(fake)).data)
        return float(g_loss(disc(fake)).data)

    disc.zero_grad()
    with Tape() as tape:
        loss = d_loss(disc(real), disc(fake)) if which == "d" else g_loss(disc(fake))
    tape.backward(loss)
    for name in ("disc.branch_x.conv1.weight", "disc.fc2.weight", "disc.fc3.bias"):
        p = disc.named_parameters()[name]
        fd = numerical_grad(value, p.data, step=1e-6)
        assert relative_error(p.grad, fd) < 1e-3, name


def test_g_loss_gradient_through_generator():
    gen, disc = Generator(SMALL, seed=1), Discriminator(seed=1)
    images = np.random.default_rng(2).uniform(size=(2, 16, 16, 3))
    value = lambda: float(g_loss(disc(gen.forward(images, 5))).data)
    with Tape() as tape:
        loss = g_loss(disc(gen.forward(images, 5)))
    tape.backward(loss)
    for name in ("gen.fuse.bias", "gen.head_y.conv2.weight", "gen.priors.5.log_sigma_x"):
        p = gen.named_parameters()[name]
        fd = numerical_grad(value, p.data.reshape(-1) if p.data.ndim == 0 else p.data, step=1e-6)
        assert relative_error(np.reshape(p.grad, fd.shape), fd) < 1e-3, name


def _pool(n_obs, length=6, image_id="img"):
    rng = np.random.default_rng(n_obs)
    return ObserverPool(
        image_id,
        tuple(
            Scanpath.from_xy(rng.uniform(0, 10, size=(length, 2)), 10, 10, image_id, f"o{k}") for k in range(n_obs)
        ),
    )


def test_harmonize_length():
    xy = np.arange(10.0).reshape(5, 2)
    np.testing.assert_array_equal(harmonize_length(xy, 3), xy[:3])
    up = harmonize_length(xy[:2], 5)
    np.testing.assert_allclose(up, [[0, 1], [0.5, 1.5], [1, 2], [1.5, 2.5], [2, 3]])
    np.testing.assert_array_equal(harmonize_length(xy[:1], 3), np.repeat(xy[:1], 3, axis=0))


def test_sample_real_single_observer():
    pool = _pool(1)
    cfg = TrainConfig(seq_len=6)
    for step in range(20):
        assert sample_real(pool, step, cfg, period=1).observer_id == "o0"


def test_sample_real_infinite_period():
    pool = _pool(5)
    cfg = TrainConfig(resample_period_steps=math.inf)
    assert len({observer_index(pool, s, math.inf, cfg.seed) for s in range(0, 100_000, 997)}) == 1


def test_sample_real_period_holds():
    pool = _pool(5)
    idx = [observer_index(pool, s, 4, 0) for s in range(40)]
    for k in range(0, 40, 4):
        assert len(set(idx[k : k + 4])) == 1
    assert len(set(idx)) > 1


def test_sample_real_uniform_frequency():
    pool = _pool(5)
    counts = np.bincount([observer_index(pool, s, 1, 0) for s in range(10_000)], minlength=5)
    assert np.all(np.abs(counts / 10_000 - 0.2) <= 0.02)


def test_sample_real_length_and_empty():
    pool = _pool(3, length=4)
    sp = sample_real(pool, 0, TrainConfig(seq_len=10), period=1)
    assert len(sp) == 10
    with pytest.raises(EmptyPool):
        sample_real(None, 0, TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(aux_mse_weight=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    cfg = TrainConfig(resample_period_steps=math.inf)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert TrainConfig.published().lr == 1e-5 and TrainConfig.published().epochs == 246


@pytest.fixture(scope="module")
def small_data():
    spec = SyntheticSpec(image_size=(16, 16), n_observers=4, length_range=(3, 7))
    return [TrainItem(it.image, it.record.pool()) for it in generate_synthetic(spec, 3, seed=0)]


def _trainer(data, **kw):
    cfg = TrainConfig(batch_size=2, seq_len=5, seed=1, **kw)
    return Trainer(Generator(SMALL, seed=1), Discriminator(seed=1), data, cfg)


def _snapshot(module):
    return {k: p.data.copy() for k, p in module.named_parameters().items()}


def test_one_step_changes_both_models(small_data):
    tr = _trainer(small_data)
    g0, d0 = _snapshot(tr.gen), _snapshot(tr.disc)
    rep = tr.train_step()
    assert isinstance(rep, StepReport)
    assert math.isfinite(rep.d_loss) and math.isfinite(rep.g_loss)
    assert 0 <= rep.d_real_acc <= 1 and 0 <= rep.d_fake_acc <= 1
    assert any(not np.array_equal(g0[k], v) for k, v in _snapshot(tr.gen).items())
    assert any(not np.array_equal(d0[k], v) for k, v in _snapshot(tr.disc).items())
    # prior sigmas are trained
    assert not np.array_equal(g0["gen.priors.0.log_sigma_x"], tr.gen.named_parameters()["gen.priors.0.log_sigma_x"].data)


def test_zero_lr_leaves_parameters_bitwise(small_data):
    tr = _trainer(small_data, lr=0.0)
    g0, d0 = _snapshot(tr.gen), _snapshot(tr.disc)
    reps = tr.run(3)
    assert len(reps) == 3 and all(math.isfinite(r.d_loss) for r in reps)
    for k, v in _snapshot(tr.gen).items():
        assert np.array_equal(g0[k], v)
    for k, v in _snapshot(tr.disc).items():
        assert np.array_equal(d0[k], v)


def test_same_seed_same_reports(small_data):
    a = [r.to_json() for r in _trainer(small_data).run(4)]
    b = [r.to_json() for r in _trainer(small_data).run(4)]
    assert a == b


def test_frozen_discriminator_makes_g_update_sample_independent(small_data):
    def g_after(items):
        tr = _trainer(small_data, d_lr=0.0)
        tr.train_step(items)
        return _snapshot(tr.gen)

    base = small_data[:2]

    def constant_pool(image_id):
        paths = tuple(Scanpath.from_xy(np.full((5, 2), 1.0 + k), 16, 16, image_id, f"x{k}") for k in range(2))
        return ObserverPool(image_id, paths)

    other_pools = [TrainItem(it.image, constant_pool(it.image_id)) for it in base]
    a, b = g_after(base), g_after(other_pools)
    for k in a:
        assert np.array_equal(a[k], b[k]), k

    def g_after_aux(items):
        tr = _trainer(small_data, d_lr=0.0, aux_mse_weight=1.0)
        tr.train_step(items)
        return _snapshot(tr.gen)

    a, b = g_after_aux(base), g_after_aux(other_pools)
    assert any(not np.array_equal(a[k], b[k]) for k in a)


class _OracleDisc(Module):
    """Frozen hand-coded discriminator: real sequences sit near (0.2, 0.8)."""

    prefix = "oracle"

    def __call__(self, coords):
        x = ad.as_tensor(coords)
        target = np.array([0.2, 0.8]).reshape(1, 2, 1)
        sq = ad.square(ad.add(x, -np.broadcast_to(target, x.shape)))
        dist = ad.mean(ad.mean(sq, axis=2), axis=1)
        return ad.sigmoid(ad.mul(ad.add(dist, -0.02), -40.0))


def test_g_loss_decreases_against_perfect_oracle(small_data):
    gen = Generator(SMALL, seed=3)
    cfg = TrainConfig(batch_size=1, seq_len=5, seed=0, instance_noise=0.0)  # oracle needs clean inputs
    tr = Trainer(gen, _OracleDisc(), small_data[:1], cfg)
    losses = [tr.train_step().g_loss for _ in range(100)]
    deltas = np.diff(losses)
    assert np.sum(deltas < 0) >= 90


def test_nonfinite_loss_dumps(small_data, tmp_path, monkeypatch):
    import scanpath_forge.training as training

    tr = Trainer(Generator(SMALL, seed=1), Discriminator(seed=1), small_data, TrainConfig(batch_size=2, seq_len=5), tmp_path)
    monkeypatch.setattr(training, "g_loss", lambda *a, **k: ad.as_tensor(float("inf")))
    with pytest.raises(NonFiniteLoss) as exc:
        tr.train_step()
    assert exc.value.step == 0
    dump = json.loads(open(exc.value.dump_path).read())
    assert "param_norms" in dump


def test_checkpoint_round_trip(small_data, tmp_path):
    tr = _trainer(small_data)
    tr.run(2)
    path = tmp_path / "ck.json"
    tr.save(path)
    ck = load_checkpoint(path)
    images = np.stack([it.image for it in small_data])
    np.testing.assert_array_equal(ck.gen.forward(images, 5).data, tr.gen.forward(images, 5).data)
    coords = np.random.default_rng(0).uniform(size=(2, 2, 5))
    np.testing.assert_array_equal(ck.disc(coords).data, tr.disc(coords).data)
    for k, m in tr.opt_g.m.items():
        assert np.array_equal(ck.opt_g["m"][k], m)
    assert ck.step == 2 and ck.train_config == tr.cfg


def test_resume_bitwise(small_data, tmp_path):
    full = _trainer(small_data)
    ref = [r.to_json() for r in full.run(5)]
    part = _trainer(small_data)
    head = [r.to_json() for r in part.run(2)]
    part.save(tmp_path / "ck.json")
    resumed = Trainer.resume(tmp_path / "ck.json", small_data)
    tail = [r.to_json() for r in resumed.run(3)]
    assert head + tail == ref
    for k, v in _snapshot(full.gen).items():
        assert np.array_equal(resumed.gen.named_parameters()[k].data, v)


def test_corrupt_checkpoints(small_data, tmp_path):
    tr = _trainer(small_data)
    path = tmp_path / "ck.json"
    save_checkpoint(path, tr.gen, tr.disc, tr.opt_g, tr.opt_d, 0, tr.cfg)
    text = path.read_text()
    (tmp_path / "trunc.json").write_text(text[: len(text) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "trunc.json")
    doc = json.loads(text)
    del doc["params"]["gen.fuse.bias"]
    (tmp_path / "missing.json").write_text(json.dumps(doc))
    with pytest.raises(CorruptCheckpoint) as exc:
        load_checkpoint(tmp_path / "missing.json")
    assert exc.value.field == "gen.fuse.bias"
    (tmp_path / "fmt.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "fmt.json")


def test_weight_average_update(small_data):
    tr = _trainer(small_data, ema_decay=0.9)
    before = _snapshot(tr.gen_ema)
    tr.train_step()
    live = _snapshot(tr.gen)
    for name, p in tr.gen_ema.named_parameters().items():
        np.testing.assert_array_equal(p.data, 0.9 * before[name] + (1.0 - 0.9) * live[name])
    assert tr.predictor is tr.gen_ema
    plain = _trainer(small_data, ema_decay=0.0)
    assert plain.gen_ema is None and plain.predictor is plain.gen


def test_weight_average_survives_checkpoint(small_data, tmp_path):
    full = _trainer(small_data)
    full.run(4)
    part = _trainer(small_data)
    part.run(2)
    part.save(tmp_path / "ck.json")
    ck = load_checkpoint(tmp_path / "ck.json")
    for name, p in part.gen_ema.named_parameters().items():
        assert np.array_equal(ck.predictor.named_parameters()[name].data, p.data)
    resumed = Trainer.resume(tmp_path / "ck.json", small_data)
    resumed.run(2)
    for name, p in full.gen_ema.named_parameters().items():
        assert np.array_equal(resumed.gen_ema.named_parameters()[name].data, p.data)
