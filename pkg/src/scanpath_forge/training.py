"""Adversarial training with periodic observer resampling.

Each image keeps one randomly drawn observer as its "real" scanpath for
``resample_period_steps`` consecutive steps, then draws again.  All
randomness is derived from ``(seed, step)`` or ``(seed, image, period)``,
so a run resumed from a checkpoint replays the uninterrupted run exactly.
"""

from __future__ import annotations

import copy
import json
import math
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .core import ObserverPool, Scanpath
from .errors import CorruptCheckpoint, EmptyPool, NonFiniteLoss
from .models import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Module
from .optim import Adam, clip_grad_norm

PROB_CLAMP = 1e-7
CHECKPOINT_FORMAT = "scanpath-forge-checkpoint"


@dataclass
class TrainConfig:
    epochs: int = 246
    lr: float = 1e-4
    batch_size: int = 16
    seq_len: int = 10
    resample_period_steps: float | None = None  # None: once per epoch
    seed: int = 0
    d_steps_per_g_step: int = 1
    aux_mse_weight: float = 0.0
    saturating: bool = False
    clip_norm: float = 5.0
    d_lr: float | None = None  # None: same as lr
    beta1: float = 0.9
    beta2: float = 0.999
    instance_noise: float = 0.15  # std of Gaussian noise on D inputs (normalized units)
    real_label: float = 1.0  # one-sided label smoothing target for real sequences
    ema_decay: float = 0.995  # Polyak average of generator weights; 0 disables
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.d_steps_per_g_step < 1:
            raise ValueError("epochs, batch_size and d_steps_per_g_step must be positive")
        if self.lr < 0 or (self.d_lr is not None and self.d_lr < 0):
            raise ValueError("learning rates must be >= 0")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if self.instance_noise < 0:
            raise ValueError("instance_noise must be >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if not 0.5 < self.real_label <= 1.0:
            raise ValueError("real_label must be in (0.5, 1]")
        if self.aux_mse_weight < 0:
            raise ValueError("aux_mse_weight must be >= 0")
        if self.resample_period_steps is not None and self.resample_period_steps <= 0:
            raise ValueError("resample_period_steps must be positive")

    @classmethod
    def published(cls, **overrides) -> "TrainConfig":
        """Full-length schedule: 246 epochs at learning rate 1e-5."""
        return cls(**{"epochs": 246, "lr": 1e-5, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["resample_period_steps"] == math.inf:
            d["resample_period_steps"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in names}
        if d.get("resample_period_steps") == "inf":
            d["resample_period_steps"] = math.inf
        return cls(**d)


@dataclass(frozen=True)
class StepReport:
    step: int
    d_loss: float
    g_loss: float
    d_real_acc: float
    d_fake_acc: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainItem:
    """One training image: pixels (or precomputed features) plus its observers."""

    image: np.ndarray | None
    pool: ObserverPool
    features: np.ndarray | None = None

    @property
    def image_id(self) -> str:
        return self.pool.image_id


# -- losses --------------------------------------------------------------------


def _prob(p) -> Tensor:
    return ad.clamp(ad.as_tensor(p), PROB_CLAMP, 1.0 - PROB_CLAMP)


def _out(loss: Tensor, *inputs):
    return loss if any(isinstance(x, Tensor) for x in inputs) else float(loss.data)


def d_loss(real_prob, fake_prob, real_label: float = 1.0):
    """``-[log D(real) + log(1 - D(fake))]`` averaged over the batch.

    ``real_label < 1`` applies one-sided label smoothing to the real term.
    """
    real, fake = _prob(real_prob), _prob(fake_prob)
    real_term = ad.log(real)
    if real_label != 1.0:
        real_term = ad.add(
            ad.mul(real_term, real_label), ad.mul(ad.log(ad.add(1.0, ad.neg(real))), 1.0 - real_label)
        )
    total = ad.add(real_term, ad.log(ad.add(1.0, ad.neg(fake))))
    return _out(ad.neg(ad.mean(total)), real_prob, fake_prob)


def g_loss(fake_prob, saturating: bool = False):
    """Non-saturating ``-log D(fake)``; ``saturating=True`` gives ``log(1 - D(fake))``."""
    fake = _prob(fake_prob)
    if saturating:
        loss = ad.mean(ad.log(ad.add(1.0, ad.neg(fake))))
    else:
        loss = ad.neg(ad.mean(ad.log(fake)))
    return _out(loss, fake_prob)


# -- real-sample rotation ------------------------------------------------------


def harmonize_length(xy: np.ndarray, length: int) -> np.ndarray:
    """Truncate to ``length`` fixations, or linearly interpolate up to it."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    n = len(xy)
    if n >= length:
        return xy[:length].copy()
    pos = np.linspace(0.0, n - 1, length)
    idx = np.arange(n)
    return np.stack([np.interp(pos, idx, xy[:, 0]), np.interp(pos, idx, xy[:, 1])], axis=1)


def observer_index(pool: ObserverPool, step: int, period: float, seed: int) -> int:
    """Observer held by ``pool``'s image at ``step``; redrawn every ``period`` steps."""
    if len(pool) == 0:
        raise EmptyPool()
    window = 0 if math.isinf(period) else int(step // period)
    key = zlib.crc32(pool.image_id.encode())
    return int(np.random.default_rng([seed, key, window]).integers(len(pool)))


def sample_real(pool: ObserverPool, step: int, cfg: TrainConfig, period: float | None = None) -> Scanpath:
    """Current real scanpath for ``pool`` at ``step``, harmonized to ``cfg.seq_len``."""
    if pool is None or len(pool) == 0:
        raise EmptyPool()
    if period is None:
        period = cfg.resample_period_steps if cfg.resample_period_steps is not None else 1
    sp = pool.scanpaths[observer_index(pool, step, period, cfg.seed)]
    xy = harmonize_length(sp.xy, cfg.seq_len)
    return Scanpath.from_xy(xy, sp.screen_w, sp.screen_h, sp.image_id, sp.observer_id)


def real_coords(sp: Scanpath) -> np.ndarray:
    """``2 x L`` normalized coordinates for the discriminator."""
    return (sp.xy / np.array([sp.screen_w, sp.screen_h])).T


# -- training loop ----------------------------------------------------------------


class Trainer:
    """Owns the generator, discriminator and both optimizers."""

    def __init__(
        self,
        gen: Generator,
        disc: Module,
        data: Sequence[TrainItem],
        cfg: TrainConfig,
        dump_dir: str | Path | None = None,
    ):
        if not data:
            raise EmptyPool()
        self.gen, self.disc, self.data, self.cfg = gen, disc, list(data), cfg
        betas = {"beta1": cfg.beta1, "beta2": cfg.beta2}
        self.opt_g = Adam(gen.named_parameters(), cfg.lr, **betas)
        self.opt_d = Adam(disc.named_parameters(), cfg.lr if cfg.d_lr is None else cfg.d_lr, **betas)
        self.step = 0
        self.dump_dir = Path(dump_dir) if dump_dir is not None else None
        self.gen_ema = None
        if cfg.ema_decay > 0:
            self.gen_ema = copy.deepcopy(gen)
            self.gen_ema.zero_grad()

    @property
    def predictor(self) -> Generator:
        """The generator used for prediction: the weight average when enabled."""
        return self.gen_ema if self.gen_ema is not None else self.gen

    def _update_ema(self) -> None:
        if self.gen_ema is None:
            return
        d = self.cfg.ema_decay
        live = self.gen.named_parameters()
        for name, p in self.gen_ema.named_parameters().items():
            p.data = d * p.data + (1.0 - d) * live[name].data

    @property
    def steps_per_epoch(self) -> int:
        return -(-len(self.data) // self.cfg.batch_size)

    @property
    def period(self) -> float:
        k = self.cfg.resample_period_steps
        return self.steps_per_epoch if k is None else k

    @property
    def total_steps(self) -> int:
        if self.cfg.max_steps is not None:
            return self.cfg.max_steps
        return self.cfg.epochs * self.steps_per_epoch

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, pos = divmod(step, self.steps_per_epoch)
        order = np.random.default_rng([self.cfg.seed, epoch]).permutation(len(self.data))
        bs = self.cfg.batch_size
        return order[pos * bs : (pos + 1) * bs]

    def _inputs(self, items: Sequence[TrainItem]) -> dict:
        if items[0].features is not None:
            return {"features": np.stack([it.features for it in items])}
        return {"images": np.stack([it.image for it in items])}

    def reals(self, items: Sequence[TrainItem], step: int) -> np.ndarray:
        return np.stack([real_coords(sample_real(it.pool, step, self.cfg, self.period)) for it in items])

    def train_step(self, items: Sequence[TrainItem] | None = None) -> StepReport:
        """One discriminator update (or several) followed by one generator update."""
        cfg, step = self.cfg, self.step
        if items is None:
            items = [self.data[i] for i in self.batch_indices(step)]
        if not items:
            raise EmptyPool()
        reals = Tensor(self.reals(items, step))

        g_tape = Tape()
        with g_tape:
            fake = self.gen.forward(seq_len=cfg.seq_len, **self._inputs(items))
        fake_detached = fake.detach()
        noise_real = noise_fake = 0.0
        if cfg.instance_noise > 0:
            rng = np.random.default_rng([cfg.seed, step, 7])
            noise_real = cfg.instance_noise * rng.standard_normal(reals.shape)
            noise_fake = cfg.instance_noise * rng.standard_normal(reals.shape)
        d_real_in = Tensor(reals.data + noise_real)
        d_fake_in = Tensor(fake_detached.data + noise_fake)

        for _ in range(cfg.d_steps_per_g_step):
            self.disc.zero_grad()
            with Tape() as tape:
                p_real = self.disc(d_real_in)
                p_fake = self.disc(d_fake_in)
                loss_d = d_loss(p_real, p_fake, cfg.real_label)
            tape.backward(loss_d)
            clip_grad_norm(self.disc.named_parameters().values(), cfg.clip_norm)
            self.opt_d.step()
        real_acc = float(np.mean(p_real.data > 0.5))
        fake_acc = float(np.mean(p_fake.data < 0.5))

        self.gen.zero_grad()
        with g_tape:
            p_gen = self.disc(ad.add(fake, noise_fake))
            loss_g = g_loss(p_gen, cfg.saturating)
            if cfg.aux_mse_weight > 0:
                diff = ad.add(fake, ad.neg(reals))
                loss_g = ad.add(loss_g, ad.mul(ad.mean(ad.square(diff)), cfg.aux_mse_weight))
        g_tape.backward(loss_g)
        self.disc.zero_grad()
        clip_grad_norm(self.gen.named_parameters().values(), cfg.clip_norm)
        self.opt_g.step()
        self.gen.bank.clamp_means()
        self._update_ema()

        report = StepReport(step, float(loss_d.data), float(loss_g.data), real_acc, fake_acc)
        if not (math.isfinite(report.d_loss) and math.isfinite(report.g_loss)):
            raise NonFiniteLoss(step, self._dump(report))
        self.step += 1
        return report

    def _dump(self, report: StepReport) -> str | None:
        if self.dump_dir is None:
            return None
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        path = self.dump_dir / f"nonfinite_step{report.step}.json"
        norms = {
            k: float(np.sqrt(np.sum(p.data * p.data)))
            for k, p in {**self.gen.named_parameters(), **self.disc.named_parameters()}.items()
        }
        path.write_text(json.dumps({"report": asdict(report), "param_norms": norms}, indent=1))
        return str(path)

    def run(
        self,
        n_steps: int | None = None,
        telemetry: str | Path | None = None,
        checkpoint_dir: str | Path | None = None,
        checkpoint_every: int = 0,
    ) -> list[StepReport]:
        """Train until ``n_steps`` more steps (default: to ``total_steps``) have run."""
        stop = self.total_steps if n_steps is None else self.step + n_steps
        reports = []
        fh = open(telemetry, "a") if telemetry is not None else None
        try:
            while self.step < stop:
                r = self.train_step()
                reports.append(r)
                if fh is not None:
                    fh.write(r.to_json() + "\n")
                    fh.flush()
                if checkpoint_dir is not None and checkpoint_every and self.step % checkpoint_every == 0:
                    self.save(Path(checkpoint_dir) / f"step_{self.step:06d}.json")
        finally:
            if fh is not None:
                fh.close()
        if checkpoint_dir is not None:
            self.save(Path(checkpoint_dir) / "last.json")
        return reports

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.gen, self.disc, self.opt_g, self.opt_d, self.step, self.cfg, self.gen_ema)

    @classmethod
    def resume(cls, path: str | Path, data: Sequence[TrainItem], dump_dir=None) -> "Trainer":
        ck = load_checkpoint(path)
        trainer = cls(ck.gen, ck.disc, data, ck.train_config or TrainConfig(), dump_dir)
        if ck.opt_g is not None:
            trainer.opt_g.load_state_dict(ck.opt_g)
        if ck.opt_d is not None:
            trainer.opt_d.load_state_dict(ck.opt_d)
        trainer.step = ck.step
        if trainer.gen_ema is not None and ck.gen_ema is not None:
            trainer.gen_ema = ck.gen_ema
        return trainer


def discriminator_accuracy(gen: Generator, disc: Module, items: Sequence[TrainItem], cfg: TrainConfig, seed: int = 12345) -> float:
    """Balanced accuracy of ``disc`` on real vs generated sequences of ``items``."""
    sub = TrainConfig(**{**asdict(cfg), "seed": seed})
    reals = np.stack([real_coords(sample_real(it.pool, 0, sub, 1)) for it in items])
    if items[0].features is not None:
        fake = gen.forward(seq_len=cfg.seq_len, features=np.stack([it.features for it in items])).data
    else:
        fake = gen.forward(np.stack([it.image for it in items]), cfg.seq_len).data
    pr, pf = disc(reals).data, disc(fake).data
    return 0.5 * (float(np.mean(pr > 0.5)) + float(np.mean(pf < 0.5)))


# -- checkpoints ----------------------------------------------------------------


def _encode(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(np.shape(v)), "values": np.asarray(v, dtype=np.float64).ravel().tolist()} for k, v in arrays.items()}


def _decode(d: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(d["shape"])
        values = np.array(d["values"], dtype=np.float64)
        return values.reshape(shape)
    except (KeyError, TypeError, ValueError):
        raise CorruptCheckpoint(name) from None


def save_checkpoint(
    path: str | Path,
    gen: Generator,
    disc: Discriminator,
    opt_g: Adam | None = None,
    opt_d: Adam | None = None,
    step: int = 0,
    train_config: TrainConfig | None = None,
    gen_ema: Generator | None = None,
) -> None:
    """Write every parameter (prior bank included) and optimizer moment as JSON.

    Floats are written with their shortest round-trip repr, so loading
    restores them bitwise.
    """
    params = {**gen.named_parameters(), **disc.named_parameters()}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "step": step,
        "generator_config": gen.config.to_dict(),
        "discriminator_config": disc.config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "params": _encode({k: p.data for k, p in params.items()}),
        "optimizers": {},
    }
    if gen_ema is not None:
        doc["ema_params"] = _encode({k: p.data for k, p in gen_ema.named_parameters().items()})
    for key, opt in (("gen", opt_g), ("disc", opt_d)):
        if opt is not None:
            doc["optimizers"][key] = {"t": opt.t, "m": _encode(opt.m), "v": _encode(opt.v)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


@dataclass
class Checkpoint:
    gen: Generator
    disc: Discriminator
    step: int
    train_config: TrainConfig | None
    opt_g: dict | None
    opt_d: dict | None
    gen_ema: Generator | None = None

    @property
    def predictor(self) -> Generator:
        return self.gen_ema if self.gen_ema is not None else self.gen


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError:
        raise CorruptCheckpoint("json") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint("format")
    for key in ("step", "generator_config", "discriminator_config", "params"):
        if key not in doc:
            raise CorruptCheckpoint(key)
    try:
        gen = Generator(GeneratorConfig.from_dict(doc["generator_config"]))
        disc = Discriminator(DiscriminatorConfig.from_dict(doc["discriminator_config"]))
    except (TypeError, ValueError):
        raise CorruptCheckpoint("config") from None
    stored = doc["params"]
    for name, p in {**gen.named_parameters(), **disc.named_parameters()}.items():
        if name not in stored:
            raise CorruptCheckpoint(name)
        value = _decode(stored[name], name)
        if value.shape != p.data.shape:
            raise CorruptCheckpoint(name)
        p.data = value
    gen_ema = None
    if "ema_params" in doc:
        gen_ema = Generator(gen.config)
        for name, p in gen_ema.named_parameters().items():
            if name not in doc["ema_params"]:
                raise CorruptCheckpoint(f"ema.{name}")
            value = _decode(doc["ema_params"][name], f"ema.{name}")
            if value.shape != p.data.shape:
                raise CorruptCheckpoint(f"ema.{name}")
            p.data = value
    tc = TrainConfig.from_dict(doc["train_config"]) if doc.get("train_config") else None
    opts = {}
    for key in ("gen", "disc"):
        o = doc.get("optimizers", {}).get(key)
        if o is None:
            opts[key] = None
            continue
        try:
            opts[key] = {
                "t": int(o["t"]),
                "m": {k: _decode(v, f"{key}.m.{k}") for k, v in o["m"].items()},
                "v": {k: _decode(v, f"{key}.v.{k}") for k, v in o["v"].items()},
            }
        except (KeyError, TypeError):
            raise CorruptCheckpoint(f"optimizers.{key}") from None
    return Checkpoint(gen, disc, int(doc["step"]), tc, opts["gen"], opts["disc"], gen_ema)
