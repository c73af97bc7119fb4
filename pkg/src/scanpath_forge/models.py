"""Scanpath generator and discriminator built from the autodiff layers.

Generator: depthwise-separable encoder -> concat with rendered Gaussian
priors -> fusing 3x3 conv -> 2-D to 1-D bridge -> positional ramp channel
-> two independent conv1d heads (x and y), each ending in a sigmoid.

Discriminator: one conv1d branch per coordinate sequence, global max pool,
concat, three dense layers, sigmoid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .core import Scanpath
from .errors import LengthMismatch, ShapeMismatch
from .priors import PriorBank, init_bank, render_bank

SLOPE = 0.2


@dataclass
class GeneratorConfig:
    image_size: tuple[int, int] = (64, 64)
    encoder_channels: tuple[int, ...] = (3, 16, 32, 64)
    kernel: int = 3
    n_priors: int = 16
    trainable_means: bool = False
    fuse_channels: int = 64
    seq_len: int = 10
    head_channels: tuple[int, ...] = (32, 16, 1)
    head_kernel: int = 3
    bridge: str = "mean"  # "mean" | "flatten"

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.encoder_channels = tuple(self.encoder_channels)
        self.head_channels = tuple(self.head_channels)
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if self.encoder_channels[0] != 3:
            raise ValueError("encoder must start from 3 image channels")
        if self.head_channels[-1] != 1:
            raise ValueError("each head must end in a single channel")
        if self.bridge not in ("mean", "flatten"):
            raise ValueError(f"unknown bridge {self.bridge!r}")

    @property
    def feature_channels(self) -> int:
        return self.encoder_channels[-1]

    @property
    def feature_size(self) -> tuple[int, int]:
        h, w = self.image_size
        for _ in self.encoder_channels[1:]:
            h, w = -(-h // 2), -(-w // 2)
        return h, w

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class DiscriminatorConfig:
    branch_channels: tuple[int, ...] = (1, 16, 32, 64)
    kernel: int = 3
    fc: tuple[int, ...] = (128, 64, 32, 1)

    def __post_init__(self):
        self.branch_channels = tuple(self.branch_channels)
        self.fc = tuple(self.fc)
        if self.branch_channels[0] != 1:
            raise ValueError("each branch takes one coordinate channel")
        if self.fc[0] != 2 * self.branch_channels[-1] or self.fc[-1] != 1:
            raise ValueError("fc plan must start at 2x branch width and end at 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Module:
    """Holds an ordered name -> Parameter mapping."""

    prefix = ""

    def __init__(self) -> None:
        self._params: dict[str, Parameter] = {}

    def _add(self, name: str, value: np.ndarray, trainable: bool = True) -> Parameter:
        full = f"{self.prefix}.{name}" if self.prefix else name
        p = Parameter(value, trainable=trainable, name=full)
        self._params[full] = p
        return p

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None


def count_parameters(model) -> int:
    """Total number of trainable scalars."""
    params = model if isinstance(model, dict) else model.named_parameters()
    return int(sum(p.data.size for p in params.values() if p.trainable))


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``n_in x n_out`` matrix resampling a sequence by linear interpolation."""
    pos = np.linspace(0, n_in - 1, n_out)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_in, n_out))
    m[lo, np.arange(n_out)] += 1 - frac
    m[hi, np.arange(n_out)] += frac
    return m


class Generator(Module):
    prefix = "gen"

    def __init__(self, config: GeneratorConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or GeneratorConfig()
        rng = np.random.default_rng([seed, 1])
        k = cfg.kernel
        self.blocks = []
        for i, (cin, cout) in enumerate(zip(cfg.encoder_channels[:-1], cfg.encoder_channels[1:])):
            dw = self._add(f"encoder.block{i}.depthwise", ad.kaiming_uniform(rng, (cin, 1, k, k), k * k))
            pw = self._add(f"encoder.block{i}.pointwise", ad.kaiming_uniform(rng, (cout, cin, 1, 1), cin))
            self.blocks.append((dw, pw))
        self.bank: PriorBank = init_bank(cfg.n_priors, seed, trainable_means=cfg.trainable_means)
        for name, p in self.bank.named_parameters(f"{self.prefix}.priors").items():
            p.name = name
            self._params[name] = p
        cin = cfg.feature_channels + cfg.n_priors
        self.fuse_w = self._add("fuse.weight", ad.kaiming_uniform(rng, (cfg.fuse_channels, cin, 3, 3), cin * 9))
        self.fuse_b = self._add("fuse.bias", np.zeros(cfg.fuse_channels))
        self.heads = {}
        for axis in ("x", "y"):
            layers = []
            cin = cfg.fuse_channels + 1
            for j, cout in enumerate(cfg.head_channels):
                kh = cfg.head_kernel
                w = self._add(f"head_{axis}.conv{j}.weight", ad.kaiming_uniform(rng, (cout, cin, kh), cin * kh))
                b = self._add(f"head_{axis}.conv{j}.bias", np.zeros(cout))
                layers.append((w, b))
                cin = cout
            self.heads[axis] = layers

    def encode(self, images) -> Tensor:
        """``N x H x W x 3`` (or ``H x W x 3``) images in [0, 1] -> ``N x C x h x w`` features."""
        arr = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[1:] != (*self.config.image_size, 3):
            raise ShapeMismatch(f"expected images of shape N x {self.config.image_size} x 3, got {arr.shape}")
        x = Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
        for dw, pw in self.blocks:
            x = ad.depthwise_separable_block(x, dw, pw, stride=2, slope=SLOPE)
        return x

    def forward(self, images=None, seq_len: int | None = None, features=None) -> Tensor:
        """Predict normalized coordinates, returned as ``N x 2 x L`` (row 0 = x, row 1 = y).

        ``features`` (``N x C x h x w``) replaces the built-in encoder.
        """
        cfg = self.config
        L = seq_len or cfg.seq_len
        if L < 2:
            raise ValueError("seq_len must be >= 2")
        if features is not None:
            feats = features if isinstance(features, Tensor) else Tensor(features)
            if feats.ndim == 3:
                feats = ad.reshape(feats, (1,) + feats.shape)
            if feats.shape[1:] != (cfg.feature_channels, *cfg.feature_size):
                raise ShapeMismatch(
                    f"features {feats.shape[1:]} do not match {(cfg.feature_channels, *cfg.feature_size)}"
                )
        else:
            feats = self.encode(images)
        n = feats.shape[0]
        fh, fw = cfg.feature_size
        priors = render_bank(self.bank, fh, fw)
        priors = ad.broadcast_to(ad.reshape(priors, (1,) + priors.shape), (n,) + priors.shape)
        fused = ad.leaky_relu(ad.conv2d(ad.concat([feats, priors], axis=1), self.fuse_w, self.fuse_b), SLOPE)
        c = cfg.fuse_channels
        if cfg.bridge == "mean":
            seq = ad.broadcast_to(ad.reshape(ad.spatial_mean(fused), (n, c, 1)), (n, c, L))
        else:
            flat = ad.reshape(fused, (n, c, fh * fw))
            seq = ad.matmul(flat, _interp_matrix(fh * fw, L))
        ramp = np.broadcast_to(np.linspace(0.0, 1.0, L), (n, 1, L)).copy()
        seq = ad.concat([seq, Tensor(ramp)], axis=1)
        outs = []
        for axis in ("x", "y"):
            h = seq
            layers = self.heads[axis]
            for j, (w, b) in enumerate(layers):
                h = ad.conv1d(h, w, b)
                h = ad.sigmoid(h) if j == len(layers) - 1 else ad.leaky_relu(h, SLOPE)
            outs.append(h)
        return ad.concat(outs, axis=1)

    __call__ = forward


OUTPUT_GAIN = 0.1  # small logit layer keeps a fresh discriminator away from saturation


class Discriminator(Module):
    prefix = "disc"

    def __init__(self, config: DiscriminatorConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or DiscriminatorConfig()
        rng = np.random.default_rng([seed, 2])
        k = cfg.kernel
        self.branches = {}
        for axis in ("x", "y"):
            layers = []
            for j, (cin, cout) in enumerate(zip(cfg.branch_channels[:-1], cfg.branch_channels[1:])):
                w = self._add(f"branch_{axis}.conv{j + 1}.weight", ad.kaiming_uniform(rng, (cout, cin, k), cin * k))
                b = self._add(f"branch_{axis}.conv{j + 1}.bias", np.zeros(cout))
                layers.append((w, b))
            self.branches[axis] = layers
        self.fc = []
        n_fc = len(cfg.fc) - 1
        for j, (nin, nout) in enumerate(zip(cfg.fc[:-1], cfg.fc[1:])):
            w = ad.kaiming_uniform(rng, (nout, nin), nin)
            if j == n_fc - 1:
                w = w * OUTPUT_GAIN
            w = self._add(f"fc{j + 1}.weight", w)
            b = self._add(f"fc{j + 1}.bias", np.zeros(nout))
            self.fc.append((w, b))

    def forward(self, coords) -> Tensor:
        """``N x 2 x L`` coordinate sequences -> ``N`` probabilities of being real."""
        coords = coords if isinstance(coords, Tensor) else Tensor(coords)
        if coords.ndim == 2:
            coords = ad.reshape(coords, (1,) + coords.shape)
        if coords.ndim != 3 or coords.shape[1] != 2:
            raise ShapeMismatch(f"expected N x 2 x L coordinates, got {coords.shape}")
        if coords.shape[2] < 2:
            raise ShapeMismatch("sequences need at least 2 fixations")
        pooled = []
        for c, axis in enumerate(("x", "y")):
            h = coords[:, c : c + 1, :]
            for w, b in self.branches[axis]:
                h = ad.leaky_relu(ad.conv1d(h, w, b), SLOPE)
            pooled.append(ad.global_max_pool_1d(h))
        h = ad.concat(pooled, axis=1)
        for j, (w, b) in enumerate(self.fc):
            h = ad.dense(h, w, b)
            if j < len(self.fc) - 1:
                h = ad.leaky_relu(h, SLOPE)
        return ad.sigmoid(ad.reshape(h, (h.shape[0],)))

    __call__ = forward


def generator_forward(gen: Generator, image, seq_len: int | None = None) -> Scanpath:
    """Predict one scanpath on the unit screen (coordinates in [0, 1])."""
    coords = gen.forward(image, seq_len).data[0]
    return Scanpath.from_xy(coords.T, 1, 1, observer_id="generator")


def predict_scanpath(gen: Generator, image, screen_w: int, screen_h: int, seq_len: int | None = None, image_id: str = "", features=None) -> Scanpath:
    """Predict one scanpath in screen pixels."""
    coords = gen.forward(image if features is None else None, seq_len, features=features).data[0]
    xy = coords.T * np.array([screen_w, screen_h])
    return Scanpath.from_xy(xy, screen_w, screen_h, image_id=image_id, observer_id="generator")


def discriminator_forward(disc: Discriminator, x_seq, y_seq) -> float:
    """Probability that the sequences ``(x_seq, y_seq)`` come from a real observer."""
    x_seq, y_seq = np.asarray(x_seq, float), np.asarray(y_seq, float)
    if x_seq.shape != y_seq.shape:
        raise LengthMismatch(f"x has {x_seq.shape}, y has {y_seq.shape}")
    return float(disc.forward(np.stack([x_seq, y_seq])[None]).data[0])
