"""Learnable bank of axis-aligned 2-D Gaussian priors rendered on a feature grid.

Each prior is the normalized density

    G(x, y) = exp(-((x - mu_x)^2 / (2 sx^2) + (y - mu_y)^2 / (2 sy^2))) / (2 pi sx sy)

with ``sx = exp(log_sigma_x)``, so the standard deviations stay positive
under any update.  By default the means sit on a fixed grid and only the
two log-sigmas train; ``trainable_means=True`` flips that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tensor, _record
from .errors import NotSquare

FIELDS = ("mu_x", "mu_y", "log_sigma_x", "log_sigma_y")


@dataclass(frozen=True)
class GaussianPrior:
    mu_x: float
    mu_y: float
    log_sigma_x: float
    log_sigma_y: float
    trainable_mu: bool = False
    trainable_sigma: bool = True

    @property
    def sigma_x(self) -> float:
        return math.exp(self.log_sigma_x)

    @property
    def sigma_y(self) -> float:
        return math.exp(self.log_sigma_y)


def eval_gaussian(p: GaussianPrior, x, y):
    """Density of prior ``p`` at normalized coordinates (scalars or arrays)."""
    sx, sy = p.sigma_x, p.sigma_y
    z = (np.asarray(x) - p.mu_x) ** 2 / (2 * sx * sx) + (np.asarray(y) - p.mu_y) ** 2 / (2 * sy * sy)
    return np.exp(-z) / (2 * math.pi * sx * sy)


class PriorBank:
    """Fixed-size set of Gaussian priors backed by scalar Parameters."""

    def __init__(self, priors: list[GaussianPrior]):
        self.params: list[dict[str, Parameter]] = []
        for p in priors:
            self.params.append(
                {
                    "mu_x": Parameter(p.mu_x, trainable=p.trainable_mu),
                    "mu_y": Parameter(p.mu_y, trainable=p.trainable_mu),
                    "log_sigma_x": Parameter(p.log_sigma_x, trainable=p.trainable_sigma),
                    "log_sigma_y": Parameter(p.log_sigma_y, trainable=p.trainable_sigma),
                }
            )

    def __len__(self) -> int:
        return len(self.params)

    @property
    def priors(self) -> list[GaussianPrior]:
        out = []
        for d in self.params:
            out.append(
                GaussianPrior(
                    float(d["mu_x"].data),
                    float(d["mu_y"].data),
                    float(d["log_sigma_x"].data),
                    float(d["log_sigma_y"].data),
                    d["mu_x"].trainable,
                    d["log_sigma_x"].trainable,
                )
            )
        return out

    def named_parameters(self, prefix: str = "priors") -> dict[str, Parameter]:
        return {f"{prefix}.{n}.{f}": d[f] for n, d in enumerate(self.params) for f in FIELDS}

    def array(self, field: str) -> np.ndarray:
        return np.array([float(d[field].data) for d in self.params])

    def clamp_means(self) -> None:
        """Project means back into the unit square (call after each update)."""
        for d in self.params:
            for f in ("mu_x", "mu_y"):
                d[f].data = np.clip(d[f].data, 0.0, 1.0)


def init_bank(n: int = 16, seed: int | None = None, trainable_means: bool = False, sigma: float = 0.15) -> PriorBank:
    """Means on a ``sqrt(n) x sqrt(n)`` grid over ``[0.125, 0.875]^2``, all sigmas equal.

    The layout is deterministic; ``seed`` is accepted for API symmetry with
    the other initializers.
    """
    side = math.isqrt(n)
    if n < 1 or side * side != n:
        raise NotSquare(n)
    ticks = np.linspace(0.125, 0.875, side) if side > 1 else np.array([0.5])
    ls = math.log(sigma)
    priors = [
        GaussianPrior(float(mx), float(my), ls, ls, trainable_mu=trainable_means, trainable_sigma=not trainable_means)
        for my in ticks
        for mx in ticks
    ]
    return PriorBank(priors)


def render_bank(bank: PriorBank, h: int, w: int) -> Tensor:
    """Render every prior at pixel centres of an ``h x w`` grid -> ``N x h x w``.

    Differentiable with respect to all trainable prior parameters.
    """
    if h < 1 or w < 1:
        raise ValueError("grid must be at least 1x1")
    mx, my = bank.array("mu_x")[:, None, None], bank.array("mu_y")[:, None, None]
    sx = np.exp(bank.array("log_sigma_x"))[:, None, None]
    sy = np.exp(bank.array("log_sigma_y"))[:, None, None]
    xs = ((np.arange(w) + 0.5) / w)[None, None, :]
    ys = ((np.arange(h) + 0.5) / h)[None, :, None]
    dx, dy = xs - mx, ys - my
    g = np.exp(-(dx**2 / (2 * sx**2) + dy**2 / (2 * sy**2))) / (2 * math.pi * sx * sy)
    partials = {
        "mu_x": g * dx / sx**2,
        "mu_y": g * dy / sy**2,
        "log_sigma_x": g * (dx**2 / sx**2 - 1.0),
        "log_sigma_y": g * (dy**2 / sy**2 - 1.0),
    }
    inputs = [d[f] for d in bank.params for f in FIELDS]

    def fn(grad):
        out = []
        for n in range(len(bank)):
            for f in FIELDS:
                out.append(np.array(np.sum(grad[n] * partials[f][n])))
        return out

    return _record(Tensor(g), inputs, fn)
