"""Scanpath evaluation: MultiMatch (shape, direction, length, position), NSS,
Congruency, and saliency maps built from pooled fixations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ObserverPool, SaliencyMap, Scanpath
from .errors import EmptyPool, FlatMap, ScreenMismatch, TooShort, ValidationError

NSS_EPS = 1e-12


@dataclass(frozen=True)
class SaccadeVector:
    dx: float
    dy: float

    @property
    def amplitude(self) -> float:
        return math.hypot(self.dx, self.dy)

    @property
    def angle(self) -> float:
        return math.atan2(self.dy, self.dx)


@dataclass(frozen=True)
class AlignmentPath:
    """Monotone index path through the saccade cost grid and its total cost."""

    pairs: tuple[tuple[int, int], ...]
    cost: float

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def _vectors(xy: np.ndarray) -> np.ndarray:
    return np.diff(xy, axis=0)


def saccade_vectors(sp: Scanpath) -> list[SaccadeVector]:
    """Displacements between consecutive fixations (``len(sp) - 1`` of them)."""
    if len(sp) < 2:
        raise TooShort(2, len(sp))
    return [SaccadeVector(float(dx), float(dy)) for dx, dy in _vectors(sp.xy)]


def _as_array(vectors) -> np.ndarray:
    if len(vectors) and isinstance(vectors[0], SaccadeVector):
        return np.array([(s.dx, s.dy) for s in vectors], dtype=np.float64)
    return np.asarray(vectors, dtype=np.float64).reshape(-1, 2)


def cost_matrix(u, v) -> np.ndarray:
    """Euclidean norm of every pairwise saccade difference."""
    u, v = _as_array(u), _as_array(v)
    diff = u[:, None, :] - v[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def align_costs(cost: np.ndarray) -> AlignmentPath:
    """Cheapest monotone path from the top-left to the bottom-right cell.

    Steps advance i, j, or both by one.  All costs are nonnegative, so the
    dynamic program over the step DAG is an exact shortest path.  Ties while
    backtracking prefer the diagonal, then the i-step, then the j-step.
    """
    m, n = cost.shape
    if m == 0 or n == 0:
        raise ValidationError("cannot align an empty sequence")
    acc = np.empty((m, n))
    acc[0, 0] = cost[0, 0]
    for j in range(1, n):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, m):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, n):
            acc[i, j] = cost[i, j] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])

    i, j = m - 1, n - 1
    path = [(i, j)]
    while (i, j) != (0, 0):
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            moves = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
            best = min(mv[0] for mv in moves)
            # first move at the minimum wins: diagonal, i-step, j-step
            _, i, j = next(mv for mv in moves if mv[0] == best)
        path.append((i, j))
    return AlignmentPath(tuple(reversed(path)), float(acc[m - 1, n - 1]))


def align(u, v) -> AlignmentPath:
    """Align two saccade-vector sequences (arrays ``k x 2`` or SaccadeVector lists)."""
    u, v = _as_array(u), _as_array(v)
    if len(u) == 0 or len(v) == 0:
        raise ValidationError("cannot align an empty sequence")
    return align_costs(cost_matrix(u, v))


def simplify(xy: np.ndarray, amplitude_threshold: float | None = None, direction_threshold: float | None = None) -> np.ndarray:
    """Drop intermediate fixations to merge consecutive saccades.

    Two consecutive saccades merge when both are shorter than
    ``amplitude_threshold`` (px) or when they turn by less than
    ``direction_threshold`` (rad).  Repeats until nothing merges.
    """
    pts = [tuple(p) for p in np.asarray(xy, dtype=np.float64)]
    changed = True
    while changed and len(pts) > 2:
        changed = False
        for k in range(1, len(pts) - 1):
            a = np.subtract(pts[k], pts[k - 1])
            b = np.subtract(pts[k + 1], pts[k])
            la, lb = np.hypot(*a), np.hypot(*b)
            merge = amplitude_threshold is not None and la < amplitude_threshold and lb < amplitude_threshold
            if not merge and direction_threshold is not None and la > 0 and lb > 0:
                merge = _angle_between(a, b) < direction_threshold
            if merge:
                del pts[k]
                changed = True
                break
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _angle_between(a: np.ndarray, b: np.ndarray) -> float:
    d = abs(math.atan2(a[1], a[0]) - math.atan2(b[1], b[0]))
    return 2 * math.pi - d if d > math.pi else d


def _direction_dissimilarity(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    lu = np.hypot(u[:, 0], u[:, 1])
    lv = np.hypot(v[:, 0], v[:, 1])
    d = np.abs(np.arctan2(u[:, 1], u[:, 0]) - np.arctan2(v[:, 1], v[:, 0]))
    d = np.where(d > np.pi, 2 * np.pi - d, d)
    zu, zv = lu == 0, lv == 0
    d = np.where(zu & zv, 0.0, d)
    d = np.where(zu ^ zv, 0.5 * np.pi, d)
    return d / np.pi


def _canonical_first(a: np.ndarray, b: np.ndarray) -> bool:
    if len(a) != len(b):
        return len(a) < len(b)
    return tuple(a.ravel()) <= tuple(b.ravel())


def multimatch(
    a: Scanpath,
    b: Scanpath,
    amplitude_threshold: float | None = None,
    direction_threshold: float | None = None,
) -> tuple[float, float, float, float, float]:
    """MultiMatch similarity without the duration component.

    Returns ``(shape, direction, length, position, mean)``, each in [0, 1].
    Simplification runs only when a threshold is given.
    """
    for sp in (a, b):
        if len(sp) < 2:
            raise TooShort(2, len(sp))
    if (a.screen_w, a.screen_h) != (b.screen_w, b.screen_h):
        raise ScreenMismatch(f"{a.screen_w}x{a.screen_h} vs {b.screen_w}x{b.screen_h}")
    xa, xb = a.xy, b.xy
    if amplitude_threshold is not None or direction_threshold is not None:
        xa = simplify(xa, amplitude_threshold, direction_threshold)
        xb = simplify(xb, amplitude_threshold, direction_threshold)
    # align in a canonical order so the tie-break cannot make the result order dependent
    if not _canonical_first(xa, xb):
        xa, xb = xb, xa
    u, v = _vectors(xa), _vectors(xb)
    path = align_costs(cost_matrix(u, v))
    ii = np.array([p[0] for p in path.pairs])
    jj = np.array([p[1] for p in path.pairs])
    diag = a.diagonal
    pu, pv = u[ii], v[jj]
    shape = np.hypot(*(pu - pv).T) / (2 * diag)
    length = np.abs(np.hypot(*pu.T) - np.hypot(*pv.T)) / diag
    direction = _direction_dissimilarity(pu, pv)
    position = np.hypot(*(xa[ii + 1] - xb[jj + 1]).T) / diag
    sims = [float(np.clip(1.0 - np.mean(d), 0.0, 1.0)) for d in (shape, direction, length, position)]
    return (*sims, sum(sims) / 4.0)


def fixation_pixels(sp: Scanpath, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows and columns of the grid pixels whose centres are nearest each fixation."""
    xy = sp.xy
    cols = np.floor(xy[:, 0] * width / sp.screen_w).astype(int)
    rows = np.floor(xy[:, 1] * height / sp.screen_h).astype(int)
    return np.clip(rows, 0, height - 1), np.clip(cols, 0, width - 1)


def fixation_density(pool: ObserverPool, sigma_px: float, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Binary fixation map of the pooled fixations blurred by a 3-sigma-truncated Gaussian."""
    if sigma_px <= 0:
        raise ValueError("sigma_px must be positive")
    w, h = pool.screen
    gh, gw = shape if shape is not None else (h, w)
    fixmap = np.zeros((gh, gw))
    for sp in pool.scanpaths:
        if len(sp):
            rows, cols = fixation_pixels(sp, gh, gw)
            fixmap[rows, cols] = 1.0
    sigma_grid = (sigma_px * gh / h, sigma_px * gw / w)
    return ndimage.gaussian_filter(fixmap, sigma_grid, mode="constant", truncate=3.0)


def synthesize_saliency(
    pool: ObserverPool, sigma_px: float | None = None, shape: tuple[int, int] | None = None
) -> SaliencyMap:
    """Max-normalized saliency map from every fixation in ``pool``.

    ``sigma_px`` defaults to ``screen_w / 24``; ``shape`` (rows, cols)
    defaults to the screen resolution.
    """
    if pool is None or len(pool) == 0:
        raise EmptyPool()
    if sigma_px is None:
        sigma_px = pool.screen[0] / 24.0
    dens = fixation_density(pool, sigma_px, shape)
    peak = dens.max()
    if peak <= 0:
        raise EmptyPool()
    return SaliencyMap(dens / peak)


def _values(sal) -> np.ndarray:
    return sal.values if isinstance(sal, SaliencyMap) else np.asarray(sal, dtype=np.float64)


def nss(sp: Scanpath, sal: SaliencyMap | np.ndarray) -> float:
    """Mean of the standardized map (population std) at the fixation pixels."""
    if len(sp) == 0:
        raise TooShort(1, 0)
    values = _values(sal)
    std = values.std()
    if std < NSS_EPS:
        raise FlatMap(f"saliency map std {std} below {NSS_EPS}")
    z = (values - values.mean()) / std
    rows, cols = fixation_pixels(sp, *values.shape)
    return float(np.mean(z[rows, cols]))


def congruency(sp: Scanpath, sal: SaliencyMap | np.ndarray, q: float = 0.9) -> float:
    """Fraction of fixations on pixels at or above the map's ``q``-quantile."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly between 0 and 1")
    if len(sp) == 0:
        raise TooShort(1, 0)
    values = _values(sal)
    salient = values >= np.quantile(values, q)
    rows, cols = fixation_pixels(sp, *values.shape)
    return float(np.mean(salient[rows, cols]))
