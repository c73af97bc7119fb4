"""Dataset files, synthetic blob datasets, splits, and external feature import.

Dataset files are JSONL, one image per line::

    {"image_id": "img_0000",
     "screen_w": 64, "screen_h": 64,
     "image": "images/img_0000.ppm",          # optional raster path (PPM/PGM)
     "saliency": "saliency/img_0000.npy",     # optional ground-truth map
     "synthetic": {"blobs": [...]},           # optional inline blob spec
     "observers": [{"observer_id": "obs_00",
                    "fixations": [[x, y], [x, y, t_ms], ...]}, ...]}

Relative paths resolve against the dataset file's directory.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ObserverPool, SaliencyMap, Scanpath, validate_scanpath
from .errors import BadRatios, MissingImage, ParseError, RecordError, ShapeMismatch, ValidationError


@dataclass(frozen=True)
class DatasetRecord:
    image_id: str
    screen_w: int
    screen_h: int
    observers: tuple[Scanpath, ...]
    image: str | None = None
    saliency: str | None = None
    synthetic: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "observers", tuple(self.observers))
        if not self.observers:
            raise ValidationError(f"record {self.image_id!r} has no observers")
        for sp in self.observers:
            validate_scanpath(sp)

    def pool(self) -> ObserverPool:
        return ObserverPool(self.image_id, self.observers)

    def to_json(self) -> dict:
        d = {"image_id": self.image_id, "screen_w": self.screen_w, "screen_h": self.screen_h}
        if self.image is not None:
            d["image"] = self.image
        if self.saliency is not None:
            d["saliency"] = self.saliency
        if self.synthetic is not None:
            d["synthetic"] = self.synthetic
        d["observers"] = [
            {
                "observer_id": sp.observer_id,
                "fixations": [[f.x, f.y] if f.t_ms is None else [f.x, f.y, f.t_ms] for f in sp.fixations],
            }
            for sp in self.observers
        ]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DatasetRecord":
        image_id = str(d["image_id"])
        w, h = int(d["screen_w"]), int(d["screen_h"])
        observers = []
        for obs in d["observers"]:
            fix = obs["fixations"]
            for f in fix:
                if len(f) not in (2, 3):
                    raise ValidationError(f"fixation {f!r} must be [x, y] or [x, y, t_ms]")
            observers.append(
                Scanpath.from_xy(
                    [f[:2] for f in fix],
                    w,
                    h,
                    image_id,
                    str(obs["observer_id"]),
                    t_ms=[f[2] if len(f) == 3 else None for f in fix],
                )
            )
        return cls(image_id, w, h, tuple(observers), d.get("image"), d.get("saliency"), d.get("synthetic"))


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Parse and validate a JSONL dataset; errors carry 1-based line numbers."""
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(lineno, str(e)) from None
            if not isinstance(d, dict):
                raise ParseError(lineno, "record is not a JSON object")
            try:
                records.append(DatasetRecord.from_json(d))
            except (KeyError, TypeError) as e:
                raise RecordError(lineno, f"missing or malformed field {e}") from None
            except ValidationError as e:
                raise RecordError(lineno, str(e)) from None
    return records


def save_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


# -- rasters -----------------------------------------------------------------


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write ``H x W x 3`` floats in [0, 1] as binary 8-bit PPM (P6)."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def read_pnm(path: str | Path) -> np.ndarray:
    """Read binary PPM (P6) or PGM (P5) as ``H x W x 3`` floats in [0, 1]."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode())
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    channels = {"P6": 3, "P5": 1}.get(magic)
    if channels is None or maxval > 255:
        raise ValueError(f"unsupported raster {magic} maxval {maxval}")
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos).reshape(h, w, channels)
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr.astype(np.float64) / 255.0


# -- synthetic data ------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Blob-world dataset parameters; lengths are fractions of the screen width."""

    n_blobs: int = 2
    image_size: tuple[int, int] = (64, 64)  # (height, width)
    centers: list[tuple[float, float]] | None = None  # fixed normalized centres
    center_spread: float = 0.15
    sigma_range: tuple[float, float] = (0.04, 0.06)
    weights: list[float] | None = None
    n_observers: int = 15
    length_range: tuple[int, int] = (8, 12)
    obs_noise: float = 0.04
    fixation_ms: float = 250.0
    background: float = 0.05

    def __post_init__(self):
        if self.n_blobs < 1:
            raise ValueError("n_blobs must be >= 1")
        if self.n_observers < 1:
            raise ValueError("n_observers must be >= 1")
        if self.centers is not None and len(self.centers) != self.n_blobs:
            raise ValueError("centers must list one point per blob")
        if self.weights is not None:
            w = np.asarray(self.weights, float)
            if len(w) != self.n_blobs or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("weights must be nonnegative, one per blob")
            self.weights = list(w / w.sum())
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError("length_range must satisfy 1 <= lo <= hi")


def render_blobs(blobs: Sequence[dict], height: int, width: int, background: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image, saliency)`` for a blob list.

    The image shows each blob as a bright coloured Gaussian patch on a dark
    background, quantized to 8 bits; the saliency map is the exact mixture
    density at pixel centres, max-normalized.
    """
    xs = (np.arange(width) + 0.5)[None, :]
    ys = (np.arange(height) + 0.5)[:, None]
    image = np.full((height, width, 3), background)
    density = np.zeros((height, width))
    for b in blobs:
        s = b["sigma"] * width
        d2 = (xs - b["x"] * width) ** 2 + (ys - b["y"] * height) ** 2
        patch = np.exp(-d2 / (2 * s * s))
        image += patch[..., None] * np.asarray(b["color"])[None, None, :]
        density += b["weight"] * patch / (2 * math.pi * s * s)
    image = np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    return image, density / density.max()


def _sample_blobs(spec: SyntheticSpec, rng: np.random.Generator) -> list[dict]:
    if spec.centers is not None:
        centers = np.asarray(spec.centers, float)
    else:
        centers = np.clip(0.5 + spec.center_spread * rng.standard_normal((spec.n_blobs, 2)), 0.1, 0.9)
    sigmas = rng.uniform(*spec.sigma_range, size=spec.n_blobs)
    colors = rng.uniform(0.6, 1.0, size=(spec.n_blobs, 3))
    weights = spec.weights if spec.weights is not None else [1.0 / spec.n_blobs] * spec.n_blobs
    return [
        {"x": float(c[0]), "y": float(c[1]), "sigma": float(s), "weight": float(w), "color": [float(v) for v in col]}
        for c, s, w, col in zip(centers, sigmas, weights, colors)
    ]


@dataclass
class SyntheticImage:
    record: DatasetRecord
    image: np.ndarray
    saliency: SaliencyMap


def generate_synthetic(spec: SyntheticSpec, n_images: int, seed: int = 0) -> list[SyntheticImage]:
    """Blob-world images with observers that fixate blob centres plus jitter.

    Each fixation picks a blob by weight and lands at its centre plus
    isotropic Gaussian noise of std ``obs_noise * width``, clipped to the
    screen.
    """
    h, w = spec.image_size
    out = []
    for idx in range(n_images):
        rng = np.random.default_rng([seed, idx])
        blobs = _sample_blobs(spec, rng)
        image, sal = render_blobs(blobs, h, w, spec.background)
        centers = np.array([[b["x"] * w, b["y"] * h] for b in blobs])
        probs = np.array([b["weight"] for b in blobs])
        image_id = f"img_{idx:04d}"
        observers = []
        for o in range(spec.n_observers):
            n = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
            which = rng.choice(spec.n_blobs, size=n, p=probs / probs.sum())
            xy = centers[which] + spec.obs_noise * w * rng.standard_normal((n, 2))
            xy = np.clip(xy, 0.0, [w, h])
            t = spec.fixation_ms * np.arange(n)
            observers.append(Scanpath.from_xy(xy, w, h, image_id, f"obs_{o:02d}", t_ms=t))
        rec = DatasetRecord(image_id, w, h, tuple(observers), synthetic={"blobs": blobs, "background": spec.background})
        out.append(SyntheticImage(rec, image, SaliencyMap(sal)))
    return out


def write_synthetic(items: Sequence[SyntheticImage], out_dir: str | Path, name: str = "dataset.jsonl") -> Path:
    """Write JSONL + PPM images + ``.npy`` saliency maps; returns the JSONL path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "saliency").mkdir(parents=True, exist_ok=True)
    records = []
    for item in items:
        rec = item.record
        img_rel = f"images/{rec.image_id}.ppm"
        sal_rel = f"saliency/{rec.image_id}.npy"
        write_ppm(out_dir / img_rel, item.image)
        np.save(out_dir / sal_rel, item.saliency.values)
        records.append(
            DatasetRecord(rec.image_id, rec.screen_w, rec.screen_h, rec.observers, img_rel, sal_rel, rec.synthetic)
        )
    path = out_dir / name
    save_dataset(records, path)
    return path


def load_image(record: DatasetRecord, base_dir: str | Path = ".") -> np.ndarray:
    """``H x W x 3`` image in [0, 1] from the raster path or the inline blob spec."""
    if record.image is not None:
        return read_pnm(Path(base_dir) / record.image)
    if record.synthetic is not None:
        syn = record.synthetic
        return render_blobs(syn["blobs"], record.screen_h, record.screen_w, syn.get("background", 0.05))[0]
    raise MissingImage(record.image_id)


def load_saliency(record: DatasetRecord, base_dir: str | Path = ".") -> SaliencyMap | None:
    """Stored ground-truth map, the inline blob density, or ``None``."""
    if record.saliency is not None:
        return SaliencyMap(np.load(Path(base_dir) / record.saliency))
    if record.synthetic is not None:
        syn = record.synthetic
        return SaliencyMap(render_blobs(syn["blobs"], record.screen_h, record.screen_w, syn.get("background", 0.05))[1])
    return None


def uniform_random_scanpath(rng: np.random.Generator, n: int, screen_w: int, screen_h: int, image_id: str = "") -> Scanpath:
    """Baseline scanpath with ``n`` fixations uniform over the screen."""
    xy = rng.uniform(0.0, 1.0, size=(n, 2)) * np.array([screen_w, screen_h])
    return Scanpath.from_xy(xy, screen_w, screen_h, image_id, "random")


# -- splits ------------------------------------------------------------------


def split(records: Sequence[DatasetRecord], ratios: Sequence[float], seed: int = 0) -> list[list[DatasetRecord]]:
    """Partition by image (never by observer) into ``len(ratios)`` parts."""
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size == 0 or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise BadRatios(f"ratios {ratios.tolist()} must be nonnegative and sum to 1")
    ids = sorted({r.image_id for r in records})
    order = np.random.default_rng(seed).permutation(len(ids))
    bounds = np.rint(np.cumsum(ratios) * len(ids)).astype(int)
    bounds[-1] = len(ids)
    parts, start = [], 0
    by_id = {}
    for r in records:
        by_id.setdefault(r.image_id, []).append(r)
    for stop in bounds:
        chosen = [ids[i] for i in order[start:stop]]
        parts.append([rec for i in chosen for rec in by_id[i]])
        start = stop
    return parts


# -- external features -----------------------------------------------------------


class FeatureStore(dict):
    """``image_id -> C x h x w`` array mapping that raises MissingImage."""

    def __missing__(self, key):
        raise MissingImage(key)


def export_features(features: dict[str, np.ndarray], path: str | Path) -> None:
    """Write ``uint64 header_len | JSON header | little-endian float64 payload``."""
    entries, offset, blobs = {}, 0, []
    for image_id in sorted(features):
        arr = np.ascontiguousarray(features[image_id], dtype="<f8")
        entries[image_id] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"dtype": "<f8", "entries": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def import_features(path: str | Path, expected_shape: tuple[int, int, int] | None = None) -> FeatureStore:
    """Read a feature file; every entry must match ``expected_shape`` when given."""
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + hlen])
    payload = raw[8 + hlen :]
    store = FeatureStore()
    for image_id, e in header["entries"].items():
        shape = tuple(e["shape"])
        if expected_shape is not None and shape != tuple(expected_shape):
            raise ShapeMismatch(f"features for {image_id!r} have shape {shape}, model expects {tuple(expected_shape)}")
        count = int(np.prod(shape))
        store[image_id] = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"]).reshape(shape).astype(np.float64)
    return store
