"""Per-image and aggregate scanpath evaluation reports."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import REPORT_FIELDS, MetricReport, ObserverPool, SaliencyMap, Scanpath
from .metrics import congruency, multimatch, nss, synthesize_saliency


def evaluate_scanpath(
    pred: Scanpath,
    pool: ObserverPool,
    sal: SaliencyMap | None = None,
    q: float = 0.9,
    mm_reduce: str = "mean",
    exclude_observer: str | None = None,
) -> MetricReport:
    """Score one predicted scanpath against an image's observers.

    MultiMatch is computed against every observer and reduced by ``mean``
    (default) or ``max``; NSS and Congruency use ``sal``, or the map
    synthesized from the pooled fixations when ``sal`` is None.
    ``exclude_observer`` drops one observer from the MultiMatch reference
    set (used when the prediction is itself an observer).
    """
    if mm_reduce not in ("mean", "max"):
        raise ValueError(f"mm_reduce must be 'mean' or 'max', got {mm_reduce!r}")
    if sal is None:
        sal = synthesize_saliency(pool)
    refs = [sp for sp in pool.scanpaths if sp.observer_id != exclude_observer and len(sp) >= 2]
    scores = np.array([multimatch(pred, ref)[:4] for ref in refs])
    if mm_reduce == "mean":
        mm = scores.mean(axis=0)
    else:
        mm = scores[np.argmax(scores.mean(axis=1))]
    return MetricReport.from_components(mm, nss(pred, sal), congruency(pred, sal, q))


def aggregate(reports: Sequence[MetricReport]) -> dict[str, float]:
    """Column means; ``mm_mean`` stays the mean of the four aggregated components."""
    if not reports:
        raise ValueError("nothing to aggregate")
    out = {f: float(np.mean([getattr(r, f) for r in reports])) for f in REPORT_FIELDS}
    out["mm_mean"] = (out["mm_shape"] + out["mm_direction"] + out["mm_length"] + out["mm_position"]) / 4.0
    return out


def evaluate_dataset(
    pools: Sequence[ObserverPool],
    predict: Callable[[ObserverPool], Scanpath],
    saliency: Sequence[SaliencyMap | None] | None = None,
    q: float = 0.9,
    mm_reduce: str = "mean",
    exclude_predicted_observer: bool = False,
) -> dict:
    """Report with one entry per image plus the aggregate block."""
    per_image, reports = {}, []
    for k, pool in enumerate(pools):
        pred = predict(pool)
        sal = saliency[k] if saliency is not None else None
        exclude = pred.observer_id if exclude_predicted_observer else None
        r = evaluate_scanpath(pred, pool, sal, q, mm_reduce, exclude)
        per_image[pool.image_id] = r.to_dict()
        reports.append(r)
    return {"images": per_image, "aggregate": aggregate(reports)}
