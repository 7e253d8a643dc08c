"""Standard monocular depth metrics, computed in float64 over valid pixels."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "log10", "delta1", "delta2", "delta3",
                "silog", "sq_err_rel", "abs_err_rel", "irmse")


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    silog: float
    sq_err_rel: float
    abs_err_rel: float
    irmse: float
    pixel_count: int

    def as_dict(self) -> dict:
        return asdict(self)


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def evaluate(pred, gt, mask=None) -> MetricReport:
    """Metrics of ``pred`` against ``gt`` over ``mask`` (default: ``gt > 0``).

    ``silog`` is scaled by 100 and ``irmse`` is in 1/km (depths in meters);
    ``sq_err_rel``/``abs_err_rel`` are ``sq_rel``/``abs_rel`` in percent.
    Threshold accuracies use a strict ``<``.
    """
    pred, gt = _np(pred).astype(np.float64), _np(gt).astype(np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mask = gt > 0 if mask is None else _np(mask).astype(bool)
    if mask.shape != gt.shape:
        raise ValueError(f"mask shape {mask.shape} does not match {gt.shape}")
    if not mask.any():
        raise ValueError("no valid pixels")
    d, t = pred[mask], gt[mask]
    if (d <= 0).any() or (t <= 0).any():
        raise ValueError("depths must be positive on valid pixels")

    err = d - t
    ratio = np.maximum(d / t, t / d)
    g = np.log(d) - np.log(t)
    abs_rel = float(np.mean(np.abs(err) / t))
    sq_rel = float(np.mean(err ** 2 / t))
    # two-pass variance; mean(g^2) - mean(g)^2 cancels badly when g is nearly constant
    silog_var = float(np.mean((g - g.mean()) ** 2))
    return MetricReport(
        abs_rel=abs_rel,
        sq_rel=sq_rel,
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmse_log=float(np.sqrt(np.mean(g ** 2))),
        log10=float(np.mean(np.abs(np.log10(d) - np.log10(t)))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        silog=100.0 * float(np.sqrt(silog_var)),
        sq_err_rel=100.0 * sq_rel,
        abs_err_rel=100.0 * abs_rel,
        irmse=float(np.sqrt(np.mean((1000.0 / d - 1000.0 / t) ** 2))),
        pixel_count=int(mask.sum()),
    )


def aggregate(reports: list[MetricReport], pixel_weighted: bool = False) -> MetricReport:
    """Average per-image reports, either equally or weighted by valid-pixel count."""
    if not reports:
        raise ValueError("no reports to aggregate")
    counts = np.array([r.pixel_count for r in reports], dtype=np.float64)
    weights = counts / counts.sum() if pixel_weighted else np.full(len(reports), 1.0 / len(reports))
    values = {}
    for f in fields(MetricReport):
        if f.name == "pixel_count":
            continue
        values[f.name] = float(np.dot(weights, [getattr(r, f.name) for r in reports]))
    if len(reports) == 1:
        return reports[0]
    return MetricReport(**values, pixel_count=int(counts.sum()))
