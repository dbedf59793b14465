"""Deployment Index: correlation between per-version ADS and achieved SLO."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any

import numpy as np
from scipy import stats

from .errors import DataError, InsufficientDataError, InvalidArgumentError, UndefinedCorrelationError

CORRELATION_METHODS = ("pearson", "spearman")
MIN_VERSIONS = 3


@dataclass(frozen=True)
class VersionOutcome:
    application_id: str
    version: str
    ads: float
    achieved_slo: float
    live_duration: float  # seconds

    def __post_init__(self) -> None:
        if not (math.isfinite(self.achieved_slo) and 0.0 <= self.achieved_slo <= 1.0):
            raise DataError(f"achieved_slo of version {self.version!r} must be in [0, 1]")
        if not (math.isfinite(self.live_duration) and self.live_duration > 0):
            raise DataError(f"live_duration of version {self.version!r} must be positive")
        if not math.isfinite(self.ads):
            raise DataError(f"ads of version {self.version!r} must be finite")


@dataclass(frozen=True)
class DeploymentIndexResult:
    application_id: str
    index: float
    n_versions: int
    method: str


def _span(start: Any, end: Any) -> float:
    d = end - start
    if isinstance(d, timedelta):
        return d.total_seconds()
    return float(d)


def achieved_slo(sli_series: Sequence[tuple[Any, Any, float]], version_window: tuple[Any, Any]) -> float:
    """Duration-weighted mean SLI over the intervals ``(start, end, value)``.

    Intervals must not overlap and must lie inside ``version_window``; gaps are
    allowed and simply carry no weight. Endpoints may be numbers or datetimes.
    """
    w_start, w_end = version_window
    segments = sorted(sli_series, key=lambda s: s[0])
    total = 0.0
    weighted = 0.0
    prev_end = None
    for start, end, value in segments:
        length = _span(start, end)
        if length < 0:
            raise DataError(f"interval ({start}, {end}) ends before it starts")
        if _span(w_start, start) < 0 or _span(end, w_end) < 0:
            raise DataError(f"interval ({start}, {end}) lies outside the version window")
        if prev_end is not None and _span(prev_end, start) < 0:
            raise DataError(f"interval ({start}, {end}) overlaps the previous interval")
        if not (math.isfinite(value) and 0.0 <= value <= 1.0):
            raise DataError(f"SLI value {value!r} is not a fraction in [0, 1]")
        total += length
        weighted += length * value
        prev_end = end
    if total <= 0:
        raise DataError("SLI series covers zero duration")
    return weighted / total


def correlation(x: Sequence[float], y: Sequence[float], method: str = "pearson") -> float:
    method = method.lower()
    if method not in CORRELATION_METHODS:
        raise InvalidArgumentError(f"method must be one of {CORRELATION_METHODS}, got {method!r}")
    xa, ya = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise InvalidArgumentError("correlation needs two 1-D series of equal length")
    if xa.size < MIN_VERSIONS:
        raise InsufficientDataError(f"need at least {MIN_VERSIONS} paired observations, got {xa.size}")
    if np.ptp(xa) == 0 or np.ptp(ya) == 0:
        raise UndefinedCorrelationError("correlation is undefined when either series is constant")
    if method == "pearson":
        r = stats.pearsonr(xa, ya).statistic
    else:
        r = stats.spearmanr(xa, ya).statistic
    return float(np.clip(r, -1.0, 1.0))


def deployment_index(outcomes: Sequence[VersionOutcome], method: str = "pearson") -> DeploymentIndexResult:
    if not outcomes:
        raise InsufficientDataError("no version outcomes")
    apps = {o.application_id for o in outcomes}
    if len(apps) != 1:
        raise DataError(f"outcomes span several applications: {sorted(apps)}")
    app = outcomes[0].application_id
    if len(outcomes) < MIN_VERSIONS:
        raise InsufficientDataError(
            f"application {app!r} has {len(outcomes)} versions, need at least {MIN_VERSIONS}"
        )
    versions = [o.version for o in outcomes]
    if len(set(versions)) != len(versions):
        raise DataError(f"application {app!r} has duplicate version labels")
    r = correlation([o.ads for o in outcomes], [o.achieved_slo for o in outcomes], method)
    return DeploymentIndexResult(app, r, len(outcomes), method.lower())


def deployment_indices(outcomes: Sequence[VersionOutcome], method: str = "pearson") -> list[DeploymentIndexResult]:
    """One index per application, in first-seen order."""
    groups: dict[str, list[VersionOutcome]] = {}
    for o in outcomes:
        groups.setdefault(o.application_id, []).append(o)
    return [deployment_index(g, method) for g in groups.values()]


def version_outcome(application_id: str, version: str, ads: float,
                    sli_series: Sequence[tuple[Any, Any, float]],
                    version_window: tuple[datetime, datetime] | tuple[float, float]) -> VersionOutcome:
    return VersionOutcome(
        application_id,
        version,
        ads,
        achieved_slo(sli_series, version_window),
        _span(*version_window),
    )
