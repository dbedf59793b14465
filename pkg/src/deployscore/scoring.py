"""Application Deployment Score (ADS) reports, gap ranking and version trends."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import expit

from .errors import DataError, InvalidArgumentError, SchemaError
from .irt import (
    FittedModel,
    ResponseMatrix,
    expected_score,
    icc,
    score_abilities,
    score_pattern,
)

TREND_EPSILON = 1e-6


@dataclass(frozen=True)
class ItemOutcome:
    """One item of a report. ``gap`` is ``1 - success_probability``.

    The gap is evaluated as the logistic of ``-L`` rather than by subtraction,
    so it stays positive where the pass probability rounds to 1.
    """

    item_id: str
    response: int | None  # None when the cell was missing
    success_probability: float
    gap: float | None = None

    def __post_init__(self) -> None:
        if self.gap is None:
            object.__setattr__(self, "gap", 1.0 - self.success_probability)


@dataclass(frozen=True)
class DeploymentScoreReport:
    deployment_id: str
    theta: float
    ads: float
    total_raw_score: int
    per_item: tuple[ItemOutcome, ...]
    method: str = "EB"
    posterior_sd: float | None = None

    @property
    def improvement_areas(self) -> list[ItemOutcome]:
        """Failed items, largest gap first."""
        failed = [o for o in self.per_item if o.response == 0]
        return sorted(failed, key=lambda o: (-o.gap, o.item_id))


def ads(theta: float, model: FittedModel) -> float:
    """Application Deployment Score: expected number of checklist items passed at ``theta``."""
    return expected_score(theta, model)


def _report(dep_id: str, row: np.ndarray, theta: float, sd: float | None,
            model: FittedModel, method: str) -> DeploymentScoreReport:
    per_item = tuple(
        ItemOutcome(
            item.item_id,
            None if math.isnan(v) else int(v),
            icc(theta, item),
            float(expit(-item.discrimination * (theta - item.difficulty))),
        )
        for item, v in zip(model.items, row)
    )
    return DeploymentScoreReport(
        deployment_id=dep_id,
        theta=theta,
        ads=ads(theta, model),
        total_raw_score=int(np.nansum(row)),
        per_item=per_item,
        method=method,
        posterior_sd=sd,
    )


def score_report(matrix: ResponseMatrix, model: FittedModel, method: str = "EB") -> list[DeploymentScoreReport]:
    estimates = score_abilities(matrix, model, method)
    return [
        _report(est.deployment_id, row, est.theta, est.posterior_sd, model, est.method)
        for est, (_, row) in zip(estimates, matrix.rows())
    ]


def _as_vector(response_vector: Sequence[Any] | dict[str, Any], model: FittedModel) -> np.ndarray:
    if isinstance(response_vector, dict):
        missing = [i for i in model.item_ids if i not in response_vector]
        extra = [k for k in response_vector if k not in model.item_ids]
        if missing or extra:
            raise SchemaError(f"response items do not match model (missing {missing}, unexpected {extra})")
        response_vector = [response_vector[i] for i in model.item_ids]
    if len(response_vector) != len(model.items):
        raise SchemaError(
            f"response vector has length {len(response_vector)}, model has {len(model.items)} items"
        )
    vec = np.array([math.nan if v is None else float(v) for v in response_vector])
    obs = ~np.isnan(vec)
    if np.any((vec[obs] != 0) & (vec[obs] != 1)):
        raise DataError("responses must be 0, 1 or missing")
    return vec


def score_new_deployment(response_vector: Sequence[Any] | dict[str, Any], model: FittedModel,
                         method: str = "EB", deployment_id: str = "new") -> DeploymentScoreReport:
    """Score one deployment against a frozen model. The model is never refitted."""
    vec = _as_vector(response_vector, model)
    theta, sd = score_pattern(vec, model, method)
    return _report(deployment_id, vec, theta, sd, model, method.upper())


@dataclass(frozen=True)
class TrendEntry:
    timestamp: Any
    version: str
    ads: float
    theta: float


@dataclass(frozen=True)
class TrendReport:
    application_id: str
    entries: tuple[TrendEntry, ...]
    directions: tuple[str, ...]


def direction(before: float, after: float, eps: float = TREND_EPSILON) -> str:
    delta = after - before
    if delta > eps:
        return "improving"
    if delta < -eps:
        return "degrading"
    return "flat"


def trend(history: Sequence[tuple[Any, str, Any]], model: FittedModel, method: str = "EB",
          application_id: str = "", eps: float = TREND_EPSILON) -> TrendReport:
    """ADS per version in deployment order, with a direction per consecutive pair."""
    if not history:
        raise InvalidArgumentError("trend history is empty")
    versions = [v for _, v, _ in history]
    dupes = sorted({v for v in versions if versions.count(v) > 1})
    if dupes:
        raise DataError(f"duplicate version labels: {dupes}")
    ordered = sorted(history, key=lambda h: h[0])
    stamps = [h[0] for h in ordered]
    if any(s1 == s0 for s0, s1 in zip(stamps, stamps[1:])):
        raise DataError("deployment timestamps must be distinct")
    entries = []
    for ts, version, vec in ordered:
        rep = score_new_deployment(vec, model, method, deployment_id=str(version))
        entries.append(TrendEntry(ts, str(version), rep.ads, rep.theta))
    dirs = tuple(direction(e0.ads, e1.ads, eps) for e0, e1 in zip(entries, entries[1:]))
    return TrendReport(application_id, tuple(entries), dirs)
