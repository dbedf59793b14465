"""Plain and soft error budgets over a service mesh.

All budgets and unavailabilities are dimensionless fractions of a shared
window. A service's soft budget inside a product is its own budget minus the
risk-weighted unavailability of every other member of that product, where a
peer's risk factor is ``1 - ADS / total_items``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import datetime
from decimal import Decimal

from .errors import DataError, IncompleteMeshError, InvalidArgumentError

SLO_KINDS = ("availability", "latency", "error-rate", "other")


@dataclass(frozen=True)
class Window:
    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise DataError("window start must precede window end")

    @property
    def days(self) -> float:
        return (self.end - self.start).total_seconds() / 86400.0


@dataclass(frozen=True)
class SLORecord:
    """An objective on an SLI: a target fraction or an inclusive (lower, upper) range."""

    service_id: str
    target: float | tuple[float, float]
    slo_kind: str = "availability"
    window: Window | None = None

    def __post_init__(self) -> None:
        if self.slo_kind not in SLO_KINDS:
            raise DataError(f"unknown SLO kind {self.slo_kind!r}")
        if isinstance(self.target, tuple):
            lo, hi = self.target
            for v in (lo, hi):
                _check_fraction(v, "SLO bound")
            if lo > hi:
                raise DataError("SLO lower bound exceeds upper bound")
        else:
            _check_fraction(self.target, "SLO target")

    def is_met(self, sli: float) -> bool:
        if isinstance(self.target, tuple):
            return self.target[0] <= sli <= self.target[1]
        return sli >= self.target

    @property
    def error_budget(self) -> float:
        if isinstance(self.target, tuple):
            raise InvalidArgumentError("error budget needs a single target fraction, not a range")
        return error_budget(self.target)


@dataclass(frozen=True)
class ServiceWindowStats:
    service_id: str
    unavailability: float
    latest_ads: float
    total_items: int
    window: Window | None = None

    def __post_init__(self) -> None:
        _check_fraction(self.unavailability, f"unavailability of {self.service_id!r}")
        if int(self.total_items) != self.total_items or self.total_items < 1:
            raise DataError(f"total_items of {self.service_id!r} must be a positive integer")
        if not (0.0 < self.latest_ads < self.total_items):
            raise DataError(
                f"latest_ads of {self.service_id!r} must lie strictly between 0 and {self.total_items}"
            )

    @property
    def risk_factor(self) -> float:
        return 1.0 - self.latest_ads / self.total_items


@dataclass(frozen=True)
class Product:
    product_id: str
    slo: SLORecord
    service_ids: tuple[str, ...]


@dataclass(frozen=True)
class MeshWindow:
    window: Window
    products: tuple[Product, ...]
    services: tuple[ServiceWindowStats, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "products", tuple(self.products))
        object.__setattr__(self, "services", tuple(self.services))
        ids = [s.service_id for s in self.services]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise DataError(f"duplicate service entries: {dup}")
        pids = [p.product_id for p in self.products]
        if len(set(pids)) != len(pids):
            raise DataError("duplicate product identifiers")
        for s in self.services:
            if s.window is not None and s.window != self.window:
                raise DataError(
                    f"service {s.service_id!r} covers a different window than the mesh; "
                    "partial windows are not supported"
                )

    def stats(self, service_id: str) -> ServiceWindowStats:
        for s in self.services:
            if s.service_id == service_id:
                return s
        raise IncompleteMeshError(f"no window statistics for service {service_id!r}", service_id)

    def product(self, product_id: str) -> Product:
        for p in self.products:
            if p.product_id == product_id:
                return p
        raise DataError(f"unknown product {product_id!r}")

    def products_of(self, service_id: str) -> list[Product]:
        return [p for p in self.products if service_id in p.service_ids]

    @property
    def service_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.services:
            seen.setdefault(s.service_id)
        for p in self.products:
            for sid in p.service_ids:
                seen.setdefault(sid)
        return list(seen)


@dataclass(frozen=True)
class PenaltyTerm:
    service_id: str
    risk_factor: float
    unavailability: float
    contribution: float


@dataclass(frozen=True)
class BudgetResult:
    service_id: str
    product_id: str
    plain_budget: float
    soft_budget: float
    penalty_terms: tuple[PenaltyTerm, ...]

    @property
    def clamped_soft_budget(self) -> float:
        return max(0.0, self.soft_budget)

    @property
    def total_penalty(self) -> float:
        return math.fsum(t.contribution for t in self.penalty_terms)


def _check_fraction(v: float, what: str) -> None:
    if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
        raise DataError(f"{what} must be a fraction in [0, 1], got {v!r}")


def _dec(v: float) -> Decimal:
    return Decimal(repr(float(v)))


def error_budget(slo: float) -> float:
    """``1 - slo``, computed in decimal so that e.g. 0.9999 gives exactly 0.0001."""
    if not (isinstance(slo, (int, float)) and math.isfinite(slo) and 0.0 <= slo <= 1.0):
        raise InvalidArgumentError(f"SLO must be a fraction in [0, 1], got {slo!r}")
    return float(Decimal(1) - _dec(slo))


def budget_minutes(budget: float, window_days: float = 30) -> float:
    """Allowed downtime in minutes for a budget fraction over ``window_days``."""
    if not (math.isfinite(budget) and math.isfinite(window_days)) or window_days <= 0:
        raise InvalidArgumentError("budget and window length must be finite, window positive")
    return float(_dec(budget) * _dec(window_days) * 24 * 60)


def soft_error_budget(target: str, product_id: str, mesh: MeshWindow) -> BudgetResult:
    product = mesh.product(product_id)
    if target not in product.service_ids:
        raise DataError(f"service {target!r} is not a member of product {product_id!r}")
    for sid in product.service_ids:
        mesh.stats(sid)
    plain = product.slo.error_budget
    terms = []
    for sid in product.service_ids:
        if sid == target:
            continue
        st = mesh.stats(sid)
        risk = st.risk_factor
        terms.append(PenaltyTerm(sid, risk, st.unavailability, risk * st.unavailability))
    soft = plain - math.fsum(t.contribution for t in terms)
    return BudgetResult(target, product_id, plain, soft, tuple(terms))


def min_soft_budget(target: str, mesh: MeshWindow) -> BudgetResult:
    """Smallest raw soft budget over every product the service belongs to."""
    products = mesh.products_of(target)
    if not products:
        raise DataError(f"service {target!r} belongs to no product")
    results = [soft_error_budget(target, p.product_id, mesh) for p in products]
    return min(results, key=lambda r: (r.soft_budget, r.product_id))


def latest_ads_before(deployments: Sequence[tuple[datetime, float]], window_end: datetime) -> float:
    """ADS of the most recent deployment strictly before ``window_end``."""
    live = [(ts, score) for ts, score in deployments if ts < window_end]
    if not live:
        raise DataError("no deployment precedes the window end")
    return max(live, key=lambda d: d[0])[1]
