"""Dichotomous IRT core: logistic item curves, MML-EM fitting, ability scoring.

Items follow the two-parameter logistic model ``P(theta) = 1 / (1 + exp(-a (theta - b)))``
with the Rasch/1PL model as the special case ``a = 1``. Item parameters are
estimated by marginal maximum likelihood, integrating the latent trait out
against a standard-normal prior with Gauss-Hermite quadrature.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit, log_expit, logsumexp
from scipy.stats import norm

from .errors import (
    DataError,
    DegenerateItemError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericalError,
    SchemaError,
    warn_not_converged,
)

ModelKind = Literal["1PL", "2PL"]
ScoringMethod = Literal["EB", "EAP", "ML"]

MODEL_KINDS: tuple[str, ...] = ("1PL", "2PL")
SCORING_METHODS: tuple[str, ...] = ("EB", "EAP", "ML")

MIN_ROWS = 3
MIN_ITEMS = 2


@dataclass(frozen=True)
class ItemParameters:
    item_id: str
    discrimination: float
    difficulty: float

    def __post_init__(self) -> None:
        _require_finite(discrimination=self.discrimination, difficulty=self.difficulty)

    @property
    def intercept(self) -> float:
        """Slope-intercept form ``L = a*theta + c``."""
        return -self.discrimination * self.difficulty


@dataclass(frozen=True)
class AbilityEstimate:
    deployment_id: str
    theta: float
    method: str
    posterior_sd: float | None = None


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Deployments x checklist items, entries 0/1 with NaN marking a missing cell."""

    item_ids: tuple[str, ...]
    deployment_ids: tuple[str, ...]
    responses: np.ndarray

    def __post_init__(self) -> None:
        item_ids = tuple(str(i) for i in self.item_ids)
        deployment_ids = tuple(str(d) for d in self.deployment_ids)
        resp = np.array(self.responses, dtype=float, copy=True)
        if resp.ndim != 2:
            raise SchemaError("responses must be a 2-D array")
        if resp.shape != (len(deployment_ids), len(item_ids)):
            raise SchemaError(
                f"responses shape {resp.shape} does not match "
                f"{len(deployment_ids)} rows x {len(item_ids)} items"
            )
        if len(set(item_ids)) != len(item_ids):
            raise SchemaError("item identifiers must be unique")
        if len(set(deployment_ids)) != len(deployment_ids):
            raise SchemaError("deployment identifiers must be unique")
        observed = ~np.isnan(resp)
        bad = observed & (resp != 0.0) & (resp != 1.0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(
                f"response must be 0 or 1, got {resp[r, c]!r}",
                row=int(r) + 1,
                column=item_ids[c],
            )
        empty = ~observed.any(axis=1)
        if empty.any():
            r = int(np.flatnonzero(empty)[0])
            raise DataError(f"deployment {deployment_ids[r]!r} has no observed responses")
        resp.setflags(write=False)
        object.__setattr__(self, "item_ids", item_ids)
        object.__setattr__(self, "deployment_ids", deployment_ids)
        object.__setattr__(self, "responses", resp)

    @classmethod
    def from_rows(
        cls,
        item_ids: Sequence[str],
        rows: Iterable[tuple[str, Sequence[int | float | None]]],
    ) -> ResponseMatrix:
        ids, values = [], []
        for dep_id, vec in rows:
            if len(vec) != len(item_ids):
                raise SchemaError(
                    f"deployment {dep_id!r} has {len(vec)} responses, expected {len(item_ids)}"
                )
            ids.append(dep_id)
            values.append([math.nan if v is None else float(v) for v in vec])
        arr = np.array(values, dtype=float).reshape(len(ids), len(item_ids))
        return cls(tuple(item_ids), tuple(ids), arr)

    @property
    def n_rows(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    def rows(self) -> Iterable[tuple[str, np.ndarray]]:
        return zip(self.deployment_ids, self.responses)

    def check_fittable(self) -> None:
        if self.n_items < MIN_ITEMS:
            raise InsufficientDataError(f"need at least {MIN_ITEMS} items, got {self.n_items}")
        if self.n_rows < MIN_ROWS:
            raise InsufficientDataError(f"need at least {MIN_ROWS} rows, got {self.n_rows}")
        for j, item in enumerate(self.item_ids):
            col = self.responses[:, j]
            col = col[~np.isnan(col)]
            if col.size == 0:
                raise InsufficientDataError(f"item {item!r} has no observed responses")
            if np.all(col == col[0]):
                raise DegenerateItemError(item, int(col[0]))


@dataclass(frozen=True)
class FitConfig:
    n_nodes: int = 21
    tol: float = 1e-4
    max_iter: int = 500
    max_abs_discrimination: float = 10.0
    max_abs_difficulty: float = 10.0
    accelerate: bool = True

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise InvalidArgumentError("n_nodes must be at least 2")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise InvalidArgumentError("tol must be a positive finite number")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if not (self.max_abs_discrimination > 0 and self.max_abs_difficulty > 0):
            raise InvalidArgumentError("parameter bounds must be positive")

    @property
    def max_abs_intercept(self) -> float:
        return self.max_abs_discrimination * self.max_abs_difficulty


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Hermite nodes and weights normalised to integrate against N(0, 1)."""

    nodes: tuple[float, ...]
    weights: tuple[float, ...]

    @classmethod
    def gauss_hermite(cls, n_nodes: int) -> Quadrature:
        x, w = hermegauss(n_nodes)
        w = w / w.sum()
        return cls(tuple(float(v) for v in x), tuple(float(v) for v in w))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.nodes), np.asarray(self.weights)


@dataclass(frozen=True)
class FitDiagnostics:
    log_likelihood: float
    iterations: int
    converged: bool
    max_change: float
    at_bound: tuple[str, ...] = ()
    loglik_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class FittedModel:
    model_kind: str
    items: tuple[ItemParameters, ...]
    diagnostics: FitDiagnostics
    quadrature: Quadrature
    config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise SchemaError(f"unknown model kind {self.model_kind!r}")
        if not self.items:
            raise SchemaError("a model needs at least one item")
        if self.model_kind == "1PL" and any(i.discrimination != 1.0 for i in self.items):
            raise SchemaError("1PL items must all have discrimination 1")
        object.__setattr__(self, "items", tuple(self.items))

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(i.item_id for i in self.items)

    @property
    def discriminations(self) -> np.ndarray:
        return np.array([i.discrimination for i in self.items])

    @property
    def difficulties(self) -> np.ndarray:
        return np.array([i.difficulty for i in self.items])

    def item(self, item_id: str) -> ItemParameters:
        for it in self.items:
            if it.item_id == item_id:
                return it
        raise KeyError(item_id)


# ---------------------------------------------------------------------------
# curves and information
# ---------------------------------------------------------------------------


def _require_finite(**values: float) -> None:
    for name, v in values.items():
        try:
            ok = math.isfinite(v)
        except TypeError:
            ok = False
        if not ok:
            raise InvalidArgumentError(f"{name} must be a finite real number, got {v!r}")


def icc(theta: float, item: ItemParameters) -> float:
    """Probability that a deployment at ``theta`` passes ``item``."""
    _require_finite(theta=theta)
    return float(expit(item.discrimination * (theta - item.difficulty)))


def item_information(theta: float, item: ItemParameters) -> float:
    p = icc(theta, item)
    return item.discrimination**2 * p * (1.0 - p)


def test_information(theta: float, model: FittedModel) -> float:
    return float(sum(item_information(theta, it) for it in model.items))


# keep pytest from collecting the function above when it is imported into tests
test_information.__test__ = False  # type: ignore[attr-defined]


def expected_score(theta: float, model: FittedModel) -> float:
    """Expected true score: sum of item pass probabilities at ``theta``."""
    _require_finite(theta=theta)
    a, b = model.discriminations, model.difficulties
    return float(np.sum(expit(a * (theta - b))))


@dataclass(frozen=True, eq=False)
class CurveTable:
    theta: np.ndarray
    item_ids: tuple[str, ...]
    icc: np.ndarray  # grid x items
    information: np.ndarray  # grid x items
    test_information: np.ndarray
    true_score: np.ndarray

    @property
    def columns(self) -> list[str]:
        return (
            ["theta"]
            + [f"icc:{i}" for i in self.item_ids]
            + [f"info:{i}" for i in self.item_ids]
            + ["test_information", "true_score"]
        )

    def as_array(self) -> np.ndarray:
        return np.column_stack(
            [self.theta, self.icc, self.information, self.test_information, self.true_score]
        )

    def rows(self) -> list[dict[str, float]]:
        cols = self.columns
        return [dict(zip(cols, map(float, r))) for r in self.as_array()]


def theta_grid(start: float, stop: float, step: float) -> np.ndarray:
    _require_finite(start=start, stop=stop, step=step)
    if step <= 0:
        raise InvalidArgumentError("grid step must be positive")
    if stop <= start:
        raise InvalidArgumentError("grid needs stop > start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    if n < 2:
        raise InvalidArgumentError("grid must contain at least 2 points")
    return start + step * np.arange(n)


def curve_table(model: FittedModel, start: float, stop: float, step: float) -> CurveTable:
    grid = theta_grid(start, stop, step)
    a, b = model.discriminations, model.difficulties
    p = expit(a[None, :] * (grid[:, None] - b[None, :]))
    info = a[None, :] ** 2 * p * (1.0 - p)
    return CurveTable(
        theta=grid,
        item_ids=model.item_ids,
        icc=p,
        information=info,
        test_information=info.sum(axis=1),
        true_score=p.sum(axis=1),
    )


def max_information_theta(model: FittedModel, start: float = -4.0, stop: float = 4.0,
                          step: float = 0.01) -> float:
    """Grid argmax of the test information function."""
    table = curve_table(model, start, stop, step)
    return float(table.theta[int(np.argmax(table.test_information))])


# ---------------------------------------------------------------------------
# marginal likelihood and EM
# ---------------------------------------------------------------------------


def _indicator_arrays(resp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    passed = np.where(np.isnan(resp), 0.0, resp)
    failed = np.where(np.isnan(resp), 0.0, 1.0 - resp)
    return passed, failed


def _node_loglik(a, c, passed, failed, nodes):
    """Per-row, per-node log-likelihood of the observed responses."""
    logits = np.outer(a, nodes) + c[:, None]
    return passed @ log_expit(logits) + failed @ log_expit(-logits)


def marginal_log_likelihood(matrix: ResponseMatrix, model: FittedModel) -> float:
    _check_items(matrix, model)
    nodes, weights = model.quadrature.arrays()
    a = model.discriminations
    c = -a * model.difficulties
    passed, failed = _indicator_arrays(matrix.responses)
    lp = _node_loglik(a, c, passed, failed, nodes) + np.log(weights)
    return float(logsumexp(lp, axis=1).sum())


MAX_NEWTON_STEP = 5.0


class _EM:
    """One fit's worth of EM state; parameters are kept as stacked (a, c)."""

    def __init__(self, matrix: ResponseMatrix, kind: str, config: FitConfig):
        self.kind = kind
        self.cfg = config
        self.quad = Quadrature.gauss_hermite(config.n_nodes)
        self.nodes, w = self.quad.arrays()
        self.log_w = np.log(w)
        self.passed, self.failed = _indicator_arrays(matrix.responses)
        self.observed = self.passed + self.failed
        self.m = matrix.n_items

    def initial(self) -> np.ndarray:
        obs = self.observed.sum(axis=0)
        rate = self.passed.sum(axis=0) / obs
        rate = np.clip(rate, 1e-3, 1 - 1e-3)
        b = -norm.ppf(rate)
        a = np.ones(self.m)
        return self.project(np.concatenate([a, -a * b]))

    def project(self, p: np.ndarray) -> np.ndarray:
        p = p.copy()
        if self.kind == "1PL":
            p[: self.m] = 1.0
        else:
            A = self.cfg.max_abs_discrimination
            p[: self.m] = np.clip(p[: self.m], -A, A)
        C = self.cfg.max_abs_intercept
        p[self.m :] = np.clip(p[self.m :], -C, C)
        return p

    def e_step(self, p: np.ndarray):
        a, c = p[: self.m], p[self.m :]
        lp = _node_loglik(a, c, self.passed, self.failed, self.nodes) + self.log_w
        top = lp.max(axis=1)
        row_ll = top + np.log(np.exp(lp - top[:, None]).sum(axis=1))
        post = np.exp(lp - row_ll[:, None])
        r = self.passed.T @ post
        n = self.observed.T @ post
        return float(row_ll.sum()), (r, n)

    def _q(self, a: np.ndarray, c: np.ndarray, r: np.ndarray, n: np.ndarray) -> np.ndarray:
        logit = a[:, None] * self.nodes + c[:, None]
        return np.sum(r * log_expit(logit) + (n - r) * log_expit(-logit), axis=1)

    def m_step(self, p: np.ndarray, stats) -> np.ndarray:
        """Newton-Raphson per item on the expected complete-data log-likelihood.

        Items are updated together but independently; each item's step is
        halved until its own objective does not decrease.
        """
        r, n = stats
        m, x = self.m, self.nodes
        fixed_slope = self.kind == "1PL"
        A, C = self.cfg.max_abs_discrimination, self.cfg.max_abs_intercept
        a, c = p[:m].copy(), p[m:].copy()
        q = self._q(a, c, r, n)
        active = np.ones(m, dtype=bool)
        for _ in range(25):
            prob = expit(a[:, None] * x + c[:, None])
            resid = r - n * prob
            wgt = n * prob * (1.0 - prob)
            g_c = resid.sum(axis=1)
            h_cc = wgt.sum(axis=1)
            if fixed_slope:
                ok = h_cc > 0
                da = np.zeros(m)
                dc = np.divide(g_c, h_cc, out=np.zeros(m), where=ok)
            else:
                g_a = resid @ x
                h_aa = wgt @ (x * x)
                h_ac = wgt @ x
                det = h_aa * h_cc - h_ac**2
                ok = det > 0
                safe = np.where(ok, det, 1.0)
                da = np.where(ok, (h_cc * g_a - h_ac * g_c) / safe, 0.0)
                dc = np.where(ok, (h_aa * g_c - h_ac * g_a) / safe, 0.0)
                # projected Newton: a coordinate pinned at its bound and pushed
                # outwards is frozen, the other gets a one-dimensional step
                pin_a = (np.abs(a) >= A) & (np.sign(da) == np.sign(a))
                pin_c = (np.abs(c) >= C) & (np.sign(dc) == np.sign(c))
                da = np.where(pin_a, 0.0, np.where(pin_c, np.divide(g_a, h_aa, out=np.zeros(m), where=h_aa > 0), da))
                dc = np.where(pin_c, 0.0, np.where(pin_a, np.divide(g_c, h_cc, out=np.zeros(m), where=h_cc > 0), dc))
                ok = ok | ((pin_a | pin_c) & (h_aa > 0) & (h_cc > 0))
            # flat (saturated) items give huge Newton steps; cap their length
            shrink = np.minimum(1.0, MAX_NEWTON_STEP / np.maximum(np.abs(da), np.abs(dc)).clip(min=1e-300))
            da, dc = da * shrink, dc * shrink
            # Newton decrement: predicted gain of the full step
            gain = (0.0 if fixed_slope else g_a * da) + g_c * dc
            active &= ok & (gain > 1e-12)
            if not active.any():
                break
            step = np.ones(m)
            while True:
                na = a if fixed_slope else np.clip(a + step * da, -A, A)
                nc = np.clip(c + step * dc, -C, C)
                nq = self._q(na, nc, r, n)
                worse = active & (nq < q)
                if not worse.any():
                    break
                step[worse] *= 0.5
                stalled = worse & (step < 1e-10)
                active &= ~stalled
                if not (worse & ~stalled).any():
                    break
            moved = np.maximum(np.abs(na - a), np.abs(nc - c))
            a = np.where(active, na, a)
            c = np.where(active, nc, c)
            q = np.where(active, nq, q)
            active &= moved >= 1e-9
            if not active.any():
                break
        return np.concatenate([a, c])

    def difficulty(self, p: np.ndarray) -> np.ndarray:
        a, c = p[: self.m], p[self.m :]
        with np.errstate(divide="ignore", invalid="ignore"):
            return -c / a

    def change(self, old: np.ndarray, new: np.ndarray) -> float:
        da = np.abs(new[: self.m] - old[: self.m])
        db = np.abs(self.difficulty(new) - self.difficulty(old))
        return float(np.max(np.concatenate([da, db])))


def fit(matrix: ResponseMatrix, model_kind: str = "2PL", config: FitConfig | None = None) -> FittedModel:
    """Fit a 1PL or 2PL model by marginal maximum likelihood (EM + Gauss-Hermite).

    EM iterations are optionally accelerated by SQUAREM extrapolation; an
    extrapolated point is only kept when it does not lower the marginal
    log-likelihood, so the recorded log-likelihood history stays monotone.
    """
    config = config or FitConfig()
    kind = model_kind.upper()
    if kind not in MODEL_KINDS:
        raise InvalidArgumentError(f"model_kind must be one of {MODEL_KINDS}, got {model_kind!r}")
    matrix.check_fittable()

    em = _EM(matrix, kind, config)
    p0 = em.initial()
    ll0, s0 = em.e_step(p0)
    history = [ll0]
    iterations = 0
    change = math.inf
    converged = False

    while iterations < config.max_iter:
        p1 = em.m_step(p0, s0)
        ll1, s1 = em.e_step(p1)
        iterations += 1
        cand, ll_c, s_c = p1, ll1, s1
        if config.accelerate and iterations < config.max_iter:
            p2 = em.m_step(p1, s1)
            ll2, s2 = em.e_step(p2)
            iterations += 1
            history.append(ll1)
            cand, ll_c, s_c = p2, ll2, s2
            r = p1 - p0
            v = p2 - p1 - r
            nv = float(np.linalg.norm(v))
            if nv > 0 and iterations < config.max_iter:
                alpha = min(-float(np.linalg.norm(r)) / nv, -1.0)
                pe = em.project(p0 - 2.0 * alpha * r + alpha**2 * v)
                lle, se = em.e_step(pe)
                if math.isfinite(lle):
                    p3 = em.m_step(pe, se)
                    ll3, s3 = em.e_step(p3)
                    iterations += 1
                    if ll3 >= ll2:
                        cand, ll_c, s_c = p3, ll3, s3
        history.append(ll_c)
        change = em.change(p0, cand)
        p0, ll0, s0 = cand, ll_c, s_c
        if change < config.tol:
            converged = True
            break

    if not converged:
        warn_not_converged(iterations, change)

    # theta -> -theta with every slope negated leaves the marginal likelihood
    # unchanged; report the orientation in which slopes sum to >= 0 so that
    # higher theta means more checklist adherence.
    if kind == "2PL" and p0[: em.m].sum() < 0:
        p0 = p0.copy()
        p0[: em.m] = -p0[: em.m]
    a = p0[: em.m]
    b = em.difficulty(p0)
    if not (np.all(np.isfinite(b)) and np.all(a != 0)):
        raise NumericalError("fit produced a zero discrimination; difficulty is undefined")
    ids = matrix.item_ids
    at_bound = tuple(
        ids[i]
        for i in range(em.m)
        if (kind == "2PL" and abs(a[i]) >= config.max_abs_discrimination)
        or abs(p0[em.m + i]) >= config.max_abs_intercept
        or abs(b[i]) > config.max_abs_difficulty
    )
    items = tuple(
        ItemParameters(ids[i], 1.0 if kind == "1PL" else float(a[i]), float(b[i]))
        for i in range(em.m)
    )
    diag = FitDiagnostics(
        log_likelihood=ll0,
        iterations=iterations,
        converged=converged,
        max_change=float(change),
        at_bound=at_bound,
        loglik_history=tuple(history),
    )
    return FittedModel(kind, items, diag, em.quad, config)


# ---------------------------------------------------------------------------
# ability scoring
# ---------------------------------------------------------------------------


def _check_items(matrix: ResponseMatrix, model: FittedModel) -> None:
    if tuple(matrix.item_ids) != model.item_ids:
        raise SchemaError(
            f"response items {list(matrix.item_ids)} do not match model items {list(model.item_ids)}"
        )


def _pattern_key(row: np.ndarray) -> bytes:
    return np.where(np.isnan(row), -1, row).astype(np.int8).tobytes()


def _maximize_concave(grad_hess, value, lo: float, hi: float) -> float:
    theta = 0.0
    f = value(theta)
    for _ in range(200):
        g, h = grad_hess(theta)
        new = min(max(theta - g / h, lo), hi)
        fn = value(new)
        while fn < f and abs(new - theta) > 1e-14:
            new = theta + 0.5 * (new - theta)
            fn = value(new)
        if abs(new - theta) < 1e-12:
            theta = new
            break
        theta, f = new, fn
    return theta


def score_pattern(row: Sequence[float] | np.ndarray, model: FittedModel,
                  method: str = "EB") -> tuple[float, float | None]:
    """Ability and uncertainty for one response vector (NaN = missing)."""
    method = method.upper()
    if method not in SCORING_METHODS:
        raise InvalidArgumentError(f"method must be one of {SCORING_METHODS}, got {method!r}")
    row = np.asarray(row, dtype=float)
    if row.shape != (len(model.items),):
        raise SchemaError(f"response vector has length {row.size}, model has {len(model.items)} items")
    obs = ~np.isnan(row)
    if not obs.any():
        raise DataError("response vector has no observed entries")
    x = row[obs]
    a = model.discriminations[obs]
    b = model.difficulties[obs]

    if method == "EAP":
        nodes, weights = model.quadrature.arrays()
        logits = a[None, :] * (nodes[:, None] - b[None, :])
        lp = (x * log_expit(logits) + (1 - x) * log_expit(-logits)).sum(axis=1) + np.log(weights)
        post = np.exp(lp - logsumexp(lp))
        mean = float(np.dot(post, nodes))
        sd = float(np.sqrt(np.dot(post, (nodes - mean) ** 2)))
        return mean, sd

    prior = 1.0 if method == "EB" else 0.0

    def value(t: float) -> float:
        z = a * (t - b)
        return float(np.sum(x * log_expit(z) + (1 - x) * log_expit(-z))) - prior * 0.5 * t * t

    def grad_hess(t: float) -> tuple[float, float]:
        p = expit(a * (t - b))
        g = float(np.sum(a * (x - p))) - prior * t
        h = -float(np.sum(a * a * p * (1 - p))) - prior
        return g, min(h, -1e-12)

    if method == "EB":
        theta = _maximize_concave(grad_hess, value, -math.inf, math.inf)
        _, h = grad_hess(theta)
        return theta, 1.0 / math.sqrt(-h)
    bound = model.config.max_abs_difficulty
    return _maximize_concave(grad_hess, value, -bound, bound), None


def score_abilities(matrix: ResponseMatrix, model: FittedModel, method: str = "EB") -> list[AbilityEstimate]:
    """Score every row against a frozen model; identical patterns share one computation."""
    _check_items(matrix, model)
    method = method.upper()
    cache: dict[bytes, tuple[float, float | None]] = {}
    out = []
    for dep_id, row in matrix.rows():
        key = _pattern_key(row)
        if key not in cache:
            cache[key] = score_pattern(row, model, method)
        theta, sd = cache[key]
        out.append(AbilityEstimate(dep_id, theta, method, sd))
    return out
