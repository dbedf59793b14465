"""On-disk formats: response CSV, model / report / mesh / outcome / history JSON.

Floats are written with Python's shortest round-trip repr, so a saved model
loads back bit-for-bit. Loaders never let a raw parsing exception escape:
anything that is not a valid document becomes a :class:`SchemaError` or
:class:`DataError` naming where the problem is.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any, Union

import numpy as np

from .budgets import (
    BudgetResult,
    MeshWindow,
    Product,
    ServiceWindowStats,
    SLORecord,
    Window,
    latest_ads_before,
)
from .effectiveness import DeploymentIndexResult, VersionOutcome, achieved_slo
from .errors import (
    DataError,
    DeployScoreError,
    IncompatibleVersionError,
    InsufficientDataError,
    SchemaError,
)
from .irt import (
    CurveTable,
    FitConfig,
    FitDiagnostics,
    FittedModel,
    ItemParameters,
    Quadrature,
    ResponseMatrix,
)
from .scoring import DeploymentScoreReport, ItemOutcome, TrendReport

Source = Union[str, Path, IO[str], IO[bytes], bytes]

FORMAT_VERSION = 1
MODEL_FORMAT = "deployscore/model"
REPORT_FORMAT = "deployscore/score-report"
MESH_FORMAT = "deployscore/mesh"
OUTCOMES_FORMAT = "deployscore/outcomes"
HISTORY_FORMAT = "deployscore/history"

_PARSE_ERRORS = (ValueError, TypeError, KeyError, AttributeError, OverflowError, RecursionError)


# ---------------------------------------------------------------------------
# io helpers
# ---------------------------------------------------------------------------


def _read_text(src: Source) -> str:
    if isinstance(src, (str, Path)):
        try:
            raw = Path(src).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read {src}: {exc.strerror or exc}") from exc
    elif isinstance(src, bytes):
        raw = src
    else:
        raw = src.read()
    if isinstance(raw, str):
        return raw
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DataError(f"input is not valid UTF-8 (byte offset {exc.start})") from exc


def _write_text(dest: str | Path | IO[str], text: str) -> None:
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


def dumps(doc: Any) -> str:
    try:
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"
    except ValueError as exc:
        raise DataError(f"cannot serialise non-finite number: {exc}") from exc


def _load_json(src: Source) -> Any:
    text = _read_text(src)

    def no_constants(name: str) -> Any:
        raise SchemaError(f"non-finite number {name} is not allowed")

    try:
        return json.loads(text, parse_constant=no_constants)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", row=exc.lineno, column=exc.colno) from exc
    except RecursionError as exc:
        raise SchemaError("JSON nesting too deep") from exc


class _Obj:
    """Dict accessor that reports the JSON path of whatever is wrong."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise SchemaError(f"{path or 'document'} must be a JSON object")
        self.data = data
        self.path = path

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def raw(self, key: str) -> Any:
        if key not in self.data:
            raise SchemaError(f"missing field {self._p(key)!r}")
        return self.data[key]

    def text(self, key: str) -> str:
        v = self.raw(key)
        if not isinstance(v, str):
            raise SchemaError(f"field {self._p(key)!r} must be a string")
        return v

    def number(self, key: str) -> float:
        v = self.raw(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"field {self._p(key)!r} must be a finite number")
        return float(v)

    def integer(self, key: str) -> int:
        v = self.raw(key)
        if isinstance(v, bool) or not isinstance(v, int):
            raise SchemaError(f"field {self._p(key)!r} must be an integer")
        return v

    def flag(self, key: str) -> bool:
        v = self.raw(key)
        if not isinstance(v, bool):
            raise SchemaError(f"field {self._p(key)!r} must be true or false")
        return v

    def array(self, key: str) -> list:
        v = self.raw(key)
        if not isinstance(v, list):
            raise SchemaError(f"field {self._p(key)!r} must be an array")
        return v

    def obj(self, key: str) -> _Obj:
        return _Obj(self.raw(key), self._p(key))

    def objs(self, key: str) -> list[_Obj]:
        return [_Obj(v, f"{self._p(key)}[{i}]") for i, v in enumerate(self.array(key))]

    def nums(self, key: str) -> list[float]:
        out = []
        for i, v in enumerate(self.array(key)):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise SchemaError(f"{self._p(key)}[{i}] must be a finite number")
            out.append(float(v))
        return out

    def strs(self, key: str) -> list[str]:
        out = self.array(key)
        for i, v in enumerate(out):
            if not isinstance(v, str):
                raise SchemaError(f"{self._p(key)}[{i}] must be a string")
        return out

    def time(self, key: str) -> datetime:
        return parse_time(self.text(key), self._p(key))


def parse_time(text: str, where: str = "timestamp") -> datetime:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(s)
    except ValueError as exc:
        raise SchemaError(f"{where} is not an ISO-8601 timestamp: {text!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def format_time(ts: datetime) -> str:
    if ts.tzinfo is not None and ts.utcoffset() == timezone.utc.utcoffset(None):
        return ts.replace(tzinfo=None).isoformat() + "Z"
    return ts.isoformat()


def _check_header(doc: _Obj, expected: str, required: bool) -> None:
    if not doc.has("format") and not doc.has("version"):
        if required:
            raise SchemaError(f"missing format tag (expected {expected!r})")
        return
    fmt = doc.text("format")
    if fmt != expected:
        raise IncompatibleVersionError(f"document format {fmt!r} is not {expected!r}")
    version = doc.raw("version")
    if version != FORMAT_VERSION or isinstance(version, bool):
        raise IncompatibleVersionError(
            f"unsupported {expected} version {version!r} (this build reads version {FORMAT_VERSION})"
        )


def _guard(loader):
    def wrapped(src: Source):
        try:
            return loader(src)
        except DeployScoreError:
            raise
        except _PARSE_ERRORS as exc:  # pragma: no cover - defensive
            raise SchemaError(f"malformed document: {exc}") from exc

    wrapped.__name__ = loader.__name__
    wrapped.__doc__ = loader.__doc__
    return wrapped


# ---------------------------------------------------------------------------
# response CSV
# ---------------------------------------------------------------------------


@_guard
def load_responses(src: Source) -> ResponseMatrix:
    """Read a ``deployment_id,<item>,...`` CSV. Empty cells are missing responses."""
    text = _read_text(src)
    try:
        rows = list(csv.reader(io.StringIO(text, newline="")))
    except csv.Error as exc:
        raise DataError(f"malformed CSV: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise InsufficientDataError("response file is empty")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "deployment_id":
        raise SchemaError("first header cell must be 'deployment_id'", row=1, column=1)
    items = header[1:]
    if not items:
        raise SchemaError("header lists no items", row=1)
    for j, item in enumerate(items):
        if not item:
            raise SchemaError("empty item identifier in header", row=1, column=j + 2)
        if items.index(item) != j:
            raise SchemaError(f"duplicate item identifier {item!r}", row=1, column=item)
    body = rows[1:]
    if not body:
        raise InsufficientDataError("response file has no deployment rows")
    seen: dict[str, int] = {}
    ids, values = [], []
    for n, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} cells, found {len(row)}", row=n)
        dep = row[0].strip()
        if not dep:
            raise DataError("empty deployment_id", row=n, column="deployment_id")
        if dep in seen:
            raise DataError(f"duplicate deployment_id {dep!r} (first at row {seen[dep]})", row=n,
                            column="deployment_id")
        seen[dep] = n
        vec = []
        for item, cell in zip(items, row[1:]):
            cell = cell.strip()
            if cell == "":
                vec.append(math.nan)
            elif cell in ("0", "1"):
                vec.append(float(cell))
            else:
                raise DataError(f"cell must be 0, 1 or empty, got {cell!r}", row=n, column=item)
        if all(math.isnan(v) for v in vec):
            raise DataError("row has no observed responses", row=n)
        ids.append(dep)
        values.append(vec)
    return ResponseMatrix(tuple(items), tuple(ids), np.array(values, dtype=float))


def save_responses(matrix: ResponseMatrix, dest: str | Path | IO[str]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["deployment_id", *matrix.item_ids])
    for dep, row in matrix.rows():
        w.writerow([dep, *("" if math.isnan(v) else str(int(v)) for v in row)])
    _write_text(dest, buf.getvalue())


# ---------------------------------------------------------------------------
# model JSON
# ---------------------------------------------------------------------------


def model_to_dict(model: FittedModel) -> dict:
    d, cfg = model.diagnostics, model.config
    return {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "model_kind": model.model_kind,
        "items": [{"item_id": i.item_id, "a": i.discrimination, "b": i.difficulty} for i in model.items],
        "fit": {
            "quadrature_nodes": model.quadrature.n_nodes,
            "tolerance": cfg.tol,
            "max_iter": cfg.max_iter,
            "max_abs_discrimination": cfg.max_abs_discrimination,
            "max_abs_difficulty": cfg.max_abs_difficulty,
            "accelerate": cfg.accelerate,
            "iterations": d.iterations,
            "converged": d.converged,
            "log_likelihood": d.log_likelihood,
            "max_change": d.max_change,
            "at_bound": list(d.at_bound),
            "loglik_history": list(d.loglik_history),
        },
        "quadrature": {"nodes": list(model.quadrature.nodes), "weights": list(model.quadrature.weights)},
    }


def model_from_dict(data: Any) -> FittedModel:
    doc = _Obj(data, "")
    _check_header(doc, MODEL_FORMAT, required=True)
    items = []
    for it in doc.objs("items"):
        items.append(ItemParameters(it.text("item_id"), it.number("a"), it.number("b")))
    ids = [i.item_id for i in items]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate item_id in model")
    fit = doc.obj("fit")
    quad = doc.obj("quadrature")
    nodes, weights = quad.nums("nodes"), quad.nums("weights")
    if len(nodes) != len(weights) or len(nodes) != fit.integer("quadrature_nodes"):
        raise SchemaError("quadrature table does not match fit.quadrature_nodes")
    try:
        cfg = FitConfig(
            n_nodes=fit.integer("quadrature_nodes"),
            tol=fit.number("tolerance"),
            max_iter=fit.integer("max_iter"),
            max_abs_discrimination=fit.number("max_abs_discrimination"),
            max_abs_difficulty=fit.number("max_abs_difficulty"),
            accelerate=fit.flag("accelerate"),
        )
    except DeployScoreError as exc:
        raise SchemaError(f"invalid fit settings: {exc}") from exc
    diag = FitDiagnostics(
        log_likelihood=fit.number("log_likelihood"),
        iterations=fit.integer("iterations"),
        converged=fit.flag("converged"),
        max_change=fit.number("max_change"),
        at_bound=tuple(fit.strs("at_bound")),
        loglik_history=tuple(fit.nums("loglik_history")),
    )
    return FittedModel(doc.text("model_kind"), tuple(items), diag, Quadrature(tuple(nodes), tuple(weights)), cfg)


def save_model(model: FittedModel, dest: str | Path | IO[str]) -> None:
    _write_text(dest, dumps(model_to_dict(model)))


@_guard
def load_model(src: Source) -> FittedModel:
    return model_from_dict(_load_json(src))


# ---------------------------------------------------------------------------
# score reports
# ---------------------------------------------------------------------------


def report_to_dict(rep: DeploymentScoreReport, gaps: bool = True) -> dict:
    out = {
        "deployment_id": rep.deployment_id,
        "theta": rep.theta,
        "posterior_sd": rep.posterior_sd,
        "total_raw_score": rep.total_raw_score,
        "ads": rep.ads,
    }
    if gaps:
        out["per_item"] = [
            {
                "item_id": o.item_id,
                "response": o.response,
                "success_probability": o.success_probability,
                "gap": o.gap,
            }
            for o in rep.per_item
        ]
        out["improvement_areas"] = [o.item_id for o in rep.improvement_areas]
    return out


def reports_to_dict(reports: list[DeploymentScoreReport], method: str, gaps: bool = True) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": FORMAT_VERSION,
        "method": method,
        "reports": [report_to_dict(r, gaps) for r in reports],
    }


def reports_from_dict(data: Any) -> list[DeploymentScoreReport]:
    doc = _Obj(data, "")
    _check_header(doc, REPORT_FORMAT, required=True)
    method = doc.text("method")
    out = []
    for r in doc.objs("reports"):
        sd = r.raw("posterior_sd")
        if sd is not None:
            sd = r.number("posterior_sd")
        per_item = []
        if r.has("per_item"):
            for o in r.objs("per_item"):
                resp = o.raw("response")
                if resp not in (0, 1, None) or isinstance(resp, bool):
                    raise SchemaError(f"{o.path}.response must be 0, 1 or null")
                gap = o.number("gap") if o.has("gap") else None
                per_item.append(ItemOutcome(o.text("item_id"), resp, o.number("success_probability"), gap))
        out.append(
            DeploymentScoreReport(
                deployment_id=r.text("deployment_id"),
                theta=r.number("theta"),
                ads=r.number("ads"),
                total_raw_score=r.integer("total_raw_score"),
                per_item=tuple(per_item),
                method=method,
                posterior_sd=sd,
            )
        )
    return out


def save_reports(reports: list[DeploymentScoreReport], dest: str | Path | IO[str], method: str = "EB",
                 gaps: bool = True) -> None:
    _write_text(dest, dumps(reports_to_dict(reports, method, gaps)))


@_guard
def load_reports(src: Source) -> list[DeploymentScoreReport]:
    return reports_from_dict(_load_json(src))


def reports_to_csv(reports: list[DeploymentScoreReport], item_ids: Iterable[str], gaps: bool = False) -> str:
    """Table-shaped CSV: responses, ability, raw total, ADS and optionally per-item gaps."""
    item_ids = list(item_ids)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["deployment_id", *item_ids, "theta", "total_score", "ads"]
    if gaps:
        header += [f"gap:{i}" for i in item_ids]
    w.writerow(header)
    for rep in reports:
        by_id = {o.item_id: o for o in rep.per_item}
        resp = ["" if by_id[i].response is None else by_id[i].response for i in item_ids]
        row = [rep.deployment_id, *resp, repr(rep.theta), rep.total_raw_score, repr(rep.ads)]
        if gaps:
            row += [repr(by_id[i].gap) for i in item_ids]
        w.writerow(row)
    return buf.getvalue()


def trend_to_dict(rep: TrendReport) -> dict:
    return {
        "application_id": rep.application_id,
        "entries": [
            {
                "timestamp": format_time(e.timestamp) if isinstance(e.timestamp, datetime) else e.timestamp,
                "version": e.version,
                "theta": e.theta,
                "ads": e.ads,
            }
            for e in rep.entries
        ],
        "directions": list(rep.directions),
    }


def curves_to_csv(table: CurveTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.as_array():
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def curves_to_dict(table: CurveTable) -> dict:
    return {"columns": table.columns, "rows": [[float(v) for v in r] for r in table.as_array()]}


# ---------------------------------------------------------------------------
# mesh JSON
# ---------------------------------------------------------------------------


def _window(obj: _Obj) -> Window:
    start, end = obj.time("start"), obj.time("end")
    if not start < end:
        raise DataError(f"{obj.path}: window start must precede end")
    return Window(start, end)


def mesh_from_dict(data: Any) -> MeshWindow:
    doc = _Obj(data, "")
    _check_header(doc, MESH_FORMAT, required=False)
    window = _window(doc.obj("window"))
    services = []
    for s in doc.objs("services"):
        sid = s.text("service_id")
        if s.has("latest_ads"):
            ads_value = s.number("latest_ads")
        elif s.has("deployments"):
            deps = [(d.time("timestamp"), d.number("ads")) for d in s.objs("deployments")]
            try:
                ads_value = latest_ads_before(deps, window.end)
            except SchemaError:
                raise
            except DataError as exc:
                raise DataError(f"{s.path}: {exc}") from exc
        else:
            raise SchemaError(f"{s.path} needs latest_ads or deployments")
        own_window = _window(s.obj("window")) if s.has("window") else None
        try:
            services.append(
                ServiceWindowStats(sid, s.number("unavailability"), ads_value, s.integer("total_items"), own_window)
            )
        except SchemaError:
            raise
        except DataError as exc:
            raise DataError(f"{s.path}: {exc}") from exc
    known = {s.service_id for s in services}
    products = []
    for p in doc.objs("products"):
        pid = p.text("product_id")
        members = p.strs("services")
        if not members:
            raise SchemaError(f"{p.path}.services is empty")
        if len(set(members)) != len(members):
            raise DataError(f"{p.path}: duplicate member service")
        for sid in members:
            if sid not in known:
                raise DataError(f"{p.path}: product {pid!r} references unknown service {sid!r}")
        kind = p.text("slo_kind") if p.has("slo_kind") else "availability"
        try:
            slo = SLORecord(pid, p.number("slo_target"), kind, window)
        except SchemaError:
            raise
        except DataError as exc:
            raise DataError(f"{p.path}: {exc}") from exc
        products.append(Product(pid, slo, tuple(members)))
    return MeshWindow(window, tuple(products), tuple(services))


def mesh_to_dict(mesh: MeshWindow) -> dict:
    def win(w: Window) -> dict:
        return {"start": format_time(w.start), "end": format_time(w.end)}

    services = []
    for s in mesh.services:
        entry = {
            "service_id": s.service_id,
            "unavailability": s.unavailability,
            "latest_ads": s.latest_ads,
            "total_items": s.total_items,
        }
        if s.window is not None:
            entry["window"] = win(s.window)
        services.append(entry)
    return {
        "format": MESH_FORMAT,
        "version": FORMAT_VERSION,
        "window": win(mesh.window),
        "products": [
            {
                "product_id": p.product_id,
                "slo_target": p.slo.target,
                "slo_kind": p.slo.slo_kind,
                "services": list(p.service_ids),
            }
            for p in mesh.products
        ],
        "services": services,
    }


@_guard
def load_mesh(src: Source) -> MeshWindow:
    return mesh_from_dict(_load_json(src))


def save_mesh(mesh: MeshWindow, dest: str | Path | IO[str]) -> None:
    _write_text(dest, dumps(mesh_to_dict(mesh)))


def budget_to_dict(res: BudgetResult) -> dict:
    return {
        "service_id": res.service_id,
        "product_id": res.product_id,
        "plain_budget": res.plain_budget,
        "soft_budget": res.soft_budget,
        "soft_budget_clamped": res.clamped_soft_budget,
        "penalty_terms": [
            {
                "service_id": t.service_id,
                "risk_factor": t.risk_factor,
                "unavailability": t.unavailability,
                "contribution": t.contribution,
            }
            for t in res.penalty_terms
        ],
    }


# ---------------------------------------------------------------------------
# version outcomes and deployment histories
# ---------------------------------------------------------------------------


def outcomes_from_dict(data: Any) -> list[VersionOutcome]:
    doc = _Obj(data, "")
    _check_header(doc, OUTCOMES_FORMAT, required=False)
    out = []
    for o in doc.objs("outcomes"):
        app, version, ads_value = o.text("application_id"), o.text("version"), o.number("ads")
        try:
            if o.has("sli_series"):
                win = _window(o.obj("window"))
                series = []
                for seg in o.objs("sli_series"):
                    series.append((seg.time("start"), seg.time("end"), seg.number("value")))
                slo = achieved_slo(series, (win.start, win.end))
                duration = (win.end - win.start).total_seconds()
            else:
                slo = o.number("achieved_slo")
                duration = o.number("live_duration_seconds")
            out.append(VersionOutcome(app, version, ads_value, slo, duration))
        except SchemaError:
            raise
        except DataError as exc:
            raise DataError(f"{o.path}: {exc}") from exc
    if not out:
        raise InsufficientDataError("outcomes file lists no versions")
    return out


def outcomes_to_dict(outcomes: list[VersionOutcome]) -> dict:
    return {
        "format": OUTCOMES_FORMAT,
        "version": FORMAT_VERSION,
        "outcomes": [
            {
                "application_id": o.application_id,
                "version": o.version,
                "ads": o.ads,
                "achieved_slo": o.achieved_slo,
                "live_duration_seconds": o.live_duration,
            }
            for o in outcomes
        ],
    }


@_guard
def load_outcomes(src: Source) -> list[VersionOutcome]:
    return outcomes_from_dict(_load_json(src))


def index_to_dict(res: DeploymentIndexResult) -> dict:
    return {
        "application_id": res.application_id,
        "deployment_index": res.index,
        "n_versions": res.n_versions,
        "method": res.method,
    }


def history_from_dict(data: Any) -> tuple[str, list[tuple[datetime, str, dict[str, int | None]]]]:
    doc = _Obj(data, "")
    _check_header(doc, HISTORY_FORMAT, required=False)
    app = doc.text("application_id") if doc.has("application_id") else ""
    entries = []
    for h in doc.objs("history"):
        resp = h.obj("responses")
        vec: dict[str, int | None] = {}
        for item, v in resp.data.items():
            if v not in (0, 1, None) or isinstance(v, bool):
                raise DataError(f"{resp.path}.{item} must be 0, 1 or null")
            vec[item] = v
        entries.append((h.time("timestamp"), h.text("version"), vec))
    if not entries:
        raise InsufficientDataError("history lists no deployments")
    return app, entries


@_guard
def load_history(src: Source) -> tuple[str, list[tuple[datetime, str, dict[str, int | None]]]]:
    return history_from_dict(_load_json(src))


__all__ = [
    "load_responses",
    "save_responses",
    "load_model",
    "save_model",
    "model_to_dict",
    "model_from_dict",
    "load_reports",
    "save_reports",
    "reports_to_dict",
    "reports_from_dict",
    "reports_to_csv",
    "load_mesh",
    "save_mesh",
    "mesh_to_dict",
    "mesh_from_dict",
    "load_outcomes",
    "outcomes_to_dict",
    "load_history",
    "budget_to_dict",
    "index_to_dict",
    "trend_to_dict",
    "curves_to_csv",
    "curves_to_dict",
    "dumps",
    "parse_time",
]
