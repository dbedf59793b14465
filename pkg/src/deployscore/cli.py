"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
Errors are reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from . import store
from .budgets import budget_minutes, error_budget, min_soft_budget, soft_error_budget
from .effectiveness import deployment_indices
from .errors import ConvergenceWarning, DataError, DeployScoreError
from .irt import FitConfig, curve_table, fit, max_information_theta
from .scoring import score_report, trend

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage", "message": message}) + "\n")
        raise SystemExit(EXIT_USAGE)


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _csv(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args: argparse.Namespace) -> int:
    matrix = store.load_responses(args.responses)
    config = FitConfig(n_nodes=args.nodes, tol=args.tol, max_iter=args.max_iter,
                       accelerate=not args.no_accelerate)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = fit(matrix, args.model.upper(), config)
    store.save_model(model, args.output)
    d = model.diagnostics
    if not d.converged:
        sys.stderr.write(
            f"warning: EM stopped after {d.iterations} iterations without converging "
            f"(max change {d.max_change:.3g})\n"
        )
    negative = [i.item_id for i in model.items if i.discrimination < 0]
    if args.format == "csv":
        text = _csv(
            ["item_id", "discrimination", "difficulty", "negative_discrimination"],
            [[i.item_id, i.discrimination, i.difficulty, i.discrimination < 0] for i in model.items],
        )
    else:
        text = store.dumps(
            {
                "model_kind": model.model_kind,
                "model_path": str(args.output),
                "rows": matrix.n_rows,
                "items": [
                    {"item_id": i.item_id, "a": i.discrimination, "b": i.difficulty}
                    for i in model.items
                ],
                "converged": d.converged,
                "iterations": d.iterations,
                "log_likelihood": d.log_likelihood,
                "at_bound": list(d.at_bound),
                "negative_discrimination": negative,
                "max_information_theta": max_information_theta(model),
            }
        )
    sys.stdout.write(text)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    matrix = store.load_responses(args.responses)
    model = store.load_model(args.model)
    reports = score_report(matrix, model, args.method.upper())
    if args.format == "csv":
        text = store.reports_to_csv(reports, model.item_ids, gaps=args.gaps)
    else:
        text = store.dumps(store.reports_to_dict(reports, args.method.upper(), gaps=args.gaps))
    _emit(text, args.output)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    matrix = store.load_responses(args.responses)
    model = store.load_model(args.model)
    reports = score_report(matrix, model, args.method.upper())
    if args.format == "csv":
        _emit(store.reports_to_csv(reports, model.item_ids, gaps=True), args.output)
        return EXIT_OK
    n = len(reports)
    doc = store.reports_to_dict(reports, args.method.upper(), gaps=True)
    doc["summary"] = {
        "deployments": n,
        "mean_ads": sum(r.ads for r in reports) / n,
        "items": [
            {
                "item_id": item_id,
                "pass_rate": sum(r.per_item[k].response == 1 for r in reports) / n,
                "mean_gap": sum(r.per_item[k].gap for r in reports) / n,
                "flagged_for_improvement": sum(
                    bool(r.improvement_areas) and r.improvement_areas[0].item_id == item_id
                    for r in reports
                ),
            }
            for k, item_id in enumerate(model.item_ids)
        ],
    }
    _emit(store.dumps(doc), args.output)
    return EXIT_OK


def cmd_trend(args: argparse.Namespace) -> int:
    app, history = store.load_history(args.history)
    model = store.load_model(args.model)
    rep = trend(history, model, args.method.upper(), application_id=app)
    doc = store.trend_to_dict(rep)
    if args.format == "csv":
        dirs = [""] + doc["directions"]
        text = _csv(
            ["application_id", "timestamp", "version", "theta", "ads", "direction"],
            [[app, e["timestamp"], e["version"], e["theta"], e["ads"], d] for e, d in zip(doc["entries"], dirs)],
        )
    else:
        text = store.dumps(doc)
    _emit(text, args.output)
    return EXIT_OK


def cmd_curves(args: argparse.Namespace) -> int:
    model = store.load_model(args.model)
    table = curve_table(model, args.min, args.max, args.step)
    text = store.curves_to_csv(table) if args.format == "csv" else store.dumps(store.curves_to_dict(table))
    _emit(text, args.output)
    return EXIT_OK


def cmd_budget(args: argparse.Namespace) -> int:
    budget = error_budget(args.slo)
    doc = {
        "slo": args.slo,
        "error_budget": budget,
        "window_days": args.window_days,
        "allowed_downtime_minutes": budget_minutes(budget, args.window_days),
    }
    text = _csv(list(doc), [list(doc.values())]) if args.format == "csv" else store.dumps(doc)
    _emit(text, args.output)
    return EXIT_OK


def cmd_soft_budget(args: argparse.Namespace) -> int:
    mesh = store.load_mesh(args.mesh)
    if args.service is not None:
        if args.service not in mesh.service_ids:
            raise DataError(f"unknown service {args.service!r}")
        targets = [args.service]
    else:
        targets = [s for s in mesh.service_ids if mesh.products_of(s)]
    services = []
    for sid in targets:
        per_product = [soft_error_budget(sid, p.product_id, mesh) for p in mesh.products_of(sid)]
        best = min_soft_budget(sid, mesh)
        services.append(
            {
                "service_id": sid,
                "per_product": [store.budget_to_dict(r) for r in per_product],
                "recommended": {
                    "product_id": best.product_id,
                    "soft_budget": best.soft_budget,
                    "soft_budget_clamped": best.clamped_soft_budget,
                    "allowed_downtime_minutes": budget_minutes(best.clamped_soft_budget, mesh.window.days),
                },
            }
        )
    if args.format == "csv":
        rows = []
        for s in services:
            rec = s["recommended"]["product_id"]
            for r in s["per_product"]:
                rows.append([s["service_id"], r["product_id"], r["plain_budget"], r["soft_budget"],
                             r["soft_budget_clamped"], r["product_id"] == rec])
        text = _csv(["service_id", "product_id", "plain_budget", "soft_budget", "soft_budget_clamped",
                     "recommended"], rows)
    else:
        text = store.dumps({"window_days": mesh.window.days, "services": services})
    _emit(text, args.output)
    return EXIT_OK


def cmd_deploy_index(args: argparse.Namespace) -> int:
    outcomes = store.load_outcomes(args.outcomes)
    results = deployment_indices(outcomes, args.method)
    docs = [store.index_to_dict(r) for r in results]
    if args.format == "csv":
        text = _csv(["application_id", "deployment_index", "n_versions", "method"],
                    [list(d.values()) for d in docs])
    else:
        text = store.dumps({"indices": docs})
    _emit(text, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deployscore", description="Deployment scoring and error budgets from checklist data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser, default_format: str = "json") -> None:
        p.add_argument("--format", choices=("json", "csv"), default=default_format)
        p.add_argument("-o", "--output", help="write to this file instead of stdout")

    def method(p: argparse.ArgumentParser) -> None:
        p.add_argument("--method", type=str.lower, choices=("eb", "eap", "ml"), default="eb")

    p = sub.add_parser("fit", help="fit an IRT model to a response CSV")
    p.add_argument("responses")
    p.add_argument("-o", "--output", required=True, help="model JSON to write")
    p.add_argument("--model", type=str.lower, choices=("1pl", "2pl"), default="2pl")
    p.add_argument("--nodes", type=int, default=21)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--no-accelerate", action="store_true", help="plain EM without SQUAREM steps")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="ability and ADS per deployment")
    p.add_argument("responses")
    p.add_argument("model")
    method(p)
    p.add_argument("--gaps", action="store_true", help="include per-item gap columns")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="full per-deployment report with improvement areas")
    p.add_argument("responses")
    p.add_argument("model")
    method(p)
    common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("trend", help="ADS trend across an application's versions")
    p.add_argument("history")
    p.add_argument("model")
    method(p)
    common(p)
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("curves", help="item/test curves on a theta grid")
    p.add_argument("model")
    p.add_argument("--min", type=float, default=-4.0)
    p.add_argument("--max", type=float, default=4.0)
    p.add_argument("--step", type=float, default=0.1)
    common(p, default_format="csv")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("budget", help="plain error budget for an SLO")
    p.add_argument("--slo", type=float, required=True)
    p.add_argument("--window-days", type=float, default=30.0)
    common(p)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("soft-budget", help="soft error budgets over a service mesh")
    p.add_argument("mesh")
    p.add_argument("--service")
    common(p)
    p.set_defaults(func=cmd_soft_budget)

    p = sub.add_parser("deploy-index", help="deployment index per application")
    p.add_argument("outcomes")
    p.add_argument("--method", type=str.lower, choices=("pearson", "spearman"), default="pearson")
    common(p)
    p.set_defaults(func=cmd_deploy_index)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DeployScoreError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc)}) + "\n")
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
