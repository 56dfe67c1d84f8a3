"""Command-line interface.

Report and decision records go to ``--output`` (or stdout) as JSON lines,
each tagged with ``record_type`` and the run's ``config_fingerprint``.  A short
human-readable summary goes to stderr.  Errors exit with the status of their
category: 2 config, 3 data, 4 validation, 5 numerical.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from datetime import timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .errors import ConfigError, DataError, SizeFlagsError
from .evaluation import DEFAULT_NEIGHBORS, Treatment, cold_start_metrics, did_effect
from .flagging import THETA_MACHINE_EPSILON, Variant
from .io import (
    RunConfig,
    dumps,
    file_digest,
    format_ts,
    ingest_cues,
    ingest_feedback,
    ingest_snapshots,
    ingest_truth,
    parse_ts,
    read_jsonl,
    stamp,
    write_cues,
    write_feedback,
    write_jsonl,
    write_snapshots,
    write_truth,
)
from .pipeline import build_priors, category_stats, prior_bounds, run_variant
from .priors import solve_prior_bounds
from .records import DIRECTIONS, Direction
from .simulate import DiDSimConfig, SimConfig, generate, generate_did_panel, score_against_truth
from .thresholds import DEFAULT_EPSILONS, DEFAULT_GRID, optimize_threshold

log = logging.getLogger("sizeflags")


# --------------------------------------------------------------- helpers


def _theta_value(text: str) -> float:
    if text in ("machine_epsilon", "machine-epsilon"):
        return THETA_MACHINE_EPSILON
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'machine_epsilon', got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("threshold must be positive")
    return value


def _emit(records: Sequence[dict], output: Optional[str]) -> None:
    if output:
        write_jsonl(output, records)
    else:
        for rec in records:
            sys.stdout.write(dumps(rec) + "\n")
        sys.stdout.flush()


def _say(text: str) -> None:
    print(text, file=sys.stderr)


def _inputs(**paths) -> tuple:
    """Input files as ``(name, sha256)`` pairs for the fingerprint."""
    return tuple((name, file_digest(p)) for name, p in sorted(paths.items()) if p is not None)


def _pi_interval(args):
    if args.pi_low is None and args.pi_high is None:
        return None
    if args.pi_low is None or args.pi_high is None:
        raise ConfigError("--pi-low and --pi-high must be given together")
    return (args.pi_low, args.pi_high)


def _window(args):
    if args.window_start is None and args.window_end is None:
        return None
    if args.window_start is None or args.window_end is None:
        raise ConfigError("--window-start and --window-end must be given together")
    try:
        return parse_ts(args.window_start), parse_ts(args.window_end)
    except ValueError as exc:
        raise ConfigError(f"bad window timestamp: {exc}") from None


def _load_series(args) -> dict:
    return ingest_snapshots(args.snapshots, args.category or None, _window(args))


def _window_strings(args):
    w = _window(args)
    return None if w is None else (format_ts(w[0]), format_ts(w[1]))


def _optional(loader, path):
    return loader(path) if path else None


# --------------------------------------------------------------- commands


def cmd_stats(args) -> List[dict]:
    cfg = RunConfig(
        command="stats",
        categories=tuple(args.category or ()),
        window=_window_strings(args),
        min_orders=args.min_orders,
        inputs=_inputs(snapshots=args.snapshots),
    ).validate()
    records = []
    for cat, series in _load_series(args).items():
        for d, s in category_stats(series, args.min_orders).items():
            records.append(
                {
                    "category_id": cat,
                    "direction": d.value,
                    "pi": s.pi,
                    "sigma": s.sigma,
                    "pi_interval": list(s.pi_interval),
                    "article_count": s.article_count,
                    "window": [format_ts(t) for t in series.window],
                }
            )
            _say(f"{cat} {d.value}: pi={s.pi:.6g} sigma={s.sigma:.6g} n={s.article_count}")
    return stamp(records, "category_stats", cfg.fingerprint())


def cmd_solve_bounds(args) -> List[dict]:
    interval = _pi_interval(args)
    if interval is None and not args.snapshots:
        raise ConfigError("give --pi-low/--pi-high or --snapshots")
    cfg = RunConfig(
        command="solve-bounds",
        pi_interval=interval,
        bounds_theta=args.theta,
        categories=tuple(args.category or ()),
        min_orders=args.min_orders,
        inputs=_inputs(snapshots=args.snapshots if interval is None else None),
    ).validate()
    records = []
    if interval is not None:
        b = solve_prior_bounds(interval, args.theta)
        records.append(b.to_dict())
        _say(f"alpha_max={b.alpha_max} beta_max={b.beta_max}")
    else:
        for cat, series in _load_series(args).items():
            for d, b in prior_bounds(category_stats(series, args.min_orders), args.theta).items():
                records.append(dict(b.to_dict(), category_id=cat, direction=d.value))
                _say(f"{cat} {d.value}: alpha_max={b.alpha_max} beta_max={b.beta_max}")
    return stamp(records, "prior_bounds", cfg.fingerprint())


def cmd_optimize(args) -> List[dict]:
    cfg = RunConfig(
        command="optimize-threshold",
        variant=args.variant,
        theta_source="optimized",
        theta=args.theta_max,
        epsilons=tuple(args.epsilons),
        grid=args.grid,
        pi_interval=_pi_interval(args),
        categories=tuple(args.category or ()),
        window=_window_strings(args),
        min_orders=args.min_orders,
        concentration=args.concentration,
        inputs=_inputs(snapshots=args.snapshots, feedback=args.feedback, cues=args.cues),
    ).validate()
    variant = Variant(args.variant)
    feedback = _optional(ingest_feedback, args.feedback)
    cues = _optional(ingest_cues, args.cues)
    records = []
    for cat, series in _load_series(args).items():
        stats = category_stats(series, args.min_orders)
        bounds = prior_bounds(stats, args.theta_max, cfg.pi_interval)
        priors = build_priors(
            variant, series.article_ids, stats, bounds, feedback, cues, args.concentration
        )
        for d in DIRECTIONS:
            sol = optimize_threshold(
                series,
                stats[d],
                (priors or {}).get(d),
                theta_max=args.theta_max,
                epsilons=args.epsilons,
                grid=args.grid,
                direction=d,
                min_orders=args.min_orders,
                default_concentration=args.concentration,
            )
            records.append(sol.to_dict())
            mark = "" if sol.feasible else " (infeasible, using theta_max)"
            _say(f"{cat} {d.value}: theta*={sol.theta_star:.6g}{mark}")
    return stamp(records, "threshold_solution", cfg.fingerprint())


def _theta_source(args, variant: Variant):
    if args.theta is None:
        return ("optimized" if variant.optimized_threshold else "machine_epsilon"), None
    if args.theta in ("optimized",):
        return "optimized", None
    if args.theta in ("machine_epsilon", "machine-epsilon"):
        return "machine_epsilon", None
    return "fixed", _theta_value(args.theta)


def cmd_run(args) -> List[dict]:
    variant = Variant(args.variant)
    source, theta = _theta_source(args, variant)
    cfg = RunConfig(
        command="run",
        variant=variant.value,
        theta_source=source,
        theta=theta if theta is not None else args.theta_max,
        epsilons=tuple(args.epsilons),
        grid=args.grid,
        pi_interval=_pi_interval(args),
        bounds_theta=args.theta_max,
        categories=tuple(args.category or ()),
        window=_window_strings(args),
        min_orders=args.min_orders,
        concentration=args.concentration,
        inputs=_inputs(
            snapshots=args.snapshots,
            feedback=args.feedback,
            cues=args.cues,
            history=args.history,
            history_feedback=args.history_feedback,
            history_cues=args.history_cues,
        ),
    ).validate()
    fp = cfg.fingerprint()
    feedback = _optional(ingest_feedback, args.feedback)
    cues = _optional(ingest_cues, args.cues)
    history = _optional(ingest_snapshots, args.history) or {}
    history_feedback = _optional(ingest_feedback, args.history_feedback)
    history_cues = _optional(ingest_cues, args.history_cues)

    decisions, reports, summary = [], [], []
    for cat, series in _load_series(args).items():
        run = run_variant(
            series,
            variant,
            feedback=feedback,
            cues=cues,
            theta_max=args.theta_max,
            theta=theta if source == "fixed" else None,
            optimize=source == "optimized",
            history=history.get(cat),
            history_feedback=history_feedback,
            history_cues=history_cues,
            epsilons=args.epsilons,
            grid=args.grid,
            min_orders=args.min_orders,
            concentration=args.concentration,
            pi_interval=cfg.pi_interval,
        )
        for dec in run.decisions:
            decisions.append(dict(dec.to_dict(), category_id=cat))
        for d in DIRECTIONS:
            if d in run.solutions:
                reports.append(run.solutions[d].to_dict())
        counts = {d.value: sum(1 for x in run.decisions if x.flagged and x.direction is d) for d in DIRECTIONS}
        summary.append(
            {
                "category_id": cat,
                "articles": len(series.article_ids),
                "flags": counts,
                "thresholds": {d.value: run.config.theta_for(d) for d in DIRECTIONS},
                "bounds": {d.value: [b.alpha_max, b.beta_max] for d, b in run.bounds.items()},
            }
        )
        _say(f"{cat}: {counts['too_big']} too_big, {counts['too_small']} too_small flags "
             f"over {len(series.article_ids)} articles")
    total = sum(sum(s["flags"].values()) for s in summary)
    if not summary:
        _say("no snapshot data: 0 flags")
    out = stamp(decisions, "decision", fp) + stamp(reports, "threshold_solution", fp)
    out += stamp(
        [{"variant": variant.value, "total_flags": total, "categories": summary}], "summary", fp
    )
    return out


def _read_treatments(path) -> Dict[str, list]:
    by_cat: Dict[str, list] = {}
    for lineno, obj in read_jsonl(path):
        try:
            aid = str(obj["article_id"])
            t_flag = parse_ts(obj["t_flag"])
            d = Direction(obj.get("direction", "too_big"))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad treatment row ({exc})") from None
        by_cat.setdefault(obj.get("category_id"), []).append((aid, t_flag, d))
    return by_cat


def _flagged_ids(path) -> set:
    return {
        str(obj["article_id"])
        for _, obj in read_jsonl(path)
        if obj.get("record_type", "decision") == "decision" and obj.get("flagged")
    }


def cmd_did(args) -> List[dict]:
    cfg = RunConfig(
        command="evaluate-did",
        categories=tuple(args.category or ()),
        window=_window_strings(args),
        inputs=_inputs(snapshots=args.snapshots, treatments=args.treatments, flags=args.flags),
        options=(("neighbors", args.neighbors), ("window_weeks", args.window_weeks)),
    ).validate()
    treatments = _read_treatments(args.treatments)
    excluded_ids = _flagged_ids(args.flags) if args.flags else set()
    records = []
    for cat, series in _load_series(args).items():
        rows = treatments.get(cat, []) + treatments.get(None, [])
        latest = series.latest()
        rows = [r for r in rows if r[0] in latest]
        if not rows:
            continue
        treated_ids = {r[0] for r in rows}
        items = [Treatment(latest[aid], t, d) for aid, t, d in rows]
        pool = [
            rec for aid, rec in sorted(latest.items())
            if aid not in treated_ids and aid not in excluded_ids
        ]
        report = did_effect(
            items, pool, series, m=args.neighbors, window=timedelta(weeks=args.window_weeks)
        )
        records.append(dict(report.to_dict(), category_id=cat))
        _say(f"{cat}: srr_effect={report.srr_effect:.4f} over {len(report.per_article_effects)} "
             f"of {report.treated_count} treated articles")
    if not records:
        raise DataError("no treated articles found in the snapshot data")
    return stamp(records, "did_report", cfg.fingerprint())


def cmd_cold_start(args) -> List[dict]:
    variants = [Variant(v) for v in args.variants]
    if Variant(args.baseline) not in variants:
        variants.insert(0, Variant(args.baseline))
    cfg = RunConfig(
        command="cold-start-compare",
        theta=args.theta_max,
        epsilons=tuple(args.epsilons),
        grid=args.grid,
        categories=tuple(args.category or ()),
        window=_window_strings(args),
        min_orders=args.min_orders,
        concentration=args.concentration,
        inputs=_inputs(
            snapshots=args.snapshots,
            feedback=args.feedback,
            cues=args.cues,
            history=args.history,
            history_cues=args.history_cues,
            truth=args.truth,
        ),
        options=(
            ("variants", [v.value for v in variants]),
            ("baseline", args.baseline),
            ("baseline_concentration", args.baseline_concentration),
        ),
    ).validate()
    feedback = _optional(ingest_feedback, args.feedback)
    cues = _optional(ingest_cues, args.cues)
    history = _optional(ingest_snapshots, args.history) or {}
    history_cues = _optional(ingest_cues, args.history_cues)
    truth = _optional(ingest_truth, args.truth)
    records, notes = [], []
    for cat, series in _load_series(args).items():
        firsts, scores = {}, {}
        for v in variants:
            conc = args.concentration
            if v.value == args.baseline and args.baseline_concentration is not None:
                conc = args.baseline_concentration
            run = run_variant(
                series,
                v,
                feedback=feedback,
                cues=cues,
                theta_max=args.theta_max,
                history=history.get(cat),
                history_cues=history_cues,
                epsilons=args.epsilons,
                grid=args.grid,
                min_orders=args.min_orders,
                concentration=conc,
                keep_history=True,
            )
            firsts[v.value] = run.first_flags()
            if truth is not None and v is not Variant.V_HF:
                scores[v.value] = score_against_truth(run.final_decisions(), truth)
        metrics = cold_start_metrics(firsts, baseline=args.baseline)
        for rec in metrics.to_records():
            row = dict(rec, category_id=cat)
            if rec["variant"] in scores:
                s = scores[rec["variant"]]
                row["precision"], row["recall"] = s.precision, s.recall
            records.append(row)
            red = rec.get("shared_orders_reduction")
            _say(f"{cat} {rec['variant']}: flags={rec['flag_count']} median n(a)={rec['median_orders']}"
                 + ("" if red is None else f" shared reduction={red:.1%}"))
        notes.extend(f"{cat}: {w}" for w in metrics.warnings)
    return stamp(records, "cold_start", cfg.fingerprint()) + stamp(
        [{"warnings": notes}], "summary", cfg.fingerprint()
    )


def cmd_simulate(args) -> List[dict]:
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "did":
        conf = DiDSimConfig(
            seed=args.seed,
            treated=args.treated,
            controls=args.controls,
            weeks=args.weeks or DiDSimConfig.weeks,
            flag_week=args.flag_week,
            effect=args.effect,
            category_id=args.category_id,
        )
        panel = generate_did_panel(conf)
        write_snapshots(out_dir / "snapshots.jsonl", [panel.series])
        write_jsonl(
            out_dir / "treatments.jsonl",
            (
                {
                    "article_id": rec.article_id,
                    "category_id": rec.category_id,
                    "direction": d.value,
                    "t_flag": format_ts(t),
                }
                for rec, t, d in panel.treated
            ),
        )
        files = ["snapshots.jsonl", "treatments.jsonl"]
        options = {k: getattr(conf, k) for k in ("treated", "controls", "weeks", "flag_week", "effect")}
    else:
        conf = SimConfig(
            seed=args.seed,
            article_count=args.articles,
            issue_fraction=args.issue_fraction,
            weekly_order_rate=args.weekly_orders,
            weeks=args.weeks or SimConfig.weeks,
            category_id=args.category_id,
            feedback_fraction=args.feedback_fraction,
            cue_fraction=args.cue_fraction,
            cue_noise=args.cue_noise,
        )
        sim = generate(conf)
        write_snapshots(out_dir / "snapshots.jsonl", [sim.series])
        write_truth(out_dir / "truth.jsonl", sim.truth)
        write_feedback(out_dir / "feedback.jsonl", sim.feedback)
        write_cues(out_dir / "cues.jsonl", sim.cues)
        files = ["snapshots.jsonl", "truth.jsonl", "feedback.jsonl", "cues.jsonl"]
        options = {
            k: getattr(conf, k)
            for k in (
                "article_count", "issue_fraction", "weekly_order_rate", "weeks",
                "feedback_fraction", "cue_fraction", "cue_noise",
            )
        }
    cfg = RunConfig(
        command="simulate",
        seed=args.seed,
        categories=(args.category_id,),
        options=tuple(sorted(dict(options, kind=args.kind).items())),
    ).validate()
    manifest = {
        "kind": args.kind,
        "seed": args.seed,
        "files": {name: file_digest(out_dir / name) for name in files},
        "options": dict(sorted(options.items())),
    }
    records = stamp([manifest], "simulation", cfg.fingerprint())
    write_jsonl(out_dir / "manifest.jsonl", records)
    _say(f"wrote {', '.join(files)} to {out_dir}")
    return records


# --------------------------------------------------------------- parser


def _common(p, snapshots=True, required=True):
    if snapshots:
        p.add_argument("--snapshots", required=required, help="snapshot JSONL file")
    p.add_argument("--category", action="append", help="restrict to this category (repeatable)")
    p.add_argument("--window-start", help="ISO-8601 start of the snapshot window")
    p.add_argument("--window-end", help="ISO-8601 end of the snapshot window")
    p.add_argument("--min-orders", type=int, default=1)
    p.add_argument("--output", "-o", help="write records here instead of stdout")


def _flagging(p):
    p.add_argument("--theta-max", type=_theta_value, default=THETA_MACHINE_EPSILON,
                   help="conservative threshold; also used to solve prior bounds")
    p.add_argument("--epsilons", type=float, nargs=3, default=list(DEFAULT_EPSILONS),
                   metavar=("E1", "E2", "E3"))
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--concentration", type=float, default=2.0,
                   help="default-prior concentration (0 gives the uniform prior)")
    p.add_argument("--feedback", help="expert feedback JSONL")
    p.add_argument("--cues", help="visual cue JSONL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sizeflags", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    variants = [v.value for v in Variant]

    p = sub.add_parser("stats", help="category statistics per direction")
    _common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("solve-bounds", help="integer prior bounds (alpha_max, beta_max)")
    _common(p, required=False)
    p.add_argument("--pi-low", type=float)
    p.add_argument("--pi-high", type=float)
    p.add_argument("--theta", type=_theta_value, default=THETA_MACHINE_EPSILON)
    p.set_defaults(func=cmd_solve_bounds)

    p = sub.add_parser("optimize-threshold", help="calibrate theta* per category and direction")
    _common(p)
    _flagging(p)
    p.add_argument("--variant", choices=variants, default=Variant.V_TH.value)
    p.add_argument("--pi-low", type=float)
    p.add_argument("--pi-high", type=float)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("run", help="flag every article of each category under a variant")
    _common(p)
    _flagging(p)
    p.add_argument("--variant", choices=variants, required=True)
    p.add_argument("--theta", help="'machine_epsilon', 'optimized' or a positive number")
    p.add_argument("--history", help="snapshot JSONL used to calibrate theta*")
    p.add_argument("--history-feedback")
    p.add_argument("--history-cues")
    p.add_argument("--pi-low", type=float)
    p.add_argument("--pi-high", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate-did", help="nearest-neighbor difference-in-differences")
    _common(p)
    p.add_argument("--treatments", required=True,
                   help="JSONL rows with article_id, t_flag, direction[, category_id]")
    p.add_argument("--flags", help="decision JSONL; flagged articles are kept out of the control pool")
    p.add_argument("--neighbors", type=int, default=DEFAULT_NEIGHBORS)
    p.add_argument("--window-weeks", type=float, default=6.0)
    p.set_defaults(func=cmd_did)

    p = sub.add_parser("cold-start-compare", help="orders/returns needed before the first flag")
    _common(p)
    _flagging(p)
    p.add_argument("--variants", nargs="+", choices=variants,
                   default=[Variant.V_BASE.value, Variant.SIZEFLAGS.value])
    p.add_argument("--baseline", choices=variants, default=Variant.V_BASE.value)
    p.add_argument("--baseline-concentration", type=float,
                   help="default-prior concentration for the baseline only (0 = uniform)")
    p.add_argument("--history")
    p.add_argument("--history-cues")
    p.add_argument("--truth", help="truth JSONL from `simulate`, adds precision and recall")
    p.set_defaults(func=cmd_cold_start)

    p = sub.add_parser("simulate", help="write a synthetic category with ground truth")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--output-dir", "-o", default="sim")
    p.add_argument("--kind", choices=("catalog", "did"), default="catalog")
    p.add_argument("--category-id", default="C1")
    p.add_argument("--weeks", type=int)
    p.add_argument("--articles", type=int, default=SimConfig.article_count)
    p.add_argument("--issue-fraction", type=float, default=SimConfig.issue_fraction)
    p.add_argument("--weekly-orders", type=float, default=SimConfig.weekly_order_rate)
    p.add_argument("--feedback-fraction", type=float, default=SimConfig.feedback_fraction)
    p.add_argument("--cue-fraction", type=float, default=SimConfig.cue_fraction)
    p.add_argument("--cue-noise", type=float, default=SimConfig.cue_noise)
    p.add_argument("--treated", type=int, default=DiDSimConfig.treated)
    p.add_argument("--controls", type=int, default=DiDSimConfig.controls)
    p.add_argument("--flag-week", type=int, default=DiDSimConfig.flag_week)
    p.add_argument("--effect", type=float, default=DiDSimConfig.effect)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            records = args.func(args)
        for w in caught:
            _say(f"warning: {w.message}")
        if args.command != "simulate":
            _emit(records, getattr(args, "output", None))
    except SizeFlagsError as exc:
        _say(f"error[{exc.category}]: {exc}")
        return exc.exit_code
    except FileNotFoundError as exc:
        _say(f"error[data]: {exc.strerror}: {exc.filename}")
        return DataError.exit_code
    except ValueError as exc:
        _say(f"error[config]: {exc}")
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
