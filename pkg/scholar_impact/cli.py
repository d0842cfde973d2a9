"""Command-line interface

Every subcommand writes one JSON document to stdout (or a text table with
``--pretty``). Errors go to stderr as a single JSON line. Exit codes: 0
success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .config import Settings, load_settings
from .core_metrics import MetricKind, describe_fit, fit_exponential, same_period_window, score_paper
from .dataset_builder import (
    MetricConfig,
    label_papers,
    read_dataset,
    read_labeled_examples,
    split,
    stratify_uniform,
    write_dataset,
    write_examples,
    year_histogram,
)
from .exceptions import ScholarImpactError, SchemaViolation
from .keyphrase import (
    BUILTIN_TEMPLATES,
    FailurePolicy,
    evaluate_template,
    extract_keyphrase,
    get_template,
    load_annotated_examples,
)
from .models import Cohort, DateWindow, ExtrasRecord, PaperRecord
from .predictor import (
    ConstantPredictor,
    HashRandomPredictor,
    ImpactPredictor,
    LossKind,
    NativePredictor,
    RemotePredictor,
    SCORING_TEMPLATES,
    TrainConfig,
    examples_to_matrix,
    forward,
    save_params,
    train_baseline,
)
from .prompt_library import template_from_file
from .ranking_eval import Prediction, evaluate
from .reports import DEFAULT_FRACTIONS, journal_report, render_table, report_rows

logger = logging.getLogger(__name__)


@dataclass
class CommandResult:
    payload: Any
    rows: List[Dict[str, Any]] = field(default_factory=list)


def _read_jsonl(path: str) -> List[Tuple[int, Dict[str, Any]]]:
    """Non-blank JSON-object lines of a file, paired with their line numbers"""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaViolation(f"malformed JSON ({e.msg})", line_number) from e
            if not isinstance(row, dict):
                raise SchemaViolation("record is not a JSON object", line_number)
            rows.append((line_number, row))
    return rows


def _number(row: Dict[str, Any], name: str, line_number: int) -> float:
    value = row.get(name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"'{name}' must be a number, got {value!r}", line_number)
    return float(value)


def _read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _scholar(settings: Settings):
    from .scholar_gateway import ScholarGateway

    return ScholarGateway(settings.gateway_config())


def _chat(settings: Settings):
    from .llm_client import ChatGateway

    settings.require_llm()
    return ChatGateway(settings.llm_config())


def _score_row(kind: MetricKind, score) -> Dict[str, Any]:
    return {
        "kind": kind.value,
        "value": score.value,
        "lambda": score.fit.rate,
        "sample_mean": score.fit.sample_mean,
        "cohort_size": score.cohort_size,
        "topic_phrase": score.topic_phrase,
        "window": [score.window.start.isoformat(), score.window.end.isoformat()] if score.window else None,
    }


def cmd_score(args: argparse.Namespace, settings: Settings) -> CommandResult:
    if args.paper_file:
        paper = PaperRecord.model_validate(_read_json(args.paper_file))
    elif args.paper_id:
        paper = _scholar(settings).fetch_paper(args.paper_id)
    else:
        raise ValueError("score needs --paper-file or --paper-id")

    kinds = [MetricKind.TNCSI_SP, MetricKind.TNCSI] if args.kind == "both" else [MetricKind(args.kind)]
    rows = []

    if args.cohort_file:
        if len(kinds) > 1:
            raise ValueError("--cohort-file holds one cohort; choose --kind tncsi or tncsi_sp")
        cohort = Cohort.model_validate(_read_json(args.cohort_file))
        rows.append(_score_row(kinds[0], score_paper(paper, cohort, kinds[0])))
    else:
        phrase = args.phrase or extract_keyphrase(paper, get_template(args.template), _chat(settings))
        scholar = _scholar(settings)
        for kind in kinds:
            window = None
            if kind is MetricKind.TNCSI_SP:
                if paper.publication_date is None:
                    raise ValueError(f"paper {paper.paper_id} has no publication date for TNCSI_SP")
                window = same_period_window(paper.publication_date, settings.half_span_months)
            cohort = scholar.search_cohort(
                phrase, window=window, capacity=settings.cohort_capacity,
                anchor_date=paper.publication_date if window else None,
            )
            rows.append(_score_row(kind, score_paper(paper, cohort, kind)))

    return CommandResult({"paper_id": paper.paper_id, "cites": paper.citation_count, "scores": rows}, rows)


def cmd_cohort(args: argparse.Namespace, settings: Settings) -> CommandResult:
    window = None
    anchor = date.fromisoformat(args.anchor_date) if args.anchor_date else None
    if anchor is not None:
        window = same_period_window(anchor, settings.half_span_months)
    cohort = _scholar(settings).search_cohort(
        args.phrase, window=window, capacity=args.capacity or settings.cohort_capacity, anchor_date=anchor,
    )
    fit = fit_exponential(cohort.citation_counts)
    payload = {
        "topic_phrase": cohort.topic_phrase,
        "size": cohort.size,
        "window": [window.start.isoformat(), window.end.isoformat()] if window else None,
        "lambda": fit.rate,
        "sample_mean": fit.sample_mean,
        "max_cites": max(cohort.citation_counts),
    }
    if args.describe:
        payload["curve"] = describe_fit(fit)
    return CommandResult(payload, [{k: v for k, v in payload.items() if k != "curve"}])


def cmd_build_dataset(args: argparse.Namespace, settings: Settings) -> CommandResult:
    date_range = DateWindow(start=date.fromisoformat(args.start), end=date.fromisoformat(args.end))
    scholar = _scholar(settings)
    papers = scholar.ingest_arxiv(
        args.categories, date_range, args.limit,
        snapshot_path=Path(args.snapshot) if args.snapshot else None,
    )
    config = MetricConfig(
        half_span_months=settings.half_span_months,
        capacity=settings.cohort_capacity,
        min_cohort_size=settings.min_cohort_size,
        include_tncsi=args.include_tncsi,
        max_workers=settings.llm_max_workers,
    )
    outcome = label_papers(papers, scholar, _chat(settings), config, get_template(args.template))
    examples = outcome.examples
    if args.per_bin:
        examples = stratify_uniform(examples, bins=args.bins, per_bin=args.per_bin, seed=settings.seed)

    write_examples(examples, args.out)
    payload = {
        "output": args.out,
        "ingested": len(papers),
        "labeled": len(outcome.examples),
        "written": len(examples),
        "years": {str(y): c for y, c in year_histogram(examples).items()},
        "failures": [vars(f) for f in outcome.failures],
    }
    return CommandResult(payload, [{k: payload[k] for k in ("output", "ingested", "labeled", "written")}])


def cmd_split(args: argparse.Namespace, settings: Settings) -> CommandResult:
    examples = read_labeled_examples(args.input)
    dataset = split(examples, tuple(args.ratios), seed=settings.seed)
    write_dataset(dataset, args.out)
    train, val, test = dataset.sizes()
    payload = {"output": args.out, "seed": dataset.seed, "train": train, "validation": val, "test": test}
    return CommandResult(payload, [payload])


def cmd_train_baseline(args: argparse.Namespace, settings: Settings) -> CommandResult:
    dataset = read_dataset(args.dataset)
    config = TrainConfig(
        loss_kind=LossKind(args.loss),
        smoothl1_delta=args.delta,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        dim=args.dim,
        hidden=args.hidden,
        seed=settings.seed,
    )
    result = train_baseline(dataset.train, dataset.validation, config)
    save_params(result.params, args.out)

    payload: Dict[str, Any] = {
        "output": args.out,
        "best_epoch": result.best_epoch,
        "history": [vars(h) for h in result.history],
    }
    if dataset.test:
        features, targets = examples_to_matrix(dataset.test, config.dim)
        scores = forward(features, result.params)
        report = evaluate([
            Prediction(item_id=e.paper_id, truth=t, predicted=float(s))
            for e, t, s in zip(dataset.test, targets, scores)
        ], k=settings.ndcg_k)
        payload["test"] = report.model_dump()
    return CommandResult(payload, [vars(h) for h in result.history])


def _predictor(args: argparse.Namespace, settings: Settings) -> ImpactPredictor:
    if args.predictor == "native":
        if not args.params:
            raise ValueError("--params is required for the native predictor")
        return NativePredictor.from_file(args.params)
    if args.predictor == "remote":
        return RemotePredictor(_chat(settings), args.template)
    if args.predictor == "hash":
        return HashRandomPredictor(settings.seed)
    return ConstantPredictor(args.constant)


def cmd_predict(args: argparse.Namespace, settings: Settings) -> CommandResult:
    predictor = _predictor(args, settings)
    results = []
    for index, (line_number, row) in enumerate(_read_jsonl(args.input)):
        extras = None
        if args.with_extras and row.get("extras"):
            if not isinstance(row["extras"], dict):
                raise SchemaViolation("'extras' must be an object", line_number)
            extras = ExtrasRecord(**row["extras"])
        if not isinstance(row.get("title"), str):
            raise SchemaViolation("'title' must be a string", line_number)
        results.append({
            "id": row.get("id") or row.get("paper_id") or str(index),
            "predicted": predictor.predict(row["title"], row.get("abstract") or "", extras),
        })
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.writelines(json.dumps(r) + "\n" for r in results)
    return CommandResult({"predictor": args.predictor, "predictions": results}, results)


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> CommandResult:
    rows = _read_jsonl(args.predictions)
    truths: Dict[str, float] = {}
    if args.truths:
        truths = {e.paper_id: e.tncsi_sp for e in read_labeled_examples(args.truths)}

    pairs = []
    for line_number, row in rows:
        item_id = str(row.get("id"))
        if item_id in truths:
            truth = truths[item_id]
        elif row.get("truth") is None:
            raise SchemaViolation(f"no ground truth for prediction '{item_id}'", line_number)
        else:
            truth = _number(row, "truth", line_number)
        pairs.append(Prediction(item_id=item_id, truth=truth, predicted=_number(row, "predicted", line_number)))

    report = evaluate(pairs, k=settings.ndcg_k)
    return CommandResult(report.model_dump(), [report.model_dump()])


def cmd_journal_report(args: argparse.Namespace, settings: Settings) -> CommandResult:
    groups: Dict[str, List[float]] = {}
    for line_number, row in _read_jsonl(args.input):
        if row.get("group") is None:
            raise SchemaViolation("'group' is required", line_number)
        groups.setdefault(str(row["group"]), []).append(_number(row, "predicted", line_number))
    report = journal_report(groups, args.fractions)
    return CommandResult(report.model_dump(), report_rows(report))


def cmd_eval_prompts(args: argparse.Namespace, settings: Settings) -> CommandResult:
    examples = load_annotated_examples(Path(args.examples))
    templates = [get_template(name) for name in (args.templates or list(BUILTIN_TEMPLATES))]
    templates.extend(template_from_file(path) for path in args.template_file or [])

    chat = _chat(settings)
    policy = FailurePolicy.SKIP if args.skip_failures else FailurePolicy.FAIL_FAST
    rows = []
    for template in templates:
        result = evaluate_template(template, examples, chat, policy, settings.llm_max_workers)
        rows.append({
            "template": result.template,
            "mean_ned": result.mean_ned,
            "scored": result.scored,
            "skipped": result.skipped,
        })
    rows.sort(key=lambda r: r["mean_ned"])
    return CommandResult({"examples": len(examples), "templates": rows}, rows)


def _common_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML file of settings")
    common.add_argument("--cache-dir", default=argparse.SUPPRESS, help="Response cache directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Seed for sampling, splitting, training")
    common.add_argument("--k", type=int, default=argparse.SUPPRESS, help="NDCG cutoff (default 20)")
    common.add_argument("--pretty", action="store_true", default=argparse.SUPPRESS, help="Print a text table")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="Logging level")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="scholar-impact",
        description="Same-period normalised citation impact: scoring, datasets, predictors and evaluation.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("score", cmd_score, "TNCSI / TNCSI_SP of one paper")
    p.add_argument("--paper-file", help="JSON paper record")
    p.add_argument("--paper-id", help="Semantic Scholar or prefixed id (e.g. arXiv:2106.09685)")
    p.add_argument("--cohort-file", help="JSON cohort to score against")
    p.add_argument("--phrase", help="Topic key phrase; extracted with the chat model when omitted")
    p.add_argument("--kind", choices=("tncsi_sp", "tncsi", "both"), default="tncsi_sp")
    p.add_argument("--template", choices=sorted(BUILTIN_TEMPLATES), default=None)

    p = add("cohort", cmd_cohort, "Retrieve (or load from cache) a topic cohort")
    p.add_argument("--phrase", required=True)
    p.add_argument("--anchor-date", help="YYYY-MM-DD; restricts to the same-period window")
    p.add_argument("--capacity", type=int, default=None)
    p.add_argument("--describe", action="store_true", help="Include the fitted density and CDF curve")

    p = add("build-dataset", cmd_build_dataset, "Ingest arXiv papers and label them")
    p.add_argument("--categories", nargs="+", required=True)
    p.add_argument("--start", required=True, help="YYYY-MM-DD")
    p.add_argument("--end", required=True, help="YYYY-MM-DD")
    p.add_argument("--limit", type=int, default=100)
    p.add_argument("--snapshot", help="arXiv metadata snapshot (JSON lines) instead of the API")
    p.add_argument("--out", required=True)
    p.add_argument("--include-tncsi", action="store_true")
    p.add_argument("--template", choices=sorted(BUILTIN_TEMPLATES), default=None)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--per-bin", type=int, default=0, help="Balance labels with this many examples per bin")

    p = add("split", cmd_split, "Split labeled examples 8:1:1")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", type=int, nargs=3, default=[8, 1, 1])

    p = add("train-baseline", cmd_train_baseline, "Train the native regressor")
    p.add_argument("--dataset", required=True, help="Split dataset file")
    p.add_argument("--out", required=True, help="Parameter file to write")
    p.add_argument("--loss", choices=[k.value for k in LossKind], default=LossKind.MSE.value)
    p.add_argument("--delta", type=float, default=1.0, help="SmoothL1 delta")
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dim", type=int, default=4096)
    p.add_argument("--hidden", type=int, default=64)

    p = add("predict", cmd_predict, "Score titles and abstracts")
    p.add_argument("--input", required=True, help="JSON lines with title and abstract")
    p.add_argument("--predictor", choices=("native", "remote", "constant", "hash"), default="native")
    p.add_argument("--params", help="Parameter file for the native predictor")
    p.add_argument("--template", choices=sorted(SCORING_TEMPLATES), default=None)
    p.add_argument("--with-extras", action="store_true", help="Use each record's extras in remote prompts")
    p.add_argument("--constant", type=float, default=0.5)
    p.add_argument("--out", help="Also write predictions as JSON lines")

    p = add("evaluate", cmd_evaluate, "MAE and NDCG@K of predictions")
    p.add_argument("--predictions", required=True, help="JSON lines with id, predicted and optionally truth")
    p.add_argument("--truths", help="Dataset file supplying tncsi_sp truths by id")

    p = add("journal-report", cmd_journal_report, "Top-fraction means per journal quartile")
    p.add_argument("--input", required=True, help="JSON lines with group and predicted")
    p.add_argument("--fractions", type=float, nargs="+", default=list(DEFAULT_FRACTIONS))

    p = add("eval-prompts", cmd_eval_prompts, "Rank key phrase templates by mean NED")
    p.add_argument("--examples", required=True, help="Annotated key phrase file (JSON lines)")
    p.add_argument("--templates", nargs="+", choices=sorted(BUILTIN_TEMPLATES))
    p.add_argument("--template-file", nargs="+", help="Custom template files with {title} and {abstract}")
    p.add_argument("--skip-failures", action="store_true")

    return parser


def _error_line(error: BaseException) -> str:
    return json.dumps({"error": type(error).__name__, "message": str(error)})


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2

    try:
        settings = load_settings(
            getattr(args, "config", None),
            cache_dir=getattr(args, "cache_dir", None),
            seed=getattr(args, "seed", None),
            ndcg_k=getattr(args, "k", None),
            log_level=getattr(args, "log_level", None),
        )
        settings.validate_settings()
    except (ValueError, ScholarImpactError) as e:
        sys.stderr.write(_error_line(e) + "\n")
        return 1

    logging.basicConfig(
        level=settings.log_level.upper(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        result = args.func(args, settings)
    except (ScholarImpactError, ValueError, KeyError, TypeError, OSError) as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        sys.stderr.write(_error_line(e) + "\n")
        return 1

    if getattr(args, "pretty", False):
        sys.stdout.write(render_table(result.rows) + "\n")
    else:
        sys.stdout.write(json.dumps(result.payload, default=str) + "\n")
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
