"""Command-line interface: run, resume, review, eval-reviewer."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import LabloopError
from .pdftext import extract_pdf_text
from .pipeline import (
    RunConfig,
    build_backend,
    emit_summary,
    resume_run,
    run_pipeline,
)
from .review import ReviewerConfig, apply_calibration, review_ensemble, save_review
from .revieweval import (
    LabeledPaper,
    decisions_at_threshold,
    evaluate_with_cis,
    load_dataset,
    render_metrics_table,
    run_baselines,
)
from .llm import LlmClient

logger = logging.getLogger(__name__)


def _cmd_run(args) -> int:
    config = RunConfig.from_file(args.config)
    summary = run_pipeline(config)
    print(emit_summary(summary, args.format))
    return 0 if summary.completed_papers >= 1 else 1


def _cmd_resume(args) -> int:
    summary = resume_run(args.output_root)
    print(emit_summary(summary, args.format))
    return 0 if summary.completed_papers >= 1 else 1


def _cmd_review(args) -> int:
    text = extract_pdf_text(args.pdf)
    config = RunConfig.from_file(args.config)
    backend = build_backend(config)
    client = LlmClient(backend)
    reviewer_config = config.reviewer
    if args.threshold is not None:
        reviewer_config = ReviewerConfig(
            reflections=reviewer_config.reflections,
            fewshot_examples=reviewer_config.fewshot_examples,
            ensemble_size=reviewer_config.ensemble_size,
            temperature=reviewer_config.temperature,
            decision_threshold=args.threshold,
        )
    review = review_ensemble(client, config.settings_for("reviewer"), text, reviewer_config)
    calibrated = apply_calibration(review, reviewer_config.decision_threshold)
    if args.output:
        save_review(calibrated, args.output)
    print(json.dumps(calibrated.to_record(), indent=1))
    return 0


def _paper_text(paper: LabeledPaper, dataset_dir: Path) -> str:
    if paper.text:
        return paper.text
    if paper.pdf:
        return extract_pdf_text(dataset_dir / paper.pdf)
    raise LabloopError(f"paper {paper.paper_id} has neither text nor pdf")


def _cmd_eval_reviewer(args) -> int:
    dataset_dir = Path(args.dataset)
    papers = load_dataset(dataset_dir)
    labels = [p.ground_truth for p in papers]

    if all(p.llm_score is not None for p in papers):
        scores = [float(p.llm_score) for p in papers]
    else:
        if not args.config:
            print(
                "dataset records lack precomputed llm_score; pass --config with a "
                "reachable backend to run the reviewer live",
                file=sys.stderr,
            )
            return 2
        config = RunConfig.from_file(args.config)
        client = LlmClient(build_backend(config))
        scores = []
        for paper in papers:
            review = review_ensemble(
                client,
                config.settings_for("reviewer"),
                _paper_text(paper, dataset_dir),
                config.reviewer,
            )
            scores.append(float(review.overall))
    predictions = decisions_at_threshold(scores, args.threshold)

    reports = {
        f"calibrated @ {args.threshold}": evaluate_with_cis(
            predictions, scores, labels, resamples=args.resamples, seed=args.seed
        )
    }
    if args.baselines:
        reports.update(run_baselines(labels, seed=args.seed, trials=args.trials))
    print(render_metrics_table(reports, fmt=args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labloop")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a full pipeline run from a config file")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--format", choices=("text", "csv"), default="text")
    run_p.set_defaults(func=_cmd_run)

    resume_p = sub.add_parser("resume", help="resume an interrupted run")
    resume_p.add_argument("output_root")
    resume_p.add_argument("--format", choices=("text", "csv"), default="text")
    resume_p.set_defaults(func=_cmd_resume)

    review_p = sub.add_parser("review", help="review a PDF manuscript")
    review_p.add_argument("pdf")
    review_p.add_argument("--config", required=True)
    review_p.add_argument("--threshold", type=int, default=None)
    review_p.add_argument("--output", default=None)
    review_p.set_defaults(func=_cmd_review)

    eval_p = sub.add_parser("eval-reviewer", help="score reviewer decisions on a labeled dataset")
    eval_p.add_argument("--dataset", required=True)
    eval_p.add_argument("--threshold", type=int, default=6)
    eval_p.add_argument("--resamples", type=int, default=10_000)
    eval_p.add_argument("--trials", type=int, default=1000)
    eval_p.add_argument("--seed", type=int, default=0)
    eval_p.add_argument("--format", choices=("text", "csv"), default="text")
    eval_p.add_argument("--baselines", action="store_true")
    eval_p.add_argument("--config", default=None)
    eval_p.set_defaults(func=_cmd_eval_reviewer)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LabloopError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
