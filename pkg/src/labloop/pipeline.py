"""The run manager: template in, per-idea workspaces and a summary out.

Idea generation is sequential (each idea conditions on the archive); the
per-idea pipelines (novelty, experiments, write-up, review) run on a worker
pool.  Every stage boundary persists its state, so a killed run resumes
where it stopped and completed ideas are never re-executed.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .editing import EditSession
from .errors import MalformedResponseError, StageFailure, TransportError
from .experiments import run_experiment_loop, run_plotting
from .ideation import Idea, IdeaArchive, check_novelty, generate_idea
from .literature import FixtureLiteratureClient, HttpLiteratureClient, LiteratureClient
from .llm import (
    Backend,
    Conversation,
    HttpBackend,
    LlmClient,
    ModelPrice,
    ModelSettings,
    ReplayBackend,
    TranscriptWriter,
    UsageLedger,
)
from .pdftext import PdfParseError, extract_pdf_text
from .review import ReviewerConfig, apply_calibration, review_ensemble, save_review
from .workspaces import TemplateManifest, instantiate_workspace, load_manifest
from .writeup import (
    SECTION_ORDER,
    ManuscriptState,
    compile_manuscript,
    gather_citations,
    load_section_tips,
    refine_manuscript,
    write_section,
)

logger = logging.getLogger(__name__)

STAGES = ("novelty", "experiments", "plotting", "writeup", "compile", "review", "done")

IDEA_STATE_FILE = "idea_state.json"
RUN_CONFIG_FILE = "run_config.json"
IDEAS_FILE = "ideas.json"
USAGE_FILE = "usage.json"

EMPTY_SCORE_SENTINEL = "n/a"

SUMMARY_COLUMNS = (
    "Total Ideas",
    "Novel Ideas",
    "Experiments Passed",
    "Completed Papers",
    "Mean Score",
    "Max Score",
    "Total Cost",
)


@dataclass(frozen=True)
class RunConfig:
    template: str
    output_root: str
    idea_count: int = 50
    parallelism: int = 1
    models: dict = field(default_factory=dict)
    backend: dict = field(default_factory=dict)
    prices: dict = field(default_factory=dict)
    temperature: float = 0.7
    max_output_tokens: int = 4096
    max_output_tokens_by_stage: dict = field(default_factory=dict)
    idea_reflections: int = 3
    novelty_rounds: int = 10
    results_limit: int = 10
    max_runs: int = 5
    max_attempts: int = 4
    experiment_timeout_s: float = 7200.0
    plot_timeout_s: float = 600.0
    citation_rounds: int = 20
    latex_repair_rounds: int = 5
    reviewer: ReviewerConfig = field(default_factory=ReviewerConfig)
    quota_bytes: int = 1 << 30
    record_transcripts: bool = True
    compile_commands: list | None = None
    review_feedback_to_ideation: bool = False

    def __post_init__(self):
        if self.idea_count < 1:
            raise ValueError("idea_count must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def model_for(self, stage: str) -> str:
        return self.models.get(stage, self.models.get("default", "default-model"))

    def settings_for(self, stage: str) -> ModelSettings:
        temperature = self.reviewer.temperature if stage == "reviewer" else self.temperature
        max_tokens = int(self.max_output_tokens_by_stage.get(stage, self.max_output_tokens))
        return ModelSettings(self.model_for(stage), temperature, max_tokens)

    def to_record(self) -> dict:
        record = {
            "template": self.template,
            "output_root": self.output_root,
            "idea_count": self.idea_count,
            "parallelism": self.parallelism,
            "models": self.models,
            "backend": self.backend,
            "prices": self.prices,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "max_output_tokens_by_stage": self.max_output_tokens_by_stage,
            "idea_reflections": self.idea_reflections,
            "novelty_rounds": self.novelty_rounds,
            "results_limit": self.results_limit,
            "max_runs": self.max_runs,
            "max_attempts": self.max_attempts,
            "experiment_timeout_s": self.experiment_timeout_s,
            "plot_timeout_s": self.plot_timeout_s,
            "citation_rounds": self.citation_rounds,
            "latex_repair_rounds": self.latex_repair_rounds,
            "reviewer": {
                "reflections": self.reviewer.reflections,
                "fewshot_examples": self.reviewer.fewshot_examples,
                "ensemble_size": self.reviewer.ensemble_size,
                "temperature": self.reviewer.temperature,
                "decision_threshold": self.reviewer.decision_threshold,
            },
            "quota_bytes": self.quota_bytes,
            "record_transcripts": self.record_transcripts,
            "compile_commands": self.compile_commands,
            "review_feedback_to_ideation": self.review_feedback_to_ideation,
        }
        return record

    @classmethod
    def from_record(cls, record: dict) -> "RunConfig":
        record = dict(record)
        reviewer = record.pop("reviewer", {})
        return cls(reviewer=ReviewerConfig(**reviewer), **record)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class RunSummary:
    total_ideas: int
    novel_ideas: int
    experiments_passed: int
    completed_papers: int
    mean_score: float | None
    max_score: float | None
    total_cost: float

    def __post_init__(self):
        if not (
            self.completed_papers <= self.experiments_passed <= self.novel_ideas <= self.total_ideas
        ):
            raise ValueError("summary counts must be nested")


def emit_summary(summary: RunSummary, fmt: str = "text") -> str:
    """Tabular run summary with the fixed column layout."""

    def fmt_score(value: float | None) -> str:
        return EMPTY_SCORE_SENTINEL if value is None else f"{value:.2f}"

    cells = [
        str(summary.total_ideas),
        str(summary.novel_ideas),
        str(summary.experiments_passed),
        str(summary.completed_papers),
        fmt_score(summary.mean_score),
        fmt_score(summary.max_score),
        f"${summary.total_cost:.2f}",
    ]
    if fmt == "csv":
        return ",".join(SUMMARY_COLUMNS) + "\n" + ",".join(cells)
    widths = [max(len(h), len(c)) for h, c in zip(SUMMARY_COLUMNS, cells)]
    header = "  ".join(h.ljust(w) for h, w in zip(SUMMARY_COLUMNS, widths))
    row = "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    return header + "\n" + row


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


class IdeaState:
    """Per-idea stage record persisted in the idea's workspace."""

    def __init__(self, workspace: Path, idea: Idea, index: int):
        self.workspace = workspace
        self.idea = idea
        self.index = index
        self.completed: list[str] = []
        self.failed_stage: str | None = None
        self.experiments_passed = False
        self.figures: list[str] = []
        self.run_records: list[dict] = []

    @property
    def path(self) -> Path:
        return self.workspace / IDEA_STATE_FILE

    def done(self, stage: str) -> bool:
        return stage in self.completed

    def mark(self, stage: str) -> None:
        if stage not in self.completed:
            self.completed.append(stage)
        self.save()

    def fail(self, stage: str) -> None:
        self.failed_stage = stage
        self.save()

    def save(self) -> None:
        self.workspace.mkdir(parents=True, exist_ok=True)
        _atomic_write_json(
            self.path,
            {
                "index": self.index,
                "idea": self.idea.to_record(),
                "completed": self.completed,
                "failed_stage": self.failed_stage,
                "experiments_passed": self.experiments_passed,
                "figures": self.figures,
                "runs": self.run_records,
            },
        )

    @classmethod
    def load(cls, workspace: Path) -> "IdeaState":
        record = json.loads((workspace / IDEA_STATE_FILE).read_text(encoding="utf-8"))
        state = cls(workspace, Idea.from_record(record["idea"]), record["index"])
        state.completed = list(record.get("completed", []))
        state.failed_stage = record.get("failed_stage")
        state.experiments_passed = bool(record.get("experiments_passed", False))
        state.figures = list(record.get("figures", []))
        state.run_records = list(record.get("runs", []))
        return state


def build_backend(config: RunConfig) -> Backend:
    kind = config.backend.get("kind", "http")
    if kind == "replay":
        return ReplayBackend.from_transcripts(config.backend.get("transcripts", []))
    if kind == "http":
        return HttpBackend(
            endpoint=config.backend.get("endpoint", "https://api.openai.com/v1"),
            api_key_env=config.backend.get("api_key_env", "LABLOOP_API_KEY"),
        )
    raise ValueError(f"unknown backend kind {kind!r}")


def build_literature(config: RunConfig) -> LiteratureClient:
    lit = config.backend.get("literature", {})
    if lit.get("kind") == "fixtures":
        return FixtureLiteratureClient(lit["fixture_dir"])
    return HttpLiteratureClient(
        endpoint=lit.get("endpoint", "https://api.semanticscholar.org/graph/v1"),
        api_key=os.environ.get(lit.get("api_key_env", "S2_API_KEY"), ""),
    )


class Pipeline:
    """One end-to-end run rooted at ``config.output_root``."""

    def __init__(
        self,
        config: RunConfig,
        backend: Backend | None = None,
        literature: LiteratureClient | None = None,
    ):
        self.config = config
        self.output_root = Path(config.output_root)
        self.backend = backend if backend is not None else build_backend(config)
        self.literature = literature if literature is not None else build_literature(config)
        prices = {m: ModelPrice(**p) for m, p in config.prices.items()}
        self.ledger = UsageLedger(prices)
        self.manifest: TemplateManifest = load_manifest(config.template)
        self.tips = load_section_tips()
        self._archive_lock = threading.Lock()
        self._usage_lock = threading.Lock()
        #: test hook, called after a stage persists; exceptions abort the run
        self.stage_hook: Callable[[str, str], None] = lambda idea_name, stage: None

    # -- clients ------------------------------------------------------------

    def _client(self, transcript_path: Path | None) -> LlmClient:
        transcript = None
        if self.config.record_transcripts and transcript_path is not None:
            transcript = TranscriptWriter(transcript_path)
        return LlmClient(self.backend, ledger=self.ledger, transcript=transcript)

    def _persist_usage(self) -> None:
        snap = self.ledger.snapshot()
        with self._usage_lock:
            self._write_usage(snap)

    def _write_usage(self, snap) -> None:
        _atomic_write_json(
            self.output_root / USAGE_FILE,
            {
                "prompt_tokens": snap.prompt_tokens,
                "completion_tokens": snap.completion_tokens,
                "estimated_cost": snap.estimated_cost,
            },
        )

    # -- ideation -----------------------------------------------------------

    def _load_or_seed_archive(self) -> IdeaArchive:
        ideas_path = self.output_root / IDEAS_FILE
        if ideas_path.exists():
            return IdeaArchive.load(ideas_path)
        archive = IdeaArchive.from_seed_file(self.manifest.seed_ideas_file)
        archive.save(ideas_path)
        return archive

    def _grow_archive(self, archive: IdeaArchive) -> None:
        client = self._client(self.output_root / "ideation_transcript.jsonl")
        settings = self.config.settings_for("ideation")
        task = self.manifest.task_description
        code = self.manifest.task_code()
        already_generated = len(archive.ideas) - archive.seed_count
        for slot in range(already_generated, self.config.idea_count):
            try:
                idea = generate_idea(
                    client,
                    settings,
                    archive,
                    task,
                    code,
                    reflections=self.config.idea_reflections,
                )
            except (MalformedResponseError, TransportError, StageFailure) as exc:
                logger.warning("idea generation for slot %d failed: %s", slot, exc)
                continue
            with self._archive_lock:
                archive.add(idea)
                archive.save(self.output_root / IDEAS_FILE)
            self._persist_usage()

    # -- per-idea pipeline ----------------------------------------------------

    def _workspace_for(self, index: int, idea: Idea) -> Path:
        return self.output_root / f"{index}_{idea.name}"

    def _idea_state(self, index: int, idea: Idea) -> IdeaState:
        workspace = self._workspace_for(index, idea)
        if (workspace / IDEA_STATE_FILE).exists():
            state = IdeaState.load(workspace)
            state.idea = idea if idea.novel is not None else state.idea
            return state
        state = IdeaState(workspace, idea, index)
        state.save()
        return state

    def _stage_boundary(self, state: IdeaState, stage: str) -> None:
        state.mark(stage)
        self._persist_usage()
        self.stage_hook(state.idea.name, stage)

    def _process_idea(self, archive: IdeaArchive, index: int, idea: Idea) -> IdeaState:
        state = self._idea_state(index, idea)
        if state.failed_stage is not None:
            return state
        workspace = state.workspace
        client = self._client(workspace / "transcript.jsonl")

        if not state.done("novelty"):
            if state.idea.novel is None:
                checked = check_novelty(
                    client,
                    self.config.settings_for("ideation"),
                    state.idea,
                    self.literature,
                    self.manifest.task_description,
                    self.manifest.task_code(),
                    rounds=self.config.novelty_rounds,
                    results_limit=self.config.results_limit,
                )
                state.idea = checked
                with self._archive_lock:
                    archive.update(checked)
                    archive.save(self.output_root / IDEAS_FILE)
            self._stage_boundary(state, "novelty")
        if state.idea.novel is not True:
            return state

        coder_settings = self.config.settings_for("coder")

        if not state.done("experiments"):
            instantiate_workspace(self.manifest, workspace)
            session = EditSession(Conversation(client, coder_settings,
                                               _experiment_system_prompt()), workspace)
            try:
                result = run_experiment_loop(
                    session,
                    state.idea,
                    workspace,
                    self.manifest.baseline_results(),
                    command_template=self.manifest.command,
                    max_runs=self.config.max_runs,
                    max_attempts=self.config.max_attempts,
                    timeout_s=self.manifest.experiment_timeout_s(self.config.experiment_timeout_s),
                    quota_bytes=self.config.quota_bytes,
                )
            except (StageFailure, TransportError) as exc:
                logger.warning("experiments failed for %s: %s", state.idea.name, exc)
                state.fail("experiments")
                self._persist_usage()
                return state
            state.run_records = [r.to_record() for r in result.runs]
            state.experiments_passed = result.passed
            if not result.passed:
                state.fail("experiments")
                self._persist_usage()
                return state
            self._stage_boundary(state, "experiments")

        journal = _reload_journal(workspace)

        if not state.done("plotting"):
            session = EditSession(Conversation(client, coder_settings,
                                               _experiment_system_prompt()), workspace)
            try:
                figures = run_plotting(
                    session,
                    workspace,
                    journal,
                    plot_command=self.manifest.plot_command,
                    timeout_s=self.manifest.plot_timeout_s(self.config.plot_timeout_s),
                    max_attempts=self.config.max_attempts,
                )
            except (ValueError, TransportError) as exc:
                logger.warning("plotting failed for %s: %s", state.idea.name, exc)
                figures = []
            state.figures = figures
            self._stage_boundary(state, "plotting")

        manuscript = ManuscriptState(workspace=workspace, figures=state.figures)
        journal.extract_plot_descriptions(state.figures)
        manuscript.figure_captions = dict(journal.plot_descriptions)

        if not state.done("writeup"):
            writer_settings = self.config.settings_for("writeup")
            try:
                manuscript.set_title(state.idea.title)
                conversation = Conversation(client, writer_settings, _writeup_system_prompt())
                for section in SECTION_ORDER:
                    write_section(manuscript, section, journal, self.tips, conversation)
                citation_conversation = Conversation(client, writer_settings, _writeup_system_prompt())
                edit_session = EditSession(
                    Conversation(client, writer_settings, _experiment_system_prompt()), workspace
                )
                gather_citations(
                    manuscript,
                    citation_conversation,
                    self.literature,
                    edit_session,
                    rounds=self.config.citation_rounds,
                    results_limit=self.config.results_limit,
                )
                refine_conversation = Conversation(client, writer_settings, _writeup_system_prompt())
                refine_manuscript(manuscript, refine_conversation)
            except (StageFailure, MalformedResponseError, TransportError, ValueError) as exc:
                logger.warning("write-up failed for %s: %s", state.idea.name, exc)
                state.fail("writeup")
                self._persist_usage()
                return state
            self._stage_boundary(state, "writeup")

        if not state.done("compile"):
            edit_session = EditSession(
                Conversation(client, self.config.settings_for("writeup"), _experiment_system_prompt()),
                workspace,
            )
            compile_kwargs = {}
            if self.config.compile_commands is not None:
                compile_kwargs["compile_commands"] = self.config.compile_commands
            pdf = compile_manuscript(
                manuscript,
                edit_session,
                repair_rounds=self.config.latex_repair_rounds,
                **compile_kwargs,
            )
            if pdf is None:
                logger.warning("manuscript for %s did not compile", state.idea.name)
                state.fail("compile")
                self._persist_usage()
                return state
            self._stage_boundary(state, "compile")

        if not state.done("review"):
            paper_text = _manuscript_text(workspace)
            reviewer_settings = self.config.settings_for("reviewer")
            try:
                review = review_ensemble(client, reviewer_settings, paper_text, self.config.reviewer)
            except (StageFailure, MalformedResponseError, TransportError) as exc:
                logger.warning("review failed for %s: %s", state.idea.name, exc)
                state.fail("review")
                self._persist_usage()
                return state
            calibrated = apply_calibration(review, self.config.reviewer.decision_threshold)
            save_review(calibrated, workspace / "review.json")
            self._stage_boundary(state, "review")

        state.mark("done")
        return state

    # -- run ------------------------------------------------------------------

    def run(self) -> RunSummary:
        self.output_root.mkdir(parents=True, exist_ok=True)
        _atomic_write_json(self.output_root / RUN_CONFIG_FILE, self.config.to_record())
        if (self.output_root / USAGE_FILE).exists():
            usage = json.loads((self.output_root / USAGE_FILE).read_text(encoding="utf-8"))
            self.ledger.record("carryover", usage["prompt_tokens"], usage["completion_tokens"])
            self.ledger.estimated_cost = usage["estimated_cost"]

        archive = self._load_or_seed_archive()
        self._grow_archive(archive)

        states: list[IdeaState] = []
        ideas = list(enumerate(archive.ideas))
        if self.config.parallelism == 1:
            for index, idea in ideas:
                states.append(self._process_idea(archive, index, idea))
        else:
            with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
                futures = [
                    pool.submit(self._process_idea, archive, index, idea)
                    for index, idea in ideas
                ]
                states = [f.result() for f in futures]

        self._persist_usage()
        return self.summarize(archive, states)

    def summarize(self, archive: IdeaArchive, states: list[IdeaState]) -> RunSummary:
        total = len(archive.ideas)
        novel = sum(1 for i in archive.ideas if i.novel is True)
        experiments_passed = sum(1 for s in states if s.experiments_passed)
        completed = [s for s in states if s.done("compile")]
        scores = []
        for s in completed:
            review_path = s.workspace / "review.json"
            if review_path.exists():
                scores.append(json.loads(review_path.read_text(encoding="utf-8"))["overall"])
        snap = self.ledger.snapshot()
        return RunSummary(
            total_ideas=total,
            novel_ideas=novel,
            experiments_passed=experiments_passed,
            completed_papers=len(completed),
            mean_score=(sum(scores) / len(scores)) if scores else None,
            max_score=max(scores) if scores else None,
            total_cost=snap.estimated_cost,
        )


def _experiment_system_prompt() -> str:
    from .prompts import EXPERIMENT_SYSTEM_PROMPT

    return EXPERIMENT_SYSTEM_PROMPT


def _writeup_system_prompt() -> str:
    from .prompts import WRITEUP_SYSTEM_PROMPT

    return WRITEUP_SYSTEM_PROMPT


def _reload_journal(workspace: Path):
    from .experiments import LabJournal

    journal = LabJournal(workspace / "notes.txt")
    # rebuild the entry list from the persisted notes
    text = journal.text()
    for block in text.split("\n\n"):
        if block.startswith("## Run "):
            try:
                run_index = int(block.split("\n")[0].removeprefix("## Run ").strip())
            except ValueError:
                continue
            journal.entries.append((run_index, "\n".join(block.split("\n")[1:])))
    return journal


def _manuscript_text(workspace: Path) -> str:
    pdf_path = workspace / "paper.pdf"
    if pdf_path.exists():
        try:
            text = extract_pdf_text(pdf_path)
            if text.strip():
                return text
        except PdfParseError:
            logger.info("paper.pdf not text-extractable; reviewing the LaTeX source")
    return (workspace / "latex" / "template.tex").read_text(encoding="utf-8")


def run_pipeline(
    config: RunConfig,
    backend: Backend | None = None,
    literature: LiteratureClient | None = None,
    stage_hook: Callable[[str, str], None] | None = None,
) -> RunSummary:
    pipeline = Pipeline(config, backend=backend, literature=literature)
    if stage_hook is not None:
        pipeline.stage_hook = stage_hook
    return pipeline.run()


def resume_run(
    output_root: str | Path,
    backend: Backend | None = None,
    literature: LiteratureClient | None = None,
) -> RunSummary:
    """Re-enter a prior run; completed ideas are untouched."""
    config_path = Path(output_root) / RUN_CONFIG_FILE
    if not config_path.exists():
        raise FileNotFoundError(f"no run manifest at {config_path}")
    config = RunConfig.from_file(config_path)
    return run_pipeline(config, backend=backend, literature=literature)
