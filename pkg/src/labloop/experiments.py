"""The experiment loop: plan, execute sandboxed runs, journal, and plot.

Runs execute in the workspace with a scrubbed environment, a wall-clock
timeout that kills the whole process group, and a storage quota on the
output directory.  The timeout and quota live outside the workspace, so no
edit the agent makes can loosen them.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import shutil
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .editing import EditExhaustedError, EditSession
from .errors import StageFailure
from .ideation import Idea
from .prompts import (
    EXPERIMENT_ERROR_PROMPT,
    EXPERIMENT_RESULTS_PROMPT,
    EXPERIMENT_RUN_PROMPT,
    EXPERIMENTS_DONE_PHRASE,
    PLOTTING_ERROR_PROMPT,
    PLOTTING_PROMPT,
)

logger = logging.getLogger(__name__)

RESULTS_FILENAME = "final_info.json"
TIMEOUT_STATUS = "timeout"
QUOTA_STATUS = "quota"

DEFAULT_COMMAND_TEMPLATE = "python experiment.py --out_dir={out_dir}"
DEFAULT_PLOT_COMMAND = "python plot.py"

ENV_ALLOWLIST = (
    "PATH",
    "HOME",
    "LANG",
    "LC_ALL",
    "TMPDIR",
    "PYTHONPATH",
    "VIRTUAL_ENV",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
)

FIGURE_SUFFIXES = {".png", ".pdf", ".jpg", ".jpeg", ".svg"}

#: Caps concurrent experiment subprocesses across all workers.
_subprocess_gate = threading.BoundedSemaphore(int(os.environ.get("LABLOOP_MAX_SUBPROCESSES", "4")))

TAIL_CHARS = 4000


@dataclass
class ExecResult:
    exit_status: int | str
    duration: float
    stdout_tail: str
    stderr_tail: str


@dataclass
class ExperimentRun:
    run_index: int
    command: list[str]
    exit_status: int | str
    duration: float
    stdout_tail: str
    stderr_tail: str
    attempt: int
    metrics: dict | None = None

    def to_record(self) -> dict:
        return {
            "run_index": self.run_index,
            "command": self.command,
            "exit_status": self.exit_status,
            "attempt": self.attempt,
            "metrics": self.metrics,
        }


@dataclass
class LabJournal:
    """Append-only run notes persisted at ``notes.txt`` in the workspace."""

    path: Path
    entries: list[tuple[int, str]] = field(default_factory=list)
    plot_descriptions: dict[str, str] = field(default_factory=dict)

    def append_entry(self, run_index: int, note: str) -> None:
        self.entries.append((run_index, note))
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"## Run {run_index}\n{note}\n\n")

    def text(self) -> str:
        if self.path.exists():
            return self.path.read_text(encoding="utf-8")
        return ""

    def extract_plot_descriptions(self, figures: list[str]) -> None:
        """Pull the notes paragraph mentioning each figure file, if any."""
        paragraphs = [p.strip() for p in self.text().split("\n\n") if p.strip()]
        for fig in figures:
            description = next((p for p in paragraphs if fig in p), "")
            self.plot_descriptions[fig] = description


def _tail(path: Path) -> str:
    if not path.exists():
        return ""
    text = path.read_text(encoding="utf-8", errors="replace")
    return text[-TAIL_CHARS:]


def _dir_size(path: Path) -> int:
    total = 0
    for p in path.rglob("*"):
        try:
            if p.is_file():
                total += p.stat().st_size
        except OSError:
            continue
    return total


def _resolve_argv(argv: list[str]) -> list[str]:
    """Map a bare ``python`` to the running interpreter when absent on PATH."""
    resolved = list(argv)
    if resolved and resolved[0] == "python" and shutil.which("python") is None:
        resolved[0] = sys.executable
    return resolved


def build_command(template: str, out_dir: str) -> list[str]:
    """Instantiate the template's command; only the out_dir slot varies."""
    return [part.format(out_dir=out_dir) for part in shlex.split(template)]


def run_sandboxed(
    argv: list[str],
    cwd: Path,
    timeout_s: float,
    quota_dir: Path | None = None,
    quota_bytes: int = 1 << 30,
    grace_s: float = 5.0,
    stdout_path: Path | None = None,
    stderr_path: Path | None = None,
    poll_s: float = 0.1,
) -> ExecResult:
    """Execute ``argv`` in ``cwd`` with a scrubbed environment.

    The child gets its own process group; on timeout or quota breach the
    whole group is terminated (SIGTERM, then SIGKILL after ``grace_s``).
    """
    env = {k: v for k, v in os.environ.items() if k in ENV_ALLOWLIST}
    stdout_path = stdout_path or cwd / "stdout.log"
    stderr_path = stderr_path or cwd / "stderr.log"
    stdout_path.parent.mkdir(parents=True, exist_ok=True)
    stderr_path.parent.mkdir(parents=True, exist_ok=True)
    start = time.monotonic()
    with _subprocess_gate, open(stdout_path, "wb") as out, open(stderr_path, "wb") as err:
        proc = subprocess.Popen(
            _resolve_argv(argv),
            cwd=str(cwd),
            env=env,
            stdout=out,
            stderr=err,
            start_new_session=True,
        )
        status: int | str | None = None
        try:
            while True:
                code = proc.poll()
                if code is not None:
                    status = code
                    break
                now = time.monotonic()
                if now - start > timeout_s:
                    status = TIMEOUT_STATUS
                    break
                if quota_dir is not None and quota_dir.exists() and _dir_size(quota_dir) > quota_bytes:
                    status = QUOTA_STATUS
                    break
                time.sleep(poll_s)
        finally:
            if proc.poll() is None:
                _kill_process_group(proc, grace_s)
    duration = time.monotonic() - start
    return ExecResult(
        exit_status=status,
        duration=duration,
        stdout_tail=_tail(stdout_path),
        stderr_tail=_tail(stderr_path),
    )


def _kill_process_group(proc: subprocess.Popen, grace_s: float) -> None:
    try:
        pgid = os.getpgid(proc.pid)
    except ProcessLookupError:
        return
    for sig in (signal.SIGTERM, signal.SIGKILL):
        try:
            os.killpg(pgid, sig)
        except ProcessLookupError:
            return
        deadline = time.monotonic() + grace_s
        while time.monotonic() < deadline:
            if proc.poll() is not None:
                # reap any remaining group members
                try:
                    os.killpg(pgid, 0)
                except ProcessLookupError:
                    return
                if sig == signal.SIGKILL:
                    return
                break
            time.sleep(0.05)
    proc.wait(timeout=grace_s)


@dataclass
class ExperimentLoopResult:
    runs: list[ExperimentRun]
    journal: LabJournal
    completed_early: bool = False
    failed_run: int | None = None

    @property
    def passed(self) -> bool:
        return self.failed_run is None and any(r.exit_status == 0 for r in self.runs)

    @property
    def successful_runs(self) -> list[ExperimentRun]:
        return [r for r in self.runs if r.exit_status == 0 and r.metrics is not None]


def _describe_failure(result: ExecResult) -> str:
    if result.exit_status == TIMEOUT_STATUS:
        return "the run exceeded its time limit and was terminated"
    if result.exit_status == QUOTA_STATUS:
        return "the run exceeded its storage quota and was terminated"
    parts = [f"exit status {result.exit_status}"]
    if result.stderr_tail.strip():
        parts.append(f"stderr tail:\n{result.stderr_tail}")
    if result.stdout_tail.strip():
        parts.append(f"stdout tail:\n{result.stdout_tail}")
    return "\n".join(parts)


def run_experiment_loop(
    session: EditSession,
    idea: Idea,
    workspace: Path,
    baseline_results: str,
    command_template: str = DEFAULT_COMMAND_TEMPLATE,
    max_runs: int = 5,
    max_attempts: int = 4,
    timeout_s: float = 7200,
    quota_bytes: int = 1 << 30,
) -> ExperimentLoopResult:
    """Iterate edit-and-execute runs for one idea.

    Each run gets up to ``max_attempts`` executions, with captured errors fed
    back for repair between attempts; each attempt costs exactly one model
    call.  After a successful run, results are injected and the agent
    re-plans; the loop ends at ``max_runs`` or when the agent answers with
    the completion phrase.
    """
    workspace = Path(workspace)
    entry_script = command_template.split()[1] if len(command_template.split()) > 1 else ""
    if entry_script and not (workspace / entry_script).exists():
        raise StageFailure("experiments", f"workspace is missing the entry file {entry_script}")
    journal = LabJournal(workspace / "notes.txt")
    runs: list[ExperimentRun] = []
    instruction = EXPERIMENT_RUN_PROMPT.format(
        title=idea.title,
        idea=idea.experiment,
        max_runs=max_runs,
        baseline_results=baseline_results,
    )
    for run_index in range(1, max_runs + 1):
        attempt = 1
        while True:
            try:
                session.request_edit(instruction, max_repair_rounds=1)
            except EditExhaustedError as exc:
                if EXPERIMENTS_DONE_PHRASE in session.last_response:
                    return ExperimentLoopResult(runs, journal, completed_early=True)
                logger.warning("edit failed for run %d attempt %d: %s", run_index, attempt, exc)
            if EXPERIMENTS_DONE_PHRASE in session.last_response:
                return ExperimentLoopResult(runs, journal, completed_early=True)

            out_dir = workspace / f"run_{run_index}"
            if out_dir.exists():
                shutil.rmtree(out_dir)
            argv = build_command(command_template, f"run_{run_index}")
            result = run_sandboxed(
                argv,
                cwd=workspace,
                timeout_s=timeout_s,
                quota_dir=out_dir,
                quota_bytes=quota_bytes,
                stdout_path=out_dir / "stdout.log",
                stderr_path=out_dir / "stderr.log",
            )
            run = ExperimentRun(
                run_index=run_index,
                command=argv,
                exit_status=result.exit_status,
                duration=result.duration,
                stdout_tail=result.stdout_tail,
                stderr_tail=result.stderr_tail,
                attempt=attempt,
            )
            runs.append(run)

            failure: str | None = None
            if result.exit_status == 0:
                metrics_path = out_dir / RESULTS_FILENAME
                try:
                    metrics = json.loads(metrics_path.read_text(encoding="utf-8"))
                    if not isinstance(metrics, dict):
                        raise ValueError("results file must hold a JSON object")
                    run.metrics = metrics
                except (OSError, ValueError) as exc:
                    failure = f"the run exited 0 but {RESULTS_FILENAME} is missing or invalid: {exc}"
            else:
                failure = _describe_failure(result)

            if failure is None:
                results_text = json.dumps(run.metrics, indent=1, sort_keys=True)
                journal.append_entry(run_index, f"Results for run {run_index}:\n{results_text}")
                instruction = EXPERIMENT_RESULTS_PROMPT.format(
                    run_index=run_index,
                    results=results_text,
                    next_run_index=run_index + 1,
                    done_phrase=EXPERIMENTS_DONE_PHRASE,
                )
                break

            if attempt >= max_attempts:
                logger.warning("run %d failed after %d attempts", run_index, attempt)
                return ExperimentLoopResult(runs, journal, failed_run=run_index)
            attempt += 1
            instruction = EXPERIMENT_ERROR_PROMPT.format(run_index=run_index, error=failure)
    return ExperimentLoopResult(runs, journal)


def list_figures(workspace: Path) -> list[str]:
    return sorted(
        str(p.relative_to(workspace))
        for p in workspace.iterdir()
        if p.is_file() and p.suffix.lower() in FIGURE_SUFFIXES
    )


def run_plotting(
    session: EditSession,
    workspace: Path,
    journal: LabJournal,
    plot_command: str = DEFAULT_PLOT_COMMAND,
    timeout_s: float = 600,
    max_attempts: int = 4,
) -> list[str]:
    """Have the agent fill in the plot script, then execute it.

    Returns the figure files present after a successful plot run and records
    a description per figure from the notes.  A plot failure that survives
    all repair attempts degrades to an empty figure list; the write-up then
    proceeds without new figures.
    """
    workspace = Path(workspace)
    if not journal.entries:
        raise ValueError("plotting requires at least one successful run")
    instruction = PLOTTING_PROMPT
    for attempt in range(1, max_attempts + 1):
        try:
            session.request_edit(instruction, max_repair_rounds=1)
        except EditExhaustedError as exc:
            logger.warning("plot edit attempt %d failed: %s", attempt, exc)
        argv = build_command(plot_command, "unused")
        result = run_sandboxed(
            argv,
            cwd=workspace,
            timeout_s=timeout_s,
            stdout_path=workspace / ".plot_stdout.log",
            stderr_path=workspace / ".plot_stderr.log",
        )
        if result.exit_status == 0:
            figures = list_figures(workspace)
            journal.extract_plot_descriptions(figures)
            return figures
        instruction = PLOTTING_ERROR_PROMPT.format(error=_describe_failure(result))
    logger.warning("plotting failed after %d attempts; continuing without new figures", max_attempts)
    return []
