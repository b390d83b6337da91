"""Search/replace edit blocks: parse, apply, and drive repair rounds.

An edit block is a filename line followed by a fenced region holding a
SEARCH marker, the exact text to find, a divider, the replacement text, and
a REPLACE marker.  Matching is byte-exact and must be unique within the
file; ambiguity or mismatch fails the block rather than guessing, and the
failure report is fed back to the model for repair.
"""

from __future__ import annotations

import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EditParseError, LabloopError
from .llm import Conversation

logger = logging.getLogger(__name__)

SEARCH_MARKER = "<<<<<<< SEARCH"
DIVIDER = "======="
REPLACE_MARKER = ">>>>>>> REPLACE"
MARKERS = (SEARCH_MARKER, DIVIDER, REPLACE_MARKER)

SNAPSHOT_DIR = ".snapshots"

#: Files larger than this are listed by name only in edit-session context.
CONTEXT_FILE_BUDGET = 50_000

CONTEXT_SUFFIXES = {".py", ".txt", ".tex", ".bib", ".md", ".json", ".yaml", ".sty", ".cfg"}


@dataclass(frozen=True)
class EditBlock:
    file_path: str
    search: str
    replace: str


@dataclass
class EditOutcome:
    applied: list[tuple[str, int]] = field(default_factory=list)
    failed: list[tuple[EditBlock, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


class EditExhaustedError(LabloopError):
    """Repair rounds ran out with failures outstanding."""

    def __init__(self, outcome: EditOutcome, rounds: int):
        reasons = "; ".join(reason for _, reason in outcome.failed) or "no parseable edits"
        super().__init__(f"edits still failing after {rounds} rounds: {reasons}")
        self.outcome = outcome


def _strip_filename(line: str) -> str:
    name = line.strip()
    if name.endswith(":"):
        name = name[:-1].strip()
    return name.strip("`").strip()


def parse_edit_blocks(response: str) -> list[EditBlock]:
    """Extract edit blocks from a model response, in textual order.

    Fenced regions that do not begin with the SEARCH marker are ignored
    (models may legitimately show plain code).  Markers outside a fence, a
    missing divider, nested markers, or an unclosed fence raise
    :class:`EditParseError` with the offending line number.
    """
    lines = response.split("\n")
    n = len(lines)
    blocks: list[EditBlock] = []
    i = 0
    while i < n:
        line = lines[i].rstrip()
        if line in MARKERS:
            raise EditParseError("marker outside a fenced block", i + 1)
        if line.startswith("```"):
            open_line = i
            if i + 1 < n and lines[i + 1].rstrip() == SEARCH_MARKER:
                blocks.append(_parse_one_block(lines, open_line))
                # advance past the closing fence: REPLACE marker + fence line
                j = open_line + 2
                while lines[j].rstrip() != REPLACE_MARKER:
                    j += 1
                i = j + 2
            else:
                j = i + 1
                while j < n and not lines[j].strip() == "```":
                    if lines[j].rstrip() in MARKERS:
                        raise EditParseError(
                            "marker inside a fence that does not start with the SEARCH marker",
                            j + 1,
                        )
                    j += 1
                i = j + 1
        else:
            i += 1
    return blocks


def _parse_one_block(lines: list[str], open_line: int) -> EditBlock:
    n = len(lines)
    search_line = open_line + 1  # holds SEARCH_MARKER
    filename = ""
    for k in range(open_line - 1, -1, -1):
        candidate = lines[k].strip()
        if candidate:
            if candidate.startswith("```") or lines[k].rstrip() in MARKERS:
                break
            filename = _strip_filename(lines[k])
            break
    if not filename:
        raise EditParseError("fence without a filename line", open_line + 1)

    search_lines: list[str] = []
    k = search_line + 1
    while True:
        if k >= n:
            raise EditParseError("SEARCH marker without divider", search_line + 1)
        stripped = lines[k].rstrip()
        if stripped == DIVIDER:
            break
        if stripped == SEARCH_MARKER:
            raise EditParseError("nested SEARCH marker", k + 1)
        if stripped == REPLACE_MARKER or lines[k].strip().startswith("```"):
            raise EditParseError("SEARCH marker without divider", search_line + 1)
        search_lines.append(lines[k])
        k += 1

    divider_line = k
    replace_lines: list[str] = []
    k += 1
    while True:
        if k >= n:
            raise EditParseError("divider without REPLACE marker", divider_line + 1)
        stripped = lines[k].rstrip()
        if stripped == REPLACE_MARKER:
            break
        if stripped in (SEARCH_MARKER, DIVIDER):
            raise EditParseError("nested marker inside replace text", k + 1)
        if lines[k].strip().startswith("```"):
            raise EditParseError("divider without REPLACE marker", divider_line + 1)
        replace_lines.append(lines[k])
        k += 1

    close_line = k + 1
    if close_line >= n or lines[close_line].strip() != "```":
        raise EditParseError("fence not closed after REPLACE marker", k + 1)

    return EditBlock(
        file_path=filename,
        search="\n".join(search_lines),
        replace="\n".join(replace_lines),
    )


def render_edit_blocks(blocks: list[EditBlock]) -> str:
    """Inverse of :func:`parse_edit_blocks` for grammatically valid blocks."""
    parts = []
    for b in blocks:
        search = b.search + "\n" if b.search else ""
        replace = b.replace + "\n" if b.replace else ""
        parts.append(
            f"{b.file_path}\n```\n{SEARCH_MARKER}\n{search}{DIVIDER}\n{replace}{REPLACE_MARKER}\n```\n"
        )
    return "\n".join(parts)


def resolve_workspace_path(workspace: Path, file_path: str) -> Path | None:
    """Resolve ``file_path`` inside ``workspace`` or return None if it escapes.

    Rejects absolute paths, lexical traversal (``..``), and symlinks whose
    real location falls outside the workspace root.
    """
    if not file_path or file_path.strip() != file_path:
        return None
    if Path(file_path).is_absolute():
        return None
    normalized = os.path.normpath(file_path)
    if normalized in (".", "..") or normalized.startswith("../"):
        return None
    root = workspace.resolve()
    target = workspace / normalized
    # realpath of the deepest existing ancestor catches symlink escapes
    probe = target
    while not probe.exists() and probe != probe.parent:
        probe = probe.parent
    real_probe = Path(os.path.realpath(probe))
    if real_probe != root and not str(real_probe).startswith(str(root) + os.sep):
        return None
    if target.exists():
        real_target = Path(os.path.realpath(target))
        if real_target == root or not str(real_target).startswith(str(root) + os.sep):
            return None
    return target


def _next_snapshot_dir(workspace: Path) -> Path:
    base = workspace / SNAPSHOT_DIR
    base.mkdir(exist_ok=True)
    existing = [int(p.name) for p in base.iterdir() if p.is_dir() and p.name.isdigit()]
    gen = max(existing, default=0) + 1
    path = base / f"{gen:04d}"
    path.mkdir()
    return path


def apply_edits(workspace: str | Path, blocks: list[EditBlock]) -> EditOutcome:
    """Apply blocks in order; failures never roll back earlier successes.

    Each edited file is snapshotted (pre-edit state) into a numbered
    generation under ``.snapshots`` before its first modification in this
    call.
    """
    workspace = Path(workspace)
    outcome = EditOutcome()
    snapshot_dir: Path | None = None
    snapshotted: set[Path] = set()

    for block in blocks:
        target = resolve_workspace_path(workspace, block.file_path)
        if target is None:
            outcome.failed.append((block, f"path escapes workspace: {block.file_path!r}"))
            continue
        if target.exists() and not target.is_file():
            outcome.failed.append((block, f"path is not a regular file: {block.file_path}"))
            continue
        exists = target.is_file()
        if block.search == "":
            if exists and target.read_text(encoding="utf-8") != "":
                outcome.failed.append(
                    (block, "empty search is only legal for new or empty files")
                )
                continue
            if snapshot_dir is None:
                snapshot_dir = _next_snapshot_dir(workspace)
            if exists and target not in snapshotted:
                _snapshot(workspace, snapshot_dir, target)
                snapshotted.add(target)
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(block.replace, encoding="utf-8")
            except OSError as exc:
                outcome.failed.append((block, f"cannot write file: {exc}"))
                continue
            snapshotted.add(target)
            outcome.applied.append((block.file_path, 0))
            continue
        if not exists:
            outcome.failed.append((block, f"file not found: {block.file_path}"))
            continue
        content = target.read_text(encoding="utf-8")
        count = content.count(block.search)
        if count == 0:
            outcome.failed.append((block, "search text not found"))
            continue
        if count > 1:
            outcome.failed.append((block, f"search text ambiguous ({count} occurrences)"))
            continue
        offset = content.index(block.search)
        if snapshot_dir is None:
            snapshot_dir = _next_snapshot_dir(workspace)
        if target not in snapshotted:
            _snapshot(workspace, snapshot_dir, target)
            snapshotted.add(target)
        target.write_text(
            content[:offset] + block.replace + content[offset + len(block.search) :],
            encoding="utf-8",
        )
        outcome.applied.append((block.file_path, offset))
    return outcome


def _snapshot(workspace: Path, snapshot_dir: Path, target: Path) -> None:
    rel = target.relative_to(workspace)
    dest = snapshot_dir / rel
    dest.parent.mkdir(parents=True, exist_ok=True)
    shutil.copy2(target, dest)


def _failure_report(parse_error: EditParseError | None, outcome: EditOutcome | None) -> str:
    lines = ["The previous edits could not be applied:"]
    if parse_error is not None:
        lines.append(f"- parse error: {parse_error}")
    if outcome is not None:
        for block, reason in outcome.failed:
            lines.append(f"- {block.file_path}: {reason}")
    lines.append(
        "Re-send corrected *SEARCH/REPLACE* blocks for the failing edits only. "
        "The SEARCH text must match the current file contents exactly and uniquely."
    )
    return "\n".join(lines)


class EditSession:
    """One editor conversation bound to one workspace.

    ``request_edit`` prompts with an instruction plus fresh file context,
    applies whatever blocks come back, and feeds failures back for repair up
    to ``max_repair_rounds`` times.  A response with no blocks at all is a
    legal no-op.
    """

    def __init__(
        self,
        conversation: Conversation,
        workspace: str | Path,
        context_files: list[str] | None = None,
        context_budget: int = CONTEXT_FILE_BUDGET,
    ):
        self.conversation = conversation
        self.workspace = Path(workspace)
        self.context_files = context_files
        self.context_budget = context_budget
        self.last_response = ""

    def _iter_context_files(self):
        if self.context_files is not None:
            for name in self.context_files:
                path = self.workspace / name
                if path.is_file():
                    yield name, path
            return
        for path in sorted(self.workspace.rglob("*")):
            if not path.is_file() or path.suffix not in CONTEXT_SUFFIXES:
                continue
            rel = path.relative_to(self.workspace)
            if any(part.startswith(".") or part.startswith("run_") for part in rel.parts):
                continue
            yield str(rel), path

    def render_context(self) -> str:
        parts = []
        for name, path in self._iter_context_files():
            try:
                text = path.read_text(encoding="utf-8")
            except UnicodeDecodeError:
                continue
            if len(text) > self.context_budget:
                parts.append(f"{name} (too large to show, {len(text)} characters)")
            else:
                parts.append(f"{name}\n```\n{text}\n```")
        return "\n\n".join(parts)

    def request_edit(self, instruction: str, max_repair_rounds: int = 3) -> EditOutcome:
        prompt = f"{instruction}\n\nCurrent workspace files:\n\n{self.render_context()}"
        final_outcome = EditOutcome()
        for round_no in range(1, max_repair_rounds + 1):
            self.last_response = self.conversation.ask(prompt)
            parse_error: EditParseError | None = None
            outcome: EditOutcome | None = None
            try:
                blocks = parse_edit_blocks(self.last_response)
            except EditParseError as exc:
                parse_error = exc
            else:
                outcome = apply_edits(self.workspace, blocks)
                if outcome.ok:
                    return outcome
            final_outcome = outcome or EditOutcome()
            logger.info(
                "edit round %d/%d had failures (%s)",
                round_no,
                max_repair_rounds,
                parse_error or f"{len(final_outcome.failed)} blocks",
            )
            prompt = _failure_report(parse_error, outcome)
        raise EditExhaustedError(final_outcome, max_repair_rounds)
