"""Manuscript production: section filling, citations, refinement, compile.

The LaTeX template carries structured comment markers per section, so
filling a section is a deterministic splice between its markers rather than
free-form file editing.  Citation gathering and compile repair go through
the edit agent, since those genuinely change arbitrary file content.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .editing import EditExhaustedError, EditSession
from .errors import MalformedResponseError, StageFailure, TransportError
from .experiments import LabJournal
from .literature import LiteratureClient, SearchQuery, SearchResult, render_results_for_prompt
from .llm import Conversation
from .prompts import (
    CITATION_EDIT_PROMPT,
    CITATION_ROUND_PROMPT,
    LATEX_REPAIR_PROMPT,
    REFINEMENT_PROMPT,
    SECTION_REFLECTION_PROMPT,
    SECTION_WRITE_PROMPT,
)
from .protocol import (
    ReflectionPolicy,
    parse_envelope,
    request_envelope,
    run_reflection_loop,
)

logger = logging.getLogger(__name__)

SECTION_ORDER = (
    "introduction",
    "background",
    "methods",
    "experimental_setup",
    "results",
    "conclusion",
)
RELATED_WORK = "related_work"
ALL_SECTIONS = SECTION_ORDER + (RELATED_WORK,)

TITLE_PLACEHOLDER = "PAPER TITLE GOES HERE"

BEGIN_MARKER = "% SECTION:BEGIN {name}"
END_MARKER = "% SECTION:END {name}"

DEFAULT_COMPILE_COMMANDS = [
    ["pdflatex", "-interaction=nonstopmode", "{tex}"],
    ["pdflatex", "-interaction=nonstopmode", "{tex}"],
]

ERROR_EXCERPT_LINES = 30


def load_section_tips() -> dict[str, str]:
    path = resources.files("labloop") / "data" / "section_tips.json"
    return json.loads(path.read_text(encoding="utf-8"))


def splice_section(tex: str, section: str, text: str) -> str:
    begin = BEGIN_MARKER.format(name=section)
    end = END_MARKER.format(name=section)
    pattern = re.compile(
        re.escape(begin) + r"\n.*?" + re.escape(end), flags=re.DOTALL
    )
    if not pattern.search(tex):
        raise ValueError(f"template has no markers for section {section!r}")
    replacement = f"{begin}\n{text.rstrip()}\n{end}" if text.strip() else f"{begin}\n{end}"
    return pattern.sub(lambda _: replacement, tex, count=1)


def read_section(tex: str, section: str) -> str:
    begin = BEGIN_MARKER.format(name=section)
    end = END_MARKER.format(name=section)
    pattern = re.compile(re.escape(begin) + r"\n(.*?)" + re.escape(end), flags=re.DOTALL)
    match = pattern.search(tex)
    if not match:
        raise ValueError(f"template has no markers for section {section!r}")
    return match.group(1).strip()


def find_citation_keys(tex: str) -> set[str]:
    keys: set[str] = set()
    for match in re.finditer(r"\\cite[tp]?\*?(?:\[[^\]]*\]){0,2}\{([^}]*)\}", tex):
        for key in match.group(1).split(","):
            if key.strip():
                keys.add(key.strip())
    return keys


def bib_keys(bib_text: str) -> set[str]:
    return {m.group(1).strip() for m in re.finditer(r"@\w+\{([^,]+),", bib_text)}


def find_figure_paths(tex: str) -> list[str]:
    return [
        m.group(1).strip()
        for m in re.finditer(r"\\includegraphics(?:\[[^\]]*\])?\{([^}]*)\}", tex)
    ]


@dataclass
class ManuscriptState:
    """File-backed manuscript: the .tex and .bib under ``latex/`` are truth."""

    workspace: Path
    figures: list[str] = field(default_factory=list)
    figure_captions: dict[str, str] = field(default_factory=dict)
    compiled: bool = False
    compile_log_tail: str = ""
    refined: bool = False
    empty_related_work: bool = False

    @property
    def latex_dir(self) -> Path:
        return self.workspace / "latex"

    @property
    def tex_path(self) -> Path:
        return self.latex_dir / "template.tex"

    @property
    def bib_path(self) -> Path:
        return self.latex_dir / "references.bib"

    def tex(self) -> str:
        return self.tex_path.read_text(encoding="utf-8")

    def write_tex(self, text: str) -> None:
        self.tex_path.write_text(text, encoding="utf-8")

    def set_title(self, title: str) -> None:
        tex = self.tex()
        if TITLE_PLACEHOLDER in tex:
            self.write_tex(tex.replace(TITLE_PLACEHOLDER, title, 1))

    @property
    def sections(self) -> dict[str, str]:
        tex = self.tex()
        out: dict[str, str] = {}
        for name in ALL_SECTIONS:
            try:
                out[name] = read_section(tex, name)
            except ValueError:
                out[name] = ""
        return out

    def written_content_sections(self) -> list[str]:
        sections = self.sections
        return [s for s in SECTION_ORDER if sections[s]]

    @property
    def bibliography(self) -> set[str]:
        if not self.bib_path.exists():
            return set()
        return bib_keys(self.bib_path.read_text(encoding="utf-8"))

    def append_bibtex(self, entry: str, key: str) -> bool:
        """Append with key de-duplication; returns False for duplicates."""
        if key in self.bibliography:
            return False
        with open(self.bib_path, "a", encoding="utf-8") as fh:
            fh.write(entry.rstrip() + "\n\n")
        return True


def _render_figures(state: ManuscriptState) -> str:
    if not state.figures:
        return "(no figures were produced)"
    lines = []
    for fig in state.figures:
        caption = state.figure_captions.get(fig, "")
        lines.append(f"- {fig}: {caption}" if caption else f"- {fig}")
    return "\n".join(lines)


def _section_validator(section: str):
    def validate(envelope):
        text = envelope.payload.get("Text")
        if not isinstance(text, str):
            raise MalformedResponseError('section payload must carry a string "Text" field')
        declared = envelope.payload.get("Section")
        if declared is not None and declared != section:
            raise MalformedResponseError(
                f'payload is for section {declared!r}, expected {section!r}'
            )
        if "\\cite" in text:
            raise MalformedResponseError(
                "citations are not allowed at this stage; remove all \\cite commands"
            )

    return validate


def write_section(
    state: ManuscriptState,
    section: str,
    journal: LabJournal,
    tips: dict[str, str],
    conversation: Conversation,
) -> ManuscriptState:
    """Generate one content section and splice it between its markers.

    Sections go strictly in the fixed order; the journal must be nonempty;
    one self-reflection round is applied; the text may not cite anything
    yet.
    """
    if section not in SECTION_ORDER:
        raise ValueError(f"unknown content section {section!r}")
    if not journal.text().strip():
        raise ValueError("cannot write sections from an empty journal")
    if section not in tips:
        raise ValueError(f"no tips entry for section {section!r}")
    sections = state.sections
    for prior in SECTION_ORDER[: SECTION_ORDER.index(section)]:
        if not sections[prior]:
            raise ValueError(f"section {section!r} requested before {prior!r} was written")

    written = "\n\n".join(
        f"[{name}]\n{sections[name]}" for name in SECTION_ORDER if sections[name]
    )
    prompt = SECTION_WRITE_PROMPT.format(
        section=section,
        per_section_tips=tips[section],
        journal=journal.text(),
        figures=_render_figures(state),
        written_sections=written or "(none yet)",
    )
    validator = _section_validator(section)
    try:
        envelope = request_envelope(conversation, prompt, validator=validator)
        envelope, _ = run_reflection_loop(
            conversation,
            envelope.raw,
            ReflectionPolicy(max_rounds=1),
            SECTION_REFLECTION_PROMPT,
            validator=validator,
        )
    except MalformedResponseError as exc:
        raise StageFailure("writeup", f"section {section} generation failed: {exc}") from exc
    state.write_tex(splice_section(state.tex(), section, envelope.payload["Text"]))
    return state


def _valid_selections(payload: dict, results: list[SearchResult]) -> list[tuple[SearchResult, str]]:
    out = []
    for item in payload.get("Selected") or []:
        if not isinstance(item, dict):
            continue
        idx = item.get("Index")
        description = item.get("Description", "")
        if isinstance(idx, int) and 1 <= idx <= len(results):
            out.append((results[idx - 1], str(description)))
        else:
            logger.warning("citation selection with bad index ignored: %r", item)
    return out


def gather_citations(
    state: ManuscriptState,
    conversation: Conversation,
    literature: LiteratureClient,
    edit_session: EditSession,
    rounds: int = 20,
    results_limit: int = 10,
) -> ManuscriptState:
    """Bounded search-and-cite dialogue filling related work and references.

    Each selected paper's bibtex is appended (deduplicated by key) and its
    placement description drives one edit.  Search or edit failures degrade
    to fewer citations; they never abort the manuscript.
    """
    sections = state.sections
    missing = [s for s in SECTION_ORDER if not sections[s]]
    if missing:
        raise ValueError(f"citation gathering before sections written: {missing}")

    last_results: list[SearchResult] = []
    last_results_text = ""
    for round_no in range(1, rounds + 1):
        prompt = CITATION_ROUND_PROMPT.format(
            current_round=round_no,
            num_rounds=rounds,
            draft=state.tex(),
            last_query_results=last_results_text,
        )
        try:
            envelope = request_envelope(conversation, prompt)
        except MalformedResponseError as exc:
            logger.warning("citation round %d malformed: %s", round_no, exc)
            break
        selections = _valid_selections(envelope.payload, last_results)
        for result, description in selections:
            if not state.append_bibtex(result.bibtex, result.citation_key):
                logger.info("duplicate citation key %s skipped", result.citation_key)
                continue
            instruction = CITATION_EDIT_PROMPT.format(
                citation_key=result.citation_key,
                description=description,
                paper_title=result.title,
                paper_authors=", ".join(result.authors),
                paper_abstract=result.abstract,
            )
            try:
                edit_session.request_edit(instruction, max_repair_rounds=2)
            except EditExhaustedError as exc:
                logger.warning("citation edit for %s failed: %s", result.citation_key, exc)
        if "I am done" in envelope.thought:
            break
        query = envelope.payload.get("Query")
        if isinstance(query, str) and query.strip():
            try:
                last_results = literature.search(SearchQuery(query.strip(), limit=results_limit))
            except TransportError as exc:
                logger.warning("citation search failed (%s); continuing", exc)
                last_results = []
            last_results_text = render_results_for_prompt(last_results)
        elif not selections:
            logger.warning("citation round %d gave no query and no selections", round_no)
            break
    state.empty_related_work = not state.sections[RELATED_WORK]
    return state


def refine_manuscript(state: ManuscriptState, conversation: Conversation) -> ManuscriptState:
    """One final pass over every written section; failures keep prior text."""
    sections = state.sections
    missing = [s for s in SECTION_ORDER if not sections[s]]
    if missing:
        raise ValueError(f"refinement before sections written: {missing}")
    for section in ALL_SECTIONS:
        current = state.sections[section]
        if not current:
            continue
        prompt = REFINEMENT_PROMPT.format(section=section, text=current)
        text = conversation.ask(prompt)
        try:
            envelope = parse_envelope(text)
            _refine_validator(section)(envelope)
        except MalformedResponseError as exc:
            logger.warning("refinement of %s malformed; keeping prior text (%s)", section, exc)
            continue
        state.write_tex(splice_section(state.tex(), section, envelope.payload["Text"]))
    state.refined = True
    return state


def _refine_validator(section: str):
    def validate(envelope):
        text = envelope.payload.get("Text")
        if not isinstance(text, str) or not text.strip():
            raise MalformedResponseError('refinement payload must carry a non-empty "Text"')
        declared = envelope.payload.get("Section")
        if declared is not None and declared != section:
            raise MalformedResponseError(f"payload is for section {declared!r}")

    return validate


def builtin_lint(state: ManuscriptState) -> list[str]:
    """Deterministic diagnostics: citation, figure, and reference hygiene."""
    tex = state.tex()
    diagnostics = []
    bib = state.bibliography
    tex_lines = tex.split("\n")

    def line_of(needle: str) -> int:
        for i, line in enumerate(tex_lines, start=1):
            if needle in line:
                return i
        return 0

    for key in sorted(find_citation_keys(tex)):
        if key not in bib:
            diagnostics.append(
                f"template.tex:{line_of(key)}: citation key '{key}' has no bibliography entry"
            )
    for fig in find_figure_paths(tex):
        candidates = [state.latex_dir / fig, state.workspace / fig]
        if not any(c.exists() for c in candidates):
            diagnostics.append(
                f"template.tex:{line_of(fig)}: figure file '{fig}' does not exist in the workspace"
            )
    labels = {m.group(1) for m in re.finditer(r"\\label\{([^}]*)\}", tex)}
    for m in re.finditer(r"\\(?:ref|autoref|eqref)\{([^}]*)\}", tex):
        if m.group(1) not in labels:
            diagnostics.append(
                f"template.tex:{line_of(m.group(0))}: reference to undefined label '{m.group(1)}'"
            )
    return diagnostics


def _error_excerpt(log_text: str) -> str:
    lines = log_text.split("\n")
    for i, line in enumerate(lines):
        if line.startswith("! ") or line.strip().startswith("Error"):
            return "\n".join(lines[i : i + ERROR_EXCERPT_LINES])
    return "\n".join(lines[-ERROR_EXCERPT_LINES:])


def compile_manuscript(
    state: ManuscriptState,
    edit_session: EditSession,
    repair_rounds: int = 5,
    compile_commands: list[list[str]] | None = None,
    lint_commands: list[list[str]] | None = None,
    timeout_s: float = 300,
) -> Path | None:
    """Lint, compile, and repair up to ``repair_rounds`` times.

    Success means a PDF landed at ``paper.pdf`` in the workspace.  The full
    linter and compiler output of the last cycle is kept at
    ``latex/compile.log``.
    """
    if not state.refined:
        raise ValueError("compile requested before the refinement pass")
    commands = compile_commands if compile_commands is not None else DEFAULT_COMPILE_COMMANDS
    if not commands or not shutil.which(commands[0][0]):
        logger.warning("no usable LaTeX compiler (%s); skipping compilation",
                       commands[0][0] if commands else "none configured")
        state.compiled = False
        state.compile_log_tail = "compiler unavailable"
        return None

    log_path = state.latex_dir / "compile.log"
    for cycle in range(repair_rounds + 1):
        log_parts = []
        errors: list[str] = []

        diagnostics = builtin_lint(state)
        if lint_commands:
            for argv in lint_commands:
                result = _run_tool(argv, state, timeout_s)
                log_parts.append(result)
                if "error" in result.lower():
                    diagnostics.append(_error_excerpt(result))
        if diagnostics:
            log_parts.append("lint diagnostics:\n" + "\n".join(diagnostics))
            errors.extend(diagnostics)
        else:
            pdf_before = state.tex_path.with_suffix(".pdf")
            if pdf_before.exists():
                pdf_before.unlink()
            for argv in commands:
                output = _run_tool(argv, state, timeout_s)
                log_parts.append(output)
                if "\n! " in "\n" + output:
                    errors.append(_error_excerpt(output))
                    break
            if not errors and not pdf_before.exists():
                errors.append("compiler exited without producing a PDF")

        log_text = "\n\n".join(log_parts)
        log_path.write_text(log_text, encoding="utf-8")
        state.compile_log_tail = log_text[-2000:]

        if not errors:
            pdf_out = state.workspace / "paper.pdf"
            shutil.copy2(state.tex_path.with_suffix(".pdf"), pdf_out)
            state.compiled = True
            return pdf_out
        if cycle == repair_rounds:
            break
        excerpt = "\n\n".join(errors)[:4000]
        try:
            edit_session.request_edit(
                LATEX_REPAIR_PROMPT.format(error_excerpt=excerpt), max_repair_rounds=2
            )
        except EditExhaustedError as exc:
            logger.warning("compile repair cycle %d failed to apply edits: %s", cycle + 1, exc)
    state.compiled = False
    logger.warning("manuscript failed to compile after %d repair cycles", repair_rounds)
    return None


def _run_tool(argv_template: list[str], state: ManuscriptState, timeout_s: float) -> str:
    argv = [part.format(tex=state.tex_path.name) for part in argv_template]
    try:
        proc = subprocess.run(
            argv,
            cwd=str(state.latex_dir),
            capture_output=True,
            text=True,
            timeout=timeout_s,
        )
    except subprocess.TimeoutExpired:
        return f"! Error: {' '.join(argv)} timed out after {timeout_s}s"
    except OSError as exc:
        return f"! Error: could not run {' '.join(argv)}: {exc}"
    return proc.stdout + "\n" + proc.stderr
