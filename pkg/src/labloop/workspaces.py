"""Template manifests and per-idea workspace instantiation.

A template is a directory with a ``manifest.json`` naming the experiment
entry script, plot script, seed ideas, baseline results, notes file, and
LaTeX skeleton.  Each idea gets a fresh workspace populated from the
template; everything the pipeline produces for that idea stays inside it.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

STUB_TEMPLATE_NAME = "stub_echo"


@dataclass(frozen=True)
class TemplateManifest:
    name: str
    root: Path
    task_description: str
    command: str
    plot_command: str
    files: dict[str, str]
    timeouts: dict[str, float] = field(default_factory=dict)

    @property
    def experiment_file(self) -> Path:
        return self.root / self.files["experiment"]

    @property
    def plot_file(self) -> Path:
        return self.root / self.files["plot"]

    @property
    def seed_ideas_file(self) -> Path:
        return self.root / self.files["seed_ideas"]

    @property
    def baseline_results_file(self) -> Path:
        return self.root / self.files["baseline_results"]

    @property
    def notes_file(self) -> Path:
        return self.root / self.files["notes"]

    @property
    def latex_dir(self) -> Path:
        return self.root / self.files["latex_dir"]

    def baseline_results(self) -> str:
        return self.baseline_results_file.read_text(encoding="utf-8")

    def task_code(self) -> str:
        return self.experiment_file.read_text(encoding="utf-8")

    def experiment_timeout_s(self, default: float) -> float:
        return float(self.timeouts.get("experiment_s", default))

    def plot_timeout_s(self, default: float) -> float:
        return float(self.timeouts.get("plot_s", default))


def load_manifest(template_dir: str | Path) -> TemplateManifest:
    root = Path(template_dir).resolve()
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"template manifest not found: {manifest_path}")
    data = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest = TemplateManifest(
        name=data["name"],
        root=root,
        task_description=data["task_description"],
        command=data["command"],
        plot_command=data.get("plot_command", "python plot.py"),
        files=data["files"],
        timeouts=data.get("timeouts", {}),
    )
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: TemplateManifest) -> None:
    if "{out_dir}" not in manifest.command:
        raise ValueError(f"template {manifest.name}: command lacks the {{out_dir}} placeholder")
    required = ("experiment", "plot", "seed_ideas", "baseline_results", "notes", "latex_dir")
    for key in required:
        if key not in manifest.files:
            raise ValueError(f"template {manifest.name}: manifest missing file entry {key!r}")
        path = manifest.root / manifest.files[key]
        if not path.exists():
            raise ValueError(f"template {manifest.name}: listed file missing: {path}")
    if not (manifest.latex_dir / "template.tex").exists():
        raise ValueError(f"template {manifest.name}: latex dir lacks template.tex")


def stub_template_dir() -> Path:
    """Location of the packaged stub template used by the test suite."""
    return Path(str(resources.files("labloop") / "data" / STUB_TEMPLATE_NAME))


def instantiate_workspace(manifest: TemplateManifest, workspace: str | Path) -> Path:
    """Copy the template's seed files into a fresh idea workspace."""
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    for key in ("experiment", "plot", "baseline_results", "notes"):
        src = manifest.root / manifest.files[key]
        shutil.copy2(src, workspace / manifest.files[key])
    # optional extra runtime files the template needs (e.g. status scripts)
    for extra in manifest.root.iterdir():
        if extra.name in ("manifest.json", *manifest.files.values()):
            continue
        if extra.is_file():
            shutil.copy2(extra, workspace / extra.name)
    dest_latex = workspace / manifest.files["latex_dir"]
    if dest_latex.exists():
        shutil.rmtree(dest_latex)
    shutil.copytree(manifest.latex_dir, dest_latex)
    return workspace
