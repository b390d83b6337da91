import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

TEMPLATES_ROOT = Path(__file__).resolve().parent.parent

REQUIRED_FILES = ("experiment", "plot", "seed_ideas", "baseline_results", "notes", "latex_dir")


def template_dir(name: str) -> Path:
    return TEMPLATES_ROOT / name


def make_workspace(tmp_path: Path, name: str, config: dict | None = None) -> Path:
    """Copy a template's runtime files into a scratch workspace."""
    src = template_dir(name)
    ws = tmp_path / f"{name}_ws"
    ws.mkdir()
    for fname in ("experiment.py", "plot.py"):
        shutil.copy2(src / fname, ws / fname)
    if config is not None:
        (ws / "experiment_config.json").write_text(json.dumps(config))
    return ws


def run_experiment(ws: Path, out_dir: str = "run_0", timeout: float = 600.0):
    """Invoke the template exactly as the pipeline would."""
    return subprocess.run(
        [sys.executable, "experiment.py", f"--out_dir={out_dir}"],
        cwd=ws,
        capture_output=True,
        text=True,
        timeout=timeout,
    )


def run_plot(ws: Path, timeout: float = 300.0):
    return subprocess.run(
        [sys.executable, "plot.py"], cwd=ws, capture_output=True, text=True, timeout=timeout
    )


def load_results(ws: Path, out_dir: str = "run_0") -> dict:
    return json.loads((ws / out_dir / "final_info.json").read_text())
