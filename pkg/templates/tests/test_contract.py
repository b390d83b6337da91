"""Manifest contract conformance for the bundled templates.

The manifest JSON schema is the interface the pipeline consumes; these
checks validate it structurally without importing the pipeline package.
"""

import json

import pytest

from conftest import REQUIRED_FILES, template_dir

TEMPLATES = ["toy_diffusion", "toy_grokking"]


@pytest.mark.parametrize("name", TEMPLATES)
class TestManifestContract:
    def test_manifest_loads(self, name):
        manifest = json.loads((template_dir(name) / "manifest.json").read_text())
        assert manifest["name"] == name
        assert manifest["task_description"].strip()

    def test_command_has_out_dir_placeholder(self, name):
        manifest = json.loads((template_dir(name) / "manifest.json").read_text())
        assert "{out_dir}" in manifest["command"]
        assert manifest["command"].startswith("python experiment.py")

    def test_all_listed_files_exist(self, name):
        root = template_dir(name)
        manifest = json.loads((root / "manifest.json").read_text())
        for key in REQUIRED_FILES:
            assert key in manifest["files"], key
            assert (root / manifest["files"][key]).exists(), manifest["files"][key]
        assert (root / manifest["files"]["latex_dir"] / "template.tex").exists()

    def test_notes_seeded_empty(self, name):
        root = template_dir(name)
        manifest = json.loads((root / "manifest.json").read_text())
        assert (root / manifest["files"]["notes"]).read_text() == ""

    def test_seed_ideas_shape(self, name):
        root = template_dir(name)
        manifest = json.loads((root / "manifest.json").read_text())
        seeds = json.loads((root / manifest["files"]["seed_ideas"]).read_text())
        assert 1 <= len(seeds) <= 2
        for record in seeds:
            assert set(record) >= {
                "Name", "Title", "Experiment", "Interestingness", "Feasibility", "Novelty",
            }
            for key in ("Interestingness", "Feasibility", "Novelty"):
                assert 1 <= record[key] <= 10

    def test_plot_script_has_labels_dict(self, name):
        source = (template_dir(name) / "plot.py").read_text()
        assert "labels = {" in source

    def test_baseline_results_frozen(self, name):
        root = template_dir(name)
        manifest = json.loads((root / "manifest.json").read_text())
        assert (root / manifest["files"]["baseline_results"]).read_text().strip()


def test_nanolm_is_documentation_only():
    root = template_dir("nanolm")
    assert (root / "README.md").exists()
    assert (root / "manifest.stub.json").exists()
    assert not (root / "manifest.json").exists()
    assert not (root / "experiment.py").exists()
