import json
import shutil
from pathlib import Path

import pytest

from labloop.cli import main
from labloop.llm import LlmClient, TranscriptWriter, UsageLedger
from labloop.pipeline import run_pipeline
from labloop.review import ReviewerConfig, review_ensemble
from labloop.workspaces import stub_template_dir

from pipefix import (
    CITATION_FIXTURE_BODY,
    build_pipeline_backend,
    make_literature,
    make_run_config,
)

SAMPLE_DATASET = Path(__file__).parent / "data" / "sample_dataset"


@pytest.fixture
def recorded_run(tmp_path):
    """Record a full pipeline run, yielding transcripts for CLI replay."""
    config = make_run_config(tmp_path / "rec", stub_template_dir(), idea_count=1)
    literature = make_literature(tmp_path / "rec")
    summary = run_pipeline(
        config, backend=build_pipeline_backend(), literature=literature
    )
    assert summary.completed_papers == 1
    transcripts = sorted(
        str(p) for p in Path(config.output_root).rglob("*transcript.jsonl")
    )
    return config, transcripts, tmp_path / "rec" / "lit_fixtures"


def write_replay_config(tmp_path, recorded, output_name="cli_out"):
    base_config, transcripts, lit_dir = recorded
    record = base_config.to_record()
    record["output_root"] = str(tmp_path / output_name)
    record["backend"] = {
        "kind": "replay",
        "transcripts": transcripts,
        "literature": {"kind": "fixtures", "fixture_dir": str(lit_dir)},
    }
    config_path = tmp_path / "replay_config.json"
    config_path.write_text(json.dumps(record, indent=1))
    return config_path, Path(record["output_root"])


class TestRunCommand:
    def test_run_from_replay_transcripts(self, tmp_path, recorded_run, capsys):
        config_path, out_root = write_replay_config(tmp_path, recorded_run)
        code = main(["run", "--config", str(config_path)])
        captured = capsys.readouterr()
        assert code == 0
        assert "Total Ideas" in captured.out
        assert (out_root / "ideas.json").exists()
        assert (out_root / "1_metric_echo_probe" / "review.json").exists()

    def test_exit_code_nonzero_without_completed_papers(self, tmp_path, recorded_run, capsys):
        config_path, out_root = write_replay_config(tmp_path, recorded_run)
        record = json.loads(config_path.read_text())
        record["compile_commands"] = [["definitely_not_a_compiler_xyz"]]
        record["output_root"] = str(tmp_path / "nocompile_out")
        config_path.write_text(json.dumps(record))
        code = main(["run", "--config", str(config_path)])
        assert code == 1

    def test_csv_format(self, tmp_path, recorded_run, capsys):
        config_path, out_root = write_replay_config(tmp_path, recorded_run, "csv_out")
        code = main(["run", "--config", str(config_path), "--format", "csv"])
        captured = capsys.readouterr()
        assert code == 0
        assert captured.out.startswith("Total Ideas,Novel Ideas,")


class TestResumeCommand:
    def test_resume_complete_run(self, tmp_path, recorded_run, capsys):
        config_path, out_root = write_replay_config(tmp_path, recorded_run, "resume_out")
        assert main(["run", "--config", str(config_path)]) == 0
        capsys.readouterr()
        assert main(["resume", str(out_root)]) == 0
        assert "Total Ideas" in capsys.readouterr().out

    def test_resume_missing_dir_fails(self, tmp_path, capsys):
        code = main(["resume", str(tmp_path / "missing")])
        assert code == 1


class TestReviewCommand:
    def test_review_pdf_via_replay(self, tmp_path, capsys):
        from reportlab.pdfgen import canvas

        pdf_path = tmp_path / "paper.pdf"
        c = canvas.Canvas(str(pdf_path))
        c.drawString(72, 720, "A minimal manuscript for review.")
        c.showPage()
        c.save()

        # record the ensemble on this exact text, then replay through the CLI
        from labloop.pdftext import extract_pdf_text

        text = extract_pdf_text(pdf_path)
        backend = build_pipeline_backend()
        transcript_path = tmp_path / "review_transcript.jsonl"
        client = LlmClient(backend, transcript=TranscriptWriter(transcript_path))
        config = make_run_config(tmp_path, stub_template_dir())
        review_ensemble(client, config.settings_for("reviewer"), text, config.reviewer)

        record = config.to_record()
        record["backend"] = {"kind": "replay", "transcripts": [str(transcript_path)]}
        config_path = tmp_path / "review_config.json"
        config_path.write_text(json.dumps(record))

        out_path = tmp_path / "review.json"
        code = main(
            ["review", str(pdf_path), "--config", str(config_path), "--output", str(out_path)]
        )
        captured = capsys.readouterr()
        assert code == 0
        printed = json.loads(captured.out)
        assert printed["decision"] == "accept"
        assert out_path.exists()


class TestEvalReviewerCommand:
    def test_offline_dataset_report(self, capsys):
        code = main(
            [
                "eval-reviewer",
                "--dataset",
                str(SAMPLE_DATASET),
                "--threshold",
                "6",
                "--resamples",
                "200",
                "--baselines",
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        for column in ("Balanced Acc", "Accuracy", "F1 Score", "AUC", "FPR", "FNR"):
            assert column in captured.out
        assert "calibrated @ 6" in captured.out
        assert "always_reject" in captured.out
        assert "random" in captured.out

    def test_csv_output(self, capsys):
        code = main(
            [
                "eval-reviewer",
                "--dataset",
                str(SAMPLE_DATASET),
                "--resamples",
                "150",
                "--format",
                "csv",
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        assert captured.out.startswith("Reviewer,Balanced Acc,")

    def test_missing_scores_without_config_fails(self, tmp_path, capsys):
        record = {"paper_id": "x", "ground_truth": "accept", "human_scores": [5, 6], "text": "t"}
        (tmp_path / "x.json").write_text(json.dumps(record))
        code = main(["eval-reviewer", "--dataset", str(tmp_path)])
        assert code == 2
