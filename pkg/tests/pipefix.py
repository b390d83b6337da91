"""A complete content-keyed fixture set for end-to-end pipeline runs.

Every response is determined by the request content (never by call order),
which makes the fixtures equivalent to a recorded replay transcript: the
same artifacts fall out under any scheduling, any interruption point, and
any parallelism width.
"""

import json
import re

from labloop.protocol import parse_envelope
from labloop.prompts import EXPERIMENTS_DONE_PHRASE
from labloop.review import ReviewerConfig
from labloop.pipeline import RunConfig

from conftest import ScriptedBackend, envelope_text, idea_payload, review_payload

STUB_COMPILER_SOURCE = '''\
import sys
from pathlib import Path

tex = Path("template.tex").read_text()
if "UNDEFINEDMACRO" in tex:
    print("! Undefined control sequence.")
    sys.exit(1)
Path("template.pdf").write_bytes(b"%PDF-1.4 stub pdf\\n%%EOF")
print("Output written on template.pdf (1 page).")
'''

GENERATED_IDEAS = [
    idea_payload(
        name="metric_echo_probe",
        title="Probing Metric Echo Stability",
        Experiment="Change the canned metrics slightly and check the echoed results stay consistent.",
    ),
    idea_payload(
        name="latency_floor_probe",
        title="A Latency Floor for Stub Experiments",
        Experiment="Measure how quickly the stub returns across repeated runs.",
    ),
]

SECTION_TEXTS = {
    "introduction": "This report studies a scripted stub experiment end to end.",
    "background": "Stub experiments echo canned metrics deterministically.",
    "methods": "We apply a single configuration change and rerun the stub.",
    "experimental_setup": "One run with the default seed; metrics read from the results file.",
    "results": "The run reproduced the canned metrics exactly.\n"
    "\\includegraphics{../fig_samples.png}",
    "conclusion": "The pipeline executes the stub template end to end.",
}

EXPERIMENT_EDIT = (
    "I will annotate the experiment before running it.\n\n"
    "experiment.py\n```\n<<<<<<< SEARCH\n"
    "CANNED_METRICS = {\n"
    "=======\n"
    "# run plan: single echo run\n"
    "CANNED_METRICS = {\n"
    ">>>>>>> REPLACE\n```\n"
)

RELATED_WORK_KEY = "researcher2021prior"

CITATION_EDIT = (
    "Adding the citation to related work.\n\n"
    "latex/template.tex\n```\n<<<<<<< SEARCH\n"
    "% SECTION:BEGIN related_work\n% SECTION:END related_work\n"
    "=======\n"
    "% SECTION:BEGIN related_work\n"
    "Prior work studied scripted baselines \\cite{" + RELATED_WORK_KEY + "}.\n"
    "% SECTION:END related_work\n"
    ">>>>>>> REPLACE\n```\n"
)

CITATION_FIXTURE_BODY = {
    "data": [
        {
            "title": "Prior Related Study",
            "authors": [{"name": "Casey Researcher"}],
            "year": 2021,
            "abstract": "An earlier study of scripted experiment baselines.",
            "venue": "StubConf",
        }
    ]
}


def reflect_done(last_user, request):
    """Repeat the previous payload exactly and declare the loop finished."""
    for turn in reversed(request.turns):
        if turn.role == "assistant":
            try:
                payload = parse_envelope(turn.content).payload
            except Exception:
                continue
            return envelope_text(payload, thought="Nothing to improve. I am done")
    raise AssertionError("reflection requested with no prior assistant envelope")


def refinement_echo(last_user, request):
    match = re.search(r'The current text is:\n"""\n(.*?)\n"""', last_user, re.DOTALL)
    section = re.search(r"refine only the (\w+) section", last_user).group(1)
    return envelope_text({"Section": section, "Text": match.group(1)}, thought="Already tight.")


def make_generation_rule(idea_payloads):
    def respond(last_user, request):
        for payload in idea_payloads:
            if f'"Name": "{payload["Name"]}"' not in last_user:
                return envelope_text(payload, header="NEW IDEA JSON:")
        raise AssertionError("fixture ran out of idea payloads")

    return respond


def make_novelty_rule(novelty_by_name):
    def respond(last_user, request):
        for name, is_novel in novelty_by_name.items():
            if f'"Name": "{name}"' in last_user:
                verdict = "Decision made: novel." if is_novel else "Decision made: not novel."
                return envelope_text({}, thought=f"I compared carefully. {verdict}")
        raise AssertionError(f"novelty round for unknown idea: {last_user[:200]}")

    return respond


def build_pipeline_backend(
    idea_payloads=None,
    novelty_by_name=None,
    review_overall=6,
    experiment_edit=EXPERIMENT_EDIT,
    plot_edit="The labels dictionary is already correct; no edits.",
):
    idea_payloads = idea_payloads if idea_payloads is not None else GENERATED_IDEAS
    if novelty_by_name is None:
        novelty_by_name = {"baseline_rerun": False}
        novelty_by_name.update({p["Name"]: True for p in idea_payloads})

    rules = [
        # reflections first: their prompts are the most distinctive
        ("carefully consider the quality, novelty", reflect_done),
        ("carefully consider the accuracy and soundness", reflect_done),
        ("criticize your current version of the section", reflect_done),
        ("criticize and refine only the", refinement_echo),
        ("Come up with the next impactful", make_generation_rule(idea_payloads)),
        ("You have this idea:", make_novelty_rule(novelty_by_name)),
        ("Your goal is to implement the following idea", experiment_edit),
        ("Run 1 completed", f"The single run is enough. {EXPERIMENTS_DONE_PHRASE}"),
        ("Please modify `plot.py`", plot_edit),
        ("You are collecting references", citation_rounds),
        ("Add the following reference", CITATION_EDIT),
        ("Here is the paper you are asked to review",
         envelope_text(review_payload(overall=review_overall), header="REVIEW JSON:")),
        ("Review 1/", envelope_text(review_payload(overall=review_overall), header="REVIEW JSON:")),
    ]
    for section, text in SECTION_TEXTS.items():
        rules.append(
            (
                f"please fill in the {section} section",
                envelope_text({"Section": section, "Text": text}, header="SECTION JSON:"),
            )
        )
    return ScriptedBackend(rules=rules)


def citation_rounds(last_user, request):
    if "Prior Related Study" in last_user:
        payload = {
            "Selected": [{"Index": 1, "Description": "Contrast with the stub baseline."}]
        }
        return envelope_text(payload, thought="Selected one reference. I am done")
    return envelope_text({"Query": "scripted experiment baselines"}, thought="Searching.")


def make_run_config(tmp_path, template_dir, idea_count=1, parallelism=1, **overrides):
    tmp_path.mkdir(parents=True, exist_ok=True)
    compiler = tmp_path / "fake_pdflatex.py"
    if not compiler.exists():
        compiler.write_text(STUB_COMPILER_SOURCE)
    defaults = dict(
        template=str(template_dir),
        output_root=str(tmp_path / "out"),
        idea_count=idea_count,
        parallelism=parallelism,
        models={"default": "fixture-model"},
        backend={"kind": "replay", "transcripts": []},
        idea_reflections=3,
        novelty_rounds=10,
        max_runs=5,
        max_attempts=4,
        experiment_timeout_s=60,
        plot_timeout_s=30,
        citation_rounds=20,
        latex_repair_rounds=5,
        reviewer=ReviewerConfig(reflections=1, ensemble_size=5, decision_threshold=6),
        compile_commands=[["python3", str(compiler)]],
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def make_literature(tmp_path):
    from labloop.literature import FixtureLiteratureClient

    client = FixtureLiteratureClient(tmp_path / "lit_fixtures")
    client.record("scripted experiment baselines", CITATION_FIXTURE_BODY)
    return client
