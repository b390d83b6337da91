import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labloop.errors import MalformedResponseError
from labloop.ideation import (
    Idea,
    IdeaArchive,
    check_novelty,
    generate_idea,
    validate_idea_payload,
)
from labloop.literature import SearchQuery
from labloop.llm import ModelSettings
from labloop.prompts import DECISION_NOT_NOVEL, DECISION_NOVEL

from conftest import ScriptedBackend, envelope_text, idea_payload, make_client

SETTINGS = ModelSettings("test-model", 0.7)

SEED = Idea(
    name="batch_size_grokking",
    title="Batch Size Scheduling and Delayed Generalization",
    experiment="Ramp the batch size during training and measure steps until validation accuracy saturates.",
    interestingness=6,
    feasibility=4,
    novelty_score=4,
    novel=True,
)


def seed_archive():
    return IdeaArchive([SEED], seed_count=1)


class TestIdeaType:
    def test_name_rule_enforced(self):
        with pytest.raises(ValueError, match="lowercase"):
            Idea("Bad Name", "T", "E", 5, 5, 5)

    def test_score_range_enforced(self):
        with pytest.raises(ValueError, match="outside"):
            Idea("ok_name", "T", "E", 11, 5, 5)

    def test_record_roundtrip(self):
        again = Idea.from_record(SEED.to_record())
        assert again == SEED


class TestArchive:
    def test_names_unique(self):
        archive = seed_archive()
        with pytest.raises(ValueError, match="duplicate"):
            archive.add(SEED)

    def test_free_name_suffixes(self):
        archive = seed_archive()
        assert archive.free_name("fresh") == "fresh"
        assert archive.free_name("batch_size_grokking") == "batch_size_grokking_2"

    def test_render_newest_last(self):
        archive = seed_archive()
        second = Idea("second_idea", "T2", "E2", 5, 5, 5)
        archive.add(second)
        text = archive.render_for_prompt()
        assert text.index("batch_size_grokking") < text.index("second_idea")
        assert '"novel": true' in text

    def test_save_load_roundtrip(self, tmp_path):
        archive = seed_archive()
        archive.add(Idea("another_one", "T", "E", 3, 4, 5))
        path = tmp_path / "ideas.json"
        archive.save(path)
        loaded = IdeaArchive.load(path)
        assert loaded.ideas == archive.ideas
        assert loaded.seed_count == 1

    def test_seed_file_loading(self, tmp_path):
        path = tmp_path / "seed_ideas.json"
        path.write_text(json.dumps([SEED.to_record()]))
        archive = IdeaArchive.from_seed_file(path)
        assert archive.seed_count == 1
        assert archive.ideas[0].name == "batch_size_grokking"


def idea_response(**overrides):
    return envelope_text(idea_payload(**overrides), header="NEW IDEA JSON:")


def done_reflection(**overrides):
    return envelope_text(
        idea_payload(**overrides), thought="Looks solid. I am done", header="NEW IDEA JSON:"
    )


class TestGenerateIdea:
    def test_generates_new_name(self):
        backend = ScriptedBackend(
            queue=[idea_response(name="fresh_direction"), done_reflection(name="fresh_direction")]
        )
        archive = seed_archive()
        idea = generate_idea(make_client(backend), SETTINGS, archive, "task", "code")
        assert idea.name == "fresh_direction"
        assert idea.name not in {"batch_size_grokking"}
        assert idea.novel is None

    def test_requires_seed(self):
        backend = ScriptedBackend()
        with pytest.raises(ValueError, match="seed"):
            generate_idea(make_client(backend), SETTINGS, IdeaArchive(), "task", "code")

    def test_replay_fixture_reproduces_recorded_idea(self):
        # frozen session: generation plus an immediate "I am done" reflection
        payload = idea_payload(
            name="optimizer_grokking",
            title="Optimization Dynamics and Delayed Generalization",
            Interestingness=9,
            Feasibility=8,
            Novelty=8,
        )
        backend = ScriptedBackend(
            queue=[
                envelope_text(payload, header="NEW IDEA JSON:"),
                envelope_text(payload, thought="I am done", header="NEW IDEA JSON:"),
            ]
        )
        idea = generate_idea(make_client(backend), SETTINGS, seed_archive(), "task", "code")
        assert idea.name == "optimizer_grokking"
        assert (idea.interestingness, idea.feasibility, idea.novelty_score) == (9, 8, 8)

    def test_out_of_range_score_rejected_with_diagnostic(self):
        bad = idea_response(Novelty=11)
        backend = ScriptedBackend(queue=[bad, bad])
        with pytest.raises(MalformedResponseError, match="1 to 10"):
            generate_idea(make_client(backend), SETTINGS, seed_archive(), "task", "code")
        assert backend.calls == 2  # one re-prompt, then failure

    def test_duplicate_name_suffixed(self):
        backend = ScriptedBackend(
            queue=[
                idea_response(name="batch_size_grokking"),
                done_reflection(name="batch_size_grokking"),
            ]
        )
        idea = generate_idea(make_client(backend), SETTINGS, seed_archive(), "task", "code")
        assert idea.name == "batch_size_grokking_2"

    def test_reflection_budget_bounded(self):
        responses = [idea_response()] + [idea_response() for _ in range(10)]
        backend = ScriptedBackend(queue=responses)
        generate_idea(make_client(backend), SETTINGS, seed_archive(), "task", "code", reflections=3)
        assert backend.calls == 1 + 3

    def test_archive_not_mutated(self):
        backend = ScriptedBackend(queue=[idea_response(), done_reflection()])
        archive = seed_archive()
        before = list(archive.ideas)
        generate_idea(make_client(backend), SETTINGS, archive, "task", "code")
        assert archive.ideas == before

    def test_prompt_includes_archive_rendering(self):
        backend = ScriptedBackend(queue=[idea_response(), done_reflection()])
        archive = seed_archive()
        generate_idea(make_client(backend), SETTINGS, archive, "task", "code")
        prompt = backend.requests[0].turns[-1].content
        assert archive.render_for_prompt() in prompt


class CountingLiterature:
    def __init__(self, results_by_query=None):
        self.results_by_query = results_by_query or {}
        self.calls = 0
        self.queries = []

    def search(self, q: SearchQuery):
        self.calls += 1
        self.queries.append(q.query)
        return self.results_by_query.get(q.query, [])


def novelty_response(thought, query=None):
    payload = {"Query": query} if query is not None else {}
    return envelope_text(payload, thought=thought)


class TestCheckNovelty:
    def run_check(self, responses, rounds=10, literature=None):
        backend = ScriptedBackend(queue=list(responses))
        literature = literature or CountingLiterature()
        idea = check_novelty(
            make_client(backend),
            SETTINGS,
            SEED,
            literature,
            "task",
            "code",
            rounds=rounds,
        )
        return idea, backend, literature

    def test_immediate_not_novel_no_searches(self):
        idea, backend, lit = self.run_check([novelty_response(f"Overlap found. {DECISION_NOT_NOVEL}")])
        assert idea.novel is False
        assert backend.calls == 1
        assert lit.calls == 0

    def test_two_queries_then_novel(self):
        responses = [
            novelty_response("Need to check literature.", query="batch size training dynamics"),
            novelty_response("One more check.", query="delayed generalization optimizer"),
            novelty_response(f"Nothing overlaps. {DECISION_NOVEL}"),
        ]
        idea, backend, lit = self.run_check(responses)
        assert idea.novel is True
        assert backend.calls == 3
        assert lit.calls == 2

    def test_exhaustion_defaults_to_not_novel(self):
        responses = [novelty_response("still unsure", query=f"query {i}") for i in range(10)]
        idea, backend, lit = self.run_check(responses, rounds=10)
        assert idea.novel is False
        assert backend.calls == 10
        assert lit.calls == 10

    def test_call_and_search_bounds(self):
        responses = [novelty_response("hmm", query=f"q{i}") for i in range(50)]
        idea, backend, lit = self.run_check(responses, rounds=10)
        assert backend.calls <= 10
        assert lit.calls <= 10

    def test_missing_query_reprompted_once_then_not_novel(self):
        responses = [
            novelty_response("no decision, no query"),
            novelty_response("still no decision, still no query"),
        ]
        idea, backend, lit = self.run_check(responses)
        assert idea.novel is False
        assert backend.calls == 2
        assert lit.calls == 0

    def test_results_injected_into_next_round(self):
        from labloop.literature import parse_results

        results = parse_results(
            {"data": [{"title": "Prior Art Paper", "authors": [{"name": "A"}], "year": 2020, "abstract": "Close match."}]},
            10,
        )
        lit = CountingLiterature({"the exact query": results})
        responses = [
            novelty_response("searching", query="the exact query"),
            novelty_response(f"Found it. {DECISION_NOT_NOVEL}"),
        ]
        idea, backend, _ = self.run_check(responses, literature=lit)
        second_prompt = backend.requests[1].turns[-1].content
        assert "Prior Art Paper" in second_prompt
        assert idea.novel is False


@settings(max_examples=30, deadline=None)
@given(dup_count=st.integers(min_value=1, max_value=6))
def test_name_uniqueness_after_colliding_generations(dup_count):
    archive = seed_archive()
    for _ in range(dup_count):
        backend = ScriptedBackend(
            queue=[idea_response(name="same_name"), done_reflection(name="same_name")]
        )
        idea = generate_idea(make_client(backend), SETTINGS, archive, "t", "c")
        archive.add(idea)
    names = [i.name for i in archive.ideas]
    assert len(names) == len(set(names))
