import json
import os

import pytest

from labloop.errors import TransportError
from labloop.literature import (
    FixtureLiteratureClient,
    HttpLiteratureClient,
    SearchQuery,
    SearchResult,
    TokenBucket,
    fixture_filename,
    make_citation_key,
    normalize_query,
    parse_results,
    render_results_for_prompt,
    synthesize_bibtex,
)
from labloop.prompts import EMPTY_RESULTS_SENTINEL


def api_record(i, title=None, **overrides):
    record = {
        "title": title or f"Paper Number {i}",
        "authors": [{"name": f"Alice Smith{i}"}, {"name": "Bob Jones"}],
        "year": 2015 + i,
        "abstract": f"Abstract body {i}. " * 3,
        "venue": "TestConf",
    }
    record.update(overrides)
    return record


def fixture_body(n=10):
    return {"data": [api_record(i) for i in range(n)]}


class TestSearchQuery:
    def test_whitespace_only_query_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            SearchQuery("   \t ")

    def test_default_limit_is_ten(self):
        assert SearchQuery("transformers").limit == 10


class TestFixtureClient:
    def test_fixture_backed_query_returns_all_ten_in_order(self, tmp_path):
        client = FixtureLiteratureClient(tmp_path)
        client.record("my query", fixture_body(10))
        results = client.search(SearchQuery("my query"))
        assert len(results) == 10
        assert [r.title for r in results] == [f"Paper Number {i}" for i in range(10)]

    def test_normalization_shares_fixture(self, tmp_path):
        client = FixtureLiteratureClient(tmp_path)
        client.record("Deep   Learning", fixture_body(2))
        assert len(client.search(SearchQuery("  deep learning "))) == 2
        assert normalize_query("  A  B\tC ") == "a b c"
        assert fixture_filename("A  B") == fixture_filename("a b")

    def test_missing_fixture_is_empty_not_error(self, tmp_path):
        client = FixtureLiteratureClient(tmp_path)
        assert client.search(SearchQuery("nothing recorded")) == []

    def test_limit_respected(self, tmp_path):
        client = FixtureLiteratureClient(tmp_path)
        client.record("q", fixture_body(10))
        assert len(client.search(SearchQuery("q", limit=3))) == 3

    def test_order_stable_across_calls(self, tmp_path):
        client = FixtureLiteratureClient(tmp_path)
        client.record("q", fixture_body(5))
        first = client.search(SearchQuery("q"))
        second = client.search(SearchQuery("q"))
        assert first == second


class TestParseResults:
    def test_missing_bibtex_synthesized(self):
        results = parse_results({"data": [api_record(0)]}, 10)
        assert results[0].bibtex.startswith("@article{")
        assert results[0].citation_key in results[0].bibtex
        assert "Paper Number 0" in results[0].bibtex

    def test_api_bibtex_preferred(self):
        record = api_record(0, citationStyles={"bibtex": "@inproceedings{smith2020attn,\n title={X}}"})
        results = parse_results({"data": [record]}, 10)
        assert results[0].citation_key == "smith2020attn"
        assert results[0].bibtex.startswith("@inproceedings")

    def test_citation_keys_unique_within_result_set(self):
        body = {"data": [api_record(0, title="Same Title"), api_record(0, title="Same Title")]}
        results = parse_results(body, 10)
        assert results[0].citation_key != results[1].citation_key

    def test_untitled_records_skipped(self):
        untitled = api_record(0)
        untitled["title"] = ""
        body = {"data": [untitled, api_record(1)]}
        results = parse_results(body, 10)
        assert len(results) == 1

    def test_make_citation_key(self):
        assert make_citation_key("Attention Is All You Need", ("Ashish Vaswani",), 2017) == (
            "vaswani2017attention"
        )


class TestRendering:
    def test_empty_list_renders_sentinel(self):
        assert render_results_for_prompt([]) == EMPTY_RESULTS_SENTINEL

    def test_one_result_has_numbered_entry_and_abstract(self):
        results = parse_results({"data": [api_record(3)]}, 10)
        text = render_results_for_prompt(results)
        assert text.startswith("1: Paper Number 3.")
        assert "Abstract body 3." in text
        assert "Alice Smith3" in text

    def test_rendering_deterministic_golden(self, tmp_path):
        results = parse_results(fixture_body(10), 10)
        text1 = render_results_for_prompt(results)
        text2 = render_results_for_prompt(results)
        assert text1 == text2
        assert text1.count("\n\n") == 9
        for i in range(1, 11):
            assert f"{i}: Paper Number {i-1}." in text1

    def test_abstract_truncated_to_budget(self):
        record = api_record(0, abstract="x" * 5000)
        results = parse_results({"data": [record]}, 10)
        text = render_results_for_prompt(results, abstract_budget=100)
        assert "x" * 97 + "..." in text
        assert "x" * 101 not in text

    def test_injective_on_title_abstract(self):
        bodies = [api_record(0, title="A", abstract="one"), api_record(0, title="A", abstract="two")]
        r1, r2 = parse_results({"data": bodies}, 10)
        assert render_results_for_prompt([r1]) != render_results_for_prompt([r2])


class FakeHttp:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def __call__(self, url, params=None, headers=None, timeout=None):
        self.calls += 1
        status, body = self.responses.pop(0)

        class Resp:
            status_code = status

            def json(self_inner):
                return body

        return Resp()


class TestHttpClient:
    def test_rate_limit_backs_off_then_succeeds(self, monkeypatch):
        fake = FakeHttp([(429, {}), (200, fixture_body(2))])
        monkeypatch.setattr("labloop.literature.requests.get", fake)
        sleeps = []
        client = HttpLiteratureClient(sleeper=sleeps.append, rate_limiter=TokenBucket(rate=1e9))
        results = client.search(SearchQuery("q"))
        assert len(results) == 2
        assert fake.calls == 2
        assert sleeps  # backed off at least once

    def test_bounded_retries_then_error(self, monkeypatch):
        fake = FakeHttp([(500, {})] * 5)
        monkeypatch.setattr("labloop.literature.requests.get", fake)
        client = HttpLiteratureClient(
            max_retries=3, sleeper=lambda s: None, rate_limiter=TokenBucket(rate=1e9)
        )
        with pytest.raises(TransportError):
            client.search(SearchQuery("q"))
        assert fake.calls == 3

    def test_zero_results_is_empty_list(self, monkeypatch):
        fake = FakeHttp([(200, {"data": []})])
        monkeypatch.setattr("labloop.literature.requests.get", fake)
        client = HttpLiteratureClient(rate_limiter=TokenBucket(rate=1e9))
        assert client.search(SearchQuery("obscure nonsense")) == []


class TestTokenBucket:
    def test_serializes_burst(self):
        clock_value = [0.0]
        sleeps = []

        bucket = TokenBucket(
            rate=2.0, burst=1, clock=lambda: clock_value[0], sleeper=sleeps.append
        )
        bucket.acquire()  # uses the single token
        bucket.acquire()  # must wait 0.5s
        assert sleeps == [pytest.approx(0.5)]


@pytest.mark.network
@pytest.mark.skipif(
    not os.environ.get("LABLOOP_NETWORK_TESTS"), reason="live API smoke test is opt-in"
)
def test_live_search_smoke():
    client = HttpLiteratureClient(api_key=os.environ.get("S2_API_KEY", ""))
    results = client.search(SearchQuery("attention is all you need"))
    assert results
    assert "attention" in results[0].title.lower()
