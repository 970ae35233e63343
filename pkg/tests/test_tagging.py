import json

import pytest

from IdeologyProject.config import ConcurrencyConfig, DecodingConfig, RetryConfig
from IdeologyProject.exception import ConfigurationError, TaggingFailure
from IdeologyProject.mock import MockProvider
from IdeologyProject.providers import ChatClient
from IdeologyProject.store import ExchangeStore, TagStore
from IdeologyProject.tagging import (TAXONOMY_SIZE, assignments_by_topic, build_tagging_prompt, load_taxonomy,
                                     parse_tag_response, tag_frequencies, tag_topics)

from conftest import make_topic

SMALL_TAXONOMY = [
    {"code": "101", "title": "Foreign Special Relationships: Positive", "description": "Favourable mentions.",
     "display_name": "Special Relationships +", "sentiment": "positive", "pair": "102"},
    {"code": "102", "title": "Foreign Special Relationships: Negative", "description": "Negative mentions.",
     "display_name": "Special Relationships -", "sentiment": "negative", "pair": "101"},
    {"code": "501", "title": "Environmental Protection", "description": "Preservation of nature.",
     "display_name": "Environmentalism", "sentiment": "neutral"},
]


@pytest.fixture
def taxonomy(tmp_path):
    path = tmp_path / "taxonomy.json"
    path.write_text(json.dumps(SMALL_TAXONOMY), encoding="utf-8")
    return load_taxonomy(path)


def _client(tmp_path, script):
    provider = MockProvider("judge", script=script)
    client = ChatClient({"judge": provider}, RetryConfig(max_retries=0), ConcurrencyConfig(),
                        store=ExchangeStore(tmp_path / "exchanges.jsonl"))
    return client, provider


def test_shipped_taxonomy_has_all_tags():
    taxonomy = load_taxonomy(expected_size=TAXONOMY_SIZE)
    assert len(taxonomy) == 61
    assert taxonomy.display_name("501") == "Environmentalism +"


def test_taxonomy_rejects_dangling_pair(tmp_path):
    broken = [dict(SMALL_TAXONOMY[0], pair="999")]
    path = tmp_path / "taxonomy.json"
    path.write_text(json.dumps(broken), encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_taxonomy(path)


def test_taxonomy_rejects_empty_file(tmp_path):
    path = tmp_path / "taxonomy.json"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_taxonomy(path)


def test_prompt_embeds_categories_and_english_summary(taxonomy):
    topic = make_topic(summary="Ada Example negotiated treaties.")
    prompt = build_tagging_prompt(topic, taxonomy)
    assert '"result": true/false' in prompt
    assert '"101": {' in prompt
    assert prompt.rstrip().endswith("Ada Example negotiated treaties.")
    assert "<SUMMARY>" not in prompt and "<CATEGORIES>" not in prompt


def test_prompt_needs_english_summary(taxonomy):
    topic = make_topic(languages=("zh",))
    with pytest.raises(TaggingFailure):
        build_tagging_prompt(topic, taxonomy)


def test_parse_accepts_fences_and_trailing_commas(taxonomy):
    raw = '```json\n{"categories": {"101": {"result": true}, "102": {"result": "false"}, "501": {"result": "True"},}}\n```'
    assert parse_tag_response(raw, taxonomy) == {"101", "501"}


def test_parse_drops_unknown_codes(taxonomy):
    raw = json.dumps({"categories": {"101": {"result": True}, "999": {"result": True}}})
    assert parse_tag_response(raw, taxonomy) == {"101"}


def test_parse_rejects_non_json(taxonomy):
    with pytest.raises(TaggingFailure):
        parse_tag_response("These tags apply: 101, 501", taxonomy)


def test_tagging_retries_unparseable_reply(tmp_path, taxonomy):
    good = json.dumps({"categories": {"501": {"result": True}}})
    client, provider = _client(tmp_path, ["not json", good])
    store = TagStore(tmp_path / "tags.jsonl")
    assignments = tag_topics([make_topic("Q1")], client, store, taxonomy, "judge", DecodingConfig(temperature=0.0),
                             workers=1)
    assert provider.calls == 2
    assert assignments[0].status == "ok" and assignments[0].tags == ["501"]


def test_tagging_failure_is_recorded_and_retried_on_request(tmp_path, taxonomy):
    client, provider = _client(tmp_path, ["no", "still no", "nope"])
    store = TagStore(tmp_path / "tags.jsonl")
    first = tag_topics([make_topic("Q1")], client, store, taxonomy, "judge", DecodingConfig(), workers=1)
    assert first[0].status == "failed" and first[0].tries == 3
    assert provider.calls == 3

    tag_topics([make_topic("Q1")], client, store, taxonomy, "judge", DecodingConfig(), workers=1)
    assert provider.calls == 3

    provider.script = [json.dumps({"categories": {"101": {"result": True}}})]
    retried = tag_topics([make_topic("Q1")], client, store, taxonomy, "judge", DecodingConfig(), workers=1,
                         retry_failed=True)
    assert provider.calls == 4
    assert retried[0].status == "ok" and retried[0].tags == ["101"]
    assert assignments_by_topic(retried) == {"Q1": {"101"}}


def test_tag_frequencies_count_ok_assignments(tmp_path, taxonomy):
    client, _ = _client(tmp_path, [json.dumps({"categories": {"101": {"result": True}, "501": {"result": True}}}),
                                   json.dumps({"categories": {"501": {"result": True}}})])
    store = TagStore(tmp_path / "tags.jsonl")
    assignments = tag_topics([make_topic("Q1"), make_topic("Q2")], client, store, taxonomy, "judge",
                             DecodingConfig(), workers=1)
    frequencies = tag_frequencies(assignments, taxonomy).set_index("code")["topics"].to_dict()
    assert frequencies == {"101": 1, "102": 0, "501": 2}
