import pytest

from IdeologyProject.config import ConcurrencyConfig, LANGUAGES, MockConfig, RetryConfig
from IdeologyProject.exception import ContentFilteredError, TemplateError
from IdeologyProject.mock import MockProvider
from IdeologyProject.providers import ChatClient
from IdeologyProject.store import ElicitationStore
from IdeologyProject.elicitation import (Dimension, ModularPrompt, ModularTemplate, Respondent, check_template,
                                         elicit, load_modular_prompt, load_templates, render_scale, render_stage2,
                                         run_campaign, run_modular, search_templates)
from IdeologyProject.validation import label_is_extractable

from conftest import make_topic


@pytest.fixture(scope="module")
def templates():
    return load_templates()


def _client(provider):
    return ChatClient({provider.model: provider}, RetryConfig(max_retries=0), ConcurrencyConfig())


def test_shipped_templates_cover_all_languages(templates):
    assert set(templates) == set(LANGUAGES)
    assert all(len(template.scale) == 5 and template.reset for template in templates.values())
    assert templates["ar"].direction == "rtl"


def test_render_scale_uses_language_punctuation(templates):
    english = templates["en"]
    assert render_scale(english.scale, english.scale_format) == \
        "'very negative', 'negative', 'neutral', 'positive' or 'very positive'"
    chinese = templates["zh"]
    assert render_scale(chinese.scale, chinese.scale_format) == "“非常负面”、“负面”、“中性”、“正面”、“非常正面”"


def test_check_template_rejects_bad_scale_and_missing_reset(templates):
    english = templates["en"]
    with pytest.raises(TemplateError):
        check_template(english.model_copy(update={"scale": english.scale[:4]}))
    with pytest.raises(TemplateError):
        check_template(english.model_copy(update={"reset": False}))
    with pytest.raises(TemplateError):
        check_template(english.model_copy(update={"stage2": "What about <VAR>? <SCALE>"}))


def test_stage2_prompt_embeds_reply_and_ends_with_assurance(templates, topic):
    reply = "Ada Example <VAR> was a diplomat."
    prompt = render_stage2(templates["en"], topic, reply)
    assert f'"{reply}"' in prompt
    assert prompt.endswith(templates["en"].assurance)
    assert prompt.count("Ada Example") == 3


def test_stage2_runs_in_a_fresh_conversation(templates, topic):
    provider = MockProvider("m", options=MockConfig(refusal_rate=0.0))
    record = elicit(Respondent(model_id="m", language="en"), topic, _client(provider), templates["en"])
    assert record.status == "complete"
    assert provider.calls == 2
    stage2 = provider.requests[1]
    assert [message.role for message in stage2.messages] == ["user"]
    assert record.stage1_text in stage2.messages[0].content
    assert record.stage2_text


def test_missing_localized_name_is_skipped(templates):
    provider = MockProvider("m")
    english_only = make_topic(languages=("en",))
    record = elicit(Respondent(model_id="m", language="zh"), english_only, _client(provider), templates["zh"])
    assert record.status == "skipped"
    assert provider.calls == 0


def test_stage1_refusal_stops_before_stage2(templates, topic):
    provider = MockProvider("m", script=[ContentFilteredError("blocked")])
    record = elicit(Respondent(model_id="m", language="en"), topic, _client(provider), templates["en"])
    assert record.status == "stage1_failed"
    assert record.stage1_outcome == "refusal"
    assert provider.calls == 1


def test_campaign_resumes_without_new_calls(tmp_path, templates):
    provider = MockProvider("m")
    client = _client(provider)
    respondents = [Respondent(model_id="m", language="en"), Respondent(model_id="m", language="zh")]
    topics = [make_topic("Q1"), make_topic("Q2", name="Grace Example")]
    store = ElicitationStore(tmp_path / "elicitations.jsonl")
    first = run_campaign(respondents, topics, client, store, templates, workers=2)
    assert first.pairs == 4 and first.sent == 4
    calls = provider.calls

    again = run_campaign(respondents, topics, client, ElicitationStore(tmp_path / "elicitations.jsonl"), templates)
    assert again.sent == 0 and again.reused == 4
    assert provider.calls == calls
    assert sum(again.totals.values()) == 4


def test_shipped_modular_prompt_loads():
    prompt = load_modular_prompt()
    assert {"stage1a", "stage1b", "stage2", "assurance", "scale"} <= set(prompt.dimensions)


def test_reset_without_stage1_cannot_complete(topic):
    provider = MockProvider("m")
    template = ModularTemplate(stage2="About <VAR>: <ANS>. Answer with <SCALE>.", reset=True,
                               scale=["negative", "neutral", "positive"])
    assert run_modular(template, topic, "m", _client(provider)) is None
    assert provider.calls == 0


def test_template_search_prefers_variant_with_valid_labels():
    def responder(request):
        text = request.messages[-1].content
        if "Rate" not in text:
            return "A short description."
        return "positive" if "ONLY ONE WORD." in text else "It is complicated."

    prompt = ModularPrompt(dimensions={
        "stage1a": Dimension(variants=[{"text": "Tell me about <VAR>."}]),
        "stage1b": Dimension(variants=[{"text": None}]),
        "stage2": Dimension(variants=[{"text": "Rate <VAR>. Answer with <SCALE>.", "reset": False}]),
        "assurance": Dimension(variants=[{"text": None}, {"text": "ONLY ONE WORD."}]),
        "scale": Dimension(variants=[{"labels": ["negative", "neutral", "positive"]}]),
    })
    provider = MockProvider("m", responder=responder)
    result = search_templates(prompt, [make_topic("Q1"), make_topic("Q2")], ["m"], _client(provider),
                              validity=label_is_extractable, rounds=2, workers=1)
    assert result.selected["assurance"] == 1
    assert result.ranked[0].invalid_rate == 0.0 and not result.ranked[0].flagged
    assert result.ranked[-1].flagged and result.ranked[-1].invalid_rate == 1.0
    assert len(result.rounds) == 2
    assert provider.calls == 8


def test_unexpected_failure_is_retried_on_the_next_run(tmp_path, templates, topic):
    broken = {"stage2": True}

    def responder(request):
        if broken["stage2"] and "very positive" in request.messages[-1].content:
            raise RuntimeError("connection reset mid-stream")
        return "Ada Example was a diplomat."

    provider = MockProvider("m", options=MockConfig(refusal_rate=0.0), responder=responder)
    respondents = [Respondent(model_id="m", language="en")]
    path = tmp_path / "elicitations.jsonl"
    first = run_campaign(respondents, [topic], _client(provider), ElicitationStore(path), templates, workers=1)
    assert first.errors == 1 and first.totals == {}

    broken["stage2"] = False
    again = run_campaign(respondents, [topic], _client(provider), ElicitationStore(path), templates, workers=1)
    assert again.sent == 1 and again.errors == 0
    assert again.totals == {"complete": 1}
