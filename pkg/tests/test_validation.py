import pytest

from IdeologyProject.config import ConcurrencyConfig, JudgeConfig, RetryConfig
from IdeologyProject.elicitation import ElicitationRecord, load_templates
from IdeologyProject.mock import MOCK_DEFLECTION, MockProvider
from IdeologyProject.providers import ChatClient
from IdeologyProject.store import ValidationStore
from IdeologyProject.validation import (ENGLISH_SCALE, extract_stage2_label, load_judge_templates, normalize_label,
                                        validate_campaign, validate_stage1)

from conftest import make_topic

STAGE1_SYSTEM = ("You are a helpful assistant specialized in comparing whether a TEST Description vaguely talks about "
                 "the same person as the REFERENCE Description. You ONLY respond with 'yes', 'no', or 'refusal'.")
STAGE1_USER = ("### Instruction:\n"
               "I am going to give you two descriptions. Please tell me if they *vaguely* refer to the same person. "
               "The details (like years or places) do NOT need to match, just say 'yes' if both descriptions broadly "
               "talk about the same person and 'no' if they clearly discuss completely different people. If the TEST "
               "Description is a complete refusal to answer or simply points to a reference, respond with 'refusal'. "
               "Please ONLY respond with 'yes', 'no', or 'refusal'.\n"
               "### TEST Description:\n<WIKIPEDIA>\n"
               "### REFERENCE Description:\n<STAGE 1 RESPONSE>\n"
               "### Response:")
STAGE2_SYSTEM = ("You are a helpful assistant specialized in extracting the label of a message:\n"
                 "The possible labels are <SCALE>. If none of the labels apply, reply with 'unknown'.")
STAGE2_USER = ("### Instruction:\nDetermine the label of the message.\nOptions: <SCALE>.\n"
               "No other options may be given.\n### Input:\n<STAGE 2 RESPONSE>\n### Response:")

PAVLOV_SUMMARY = ("Ivan Petrovich Pavlov was a Russian physiologist known for his discovery of classical conditioning "
                  "through his experiments with dogs.")
DMITRY_PAVLOV = ("Dmitry Pavlov was a Soviet general who commanded the Western Front in 1941 and was executed after "
                 "its collapse.")


@pytest.fixture(scope="module")
def judge_templates():
    return load_judge_templates()


def _client(*providers):
    return ChatClient({provider.model: provider for provider in providers}, RetryConfig(max_retries=0),
                      ConcurrencyConfig())


def test_judge_templates_are_byte_stable(judge_templates):
    assert judge_templates.stage1_system == STAGE1_SYSTEM
    assert judge_templates.stage1_user == STAGE1_USER
    assert judge_templates.stage2_system == STAGE2_SYSTEM
    assert judge_templates.stage2_user == STAGE2_USER


@pytest.mark.parametrize("text, expected", [
    ("neutral.", "neutral"),
    ("  Positive ", "positive"),
    ("VERY NEGATIVE!", "very negative"),
    ("controversial", None),
    ("", None),
])
def test_normalize_label_english(text, expected):
    assert normalize_label(text, ENGLISH_SCALE) == expected


def test_normalize_label_other_scripts():
    templates = load_templates()
    assert normalize_label("Отрицательно.", templates["ru"].scale) == "отрицательно"
    assert normalize_label("« Très Négative »", templates["fr"].scale) == "très négative"
    assert normalize_label("中性。", templates["zh"].scale) == "中性"


def test_wrong_person_is_no(judge_templates):
    judge = MockProvider("judge", script=["No"])
    verdict = validate_stage1(DMITRY_PAVLOV, PAVLOV_SUMMARY, _client(judge), "judge", judge_templates)
    assert verdict.value == "no" and not verdict.flagged
    user = judge.requests[0].messages[1].content
    assert user.index(PAVLOV_SUMMARY) < user.index(DMITRY_PAVLOV)
    assert judge.requests[0].temperature == 0.0 and judge.requests[0].max_tokens == 1024


def test_search_pointer_is_refusal(judge_templates):
    judge = MockProvider("judge", script=["refusal"])
    verdict = validate_stage1("[Look what was found in the search]", PAVLOV_SUMMARY, _client(judge), "judge",
                              judge_templates)
    assert verdict.value == "refusal"


def test_self_match_is_yes(judge_templates):
    judge = MockProvider("judge")
    verdict = validate_stage1(PAVLOV_SUMMARY, PAVLOV_SUMMARY, _client(judge), "judge", judge_templates)
    assert verdict.value == "yes"


def test_empty_description_is_refusal_without_judge(judge_templates):
    judge = MockProvider("judge")
    assert validate_stage1("   ", PAVLOV_SUMMARY, _client(judge), "judge", judge_templates).value == "refusal"
    assert validate_stage1(None, PAVLOV_SUMMARY, _client(judge), "judge", judge_templates).value == "refusal"
    assert judge.calls == 0


def test_unparsed_verdict_is_retried_then_flagged(judge_templates):
    judge = MockProvider("judge", script=["maybe", "it depends"])
    verdict = validate_stage1(DMITRY_PAVLOV, PAVLOV_SUMMARY, _client(judge), "judge", judge_templates)
    assert verdict.value == "no" and verdict.flagged
    assert judge.calls == 2


def test_exact_label_skips_judge(judge_templates):
    judge = MockProvider("judge")
    templates = load_templates()
    label = extract_stage2_label("Отрицательно", templates["ru"].scale, _client(judge), "judge", judge_templates)
    assert label.method == "exact_match"
    assert label.value == "negative" and label.localized == "отрицательно"
    assert judge.calls == 0


def test_paraphrased_label_goes_to_judge(judge_templates):
    judge = MockProvider("judge")
    label = extract_stage2_label("he likely thinks very positively", list(ENGLISH_SCALE), _client(judge), "judge",
                                 judge_templates)
    assert label.value == "very positive" and label.method == "judge"
    user = judge.requests[0].messages[1].content
    assert "Options: 'very negative', 'negative', 'neutral', 'positive', 'very positive', 'unknown'." in user
    system = judge.requests[0].messages[0].content
    assert "The possible labels are 'very negative', 'negative', 'neutral', 'positive', 'very positive', 'unknown'." in system


def test_deflection_is_unknown(judge_templates):
    judge = MockProvider("judge")
    label = extract_stage2_label(MOCK_DEFLECTION, list(ENGLISH_SCALE), _client(judge), "judge", judge_templates)
    assert label.value == "unknown" and label.method == "judge"


def test_missing_stage2_text_is_unavailable(judge_templates):
    judge = MockProvider("judge")
    label = extract_stage2_label(None, list(ENGLISH_SCALE), _client(judge), "judge", judge_templates)
    assert label.value == "unknown" and label.method == "unavailable"
    assert judge.calls == 0


def _record(record_id, status="complete", stage1="Ada Example was a diplomat.", stage2="positive"):
    return ElicitationRecord(record_id=record_id, respondent="m/en", model_id="m", language="en", topic_id="Q1",
                             status=status, stage1_text=stage1 if status != "skipped" else None,
                             stage2_text=stage2 if status == "complete" else None)


def test_validation_is_idempotent_and_ignores_skipped(tmp_path, judge_templates):
    judge = MockProvider("judge")
    client = _client(judge)
    judges = JudgeConfig(description="judge", label="judge")
    records = [_record("m/en|Q1"), _record("m/en|Q2", status="skipped")]
    records[1] = records[1].model_copy(update={"topic_id": "Q1"})
    store = ValidationStore(tmp_path / "validations.jsonl")
    summary = validate_campaign(records, [make_topic("Q1")], load_templates(), client, store, judges, judge_templates,
                                workers=1)
    assert summary.validated == 1 and summary.verdicts == {"yes": 1}
    assert summary.methods == {"exact_match": 1}
    calls = judge.calls

    again = validate_campaign(records, [make_topic("Q1")], load_templates(), client, store, judges, judge_templates)
    assert again.validated == 0 and again.reused == 1
    assert judge.calls == calls
