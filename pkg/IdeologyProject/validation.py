import unicodedata
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel

from IdeologyProject.logger import logging
from IdeologyProject.exception import ProviderError
from IdeologyProject.config import DATA_DIR, DecodingConfig, JudgeConfig
from IdeologyProject.corpus import Topic
from IdeologyProject.elicitation import ElicitationRecord, PromptTemplate
from IdeologyProject.providers import ChatClient, ChatMessage, ChatRequest
from IdeologyProject.store import ValidationStore
from IdeologyProject.utils import fill_placeholders

VERDICTS = ("yes", "no", "refusal")
UNKNOWN = "unknown"
ENGLISH_SCALE = ("very negative", "negative", "neutral", "positive", "very positive")
JUDGE_TEMPLATE_FILES = ("stage1_system", "stage1_user", "stage2_system", "stage2_user")



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class JudgeTemplates(BaseModel):
    stage1_system: str
    stage1_user: str
    stage2_system: str
    stage2_user: str


class Stage1Verdict(BaseModel):
    value: Literal["yes", "no", "refusal"]
    judge_model: Optional[str] = None
    raw: str = ""
    flagged: bool = False


class Stage2Label(BaseModel):
    value: str
    localized: Optional[str] = None
    method: Literal["exact_match", "judge", "unavailable"]
    judge_model: Optional[str] = None
    raw: str = ""


class ValidationRecord(BaseModel):
    record_id: str
    respondent: str
    model_id: str
    language: str
    topic_id: str
    template_version: str = ""
    verdict: Stage1Verdict
    label: Stage2Label


class ValidationSummary(BaseModel):
    validated: int
    reused: int
    judge_failures: int
    verdicts: dict[str, int]
    methods: dict[str, int]
    flagged: int


def load_judge_templates(judge_dir=DATA_DIR / "judge") -> JudgeTemplates:
    """Judge prompts read byte-for-byte; no stripping."""
    texts = {}
    for name in JUDGE_TEMPLATE_FILES:
        with open(Path(judge_dir) / f"{name}.txt", "r", encoding="utf-8", newline="") as handle:
            texts[name] = handle.read()
    return JudgeTemplates(**texts)



####################################################################################################################
                                                ## Label normalization ##
####################################################################################################################



def _strip_punctuation(text: str) -> str:
    start, end = 0, len(text)
    while start < end and (unicodedata.category(text[start]).startswith("P") or text[start].isspace()):
        start += 1
    while end > start and (unicodedata.category(text[end - 1]).startswith("P") or text[end - 1].isspace()):
        end -= 1
    return text[start:end]


def label_key(text: str) -> str:
    """Comparison key: NFC, casefolded, single spaces, no surrounding punctuation, no combining marks."""
    text = unicodedata.normalize("NFC", text).casefold()
    text = " ".join(text.split())
    text = "".join(char for char in text if unicodedata.category(char) != "Mn")
    return _strip_punctuation(text)


def normalize_label(text: Optional[str], scale: list[str] | tuple[str, ...]) -> Optional[str]:
    if not text:
        return None
    key = label_key(text)
    for label in scale:
        if label_key(label) == key:
            return label
    return None


def label_is_extractable(text: Optional[str], scale: list[str]) -> bool:
    return normalize_label(text, scale) is not None


def render_options(labels: list[str] | tuple[str, ...]) -> str:
    return ", ".join(f"'{label}'" for label in labels)



####################################################################################################################
                                                ## Judges ##
####################################################################################################################



def _judge_request(judge_model: str, system: str, user: str, decoding: DecodingConfig) -> ChatRequest:
    return ChatRequest(model=judge_model,
                       messages=[ChatMessage(role="system", content=system), ChatMessage(role="user", content=user)],
                       max_tokens=decoding.max_tokens, temperature=decoding.temperature)


def validate_stage1(stage1_text: Optional[str], summary: str, client: ChatClient, judge_model: str,
                    templates: JudgeTemplates, decoding: DecodingConfig = DecodingConfig(max_tokens=1024, temperature=0.0),
                    respondent: str = "", topic_id: str = "") -> Stage1Verdict:
    """Does the Stage-1 description match the reference summary? Empty descriptions are refusals."""
    if not stage1_text or not stage1_text.strip():
        return Stage1Verdict(value="refusal")
    user = fill_placeholders(templates.stage1_user, {"<WIKIPEDIA>": summary, "<STAGE 1 RESPONSE>": stage1_text})
    request = _judge_request(judge_model, templates.stage1_system, user, decoding)
    raw = ""
    for nonce in (0, 1):
        reply = client.complete(judge_model, request, respondent=respondent, topic_id=topic_id, stage="judge-stage1", nonce=nonce)
        if not reply.ok:
            raise ProviderError(f"Description judge {judge_model} failed: {reply.outcome} {reply.error}")
        raw = reply.text
        verdict = normalize_label(raw, VERDICTS)
        if verdict is not None:
            return Stage1Verdict(value=verdict, judge_model=judge_model, raw=raw)
        logging.warning(f"Description judge answered {raw[:80]!r} for {respondent} on {topic_id}")
    return Stage1Verdict(value="no", judge_model=judge_model, raw=raw, flagged=True)


def extract_stage2_label(stage2_text: Optional[str], scale: list[str], client: ChatClient, judge_model: str,
                         templates: JudgeTemplates, decoding: DecodingConfig = DecodingConfig(max_tokens=1024, temperature=0.0),
                         respondent: str = "", topic_id: str = "") -> Stage2Label:
    """Exact match first; only unmatched text reaches the label judge. Values are English scale labels."""
    if not stage2_text:
        return Stage2Label(value=UNKNOWN, method="unavailable")
    localized = normalize_label(stage2_text, scale)
    if localized is not None:
        return Stage2Label(value=ENGLISH_SCALE[scale.index(localized)], localized=localized, method="exact_match",
                           raw=stage2_text)

    options = render_options(list(scale) + [UNKNOWN])
    system = fill_placeholders(templates.stage2_system, {"<SCALE>": options})
    user = fill_placeholders(templates.stage2_user, {"<SCALE>": options,
                                                     "<STAGE 2 RESPONSE>": stage2_text})
    reply = client.complete(judge_model, _judge_request(judge_model, system, user, decoding),
                            respondent=respondent, topic_id=topic_id, stage="judge-stage2")
    if not reply.ok:
        raise ProviderError(f"Label judge {judge_model} failed: {reply.outcome} {reply.error}")
    localized = normalize_label(reply.text, scale)
    if localized is None:
        return Stage2Label(value=UNKNOWN, method="judge", judge_model=judge_model, raw=reply.text)
    return Stage2Label(value=ENGLISH_SCALE[scale.index(localized)], localized=localized, method="judge",
                       judge_model=judge_model, raw=reply.text)


def validate_record(record: ElicitationRecord, topic: Topic, template: PromptTemplate, client: ChatClient,
                    judges: JudgeConfig, judge_templates: JudgeTemplates, decoding: DecodingConfig) -> ValidationRecord:
    verdict = validate_stage1(record.stage1_text, topic.summaries.get(record.language, ""), client, judges.description,
                              judge_templates, decoding, respondent=record.respondent, topic_id=record.topic_id)
    label = extract_stage2_label(record.stage2_text, template.scale, client, judges.label, judge_templates, decoding,
                                 respondent=record.respondent, topic_id=record.topic_id)
    return ValidationRecord(record_id=record.record_id, respondent=record.respondent, model_id=record.model_id,
                            language=record.language, topic_id=record.topic_id,
                            template_version=record.template_version, verdict=verdict, label=label)


def validate_campaign(records: list[ElicitationRecord], topics: list[Topic], templates: dict[str, PromptTemplate],
                      client: ChatClient, store: ValidationStore, judges: JudgeConfig, judge_templates: JudgeTemplates,
                      decoding: DecodingConfig = DecodingConfig(max_tokens=1024, temperature=0.0),
                      workers: int = 8) -> ValidationSummary:
    """Validate every non-skipped record once; judge failures are left unvalidated for the next run."""
    by_id = {topic.id: topic for topic in topics}
    eligible = [record for record in records if record.status != "skipped" and record.topic_id in by_id]
    pending = [record for record in eligible if not store.has(record.record_id)]
    logging.info(f"Validating {len(pending)} of {len(eligible)} records "
                 f"(description judge {judges.description}, label judge {judges.label})")

    def work(record: ElicitationRecord) -> bool:
        try:
            validation = validate_record(record, by_id[record.topic_id], templates[record.language], client, judges,
                                         judge_templates, decoding)
        except ProviderError as e:
            logging.error(f"Validation of {record.record_id} postponed: {e}")
            return False
        store.save_validation(validation.model_dump(mode="json"))
        return True

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(work, pending))

    wanted = {record.record_id for record in eligible}
    verdicts: dict[str, int] = {}
    methods: dict[str, int] = {}
    flagged = 0
    for row in store.fetch_validations():
        if row["record_id"] not in wanted:
            continue
        verdicts[row["verdict"]["value"]] = verdicts.get(row["verdict"]["value"], 0) + 1
        methods[row["label"]["method"]] = methods.get(row["label"]["method"], 0) + 1
        flagged += int(row["verdict"]["flagged"])
    failures = outcomes.count(False)
    summary = ValidationSummary(validated=outcomes.count(True), reused=len(eligible) - len(pending),
                                judge_failures=failures, verdicts=verdicts, methods=methods, flagged=flagged)
    if failures:
        logging.warning(f"{failures} records could not be validated")
    logging.info(f"Validation finished: verdicts {verdicts}, label methods {methods}")
    return summary


def fetch_validations(store: ValidationStore) -> list[ValidationRecord]:
    return [ValidationRecord.model_validate(row) for row in store.fetch_validations()]
