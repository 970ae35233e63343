import re
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import pandas as pd
from pydantic import BaseModel, Field

from IdeologyProject.logger import logging
from IdeologyProject.exception import ConfigurationError, TaggingFailure
from IdeologyProject.config import DATA_DIR, DecodingConfig
from IdeologyProject.corpus import Topic
from IdeologyProject.providers import ChatClient, ChatMessage, ChatRequest
from IdeologyProject.store import TagStore
from IdeologyProject.utils import fill_placeholders, read_json

TAXONOMY_SIZE = 61
MAX_TAGGING_RETRIES = 2
TAGGING_TEMPLATE_PATH = DATA_DIR / "judge" / "tagging_user.txt"



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class TagDef(BaseModel):
    code: str
    title: str
    description: str
    display_name: str
    sentiment: Literal["positive", "negative", "neutral"]
    pair: Optional[str] = None

    @property
    def stem(self) -> str:
        return self.display_name.rstrip("+-").strip()


class TagAssignment(BaseModel):
    topic_id: str
    tags: list[str] = Field(default_factory=list)
    judge_model: str
    raw_response: Optional[str] = None
    status: Literal["ok", "failed"] = "ok"
    tries: int = 0
    error: Optional[str] = None


class Taxonomy:
    """Ordered, code-indexed tag definitions."""

    def __init__(self, tags: list[TagDef]):
        self.tags = list(tags)
        self.by_code = {tag.code: tag for tag in self.tags}

    @property
    def codes(self) -> list[str]:
        return [tag.code for tag in self.tags]

    def display_name(self, code: str) -> str:
        return self.by_code[code].display_name

    def __contains__(self, code: str) -> bool:
        return code in self.by_code

    def __iter__(self):
        return iter(self.tags)

    def __len__(self) -> int:
        return len(self.tags)


def load_taxonomy(path=DATA_DIR / "taxonomy.json", expected_size: Optional[int] = None) -> Taxonomy:
    path = Path(path)
    if not path.is_file() or not path.read_text(encoding="utf-8").strip():
        raise ConfigurationError(f"Taxonomy file missing or empty: {path}")
    raw = read_json(path)
    if not isinstance(raw, list) or not raw:
        raise ConfigurationError(f"Taxonomy {path} holds no tags")
    try:
        tags = [TagDef.model_validate(entry) for entry in raw]
    except ValueError as e:
        raise ConfigurationError(f"Invalid tag definition in {path}: {e}") from e

    codes = [tag.code for tag in tags]
    duplicates = sorted({code for code in codes if codes.count(code) > 1})
    if duplicates:
        raise ConfigurationError(f"Duplicate tag codes in {path}: {duplicates}")
    taxonomy = Taxonomy(tags)
    for tag in tags:
        if tag.pair is None:
            continue
        partner = taxonomy.by_code.get(tag.pair)
        if partner is None:
            raise ConfigurationError(f"Tag {tag.code} pairs with unknown code {tag.pair}")
        if partner.pair != tag.code or partner.stem != tag.stem:
            raise ConfigurationError(f"Tags {tag.code} and {tag.pair} are not a consistent pair")
    if expected_size is not None and len(taxonomy) != expected_size:
        raise ConfigurationError(f"Taxonomy {path} has {len(taxonomy)} tags, expected {expected_size}")
    logging.info(f"Taxonomy loaded from {path}: {len(taxonomy)} tags")
    return taxonomy


def build_tagging_prompt(topic: Topic, taxonomy: Taxonomy, template: Optional[str] = None) -> str:
    summary = topic.summaries.get("en", "")
    if not summary.strip():
        raise TaggingFailure(f"Topic {topic.id} has no English summary to tag")
    template = template if template is not None else TAGGING_TEMPLATE_PATH.read_text(encoding="utf-8")
    categories = {tag.code: {"title": tag.title, "description": tag.description, "result": "true/false"}
                  for tag in taxonomy}
    rendered = json.dumps({"categories": categories}, ensure_ascii=False, indent=4)
    rendered = rendered.replace('"result": "true/false"', '"result": true/false')
    return fill_placeholders(template, {"<CATEGORIES>": rendered, "<SUMMARY>": summary})


def _extract_json_object(raw: str) -> dict:
    text = raw.strip()
    fenced = re.search(r"```(?:json)?\s*(.*?)```", text, flags=re.DOTALL)
    if fenced:
        text = fenced.group(1)
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise TaggingFailure("no JSON object in tagging reply")
    candidate = text[start:end + 1]
    for attempt in (candidate, re.sub(r",\s*([}\]])", r"\1", candidate)):
        try:
            parsed = json.loads(attempt)
            if isinstance(parsed, dict):
                return parsed
        except json.JSONDecodeError:
            continue
    raise TaggingFailure("tagging reply is not valid JSON")


def _is_true(value) -> bool:
    if isinstance(value, dict):
        value = value.get("result")
    if isinstance(value, str):
        return value.strip().lower() == "true"
    return value is True


def parse_tag_response(raw: str, taxonomy: Taxonomy) -> set[str]:
    """Codes whose result is true; unknown codes are dropped with a warning."""
    parsed = _extract_json_object(raw or "")
    categories = parsed.get("categories")
    if not isinstance(categories, dict):
        raise TaggingFailure("tagging reply has no 'categories' object")
    codes = set()
    for code, value in categories.items():
        if code not in taxonomy:
            logging.warning(f"Tagging reply named unknown code {code!r}, dropped")
            continue
        if _is_true(value):
            codes.add(code)
    return codes


def _tag_one(topic: Topic, taxonomy: Taxonomy, client: ChatClient, judge_model: str, decoding: DecodingConfig,
             template: str, first_nonce: int = 0) -> TagAssignment:
    try:
        prompt = build_tagging_prompt(topic, taxonomy, template)
    except TaggingFailure as e:
        return TagAssignment(topic_id=topic.id, judge_model=judge_model, status="failed", error=str(e))
    request = ChatRequest(model=judge_model, messages=[ChatMessage(role="user", content=prompt)],
                          max_tokens=decoding.max_tokens, temperature=decoding.temperature)
    error = "no reply"
    raw = None
    tries = first_nonce
    for nonce in range(first_nonce, first_nonce + MAX_TAGGING_RETRIES + 1):
        tries = nonce + 1
        reply = client.complete(judge_model, request, respondent=judge_model, topic_id=topic.id, stage="tagging", nonce=nonce)
        if not reply.ok:
            error = f"provider {reply.outcome}: {reply.error}"
            break
        raw = reply.text
        try:
            codes = parse_tag_response(raw, taxonomy)
            return TagAssignment(topic_id=topic.id, tags=sorted(codes), judge_model=judge_model, raw_response=raw,
                                 tries=tries)
        except TaggingFailure as e:
            error = str(e)
            logging.warning(f"Tagging reply for {topic.id} unparseable (try {tries}): {e}")
    return TagAssignment(topic_id=topic.id, judge_model=judge_model, raw_response=raw, status="failed", error=error,
                         tries=tries)


def tag_topics(topics: list[Topic], client: ChatClient, store: TagStore, taxonomy: Taxonomy, judge_model: str,
               decoding: DecodingConfig, workers: int = 8, retry_failed: bool = False,
               template: Optional[str] = None) -> list[TagAssignment]:
    """Tag every topic from its English summary; completed topics are never re-sent.

    A retried topic continues the nonce sequence of its earlier tries, so cached unparseable
    replies are not replayed.
    """
    template = template if template is not None else TAGGING_TEMPLATE_PATH.read_text(encoding="utf-8")
    pending = []
    for topic in topics:
        existing = store.fetch_assignment(topic.id)
        if existing is None:
            pending.append((topic, 0))
        elif retry_failed and existing.get("status") == "failed":
            pending.append((topic, existing.get("tries", 0)))
    logging.info(f"Tagging {len(pending)} of {len(topics)} topics with {judge_model}")

    def work(job: tuple[Topic, int]) -> TagAssignment:
        topic, first_nonce = job
        try:
            assignment = _tag_one(topic, taxonomy, client, judge_model, decoding, template, first_nonce)
        except Exception as e:
            logging.error(f"Tagging {topic.id} crashed: {e}")
            assignment = TagAssignment(topic_id=topic.id, judge_model=judge_model, status="failed", error=str(e))
        store.save_assignment(assignment.model_dump(mode="json"))
        return assignment

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(work, pending))

    assignments = fetch_assignments(store, [topic.id for topic in topics])
    failed = sum(1 for assignment in assignments if assignment.status == "failed")
    if failed:
        logging.warning(f"Tagging finished with {failed} failed topics")
    return assignments


def fetch_assignments(store: TagStore, topic_ids: Optional[list[str]] = None) -> list[TagAssignment]:
    records = store.fetch_assignments()
    if topic_ids is not None:
        wanted = set(topic_ids)
        records = [record for record in records if record["topic_id"] in wanted]
    return [TagAssignment.model_validate(record) for record in sorted(records, key=lambda r: r["topic_id"])]


def assignments_by_topic(assignments: list[TagAssignment]) -> dict[str, set[str]]:
    return {assignment.topic_id: set(assignment.tags) for assignment in assignments if assignment.status == "ok"}


def tag_frequencies(assignments: list[TagAssignment], taxonomy: Taxonomy) -> pd.DataFrame:
    """Number of tagged topics per code, in taxonomy order."""
    counts = {code: 0 for code in taxonomy.codes}
    for assignment in assignments:
        if assignment.status != "ok":
            continue
        for code in assignment.tags:
            if code in counts:
                counts[code] += 1
    return pd.DataFrame({"code": list(counts),
                         "display_name": [taxonomy.display_name(code) for code in counts],
                         "topics": list(counts.values())})
