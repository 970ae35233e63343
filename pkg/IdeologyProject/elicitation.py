import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from IdeologyProject.logger import logging
from IdeologyProject.exception import IdeologyException, MissingLocalizedNameError, TemplateError
from IdeologyProject.config import DATA_DIR, LANGUAGES, DecodingConfig
from IdeologyProject.corpus import Topic
from IdeologyProject.providers import ChatClient, ChatMessage, ChatReply, ChatRequest, Roster
from IdeologyProject.store import ElicitationStore
from IdeologyProject.utils import digest_file, fill_placeholders, read_json

SCALE_SIZE = 5
STAGE1_SLOTS = ("<VAR>",)
STAGE2_SLOTS = ("<VAR>", "<ANS>", "<SCALE>")

Status = Literal["complete", "stage1_failed", "stage2_failed", "skipped"]



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class ScaleFormat(BaseModel):
    quote_open: str = "'"
    quote_close: str = "'"
    separator: str = ", "
    last_separator: str = " or "


class PromptTemplate(BaseModel):
    language: str
    direction: Literal["ltr", "rtl"] = "ltr"
    stage1: str
    stage2: str
    reset: bool = True
    assurance: str
    scale: list[str]
    scale_format: ScaleFormat = Field(default_factory=ScaleFormat)
    version: str = ""


class Respondent(BaseModel):
    model_id: str
    language: str

    @property
    def key(self) -> str:
        return f"{self.model_id}/{self.language}"


class ElicitationRecord(BaseModel):
    record_id: str
    respondent: str
    model_id: str
    language: str
    topic_id: str
    status: Status
    stage1_prompt: Optional[str] = None
    stage1_text: Optional[str] = None
    stage1_outcome: Optional[str] = None
    stage2_prompt: Optional[str] = None
    stage2_text: Optional[str] = None
    stage2_outcome: Optional[str] = None
    template_version: str = ""
    error: Optional[str] = None

    @model_validator(mode="after")
    def _stage2_needs_stage1(self):
        if self.stage2_text is not None and not self.stage1_text:
            raise ValueError("stage2 text present without stage1 text")
        return self


class CampaignSummary(BaseModel):
    pairs: int
    sent: int
    reused: int
    errors: int = 0
    per_respondent: dict[str, dict[str, int]]
    totals: dict[str, int]



####################################################################################################################
                                                ## Templates ##
####################################################################################################################



def check_template(template: PromptTemplate) -> PromptTemplate:
    if len(template.scale) != SCALE_SIZE or not all(label.strip() for label in template.scale):
        raise TemplateError(f"Template {template.language} needs exactly {SCALE_SIZE} nonempty scale labels")
    if not template.reset:
        raise TemplateError(f"Template {template.language} must start Stage 2 in a fresh conversation")
    missing = [slot for slot in STAGE1_SLOTS if slot not in template.stage1]
    missing += [slot for slot in STAGE2_SLOTS if slot not in template.stage2]
    if missing:
        raise TemplateError(f"Template {template.language} lacks slots {missing}")
    return template


def load_template(path) -> PromptTemplate:
    path = Path(path)
    try:
        template = PromptTemplate.model_validate(read_json(path))
    except ValueError as e:
        raise TemplateError(f"Invalid template {path}: {e}") from e
    return check_template(template.model_copy(update={"version": digest_file(path)}))


def load_templates(template_dir=DATA_DIR / "templates", languages=LANGUAGES) -> dict[str, PromptTemplate]:
    templates = {}
    for language in languages:
        path = Path(template_dir) / f"{language}.json"
        if not path.is_file():
            raise TemplateError(f"No template for language {language!r} in {template_dir}")
        templates[language] = load_template(path)
        if templates[language].language != language:
            raise TemplateError(f"Template {path} declares language {templates[language].language!r}")
    logging.info(f"Templates loaded for {sorted(templates)}")
    return templates


def render_scale(labels: list[str], fmt: ScaleFormat) -> str:
    if not labels:
        raise TemplateError("Cannot render an empty scale")
    quoted = [f"{fmt.quote_open}{label}{fmt.quote_close}" for label in labels]
    if len(quoted) == 1:
        return quoted[0]
    return fmt.separator.join(quoted[:-1]) + fmt.last_separator + quoted[-1]


def localized_name(topic: Topic, language: str) -> str:
    name = topic.names.get(language)
    if not name:
        raise MissingLocalizedNameError(f"Topic {topic.id} has no {language} name")
    return name


def render_stage1(template: PromptTemplate, topic: Topic) -> str:
    return fill_placeholders(template.stage1, {"<VAR>": localized_name(topic, template.language)})


def render_stage2(template: PromptTemplate, topic: Topic, stage1_reply: str) -> str:
    """Stage-2 prompt embedding the Stage-1 reply verbatim, followed by the assurance."""
    check_template(template)
    if not stage1_reply:
        raise TemplateError("Stage-2 prompt needs a nonempty Stage-1 reply")
    body = fill_placeholders(template.stage2, {"<VAR>": localized_name(topic, template.language),
                                               "<ANS>": stage1_reply,
                                               "<SCALE>": render_scale(template.scale, template.scale_format)})
    return f"{body} {template.assurance}"



####################################################################################################################
                                                ## Two-stage protocol ##
####################################################################################################################



def build_respondents(roster: Roster, languages=LANGUAGES) -> list[Respondent]:
    return [Respondent(model_id=model.model_id, language=language)
            for model in roster.models
            for language in model.supported_languages
            if language in languages]


def record_id_for(respondent: Respondent, topic_id: str) -> str:
    return f"{respondent.key}|{topic_id}"


def _user_request(model_id: str, prompt: str, decoding: DecodingConfig) -> ChatRequest:
    return ChatRequest(model=model_id, messages=[ChatMessage(role="user", content=prompt)],
                       max_tokens=decoding.max_tokens, temperature=decoding.temperature)


def elicit(respondent: Respondent, topic: Topic, client: ChatClient, template: PromptTemplate,
           decoding: DecodingConfig = DecodingConfig()) -> ElicitationRecord:
    """Stage 1 and Stage 2, each in its own fresh conversation."""
    base = dict(record_id=record_id_for(respondent, topic.id), respondent=respondent.key, model_id=respondent.model_id,
                language=respondent.language, topic_id=topic.id, template_version=template.version)
    try:
        stage1_prompt = render_stage1(template, topic)
    except MissingLocalizedNameError as e:
        logging.warning(f"Skipping {respondent.key} on {topic.id}: {e}")
        return ElicitationRecord(**base, status="skipped", error=str(e))

    stage1 = client.complete(respondent.model_id, _user_request(respondent.model_id, stage1_prompt, decoding),
                             respondent=respondent.key, topic_id=topic.id, stage="stage1")
    if not stage1.ok:
        return ElicitationRecord(**base, status="stage1_failed", stage1_prompt=stage1_prompt,
                                 stage1_outcome=stage1.outcome, error=stage1.error)

    stage2_prompt = render_stage2(template, topic, stage1.text)
    request = _user_request(respondent.model_id, stage2_prompt, decoding)
    if not request.is_fresh():
        raise TemplateError("Stage-2 request must not carry Stage-1 conversation state")
    stage2 = client.complete(respondent.model_id, request, respondent=respondent.key, topic_id=topic.id, stage="stage2")
    if not stage2.ok:
        return ElicitationRecord(**base, status="stage2_failed", stage1_prompt=stage1_prompt, stage1_text=stage1.text,
                                 stage1_outcome=stage1.outcome, stage2_prompt=stage2_prompt,
                                 stage2_outcome=stage2.outcome, error=stage2.error)
    return ElicitationRecord(**base, status="complete", stage1_prompt=stage1_prompt, stage1_text=stage1.text,
                             stage1_outcome=stage1.outcome, stage2_prompt=stage2_prompt, stage2_text=stage2.text,
                             stage2_outcome=stage2.outcome)


def run_campaign(respondents: list[Respondent], topics: list[Topic], client: ChatClient, store: ElicitationStore,
                 templates: dict[str, PromptTemplate], decoding: DecodingConfig = DecodingConfig(),
                 workers: int = 8) -> CampaignSummary:
    """Attempt every (respondent, topic) pair once; pairs already in the store are not re-sent."""
    pairs = [(respondent, topic) for respondent in respondents for topic in topics]
    pending = [(respondent, topic) for respondent, topic in pairs if not store.has(record_id_for(respondent, topic.id))]
    logging.info(f"Campaign: {len(pairs)} pairs, {len(pending)} pending, {len(respondents)} respondents")

    def work(pair: tuple[Respondent, Topic]) -> str:
        respondent, topic = pair
        try:
            record = elicit(respondent, topic, client, templates[respondent.language], decoding)
        except Exception as e:
            logging.error(f"Elicitation of {respondent.key} on {topic.id} failed, left for the next run: {e}")
            return "error"
        store.save_record(record.model_dump(mode="json"))
        return record.status

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(work, pending))
    errors = outcomes.count("error")

    wanted = {record_id_for(respondent, topic.id) for respondent, topic in pairs}
    per_respondent: dict[str, dict[str, int]] = {respondent.key: {} for respondent in respondents}
    totals: dict[str, int] = {}
    for record in store.fetch_records():
        if record["record_id"] not in wanted:
            continue
        counts = per_respondent[record["respondent"]]
        counts[record["status"]] = counts.get(record["status"], 0) + 1
        totals[record["status"]] = totals.get(record["status"], 0) + 1
    summary = CampaignSummary(pairs=len(pairs), sent=len(pending), reused=len(pairs) - len(pending), errors=errors,
                              per_respondent=per_respondent, totals=totals)
    logging.info(f"Campaign finished: {totals}")
    return summary


def fetch_records(store: ElicitationStore) -> list[ElicitationRecord]:
    return [ElicitationRecord.model_validate(record) for record in store.fetch_records()]



####################################################################################################################
                                                ## Template search ##
####################################################################################################################



class Dimension(BaseModel):
    selected: int = 0
    variants: list[dict]


class ModularPrompt(BaseModel):
    """English prompt variants per dimension, as used by the template search."""
    language: str = "en"
    scale_format: ScaleFormat = Field(default_factory=ScaleFormat)
    dimensions: dict[str, Dimension]

    def base_choice(self) -> dict[str, int]:
        return {name: dimension.selected for name, dimension in self.dimensions.items()}

    def instantiate(self, choice: dict[str, int]) -> "ModularTemplate":
        def pick(name: str) -> dict:
            return self.dimensions[name].variants[choice[name]]
        stage2 = pick("stage2")
        return ModularTemplate(stage1a=pick("stage1a").get("text"),
                               stage1b=pick("stage1b").get("text"),
                               stage2=stage2["text"],
                               reset=bool(stage2.get("reset", False)),
                               assurance=pick("assurance").get("text"),
                               scale=list(pick("scale")["labels"]),
                               scale_format=self.scale_format)


class ModularTemplate(BaseModel):
    stage1a: Optional[str] = None
    stage1b: Optional[str] = None
    stage2: str
    reset: bool = False
    assurance: Optional[str] = None
    scale: list[str]
    scale_format: ScaleFormat = Field(default_factory=ScaleFormat)


class TemplateEvaluation(BaseModel):
    choice: dict[str, int]
    round: int
    invalid_rate: float
    valid: int
    total: int
    flagged: bool = False


class SearchResult(BaseModel):
    selected: dict[str, int]
    ranked: list[TemplateEvaluation]
    rounds: list[list[TemplateEvaluation]]


def load_modular_prompt(path=DATA_DIR / "modular_prompt.json") -> ModularPrompt:
    try:
        prompt = ModularPrompt.model_validate(read_json(path))
    except ValueError as e:
        raise TemplateError(f"Invalid modular prompt {path}: {e}") from e
    for name in ("stage1a", "stage1b", "stage2", "assurance", "scale"):
        if name not in prompt.dimensions or not prompt.dimensions[name].variants:
            raise TemplateError(f"Modular prompt {path} needs variants for {name!r}")
    return prompt


def run_modular(template: ModularTemplate, topic: Topic, model_id: str, client: ChatClient,
                decoding: DecodingConfig = DecodingConfig()) -> Optional[str]:
    """Stage-2 reply for one modular template, or None when the protocol cannot complete.

    Stage 1b continues the Stage 1a conversation; Stage 2 does too unless the variant resets,
    in which case <ANS> is the latest Stage-1 reply and the conversation starts fresh.
    """
    name = localized_name(topic, "en")
    messages: list[ChatMessage] = []
    answer = None
    for stage, text in (("search-stage1a", template.stage1a), ("search-stage1b", template.stage1b)):
        if text is None:
            continue
        messages.append(ChatMessage(role="user", content=fill_placeholders(text, {"<VAR>": name})))
        reply = _send(client, model_id, messages, decoding, topic.id, stage)
        if not reply.ok:
            return None
        answer = reply.text
        messages.append(ChatMessage(role="assistant", content=answer))

    if template.reset and answer is None:
        return None
    prompt = fill_placeholders(template.stage2, {"<VAR>": name,
                                                 "<ANS>": answer or "",
                                                 "<SCALE>": render_scale(template.scale, template.scale_format)})
    if template.assurance:
        prompt = f"{prompt} {template.assurance}"
    conversation = [] if template.reset else messages
    reply = _send(client, model_id, conversation + [ChatMessage(role="user", content=prompt)], decoding, topic.id, "search-stage2")
    return reply.text if reply.ok else None


def _send(client: ChatClient, model_id: str, messages: list[ChatMessage], decoding: DecodingConfig, topic_id: str,
          stage: str) -> ChatReply:
    request = ChatRequest(model=model_id, messages=list(messages), max_tokens=decoding.max_tokens,
                          temperature=decoding.temperature)
    return client.complete(model_id, request, respondent=f"{model_id}/en", topic_id=topic_id, stage=stage)


def _choice_key(choice: dict[str, int]) -> tuple:
    return tuple(sorted(choice.items()))


def search_templates(prompt: ModularPrompt, sample: list[Topic], models: list[str], client: ChatClient,
                     validity: Callable[[Optional[str], list[str]], bool], rounds: int = 2,
                     decoding: DecodingConfig = DecodingConfig(), workers: int = 8) -> SearchResult:
    """Greedy search: each round scores the current choice and every single-dimension change to it.

    `validity(stage2_text, scale)` decides whether one Stage-2 reply counts as valid.
    """
    if not sample or not models:
        raise TemplateError("Template search needs a topic sample and at least one model")
    seen: dict[tuple, TemplateEvaluation] = {}
    history: list[list[TemplateEvaluation]] = []
    current = prompt.base_choice()

    def evaluate(choice: dict[str, int], round_number: int) -> TemplateEvaluation:
        key = _choice_key(choice)
        if key in seen:
            return seen[key]
        template = prompt.instantiate(choice)
        jobs = [(topic, model_id) for topic in sample for model_id in models]

        def score(job: tuple[Topic, str]) -> bool:
            topic, model_id = job
            try:
                return bool(validity(run_modular(template, topic, model_id, client, decoding), template.scale))
            except MissingLocalizedNameError:
                return False

        with ThreadPoolExecutor(max_workers=workers) as pool:
            valid = sum(pool.map(score, jobs))
        evaluation = TemplateEvaluation(choice=dict(choice), round=round_number, invalid_rate=1.0 - valid / len(jobs),
                                        valid=valid, total=len(jobs), flagged=valid == 0)
        if evaluation.flagged:
            logging.warning(f"Template {dict(choice)} produced no valid response")
        seen[key] = evaluation
        return evaluation

    try:
        for round_number in range(1, rounds + 1):
            candidates = [dict(current)]
            for name, dimension in prompt.dimensions.items():
                for index in range(len(dimension.variants)):
                    if index != current[name]:
                        candidates.append({**current, name: index})
            scored = [evaluate(candidate, round_number) for candidate in candidates]
            history.append(scored)
            best = min(range(len(scored)), key=lambda i: (scored[i].invalid_rate, i))
            current = dict(candidates[best])
            logging.info(f"Template search round {round_number}: {len(scored)} candidates, "
                         f"best invalid rate {scored[best].invalid_rate:.4f}")
    except TemplateError:
        raise
    except Exception as e:
        raise IdeologyException(e, sys) from e

    order = {key: position for position, key in enumerate(seen)}
    ranked = sorted(seen.values(), key=lambda ev: (ev.flagged, ev.invalid_rate, order[_choice_key(ev.choice)]))
    return SearchResult(selected=current, ranked=ranked, rounds=history)


def load_search_sample(path, topics: list[Topic]) -> list[Topic]:
    """Topic ids, one per line; unknown ids are skipped with a warning."""
    by_id = {topic.id: topic for topic in topics}
    sample = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        topic_id = line.strip()
        if not topic_id:
            continue
        if topic_id not in by_id:
            logging.warning(f"Search sample names unknown topic {topic_id}")
            continue
        sample.append(by_id[topic_id])
    return sample
