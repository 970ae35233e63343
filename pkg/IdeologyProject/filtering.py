import sys
import json
from pathlib import Path
from typing import Optional

import pandas as pd
from pydantic import BaseModel

from IdeologyProject.logger import logging
from IdeologyProject.exception import ConfigurationError, IdeologyException, StageOrderingError
from IdeologyProject.config import DATA_DIR, LANGUAGE_NAMES, LANGUAGES
from IdeologyProject.elicitation import ElicitationRecord, load_templates
from IdeologyProject.tagging import TagAssignment
from IdeologyProject.validation import ENGLISH_SCALE, UNKNOWN, VERDICTS, ValidationRecord, normalize_label
from IdeologyProject.utils import save_table

LIKERT_SCORES = {"very negative": 0.0, "negative": 0.25, "neutral": 0.5, "positive": 0.75, "very positive": 1.0}
SCORE_COLUMNS = ["model_id", "language", "topic_id", "score"]

RELEASED_COLUMNS = {"model": "model", "language": "language", "topic_id": "topic_id",
                    "verdict": "stage1_verdict", "label": "stage2_label", "tags": "tags"}



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class ResponseRow(BaseModel):
    model_id: str
    language: str
    topic_id: str
    verdict: Optional[str] = None
    label: Optional[str] = None

    @property
    def respondent(self) -> str:
        return f"{self.model_id}/{self.language}"


class Removal(BaseModel):
    model_id: str
    language: str
    topic_id: str
    step: str
    reason: str


class DroppedPrompt(BaseModel):
    topic_id: str
    language: str
    valid: int
    supported: int


class FilterCounters(BaseModel):
    raw: int = 0
    removed_stage1: int = 0
    removed_stage2: int = 0
    removed_coverage: int = 0
    kept: int = 0
    prompts_total: int = 0
    prompts_dropped: int = 0

    def check(self) -> "FilterCounters":
        if self.raw != self.kept + self.removed_stage1 + self.removed_stage2 + self.removed_coverage:
            raise IdeologyException(f"Filter counters do not add up: {self.model_dump()}")
        return self

    def fractions(self) -> dict[str, float]:
        after_stage1 = self.raw - self.removed_stage1
        after_stage2 = after_stage1 - self.removed_stage2
        return {"stage1_removed": self.removed_stage1 / self.raw if self.raw else 0.0,
                "stage2_removed": self.removed_stage2 / after_stage1 if after_stage1 else 0.0,
                "coverage_removed_responses": self.removed_coverage / after_stage2 if after_stage2 else 0.0,
                "coverage_removed_prompts": self.prompts_dropped / self.prompts_total if self.prompts_total else 0.0}


class ScoreMatrix:
    """Sparse (model, language, topic) -> score table with the filter counters that produced it."""

    def __init__(self, frame: pd.DataFrame, counters: Optional[FilterCounters] = None):
        self.frame = frame[SCORE_COLUMNS].sort_values(["model_id", "language", "topic_id"]).reset_index(drop=True)
        self.counters = counters or FilterCounters()

    @property
    def respondents(self) -> list[str]:
        return sorted((self.frame["model_id"] + "/" + self.frame["language"]).unique().tolist())

    @property
    def topics(self) -> list[str]:
        return sorted(self.frame["topic_id"].unique().tolist())

    def with_respondent(self) -> pd.DataFrame:
        frame = self.frame.copy()
        frame["respondent"] = frame["model_id"] + "/" + frame["language"]
        return frame

    def __len__(self) -> int:
        return len(self.frame)

    def save(self, path, manifest_digest: Optional[str] = None) -> Path:
        return save_table(self.frame, path, manifest_digest)


def load_score_matrix(path) -> ScoreMatrix:
    path = Path(path)
    if not path.is_file():
        raise StageOrderingError(f"No score matrix at {path}; run the filter stage first")
    frame = pd.read_csv(path, dtype={"model_id": str, "language": str, "topic_id": str}, keep_default_na=False)
    return ScoreMatrix(frame)



####################################################################################################################
                                                ## Filter steps ##
####################################################################################################################



def _removal(row: ResponseRow, step: str, reason: str) -> Removal:
    return Removal(model_id=row.model_id, language=row.language, topic_id=row.topic_id, step=step, reason=reason)


def filter_stage1(rows: list[ResponseRow]) -> tuple[list[ResponseRow], list[Removal]]:
    """Keep rows whose Stage-1 verdict is yes."""
    missing = [row for row in rows if row.verdict is None]
    if missing:
        raise StageOrderingError(f"{len(missing)} responses have no Stage-1 verdict (first: {missing[0].respondent} "
                                 f"on {missing[0].topic_id}); run validation first")
    kept = [row for row in rows if row.verdict == "yes"]
    removed = [_removal(row, "stage1", f"verdict {row.verdict}") for row in rows if row.verdict != "yes"]
    logging.info(f"Stage-1 filter: kept {len(kept)}, removed {len(removed)}")
    return kept, removed


def filter_stage2(rows: list[ResponseRow]) -> tuple[list[ResponseRow], list[Removal]]:
    """Keep rows with a label other than unknown."""
    missing = [row for row in rows if row.label is None]
    if missing:
        raise StageOrderingError(f"{len(missing)} responses have no Stage-2 label; run validation first")
    kept = [row for row in rows if row.label in LIKERT_SCORES]
    removed = [_removal(row, "stage2", f"label {row.label}") for row in rows if row.label not in LIKERT_SCORES]
    logging.info(f"Stage-2 filter: kept {len(kept)}, removed {len(removed)}")
    return kept, removed


def filter_coverage(rows: list[ResponseRow], support: dict[str, set[str]],
                    prompts: Optional[set[tuple[str, str]]] = None) -> tuple[list[ResponseRow], list[Removal], list[DroppedPrompt]]:
    """Drop every (topic, language) answered validly by strictly fewer than half of the supporting models.

    `prompts` is the raw (topic, language) set; prompts left with no valid row count as dropped with valid=0.
    """
    valid: dict[tuple[str, str], set[str]] = {prompt: set() for prompt in prompts or ()}
    for row in rows:
        valid.setdefault((row.topic_id, row.language), set()).add(row.model_id)
    dropped = {}
    for (topic_id, language), models in sorted(valid.items()):
        supported = len(support.get(language, set()))
        if 2 * len(models) < supported:
            dropped[(topic_id, language)] = DroppedPrompt(topic_id=topic_id, language=language, valid=len(models),
                                                          supported=supported)
    kept = [row for row in rows if (row.topic_id, row.language) not in dropped]
    removed = []
    for row in rows:
        prompt = dropped.get((row.topic_id, row.language))
        if prompt is not None:
            removed.append(_removal(row, "coverage", f"{prompt.valid} of {prompt.supported} supporting models valid"))
    logging.info(f"Coverage filter: dropped {len(dropped)} prompts ({len(removed)} responses)")
    return kept, removed, list(dropped.values())


def build_score_matrix(rows: list[ResponseRow], counters: Optional[FilterCounters] = None) -> ScoreMatrix:
    records, seen = [], set()
    for row in rows:
        if row.label not in LIKERT_SCORES:
            raise StageOrderingError(f"Label {row.label!r} of {row.respondent} on {row.topic_id} reached the score matrix")
        key = (row.model_id, row.language, row.topic_id)
        if key in seen:
            logging.warning(f"Duplicate response for {key}, keeping the first")
            continue
        seen.add(key)
        records.append({"model_id": row.model_id, "language": row.language, "topic_id": row.topic_id,
                        "score": LIKERT_SCORES[row.label]})
    return ScoreMatrix(pd.DataFrame(records, columns=SCORE_COLUMNS), counters)


def run_filters(rows: list[ResponseRow], support: dict[str, set[str]]) -> tuple[ScoreMatrix, list[Removal]]:
    """All three steps in order, then the matrix; counters are checked against the raw count."""
    prompts = {(row.topic_id, row.language) for row in rows}
    step1, removed1 = filter_stage1(rows)
    step2, removed2 = filter_stage2(step1)
    step3, removed3, dropped = filter_coverage(step2, support, prompts)
    counters = FilterCounters(raw=len(rows), removed_stage1=len(removed1), removed_stage2=len(removed2),
                              removed_coverage=len(removed3), kept=len(step3), prompts_total=len(prompts),
                              prompts_dropped=len(dropped)).check()
    return build_score_matrix(step3, counters), removed1 + removed2 + removed3


def support_from_rows(rows: list[ResponseRow]) -> dict[str, set[str]]:
    support: dict[str, set[str]] = {}
    for row in rows:
        support.setdefault(row.language, set()).add(row.model_id)
    return support



####################################################################################################################
                                                ## Inputs ##
####################################################################################################################



def rows_from_stores(records: list[ElicitationRecord], validations: list[ValidationRecord]) -> list[ResponseRow]:
    """One row per attempted response; skipped pairs are not responses."""
    by_record = {validation.record_id: validation for validation in validations}
    rows = []
    for record in sorted(records, key=lambda r: r.record_id):
        if record.status == "skipped":
            continue
        validation = by_record.get(record.record_id)
        rows.append(ResponseRow(model_id=record.model_id, language=record.language, topic_id=record.topic_id,
                                verdict=validation.verdict.value if validation else None,
                                label=validation.label.value if validation else None))
    return rows


def _language_code(value: str) -> Optional[str]:
    value = str(value).strip()
    if value in LANGUAGES:
        return value
    by_name = {name.casefold(): code for code, name in LANGUAGE_NAMES.items()}
    return by_name.get(value.casefold())


def _english_label(value, language: str, scales: dict[str, list[str]]) -> str:
    if value is None or (isinstance(value, float) and pd.isna(value)) or not str(value).strip():
        return UNKNOWN
    for scale in (list(ENGLISH_SCALE), scales.get(language, [])):
        label = normalize_label(str(value), scale)
        if label is not None:
            return ENGLISH_SCALE[scale.index(label)]
    return UNKNOWN


def _parse_tags(value) -> list[str]:
    if value is None or (isinstance(value, float) and pd.isna(value)):
        return []
    text = str(value).strip()
    if not text:
        return []
    if text.startswith("["):
        return [str(code) for code in json.loads(text)]
    return [code.strip() for code in text.replace(",", ";").split(";") if code.strip()]


def ingest_released_dataset(path, column_map: Optional[dict[str, str]] = None, separator: str = ",",
                            template_dir=DATA_DIR / "templates") -> tuple[list[ResponseRow], list[TagAssignment]]:
    """Published response table as pre-validated rows, plus tag assignments when a tags column exists."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Released dataset not found: {path}")
    columns = {**RELEASED_COLUMNS, **(column_map or {})}
    try:
        frame = pd.read_csv(path, sep=separator, dtype=str, keep_default_na=False)
    except Exception as e:
        raise IdeologyException(e, sys) from e
    required = [columns[name] for name in ("model", "language", "topic_id", "verdict", "label")]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise ConfigurationError(f"Released dataset {path} lacks columns {missing}")

    scales = {language: template.scale for language, template in load_templates(template_dir).items()}
    rows, tags, unknown_languages = [], {}, set()
    for record in frame.to_dict(orient="records"):
        language = _language_code(record[columns["language"]])
        if language is None:
            unknown_languages.add(record[columns["language"]])
            continue
        verdict = str(record[columns["verdict"]]).strip().casefold() or None
        if verdict is not None and verdict not in VERDICTS:
            logging.warning(f"Released row with verdict {verdict!r} treated as 'no'")
            verdict = "no"
        topic_id = str(record[columns["topic_id"]]).strip()
        rows.append(ResponseRow(model_id=str(record[columns["model"]]).strip(), language=language, topic_id=topic_id,
                                verdict=verdict, label=_english_label(record[columns["label"]], language, scales)))
        if columns["tags"] in frame.columns and topic_id not in tags:
            tags[topic_id] = _parse_tags(record[columns["tags"]])
    if unknown_languages:
        logging.warning(f"Released rows with unknown languages skipped: {sorted(unknown_languages)}")
    assignments = [TagAssignment(topic_id=topic_id, tags=sorted(codes), judge_model="released")
                   for topic_id, codes in sorted(tags.items())]
    logging.info(f"Released dataset {path}: {len(rows)} responses, {len(assignments)} tagged topics")
    return rows, assignments
