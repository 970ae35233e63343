import sys
import json
import math
import zipfile
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from IdeologyProject.logger import logging
from IdeologyProject.exception import ConfigurationError, IdeologyException, UndefinedAHPIError
from IdeologyProject.config import LANGUAGES, TierPolicy
from IdeologyProject.utils import read_jsonl, write_jsonl

REQUIRED_COLUMNS = ("id", "name", "birthyear", "deathyear", "occupation", "l", "non_en_page_views")

CRITERION_FULL_NAME = 1
CRITERION_BIRTH_YEAR = 2
CRITERION_DEATH_YEAR = 3
CRITERION_SUMMARIES = 4

MIN_BIRTH_YEAR = 1850
MIN_DEATH_YEAR = 1920



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class PopularityMetrics(BaseModel):
    language_editions: int
    non_english_views: float
    view_cv: float


class PantheonRecord(BaseModel):
    id: str
    name: str
    birth_year: int
    death_year: Optional[int] = None
    occupation: str
    metrics: PopularityMetrics


class Topic(BaseModel):
    id: str
    names: dict[str, str] = Field(default_factory=dict)
    birth_year: int
    death_year: Optional[int] = None
    occupation: str
    tier: Optional[int] = None
    summaries: dict[str, str] = Field(default_factory=dict)
    metrics: PopularityMetrics
    ahpi: Optional[float] = None


class Reject(BaseModel):
    id: str
    stage: str
    reason: str
    criterion: Optional[int] = None


class LocalizedSummary(BaseModel):
    name: Optional[str] = None
    summary: str



####################################################################################################################
                                                ## Summary store ##
####################################################################################################################



class SummaryStore:
    """Per-language Wikipedia summaries from a directory or a zip archive.

    Two layouts are understood, checked in this order per language:
      <root>/<lang>.jsonl        records with id, name, summary
      <root>/<lang>/<id>.txt     first line is the localized name, the rest the summary
    """

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.exists():
            raise ConfigurationError(f"Summary store not found: {self.root}")
        self._archive = zipfile.ZipFile(self.root) if self.root.is_file() else None
        self._indexed: dict[str, dict[str, LocalizedSummary]] = {}
        for language in LANGUAGES:
            records = self._load_index(language)
            if records is not None:
                self._indexed[language] = records
        logging.info(f"Summary store opened at {self.root} (indexed languages: {sorted(self._indexed)})")

    def _read_text(self, relative: str) -> Optional[str]:
        if self._archive is not None:
            try:
                return self._archive.read(relative).decode("utf-8")
            except KeyError:
                return None
        path = self.root / relative
        if not path.is_file():
            return None
        return path.read_text(encoding="utf-8")

    def _load_index(self, language: str) -> Optional[dict[str, LocalizedSummary]]:
        if self._archive is not None:
            text = self._read_text(f"{language}.jsonl")
            if text is None:
                return None
            rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        else:
            path = self.root / f"{language}.jsonl"
            if not path.is_file():
                return None
            rows = read_jsonl(path)
        index = {}
        for row in rows:
            summary = (row.get("summary") or "").strip()
            if summary:
                index[str(row["id"])] = LocalizedSummary(name=row.get("name") or None, summary=summary)
        return index

    def get(self, person_id: str, language: str) -> Optional[LocalizedSummary]:
        """Localized name and summary, or None when absent or unreadable."""
        try:
            if language in self._indexed:
                return self._indexed[language].get(person_id)
            text = self._read_text(f"{language}/{person_id}.txt")
            if text is None:
                return None
            name, _, summary = text.partition("\n")
            summary = summary.strip()
            if not summary:
                return None
            return LocalizedSummary(name=name.strip() or None, summary=summary)
        except Exception as e:
            logging.warning(f"Summary lookup failed for {person_id}/{language}: {e}")
            return None

    def close_connection(self):
        if self._archive is not None:
            self._archive.close()



####################################################################################################################
                                                ## Ingestion ##
####################################################################################################################



def _parse_year(value: str, required: bool) -> Optional[int]:
    value = (value or "").strip()
    if not value:
        if required:
            raise ValueError("missing year")
        return None
    return int(float(value))


def _view_cv(row: pd.Series, view_columns: list[str]) -> float:
    series = row[view_columns].astype(float).to_numpy()
    mean = float(np.mean(series))
    if mean <= 0:
        return 0.0
    return float(np.std(series) / mean)


def load_pantheon(path, fmt: str = "tsv", cv_column: Optional[str] = "coefficient_of_variation",
                  view_column_prefix: Optional[str] = None) -> tuple[list[PantheonRecord], list[Reject]]:
    """Read a Pantheon snapshot; malformed rows go to the rejects report."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Pantheon snapshot not found: {path}")
    separator = "\t" if fmt == "tsv" else ","
    try:
        frame = pd.read_csv(path, sep=separator, dtype=str, keep_default_na=False)
    except Exception as e:
        raise IdeologyException(e, sys) from e

    missing = [column for column in REQUIRED_COLUMNS if column not in frame.columns]
    view_columns = sorted(c for c in frame.columns if view_column_prefix and c.startswith(view_column_prefix))
    if view_column_prefix:
        if not view_columns:
            missing.append(f"{view_column_prefix}*")
    elif cv_column is None or cv_column not in frame.columns:
        missing.append(str(cv_column))
    if missing:
        raise ConfigurationError(f"Pantheon snapshot {path} lacks required columns: {missing}")

    records, rejects = [], []
    for _, row in frame.iterrows():
        person_id = str(row["id"]).strip()
        try:
            if not person_id:
                raise ValueError("missing id")
            name = str(row["name"]).strip()
            if not name:
                raise ValueError("missing name")
            view_cv = _view_cv(row, view_columns) if view_column_prefix else float(row[cv_column])
            record = PantheonRecord(id=person_id,
                                    name=name,
                                    birth_year=_parse_year(row["birthyear"], required=True),
                                    death_year=_parse_year(row["deathyear"], required=False),
                                    occupation=str(row["occupation"]).strip(),
                                    metrics=PopularityMetrics(language_editions=int(float(row["l"])),
                                                              non_english_views=float(row["non_en_page_views"]),
                                                              view_cv=view_cv))
            records.append(record)
        except (ValueError, TypeError) as e:
            rejects.append(Reject(id=person_id or "?", stage="load", reason=f"unparseable row: {e}"))
            logging.warning(f"Pantheon row {person_id!r} rejected: {e}")

    logging.info(f"Pantheon loaded from {path}: {len(records)} records, {len(rejects)} rejects")
    return records, rejects



####################################################################################################################
                                                ## Selection ##
####################################################################################################################



def first_failing_criterion(record: PantheonRecord) -> Optional[int]:
    """Criteria 1 to 3; the summary criterion needs the store."""
    if len(record.name.split()) < 2:
        return CRITERION_FULL_NAME
    if record.birth_year <= MIN_BIRTH_YEAR:
        return CRITERION_BIRTH_YEAR
    if record.death_year is not None and record.death_year <= MIN_DEATH_YEAR:
        return CRITERION_DEATH_YEAR
    return None


_CRITERION_REASONS = {
    CRITERION_FULL_NAME: "no full name",
    CRITERION_BIRTH_YEAR: f"born in or before {MIN_BIRTH_YEAR}",
    CRITERION_DEATH_YEAR: f"died in or before {MIN_DEATH_YEAR}",
    CRITERION_SUMMARIES: "summary or localized name missing in at least one language",
}


def apply_selection_criteria(records: list[PantheonRecord], summaries_store: SummaryStore) -> tuple[list[Topic], list[Reject]]:
    candidates, rejects = [], []
    for record in records:
        summaries: dict[str, Optional[LocalizedSummary]] = {}
        failing = first_failing_criterion(record)
        if failing is None:
            summaries = {language: summaries_store.get(record.id, language) for language in LANGUAGES}
            if any(entry is None or (not entry.name and language != "en") for language, entry in summaries.items()):
                failing = CRITERION_SUMMARIES
        if failing is not None:
            rejects.append(Reject(id=record.id, stage="criteria", reason=_CRITERION_REASONS[failing], criterion=failing))
            continue
        names = {language: entry.name for language, entry in summaries.items() if entry.name}
        names.setdefault("en", record.name)
        candidates.append(Topic(id=record.id,
                                names=names,
                                birth_year=record.birth_year,
                                death_year=record.death_year,
                                occupation=record.occupation,
                                summaries={language: entry.summary for language, entry in summaries.items()},
                                metrics=record.metrics))
    logging.info(f"Selection criteria: {len(candidates)} candidates kept, {len(rejects)} rejected")
    return candidates, rejects


def compute_ahpi(metrics: PopularityMetrics) -> float:
    """ln(L) + ln(v_NE) - ln(CV)."""
    if metrics.language_editions < 1 or metrics.non_english_views <= 0 or metrics.view_cv <= 0:
        raise UndefinedAHPIError(f"AHPI undefined for L={metrics.language_editions}, "
                                 f"v_NE={metrics.non_english_views}, CV={metrics.view_cv}")
    return math.log(metrics.language_editions) + math.log(metrics.non_english_views) - math.log(metrics.view_cv)


def _passes(ahpi: float, threshold: float, inclusive: bool) -> bool:
    return ahpi >= threshold if inclusive else ahpi > threshold


def select_topics(candidates: list[Topic], policy: TierPolicy, limit: Optional[int] = None) -> tuple[list[Topic], list[Reject]]:
    selected, rejects = [], []
    for candidate in candidates:
        tier = policy.tier_for(candidate.occupation)
        if tier is None:
            tier = 4
            logging.info(f"Occupation {candidate.occupation!r} of {candidate.id} not in a tier table, assigned tier 4")
        try:
            ahpi = compute_ahpi(candidate.metrics)
        except UndefinedAHPIError as e:
            ahpi = None
            if tier != 1:
                rejects.append(Reject(id=candidate.id, stage="ahpi", reason=str(e)))
                logging.warning(f"Topic {candidate.id} excluded: {e}")
                continue
        threshold = policy.thresholds[tier]
        if threshold is not None and not _passes(ahpi, threshold, policy.inclusive):
            rejects.append(Reject(id=candidate.id, stage="tier", reason=f"AHPI {ahpi:.4f} below tier {tier} threshold {threshold}"))
            continue
        selected.append(candidate.model_copy(update={"tier": tier, "ahpi": ahpi}))

    selected.sort(key=lambda topic: (topic.tier, -topic.ahpi if topic.ahpi is not None else math.inf, topic.id))
    if limit is not None:
        selected = selected[:limit]
    counts = {tier: sum(1 for topic in selected if topic.tier == tier) for tier in (1, 2, 3, 4)}
    logging.info(f"Topics selected: {len(selected)} (per tier {counts})")
    return selected, rejects


def tier_counts(topics: list[Topic]) -> dict[int, int]:
    return {tier: sum(1 for topic in topics if topic.tier == tier) for tier in (1, 2, 3, 4)}


def write_topics(topics: list[Topic], path) -> None:
    write_jsonl(path, (topic.model_dump(mode="json") for topic in topics))


def load_topics(path) -> list[Topic]:
    return [Topic.model_validate(row) for row in read_jsonl(path)]


def write_rejects(rejects: list[Reject], path) -> None:
    write_jsonl(path, (reject.model_dump(mode="json") for reject in rejects))
