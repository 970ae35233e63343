import threading
from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from IdeologyProject.logger import logging
from IdeologyProject.exception import StoreCorruptionError
from IdeologyProject.providers import ChatReply, ChatRequest, utc_now
from IdeologyProject.utils import append_jsonl, iter_jsonl_with_offsets


class ExchangeRecord(BaseModel):
    cache_key: str
    respondent: str
    topic_id: str
    stage: str
    request: ChatRequest
    reply: ChatReply
    attempt: int
    collected_at: str


class JsonlStoreHandler:
    """Append-only JSON-lines store keyed by one record field.

    `keep` decides which record wins when a key was written more than once:
    "first" for write-once artifacts, "last" for records that a retry may supersede.
    """

    key_field = "id"
    keep = "first"

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        for offset, record in iter_jsonl_with_offsets(self.path):
            key = record.get(self.key_field)
            if key is None:
                raise StoreCorruptionError(self.path, offset, f"record without {self.key_field!r}")
            if self.keep == "last" or key not in self._index:
                self._index[key] = record
        logging.info(f"Store opened: {self.path} ({len(self._index)} keys)")

    def _save(self, record: dict) -> None:
        with self._lock:
            append_jsonl(self.path, record)
            key = record[self.key_field]
            if self.keep == "last" or key not in self._index:
                self._index[key] = record

    def has(self, key: str) -> bool:
        with self._lock:
            return key in self._index

    def _fetch(self, key: str) -> Optional[dict]:
        with self._lock:
            return self._index.get(key)

    def _fetch_all(self) -> list[dict]:
        with self._lock:
            return [self._index[key] for key in sorted(self._index)]

    def __len__(self) -> int:
        return len(self._index)

    def close_connection(self):
        logging.info(f"Store closed: {self.path}")


class ExchangeStore(JsonlStoreHandler):
    """Raw provider exchanges, one line per sent request."""

    key_field = "cache_key"
    keep = "last"

    def __init__(self, path):
        super().__init__(path)
        self._attempts: dict[tuple[str, str, str], int] = {}
        seen = set()
        for offset, record in iter_jsonl_with_offsets(self.path):
            triple = (record["respondent"], record["topic_id"], record["stage"])
            if (triple, record["attempt"]) in seen:
                raise StoreCorruptionError(self.path, offset, f"duplicate attempt {record['attempt']} for {triple}")
            seen.add((triple, record["attempt"]))
            self._attempts[triple] = max(self._attempts.get(triple, 0), record["attempt"])

    def next_attempt(self, respondent: str, topic_id: str, stage: str) -> int:
        with self._lock:
            return self._attempts.get((respondent, topic_id, stage), 0) + 1

    def save_exchange(self, key: str, respondent: str, topic_id: str, stage: str, request: ChatRequest, reply: ChatReply) -> ExchangeRecord:
        record = ExchangeRecord(cache_key=key, respondent=respondent, topic_id=topic_id, stage=stage,
                                request=request, reply=reply, attempt=reply.attempt, collected_at=utc_now())
        with self._lock:
            triple = (respondent, topic_id, stage)
            self._attempts[triple] = max(self._attempts.get(triple, 0), reply.attempt)
        self._save(record.model_dump(mode="json"))
        return record

    def fetch_exchange(self, key: str) -> Optional[ExchangeRecord]:
        record = self._fetch(key)
        return ExchangeRecord.model_validate(record) if record is not None else None

    def fetch_exchanges(self) -> list[ExchangeRecord]:
        return [ExchangeRecord.model_validate(record) for record in self._fetch_all()]


class TagStore(JsonlStoreHandler):
    key_field = "topic_id"
    keep = "last"

    def save_assignment(self, assignment: dict) -> None:
        self._save(assignment)

    def fetch_assignment(self, topic_id: str) -> Optional[dict]:
        return self._fetch(topic_id)

    def fetch_assignments(self) -> list[dict]:
        return self._fetch_all()


class ElicitationStore(JsonlStoreHandler):
    key_field = "record_id"

    def save_record(self, record: dict) -> None:
        self._save(record)

    def fetch_records(self) -> list[dict]:
        return self._fetch_all()


class ValidationStore(JsonlStoreHandler):
    key_field = "record_id"

    def save_validation(self, validation: dict) -> None:
        self._save(validation)

    def fetch_validations(self) -> list[dict]:
        return self._fetch_all()
