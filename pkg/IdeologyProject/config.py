import os
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from dotenv import load_dotenv

from IdeologyProject.logger import logging
from IdeologyProject.exception import ConfigurationError
load_dotenv()


PACKAGE_DIR = Path(__file__).resolve().parent
DATA_DIR = PACKAGE_DIR / "data"

LANGUAGES = ("ar", "zh", "en", "fr", "ru", "es")
LANGUAGE_NAMES = {"ar": "Arabic", "zh": "Chinese", "en": "English", "fr": "French", "ru": "Russian", "es": "Spanish"}

TIER_1_OCCUPATIONS = ["social activist", "political scientist", "diplomat"]
TIER_2_OCCUPATIONS = ["politician", "military personnel"]
TIER_3_OCCUPATIONS = ["philosopher", "judge", "businessperson", "extremist", "religious figure", "writer",
                      "inventor", "journalist", "economist", "physicist", "linguist", "computer scientist",
                      "historian", "lawyer", "sociologist", "comedian", "biologist", "nobleman", "mafioso",
                      "psychologist"]



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TierPolicy(_Strict):
    """Occupation tiers and AHPI thresholds; tier 4 holds every occupation not listed."""
    tier_occupations: dict[int, list[str]] = Field(default_factory=lambda: {1: list(TIER_1_OCCUPATIONS),
                                                                          2: list(TIER_2_OCCUPATIONS),
                                                                          3: list(TIER_3_OCCUPATIONS)})
    thresholds: dict[int, Optional[float]] = Field(default_factory=lambda: {1: None, 2: 13.0, 3: 15.0, 4: 16.0})
    inclusive: bool = False

    @model_validator(mode="after")
    def _check_thresholds(self):
        if set(self.thresholds) != {1, 2, 3, 4}:
            raise ValueError("thresholds must name tiers 1 to 4")
        if self.thresholds[1] is not None:
            raise ValueError("tier 1 is unthresholded")
        chain = [self.thresholds[tier] for tier in (2, 3, 4)]
        if any(value is None for value in chain):
            raise ValueError("tiers 2 to 4 need a threshold")
        if any(later < earlier for earlier, later in zip(chain, chain[1:])):
            raise ValueError("thresholds must be non-decreasing from tier 2 to tier 4")
        return self

    def tier_for(self, occupation: str) -> Optional[int]:
        key = occupation.strip().casefold()
        for tier in sorted(self.tier_occupations):
            if key in {name.casefold() for name in self.tier_occupations[tier]}:
                return tier
        return None


class EndpointSpec(_Strict):
    kind: Literal["openai", "anthropic", "mock"] = "openai"
    base_url: str = "https://api.openai.com/v1"
    model: str
    api_key_env: Optional[str] = "OPENAI_API_KEY"

    def api_key(self) -> Optional[str]:
        return os.getenv(self.api_key_env) if self.api_key_env else None


class JudgeConfig(_Strict):
    tagging: str = "gpt-4"
    description: str = "gpt-4o"
    label: str = "gpt-3.5-turbo"
    endpoints: dict[str, EndpointSpec] = Field(default_factory=dict)

    def endpoint_for(self, model: str) -> EndpointSpec:
        return self.endpoints.get(model, EndpointSpec(model=model))


class ConcurrencyConfig(_Strict):
    workers: int = Field(default=8, ge=1)
    per_provider_inflight: int = Field(default=4, ge=1)
    min_interval_seconds: float = Field(default=0.0, ge=0.0)


class RetryConfig(_Strict):
    max_retries: int = Field(default=4, ge=0)
    backoff_base_seconds: float = Field(default=1.0, ge=0.0)
    backoff_cap_seconds: float = Field(default=60.0, ge=0.0)
    timeout_seconds: float = Field(default=120.0, gt=0.0)

    def backoff(self, attempt: int) -> float:
        return min(self.backoff_cap_seconds, self.backoff_base_seconds * (2 ** (attempt - 1)))


class DecodingConfig(_Strict):
    max_tokens: int = Field(default=2048, ge=1)
    temperature: Optional[float] = None


class AnalysisConfig(_Strict):
    seed: int = 0
    n_resamples: int = Field(default=10000, ge=1)
    person_top_k: int = Field(default=20, ge=1)
    tag_top_k: int = Field(default=10, ge=1)
    biplot_top_tags: int = Field(default=30, ge=1)
    aggregate: Literal["mean", "sum"] = "mean"
    ci_z: float = 1.96


class ReleasedDatasetConfig(_Strict):
    path: Path
    column_map: dict[str, str] = Field(default_factory=dict)
    separator: str = ","


class MockConfig(_Strict):
    seed: int = 0
    refusal_rate: float = Field(default=0.05, ge=0.0, le=1.0)
    mismatch_rate: float = Field(default=0.1, ge=0.0, le=1.0)
    deflection_rate: float = Field(default=0.02, ge=0.0, le=1.0)


class PipelineConfig(_Strict):
    pantheon_path: Optional[Path] = None
    pantheon_format: Literal["tsv", "csv"] = "tsv"
    cv_column: Optional[str] = "coefficient_of_variation"
    view_column_prefix: Optional[str] = None
    summaries_dir: Optional[Path] = None
    roster_path: Path = DATA_DIR / "roster.json"
    taxonomy_path: Path = DATA_DIR / "taxonomy.json"
    template_dir: Path = DATA_DIR / "templates"
    judge_template_dir: Path = DATA_DIR / "judge"
    modular_prompt_path: Path = DATA_DIR / "modular_prompt.json"
    groups_path: Path = DATA_DIR / "groups.json"
    search_sample_path: Optional[Path] = None
    output_dir: Path = Path("output")
    languages: list[str] = Field(default_factory=lambda: list(LANGUAGES))
    models: Optional[list[str]] = None
    topic_limit: Optional[int] = Field(default=None, ge=1)
    tiers: TierPolicy = Field(default_factory=TierPolicy)
    judges: JudgeConfig = Field(default_factory=JudgeConfig)
    concurrency: ConcurrencyConfig = Field(default_factory=ConcurrencyConfig)
    retry: RetryConfig = Field(default_factory=RetryConfig)
    elicitation_decoding: DecodingConfig = Field(default_factory=DecodingConfig)
    validation_decoding: DecodingConfig = Field(default_factory=lambda: DecodingConfig(max_tokens=1024, temperature=0.0))
    tagging_decoding: DecodingConfig = Field(default_factory=lambda: DecodingConfig(max_tokens=4096, temperature=0.0))
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    released_dataset: Optional[ReleasedDatasetConfig] = None
    mock: bool = False
    mock_options: MockConfig = Field(default_factory=MockConfig)

    @model_validator(mode="after")
    def _check_languages(self):
        unknown = [language for language in self.languages if language not in LANGUAGES]
        if unknown:
            raise ValueError(f"unsupported languages: {unknown}")
        return self

    def resolve_paths(self, base_dir: Path) -> "PipelineConfig":
        """Anchor relative paths at the directory of the config file."""
        updates = {}
        for name, value in self:
            if isinstance(value, Path) and not value.is_absolute():
                updates[name] = (base_dir / value).resolve()
        resolved = self.model_copy(update=updates)
        if resolved.released_dataset is not None and not resolved.released_dataset.path.is_absolute():
            released = resolved.released_dataset.model_copy(update={"path": (base_dir / resolved.released_dataset.path).resolve()})
            resolved = resolved.model_copy(update={"released_dataset": released})
        return resolved

    def digest_view(self) -> dict:
        """Config snapshot without filesystem locations, for manifest digests."""
        snapshot = self.model_dump(mode="json")
        for name, value in self:
            if isinstance(value, Path) or name == "released_dataset":
                snapshot.pop(name, None)
        return snapshot

    # artifact locations under output_dir
    @property
    def topics_path(self) -> Path:
        return self.output_dir / "topics.jsonl"

    @property
    def topic_rejects_path(self) -> Path:
        return self.output_dir / "topic_rejects.jsonl"

    @property
    def tags_path(self) -> Path:
        return self.output_dir / "tags.jsonl"

    @property
    def exchanges_path(self) -> Path:
        return self.output_dir / "exchanges.jsonl"

    @property
    def elicitations_path(self) -> Path:
        return self.output_dir / "elicitations.jsonl"

    @property
    def validations_path(self) -> Path:
        return self.output_dir / "validations.jsonl"

    @property
    def scores_path(self) -> Path:
        return self.output_dir / "scores.csv"

    @property
    def responses_path(self) -> Path:
        return self.output_dir / "responses.csv"

    @property
    def released_tags_path(self) -> Path:
        return self.output_dir / "released_tags.jsonl"

    @property
    def removals_path(self) -> Path:
        return self.output_dir / "filter_removals.jsonl"

    @property
    def run_report_path(self) -> Path:
        return self.output_dir / "run_report.json"

    @property
    def manifest_path(self) -> Path:
        return self.output_dir / "manifest.json"

    @property
    def analysis_dir(self) -> Path:
        return self.output_dir / "analysis"

    @property
    def figures_dir(self) -> Path:
        return self.output_dir / "figures"


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        config = PipelineConfig.model_validate(raw)
    except (json.JSONDecodeError, ValidationError) as e:
        raise ConfigurationError(f"Invalid config {path}: {e}") from e
    config = config.resolve_paths(path.resolve().parent)
    logging.info(f"Config loaded from {path} (output_dir={config.output_dir}, mock={config.mock})")
    return config
