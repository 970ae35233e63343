import json
from pathlib import Path

import pytest

from IdeologyProject.corpus import PopularityMetrics, Topic

LANGUAGE_PREFIX = {"ar": "سيرة", "zh": "简介", "en": "Biography", "fr": "Biographie", "ru": "Биография", "es": "Biografía"}
OCCUPATIONS = ["politician", "social activist", "writer", "diplomat", "physicist"]

ROSTER = {
    "blocs": {"US": "Western", "China": "China"},
    "models": [
        {"model_id": model_id, "variant": model_id, "organization": "Test", "country": country,
         "languages": ["en", "zh"], "extra_languages": [],
         "endpoint": {"kind": "mock", "base_url": "mock://", "model": model_id.lower(), "api_key_env": None}}
        for model_id, country in (("Gemini", "US"), ("Grok", "US"), ("GPT", "US"), ("Qwen", "China"),
                                  ("Wenxiaoyan", "China"))
    ],
}

GROUPS = {
    "groups": {
        "English": {"languages": ["en"]},
        "Chinese": {"languages": ["zh"]},
        "Western": {"blocs": ["Western"]},
        "China": {"blocs": ["China"]},
        "China-zh": {"countries": ["China"], "languages": ["zh"]},
        "US-en": {"countries": ["US"], "languages": ["en"]},
        "Gemini-en": {"models": ["Gemini"], "languages": ["en"]},
        "US-en without Gemini": {"countries": ["US"], "languages": ["en"], "exclude_models": ["Gemini"]},
    },
    "radars": {"language": ["English", "Chinese"], "bloc": ["Western", "China"]},
    "person_forests": [{"name": "china_zh_vs_us_en", "group1": "China-zh", "group2": "US-en"}],
    "tag_forests": [{"name": "gemini_vs_us_en", "group1": "Gemini-en", "group2": "US-en without Gemini"}],
}


def person_name(index: int) -> str:
    return f"Person{index:03d} Example"


def write_pantheon(root: Path, people: int = 60) -> tuple[Path, Path]:
    """Synthetic Pantheon snapshot plus six-language summaries; three extra rows fail the criteria."""
    header = ["id", "name", "birthyear", "deathyear", "occupation", "l", "non_en_page_views", "coefficient_of_variation"]
    rows = []
    for index in range(people):
        rows.append([f"Q{index}", person_name(index), str(1900 + index % 80), "" if index % 3 else str(1990 + index % 20),
                     OCCUPATIONS[index % len(OCCUPATIONS)], str(40 + index), str(500000 + 1000 * index),
                     str(0.5 + index / 1000)])
    rows.append(["Q900", "Mononym", "1950", "", "writer", "60", "900000", "0.5"])
    rows.append(["Q901", "Old Timer", "1801", "1870", "politician", "60", "900000", "0.5"])
    rows.append(["Q902", "Missing Summaries", "1950", "", "politician", "60", "900000", "0.5"])
    pantheon = root / "pantheon.tsv"
    pantheon.write_text("\n".join("\t".join(row) for row in [header] + rows) + "\n", encoding="utf-8")

    summaries = root / "summaries"
    summaries.mkdir()
    for language, prefix in LANGUAGE_PREFIX.items():
        records = [{"id": f"Q{index}", "name": f"{person_name(index)} ({language})" if language != "en" else person_name(index),
                    "summary": f"{prefix}: {person_name(index)} was a {OCCUPATIONS[index % len(OCCUPATIONS)]}."}
                   for index in range(people)]
        records += [{"id": "Q900", "name": "Mononym", "summary": f"{prefix}: Mononym."},
                    {"id": "Q901", "name": "Old Timer", "summary": f"{prefix}: Old Timer."}]
        if language == "en":
            records.append({"id": "Q902", "name": "Missing Summaries", "summary": "Only English."})
        (summaries / f"{language}.jsonl").write_text(
            "".join(json.dumps(record, ensure_ascii=False) + "\n" for record in records), encoding="utf-8")
    return pantheon, summaries


@pytest.fixture
def pipeline_config(tmp_path: Path) -> Path:
    pantheon, summaries = write_pantheon(tmp_path)
    (tmp_path / "roster.json").write_text(json.dumps(ROSTER), encoding="utf-8")
    (tmp_path / "groups.json").write_text(json.dumps(GROUPS), encoding="utf-8")
    config = {
        "pantheon_path": pantheon.name,
        "summaries_dir": summaries.name,
        "roster_path": "roster.json",
        "groups_path": "groups.json",
        "output_dir": "out",
        "languages": ["en", "zh"],
        "topic_limit": 50,
        "mock": True,
        "concurrency": {"workers": 4},
        "retry": {"max_retries": 1, "backoff_base_seconds": 0.0},
        "analysis": {"n_resamples": 200, "seed": 7},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def make_topic(topic_id: str = "Q1", name: str = "Ada Example", summary: str = "Ada Example was a diplomat.",
               languages=("en", "zh"), tier: int = 1) -> Topic:
    return Topic(id=topic_id,
                 names={language: name if language == "en" else f"{name} ({language})" for language in languages},
                 birth_year=1950, occupation="diplomat", tier=tier,
                 summaries={language: summary for language in languages},
                 metrics=PopularityMetrics(language_editions=50, non_english_views=1e6, view_cv=0.5))


@pytest.fixture
def topic() -> Topic:
    return make_topic()
