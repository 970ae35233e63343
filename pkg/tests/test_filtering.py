import pytest

from IdeologyProject.exception import ConfigurationError, StageOrderingError
from IdeologyProject.filtering import (ResponseRow, build_score_matrix, filter_coverage, ingest_released_dataset,
                                       load_score_matrix, run_filters, support_from_rows)


def _row(model, topic, verdict="yes", label="positive", language="en"):
    return ResponseRow(model_id=model, language=language, topic_id=topic, verdict=verdict, label=label)


SUPPORT = {"en": {"A", "B", "C", "D"}}


def test_counters_add_up_and_scores_map_linearly():
    rows = [_row("A", "Q1", label="very negative"), _row("B", "Q1", label="very positive"),
            _row("C", "Q1", verdict="no"), _row("D", "Q1", verdict="refusal"),
            _row("A", "Q2", label="neutral"), _row("B", "Q2", label="unknown"),
            _row("C", "Q2", label="unknown"), _row("D", "Q2", verdict="no")]
    matrix, removals = run_filters(rows, SUPPORT)
    counters = matrix.counters
    assert (counters.raw, counters.removed_stage1, counters.removed_stage2) == (8, 3, 2)
    assert counters.removed_coverage == 1 and counters.kept == 2
    assert counters.prompts_total == 2 and counters.prompts_dropped == 1
    assert len(removals) == 6
    assert matrix.frame["score"].tolist() == [0.0, 1.0]
    assert counters.fractions()["stage1_removed"] == pytest.approx(3 / 8)


def test_coverage_keeps_exactly_half():
    rows = [_row("A", "Q1"), _row("B", "Q1")]
    kept, removed, dropped = filter_coverage(rows, SUPPORT)
    assert len(kept) == 2 and removed == [] and dropped == []

    kept, removed, dropped = filter_coverage(rows[:1], SUPPORT)
    assert kept == [] and len(removed) == 1
    assert (dropped[0].valid, dropped[0].supported) == (1, 4)


def test_missing_verdict_means_validation_not_run():
    with pytest.raises(StageOrderingError):
        run_filters([_row("A", "Q1", verdict=None)], SUPPORT)


def test_duplicate_response_keeps_first():
    matrix = build_score_matrix([_row("A", "Q1", label="negative"), _row("A", "Q1", label="positive")])
    assert len(matrix) == 1 and matrix.frame["score"].iloc[0] == 0.25


def test_support_from_rows_counts_models_per_language():
    rows = [_row("A", "Q1"), _row("B", "Q1", language="zh"), _row("A", "Q2", language="zh")]
    assert support_from_rows(rows) == {"en": {"A"}, "zh": {"A", "B"}}


def test_score_matrix_requires_filter_stage(tmp_path):
    with pytest.raises(StageOrderingError):
        load_score_matrix(tmp_path / "scores.csv")


def test_score_matrix_file_round_trip(tmp_path):
    matrix = build_score_matrix([_row("B", "Q2", label="neutral"), _row("A", "Q1", label="negative")])
    matrix.save(tmp_path / "scores.csv", manifest_digest="abc")
    loaded = load_score_matrix(tmp_path / "scores.csv")
    assert loaded.frame.to_dict(orient="records") == matrix.frame.to_dict(orient="records")


def test_prompt_with_no_valid_response_counts_as_dropped():
    support = {"en": {"A", "B", "C"}}
    rows = [_row("A", "Q1"), _row("B", "Q1"), _row("C", "Q1"),
            _row("A", "Q2", verdict="no"), _row("B", "Q2", verdict="no"), _row("C", "Q2", label="unknown")]
    matrix, _ = run_filters(rows, support)
    counters = matrix.counters
    assert counters.prompts_total == 2 and counters.prompts_dropped == 1
    assert counters.fractions()["coverage_removed_prompts"] == 0.5
    assert counters.removed_coverage == 0 and counters.kept == 3

    _, removed, dropped = filter_coverage([], support, {("Q2", "en")})
    assert removed == []
    assert [(prompt.topic_id, prompt.valid, prompt.supported) for prompt in dropped] == [("Q2", 0, 3)]


def test_score_matrix_keeps_na_like_topic_ids(tmp_path):
    matrix = build_score_matrix([_row("A", "NA", label="neutral"), _row("A", "null", label="positive")])
    matrix.save(tmp_path / "scores.csv")
    loaded = load_score_matrix(tmp_path / "scores.csv")
    assert loaded.frame["topic_id"].tolist() == ["NA", "null"]


def test_ingest_released_dataset(tmp_path):
    path = tmp_path / "released.csv"
    path.write_text("model,language,topic_id,stage1_verdict,stage2_label,tags\n"
                    "GPT,English,Q1,yes,Positive,101;501\n"
                    "Qwen,zh,Q1,Yes,负面,101;501\n"
                    "Qwen,Klingon,Q1,yes,neutral,\n"
                    "GPT,en,Q2,maybe,neutral,\n"
                    "GPT,en,Q3,yes,,\n", encoding="utf-8")
    rows, tags = ingest_released_dataset(path)
    assert [(row.model_id, row.language, row.verdict, row.label) for row in rows] == [
        ("GPT", "en", "yes", "positive"), ("Qwen", "zh", "yes", "negative"),
        ("GPT", "en", "no", "neutral"), ("GPT", "en", "yes", "unknown")]
    assert {assignment.topic_id: assignment.tags for assignment in tags} == {"Q1": ["101", "501"], "Q2": [], "Q3": []}


def test_ingest_released_dataset_needs_columns(tmp_path):
    path = tmp_path / "released.csv"
    path.write_text("model,language\nGPT,en\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        ingest_released_dataset(path)
