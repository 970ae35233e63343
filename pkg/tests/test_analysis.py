import itertools
import json

import numpy as np
import pandas as pd
import pytest

from IdeologyProject.analysis import (GroupSelector, bloc_one_vs_rest, double_center, mean_tag_scores, order_cost,
                                      pca_biplot, person_forest, radar_aggregate, resolve_groups, select_top,
                                      tag_forest)
from IdeologyProject.exception import ConfigurationError
from IdeologyProject.filtering import ScoreMatrix
from IdeologyProject.providers import load_roster

from conftest import ROSTER


@pytest.fixture
def roster(tmp_path):
    path = tmp_path / "roster.json"
    path.write_text(json.dumps(ROSTER), encoding="utf-8")
    return load_roster(path)


def _matrix(scores: dict[tuple[str, str], float]) -> ScoreMatrix:
    rows = []
    for (respondent, topic_id), score in scores.items():
        model_id, language = respondent.split("/")
        rows.append({"model_id": model_id, "language": language, "topic_id": topic_id, "score": score})
    return ScoreMatrix(pd.DataFrame(rows))


def test_double_center_zeroes_row_and_column_sums():
    data = np.random.default_rng(0).random((5, 7))
    centered = double_center(data)
    assert np.allclose(centered.sum(axis=0), 0.0)
    assert np.allclose(centered.sum(axis=1), 0.0)


def test_mean_tag_scores_average_over_tagged_topics():
    matrix = _matrix({("A/en", "Q1"): 0.0, ("A/en", "Q2"): 1.0, ("B/en", "Q1"): 0.5})
    table = mean_tag_scores(matrix, {"Q1": {"101"}, "Q2": {"101", "202"}})
    assert table.values.loc["A/en", "101"] == 0.5
    assert table.values.loc["A/en", "202"] == 1.0
    assert np.isnan(table.values.loc["B/en", "202"])
    assert table.counts.loc["A/en", "101"] == 2 and table.counts.loc["B/en", "202"] == 0
    assert len(table.long()) == 3


def test_pca_recovers_planted_rank_two_structure():
    rng = np.random.default_rng(1)
    planted = 3.0 * np.outer(rng.normal(size=8), rng.normal(size=6)) + np.outer(rng.normal(size=8), rng.normal(size=6))
    respondents = [f"M{i}/{'en' if i % 2 else 'zh'}" for i in range(8)]
    centered = double_center(pd.DataFrame(planted, index=respondents, columns=[f"{100 + j}" for j in range(6)]))
    result = pca_biplot(centered, top_k=4)

    assert sum(result.explained_variance) == pytest.approx(1.0)
    loadings = result.loadings[["l1", "l2"]].to_numpy()
    assert np.allclose(loadings.T @ loadings, np.eye(2), atol=1e-9)
    reconstructed = result.points[["pc1", "pc2"]].to_numpy() @ loadings.T
    assert np.allclose(reconstructed, centered.to_numpy(), atol=1e-9)
    for column in ("l1", "l2"):
        values = result.loadings[column].to_numpy()
        assert values[np.argmax(np.abs(values))] > 0
    assert len(result.top_tags) == 4
    assert result.model_means["pc1"].tolist() == pytest.approx(
        result.points.groupby("model_id")["pc1"].mean().sort_index().tolist())


def test_pca_without_tags_has_no_arrows():
    centered = pd.DataFrame(index=["A/en", "B/en", "C/zh"], columns=[], dtype=float)
    result = pca_biplot(centered)
    assert result.top_tags == []
    assert (result.points[["pc1", "pc2"]].to_numpy() == 0).all()


def test_radar_is_centred_and_ordered_optimally():
    rng = np.random.default_rng(2)
    values = pd.DataFrame(rng.random((4, 5)), index=["A/en", "B/en", "A/zh", "B/zh"],
                          columns=["101", "202", "303", "404", "505"])
    result = radar_aggregate(values, {"English": ["A/en", "B/en"], "Chinese": ["A/zh", "B/zh"]}, seed=3)
    assert np.allclose(result.values.sum(axis=0), 0.0)
    assert np.allclose(result.values.sum(axis=1), 0.0)

    codes = list(result.values.columns)
    best = min(order_cost(result.values, [codes[0], *rest]) for rest in itertools.permutations(codes[1:]))
    assert order_cost(result.values, result.tag_order) == pytest.approx(best)
    assert sorted(result.tag_order) == sorted(codes)


def test_radar_with_two_tags_keeps_sorted_order():
    values = pd.DataFrame([[0.2, 0.9], [0.7, 0.1]], index=["A/en", "A/zh"], columns=["202", "101"])
    result = radar_aggregate(values, {"English": ["A/en"], "Chinese": ["A/zh"]})
    assert result.tag_order == ["101", "202"]


def test_radar_group_without_scores_is_configuration_error():
    values = pd.DataFrame([[0.2, 0.9]], index=["A/en"], columns=["101", "202"])
    with pytest.raises(ConfigurationError):
        radar_aggregate(values, {"English": ["A/en"], "Chinese": ["A/zh"]})


def test_person_forest_is_antisymmetric_under_group_swap():
    scores = {}
    for topic, base in (("Q1", 0.0), ("Q2", 0.25), ("Q3", 0.5)):
        scores.update({("A/en", topic): base, ("B/en", topic): base + 0.25,
                       ("C/en", topic): 1.0 - base, ("D/en", topic): 0.75})
    matrix = _matrix(scores)
    forward = person_forest(matrix, ["A/en", "B/en"], ["C/en", "D/en"], n_resamples=200)
    backward = person_forest(matrix, ["C/en", "D/en"], ["A/en", "B/en"], n_resamples=200)
    assert forward.rows["mean_diff"].tolist() == pytest.approx((-backward.rows["mean_diff"]).tolist())
    assert forward.rows["p_value"].tolist() == pytest.approx(backward.rows["p_value"].tolist())
    assert forward.overall_mean == pytest.approx(-backward.overall_mean)


def test_forest_groups_must_be_disjoint():
    matrix = _matrix({("A/en", "Q1"): 0.5, ("B/en", "Q1"): 0.75})
    with pytest.raises(ConfigurationError):
        person_forest(matrix, ["A/en"], ["A/en", "B/en"])


def test_select_top_takes_both_signs():
    rows = pd.DataFrame({"item": ["a", "b", "c", "d", "e"], "mean_diff": [0.5, 0.2, 0.1, -0.3, 0.0]})
    chosen = select_top(rows, 2)
    assert chosen["item"].tolist() == ["a", "b", "d"]
    assert len(select_top(rows, 10)) == 4


def test_tag_forest_excludes_sparse_tags():
    scores = {}
    for index, topic in enumerate(["Q1", "Q2", "Q3", "Q4"]):
        scores.update({("A/en", topic): 0.25 * index, ("B/en", topic): 0.5})
    assignments = {"Q1": {"101"}, "Q2": {"101"}, "Q3": {"202"}, "Q4": set()}
    result = tag_forest(_matrix(scores), assignments, ["A/en"], ["B/en"], display_names={"101": "Relations +"})
    assert result.rows["item"].tolist() == ["101"]
    assert result.rows["label"].tolist() == ["Relations +"]
    assert result.rows["mean_diff"].iloc[0] == pytest.approx(-0.375)
    assert [entry["item"] for entry in result.excluded] == ["202"]


def test_resolve_groups_applies_every_selector(roster):
    respondents = ["Gemini/en", "Grok/en", "GPT/en", "Qwen/zh", "Qwen/en", "GPT/zh"]
    groups = resolve_groups({"us_en": GroupSelector(countries=["US"], languages=["en"], exclude_models=["Gemini"]),
                             "china": GroupSelector(blocs=["China"])}, respondents, roster)
    assert groups == {"us_en": ["GPT/en", "Grok/en"], "china": ["Qwen/en", "Qwen/zh"]}
    with pytest.raises(ConfigurationError):
        resolve_groups({"nobody": GroupSelector(models=["Missing"])}, respondents, roster)


def test_bloc_one_vs_rest_pairs_each_model(roster):
    pairs = bloc_one_vs_rest(roster, "China")
    assert [name for name, _, _ in pairs] == ["Qwen-zh", "Wenxiaoyan-zh"]
    _, single, rest = pairs[0]
    assert single.models == ["Qwen"] and rest.exclude_models == ["Qwen"]
