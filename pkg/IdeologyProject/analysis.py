import itertools
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from sklearn.decomposition import PCA

from IdeologyProject.logger import logging
from IdeologyProject.exception import ConfigurationError, StageOrderingError
from IdeologyProject.config import DATA_DIR
from IdeologyProject.filtering import LIKERT_SCORES, ResponseRow, ScoreMatrix
from IdeologyProject.providers import Roster
from IdeologyProject.stats import bootstrap_mean_diff_ci, mann_whitney, mean_with_ci, welch_test
from IdeologyProject.utils import read_json

Aggregate = Literal["mean", "sum"]
BLOC_LANGUAGES = {"Arabic Countries": "ar", "China": "zh", "Russia": "ru", "Western": "en"}
EXHAUSTIVE_ORDER_MAX = 8
ORDER_STARTS = 8
FOREST_COLUMNS = ["item", "label", "mean_diff", "ci_lo", "ci_hi", "p_value", "n1", "n2"]



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class _Tables(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


class TagScoreTable(_Tables):
    values: pd.DataFrame
    counts: pd.DataFrame

    def long(self) -> pd.DataFrame:
        values = self.values.stack().rename("value")
        counts = self.counts.stack().rename("count")
        frame = pd.concat([values, counts], axis=1).dropna(subset=["value"]).reset_index()
        frame.columns = ["respondent", "code", "value", "count"]
        frame["count"] = frame["count"].astype(int)
        return frame.sort_values(["respondent", "code"]).reset_index(drop=True)


class BiplotResult(_Tables):
    points: pd.DataFrame
    loadings: pd.DataFrame
    explained_variance: tuple[float, float]
    top_tags: list[str]
    model_means: pd.DataFrame
    language_means: pd.DataFrame

    def to_tables(self) -> dict[str, pd.DataFrame]:
        variance = pd.DataFrame({"component": ["pc1", "pc2"], "explained_ratio": list(self.explained_variance)})
        loadings = self.loadings.copy()
        loadings["top_rank"] = loadings["code"].map({code: rank for rank, code in enumerate(self.top_tags, start=1)})
        return {"biplot_points": self.points, "biplot_loadings": loadings, "biplot_variance": variance,
                "biplot_model_means": self.model_means, "biplot_language_means": self.language_means}

    @classmethod
    def from_tables(cls, tables: dict[str, pd.DataFrame]) -> "BiplotResult":
        loadings = tables["biplot_loadings"]
        ranked = loadings.dropna(subset=["top_rank"]).sort_values("top_rank")
        ratios = tables["biplot_variance"]["explained_ratio"].tolist()
        return cls(points=tables["biplot_points"], loadings=loadings.drop(columns=["top_rank"]),
                   explained_variance=(float(ratios[0]), float(ratios[1])), top_tags=ranked["code"].astype(str).tolist(),
                   model_means=tables["biplot_model_means"], language_means=tables["biplot_language_means"])


class RadarResult(_Tables):
    groups: list[str]
    values: pd.DataFrame
    tag_order: list[str]
    display_names: dict[str, str] = Field(default_factory=dict)

    def to_table(self) -> pd.DataFrame:
        position = {code: index for index, code in enumerate(self.tag_order)}
        rows = [{"group": group, "code": code, "display_name": self.display_names.get(code, code),
                 "position": position[code], "value": float(self.values.loc[group, code])}
                for group in self.groups for code in self.tag_order]
        return pd.DataFrame(rows)

    @classmethod
    def from_table(cls, table: pd.DataFrame) -> "RadarResult":
        groups = list(dict.fromkeys(table["group"].tolist()))
        order = table.drop_duplicates("code").sort_values("position")
        values = table.pivot(index="group", columns="code", values="value").loc[groups]
        return cls(groups=groups, values=values, tag_order=order["code"].astype(str).tolist(),
                   display_names=dict(zip(order["code"].astype(str), order["display_name"])))


class ForestResult(_Tables):
    """All testable items; `selected` holds the top positives and negatives."""
    rows: pd.DataFrame
    overall_mean: float
    top_k: int
    excluded: list[dict] = Field(default_factory=list)

    @property
    def selected(self) -> pd.DataFrame:
        return select_top(self.rows, self.top_k)

    def to_table(self) -> pd.DataFrame:
        table = self.rows.copy()
        chosen = set(self.selected["item"])
        table["selected"] = table["item"].isin(chosen)
        table["overall_mean"] = self.overall_mean
        return table

    @classmethod
    def from_table(cls, table: pd.DataFrame, top_k: int) -> "ForestResult":
        overall = float(table["overall_mean"].iloc[0]) if len(table) else 0.0
        rows = table[FOREST_COLUMNS].copy()
        rows["item"] = rows["item"].astype(str)
        return cls(rows=rows, overall_mean=overall, top_k=top_k)


class GroupSelector(BaseModel):
    models: Optional[list[str]] = None
    languages: Optional[list[str]] = None
    countries: Optional[list[str]] = None
    blocs: Optional[list[str]] = None
    exclude_models: list[str] = Field(default_factory=list)


class ForestSpec(BaseModel):
    name: str
    group1: str
    group2: str


class GroupDefinitions(BaseModel):
    groups: dict[str, GroupSelector]
    radars: dict[str, list[str]] = Field(default_factory=dict)
    person_forests: list[ForestSpec] = Field(default_factory=list)
    tag_forests: list[ForestSpec] = Field(default_factory=list)


def load_group_definitions(path=DATA_DIR / "groups.json") -> GroupDefinitions:
    try:
        definitions = GroupDefinitions.model_validate(read_json(path))
    except ValueError as e:
        raise ConfigurationError(f"Invalid group definitions {path}: {e}") from e
    named = [name for names in definitions.radars.values() for name in names]
    named += [name for spec in definitions.person_forests + definitions.tag_forests for name in (spec.group1, spec.group2)]
    unknown = sorted(set(named) - set(definitions.groups))
    if unknown:
        raise ConfigurationError(f"Group definitions {path} reference unknown groups {unknown}")
    return definitions



####################################################################################################################
                                                ## Groups ##
####################################################################################################################



def _split(respondent: str) -> tuple[str, str]:
    model_id, _, language = respondent.rpartition("/")
    return model_id, language


def resolve_groups(definitions: dict[str, GroupSelector], respondents: list[str], roster: Roster) -> dict[str, list[str]]:
    """Members of each group among the given respondents; an empty group is a configuration error."""
    by_model = {model.model_id: model for model in roster.models}
    resolved = {}
    for name, selector in definitions.items():
        members = []
        for respondent in sorted(respondents):
            model_id, language = _split(respondent)
            spec = by_model.get(model_id)
            if model_id in selector.exclude_models:
                continue
            if selector.models is not None and model_id not in selector.models:
                continue
            if selector.languages is not None and language not in selector.languages:
                continue
            if selector.countries is not None and (spec is None or spec.country not in selector.countries):
                continue
            if selector.blocs is not None and (spec is None or spec.bloc not in selector.blocs):
                continue
            members.append(respondent)
        if not members:
            raise ConfigurationError(f"Respondent group {name!r} is empty")
        resolved[name] = members
    return resolved


def bloc_one_vs_rest(roster: Roster, bloc: str, language: Optional[str] = None) -> list[tuple[str, GroupSelector, GroupSelector]]:
    """Each model of a bloc against the rest of its bloc, in the bloc's language."""
    language = language or BLOC_LANGUAGES[bloc]
    members = [model.model_id for model in roster.models if model.bloc == bloc and language in model.supported_languages]
    pairs = []
    for model_id in members:
        if len(members) < 2:
            logging.warning(f"Bloc {bloc} has no other {language} model to compare {model_id} with")
            continue
        pairs.append((f"{model_id}-{language}",
                      GroupSelector(models=[model_id], languages=[language]),
                      GroupSelector(blocs=[bloc], languages=[language], exclude_models=[model_id])))
    return pairs



####################################################################################################################
                                                ## Tag scores ##
####################################################################################################################



def _tag_pairs(assignments: dict[str, set[str]]) -> pd.DataFrame:
    pairs = [(topic_id, code) for topic_id, codes in assignments.items() for code in codes]
    return pd.DataFrame(pairs, columns=["topic_id", "code"])


def mean_tag_scores(matrix: ScoreMatrix, assignments: dict[str, set[str]], aggregate: Aggregate = "mean") -> TagScoreTable:
    """Per (respondent, tag): mean of the respondent's scores over topics bearing the tag."""
    if len(matrix) == 0:
        raise StageOrderingError("Score matrix is empty")
    uncovered = sorted(set(matrix.topics) - set(assignments))
    if uncovered:
        logging.warning(f"{len(uncovered)} scored topics have no tag assignment")
    merged = matrix.with_respondent().merge(_tag_pairs(assignments), on="topic_id", how="inner")
    grouped = merged.groupby(["respondent", "code"])["score"]
    values = (grouped.mean() if aggregate == "mean" else grouped.sum()).unstack("code")
    counts = grouped.count().unstack("code").fillna(0).astype(int)
    values = values.sort_index().sort_index(axis=1)
    counts = counts.reindex(index=values.index, columns=values.columns, fill_value=0)
    return TagScoreTable(values=values, counts=counts)


def impute(values: pd.DataFrame) -> pd.DataFrame:
    """Fill missing cells with the tag's mean over respondents; tags with no value at all are dropped."""
    empty = [code for code in values.columns if values[code].isna().all()]
    if empty:
        logging.warning(f"Tags without any score dropped before centering: {empty}")
    values = values.drop(columns=empty)
    return values.fillna(values.mean(axis=0))


def double_center(table):
    """Subtract per-column means, then per-row means."""
    if isinstance(table, pd.DataFrame):
        return pd.DataFrame(double_center(table.to_numpy(dtype=float)), index=table.index, columns=table.columns)
    data = np.asarray(table, dtype=float)
    data = data - data.mean(axis=0, keepdims=True)
    return data - data.mean(axis=1, keepdims=True)



####################################################################################################################
                                                ## Biplot ##
####################################################################################################################



def pca_biplot(centered: pd.DataFrame, top_k: int = 30) -> BiplotResult:
    """Two leading components; with fewer than two tags the points sit at the origin and there are no arrows."""
    if centered.shape[0] < 2:
        raise ConfigurationError(f"PCA needs at least two respondents, got {centered.shape[0]}")
    if centered.shape[1] < 2:
        logging.warning(f"Only {centered.shape[1]} tags with scores; biplot has no arrows")
        scores = np.zeros((centered.shape[0], 2))
        components = np.zeros((2, centered.shape[1]))
        ratios = np.zeros(2)
    else:
        pca = PCA(n_components=2, svd_solver="full")
        scores = pca.fit_transform(centered.to_numpy(dtype=float))
        components = pca.components_.copy()
        ratios = pca.explained_variance_ratio_
    for index in range(2 if components.shape[1] else 0):
        anchor = int(np.argmax(np.abs(components[index])))
        if components[index, anchor] < 0:
            components[index] *= -1
            scores[:, index] *= -1

    respondents = list(centered.index)
    models, languages = zip(*(_split(respondent) for respondent in respondents))
    points = pd.DataFrame({"respondent": respondents, "model_id": models, "language": languages,
                           "pc1": scores[:, 0], "pc2": scores[:, 1]})
    codes = [str(code) for code in centered.columns]
    norms = np.sqrt(components[0] ** 2 + components[1] ** 2)
    loadings = pd.DataFrame({"code": codes, "l1": components[0], "l2": components[1], "norm": norms})
    ranked = sorted(range(len(codes)), key=lambda i: (-norms[i], codes[i]))
    top_tags = [codes[i] for i in ranked if norms[i] > 0][:top_k]
    model_means = points.groupby("model_id", sort=True)[["pc1", "pc2"]].mean().reset_index()
    language_means = points.groupby("language", sort=True)[["pc1", "pc2"]].mean().reset_index()
    logging.info(f"PCA explained variance: {ratios[0]:.4f}, {ratios[1]:.4f}")
    return BiplotResult(points=points, loadings=loadings, explained_variance=(float(ratios[0]), float(ratios[1])),
                        top_tags=top_tags, model_means=model_means, language_means=language_means)



####################################################################################################################
                                                ## Radar ##
####################################################################################################################



def _tour_cost(distances: np.ndarray, tour: list[int]) -> float:
    return float(sum(distances[tour[i], tour[(i + 1) % len(tour)]] for i in range(len(tour))))


def _canonical(tour: list[int]) -> list[int]:
    start = tour.index(0)
    tour = tour[start:] + tour[:start]
    if len(tour) > 2 and tour[-1] < tour[1]:
        tour = [tour[0]] + tour[1:][::-1]
    return tour


def _nearest_neighbor(distances: np.ndarray, start: int) -> list[int]:
    tour, remaining = [start], set(range(len(distances))) - {start}
    while remaining:
        last = tour[-1]
        nearest = min(remaining, key=lambda j: (distances[last, j], j))
        tour.append(nearest)
        remaining.remove(nearest)
    return tour


def _two_opt(distances: np.ndarray, tour: list[int]) -> list[int]:
    tour = list(tour)
    size = len(tour)
    improved = True
    while improved:
        improved = False
        for i in range(size - 2):
            a, b = tour[i], tour[i + 1]
            j = np.arange(i + 2, size if i > 0 else size - 1)
            if len(j) == 0:
                continue
            c = np.array(tour)[j]
            d = np.array(tour)[(j + 1) % size]
            delta = distances[a, c] + distances[b, d] - distances[a, b] - distances[c, d]
            best = int(np.argmin(delta))
            if delta[best] < -1e-12:
                k = int(j[best])
                tour[i + 1:k + 1] = tour[i + 1:k + 1][::-1]
                improved = True
                break
    return tour


def order_tags_smooth(values: pd.DataFrame, seed: int = 0) -> list[str]:
    """Circular tag order minimizing the summed squared differences between neighbouring tags over all groups.

    Up to eight tags are ordered exhaustively. Beyond that, nearest-neighbour tours from seeded starts
    and the sorted order are each improved by 2-opt and the cheapest tour wins.
    """
    codes = sorted(str(code) for code in values.columns)
    if len(codes) < 3:
        return codes
    data = values.rename(columns=str)[codes].to_numpy(dtype=float)
    distances = ((data[:, :, None] - data[:, None, :]) ** 2).sum(axis=0)

    if len(codes) <= EXHAUSTIVE_ORDER_MAX:
        best, best_cost = None, np.inf
        for rest in itertools.permutations(range(1, len(codes))):
            tour = [0, *rest]
            cost = _tour_cost(distances, tour)
            if cost < best_cost - 1e-12:
                best, best_cost = tour, cost
        return [codes[i] for i in _canonical(best)]

    rng = np.random.default_rng(seed)
    starts = [0] + sorted(rng.choice(np.arange(1, len(codes)), size=min(ORDER_STARTS - 1, len(codes) - 1), replace=False).tolist())
    tours = [_two_opt(distances, list(range(len(codes))))]
    tours += [_two_opt(distances, _nearest_neighbor(distances, start)) for start in starts]
    best = min(tours, key=lambda tour: _tour_cost(distances, tour))
    return [codes[i] for i in _canonical(best)]


def order_cost(values: pd.DataFrame, order: list[str]) -> float:
    data = values.rename(columns=str)[order].to_numpy(dtype=float)
    return float(((data - np.roll(data, -1, axis=1)) ** 2).sum())


def radar_aggregate(values: pd.DataFrame, groups: dict[str, list[str]], display_names: Optional[dict[str, str]] = None,
                    seed: int = 0, aggregate: Aggregate = "mean") -> RadarResult:
    """Group means per tag, zero-centred across groups and across tags, in smoothness order."""
    rows = {}
    for name, members in groups.items():
        present = [member for member in members if member in values.index]
        if not present:
            raise ConfigurationError(f"Radar group {name!r} has no respondent with tag scores")
        block = values.loc[present]
        rows[name] = block.mean(axis=0, skipna=True) if aggregate == "mean" else block.sum(axis=0, min_count=1)
    table = pd.DataFrame(rows).T
    incomplete = [code for code in table.columns if table[code].isna().any()]
    if incomplete:
        logging.warning(f"Radar tags without a value in every group dropped: {incomplete}")
    table = table.drop(columns=incomplete)
    table.columns = [str(code) for code in table.columns]
    centered = double_center(table)
    order = order_tags_smooth(centered, seed=seed)
    return RadarResult(groups=list(groups), values=centered, tag_order=order, display_names=display_names or {})



####################################################################################################################
                                                ## Forests ##
####################################################################################################################



def _check_disjoint(group1: list[str], group2: list[str]):
    if not group1 or not group2:
        raise ConfigurationError("Forest groups must both be nonempty")
    overlap = sorted(set(group1) & set(group2))
    if overlap:
        raise ConfigurationError(f"Forest groups overlap on {overlap}")


def _group_scores(matrix: ScoreMatrix, group1: list[str], group2: list[str]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    frame = matrix.with_respondent()
    first = frame[frame["respondent"].isin(group1)].groupby("topic_id")["score"]
    second = frame[frame["respondent"].isin(group2)].groupby("topic_id")["score"]
    first_scores = {topic: np.sort(series.to_numpy()) for topic, series in first}
    second_scores = {topic: np.sort(series.to_numpy()) for topic, series in second}
    common = sorted(set(first_scores) & set(second_scores))
    return {topic: (first_scores[topic], second_scores[topic]) for topic in common}


def _difference(x: np.ndarray, y: np.ndarray, aggregate: Aggregate) -> float:
    return float(x.mean() - y.mean()) if aggregate == "mean" else float(x.sum() - y.sum())


def select_top(rows: pd.DataFrame, top_k: int) -> pd.DataFrame:
    """Top-k positive and top-k negative rows by |mean_diff|, ties by item id."""
    ordered = rows.assign(_magnitude=rows["mean_diff"].abs()).sort_values(["_magnitude", "item"], ascending=[False, True])
    positives = ordered[ordered["mean_diff"] > 0].head(top_k)
    negatives = ordered[ordered["mean_diff"] < 0].head(top_k)
    return pd.concat([positives, negatives]).drop(columns=["_magnitude"]).reset_index(drop=True)


def person_forest(matrix: ScoreMatrix, group1: list[str], group2: list[str], top_k: int = 20, n_resamples: int = 10000,
                  seed: int = 0, labels: Optional[dict[str, str]] = None, aggregate: Aggregate = "mean") -> ForestResult:
    """Per topic scored by both groups: difference of group means, Mann-Whitney p, bootstrap CI."""
    _check_disjoint(group1, group2)
    labels = labels or {}
    rows = []
    for topic_id, (x, y) in _group_scores(matrix, group1, group2).items():
        low, high = bootstrap_mean_diff_ci(x, y, n_resamples=n_resamples, seed=seed, item=topic_id)
        rows.append({"item": topic_id, "label": labels.get(topic_id, topic_id), "mean_diff": _difference(x, y, aggregate),
                     "ci_lo": low, "ci_hi": high, "p_value": mann_whitney(x, y).p_value, "n1": len(x), "n2": len(y)})
    frame = pd.DataFrame(rows, columns=FOREST_COLUMNS)
    overall = float(frame["mean_diff"].mean()) if len(frame) else 0.0
    logging.info(f"Person forest over {len(frame)} topics, overall mean difference {overall:.4f}")
    return ForestResult(rows=frame, overall_mean=overall, top_k=top_k)


def tag_forest(matrix: ScoreMatrix, assignments: dict[str, set[str]], group1: list[str], group2: list[str],
               top_k: int = 10, z: float = 1.96, display_names: Optional[dict[str, str]] = None,
               aggregate: Aggregate = "mean") -> ForestResult:
    """Per tag: mean of per-topic differences inside the tag, Welch test against topics outside it."""
    _check_disjoint(group1, group2)
    display_names = display_names or {}
    scores = _group_scores(matrix, group1, group2)
    topics = list(scores)
    diffs = np.array([_difference(*scores[topic], aggregate) for topic in topics])
    codes = sorted({code for topic in topics for code in assignments.get(topic, set())})
    rows, excluded = [], []
    for code in codes:
        inside = np.array([code in assignments.get(topic, set()) for topic in topics])
        in_diffs, out_diffs = diffs[inside], diffs[~inside]
        if len(in_diffs) < 2 or len(out_diffs) < 2:
            excluded.append({"item": code, "n_in": int(len(in_diffs)), "n_out": int(len(out_diffs)),
                             "reason": "fewer than two topics inside or outside the tag"})
            continue
        mean, low, high = mean_with_ci(in_diffs, z)
        if aggregate == "sum":
            mean = float(in_diffs.sum())
        rows.append({"item": code, "label": display_names.get(code, code), "mean_diff": mean, "ci_lo": low,
                     "ci_hi": high, "p_value": welch_test(in_diffs, out_diffs).p_value,
                     "n1": int(len(in_diffs)), "n2": int(len(out_diffs))})
    if excluded:
        logging.warning(f"Tag forest excluded {len(excluded)} tags with too few topics")
    frame = pd.DataFrame(rows, columns=FOREST_COLUMNS)
    overall = float(diffs.mean()) if len(diffs) else 0.0
    return ForestResult(rows=frame, overall_mean=overall, top_k=top_k, excluded=excluded)



####################################################################################################################
                                                ## Descriptives ##
####################################################################################################################



def label_distribution(matrix: ScoreMatrix) -> pd.DataFrame:
    """Label counts and mean score per respondent and per language."""
    labels = {score: label for label, score in LIKERT_SCORES.items()}
    frame = matrix.with_respondent()
    frame["label"] = frame["score"].map(labels)
    tables = []
    for scope, column in (("respondent", "respondent"), ("language", "language")):
        counts = frame.groupby([column, "label"]).size().unstack("label").reindex(columns=list(LIKERT_SCORES), fill_value=0)
        counts = counts.fillna(0).astype(int)
        counts["mean_score"] = frame.groupby(column)["score"].mean()
        counts["responses"] = frame.groupby(column).size()
        counts = counts.reset_index().rename(columns={column: "name"})
        counts.insert(0, "scope", scope)
        tables.append(counts)
    return pd.concat(tables, ignore_index=True)


def refusal_rate_by_tag(rows: list[ResponseRow], assignments: dict[str, set[str]]) -> pd.DataFrame:
    totals: dict[str, list[int]] = {}
    for row in rows:
        for code in assignments.get(row.topic_id, set()):
            counts = totals.setdefault(code, [0, 0])
            counts[0] += 1
            counts[1] += int(row.verdict == "refusal")
    records = [{"code": code, "responses": total, "refusals": refused, "refusal_rate": refused / total}
               for code, (total, refused) in sorted(totals.items())]
    return pd.DataFrame(records, columns=["code", "responses", "refusals", "refusal_rate"])


def table_path(directory, name: str) -> Path:
    return Path(directory) / f"{name}.csv"
