import re
import sys
import argparse
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import pandas as pd
from pydantic import BaseModel, Field

from IdeologyProject import __version__
from IdeologyProject.logger import logging, count_log_levels
from IdeologyProject.exception import ConfigurationError, IdeologyException, StageOrderingError
from IdeologyProject.config import LANGUAGES, PipelineConfig, load_config
from IdeologyProject.corpus import (SummaryStore, apply_selection_criteria, load_pantheon, load_topics, select_topics,
                                    tier_counts, write_rejects, write_topics)
from IdeologyProject.tagging import (TAXONOMY_SIZE, TagAssignment, assignments_by_topic, fetch_assignments, load_taxonomy,
                                     tag_frequencies, tag_topics)
from IdeologyProject.providers import BLOCS, ChatClient, Roster, build_http_provider, load_roster, utc_now
from IdeologyProject.store import ElicitationStore, ExchangeStore, TagStore, ValidationStore
from IdeologyProject.mock import MockProvider
from IdeologyProject.elicitation import (build_respondents, fetch_records, load_modular_prompt, load_search_sample,
                                         load_templates, run_campaign, search_templates)
from IdeologyProject.validation import fetch_validations, label_is_extractable, load_judge_templates, validate_campaign
from IdeologyProject.filtering import (ResponseRow, ingest_released_dataset, load_score_matrix, rows_from_stores,
                                       run_filters, support_from_rows)
from IdeologyProject.analysis import (BiplotResult, ForestResult, RadarResult, bloc_one_vs_rest, double_center, impute,
                                      label_distribution, load_group_definitions, mean_tag_scores, pca_biplot,
                                      person_forest, radar_aggregate, refusal_rate_by_tag, resolve_groups, tag_forest)
from IdeologyProject.figures import (render_biplot, render_forest, render_label_distribution, render_radar,
                                     render_tag_frequencies, save_svg)
from IdeologyProject.utils import (digest_file, digest_payload, read_json, read_jsonl, save_table, write_json,
                                   write_jsonl)

TEXT_COLUMNS = {column: str for column in ("code", "item", "label", "display_name", "respondent", "model_id",
                                           "language", "group", "name", "topic_id", "scope", "verdict")}



####################################################################################################################
                                                ## Pydentic Models ##
####################################################################################################################



class StageEntry(BaseModel):
    digest: str
    inputs: dict[str, str] = Field(default_factory=dict)
    counters: dict = Field(default_factory=dict)
    started_at: str
    finished_at: str


class RunManifest(BaseModel):
    tool_version: str = __version__
    seed: int = 0
    config: dict = Field(default_factory=dict)
    stages: dict[str, StageEntry] = Field(default_factory=dict)



####################################################################################################################
                                                ## Manifest and run report ##
####################################################################################################################



def load_manifest(config: PipelineConfig) -> RunManifest:
    if config.manifest_path.is_file():
        return RunManifest.model_validate(read_json(config.manifest_path))
    return RunManifest(seed=config.analysis.seed, config=config.digest_view())


def stage_digest(config: PipelineConfig, stage: str, inputs: dict[str, str]) -> str:
    """Digest of what determines a stage's outputs; timestamps and call counts stay out."""
    return digest_payload({"config": config.digest_view(), "stage": stage, "inputs": inputs,
                           "seed": config.analysis.seed, "version": __version__})


def record_stage(config: PipelineConfig, stage: str, digest: str, inputs: dict[str, str], counters: dict,
                 started_at: str) -> None:
    manifest = load_manifest(config)
    manifest.config = config.digest_view()
    manifest.seed = config.analysis.seed
    manifest.stages[stage] = StageEntry(digest=digest, inputs=inputs, counters=counters, started_at=started_at,
                                        finished_at=utc_now())
    write_json(config.manifest_path, manifest.model_dump(mode="json"))


def write_run_report(config: PipelineConfig, section: str, payload: dict) -> dict:
    """Merge one stage's section into the run report, with the log's warning and error counts."""
    report = read_json(config.run_report_path) if config.run_report_path.is_file() else {}
    report[section] = payload
    report["log_levels"] = count_log_levels()
    report["tool_version"] = __version__
    write_json(config.run_report_path, report)
    return report


def store_digest(records: list[dict]) -> str:
    return digest_payload(records)


def _require(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise StageOrderingError(f"{path} does not exist; run the {stage} stage first")
    return path


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_")


def read_table(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=TEXT_COLUMNS, keep_default_na=False, na_values=[""])



####################################################################################################################
                                                ## Client ##
####################################################################################################################



def _mock_scales(config: PipelineConfig) -> list[list[str]]:
    scales = [template.scale for template in load_templates(config.template_dir, LANGUAGES).values()]
    if config.modular_prompt_path.is_file():
        prompt = load_modular_prompt(config.modular_prompt_path)
        scales += [variant["labels"] for variant in prompt.dimensions["scale"].variants]
    return scales


def build_client(config: PipelineConfig, roster: Roster, store: Optional[ExchangeStore] = None,
                 mock: Optional[bool] = None) -> ChatClient:
    """Providers for every roster model and judge; in mock mode none of them touches the network."""
    mock = config.mock if mock is None else mock
    judge_models = sorted({config.judges.tagging, config.judges.description, config.judges.label})
    endpoints = {model.model_id: model.endpoint for model in roster.models}
    endpoints.update({model_id: config.judges.endpoint_for(model_id) for model_id in judge_models})
    scales = None
    providers = {}
    for model_id, endpoint in endpoints.items():
        if mock or endpoint.kind == "mock":
            scales = scales or _mock_scales(config)
            providers[model_id] = MockProvider(model_id, options=config.mock_options, scales=scales)
        else:
            providers[model_id] = build_http_provider(endpoint, config.retry.timeout_seconds)
    return ChatClient(providers, config.retry, config.concurrency, store=store)


@contextmanager
def pipeline_client(config: PipelineConfig, roster: Optional[Roster] = None):
    roster = roster or load_roster(config.roster_path)
    store = ExchangeStore(config.exchanges_path)
    client = build_client(config, roster, store)
    try:
        yield client
    finally:
        client.close_connection()
        store.close_connection()



####################################################################################################################
                                                ## Stages ##
####################################################################################################################



def _require_input(path: Path) -> Path:
    if not Path(path).is_file():
        raise ConfigurationError(f"Input file not found: {path}")
    return path


def select_topics_stage(config: PipelineConfig) -> dict:
    if config.pantheon_path is None or config.summaries_dir is None:
        raise ConfigurationError("Topic selection needs pantheon_path and summaries_dir in the config")
    started = utc_now()
    inputs = {"pantheon": digest_file(_require_input(config.pantheon_path))}
    records, load_rejects = load_pantheon(config.pantheon_path, config.pantheon_format, config.cv_column,
                                          config.view_column_prefix)
    summaries = SummaryStore(config.summaries_dir)
    try:
        candidates, criteria_rejects = apply_selection_criteria(records, summaries)
    finally:
        summaries.close_connection()
    selected, tier_rejects = select_topics(candidates, config.tiers, config.topic_limit)
    write_topics(selected, config.topics_path)
    write_rejects(load_rejects + criteria_rejects + tier_rejects, config.topic_rejects_path)
    counters = {"records": len(records), "candidates": len(candidates), "selected": len(selected),
                "rejected": len(load_rejects) + len(criteria_rejects) + len(tier_rejects),
                "tiers": {str(tier): count for tier, count in tier_counts(selected).items()}}
    record_stage(config, "select-topics", stage_digest(config, "select-topics", inputs), inputs, counters, started)
    write_run_report(config, "select_topics", counters)
    return counters


def _topics(config: PipelineConfig, topic_ids_path: Optional[Path] = None):
    topics = load_topics(_require(config.topics_path, "select-topics"))
    if topic_ids_path is not None:
        wanted = {line.strip() for line in Path(topic_ids_path).read_text(encoding="utf-8").splitlines() if line.strip()}
        topics = [topic for topic in topics if topic.id in wanted]
    return topics


def tag_stage(config: PipelineConfig, retry_failed: bool = False) -> dict:
    started = utc_now()
    topics = _topics(config)
    taxonomy = load_taxonomy(config.taxonomy_path, expected_size=TAXONOMY_SIZE)
    inputs = {"topics": store_digest([topic.model_dump(mode="json") for topic in topics]),
              "taxonomy": digest_file(config.taxonomy_path)}
    store = TagStore(config.tags_path)
    with pipeline_client(config) as client:
        assignments = tag_topics(topics, client, store, taxonomy, config.judges.tagging, config.tagging_decoding,
                                 workers=config.concurrency.workers, retry_failed=retry_failed)
        calls = client.total_calls
    counters = {"topics": len(topics), "tagged": sum(1 for a in assignments if a.status == "ok"),
                "failed": sum(1 for a in assignments if a.status == "failed")}
    record_stage(config, "tag", stage_digest(config, "tag", inputs), inputs, counters, started)
    write_run_report(config, "tag", {**counters, "provider_calls": calls})
    return counters


def elicit_stage(config: PipelineConfig, models: Optional[list[str]] = None, languages: Optional[list[str]] = None,
                 topic_ids_path: Optional[Path] = None, store_path: Optional[Path] = None) -> dict:
    started = utc_now()
    roster = load_roster(config.roster_path).subset(models or config.models)
    languages = languages or config.languages
    respondents = build_respondents(roster, languages)
    topics = _topics(config, topic_ids_path)
    templates = load_templates(config.template_dir, languages)
    inputs = {"topics": store_digest([topic.model_dump(mode="json") for topic in topics]),
              **{f"template_{language}": template.version for language, template in templates.items()}}
    store = ElicitationStore(store_path or config.elicitations_path)
    with pipeline_client(config, roster) as client:
        summary = run_campaign(respondents, topics, client, store, templates, config.elicitation_decoding,
                               workers=config.concurrency.workers)
        calls = dict(sorted(client.provider_calls.items()))
    counters = {"respondents": len(respondents), "topics": len(topics), **summary.totals}
    record_stage(config, "elicit", stage_digest(config, "elicit", inputs), inputs, counters, started)
    write_run_report(config, "elicit", {**summary.model_dump(), "provider_calls": calls})
    return counters


def validate_stage(config: PipelineConfig, store_path: Optional[Path] = None, judge_desc: Optional[str] = None,
                   judge_label: Optional[str] = None) -> dict:
    started = utc_now()
    judges = config.judges.model_copy(update={key: value for key, value in
                                              (("description", judge_desc), ("label", judge_label)) if value})
    config = config.model_copy(update={"judges": judges})
    records = fetch_records(ElicitationStore(_require(Path(store_path or config.elicitations_path), "elicit")))
    topics = _topics(config)
    languages = sorted({record.language for record in records})
    templates = load_templates(config.template_dir, languages)
    judge_templates = load_judge_templates(config.judge_template_dir)
    inputs = {"elicitations": store_digest([record.model_dump(mode="json") for record in records]),
              "judge_templates": digest_payload(judge_templates.model_dump())}
    store = ValidationStore(config.validations_path)
    with pipeline_client(config) as client:
        summary = validate_campaign(records, topics, templates, client, store, judges, judge_templates,
                                    config.validation_decoding, workers=config.concurrency.workers)
        calls = client.total_calls
    counters = {"verdicts": summary.verdicts, "methods": summary.methods, "flagged": summary.flagged}
    record_stage(config, "validate", stage_digest(config, "validate", inputs), inputs, counters, started)
    write_run_report(config, "validate", {**summary.model_dump(), "provider_calls": calls})
    return counters


def _released(config: PipelineConfig, released: Optional[Path]):
    if released is not None:
        return Path(released), {}, ","
    if config.released_dataset is not None:
        dataset = config.released_dataset
        return dataset.path, dataset.column_map, dataset.separator
    return None


def filter_stage(config: PipelineConfig, released: Optional[Path] = None) -> dict:
    started = utc_now()
    source = _released(config, released)
    if source is not None:
        path, column_map, separator = source
        rows, assignments = ingest_released_dataset(path, column_map, separator, config.template_dir)
        support = support_from_rows(rows)
        if assignments:
            write_jsonl(config.released_tags_path, (assignment.model_dump(mode="json") for assignment in assignments))
        inputs = {"released": digest_file(path)}
    else:
        records = fetch_records(ElicitationStore(_require(config.elicitations_path, "elicit")))
        validations = fetch_validations(ValidationStore(_require(config.validations_path, "validate")))
        rows = rows_from_stores(records, validations)
        roster = load_roster(config.roster_path).subset(config.models)
        support = {language: models for language, models in roster.support(config.languages).items()}
        inputs = {"elicitations": store_digest([record.model_dump(mode="json") for record in records]),
                  "validations": store_digest([validation.model_dump(mode="json") for validation in validations])}

    digest = stage_digest(config, "filter", inputs)
    matrix, removals = run_filters(rows, support)
    matrix.save(config.scores_path, digest)
    save_table(pd.DataFrame([row.model_dump() for row in rows],
                            columns=["model_id", "language", "topic_id", "verdict", "label"]),
               config.responses_path, digest)
    write_jsonl(config.removals_path, (removal.model_dump(mode="json") for removal in removals))
    counters = {**matrix.counters.model_dump(), "fractions": matrix.counters.fractions(),
                "respondents": len(matrix.respondents), "topics": len(matrix.topics)}
    record_stage(config, "filter", digest, inputs, counters, started)
    write_run_report(config, "filter", counters)
    logging.info(f"Filter stage: {counters}")
    return counters


def _assignments(config: PipelineConfig) -> list[TagAssignment]:
    if config.tags_path.is_file():
        return fetch_assignments(TagStore(config.tags_path))
    if config.released_tags_path.is_file():
        return [TagAssignment.model_validate(row) for row in read_jsonl(config.released_tags_path)]
    raise StageOrderingError(f"No tag assignments at {config.tags_path}; run the tag stage first")


def _topic_labels(config: PipelineConfig) -> dict[str, str]:
    if not config.topics_path.is_file():
        return {}
    return {topic.id: topic.names.get("en", topic.id) for topic in load_topics(config.topics_path)}


def _response_rows(config: PipelineConfig) -> list[ResponseRow]:
    if not config.responses_path.is_file():
        return []
    frame = read_table(config.responses_path)
    return [ResponseRow(model_id=row["model_id"], language=row["language"], topic_id=row["topic_id"],
                        verdict=row["verdict"] if isinstance(row["verdict"], str) else None,
                        label=row["label"] if isinstance(row["label"], str) else None)
            for row in frame.to_dict(orient="records")]


def analyze_stage(config: PipelineConfig) -> dict:
    started = utc_now()
    matrix = load_score_matrix(config.scores_path)
    tagged = _assignments(config)
    assignments = assignments_by_topic(tagged)
    taxonomy = load_taxonomy(config.taxonomy_path, expected_size=TAXONOMY_SIZE)
    display_names = {tag.code: tag.display_name for tag in taxonomy}
    roster = load_roster(config.roster_path)
    if not config.groups_path.is_file():
        raise ConfigurationError(f"Group definitions not found: {config.groups_path}")
    definitions = load_group_definitions(config.groups_path)
    settings = config.analysis
    inputs = {"scores": digest_file(config.scores_path),
              "tags": digest_payload(sorted([topic, sorted(codes)] for topic, codes in assignments.items())),
              "groups": digest_file(config.groups_path)}
    digest = stage_digest(config, "analyze", inputs)
    out = config.analysis_dir
    respondents = matrix.respondents

    def save(frame: pd.DataFrame, name: str):
        save_table(frame, out / f"{name}.csv", digest)

    table = mean_tag_scores(matrix, assignments, settings.aggregate)
    save(table.long(), "tag_scores")
    biplot = pca_biplot(double_center(impute(table.values)), settings.biplot_top_tags)
    for name, frame in biplot.to_tables().items():
        save(frame, name)

    for radar_name, group_names in definitions.radars.items():
        groups = resolve_groups({name: definitions.groups[name] for name in group_names}, respondents, roster)
        radar = radar_aggregate(table.values, groups, display_names, settings.seed, settings.aggregate)
        save(radar.to_table(), f"radar_{_slug(radar_name)}")

    labels = _topic_labels(config)
    for spec in definitions.person_forests:
        groups = resolve_groups({name: definitions.groups[name] for name in (spec.group1, spec.group2)}, respondents, roster)
        forest = person_forest(matrix, groups[spec.group1], groups[spec.group2], settings.person_top_k,
                               settings.n_resamples, settings.seed, labels, settings.aggregate)
        save(forest.to_table(), f"person_forest_{_slug(spec.name)}")

    def save_tag_forest(name: str, groups: dict[str, list[str]]):
        forest = tag_forest(matrix, assignments, groups["group1"], groups["group2"], settings.tag_top_k, settings.ci_z,
                            display_names, settings.aggregate)
        save(forest.to_table(), f"tag_forest_{_slug(name)}")
        save(pd.DataFrame(forest.excluded, columns=["item", "n_in", "n_out", "reason"]), f"excluded_tags_{_slug(name)}")

    forests = 0
    for spec in definitions.tag_forests:
        selectors = {"group1": definitions.groups[spec.group1], "group2": definitions.groups[spec.group2]}
        save_tag_forest(spec.name, resolve_groups(selectors, respondents, roster))
        forests += 1
    scoped = roster.subset(config.models)
    for bloc in BLOCS:
        for name, first, second in bloc_one_vs_rest(scoped, bloc):
            try:
                groups = resolve_groups({"group1": first, "group2": second}, respondents, roster)
            except ConfigurationError as e:
                logging.warning(f"Bloc tag forest {name} skipped: {e}")
                continue
            save_tag_forest(f"bloc_{name}", groups)
            forests += 1

    save(label_distribution(matrix), "label_distribution")
    save(refusal_rate_by_tag(_response_rows(config), assignments), "refusal_by_tag")
    save(tag_frequencies(tagged, taxonomy), "tag_frequencies")

    counters = {"respondents": len(respondents), "topics": len(matrix.topics), "tags": int(table.values.shape[1]),
                "explained_variance": list(biplot.explained_variance), "radars": len(definitions.radars),
                "person_forests": len(definitions.person_forests), "tag_forests": forests}
    record_stage(config, "analyze", digest, inputs, counters, started)
    write_run_report(config, "analyze", counters)
    return counters


def report_stage(config: PipelineConfig) -> dict:
    started = utc_now()
    source = config.analysis_dir
    _require(source / "biplot_points.csv", "analyze")
    tables = sorted(source.glob("*.csv"))
    inputs = {path.name: digest_file(path) for path in tables}
    digest = stage_digest(config, "report", inputs)
    out = config.figures_dir
    taxonomy = load_taxonomy(config.taxonomy_path, expected_size=TAXONOMY_SIZE)
    display_names = {tag.code: tag.display_name for tag in taxonomy}

    biplot = BiplotResult.from_tables({name: read_table(source / f"{name}.csv")
                                       for name in ("biplot_points", "biplot_loadings", "biplot_variance",
                                                    "biplot_model_means", "biplot_language_means")})
    figures = [save_svg(render_biplot(biplot, display_names, digest), out / "biplot.svg")]
    for path in source.glob("radar_*.csv"):
        radar = RadarResult.from_table(read_table(path))
        figures.append(save_svg(render_radar(radar, digest), out / f"{path.stem}.svg"))
    for pattern, top_k in (("person_forest_*.csv", config.analysis.person_top_k),
                           ("tag_forest_*.csv", config.analysis.tag_top_k)):
        for path in source.glob(pattern):
            forest = ForestResult.from_table(read_table(path), top_k)
            if len(forest.rows) == 0:
                logging.warning(f"Forest {path.stem} has no rows, no figure drawn")
                continue
            figures.append(save_svg(render_forest(forest, path.stem, digest), out / f"{path.stem}.svg"))
    figures.append(save_svg(render_tag_frequencies(read_table(source / "tag_frequencies.csv"), digest),
                            out / "tag_frequencies.svg"))
    figures.append(save_svg(render_label_distribution(read_table(source / "label_distribution.csv"), digest),
                            out / "label_distribution.svg"))
    counters = {"figures": len(figures)}
    record_stage(config, "report", digest, inputs, counters, started)
    write_run_report(config, "report", counters)
    return counters


def search_templates_stage(config: PipelineConfig, sample_path: Optional[Path] = None,
                           models: Optional[list[str]] = None) -> dict:
    sample_path = sample_path or config.search_sample_path
    if sample_path is None:
        raise ConfigurationError("Template search needs a topic sample file (search_sample_path or --sample)")
    roster = load_roster(config.roster_path).subset(models or config.models)
    english = [model.model_id for model in roster.models if "en" in model.supported_languages]
    sample = load_search_sample(sample_path, _topics(config))
    prompt = load_modular_prompt(config.modular_prompt_path)
    with pipeline_client(config, roster) as client:
        result = search_templates(prompt, sample, english, client, label_is_extractable,
                                  decoding=config.elicitation_decoding, workers=config.concurrency.workers)
    write_json(config.output_dir / "template_search.json", result.model_dump(mode="json"))
    return {"selected": result.selected, "evaluations": len(result.ranked)}


def run_all(config: PipelineConfig) -> dict:
    """The stages in order; with a released dataset and no Pantheon snapshot only filter, analyze and report run."""
    if config.pantheon_path is None and config.released_dataset is not None:
        stages = [filter_stage, analyze_stage, report_stage]
    else:
        stages = [select_topics_stage, tag_stage, elicit_stage, validate_stage, filter_stage, analyze_stage, report_stage]
    results = {}
    for stage in stages:
        logging.info(f"run-all: {stage.__name__} starting")
        results[stage.__name__] = stage(config)
    return results



####################################################################################################################
                                                ## CLI ##
####################################################################################################################



def _csv_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="pipeline config (JSON)")
    common.add_argument("--mock", action="store_true", help="use deterministic mock providers")

    parser = argparse.ArgumentParser(prog="Ideology", description="Measure ideological positions of LLM respondents")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("select-topics", parents=[common])
    tag = commands.add_parser("tag", parents=[common])
    tag.add_argument("--retry-failed", action="store_true")
    elicit = commands.add_parser("elicit", parents=[common])
    elicit.add_argument("--models", type=_csv_list)
    elicit.add_argument("--languages", type=_csv_list)
    elicit.add_argument("--topics", type=Path, help="file with one topic id per line")
    elicit.add_argument("--store", type=Path)
    validate = commands.add_parser("validate", parents=[common])
    validate.add_argument("--store", type=Path)
    validate.add_argument("--judge-desc")
    validate.add_argument("--judge-label")
    filter_parser = commands.add_parser("filter", parents=[common])
    filter_parser.add_argument("--released", type=Path, help="published response table to reprocess")
    commands.add_parser("analyze", parents=[common])
    commands.add_parser("report", parents=[common])
    search = commands.add_parser("search-templates", parents=[common])
    search.add_argument("--sample", type=Path)
    search.add_argument("--models", type=_csv_list)
    commands.add_parser("run-all", parents=[common])
    return parser


def _dispatch(config: PipelineConfig, args: argparse.Namespace):
    command = args.command
    if command == "select-topics":
        return select_topics_stage(config)
    if command == "tag":
        return tag_stage(config, retry_failed=args.retry_failed)
    if command == "elicit":
        unknown = [language for language in (args.languages or []) if language not in LANGUAGES]
        if unknown:
            raise ConfigurationError(f"Unsupported languages {unknown}")
        return elicit_stage(config, args.models, args.languages, args.topics, args.store)
    if command == "validate":
        return validate_stage(config, args.store, args.judge_desc, args.judge_label)
    if command == "filter":
        return filter_stage(config, args.released)
    if command == "analyze":
        return analyze_stage(config)
    if command == "report":
        return report_stage(config)
    if command == "search-templates":
        return search_templates_stage(config, args.sample, args.models)
    return run_all(config)


def cli_dispatch(argv: list[str]) -> int:
    """Exit status: 0 on success, 2 for usage or configuration errors, 1 for any other failure."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        config = load_config(args.config)
        if args.mock:
            config = config.model_copy(update={"mock": True})
        config.output_dir.mkdir(parents=True, exist_ok=True)
        logging.info(f"Command {args.command} started (mock={config.mock})")
        _dispatch(config, args)
        logging.info(f"Command {args.command} finished")
        return 0
    except ConfigurationError as e:
        logging.error(f"Configuration error: {e}")
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except StageOrderingError as e:
        logging.error(f"Stage ordering error: {e}")
        print(f"stage ordering error: {e}", file=sys.stderr)
        return 1
    except IdeologyException as e:
        logging.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logging.exception(f"{args.command} crashed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
