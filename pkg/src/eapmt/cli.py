"""Command-line entry point.

Subcommands cover the whole workflow: corpus statistics, direct and
explanation-based translation, contamination probes, blinded questionnaire
generation and ingestion, the LLM judge, and report rendering.  Every
run writes a manifest plus its outputs under one run directory; manifests
carry no timestamps, so a replayed run is byte-identical to the original.

Settings resolve as flags > environment > config file.  The config file is
TOML (``--config``, falling back to ``./eapmt.toml`` when present).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import evaluation, runs
from .corpus import Corpus, CorpusFormatError, load_corpus, corpus_stats
from .evaluation import (
    BlindingKey,
    EvaluationError,
    aggregate_scores,
    aggregate_votes,
    count_six,
    ingest_scores,
    ingest_votes,
    llm_judge,
    make_questionnaire,
)
from .llm_client import (
    API_BASE_ENV,
    API_KEY_ENV,
    ClientError,
    LLMClient,
    MODES,
    ModelSpec,
)
from .metrics import MetricError
from .prompts import TemplateId, TemplateError
from .translate import (
    Condition,
    ErrorRecord,
    PipelineError,
    TranslationRecord,
    eapmt_translate,
    run_experiment_grid,
)
from .validation import (
    DEFAULT_FRACTIONS,
    ProbeError,
    ProbeSpec,
    SIDES,
    probe_report,
    run_probe,
)

PROG = "eapmt"
DEFAULT_CONFIG = "eapmt.toml"

_USER_ERRORS = (
    CorpusFormatError,
    MetricError,
    TemplateError,
    ProbeError,
    EvaluationError,
    ClientError,
    PipelineError,
    runs.RunError,
    ValueError,
    OSError,
)


class ConfigError(ValueError):
    """Raised when resolved settings are missing or inconsistent."""


# ── settings resolution ──────────────────────────────────────────────


def _load_config(path: str | None) -> dict:
    if path is not None:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    default = Path(DEFAULT_CONFIG)
    if default.exists():
        with default.open("rb") as handle:
            return tomllib.load(handle)
    return {}


def _resolve(
    flag_value,
    env_name: str | None,
    config: dict,
    key: str,
    default=None,
    cast: Callable = str,
):
    """flags > env > config file > default."""
    if flag_value is not None:
        return flag_value
    if env_name:
        raw = os.environ.get(env_name)
        if raw:
            return cast(raw)
    if key in config:
        return config[key]
    return default


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"{what} is required (flag, env, or config file)")
    return value


def _client(args, config: dict) -> LLMClient:
    mode = _resolve(args.mode, "EAPMT_MODE", config, "mode", "live")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    cache = _resolve(args.cache, "EAPMT_CACHE", config, "cache")
    parallel = _resolve(
        args.parallel, "EAPMT_PARALLEL", config, "parallel", 4, cast=int
    )
    if mode == "replay":
        if cache is None:
            raise ConfigError("replay mode requires a cache directory")
        if not Path(cache).is_dir():
            raise ConfigError(f"replay cache {cache!r} does not exist")
    return LLMClient(
        cache_dir=cache,
        mode=mode,
        max_parallel=int(parallel),
        api_key=os.environ.get(API_KEY_ENV),
        api_base=os.environ.get(API_BASE_ENV),
    )


def _model(args, config: dict, default: str | None = None) -> ModelSpec:
    name = _require(
        _resolve(args.model, "EAPMT_MODEL", config, "model", default), "--model"
    )
    spec_args = {"name": name}
    for key in ("temperature", "top_p", "max_tokens"):
        if key in config:
            spec_args[key] = config[key]
    return ModelSpec(**spec_args)


def _corpus(args, config: dict) -> Corpus:
    path = _require(
        _resolve(args.corpus, "EAPMT_CORPUS", config, "corpus"), "--corpus"
    )
    return load_corpus(path)


def _out_dir(args, config: dict) -> Path:
    out = _require(_resolve(args.out, None, config, "out"), "--out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _out_dir_optional(args, config: dict) -> Path | None:
    out = _resolve(args.out, None, config, "out")
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seed(args, config: dict) -> int:
    return int(_resolve(args.seed, "EAPMT_SEED", config, "seed", 0, cast=int))


def _base_manifest(args, config: dict, subcommand: str) -> dict:
    return {
        "subcommand": subcommand,
        "mode": _resolve(args.mode, "EAPMT_MODE", config, "mode", "live"),
        "cache": _resolve(args.cache, "EAPMT_CACHE", config, "cache"),
        "seed": _seed(args, config),
    }


# ── subcommand handlers ──────────────────────────────────────────────


def _cmd_corpus_stats(args, config: dict) -> int:
    corpus = load_corpus(args.path)
    stats = corpus_stats(corpus)
    print(f"poems: {stats.poems}")
    print(f"lines: {stats.lines}")
    print(f"tokens: {stats.tokens}")
    return 0


def _cmd_translate(args, config: dict) -> int:
    corpus = _corpus(args, config)
    client = _client(args, config)
    model = _model(args, config)
    out = _out_dir(args, config)

    try:
        template_id = TemplateId(args.template)
    except ValueError:
        raise ConfigError(f"unknown template {args.template!r}") from None
    shots = args.shots
    shot_pool: Corpus = []
    if args.shot_pool:
        shot_pool = load_corpus(args.shot_pool)
    if shots > 0 and not shot_pool:
        raise ConfigError(f"--shots {shots} requires --shot-pool")

    condition = Condition(template_id=template_id, shots=shots, model=model)
    result = run_experiment_grid(corpus, [condition], client, shot_pool=shot_pool)
    runs.save_translations(out, result.records)
    runs.save_errors(out, result.errors)
    manifest = _base_manifest(args, config, "translate")
    manifest.update(
        {
            "corpus": str(args.corpus or config.get("corpus")),
            "model": model.name,
            "template": str(template_id),
            "shots": shots,
            "shot_pool": args.shot_pool,
            "poems": len(corpus),
            "translations": len(result.records),
            "errors": len(result.errors),
        }
    )
    runs.write_manifest(out, manifest)
    for error in result.errors:
        print(f"error: {error.pair_id}: {error.message}", file=sys.stderr)
    print(f"wrote {len(result.records)} translation(s) to {out}")
    return 0 if not result.errors else 1


_VARIANT_MODELS = {"gpt35": "gpt-3.5-turbo", "gpt4": "gpt-4-1106"}


def _cmd_eapmt(args, config: dict) -> int:
    corpus = _corpus(args, config)
    client = _client(args, config)
    model = _model(args, config, default=_VARIANT_MODELS[args.variant])

    pairs = corpus
    if args.poem is not None:
        pairs = [pair for pair in corpus if pair.pair_id == args.poem]
        if not pairs:
            raise ConfigError(f"no poem {args.poem!r} in the corpus")

    explanations = []
    records = []
    errors = []
    for pair in pairs:
        try:
            explanation, record = eapmt_translate(
                pair, model, client, variant=args.variant
            )
        except (ClientError, PipelineError, TemplateError) as exc:
            errors.append(
                ErrorRecord(
                    pair_id=pair.pair_id,
                    system=f"eapmt:{args.variant}",
                    message=str(exc),
                )
            )
            continue
        explanations.append(explanation)
        records.append(record)

    if args.out is not None or "out" in config:
        out = _out_dir(args, config)
        runs.save_explanations(out, explanations)
        runs.save_translations(out, records)
        runs.save_errors(out, errors)
        manifest = _base_manifest(args, config, "eapmt")
        manifest.update(
            {
                "corpus": str(args.corpus or config.get("corpus")),
                "model": model.name,
                "variant": args.variant,
                "poems": len(pairs),
                "translations": len(records),
                "errors": len(errors),
            }
        )
        runs.write_manifest(out, manifest)

    for error in errors:
        print(f"error: {error.pair_id}: {error.message}", file=sys.stderr)
    if args.poem is not None and records:
        print(records[0].text)
    elif records:
        print(f"translated {len(records)} poem(s)")
    return 0 if not errors else 1


def _cmd_probe(args, config: dict) -> int:
    corpus = _corpus(args, config)
    client = _client(args, config)
    model = _model(args, config, default="gpt-4-1106")
    out = _out_dir_optional(args, config)

    fractions = tuple(float(f) for f in args.fractions.split(","))
    sides = SIDES if args.side == "both" else (args.side,)

    results = []
    for side in sides:
        spec = ProbeSpec(side=side, fractions=fractions)
        for pair in corpus:
            results.extend(run_probe(pair, spec, model, client))
    report = probe_report(results)

    if out is not None:
        report.to_csv(out / "probe.csv")
        (out / "probe.md").write_text(report.to_markdown() + "\n", encoding="utf-8")
        manifest = _base_manifest(args, config, "probe")
        manifest.update(
            {
                "corpus": str(args.corpus or config.get("corpus")),
                "model": model.name,
                "fractions": list(fractions),
                "sides": list(sides),
                "poems": len(corpus),
            }
        )
        runs.write_manifest(out, manifest)
    print(report.to_markdown())
    return 0


def _load_candidates(paths: Sequence[str]) -> dict[str, list[TranslationRecord]]:
    """Group translation records from run files/directories by system."""
    by_system: dict[str, list[TranslationRecord]] = {}
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            path = path / runs.TRANSLATIONS_NAME
        for row in runs.read_jsonl(path):
            record = TranslationRecord.from_json(row)
            by_system.setdefault(record.system, []).append(record)
    return by_system


def _cmd_questionnaire_make(args, config: dict) -> int:
    corpus = _corpus(args, config)
    out = _out_dir(args, config)
    seed = _seed(args, config)
    candidates = _load_candidates(args.translations)
    judges = tuple(j.strip() for j in args.judges.split(",") if j.strip())
    pack = make_questionnaire(
        corpus, candidates, seed=seed, mode=args.kind, judges=judges
    )
    written = pack.save(out)
    manifest = _base_manifest(args, config, "questionnaire make")
    manifest.update(
        {
            "corpus": str(args.corpus or config.get("corpus")),
            "kind": args.kind,
            "judges": list(judges),
            "systems": sorted(candidates),
            "poems": len(corpus),
            "files": sorted(p.name for p in written),
        }
    )
    runs.write_manifest(out, manifest)
    for path in written:
        print(f"wrote {path}")
    print("key.json maps labels to systems; keep it away from judges.")
    return 0


def _cmd_questionnaire_ingest(args, config: dict) -> int:
    key = BlindingKey.load(args.key)
    out = _out_dir(args, config)
    if args.kind == "vote":
        ballots = ingest_votes(Path(args.sheet))
        counts = aggregate_votes(ballots, key)
        result_path = out / "votes.json"
        result_path.write_text(
            json.dumps(counts, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        width = max(len(system) for system in counts)
        for system in sorted(counts, key=counts.get, reverse=True):
            print(f"{system:<{width}}  {counts[system]}")
    else:
        sheets = ingest_scores(Path(args.sheet))
        means = aggregate_scores(sheets, key)
        sixes = count_six(sheets, key)
        table = {
            system: {
                criterion.label: means[system][criterion]
                for criterion in evaluation.CRITERIA
            }
            for system in means
        }
        result_path = out / "scores.json"
        result_path.write_text(
            json.dumps(
                {
                    "means": table,
                    "count_six": {
                        system: {
                            criterion.label: sixes[system][criterion]
                            for criterion in evaluation.CRITERIA
                        }
                        for system in sixes
                    },
                },
                ensure_ascii=False,
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        print(_criterion_table(table))
    manifest = _base_manifest(args, config, "questionnaire ingest")
    manifest.update({"kind": args.kind, "sheet": args.sheet, "key": args.key})
    runs.write_manifest(out, manifest)
    print(f"wrote {result_path}")
    return 0


def _criterion_table(table: dict[str, dict[str, float]]) -> str:
    labels = [criterion.label for criterion in evaluation.CRITERIA]
    header = "| System | " + " | ".join(labels) + " |"
    rule = "|---" * (len(labels) + 1) + "|"
    lines = [header, rule]
    for system in sorted(table):
        row = [system] + [f"{table[system][label]:.2f}" for label in labels]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def _cmd_judge(args, config: dict) -> int:
    corpus = _corpus(args, config)
    client = _client(args, config)
    model = _model(args, config, default="gpt-4-1106")
    out = _out_dir(args, config)

    by_system = _load_candidates(args.translations)
    systems = sorted(by_system)
    indexed = {
        system: {record.pair_id: record for record in records}
        for system, records in by_system.items()
    }

    # positional blinding: candidate i is the i-th system, every poem
    key = BlindingKey(
        seed=_seed(args, config),
        assignments={
            pair.pair_id: {
                str(i): system for i, system in enumerate(systems, start=1)
            }
            for pair in corpus
        },
    )

    all_sheets = []
    for pair in corpus:
        candidates = []
        for system in systems:
            try:
                candidates.append(indexed[system][pair.pair_id])
            except KeyError:
                raise ConfigError(
                    f"system {system!r} has no candidate for poem "
                    f"{pair.pair_id!r}"
                ) from None
        all_sheets.extend(llm_judge(pair, candidates, model, client))

    runs.write_jsonl(
        out / "sheets.jsonl",
        (
            {
                "judge_id": sheet.judge_id,
                "pair_id": sheet.pair_id,
                "candidate_id": sheet.candidate_id,
                "scores": {
                    criterion.label: score
                    for criterion, score in sheet.scores.items()
                },
            }
            for sheet in all_sheets
        ),
    )
    key.save(out / "key.json")
    means = aggregate_scores(all_sheets, key)
    table = {
        system: {
            criterion.label: means[system][criterion]
            for criterion in evaluation.CRITERIA
        }
        for system in means
    }
    (out / "judge_scores.json").write_text(
        json.dumps(table, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    manifest = _base_manifest(args, config, "judge")
    manifest.update(
        {
            "corpus": str(args.corpus or config.get("corpus")),
            "model": model.name,
            "systems": systems,
            "poems": len(corpus),
            "sheets": len(all_sheets),
        }
    )
    runs.write_manifest(out, manifest)
    print(_criterion_table(table))
    return 0


def _cmd_report(args, config: dict) -> int:
    out = Path(args.run)
    if not out.is_dir():
        raise ConfigError(f"run directory {args.run!r} does not exist")
    sections: list[str] = []

    manifest_path = out / runs.MANIFEST_NAME
    if manifest_path.exists():
        manifest = runs.read_manifest(out)
        sections.append(
            f"# Run report: {manifest.get('subcommand', 'unknown')}\n"
        )
    else:
        sections.append("# Run report\n")

    probe_md = out / "probe.md"
    if probe_md.exists():
        sections.append("## Contamination probe\n")
        sections.append(probe_md.read_text(encoding="utf-8").rstrip() + "\n")

    votes_json = out / "votes.json"
    if votes_json.exists():
        counts = json.loads(votes_json.read_text(encoding="utf-8"))
        sections.append("## Preference votes\n")
        lines = ["| System | Votes |", "|---|---|"]
        for system in sorted(counts, key=counts.get, reverse=True):
            lines.append(f"| {system} | {counts[system]} |")
        sections.append("\n".join(lines) + "\n")

    for name, heading in (
        ("scores.json", "## Criterion scores\n"),
        ("judge_scores.json", "## Judge scores\n"),
    ):
        path = out / name
        if path.exists():
            payload = json.loads(path.read_text(encoding="utf-8"))
            table = payload.get("means", payload)
            sections.append(heading)
            sections.append(_criterion_table(table) + "\n")
            if "count_six" in payload:
                sections.append("### Scores of 6 (better than the reference)\n")
                sections.append(_criterion_table_int(payload["count_six"]) + "\n")

    translations = out / runs.TRANSLATIONS_NAME
    if translations.exists():
        records = runs.load_translations(out)
        systems: dict[str, int] = {}
        for record in records:
            systems[record.system] = systems.get(record.system, 0) + 1
        sections.append("## Translations\n")
        lines = ["| System | Poems |", "|---|---|"]
        for system in sorted(systems):
            lines.append(f"| {system} | {systems[system]} |")
        sections.append("\n".join(lines) + "\n")

    if len(sections) <= 1:
        raise ConfigError(f"nothing to report in {out}")
    text = "\n".join(sections)
    (out / "report.md").write_text(text, encoding="utf-8")
    print(text)
    return 0


def _criterion_table_int(table: dict[str, dict[str, int]]) -> str:
    labels = [criterion.label for criterion in evaluation.CRITERIA]
    header = "| System | " + " | ".join(labels) + " |"
    rule = "|---" * (len(labels) + 1) + "|"
    lines = [header, rule]
    for system in sorted(table):
        row = [system] + [str(table[system].get(label, 0)) for label in labels]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


# ── parser ───────────────────────────────────────────────────────────


def _add_common(parser: argparse.ArgumentParser, *, model: bool = True) -> None:
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--mode", choices=MODES, help="client mode")
    parser.add_argument("--cache", help="completion cache directory")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--out", help="run output directory")
    parser.add_argument("--parallel", type=int, help="max concurrent requests")
    if model:
        parser.add_argument("--model", help="model name")
    parser.add_argument("--corpus", help="corpus JSONL path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Explanation-assisted poetry translation experiments.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    corpus_parser = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = corpus_parser.add_subparsers(dest="corpus_cmd", required=True)
    stats = corpus_sub.add_parser("stats", help="print corpus statistics")
    stats.add_argument("path", help="corpus JSONL path")
    stats.set_defaults(handler=_cmd_corpus_stats)

    translate = sub.add_parser("translate", help="direct translation run")
    _add_common(translate)
    translate.add_argument(
        "--template", default="H3", help="prompt template id (e.g. H3, P1)"
    )
    translate.add_argument(
        "--shots", type=int, default=0, help="few-shot example count"
    )
    translate.add_argument("--shot-pool", help="corpus JSONL with example pairs")
    translate.set_defaults(handler=_cmd_translate)

    eapmt = sub.add_parser("eapmt", help="explain-then-translate run")
    _add_common(eapmt)
    eapmt.add_argument(
        "--variant",
        choices=("gpt35", "gpt4"),
        default="gpt4",
        help="prompt variant",
    )
    eapmt.add_argument("--poem", help="run a single poem and print its translation")
    eapmt.set_defaults(handler=_cmd_eapmt)

    probe = sub.add_parser("probe", help="contamination continuation probe")
    _add_common(probe)
    probe.add_argument(
        "--fractions",
        default=",".join(str(f) for f in DEFAULT_FRACTIONS),
        help="comma-separated prefix fractions",
    )
    probe.add_argument(
        "--side", choices=SIDES + ("both",), default="both", help="poem side(s)"
    )
    probe.set_defaults(handler=_cmd_probe)

    questionnaire = sub.add_parser("questionnaire", help="blinded human evaluation")
    q_sub = questionnaire.add_subparsers(dest="questionnaire_cmd", required=True)

    q_make = q_sub.add_parser("make", help="generate blinded questionnaires")
    _add_common(q_make, model=False)
    q_make.add_argument(
        "--translations",
        action="append",
        required=True,
        help="translations.jsonl (or run dir); repeat per run",
    )
    q_make.add_argument(
        "--kind", choices=("vote", "score"), default="vote", help="questionnaire kind"
    )
    q_make.add_argument(
        "--judges", default="judge1", help="comma-separated judge ids"
    )
    q_make.set_defaults(handler=_cmd_questionnaire_make)

    q_ingest = q_sub.add_parser("ingest", help="aggregate filled answer sheets")
    _add_common(q_ingest, model=False)
    q_ingest.add_argument("--key", required=True, help="blinding key JSON")
    q_ingest.add_argument("--sheet", required=True, help="filled answer sheet CSV")
    q_ingest.add_argument(
        "--kind", choices=("vote", "score"), default="vote", help="sheet kind"
    )
    q_ingest.set_defaults(handler=_cmd_questionnaire_ingest)

    judge = sub.add_parser("judge", help="LLM rubric judge")
    _add_common(judge)
    judge.add_argument(
        "--translations",
        action="append",
        required=True,
        help="translations.jsonl (or run dir); repeat per run",
    )
    judge.set_defaults(handler=_cmd_judge)

    report = sub.add_parser("report", help="render a run directory as Markdown")
    report.add_argument("run", help="run directory")
    report.set_defaults(handler=_cmd_report)

    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Parse argv and run the subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse --help (0) and usage errors (2)
        return int(exc.code or 0)
    try:
        config = _load_config(getattr(args, "config", None))
        return args.handler(args, config)
    except ConfigError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1
    except _USER_ERRORS as exc:
        print(f"{PROG}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
