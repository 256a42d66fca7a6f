"""Command line interface.

Verbs: `corpus build`, `fairpro`, `generate`, `judge run`, `score`,
`probe tokens|embeddings|decoded`, `audit` (end-to-end), `report`.

Exit codes: 0 on success; 2 when a run failed but left resumable state behind
(rerun the same command to continue); 1 on any hard failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .corpus import LEVELS, PromptSet, build_corpus, load_occupations
from .errors import EndpointError, FairlensError, RewriteFailed
from .fairpro import MITIGATION_MODES, OutputFormat, PromptMode, fair_system_prompt
from .judge import AnnotationRecord
from .jsonutil import (
    canonical_json,
    read_json,
    read_jsonl,
    write_json_atomic,
    write_jsonl_atomic,
)
from .metrics import ALL_LEVELS, aggregate_report
from .modelio.generation import GenerationRecord
from .pipeline import AuditRunner, RunConfig, desk_preset, emit_report
from .pipeline.report import MISSING
from .taxonomy import Taxonomy

PROBE_CONDITIONS = ("default", "none")


def _fail(exc: FairlensError, run_dir: Path | str | None = None) -> None:
    click.echo(f"error: {exc}", err=True)
    resumable = (
        run_dir is not None
        and isinstance(exc, (EndpointError, RewriteFailed))
        and (Path(run_dir) / "manifest.json").exists()
    )
    sys.exit(2 if resumable else 1)


def _load_config(config_path: str | None, preset: str | None,
                 out: str | None) -> RunConfig:
    if (config_path is None) == (preset is None):
        raise click.UsageError("pass exactly one of --config or --preset")
    if preset is not None:
        if preset != "desk":
            raise click.UsageError(f"unknown preset: {preset!r}")
        return desk_preset(out or "runs/desk")
    return RunConfig.from_file(config_path, output_dir=out)


def _run_manifest_config(run_dir: Path) -> dict:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        click.echo(f"error: {run_dir} has no manifest.json", err=True)
        sys.exit(1)
    return read_json(manifest_path).get("config", {})


def _config_option(fn):
    fn = click.option("--preset", type=str,
                      help="Built-in configuration (desk).")(fn)
    return click.option("--config", "config_path",
                        type=click.Path(exists=True, dir_okay=False),
                        help="Run configuration JSON.")(fn)


@click.group()
@click.version_option(__version__, prog_name="fairlens")
def main():
    """Demographic fairness audits for text-to-image models."""


# --- audit ------------------------------------------------------------------


@main.command()
@_config_option
@click.option("--out", type=click.Path(file_okay=False),
              help="Run directory (overrides the config's output_dir).")
def audit(config_path, preset, out):
    """Run the full audit: corpus, generations, judging, probes, report."""
    runner = None
    try:
        runner = AuditRunner(_load_config(config_path, preset, out))
        result = runner.run()
    except FairlensError as exc:
        _fail(exc, runner.run_dir if runner is not None else None)
    click.echo(f"run directory: {result.run_dir}")
    calls = result.backend_calls
    click.echo(
        "backend calls: "
        f"chat={calls['chat']} embed={calls['embed']} "
        f"generate={calls['generate']} judge={calls['judge']}"
    )
    if result.parse_warnings:
        click.echo(f"judge parse warnings: {result.parse_warnings}")
    report = result.report
    click.echo("normalized fair discrepancy (all levels pooled):")
    for mode in report.modes:
        mean = report.bias_mean[mode][ALL_LEVELS]
        shown = MISSING if mean is None else f"{mean:.4f}"
        click.echo(f"  {mode}: {shown}")
    click.echo(f"report: {result.run_dir / 'report' / 'report.md'}")


# --- corpus -----------------------------------------------------------------


@main.group()
def corpus():
    """Benchmark prompt corpus commands."""


@corpus.command("build")
@click.option("--occupations", type=click.Path(exists=True, dir_okay=False),
              help="Occupation list, one per line (bundled list by default).")
@click.option("--limit", type=int, help="Keep only the first N occupations.")
@click.option("--levels", default="occupation,simple,context",
              show_default=True, help="Comma-separated benchmark levels.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Output JSON-lines file, one prompt per line.")
@_config_option
def corpus_build(occupations, limit, levels, seed, out, config_path, preset):
    """Build a benchmark prompt set.

    The rewritten level issues chat calls, so it additionally needs --config
    or --preset to supply the rewriter endpoint.
    """
    level_list = tuple(part.strip() for part in levels.split(",") if part.strip())
    rewriter = None
    if "rewritten" in level_list:
        if config_path is None and preset is None:
            raise click.UsageError(
                "the rewritten level needs a rewriter endpoint; pass --config "
                "or --preset"
            )
        rewriter = AuditRunner(
            _load_config(config_path, preset, "unused-out")
        ).chat_backend("rewriter")
    try:
        names = load_occupations(occupations)
        if limit is not None:
            names = names[:limit]
        prompt_set = build_corpus(names, Taxonomy.default(), seed=seed,
                                  levels=level_list, rewriter=rewriter)
        prompt_set.save(out)
    except (FairlensError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {len(prompt_set.prompts)} prompts to {out}")


# --- stage verbs ------------------------------------------------------------


@main.command()
@_config_option
@click.option("--out", type=click.Path(file_okay=False),
              help="Run directory (overrides the config's output_dir).")
def generate(config_path, preset, out):
    """Run the pipeline through image generation and stop."""
    runner = None
    try:
        runner = AuditRunner(_load_config(config_path, preset, out))
        runner.claim_run_dir()
        prompt_set = runner.build_prompts()
        fair = runner.build_fair_prompts(prompt_set)
        generations = runner.build_generations(prompt_set, fair)
    except FairlensError as exc:
        _fail(exc, runner.run_dir if runner is not None else None)
    click.echo(f"run directory: {runner.run_dir}")
    for mode_value, records in generations.items():
        click.echo(f"  {mode_value}: {len(records)} generations")


@main.group()
def judge():
    """LVLM-as-judge commands."""


@judge.command("run")
@click.option("--run", "run_dir", "--generations", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Run directory holding generations/<mode>.jsonl files.")
@click.option("--judge-endpoint", "judge_url", type=str,
              help="Override the judge chat endpoint base URL.")
@click.option("--judge-model", type=str,
              help="Model name for --judge-endpoint.")
def judge_run(run_dir, judge_url, judge_model):
    """Annotate a run's existing generations with the judge."""
    run_dir = Path(run_dir)
    config_data = dict(_run_manifest_config(run_dir))
    if judge_url is not None:
        if judge_model is None:
            raise click.UsageError("--judge-endpoint needs --judge-model")
        endpoints = dict(config_data.get("endpoints", {}))
        endpoints["judge"] = {"base_url": judge_url, "model_name": judge_model}
        config_data["endpoints"] = endpoints
        click.echo(
            "judge endpoint overridden for this invocation; the manifest "
            "keeps the configuration the run was claimed with"
        )
    try:
        config = RunConfig.from_dict(config_data, base_dir=run_dir,
                                     output_dir=run_dir)
        runner = AuditRunner(config)
        missing = [
            mode.value for mode in config.modes
            if not (run_dir / "generations" / f"{mode.value}.jsonl").exists()
        ]
        if missing:
            click.echo(
                f"error: no generations for modes {missing}; "
                "run `fairlens generate` first",
                err=True,
            )
            sys.exit(1)
        prompt_set = runner.build_prompts()
        generations = runner.build_generations(prompt_set, fair={})
        annotations = runner.build_annotations(prompt_set, generations)
    except FairlensError as exc:
        _fail(exc, run_dir)
    for mode_value, records in annotations.items():
        click.echo(f"  {mode_value}: {len(records)} annotations")
    if runner.judge_stats.parse_warnings:
        click.echo(f"judge parse warnings: {runner.judge_stats.parse_warnings}")


def _report_from_artifacts(run_dir: Path):
    """Recompute the BiasReport from a run directory's stage artifacts."""
    prompts_path = run_dir / "prompts" / "prompts.jsonl"
    if not prompts_path.exists():
        click.echo(f"error: {run_dir} has no prompts/prompts.jsonl", err=True)
        sys.exit(1)

    config = _run_manifest_config(run_dir)
    taxonomy = (
        Taxonomy.from_dict(config["taxonomy"]) if "taxonomy" in config
        else Taxonomy.default()
    )
    prompt_set = PromptSet.load(prompts_path, taxonomy)

    annotation_files = {
        path.stem: path for path in sorted((run_dir / "annotations").glob("*.jsonl"))
    }
    if not annotation_files:
        click.echo(f"error: {run_dir} has no annotations", err=True)
        sys.exit(1)
    modes = [m for m in (config.get("modes") or sorted(annotation_files))
             if m in annotation_files]

    annotations = {
        mode: [
            AnnotationRecord.from_dict(d)
            for d in read_jsonl(annotation_files[mode])
        ]
        for mode in modes
    }
    image_embeddings = {}
    for mode in modes:
        path = run_dir / "generations" / f"{mode}.jsonl"
        if not path.exists():
            continue
        per_pid = {}
        for record in sorted(
            (GenerationRecord.from_dict(d) for d in read_jsonl(path)),
            key=lambda r: (r.prompt_id, r.seed),
        ):
            if record.image_embedding is not None:
                per_pid.setdefault(record.prompt_id, []).append(record.image_embedding)
        image_embeddings[mode] = per_pid
    text_path = run_dir / "embeddings" / "text_embeddings.json"
    text_embeddings = None
    if text_path.exists():
        text_embeddings = {
            pid: np.asarray(vec, dtype=np.float64)
            for pid, vec in read_json(text_path).items()
        }

    return aggregate_report(
        prompt_set,
        annotations,
        image_embeddings=image_embeddings or None,
        text_embeddings=text_embeddings,
        diversity_pairs=config.get("diversity_pairs", 4),
        diversity_seed=config.get("diversity_seed", 0),
        per_prompt_pearson=config.get("per_prompt_pearson", False),
    )


@main.command()
@click.option("--run", "run_dir", "--annotations", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Run directory holding annotations/<mode>.jsonl files.")
@click.option("--out", type=click.Path(dir_okay=False),
              help="Also write the JSON report to this file.")
def score(run_dir, out):
    """Aggregate a run's annotations into bias scores and write the report."""
    run_dir = Path(run_dir)
    try:
        bias_report = _report_from_artifacts(run_dir)
        emit_report(bias_report, run_dir / "report")
        if out:
            write_json_atomic(Path(out), bias_report.to_dict())
    except FairlensError as exc:
        _fail(exc)
    click.echo("normalized fair discrepancy (all levels pooled):")
    for mode in bias_report.modes:
        mean = bias_report.bias_mean[mode][ALL_LEVELS]
        shown = MISSING if mean is None else f"{mean:.4f}"
        click.echo(f"  {mode}: {shown}")
    if out:
        click.echo(f"wrote {out}")
    click.echo(f"report: {run_dir / 'report' / 'report.md'}")


@main.command("report")
@click.option("--run", "run_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="A run directory with completed annotations.")
def report_cmd(run_dir):
    """Re-emit report artifacts from a run directory's stage outputs."""
    run_dir = Path(run_dir)
    try:
        bias_report = _report_from_artifacts(run_dir)
        written = emit_report(bias_report, run_dir / "report")
    except FairlensError as exc:
        _fail(exc)
    for path in written.values():
        click.echo(f"wrote {path}")


# --- fairpro ----------------------------------------------------------------


def _read_prompt_texts(path: Path) -> list[str]:
    """User prompts from a benchmark JSON-lines file or plain text lines."""
    texts = []
    first_error = None
    try:
        for row in read_jsonl(path):
            if not isinstance(row, dict) or "text" not in row:
                raise ValueError(f"line in {path} has no 'text' field")
            texts.append(row["text"])
        return texts
    except ValueError as exc:
        first_error = exc
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    texts = [ln for ln in lines if ln]
    if not texts:
        raise first_error or ValueError(f"{path} contains no prompts")
    return texts


@main.command()
@click.option("--prompt", help="A single user prompt to mitigate.")
@click.option("--prompts", "prompts_file",
              type=click.Path(exists=True, dir_okay=False),
              help="Prompt file: benchmark JSON-lines or one prompt per line.")
@click.option("--mode", default="fairpro", show_default=True,
              type=click.Choice(sorted(m.value for m in MITIGATION_MODES)))
@click.option("--format", "output_format", default="tagged-block",
              show_default=True,
              type=click.Choice([f.value for f in OutputFormat]))
@_config_option
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False),
              help="Write results as JSON-lines here.")
def fairpro(prompt, prompts_file, mode, output_format, config_path, preset,
            seed, out):
    """Run the meta-prompting exchange and print or save the results."""
    if (prompt is None) == (prompts_file is None):
        raise click.UsageError("pass exactly one of --prompt or --prompts")
    try:
        texts = [prompt] if prompt else _read_prompt_texts(Path(prompts_file))
        config = _load_config(config_path, preset, None)
        runner = AuditRunner(config)
        chat = runner.chat_backend("meta")
        results = [
            fair_system_prompt(
                text,
                chat,
                mode=PromptMode(mode),
                output_format=OutputFormat(output_format),
                temperature=config.meta_temperature,
                seed=seed,
            )
            for text in texts
        ]
    except (FairlensError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if out:
        write_jsonl_atomic(Path(out), (r.to_dict() for r in results))
        click.echo(f"wrote {len(results)} results to {out}")
        return
    for result in results:
        if len(results) > 1:
            click.echo(f"# {result.user_prompt}")
        if result.fallback:
            click.echo("parse failed twice; falling back to the default system prompt")
        elif result.rewritten_user_prompt is not None:
            click.echo(result.rewritten_user_prompt)
        else:
            click.echo(result.system_prompt or "")


# --- probes -----------------------------------------------------------------


@main.group()
def probe():
    """Mechanistic bias probes against the configured backends."""


@probe.command()
@_config_option
@click.option("--mode", default="default", show_default=True,
              type=click.Choice(PROBE_CONDITIONS),
              help="System prompt condition: the default prompt, or none.")
@click.option("--out", type=click.Path(dir_okay=False),
              help="Write per-occupation results as JSON-lines here.")
def tokens(config_path, preset, mode, out):
    """Token-probability gender probe over the occupation list."""
    try:
        runner = AuditRunner(_load_config(config_path, preset, None))
        results = runner.token_probe_condition(mode)
    except FairlensError as exc:
        _fail(exc)
    if out:
        write_jsonl_atomic(
            Path(out),
            (
                {"condition": mode, "occupation": occ, **entry}
                for occ, entry in sorted(results["per_occupation"].items())
            ),
        )
        click.echo(f"wrote {out}")
        return
    click.echo(
        f"{mode}: mean bias {results['mean_bias']:+.4f}, "
        f"mean |bias| {results['mean_abs_bias']:.4f}, "
        f"skews {canonical_json(results['skew_counts'])}"
    )


@probe.command()
@_config_option
@click.option("--mode", default="default", show_default=True,
              type=click.Choice(PROBE_CONDITIONS),
              help="Recorded for provenance; embedding endpoints accept no "
                   "system prompt, so vectors are identical across modes.")
@click.option("--out", type=click.Path(dir_okay=False))
def embeddings(config_path, preset, mode, out):
    """Embedding-space gender association probe over the occupation list."""
    try:
        runner = AuditRunner(_load_config(config_path, preset, None))
        results = runner.association_probe()
    except FairlensError as exc:
        _fail(exc)
    if out:
        write_jsonl_atomic(
            Path(out),
            (
                {"condition": mode, "occupation": occ, "bias": bias}
                for occ, bias in sorted(results["per_occupation"].items())
            ),
        )
        click.echo(f"wrote {out}")
        return
    click.echo(
        f"{results['n']} occupations: mean bias {results['mean_bias']:+.4f}, "
        f"mean |bias| {results['mean_abs_bias']:.4f}"
    )


@probe.command()
@click.option("--run", "run_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Run directory with annotations for the chosen mode.")
@click.option("--mode", default="default", show_default=True,
              type=click.Choice(PROBE_CONDITIONS))
@click.option("--out", type=click.Path(dir_okay=False),
              help="Write per-prompt leanings as JSON-lines here.")
def decoded(run_dir, mode, out):
    """Decoded-text gender scan versus a run's judged images."""
    run_dir = Path(run_dir)
    prompt_mode = PromptMode(mode)
    try:
        runner = AuditRunner.for_run_dir(run_dir)
        if prompt_mode not in runner.config.modes:
            click.echo(f"error: run has no mode {mode!r}", err=True)
            sys.exit(1)
        annotations_path = run_dir / "annotations" / f"{mode}.jsonl"
        if not annotations_path.exists():
            click.echo(
                f"error: {annotations_path} missing; run `fairlens judge run` first",
                err=True,
            )
            sys.exit(1)
        prompt_set = runner.build_prompts()
        annotations = {
            mode: [AnnotationRecord.from_dict(d) for d in read_jsonl(annotations_path)]
        }
        results = runner.decoded_probe(prompt_set, annotations, fair={},
                                       mode=prompt_mode)
    except FairlensError as exc:
        _fail(exc)
    if out:
        write_jsonl_atomic(
            Path(out),
            (
                {
                    "prompt_id": pid,
                    "decoded": results["decoded_leanings"][pid],
                    "visual": results["visual_leanings"][pid],
                }
                for pid in sorted(results["decoded_leanings"])
            ),
        )
        click.echo(f"wrote {out}")
        return
    agreement = results["agreement"]
    rate = agreement["rate"]
    shown = MISSING if rate is None else f"{rate:.2f}"
    click.echo(
        f"decoded/visual agreement: {agreement['n_agree']}/{agreement['n_compared']}"
        f" = {shown}"
    )
    gender_counts = results["word_distribution"]["counts"]["gender"]
    click.echo(f"gender word counts: {canonical_json(gender_counts)}")


if __name__ == "__main__":
    main()
