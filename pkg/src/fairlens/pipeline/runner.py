"""End-to-end audit over a run directory.

Each stage writes one artifact under the run directory and is skipped when
that artifact already exists, so an interrupted run resumes where it stopped.
The generation stage additionally caches every backend response by request
digest, so even a partially written stage never repeats a backend call. The
run directory is bound to one configuration digest via manifest.json; reusing
it with a different configuration raises RefusesToMixRuns.

Layout:
    manifest.json                   configuration plus stage summary
    prompts/prompts.jsonl           the benchmark, one prompt per line
    fairpro/<mode>.jsonl            meta-prompting results, one per line
    generations/<mode>.jsonl        generation records, one per line
    annotations/<mode>.jsonl        judge labels, one per (prompt, seed) line
    embeddings/text_embeddings.json prompt id -> prompt text embedding
    probes/summary.json             all probe aggregates
    probes/*.jsonl                  per-item probe results
    report/report.{json,csv,md}     the aggregate report
    cache/                          request-level generation + rewrite caches

Stages run strictly in sequence; within a stage, independent items run on a
bounded thread pool when the config sets parallelism > 1. Results are always
collected in input order, so parallel and sequential runs produce identical
artifacts.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corpus import LEVEL_REWRITTEN, PromptSet, build_corpus
from ..errors import RefusesToMixRuns, RewriteFailed
from ..fairpro import (
    FairPromptResult,
    PromptMode,
    assemble_generation_inputs,
    fair_system_prompt,
)
from ..judge import (
    AnnotationRecord,
    ChatJudge,
    JudgeStats,
    SimulatorJudge,
    annotate,
    default_instructions,
)
from ..jsonutil import read_json, read_jsonl, write_json_atomic, write_jsonl_atomic
from ..metrics import BiasReport, aggregate_report
from ..modelio.cache import GenerationCache
from ..modelio.endpoints import (
    ChatRequest,
    HttpChatClient,
    HttpEmbeddingClient,
    HttpImageClient,
)
from ..modelio.generation import GenerationRecord, generate_image
from ..modelio.simulator import SimulatedModel
from ..probes.embeddings import run_association_probe
from ..probes.tokens import (
    run_token_probe,
    skew_shift_summary,
    token_probe_aggregate,
)
from ..probes.words import (
    decoded_agreement,
    majority_leaning,
    text_gender_leaning,
    word_distribution,
)
from .config import RunConfig
from .report import emit_report

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
REWRITE_CACHE_NAME = "rewrites.json"


def load_run_config(run_dir: Path | str) -> RunConfig:
    """Reconstruct the configuration a run directory was claimed with."""
    run_dir = Path(run_dir)
    manifest = read_json(run_dir / MANIFEST_NAME)
    return RunConfig.from_dict(
        manifest["config"], base_dir=run_dir, output_dir=run_dir
    )


@dataclass
class AuditResult:
    """What run_audit hands back: the report plus run bookkeeping."""

    run_dir: Path
    report: BiasReport
    prompt_set: PromptSet
    probes: dict | None
    backend_calls: dict[str, int]
    parse_warnings: int


class AuditRunner:
    """Drives every stage of one audit run."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.run_dir = Path(config.output_dir)
        self._sims: dict[str, SimulatedModel] = {}
        self._http_clients: dict[str, object] = {}
        self._judge = None
        self.judge_stats = JudgeStats()

    @classmethod
    def for_run_dir(cls, run_dir: Path | str) -> "AuditRunner":
        return cls(load_run_config(run_dir))

    # --- backends -----------------------------------------------------------

    def _sim(self, spec) -> SimulatedModel:
        key = spec.digest
        if key not in self._sims:
            self._sims[key] = SimulatedModel(spec, self.config.taxonomy)
        return self._sims[key]

    def _http(self, role: str, factory):
        if role not in self._http_clients:
            self._http_clients[role] = factory(self.config.endpoints[role].endpoint)
        return self._http_clients[role]

    def chat_backend(self, role: str):
        spec = self.config.endpoints[role]
        if spec.is_simulator:
            return self._sim(spec.simulator)
        return self._http(role, HttpChatClient)

    def image_backend(self):
        spec = self.config.endpoints["generator"]
        if spec.is_simulator:
            return self._sim(spec.simulator)
        return self._http("generator", HttpImageClient)

    def embed_backend(self):
        spec = self.config.endpoints["embedder"]
        if spec.is_simulator:
            return self._sim(spec.simulator)
        return self._http("embedder", HttpEmbeddingClient)

    def judge_backend(self):
        if self._judge is None:
            spec = self.config.endpoints["judge"]
            if spec.is_simulator:
                self._judge = SimulatorJudge()
            else:
                self._judge = ChatJudge(self._http("judge", HttpChatClient))
        return self._judge

    def probe_chat(self):
        """Chat callable for mechanistic probes.

        A simulated generator exposes its own chat surface, so probes question
        the generator directly. An HTTP image endpoint has no chat surface, so
        the meta chat endpoint stands in for the generator's language backbone.
        """
        spec = self.config.endpoints["generator"]
        if spec.is_simulator:
            return self._sim(spec.simulator).chat
        return self.chat_backend("meta").chat

    def backend_calls(self) -> dict[str, int]:
        calls = {"chat": 0, "embed": 0, "generate": 0, "judge": 0}
        for sim in self._sims.values():
            calls["chat"] += sim.chat_calls
            calls["embed"] += sim.embed_calls
            calls["generate"] += sim.generate_calls
        if self._judge is not None:
            calls["judge"] = self._judge.judge_calls
        return calls

    def _map(self, fn, items: list) -> list:
        """Apply fn to every item, in input order, optionally on a pool."""
        if self.config.parallelism <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            return list(pool.map(fn, items))

    # --- run directory ------------------------------------------------------

    def claim_run_dir(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = self.run_dir / MANIFEST_NAME
        digest = self.config.digest
        if manifest_path.exists():
            existing = read_json(manifest_path).get("config_digest")
            if existing != digest:
                raise RefusesToMixRuns(
                    f"run directory {self.run_dir} belongs to configuration "
                    f"{existing}; this configuration digests to {digest}. "
                    "Use a fresh output directory."
                )
        else:
            write_json_atomic(
                manifest_path,
                {"config_digest": digest, "config": self.config.canonical_dict()},
            )

    def _finalize_manifest(self, stages: dict) -> None:
        write_json_atomic(
            self.run_dir / MANIFEST_NAME,
            {
                "config_digest": self.config.digest,
                "config": self.config.canonical_dict(),
                "stages": stages,
            },
        )

    # --- stages ---------------------------------------------------------------

    def build_prompts(self) -> PromptSet:
        path = self.run_dir / "prompts" / "prompts.jsonl"
        if path.exists():
            return PromptSet.load(path, self.config.taxonomy)
        rewriter = None
        rewrite_cache: dict[str, str] | None = None
        cache_path = self.run_dir / "cache" / REWRITE_CACHE_NAME
        if LEVEL_REWRITTEN in self.config.levels:
            rewriter = self.chat_backend("rewriter")
            rewrite_cache = read_json(cache_path) if cache_path.exists() else {}
        try:
            prompt_set = build_corpus(
                self.config.occupations,
                self.config.taxonomy,
                seed=self.config.corpus_seed,
                levels=self.config.levels,
                rewriter=rewriter,
                rewrite_template=self.config.rewrite_template,
                rewrite_cache=rewrite_cache,
            )
        except RewriteFailed:
            # Keep the rewrites that did succeed so a rerun only asks for the
            # missing ones.
            if rewrite_cache:
                write_json_atomic(cache_path, rewrite_cache)
            raise
        prompt_set.save(path)
        return prompt_set

    def build_fair_prompts(
        self, prompt_set: PromptSet
    ) -> dict[str, dict[str, FairPromptResult]]:
        out: dict[str, dict[str, FairPromptResult]] = {}
        for mode in self.config.mitigation_modes:
            path = self.run_dir / "fairpro" / f"{mode.value}.jsonl"
            if path.exists():
                out[mode.value] = {
                    row["prompt_id"]: FairPromptResult.from_dict(row)
                    for row in read_jsonl(path)
                }
                continue
            chat = self.chat_backend("meta")
            prompts = sorted(prompt_set.prompts, key=lambda p: p.id)

            def fair_one(prompt, mode=mode, chat=chat):
                return fair_system_prompt(
                    prompt.text,
                    chat,
                    mode=mode,
                    output_format=self.config.output_format,
                    temperature=self.config.meta_temperature,
                    seed=self.config.meta_seed,
                )

            results = dict(zip(
                (p.id for p in prompts), self._map(fair_one, prompts)
            ))
            write_jsonl_atomic(
                path,
                ({"prompt_id": pid, **r.to_dict()} for pid, r in results.items()),
            )
            out[mode.value] = results
        return out

    def _generation_inputs(
        self, mode: PromptMode, prompt, fair: dict
    ) -> tuple[str | None, str]:
        fair_result = fair.get(mode.value, {}).get(prompt.id)
        return assemble_generation_inputs(
            mode, prompt.text, self.config.default_system_prompt, fair_result
        )

    def build_generations(
        self, prompt_set: PromptSet, fair: dict
    ) -> dict[str, list[GenerationRecord]]:
        cache = GenerationCache(self.run_dir / "cache")
        backend = self.image_backend()
        out: dict[str, list[GenerationRecord]] = {}
        for mode in self.config.modes:
            path = self.run_dir / "generations" / f"{mode.value}.jsonl"
            if path.exists():
                out[mode.value] = [
                    GenerationRecord.from_dict(d) for d in read_jsonl(path)
                ]
                continue
            tasks = []
            for prompt in sorted(prompt_set.prompts, key=lambda p: p.id):
                system_prompt, user_prompt = self._generation_inputs(
                    mode, prompt, fair
                )
                for seed in sorted(self.config.seeds):
                    tasks.append((prompt.id, system_prompt, user_prompt, seed))

            def generate_one(task, mode=mode):
                prompt_id, system_prompt, user_prompt, seed = task
                return generate_image(
                    backend,
                    prompt_id=prompt_id,
                    mode=mode.value,
                    system_prompt=system_prompt,
                    user_prompt=user_prompt,
                    seed=seed,
                    cache=cache,
                )

            records = self._map(generate_one, tasks)
            write_jsonl_atomic(path, (r.to_dict() for r in records))
            out[mode.value] = records
            log.info("generated %d images for mode %s", len(records), mode.value)
        return out

    def build_annotations(
        self, prompt_set: PromptSet, generations: dict
    ) -> dict[str, list[AnnotationRecord]]:
        judge = self.judge_backend()
        instructions = default_instructions(self.config.taxonomy)
        out: dict[str, list[AnnotationRecord]] = {}
        for mode in self.config.modes:
            path = self.run_dir / "annotations" / f"{mode.value}.jsonl"
            if path.exists():
                out[mode.value] = [
                    AnnotationRecord.from_dict(d) for d in read_jsonl(path)
                ]
                continue

            def annotate_one(record):
                return annotate(
                    record,
                    prompt_set.by_id(record.prompt_id),
                    judge,
                    self.config.taxonomy,
                    instructions,
                    self.judge_stats,
                )

            records = self._map(annotate_one, generations[mode.value])
            write_jsonl_atomic(path, (r.to_dict() for r in records))
            out[mode.value] = records
        return out

    def build_text_embeddings(self, prompt_set: PromptSet) -> dict[str, np.ndarray]:
        path = self.run_dir / "embeddings" / "text_embeddings.json"
        if path.exists():
            return {
                pid: np.asarray(vec, dtype=np.float64)
                for pid, vec in read_json(path).items()
            }
        prompts = sorted(prompt_set.prompts, key=lambda p: p.id)
        vectors = self.embed_backend().embed([p.text for p in prompts])
        write_json_atomic(
            path, {p.id: vec.tolist() for p, vec in zip(prompts, vectors)}
        )
        return {p.id: vec for p, vec in zip(prompts, vectors)}

    # --- probes ---------------------------------------------------------------

    def token_probe_condition(self, condition: str) -> dict:
        """Token probe over all occupations for one system-prompt condition."""
        if condition not in ("default", "none"):
            raise ValueError(f"unknown probe condition {condition!r}")
        system_prompt = (
            self.config.default_system_prompt if condition == "default" else None
        )
        chat = self.probe_chat()
        tau = self.config.probe_tau

        def probe_one(occ):
            return run_token_probe(occ, chat, system_prompt=system_prompt)

        probes = self._map(probe_one, list(self.config.occupations))
        agg = token_probe_aggregate(probes, tau)
        return {
            "per_occupation": {
                p.occupation: {
                    "bias": p.bias,
                    "abs_bias": p.abs_bias,
                    "skew": p.skew(tau),
                }
                for p in probes
            },
            "n": agg.n,
            "mean_bias": agg.mean_bias,
            "mean_abs_bias": agg.mean_abs_bias,
            "skew_counts": agg.skew_counts,
        }

    def _token_probes(self) -> dict:
        tau = self.config.probe_tau
        out: dict = {
            condition: self.token_probe_condition(condition)
            for condition in ("default", "none")
        }
        biases = {
            condition: {
                occ: entry["bias"]
                for occ, entry in out[condition]["per_occupation"].items()
            }
            for condition in ("default", "none")
        }
        shift = skew_shift_summary(biases["none"], biases["default"], tau)
        out["shift_none_to_default"] = {
            "n_male_before": shift.n_male_before,
            "n_female_before": shift.n_female_before,
            "male_to_neutral": shift.male_to_neutral,
            "female_to_neutral": shift.female_to_neutral,
            "male_to_neutral_rate": shift.male_to_neutral_rate,
            "female_to_neutral_rate": shift.female_to_neutral_rate,
            "transitions": {
                f"{pre}->{post}": n for (pre, post), n in sorted(shift.transitions.items())
            },
        }
        out["tau"] = tau
        return out

    def association_probe(self) -> dict:
        results, agg = run_association_probe(
            list(self.config.occupations), self.embed_backend().embed
        )
        return {
            "per_occupation": {r.occupation: r.bias for r in results},
            "n": agg.n,
            "mean_bias": agg.mean_bias,
            "mean_abs_bias": agg.mean_abs_bias,
        }

    def decoded_probe(
        self, prompt_set: PromptSet, annotations: dict, fair: dict,
        mode: PromptMode | None = None,
    ) -> dict:
        """Decoded-text gender distribution versus the judged images.

        Runs on the same (system prompt, user prompt) pairs the generation
        stage used for the chosen mode, one decode per seed.
        """
        if mode is None:
            mode = (
                PromptMode.DEFAULT
                if PromptMode.DEFAULT in self.config.modes
                else self.config.modes[0]
            )
        chat = self.probe_chat()
        seeds = sorted(self.config.seeds)
        prompts = prompt_set.scorable_prompts("gender")

        visual_by_pid: dict[str, list[str]] = {}
        for record in annotations.get(mode.value, []):
            label = record.labels.get("gender")
            if label is not None:
                visual_by_pid.setdefault(record.prompt_id, []).append(label)

        texts: list[str] = []
        decoded: dict[str, str | None] = {}
        visual: dict[str, str | None] = {}
        for prompt in sorted(prompts, key=lambda p: p.id):
            system_prompt, user_prompt = self._generation_inputs(mode, prompt, fair)
            leanings = []
            for seed in seeds:
                text = chat(
                    ChatRequest(
                        user_prompt=user_prompt,
                        system_prompt=system_prompt,
                        temperature=0.0,
                        seed=seed,
                    )
                ).text
                texts.append(text)
                leanings.append(text_gender_leaning(text))
            decoded[prompt.id] = majority_leaning(leanings, len(seeds))
            labels = visual_by_pid.get(prompt.id, [])
            visual[prompt.id] = majority_leaning(
                [lab if lab in ("male", "female") else None for lab in labels],
                len(labels),
            ) if labels else None

        agreement = decoded_agreement(decoded, visual)
        dist = word_distribution(texts)
        return {
            "mode": mode.value,
            "decoded_leanings": decoded,
            "visual_leanings": visual,
            "agreement": {
                "n_compared": agreement.n_compared,
                "n_agree": agreement.n_agree,
                "rate": agreement.agreement,
            },
            "word_distribution": {
                "counts": dist.counts,
                "proportions": dist.proportions,
            },
        }

    def _write_probe_rows(self, probes: dict) -> None:
        """Flatten probe results into per-item JSON-lines files."""
        probes_dir = self.run_dir / "probes"
        tokens = probes["tokens"]
        write_jsonl_atomic(
            probes_dir / "tokens.jsonl",
            (
                {"condition": condition, "occupation": occ, **entry}
                for condition in ("default", "none")
                for occ, entry in sorted(tokens[condition]["per_occupation"].items())
            ),
        )
        write_jsonl_atomic(
            probes_dir / "association.jsonl",
            (
                {"occupation": occ, "bias": bias}
                for occ, bias in sorted(
                    probes["association"]["per_occupation"].items()
                )
            ),
        )
        decoded = probes["decoded"]
        write_jsonl_atomic(
            probes_dir / "decoded.jsonl",
            (
                {
                    "prompt_id": pid,
                    "decoded": decoded["decoded_leanings"][pid],
                    "visual": decoded["visual_leanings"][pid],
                }
                for pid in sorted(decoded["decoded_leanings"])
            ),
        )

    def build_probes(
        self, prompt_set: PromptSet, annotations: dict, fair: dict
    ) -> dict | None:
        if not self.config.probes:
            return None
        path = self.run_dir / "probes" / "summary.json"
        if path.exists():
            return read_json(path)
        probes = {
            "tokens": self._token_probes(),
            "association": self.association_probe(),
            "decoded": self.decoded_probe(prompt_set, annotations, fair),
        }
        self._write_probe_rows(probes)
        write_json_atomic(path, probes)
        return probes

    # --- report ---------------------------------------------------------------

    def build_report(
        self,
        prompt_set: PromptSet,
        generations: dict,
        annotations: dict,
        text_embeddings: dict[str, np.ndarray],
    ) -> BiasReport:
        image_embeddings: dict[str, dict[str, list[np.ndarray]]] = {}
        for mode_value, records in generations.items():
            per_pid: dict[str, list[np.ndarray]] = {}
            for record in sorted(records, key=lambda r: (r.prompt_id, r.seed)):
                if record.image_embedding is not None:
                    per_pid.setdefault(record.prompt_id, []).append(
                        record.image_embedding
                    )
            image_embeddings[mode_value] = per_pid
        report = aggregate_report(
            prompt_set,
            {mode.value: annotations[mode.value] for mode in self.config.modes},
            image_embeddings=image_embeddings,
            text_embeddings=text_embeddings,
            diversity_pairs=self.config.diversity_pairs,
            diversity_seed=self.config.diversity_seed,
            per_prompt_pearson=self.config.per_prompt_pearson,
        )
        emit_report(report, self.run_dir / "report")
        return report

    # --- one-shot -------------------------------------------------------------

    def run(self) -> AuditResult:
        self.claim_run_dir()
        prompt_set = self.build_prompts()
        fair = self.build_fair_prompts(prompt_set)
        generations = self.build_generations(prompt_set, fair)
        annotations = self.build_annotations(prompt_set, generations)
        text_embeddings = self.build_text_embeddings(prompt_set)
        probes = self.build_probes(prompt_set, annotations, fair)
        report = self.build_report(
            prompt_set, generations, annotations, text_embeddings
        )
        self._finalize_manifest(
            {
                "prompts": {"count": len(prompt_set.prompts)},
                "fairpro": {
                    mode_value: {
                        "count": len(results),
                        "fallbacks": sum(1 for r in results.values() if r.fallback),
                    }
                    for mode_value, results in fair.items()
                },
                "generations": {
                    mode_value: len(records)
                    for mode_value, records in generations.items()
                },
                "annotations": {
                    mode_value: len(records)
                    for mode_value, records in annotations.items()
                },
                "parse_warnings": self.judge_stats.parse_warnings,
                "probes": bool(probes),
            }
        )
        return AuditResult(
            run_dir=self.run_dir,
            report=report,
            prompt_set=prompt_set,
            probes=probes,
            backend_calls=self.backend_calls(),
            parse_warnings=self.judge_stats.parse_warnings,
        )


def run_audit(config: RunConfig) -> AuditResult:
    return AuditRunner(config).run()
