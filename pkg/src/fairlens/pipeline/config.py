"""Run configuration.

A config resolves every external input (occupation list, taxonomy, simulator
specs, system prompt text) at load time, so its digest reflects actual content
rather than file paths. The digest excludes the output directory; it is what
makes a run directory resumable only by the same effective configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..corpus import LEVELS, load_occupations
from ..errors import ConfigError
from ..fairpro import MITIGATION_MODES, OutputFormat, PromptMode
from ..jsonutil import digest_obj, read_json
from ..modelio.endpoints import EndpointKind, ModelEndpoint
from ..modelio.simulator import SimulatedModelSpec
from ..resources import load_desk_simulator_spec, load_system_prompts
from ..taxonomy import Taxonomy

ROLES = ("generator", "judge", "embedder", "meta", "rewriter")


@dataclass(frozen=True)
class EndpointSpec:
    """One endpoint role: either an inline simulator spec or an HTTP endpoint."""

    simulator: SimulatedModelSpec | None = None
    endpoint: ModelEndpoint | None = None

    def __post_init__(self):
        if (self.simulator is None) == (self.endpoint is None):
            raise ConfigError("endpoint spec needs exactly one of simulator/http")

    @property
    def is_simulator(self) -> bool:
        return self.simulator is not None

    def canonical(self) -> dict:
        if self.simulator is not None:
            return {"simulator": self.simulator.to_dict()}
        ep = self.endpoint
        return {
            "http": {
                "kind": ep.kind.value,
                "base_url": ep.base_url,
                "model_name": ep.model_name,
            }
        }

    @classmethod
    def from_value(cls, value, kind: EndpointKind, base_dir: Path) -> "EndpointSpec":
        """Parse one role's config value.

        Accepted forms: "simulator:desk", {"simulator": "desk"},
        {"simulator": {...inline spec...}}, {"simulator": "path/to/spec.json"},
        HTTP fields {"base_url": ..., "model_name": ..., ...}, or the
        canonical() form {"http": {...}} written to run manifests.
        """
        if isinstance(value, str):
            if value.startswith("simulator:"):
                value = {"simulator": value.split(":", 1)[1]}
            else:
                raise ConfigError(f"endpoint string must be 'simulator:<name>': {value!r}")
        if not isinstance(value, Mapping):
            raise ConfigError(f"endpoint config must be a mapping: {value!r}")
        if "http" in value:
            inner = dict(value["http"])
            inner.pop("kind", None)
            value = inner
        if "simulator" in value:
            sim = value["simulator"]
            if sim == "desk":
                spec_data = load_desk_simulator_spec()
            elif isinstance(sim, str):
                spec_data = read_json((base_dir / sim).resolve())
            elif isinstance(sim, Mapping):
                spec_data = dict(sim)
            else:
                raise ConfigError(f"bad simulator value: {sim!r}")
            return cls(simulator=SimulatedModelSpec.from_dict(spec_data))
        try:
            return cls(
                endpoint=ModelEndpoint(
                    kind=kind,
                    base_url=value["base_url"],
                    model_name=value.get("model_name") or value["model"],
                    auth_token_env=value.get("auth_token_env", ""),
                    timeout=float(value.get("timeout", 60.0)),
                    max_retries=int(value.get("max_retries", 2)),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"endpoint config missing field: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_ROLE_KINDS = {
    "generator": EndpointKind.IMAGE,
    "judge": EndpointKind.CHAT,
    "embedder": EndpointKind.EMBEDDING,
    "meta": EndpointKind.CHAT,
    "rewriter": EndpointKind.CHAT,
}

_KNOWN_KEYS = {
    "output_dir", "seeds", "modes", "levels", "occupations", "occupation_limit",
    "corpus_seed", "taxonomy", "endpoints", "default_system_prompt",
    "output_format", "rewrite_template", "meta_seed", "meta_temperature",
    "diversity_pairs", "diversity_seed", "probes", "probe_tau",
    "parallelism", "per_prompt_pearson",
}


@dataclass
class RunConfig:
    output_dir: Path
    seeds: tuple[int, ...]
    modes: tuple[PromptMode, ...]
    levels: tuple[str, ...]
    occupations: tuple[str, ...]
    taxonomy: Taxonomy
    endpoints: dict[str, EndpointSpec]
    default_system_prompt: str
    corpus_seed: int = 0
    output_format: OutputFormat = OutputFormat.TAGGED_BLOCK
    rewrite_template: str | None = None
    meta_seed: int = 0
    meta_temperature: float = 0.7
    diversity_pairs: int = 4
    diversity_seed: int = 0
    probes: bool = True
    probe_tau: float = 0.1
    parallelism: int = 1
    per_prompt_pearson: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be unique")
        if not self.modes:
            raise ConfigError("at least one mode required")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError("modes must be unique")
        if not self.levels:
            raise ConfigError("at least one level required")
        unknown = set(self.levels) - set(LEVELS)
        if unknown:
            raise ConfigError(f"unknown levels: {sorted(unknown)}")
        if not self.occupations:
            raise ConfigError("occupation list is empty")
        missing = set(ROLES) - set(self.endpoints)
        if missing:
            raise ConfigError(f"missing endpoint roles: {sorted(missing)}")
        if self.diversity_pairs < 1:
            raise ConfigError("diversity_pairs must be >= 1")
        if self.probe_tau < 0:
            raise ConfigError("probe_tau must be >= 0")
        if not 0.0 <= self.meta_temperature <= 2.0:
            raise ConfigError("meta_temperature must be in [0, 2]")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    @property
    def mitigation_modes(self) -> tuple[PromptMode, ...]:
        return tuple(m for m in self.modes if m in MITIGATION_MODES)

    def canonical_dict(self) -> dict:
        """Everything that defines run identity.

        output_dir and parallelism are excluded: neither changes any produced
        artifact, so runs may move directories or change worker counts and
        still resume.
        """
        return {
            "seeds": list(self.seeds),
            "modes": [m.value for m in self.modes],
            "levels": list(self.levels),
            "occupations": list(self.occupations),
            "taxonomy": self.taxonomy.to_dict(),
            "endpoints": {role: spec.canonical() for role, spec in self.endpoints.items()},
            "default_system_prompt": self.default_system_prompt,
            "corpus_seed": self.corpus_seed,
            "output_format": self.output_format.value,
            "rewrite_template": self.rewrite_template,
            "meta_seed": self.meta_seed,
            "meta_temperature": self.meta_temperature,
            "diversity_pairs": self.diversity_pairs,
            "diversity_seed": self.diversity_seed,
            "probes": self.probes,
            "probe_tau": self.probe_tau,
            "per_prompt_pearson": self.per_prompt_pearson,
        }

    @property
    def digest(self) -> str:
        return digest_obj(self.canonical_dict())

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path | str = ".",
                  output_dir: Path | str | None = None) -> "RunConfig":
        base_dir = Path(base_dir)
        unknown = set(data) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        out = output_dir or data.get("output_dir")
        if out is None:
            raise ConfigError("output_dir required (config key or --out)")

        occupations_value = data.get("occupations")
        if occupations_value is None:
            occupations = load_occupations()
        elif isinstance(occupations_value, str):
            occupations = load_occupations((base_dir / occupations_value).resolve())
        else:
            occupations = load_occupations(occupations_value)
        limit = data.get("occupation_limit")
        if limit is not None:
            if int(limit) < 1:
                raise ConfigError("occupation_limit must be >= 1")
            occupations = occupations[: int(limit)]

        taxonomy_value = data.get("taxonomy")
        if taxonomy_value is None:
            taxonomy = Taxonomy.default()
        elif isinstance(taxonomy_value, str):
            taxonomy = Taxonomy.from_file((base_dir / taxonomy_value).resolve())
        else:
            taxonomy = Taxonomy.from_dict(taxonomy_value)

        endpoints_value = data.get("endpoints")
        if not isinstance(endpoints_value, Mapping) or "generator" not in endpoints_value:
            raise ConfigError("endpoints.generator is required")
        unknown_roles = set(endpoints_value) - set(ROLES)
        if unknown_roles:
            raise ConfigError(f"unknown endpoint roles: {sorted(unknown_roles)}")
        endpoints: dict[str, EndpointSpec] = {}
        for role in ROLES:
            value = endpoints_value.get(role)
            if value is None:
                # judge/embedder/meta fall back to the generator (useful when it
                # is a simulator); rewriter falls back to meta.
                fallback = endpoints.get("meta" if role == "rewriter" else "generator")
                if fallback is None:
                    raise ConfigError(f"endpoints.{role} is required")
                endpoints[role] = fallback
            else:
                endpoints[role] = EndpointSpec.from_value(
                    value, _ROLE_KINDS[role], base_dir
                )

        system_prompt = data.get("default_system_prompt", "@descriptive")
        if system_prompt.startswith("@"):
            named = load_system_prompts()
            name = system_prompt[1:]
            if name not in named:
                raise ConfigError(f"unknown named system prompt: {name!r}")
            system_prompt = named[name]

        try:
            modes = tuple(PromptMode(m) for m in data.get("modes", ["default"]))
        except ValueError as exc:
            raise ConfigError(f"bad mode: {exc}") from exc
        try:
            output_format = OutputFormat(data.get("output_format", "tagged-block"))
        except ValueError as exc:
            raise ConfigError(f"bad output_format: {exc}") from exc

        return cls(
            output_dir=Path(out),
            seeds=tuple(int(s) for s in data.get("seeds", range(10))),
            modes=modes,
            levels=tuple(data.get("levels", list(LEVELS))),
            occupations=tuple(occupations),
            taxonomy=taxonomy,
            endpoints=endpoints,
            default_system_prompt=system_prompt,
            corpus_seed=int(data.get("corpus_seed", 0)),
            output_format=output_format,
            rewrite_template=data.get("rewrite_template"),
            meta_seed=int(data.get("meta_seed", 0)),
            meta_temperature=float(data.get("meta_temperature", 0.7)),
            diversity_pairs=int(data.get("diversity_pairs", 4)),
            diversity_seed=int(data.get("diversity_seed", 0)),
            probes=bool(data.get("probes", True)),
            probe_tau=float(data.get("probe_tau", 0.1)),
            parallelism=int(data.get("parallelism", 1)),
            per_prompt_pearson=bool(data.get("per_prompt_pearson", False)),
        )

    @classmethod
    def from_file(cls, path: str | Path, output_dir: Path | str | None = None
                  ) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(read_json(path), base_dir=path.parent,
                             output_dir=output_dir)


def desk_preset(output_dir: Path | str) -> RunConfig:
    """Small simulator-only configuration that finishes in well under two
    minutes: 8 occupations, 10 seeds, three modes, every level, probes on."""
    return RunConfig.from_dict(
        {
            "seeds": list(range(10)),
            "modes": ["default", "none", "fairpro"],
            "levels": list(LEVELS),
            "occupation_limit": 8,
            "endpoints": {"generator": {"simulator": "desk"}},
            "default_system_prompt": "@descriptive",
        },
        output_dir=output_dir,
    )
