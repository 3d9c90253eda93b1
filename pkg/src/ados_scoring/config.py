"""Pipeline configuration: one JSON document with ``${ENV}`` interpolation.

Relative paths resolve against the config file's directory. The config
digest is taken over the raw document (before interpolation), so secrets
pulled from the environment never influence or leak into run artifacts.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import ConfigError, LexiconLoadError
from .features import FeatureConfig, feature_config_from_json
from .fusion import FusionStrategy
from .gateway import ModelEndpoint
from .prompts import PriorStats, PromptContext, PromptMode
from .rules import DEFAULT_GRID
from .storage import sha256_hex

_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_KNOWN_KEYS = {"paths", "features", "rules", "prompt", "endpoint", "fusion", "evaluate", "seed", "jobs"}
EVAL_SOURCES = ("rule", "llm", "fused")


def interpolate(value, env: Mapping[str, str]):
    """Replace ``${NAME}`` in every string of a JSON value."""
    if isinstance(value, str):
        def sub(m):
            name = m.group(1)
            if name not in env:
                raise ConfigError(f"environment variable {name} referenced in config is not set")
            return env[name]

        return _ENV_REF.sub(sub, value)
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    return value


def canonical_digest(doc: Mapping) -> str:
    return sha256_hex(json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False))


@dataclass(frozen=True)
class PipelineConfig:
    corpus_dir: Path
    run_dir: Path | None = None
    assets_dir: Path | None = None
    features: FeatureConfig = field(default_factory=FeatureConfig)
    grid: Mapping | None = None
    params_path: Path | None = None
    prompt_arm: str = "C+M+S"
    prompt_mode: PromptMode = PromptMode.ZERO_SHOT
    stats: str | Mapping = "default"
    endpoint: ModelEndpoint | None = None
    strategy: FusionStrategy = FusionStrategy.V4_SOFTMAX_NEG_MAE
    eval_sources: tuple[str, ...] = EVAL_SOURCES
    seed: int = 0
    jobs: int = 1
    digest: str = ""

    def prompt_context(self, few_shot=None, stats: PriorStats | None = None) -> PromptContext:
        examples = tuple(few_shot) if self.prompt_mode is PromptMode.FEW_SHOT else None
        return PromptContext.arm(
            self.prompt_arm, mode=self.prompt_mode, few_shot_examples=examples, stats=stats or PriorStats()
        )

    @classmethod
    def from_dict(
        cls, doc: Mapping, base_dir: str | Path = ".", env: Mapping[str, str] | None = None
    ) -> "PipelineConfig":
        unknown = set(doc) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        digest = canonical_digest(doc)
        data = interpolate(dict(doc), os.environ if env is None else env)
        base = Path(base_dir)

        def resolve(p):
            return None if p is None else (base / p).resolve()

        paths = data.get("paths", {})
        if "corpus_dir" not in paths:
            raise ConfigError("paths.corpus_dir is required")
        corpus_dir = resolve(paths["corpus_dir"])
        if not corpus_dir.is_dir():
            raise ConfigError(f"corpus directory does not exist: {corpus_dir}")
        assets_dir = resolve(paths.get("assets_dir"))
        if assets_dir is not None and not assets_dir.is_dir():
            raise ConfigError(f"assets directory does not exist: {assets_dir}")

        feat = dict(data.get("features", {}))
        lexicon = paths.get("lexicon", feat.get("lexicon"))
        if lexicon is not None:
            lexicon = resolve(lexicon)
            if not lexicon.is_file():
                raise ConfigError(f"lexicon file does not exist: {lexicon}")
            feat["lexicon"] = str(lexicon)
        try:
            features = feature_config_from_json(feat)
        except (TypeError, ValueError, LexiconLoadError) as exc:
            raise ConfigError(f"bad features section: {exc}") from exc

        rules = data.get("rules", {"grid": "default"})
        if ("grid" in rules) == ("params" in rules):
            raise ConfigError("rules section needs exactly one of 'grid' or 'params'")
        grid, params_path = None, None
        if "grid" in rules:
            grid = DEFAULT_GRID if rules["grid"] == "default" else rules["grid"]
            if not isinstance(grid, Mapping):
                raise ConfigError("rules.grid must be an object or \"default\"")
        else:
            params_path = resolve(rules["params"])
            if not params_path.is_file():
                raise ConfigError(f"rule params file does not exist: {params_path}")

        prompt = data.get("prompt", {})
        try:
            mode = PromptMode(prompt.get("mode", PromptMode.ZERO_SHOT.value))
            arm = prompt.get("arm", "C+M+S")
            PromptContext.arm(arm)
        except ValueError as exc:
            raise ConfigError(f"bad prompt section: {exc}") from exc
        stats = prompt.get("stats", "default")
        if not (stats in ("default", "from_labels") or isinstance(stats, Mapping)):
            raise ConfigError("prompt.stats must be \"default\", \"from_labels\" or an object")

        endpoint = None
        if "endpoint" in data:
            try:
                endpoint = ModelEndpoint.from_json(data["endpoint"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad endpoint section: {exc}") from exc

        try:
            strategy = FusionStrategy.parse(data.get("fusion", {}).get("strategy", "v4"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

        sources = tuple(data.get("evaluate", {}).get("sources", EVAL_SOURCES))
        bad = set(sources) - set(EVAL_SOURCES)
        if bad or not sources:
            raise ConfigError(f"evaluate.sources must be a non-empty subset of {list(EVAL_SOURCES)}")

        jobs = int(data.get("jobs", 1))
        if jobs < 1:
            raise ConfigError("jobs must be at least 1")
        return cls(
            corpus_dir=corpus_dir,
            run_dir=resolve(paths.get("run_dir")),
            assets_dir=assets_dir,
            features=features,
            grid=grid,
            params_path=params_path,
            prompt_arm=arm,
            prompt_mode=mode,
            stats=stats,
            endpoint=endpoint,
            strategy=strategy,
            eval_sources=sources,
            seed=int(data.get("seed", 0)),
            jobs=jobs,
            digest=digest,
        )

    @classmethod
    def load(cls, path: str | Path, env: Mapping[str, str] | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc, path.parent, env)
