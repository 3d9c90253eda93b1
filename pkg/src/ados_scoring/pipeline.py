"""Run orchestration: corpus loading, stages, run manifest and artifacts.

Stages write into ``<run_dir>``::

    manifest.json  params.json  fit_report.json  features.json
    scores_rule.json  scores_llm.json  justifications_llm.json
    mae_table.json  weights.json  fused.json  metrics.json  metrics.txt
    raw_llm/<request_id>.json  explanations/<session>/<item>.json

A stage whose manifest entry is complete (and whose artifacts exist) is
skipped on rerun unless ``force`` is set.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .assessment import classify, evaluate_corpus, format_table, total_score
from .config import PipelineConfig
from .errors import AdosError, AuthError, ConfigError, MissingPrediction, StageMissing
from .features import FeatureVector, extract_features
from .fusion import MaeTable, compute_weights, fuse
from .gateway import FixtureGateway, LlmGateway, ReplayGateway
from .items import ITEMS, ClinicianItemSheet, ItemId, ItemScoreSheet
from .prompts import (
    LlmItemResult,
    PriorStats,
    PromptAssets,
    build_interpretability_prompt,
    build_scoring_prompt,
    parse_explanation_response,
    parse_scoring_response,
    results_to_sheet,
)
from .rules import LabeledExample, RuleParams, build_grid, default_params, fit_params, score_all_rule, split_folds
from .storage import atomic_write, read_json, sha256_hex, write_json
from .transcript import SessionTranscript, load_transcript, normalize

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


# -- corpus --------------------------------------------------------------------------


@dataclass(frozen=True)
class Corpus:
    root: Path
    sessions: Mapping[str, SessionTranscript]
    labels: Mapping[str, ItemScoreSheet] | None = None

    def clinician(self) -> dict[str, ClinicianItemSheet]:
        out = {}
        for sid, t in self.sessions.items():
            if t.clinician_items is None:
                raise ConfigError(f"session {sid} has no clinician_items; totals need all 14 items")
            out[sid] = t.clinician_items
        return out

    def require_labels(self) -> Mapping[str, ItemScoreSheet]:
        if self.labels is None:
            raise ConfigError(f"labels file not found: {self.root / 'labels.json'}")
        return self.labels


def load_corpus(root: str | Path) -> Corpus:
    """Read every ``*.jsonl`` session under ``root`` plus an optional ``labels.json``."""
    root = Path(root)
    sessions: dict[str, SessionTranscript] = {}
    for path in sorted(root.glob("*.jsonl")):
        t = normalize(load_transcript(path))
        if t.session_id in sessions:
            raise ConfigError(f"duplicate session_id {t.session_id!r} in {path}")
        sessions[t.session_id] = t
    if not sessions:
        raise ConfigError(f"no *.jsonl sessions found in {root}")
    labels = None
    label_path = root / "labels.json"
    if label_path.exists():
        labels = {
            sid: ItemScoreSheet.from_json(v, source="clinician", session_id=sid)
            for sid, v in read_json(label_path).items()
        }
        missing = sorted(set(labels) - set(sessions))
        if missing:
            raise ConfigError(f"labels.json names unknown sessions: {missing}")
    return Corpus(root, sessions, labels)


# -- manifest ------------------------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    seed: int
    config_digest: str
    stages: dict = field(default_factory=dict)

    @classmethod
    def new(cls, seed: int, config_digest: str) -> "RunManifest":
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        return cls(f"{stamp}-s{seed}", seed, config_digest)

    @classmethod
    def load_or_new(cls, run_dir: Path, seed: int, config_digest: str) -> "RunManifest":
        path = run_dir / MANIFEST
        if path.exists():
            return cls(**read_json(path))
        return cls.new(seed, config_digest)

    def save(self, run_dir: Path) -> None:
        write_json(run_dir / MANIFEST, {
            "run_id": self.run_id, "seed": self.seed,
            "config_digest": self.config_digest, "stages": self.stages,
        })

    def is_complete(self, stage: str, run_dir: Path) -> bool:
        entry = self.stages.get(stage)
        return bool(entry and entry["complete"] and all((run_dir / a).exists() for a in entry["artifacts"]))

    def record(self, stage: str, key: str, artifacts: Iterable[str], complete: bool = True, **details) -> None:
        self.stages[stage] = {"complete": complete, "key": key, "artifacts": sorted(artifacts), **details}


# -- helpers -------------------------------------------------------------------------


def _scores_to_json(sheets: Mapping[str, ItemScoreSheet]) -> dict:
    return {sid: sheets[sid].to_json() for sid in sorted(sheets)}


def _read_scores(path: Path, source: str) -> dict[str, ItemScoreSheet]:
    return {sid: ItemScoreSheet.from_json(v, source=source, session_id=sid) for sid, v in read_json(path).items()}


def _failure_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


@dataclass
class StageResult:
    stage: str
    skipped: bool = False
    failures: dict = field(default_factory=dict)
    output: str = ""

    @property
    def ok(self) -> bool:
        return not self.failures


class Pipeline:
    """Executes stages for one run directory."""

    def __init__(
        self,
        cfg: PipelineConfig,
        run_dir: str | Path | None = None,
        *,
        seed: int | None = None,
        jobs: int | None = None,
        force: bool = False,
        replay: str | Path | None = None,
        gateway=None,
        env: Mapping[str, str] | None = None,
    ):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.jobs = cfg.jobs if jobs is None else jobs
        self.force = force
        self.replay = replay
        self._gateway = gateway
        self._env = env
        run_dir = run_dir or cfg.run_dir
        if run_dir is None:
            stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
            run_dir = Path("runs") / f"{stamp}-s{self.seed}"
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.key = sha256_hex(cfg.digest, str(self.seed))
        self.manifest = RunManifest.load_or_new(self.run_dir, self.seed, cfg.digest)
        self._corpus: Corpus | None = None
        self._assets: PromptAssets | None = None

    # shared state

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            self._corpus = load_corpus(self.cfg.corpus_dir)
        return self._corpus

    @property
    def assets(self) -> PromptAssets:
        if self._assets is None:
            self._assets = PromptAssets.load(self.cfg.assets_dir)
        return self._assets

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def _map(self, fn: Callable, ids: Iterable[str]) -> dict:
        ids = sorted(ids)
        if self.jobs <= 1:
            return {sid: fn(sid) for sid in ids}
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return dict(zip(ids, pool.map(fn, ids)))

    def _skip(self, stage: str) -> bool:
        if self.force or not self.manifest.is_complete(stage, self.run_dir):
            return False
        if self.manifest.stages[stage]["key"] != self.key:
            raise ConfigError(f"stage {stage} was completed with a different config or seed; use --force")
        logger.info("stage %s already complete; skipping", stage)
        return True

    def _finish(self, stage: str, artifacts: Iterable[str], failures: Mapping | None = None, **details) -> None:
        failures = dict(failures or {})
        if failures:
            details["failures"] = failures
        self.manifest.record(stage, self.key, artifacts, complete=not failures, **details)
        self.manifest.save(self.run_dir)

    def _require(self, stage: str, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise StageMissing(stage, p)
        return p

    def features(self) -> dict[str, FeatureVector]:
        sessions = self.corpus.sessions
        return self._map(lambda sid: extract_features(sessions[sid], self.cfg.features), sessions)

    def strata(self) -> dict[str, str]:
        labels = self.corpus.require_labels()
        clinician = self.corpus.clinician()
        return {sid: classify(total_score(labels[sid], clinician[sid])).ternary.value for sid in labels}

    def rule_params(self) -> RuleParams:
        if self.cfg.params_path is not None:
            return RuleParams.from_json(read_json(self.cfg.params_path))
        return RuleParams.from_json(read_json(self._require("fit", "params.json")))

    def gateway(self):
        if self._gateway is not None:
            return self._gateway
        raw = self.path("raw_llm")
        if self.replay is None:
            ep = self.cfg.endpoint
            if ep is None:
                raise ConfigError("no endpoint configured; pass --replay to use recorded responses")
            gw = LlmGateway(ep, record_dir=raw, env=self._env)
            gw.check_credentials()
        else:
            source = None if str(self.replay) == "auto" else Path(self.replay)
            if source is None:
                fixtures = self.cfg.corpus_dir / "fixtures"
                gw = (FixtureGateway.from_corpus_dir(self.cfg.corpus_dir, raw) if fixtures.is_dir()
                      else ReplayGateway.from_dir(raw))
            elif (source / "fixtures").is_dir():
                gw = FixtureGateway.from_corpus_dir(source, raw)
            elif source.is_dir():
                gw = ReplayGateway.from_dir(source, None if source.resolve() == raw.resolve() else raw)
            else:
                raise ConfigError(f"replay source does not exist: {source}")
        self._gateway = gw
        return gw

    def prior_stats(self) -> PriorStats:
        stats = self.cfg.stats
        if stats == "default":
            return PriorStats()
        if stats == "from_labels":
            return PriorStats.from_labels(self.corpus.require_labels(), self.corpus.clinician())
        return PriorStats.from_json(stats)

    # stages

    def fit(self) -> StageResult:
        if self.cfg.grid is None:
            raise ConfigError("config supplies fitted rule params; there is nothing to fit")
        if self._skip("fit"):
            return StageResult("fit", skipped=True)
        labels = self.corpus.require_labels()
        feats = self.features()
        strata = self.strata()
        examples = [LabeledExample(sid, feats[sid], labels[sid], strata[sid]) for sid in sorted(labels)]
        base = default_params()
        params, report = fit_params(examples, build_grid(base, self.cfg.grid), self.seed, base)
        atomic_write(self.path("params.json"), params.dumps())
        atomic_write(self.path("fit_report.json"), report.dumps())
        self._finish("fit", ["params.json", "fit_report.json"])
        return StageResult("fit")

    def score_rule(self) -> StageResult:
        stage = "score:rule"
        if self._skip(stage):
            return StageResult(stage, skipped=True)
        params = self.rule_params()
        sessions = self.corpus.sessions

        def one(sid):
            try:
                f = extract_features(sessions[sid], self.cfg.features)
                return f, score_all_rule(f, params, sid)
            except AdosError as exc:
                return exc, None

        out = self._map(one, sessions)
        failures = {sid: _failure_text(f) for sid, (f, s) in out.items() if s is None}
        sheets = {sid: s for sid, (_, s) in out.items() if s is not None}
        write_json(self.path("features.json"), {sid: out[sid][0].to_json() for sid in sorted(sheets)})
        write_json(self.path("scores_rule.json"), _scores_to_json(sheets))
        self._finish(stage, ["features.json", "scores_rule.json"], failures)
        return StageResult(stage, failures=failures)

    def score_llm(self) -> StageResult:
        stage = "score:llm"
        if self._skip(stage):
            return StageResult(stage, skipped=True)
        gw = self.gateway()
        ctx = self.cfg.prompt_context(self.assets.few_shot, self.prior_stats())
        sessions = self.corpus.sessions

        def one(sid):
            bundle = build_scoring_prompt(sessions[sid], ctx, self.assets)
            try:
                text, _ = gw.complete(bundle, key=f"{sid}/{ctx.mode.value}")
                return parse_scoring_response(text, ctx.mode)
            except AuthError:
                raise
            except AdosError as exc:
                return exc

        out = self._map(one, sessions)
        failures = {sid: _failure_text(r) for sid, r in out.items() if isinstance(r, Exception)}
        results = {sid: r for sid, r in out.items() if not isinstance(r, Exception)}
        sheets = {sid: results_to_sheet(r, sid) for sid, r in results.items()}
        write_json(self.path("scores_llm.json"), _scores_to_json(sheets))
        write_json(
            self.path("justifications_llm.json"),
            {sid: {r.item.value: r.justification for r in results[sid]} for sid in sorted(results)},
        )
        self._finish(stage, ["scores_llm.json", "justifications_llm.json"], failures)
        return StageResult(stage, failures=failures)

    def mae_table(self, llm: Mapping[str, ItemScoreSheet], rule: Mapping[str, ItemScoreSheet]) -> MaeTable:
        """Per-item MAEs averaged over the two stratified validation folds."""
        labels = self.corpus.require_labels()
        folds = split_folds(self.strata(), self.seed)
        for source, sheets in (("llm", llm), ("rule", rule)):
            for sid in labels:
                if sid not in sheets:
                    raise MissingPrediction(sid, source)

        def fold_mae(sheets, item):
            per_fold = [math.fsum(abs(sheets[s][item] - labels[s][item]) for s in f) / len(f) for f in folds]
            return math.fsum(per_fold) / len(per_fold)

        return MaeTable({item: (fold_mae(llm, item), fold_mae(rule, item)) for item in ITEMS})

    def fuse(self) -> StageResult:
        if self._skip("fuse"):
            return StageResult("fuse", skipped=True)
        rule = _read_scores(self._require("score:rule", "scores_rule.json"), "rule")
        llm = _read_scores(self._require("score:llm", "scores_llm.json"), "llm")
        table = self.mae_table(llm, rule)
        weights = compute_weights(table, self.cfg.strategy)
        fused = {}
        for sid in sorted(set(llm) & set(rule)):
            fused[sid] = fuse(llm[sid], rule[sid], weights)
        write_json(self.path("mae_table.json"), table.to_json())
        write_json(self.path("weights.json"), weights.to_json())
        write_json(self.path("fused.json"), {sid: fused[sid].to_json() for sid in sorted(fused)})
        self._finish("fuse", ["mae_table.json", "weights.json", "fused.json"])
        return StageResult("fuse")

    def load_source(self, source: str) -> dict[str, ItemScoreSheet]:
        if source == "rule":
            return _read_scores(self._require("score:rule", "scores_rule.json"), "rule")
        if source == "llm":
            return _read_scores(self._require("score:llm", "scores_llm.json"), "llm")
        data = read_json(self._require("fuse", "fused.json"))
        return {
            sid: ItemScoreSheet({ItemId.parse(k): v["fused"] for k, v in entry.items()}, "fused", sid)
            for sid, entry in data.items()
        }

    def evaluate(self) -> StageResult:
        if self._skip("evaluate"):
            return StageResult("evaluate", skipped=True, output=self.path("metrics.txt").read_text(encoding="utf-8"))
        predictions = {s: self.load_source(s) for s in self.cfg.eval_sources}
        reports = evaluate_corpus(predictions, self.corpus.require_labels(), self.corpus.clinician(), seed=self.seed)
        table = format_table(reports)
        write_json(self.path("metrics.json"), {name: r.to_json() for name, r in reports.items()})
        atomic_write(self.path("metrics.txt"), table)
        self._finish("evaluate", ["metrics.json", "metrics.txt"])
        return StageResult("evaluate", output=table)

    def explain(self, session_id: str, items: Iterable[ItemId | str] | None = None) -> StageResult:
        if session_id not in self.corpus.sessions:
            raise ConfigError(f"unknown session {session_id!r}")
        t = self.corpus.sessions[session_id]
        items = [ItemId.parse(i) for i in (items or ITEMS)]
        llm = read_json(self._require("score:llm", "scores_llm.json"))
        notes = read_json(self._require("score:llm", "justifications_llm.json"))
        if session_id not in llm:
            raise MissingPrediction(session_id, "llm")
        failures, lines = {}, []
        for item in items:
            stage = f"explain:{session_id}:{item.value}"
            name = f"explanations/{session_id}/{item.value}.json"
            if self._skip(stage):
                continue
            first = LlmItemResult(item, llm[session_id][item.value], notes[session_id].get(item.value, ""))
            bundle = build_interpretability_prompt(item, first, t, self.assets)
            try:
                text, _ = self.gateway().complete(bundle, key=f"{session_id}/explain_{item.value}")
                record = parse_explanation_response(text, item, t, first.score)
            except AuthError:
                raise
            except AdosError as exc:
                failures[item.value] = _failure_text(exc)
                self._finish(stage, [], {item.value: failures[item.value]})
                continue
            write_json(self.path(name), record.to_json())
            verified = sum(e.verified for e in record.excerpts)
            lines.append(f"{session_id} {item.value}: score {record.confirmed_score}, "
                         f"{verified}/{len(record.excerpts)} excerpts verified")
            self._finish(stage, [name])
        return StageResult("explain", failures=failures, output="\n".join(lines))
