"""Stage orchestration over one output root.

Each stage reads the previous stage's artifacts, writes its own under the
output root, and records a content hash of (config, inputs); rerunning a
stage with unchanged inputs is a no-op that leaves artifacts untouched.

Layout under the output root::

    fixtures/              generated input fixtures (mock runs only)
    datasets/<regime>/     regime subset, assembled and mixed manifests
    captions/<regime>/     per-class caption batches
    prompts/<regime>/      per-class prompt sets (+ geometry-stripped sets)
    edges/                 edge-map PNGs + guidance manifest
    lora_specs/<regime>/   per-class fine-tuning job specs + adapter registry
    generated/<regime>/    synthesized images + batch manifests, per variant
    labels/<regime>/       labeling outcomes, per variant
    train_specs/<regime>/  detector job specs (one per config x seed)
    runs/<run_id>/         detector histories, predictions, mAP reports
    metrics/runs.json      recorded per-run headline metrics (percent)
    reports/               result tables + bar-chart CSV
    .stage_hashes/         idempotence bookkeeping
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .assembly import LabeledBatch, MixSpec, assemble, mix, select_subset
from .backends import (HttpOpenVocabBackend, HttpSynthesisBackend,
                       HttpTextBackend, MockCaptioner, MockDetector,
                       MockOpenVocabDetector, MockPromptGenerator,
                       MockSynthesizer)
from .bootstrap import build_real_fixture, build_sim_fixture
from .config import PipelineConfig
from .datamodel import DetectionDataset, records_by_class
from .dataset_io import load_dataset, save_dataset
from .errors import DependencyError
from .generation import (GeneratedBatch, LoraRegistry, build_lora_spec,
                         build_synthesis_spec, register_lora, synthesize)
from .guidance import build_guidance_pairs, load_guidance_set, write_guidance_set
from .labeling import (OpenVocabQuery, label_batch_open_vocab,
                       label_batch_transfer, outcome_from_json, outcome_to_json,
                       summarize_outcomes)
from .metrics import evaluate, read_detections
from .prompting import (PromptSet, caption_images, CaptionPair, default_lexicon,
                        generate_prompts, lexicon_from_text, strip_geometry)
from .reporting import RunMetrics, append_run, read_runs, write_report_files
from .taxonomy import class_slug, default_taxonomy
from .trainer import build_detector_spec, read_history, select_checkpoint
from .util import (file_sha256, ordered_parallel_map, read_json, stable_hash,
                   write_json)

logger = logging.getLogger(__name__)

STAGES = ("fixtures", "caption", "prompts", "edges", "lora_specs", "synthesize",
          "label", "assemble", "mix", "train_specs", "evaluate", "report")
VARIANTS = ("flux", "flux_cn")

# (config id, variant, train manifest key); manifests resolve in _train_combos.
_TRAIN_CONFIGS = (
    ("real_only", "none", "real"),
    ("sim_only", "none", "sim"),
    ("synthetic_only", "flux", "flux"),
    ("synthetic_only", "flux_cn", "flux_cn"),
    ("real_plus_sim", "none", "mix:real_plus_sim"),
    ("real_plus_synth", "flux", "mix:real_plus_flux"),
    ("real_plus_synth", "flux_cn", "mix:real_plus_flux_cn"),
    ("real_plus_synth_plus_sim", "flux", "mix:real_plus_flux_plus_sim"),
    ("real_plus_synth_plus_sim", "flux_cn", "mix:real_plus_flux_cn_plus_sim"),
)

_REGIME_FREE_STAGES = {"fixtures", "edges"}


@dataclass(frozen=True)
class StageResult:
    stage: str
    skipped: bool
    artifacts: tuple[Path, ...]


@dataclass(frozen=True)
class ResolvedDatasets:
    real_train: Path
    real_val: Path
    real_test: Path
    sim: Path


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = Path(config.output_root)
        self.taxonomy = default_taxonomy()

    # ------------------------------------------------------------- layout

    @property
    def regime_dir(self) -> str:
        return self.config.regime.value

    def fixtures_dir(self) -> Path:
        return self.root / "fixtures"

    def datasets_dir(self) -> Path:
        return self.root / "datasets" / self.regime_dir

    def subset_manifest(self) -> Path:
        return self.datasets_dir() / "real_train.json"

    def captions_file(self, class_id: int) -> Path:
        return self.root / "captions" / self.regime_dir / f"class_{class_id:02d}.json"

    def prompts_file(self, class_id: int, stripped: bool = False) -> Path:
        suffix = "_stripped" if stripped else ""
        return (self.root / "prompts" / self.regime_dir
                / f"class_{class_id:02d}{suffix}.json")

    def edges_dir(self) -> Path:
        return self.root / "edges"

    def lora_spec_file(self, class_id: int) -> Path:
        return (self.root / "lora_specs" / self.regime_dir
                / f"class_{class_id:02d}.json")

    def registry_file(self) -> Path:
        return self.root / f"lora_registry_{self.regime_dir}.json"

    def batch_file(self, variant: str, class_id: int) -> Path:
        return (self.root / "generated" / self.regime_dir / variant
                / f"batch_{class_id:02d}.json")

    def labels_file(self, variant: str, class_id: int) -> Path:
        return (self.root / "labels" / self.regime_dir / variant
                / f"class_{class_id:02d}.json")

    def assembled_manifest(self, variant: str) -> Path:
        return self.datasets_dir() / f"{variant}.json"

    def mix_manifest(self, name: str) -> Path:
        return self.datasets_dir() / f"mix_{name}.json"

    def train_specs_dir(self) -> Path:
        return self.root / "train_specs" / self.regime_dir

    def runs_dir(self) -> Path:
        return self.root / "runs"

    def metrics_file(self) -> Path:
        return self.root / "metrics" / "runs.json"

    def reports_dir(self) -> Path:
        return self.root / "reports"

    def resolve_datasets(self) -> ResolvedDatasets:
        cfg = self.config.datasets
        fixtures = self.fixtures_dir()
        return ResolvedDatasets(
            real_train=Path(cfg.real_train) if cfg.real_train
            else fixtures / "real_train.json",
            real_val=Path(cfg.real_val) if cfg.real_val
            else fixtures / "real_val.json",
            real_test=Path(cfg.real_test) if cfg.real_test
            else fixtures / "real_test.json",
            sim=Path(cfg.sim) if cfg.sim else fixtures / "sim" / "sim.json",
        )

    # ------------------------------------------------------------ backends

    def _captioner(self):
        endpoint = self.config.backends.captioner
        return MockCaptioner() if endpoint == "mock" else HttpTextBackend(endpoint)

    def _promptgen(self):
        endpoint = self.config.backends.promptgen
        return (MockPromptGenerator() if endpoint == "mock"
                else HttpTextBackend(endpoint))

    def _synthesizer(self, out_dir: Path):
        endpoint = self.config.backends.synthesizer
        return (MockSynthesizer(out_dir) if endpoint == "mock"
                else HttpSynthesisBackend(endpoint))

    def _annotator(self):
        endpoint = self.config.backends.annotator
        return (MockOpenVocabDetector() if endpoint == "mock"
                else HttpOpenVocabBackend(endpoint))

    def _lexicon(self):
        if self.config.lexicon_file:
            return lexicon_from_text(
                Path(self.config.lexicon_file).read_text(encoding="utf-8"))
        return default_lexicon()

    # --------------------------------------------------------- stage driver

    def run(self, stages: tuple[str, ...] = STAGES) -> list[StageResult]:
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stage(s) {unknown}; valid: {list(STAGES)}")
        return [self.run_stage(stage) for stage in stages]

    def run_stage(self, stage: str) -> StageResult:
        inputs = self._stage_input_files(stage)
        fingerprint = stable_hash({
            "stage": stage,
            "config": self.config.config_hash(),
            "inputs": {str(p): file_sha256(p) for p in inputs},
        })
        key = stage if stage in _REGIME_FREE_STAGES else f"{stage}_{self.regime_dir}"
        hash_path = self.root / ".stage_hashes" / f"{key}.json"
        if hash_path.exists():
            stored = read_json(hash_path)
            artifacts = [Path(a) for a in stored.get("artifacts", [])]
            if stored.get("hash") == fingerprint and all(a.exists() for a in artifacts):
                logger.info("stage %s unchanged, skipping", stage)
                return StageResult(stage=stage, skipped=True,
                                   artifacts=tuple(artifacts))
        artifacts = tuple(getattr(self, f"_stage_{stage}")())
        write_json(hash_path, {"hash": fingerprint,
                               "artifacts": [str(a) for a in artifacts]})
        return StageResult(stage=stage, skipped=False, artifacts=artifacts)

    def _require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise DependencyError(f"missing input {path}", required_stage=stage)
        return path

    def _stage_input_files(self, stage: str) -> list[Path]:
        paths = self.resolve_datasets()
        class_ids = self.taxonomy.class_ids()
        if stage == "fixtures":
            return []
        if stage == "caption":
            return [self._require(paths.real_train, "fixtures")]
        if stage == "prompts":
            return [self._require(self.captions_file(c), "caption")
                    for c in class_ids]
        if stage == "edges":
            return [self._require(paths.sim, "fixtures")]
        if stage == "lora_specs":
            return ([self._require(self.subset_manifest(), "caption")]
                    + [self._require(self.captions_file(c), "caption")
                       for c in class_ids])
        if stage == "synthesize":
            files = [self._require(self.registry_file(), "lora_specs"),
                     self._require(self.edges_dir() / "guidance_manifest.json",
                                   "edges")]
            for c in class_ids:
                files.append(self._require(self.prompts_file(c), "prompts"))
                files.append(self._require(self.prompts_file(c, stripped=True),
                                           "prompts"))
            return files
        if stage == "label":
            return [self._require(self.batch_file(v, c), "synthesize")
                    for v in VARIANTS for c in class_ids]
        if stage == "assemble":
            return [self._require(self.labels_file(v, c), "label")
                    for v in VARIANTS for c in class_ids]
        if stage == "mix":
            files = [self._require(self.subset_manifest(), "caption"),
                     self._require(paths.sim, "fixtures")]
            for variant in VARIANTS:
                files.append(self._require(self.assembled_manifest(variant),
                                           "assemble"))
            return files
        if stage == "train_specs":
            files = [self._require(paths.real_val, "fixtures"),
                     self._require(paths.real_test, "fixtures")]
            for _, _, key in self._train_combos():
                files.append(self._require(self._train_manifest(key), "mix"))
            return files
        if stage == "evaluate":
            specs = sorted(self.train_specs_dir().glob("*.json"))
            if not specs:
                raise DependencyError("no detector job specs found",
                                      required_stage="train_specs")
            return [self._require(paths.real_test, "fixtures")] + specs
        if stage == "report":
            return [self._require(self.metrics_file(), "evaluate")]
        raise ValueError(f"unknown stage {stage}")

    # --------------------------------------------------------------- stages

    def _stage_fixtures(self) -> list[Path]:
        if self.config.datasets.complete():
            return []
        fixtures = self.fixtures_dir()
        real_paths = build_real_fixture(fixtures, self.taxonomy,
                                        seed=self.config.subset_seed)
        sim_path = build_sim_fixture(fixtures / "sim", self.taxonomy,
                                     per_class=self.config.images_per_class,
                                     seed=self.config.subset_seed)
        return [real_paths["train"], real_paths["val"], real_paths["test"],
                sim_path]

    def _stage_caption(self) -> list[Path]:
        paths = self.resolve_datasets()
        train = load_dataset(paths.real_train)
        subset = select_subset(train, self.config.regime.pairs_required,
                               self.config.subset_seed)
        subset = subset.with_meta(regime=self.regime_dir,
                                  config_hash=self.config.config_hash())
        save_dataset(subset, self.subset_manifest())

        grouped = records_by_class(subset.records)
        captioner = self._captioner()

        def caption_class(cls) -> Path:
            batch = caption_images(grouped.get(cls.id, []), captioner,
                                   self.taxonomy,
                                   retries=self.config.retry_limit)
            out = self.captions_file(cls.id)
            write_json(out, {
                "class_id": cls.id,
                "class_name": cls.name,
                "pairs": [{"image_id": p.image_id, "caption": p.caption,
                           "class_id": p.class_id} for p in batch.pairs],
                "rejections": [{"image_id": r.image_id, "reason": r.reason,
                                "attempts": r.attempts}
                               for r in batch.rejections],
            })
            return out

        artifacts = ordered_parallel_map(caption_class, list(self.taxonomy),
                                         self.config.workers)
        return [self.subset_manifest()] + artifacts

    def _read_caption_pairs(self, class_id: int) -> list[CaptionPair]:
        payload = read_json(self.captions_file(class_id))
        return [CaptionPair(image_id=p["image_id"], caption=p["caption"],
                            class_id=p["class_id"]) for p in payload["pairs"]]

    def _stage_prompts(self) -> list[Path]:
        llm = self._promptgen()
        lexicon = self._lexicon()

        def prompts_for_class(cls) -> list[Path]:
            pairs = self._read_caption_pairs(cls.id)
            prompt_set = generate_prompts(
                cls.id, pairs, self.config.images_per_class, llm,
                vehicle_name=cls.name)
            plain = self.prompts_file(cls.id)
            write_json(plain, {
                "class_id": cls.id,
                "prompts": list(prompt_set.prompts),
                "generation_meta": dict(prompt_set.generation_meta),
            })
            stripped = []
            dropped = 0
            for prompt in prompt_set.prompts:
                out = strip_geometry(prompt, lexicon)
                if out:
                    stripped.append(out)
                else:
                    dropped += 1
            stripped_path = self.prompts_file(cls.id, stripped=True)
            write_json(stripped_path, {
                "class_id": cls.id,
                "prompts": stripped,
                "dropped_empty": dropped,
                "generation_meta": dict(prompt_set.generation_meta),
            })
            return [plain, stripped_path]

        nested = ordered_parallel_map(prompts_for_class, list(self.taxonomy),
                                      self.config.workers)
        return [path for pair in nested for path in pair]

    def _stage_edges(self) -> list[Path]:
        paths = self.resolve_datasets()
        sim = load_dataset(paths.sim)
        result = build_guidance_pairs(sim, self.config.edge_params,
                                      root=paths.sim.parent,
                                      workers=self.config.workers)
        write_guidance_set(result.pairs, self.edges_dir())
        errors_path = self.edges_dir() / "errors.json"
        write_json(errors_path, {
            "errors": [{"image_id": e.image_id, "reason": e.reason}
                       for e in result.errors],
        })
        if result.errors:
            logger.warning("edge extraction skipped %d unreadable renders",
                           len(result.errors))
        return [self.edges_dir() / "guidance_manifest.json", errors_path]

    def _stage_lora_specs(self) -> list[Path]:
        subset = load_dataset(self.subset_manifest())
        grouped = records_by_class(subset.records)
        registry = (LoraRegistry.from_json(read_json(self.registry_file()))
                    if self.registry_file().exists() else LoraRegistry())
        artifacts = []
        for cls in self.taxonomy:
            pairs = self._read_caption_pairs(cls.id)
            spec = build_lora_spec(cls.id, pairs, self.config.regime,
                                   grouped.get(cls.id, []))
            out = self.lora_spec_file(cls.id)
            write_json(out, spec.to_json())
            artifacts.append(out)
            if self.config.backends.synthesizer == "mock":
                artifact_uri = (f"mock://lora/{self.regime_dir}/"
                                f"{class_slug(cls.name)}")
                registry = register_lora(registry, cls.id, self.config.regime,
                                         artifact_uri, spec.training_hash())
        write_json(self.registry_file(), registry.to_json())
        return artifacts + [self.registry_file()]

    def _guidance_per_class(self) -> dict[int, list]:
        pairs = load_guidance_set(self.edges_dir())
        grouped: dict[int, list] = {}
        for pair in pairs:
            grouped.setdefault(pair.class_id, []).append(pair)
        return grouped

    def _synth_seed(self, class_id: int, variant: str) -> int:
        base = self.config.seeds[0] * 1000
        return base + (500 if variant == "flux_cn" else 0) + class_id

    def _stage_synthesize(self) -> list[Path]:
        registry = LoraRegistry.from_json(read_json(self.registry_file()))
        guidance = self._guidance_per_class()

        def synth_one(job) -> Path:
            variant, cls = job
            payload = read_json(self.prompts_file(cls.id,
                                                  stripped=variant == "flux_cn"))
            prompt_set = PromptSet(class_id=cls.id,
                                   prompts=tuple(payload["prompts"]),
                                   generation_meta=payload["generation_meta"])
            pairs = guidance.get(cls.id, []) if variant == "flux_cn" else None
            spec = build_synthesis_spec(
                registry, cls.id, self.config.regime, prompt_set,
                count=self.config.images_per_class,
                seed=self._synth_seed(cls.id, variant),
                guidance=pairs,
                conditioning_strength=self.config.conditioning_strength)
            out_dir = (self.root / "generated" / self.regime_dir / variant
                       / class_slug(cls.name))
            batch = synthesize(spec, self._synthesizer(out_dir),
                               retry_limit=self.config.retry_limit)
            out = self.batch_file(variant, cls.id)
            write_json(out, batch.to_json())
            write_json(out.with_name(f"jobspec_{cls.id:02d}.json"), spec.to_json())
            return out

        jobs = [(variant, cls) for variant in VARIANTS for cls in self.taxonomy]
        return ordered_parallel_map(synth_one, jobs, self.config.workers)

    def _stage_label(self) -> list[Path]:
        guidance = self._guidance_per_class()
        annotator = self._annotator()
        query = OpenVocabQuery(phrase=self.config.label_phrase,
                               min_confidence=self.config.label_min_confidence)

        def label_one(job) -> Path:
            variant, cls = job
            batch = GeneratedBatch.from_json(
                read_json(self.batch_file(variant, cls.id)))
            if variant == "flux":
                outcomes = label_batch_open_vocab(batch, annotator, query)
            else:
                outcomes = label_batch_transfer(batch, guidance.get(cls.id, []))
            summary = summarize_outcomes(outcomes)
            out = self.labels_file(variant, cls.id)
            write_json(out, {
                "class_id": cls.id,
                "variant": variant,
                "outcomes": [outcome_to_json(o) for o in outcomes],
                "summary": {str(cid): {"accepted": s.accepted,
                                       "rejected": s.rejected,
                                       "rejection_rate": s.rejection_rate}
                            for cid, s in summary.items()},
            })
            return out

        jobs = [(variant, cls) for variant in VARIANTS for cls in self.taxonomy]
        return ordered_parallel_map(label_one, jobs, self.config.workers)

    def _stage_assemble(self) -> list[Path]:
        artifacts = []
        for variant in VARIANTS:
            labeled = []
            for cls in self.taxonomy:
                batch = GeneratedBatch.from_json(
                    read_json(self.batch_file(variant, cls.id)))
                payload = read_json(self.labels_file(variant, cls.id))
                outcomes = tuple(outcome_from_json(o)
                                 for o in payload["outcomes"])
                labeled.append(LabeledBatch(batch=batch, outcomes=outcomes))
            result = assemble(labeled, self.taxonomy, meta={
                "config_hash": self.config.config_hash(),
                "source_mix": variant,
                "regime": self.regime_dir,
                "seed": str(self.config.seeds[0]),
            })
            manifest = self.assembled_manifest(variant)
            save_dataset(result.dataset, manifest)
            rejections_path = manifest.with_name(f"{variant}_rejections.json")
            write_json(rejections_path, {
                "rejections": [{"class_id": r.class_id, "image_uri": r.image_uri,
                                "reason": r.reason} for r in result.rejections],
            })
            artifacts += [manifest, rejections_path]
        return artifacts

    def _rebased(self, manifest: Path) -> DetectionDataset:
        """Load a manifest with relative image uris rebased to absolute."""
        from dataclasses import replace as dc_replace

        dataset = load_dataset(manifest)
        records = []
        for rec in dataset.records:
            uri = Path(rec.uri)
            if not uri.is_absolute():
                rec = dc_replace(rec, uri=str(manifest.parent / uri))
            records.append(rec)
        return DetectionDataset(taxonomy=dataset.taxonomy,
                                records=tuple(records), meta=dataset.meta)

    def _mix_source_manifest(self, name: str) -> Path:
        paths = self.resolve_datasets()
        return {
            "real": self.subset_manifest(),
            "flux": self.assembled_manifest("flux"),
            "flux_cn": self.assembled_manifest("flux_cn"),
            "sim": paths.sim,
        }[name]

    def _stage_mix(self) -> list[Path]:
        artifacts = []
        for target in self.config.mixes:
            sources = tuple(
                (self._rebased(self._mix_source_manifest(source)), share)
                for source, share in zip(target.sources, target.shares))
            mixed = mix(MixSpec(sources=sources, seed=self.config.seeds[0]))
            manifest = mixed.as_dataset(meta={
                "mix_name": target.name,
                "mix_sources": ",".join(target.sources),
                "config_hash": self.config.config_hash(),
                "regime": self.regime_dir,
            })
            out = self.mix_manifest(target.name)
            save_dataset(manifest, out)
            artifacts.append(out)
        return artifacts

    def _train_manifest(self, key: str) -> Path:
        if key == "real":
            return self.subset_manifest()
        if key == "sim":
            return self.resolve_datasets().sim
        if key in ("flux", "flux_cn"):
            return self.assembled_manifest(key)
        if key.startswith("mix:"):
            return self.mix_manifest(key.removeprefix("mix:"))
        raise ValueError(f"unknown train manifest key {key}")

    def _train_combos(self) -> list[tuple[str, str, str]]:
        mix_names = {m.name for m in self.config.mixes}
        combos = []
        for config_id, variant, key in _TRAIN_CONFIGS:
            if key.startswith("mix:") and key.removeprefix("mix:") not in mix_names:
                continue
            combos.append((config_id, variant, key))
        return combos

    def _stage_train_specs(self) -> list[Path]:
        paths = self.resolve_datasets()
        artifacts = []
        for config_id, variant, key in self._train_combos():
            for seed in self.config.seeds:
                run_id = f"{config_id}__{variant}__{self.regime_dir}__s{seed}"
                spec = build_detector_spec(
                    self._train_manifest(key), paths.real_val, seed=seed,
                    run_id=run_id,
                    backend_defaults={"test_manifest": str(paths.real_test)})
                out = self.train_specs_dir() / f"{run_id}.json"
                write_json(out, spec.to_json())
                artifacts.append(out)
        return artifacts

    def _stage_evaluate(self) -> list[Path]:
        paths = self.resolve_datasets()
        test_set = load_dataset(paths.real_test)
        artifacts = []
        for spec_path in sorted(self.train_specs_dir().glob("*.json")):
            payload = read_json(spec_path)
            run_id = payload["run_id"]
            run_dir = self.runs_dir() / run_id
            if self.config.backends.detector == "mock":
                MockDetector().run(payload, run_dir)
            history_path = run_dir / "history.jsonl"
            predictions_path = run_dir / "predictions.jsonl"
            if not history_path.exists() or not predictions_path.exists():
                raise DependencyError(
                    f"run {run_id} has no history/predictions under {run_dir}",
                    required_stage="train_specs")

            epoch, checkpoint = select_checkpoint(read_history(history_path))
            write_json(run_dir / "checkpoint.json",
                       {"epoch": epoch, "checkpoint_uri": checkpoint})
            report = evaluate(test_set, read_detections(predictions_path))
            write_json(run_dir / "map_report.json", report.to_json())

            config_id, variant, regime, seed_tag = run_id.split("__")
            append_run(RunMetrics(
                config=config_id, variant=variant, seed=int(seed_tag[1:]),
                map50=report.map50 * 100.0, map5095=report.map5095 * 100.0,
                regime=regime), self.metrics_file())
            artifacts.append(run_dir / "map_report.json")
        artifacts.append(self.metrics_file())
        return artifacts

    def _stage_report(self) -> list[Path]:
        runs = read_runs(self.metrics_file())
        paths = write_report_files(runs, self.reports_dir())
        return list(paths.values())
