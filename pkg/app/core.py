"""
Experiment Harness Overview:

SECTION 1: CONFIGURATION
    - Resolve hyperparameters: settings table defaults, then an optional JSON
      run config, then the EAF_SEED environment override.

SECTION 2: DATASET GENERATION
    - Write the synthetic ambiguity dataset (feature files + manifest).

SECTION 3: TRAINING RUN
    - Load the train split, re-sample the emotion track for the run's
      sampling strategy and interval, train, log losses as JSON lines,
      write the checkpoint.

SECTION 4: EVALUATION
    - Beam-decode a split, score BLEU/ROUGE-L and disambiguating-token
      accuracy, write report.json.

SECTION 5: ABLATION AND SAMPLING SWEEP
    - Train one model per (config, seed), optionally in worker processes,
      merge reports by config hash and persist them.
      Branch: component grid (Emo / EAF / MA rows) or sampling sweep.

SECTION 6: SCHEDULED RUNS
    - One-off APScheduler job that runs a single configuration inside the
      application context and stores the report.
"""

import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from app.config import seed_override
from app.domain.ablation import (
    COMPONENT_GRID,
    AblationConfig,
    RunReport,
    render_reports,
    run_config_hash,
    sampling_grid,
    sign_test,
)
from app.domain.dataset import AmbiguityDataset, disambiguated, generate_ambiguity_dataset
from app.domain.metrics import MetricReport, score_corpus
from app.domain.settings import DatasetSpec, HyperParameters
from app.domain.training import SignTranslationPipeline, parameter_counts, train_epochs
from app.domain.translator import PromptTemplate, Vocabulary
from app.errors import CheckpointError, ConfigurationError, DatasetError
from app.extensions import db, scheduler
from app.models.run_repository import SqlAlchemyRunRepository
from app.models.setting_repository import SqlAlchemySettingRepository
from app.utils.serialization import load_checkpoint, save_checkpoint

log = logging.getLogger("core")

CHECKPOINT_NAME = "checkpoint.eafckpt"
LOSSES_NAME = "losses.jsonl"
REPORT_NAME = "report.json"


# --------------------------------------------------------------------
# SECTION 1: CONFIGURATION
# --------------------------------------------------------------------
def resolve_params(config_path=None, defaults: HyperParameters = None) -> HyperParameters:
    params = defaults or HyperParameters()
    if config_path is not None:
        try:
            overrides = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"Cannot read run config {config_path}: {e}") from e
        params = HyperParameters.from_mapping(params.to_dict() | overrides)
    seed = seed_override()
    if seed is not None:
        log.info(f"EAF_SEED overrides seed {params.seed} -> {seed}")
        params = params.replace(seed=seed)
    return params


# --------------------------------------------------------------------
# SECTION 2: DATASET GENERATION
# --------------------------------------------------------------------
def generate_dataset(spec: DatasetSpec, seed: int, out_dir) -> dict:
    log.info(f"Generating ambiguity dataset: {spec.n_pairs} pairs, T={spec.frames}, margin={spec.margin}")
    return generate_ambiguity_dataset(spec, seed, out_dir)


# --------------------------------------------------------------------
# SECTION 3: TRAINING RUN
# --------------------------------------------------------------------
def checkpoint_config(pipeline: SignTranslationPipeline) -> dict:
    return {
        "params": pipeline.params.to_dict(),
        "vocab": pipeline.vocab.to_dict(),
        "template": {
            "instruction": pipeline.template.instruction,
            "exemplars": [list(p) for p in pipeline.template.exemplars],
        },
        "feature_dims": list(pipeline.feature_dims),
    }


def save_pipeline(pipeline: SignTranslationPipeline, path) -> Path:
    return save_checkpoint(path, pipeline.state_dict(), checkpoint_config(pipeline))


def load_pipeline(path) -> SignTranslationPipeline:
    state, config = load_checkpoint(path)
    try:
        pipeline = SignTranslationPipeline(
            HyperParameters.from_mapping(config["params"]),
            Vocabulary.from_dict(config["vocab"]),
            PromptTemplate(
                config["template"]["instruction"],
                [tuple(p) for p in config["template"]["exemplars"]],
            ),
            config["feature_dims"],
        )
        pipeline.load_state_dict(state, strict=True)
    except (KeyError, RuntimeError) as e:
        raise CheckpointError(f"Checkpoint {path} does not match the model: {e}", details={"path": str(path)}) from e
    pipeline.eval()
    return pipeline


def train_run(params: HyperParameters, data_dir, runs_dir, config: AblationConfig = None) -> RunReport:
    start = time.perf_counter()
    if config is not None:
        params = config.apply_to(params)
    dataset = AmbiguityDataset(data_dir)
    config_hash = run_config_hash(params, dataset.manifest_hash)
    run_dir = Path(runs_dir) / config_hash
    run_dir.mkdir(parents=True, exist_ok=True)
    name = config.name if config is not None else "single run"
    log.info(f"Starting run {config_hash} ({name}, seed {params.seed})")

    vocab = dataset.vocabulary()
    examples = dataset.examples("train", vocab, params.emotion_interval, params.sampling)
    pipeline = SignTranslationPipeline(params, vocab, dataset.template, dataset.feature_dims())
    total, trainable = parameter_counts(pipeline)

    losses_path = run_dir / LOSSES_NAME
    with losses_path.open("w") as losses_file:
        def on_report(report):
            losses_file.write(report.to_json() + "\n")

        history = train_epochs(pipeline, examples, on_report=on_report)
    save_pipeline(pipeline, run_dir / CHECKPOINT_NAME)

    result = evaluate_pipeline(pipeline, dataset, "test")
    report = RunReport(
        config_hash=config_hash,
        name=name,
        config=params.to_dict(),
        seed=params.seed,
        epoch_losses=history,
        metrics=result.metrics.to_dict(),
        disambiguation_accuracy=result.accuracy,
        wall_clock=time.perf_counter() - start,
        trainable_parameters=trainable,
        total_parameters=total,
    )
    (run_dir / REPORT_NAME).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    log.info(
        f"Run {config_hash} finished in {report.wall_clock:.1f}s: "
        f"BLEU-4={100 * result.metrics.bleu4:.2f} accuracy={100 * result.accuracy:.1f}%"
    )
    return report


# --------------------------------------------------------------------
# SECTION 4: EVALUATION
# --------------------------------------------------------------------
@dataclass
class EvaluationResult:
    metrics: MetricReport
    accuracy: float
    hypotheses: list
    truncated: int


def evaluate_pipeline(pipeline: SignTranslationPipeline, dataset: AmbiguityDataset, split="test", beam_width=None) -> EvaluationResult:
    params = pipeline.params
    examples = dataset.examples(split, pipeline.vocab, params.emotion_interval, params.sampling)
    if not examples:
        raise DatasetError(f"Split '{split}' is empty")
    hypotheses, references, hits, truncated = [], [], 0, 0
    for example in examples:
        hypothesis = pipeline.translate(
            example.spatial, example.motion, example.emotion, width=beam_width or params.beam_width
        )
        text = pipeline.vocab.decode(hypothesis.tokens)
        truncated += hypothesis.truncated
        hypotheses.append(text)
        references.append(example.target_text)
        hits += disambiguated(text, dataset.classes[example.label])
    metrics = score_corpus(hypotheses, references, mode="german")
    accuracy = hits / len(examples)
    log.info(f"Evaluated {len(examples)} {split} samples, {truncated} truncated, accuracy {100 * accuracy:.1f}%")
    return EvaluationResult(metrics, accuracy, hypotheses, truncated)


def evaluate(ckpt_path, data_dir, split="test", beam_width=5, out_path=None) -> tuple[MetricReport, RunReport]:
    start = time.perf_counter()
    pipeline = load_pipeline(ckpt_path)
    dataset = AmbiguityDataset(data_dir)
    result = evaluate_pipeline(pipeline, dataset, split, beam_width)
    report = RunReport(
        config_hash=run_config_hash(pipeline.params, dataset.manifest_hash),
        name=f"evaluate {split}",
        config=pipeline.params.to_dict(),
        seed=pipeline.params.seed,
        metrics=result.metrics.to_dict(),
        disambiguation_accuracy=result.accuracy,
        wall_clock=time.perf_counter() - start,
        status="evaluated",
    )
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return result.metrics, report


# --------------------------------------------------------------------
# SECTION 5: ABLATION AND SAMPLING SWEEP
# --------------------------------------------------------------------
def _train_worker(job) -> dict:
    params, data_dir, runs_dir, config = job
    logging.basicConfig(level=logging.INFO)
    return train_run(params, data_dir, runs_dir, config).to_dict()


def run_ablation(grid, params: HyperParameters, data_dir, runs_dir, seeds=None, workers=1, repository=None) -> list[RunReport]:
    if not grid:
        raise ConfigurationError("Ablation grid is empty")
    seeds = list(seeds) if seeds else [params.seed]
    jobs = [(params.replace(seed=s), str(data_dir), str(runs_dir), config) for config in grid for s in seeds]
    log.info(f"Running {len(jobs)} training runs ({len(grid)} configs x {len(seeds)} seeds) on {workers} worker(s)")

    if workers > 1:
        # fork is unsafe once torch has started its thread pools
        with ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("spawn")) as pool:
            reports = [RunReport.from_dict(r) for r in pool.map(_train_worker, jobs)]
    else:
        reports = [train_run(*job) for job in jobs]

    reports.sort(key=lambda r: r.config_hash)
    for report in reports:
        log.info(f"{report.name} seed {report.seed}: accuracy {100 * report.disambiguation_accuracy:.1f}%")
        if repository is not None:
            repository.save(report)
    log.info("\n" + render_reports(reports))
    return reports


def run_component_ablation(params, data_dir, runs_dir, seeds=None, workers=1, repository=None) -> list[RunReport]:
    grid = [
        AblationConfig(
            use_emotion=c.use_emotion,
            use_eaf=c.use_eaf,
            use_alignment=c.use_alignment,
            sampling=params.sampling,
            st=params.emotion_interval,
            use_context=params.use_context,
            label_smoothing=params.label_smoothing,
        )
        for c in COMPONENT_GRID
    ]
    return run_ablation(grid, params, data_dir, runs_dir, seeds, workers, repository)


def run_sampling_sweep(params, data_dir, runs_dir, workers=1, repository=None) -> list[RunReport]:
    return run_ablation(sampling_grid(), params, data_dir, runs_dir, None, workers, repository)


def compare_configs(reports: list[RunReport], better: dict, worse: dict) -> dict:
    """Per-seed accuracy gaps between two configs (matched on their ablation toggles)."""

    def accuracies(flags):
        return {
            r.seed: r.disambiguation_accuracy
            for r in reports
            if all(r.config.get(k) == v for k, v in flags.items())
        }

    high, low = accuracies(better), accuracies(worse)
    seeds = sorted(set(high) & set(low))
    gaps = [high[s] - low[s] for s in seeds]
    return {"seeds": seeds, "gaps": gaps, "p_value": sign_test(gaps)}


# --------------------------------------------------------------------
# SECTION 6: SCHEDULED RUNS
# --------------------------------------------------------------------
def scheduled_training_run(config: dict, data_dir: str, runs_dir: str) -> None:
    with scheduler.app.app_context():
        repository = SqlAlchemyRunRepository(db)
        try:
            params = SqlAlchemySettingRepository(db).get_hyperparameters()
            report = train_run(params, data_dir, runs_dir, AblationConfig.from_mapping(config))
            repository.save(report)
        except Exception as e:
            log.error("Scheduled training run failed", exc_info=e)
