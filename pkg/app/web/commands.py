import json
import logging
from pathlib import Path

import click
from flask import Blueprint, current_app

from app.config import seed_override
from app.core import (
    compare_configs,
    evaluate,
    generate_dataset,
    load_pipeline,
    resolve_params,
    run_component_ablation,
    run_sampling_sweep,
    train_run,
)
from app.domain.ablation import render_reports
from app.domain.features import sample_emotion_track
from app.domain.metrics import score_corpus
from app.domain.settings import DatasetSpec
from app.errors import ConfigurationError, EafException
from app.extensions import db
from app.models.run_repository import SqlAlchemyRunRepository
from app.models.setting_repository import SqlAlchemySettingRepository
from app.utils.serialization import read_feature_file, read_sidecar

commands_bp = Blueprint("commands", __name__, cli_group="eaf")

log = logging.getLogger("commands")


def _defaults():
    return SqlAlchemySettingRepository(db).get_hyperparameters()


def _parse_seeds(value):
    if not value:
        return None
    try:
        return [int(s) for s in value.split(",") if s.strip()]
    except ValueError as e:
        raise click.BadParameter(f"Seeds must be comma separated integers, got '{value}'") from e


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigurationError(f"Cannot read {path}: {e}", details={"path": str(path)}) from e


@commands_bp.cli.command("generate")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), help="JSON dataset spec")
@click.option("--seed", type=int, default=None, help="Dataset seed (EAF_SEED overrides)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def generate_command(spec_path, seed, out_dir):
    """Write the synthetic ambiguity dataset."""
    try:
        spec = DatasetSpec.from_mapping(json.loads(Path(spec_path).read_text())) if spec_path else DatasetSpec()
        env_seed = seed_override()
        seed = env_seed if env_seed is not None else (seed or 0)
        manifest = generate_dataset(spec, seed, out_dir)
    except (EafException, json.JSONDecodeError) as e:
        raise click.ClickException(str(e)) from e
    click.echo(f"{len(manifest['samples'])} samples, manifest {manifest['manifest_hash']}")


@commands_bp.cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON run config")
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "runs_dir", type=click.Path(file_okay=False), default=None)
def train_command(config_path, data_dir, runs_dir):
    """Train one model and store its run report."""
    try:
        params = resolve_params(config_path, defaults=_defaults())
        report = train_run(
            params,
            data_dir or current_app.config["DATA_DIR"],
            runs_dir or current_app.config["RUNS_DIR"],
        )
        SqlAlchemyRunRepository(db).save(report)
    except EafException as e:
        raise click.ClickException(str(e)) from e
    click.echo(render_reports([report]))
    click.echo(f"config hash {report.config_hash}")


@commands_bp.cli.command("translate")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--features", "prefix", required=True, help="Prefix of <prefix>.{spatial,motion,emotion}.eaff")
@click.option("--beam", type=int, default=5, show_default=True)
def translate_command(ckpt, prefix, beam):
    """Beam-decode one sample from its three feature files."""
    try:
        pipeline = load_pipeline(ckpt)
        params = pipeline.params
        spatial = read_feature_file(f"{prefix}.spatial.eaff")
        motion = read_feature_file(f"{prefix}.motion.eaff")
        emotion = read_feature_file(f"{prefix}.emotion.eaff")
        # Full-rate tracks (one row per frame, NaN on missed faces) are re-sampled
        if not bool(emotion.valid.all()) or len(emotion) == len(spatial):
            emotion = sample_emotion_track(emotion.data, params.emotion_interval, params.sampling)
        hypothesis = pipeline.translate(spatial.data, motion.data, emotion.data, width=beam)
        provenance = read_sidecar(f"{prefix}.emotion.eaff")
    except EafException as e:
        raise click.ClickException(str(e)) from e
    click.echo(pipeline.vocab.decode(hypothesis.tokens))
    if "label" in provenance:
        click.echo(f"generated from class {provenance['label']} (seed {provenance.get('seed')})", err=True)
    if hypothesis.truncated:
        click.echo("(no end of sentence within max length)", err=True)


@commands_bp.cli.command("evaluate")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--beam", type=int, default=5, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def evaluate_command(ckpt, data_dir, split, beam, out_path):
    """Score a checkpoint on a dataset split."""
    try:
        metrics, report = evaluate(ckpt, data_dir, split, beam, out_path)
    except EafException as e:
        raise click.ClickException(str(e)) from e
    click.echo(metrics.render_table())
    click.echo(f"disambiguation accuracy {100 * report.disambiguation_accuracy:.1f}%")


@commands_bp.cli.command("ablate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True)
@click.option("--out", "runs_dir", type=click.Path(file_okay=False), default=None)
@click.option("--seeds", default=None, help="Comma separated seeds, e.g. 0,1,2,3,4")
@click.option("--workers", type=int, default=1, show_default=True)
def ablate_command(config_path, data_dir, runs_dir, seeds, workers):
    """Train the Emo / EAF / MA component grid."""
    try:
        params = resolve_params(config_path, defaults=_defaults())
        reports = run_component_ablation(
            params,
            data_dir,
            runs_dir or current_app.config["RUNS_DIR"],
            seeds=_parse_seeds(seeds),
            workers=workers,
            repository=SqlAlchemyRunRepository(db),
        )
    except EafException as e:
        raise click.ClickException(str(e)) from e
    click.echo(render_reports(reports))
    full = {"use_emotion": True, "use_eaf": True, "use_alignment": True}
    for label, worse in (
        ("no EAF", {"use_emotion": True, "use_eaf": False, "use_alignment": True}),
        ("no Emo", {"use_emotion": False, "use_eaf": False, "use_alignment": True}),
    ):
        comparison = compare_configs(reports, full, worse)
        click.echo(f"full vs {label}: gaps {comparison['gaps']} sign test p={comparison['p_value']:.4f}")


@commands_bp.cli.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True)
@click.option("--out", "runs_dir", type=click.Path(file_okay=False), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
def sweep_command(config_path, data_dir, runs_dir, workers):
    """Train every emotion sampling strategy and interval."""
    try:
        params = resolve_params(config_path, defaults=_defaults())
        reports = run_sampling_sweep(
            params,
            data_dir,
            runs_dir or current_app.config["RUNS_DIR"],
            workers=workers,
            repository=SqlAlchemyRunRepository(db),
        )
    except EafException as e:
        raise click.ClickException(str(e)) from e
    click.echo(render_reports(reports))


@commands_bp.cli.command("score")
@click.option("--hyp", "hyp_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option(
    "--ref",
    "ref_paths",
    type=click.Path(exists=True, dir_okay=False),
    multiple=True,
    required=True,
    help="Reference file; repeat for multiple references",
)
@click.option("--mode", type=click.Choice(["german", "chinese"]), default="german", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def score_command(hyp_path, ref_paths, mode, out_path):
    """Corpus BLEU-1..4 and ROUGE-L, one sentence per line."""
    try:
        hypotheses = _read_lines(hyp_path)
        columns = [_read_lines(p) for p in ref_paths]
        if any(len(c) != len(hypotheses) for c in columns):
            raise ConfigurationError("Every reference file needs one line per hypothesis")
        references = [list(refs) for refs in zip(*columns)]
        report = score_corpus(hypotheses, references, mode=mode)
    except EafException as e:
        raise click.ClickException(str(e)) from e
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    click.echo(report.render_table())
