"""
fairprobe command line.

    fairprobe [--config FILE] [--log-level LEVEL] [--threads N] [--seed N] [--strict] COMMAND ...

Every FairProbeError exits with status 2 and writes its JSON document as the
last line of stderr.
"""

import functools
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import click
import numpy as np

from . import __version__
from .config import THREADS_ENV_VAR, ToolkitConfig, load_config
from .core_model import empirical_confusion
from .errors import FairProbeError, MalformedDocument
from .estimator import correct_rates
from .formats import (
    provenance,
    read_confusion,
    read_embeddings,
    read_head_document,
    read_label_table,
    read_labels,
    read_prior,
    read_sim_configs,
    read_taxonomy,
    read_trials,
    sha256_file,
    write_audit_report,
    write_confusion,
    write_json,
    write_labels,
    write_predictions,
    write_sim_reports,
    write_table,
)
from .probing import (
    HeadKind,
    balanced_subset,
    derive_identity_labels,
    head_from_document,
    head_to_document,
    knn_label,
    predict,
    train_head,
)
from .report import build_audit_report, robustness_block
from .simulator import SimTolerances, sweep

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR']
USAGE_ERROR = 2

existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
output_file = click.Path(dir_okay=False, path_type=Path)


@dataclass
class CliState:
    config: ToolkitConfig
    threads: int
    seed: Optional[int]
    strict: bool


def handle_errors(command):
    """Turn toolkit errors into exit status 2 with the error document on stderr"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except FairProbeError as e:
            logger.error(f"{e.code}: {e}")
            click.echo(json.dumps(e.to_dict(), sort_keys=True, default=str), err=True)
            click.get_current_context().exit(USAGE_ERROR)
    return wrapper


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT,
                        stream=sys.stderr, force=True)


@click.group()
@click.version_option(__version__, prog_name='fairprobe')
@click.option('--config', 'config_path', type=existing_file, default=None,
              help='JSON configuration merged over the packaged defaults.')
@click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None)
@click.option('--threads', type=click.IntRange(min=1), envvar=THREADS_ENV_VAR, default=None,
              help=f'Worker threads for simulations (env {THREADS_ENV_VAR}).')
@click.option('--seed', type=click.IntRange(min=0), default=None, help='Seed for every random draw.')
@click.option('--strict', is_flag=True, help='Treat undefined groups as errors.')
@click.pass_context
def cli(ctx, config_path, log_level, threads, seed, strict):
    """Audit demographic attribute inference: metrics, noisy-group estimators, probing heads."""
    try:
        config = load_config(config_path)
    except FairProbeError as e:
        click.echo(json.dumps(e.to_dict(), sort_keys=True, default=str), err=True)
        ctx.exit(USAGE_ERROR)
    _setup_logging(log_level or config.logging.level)
    ctx.obj = CliState(config=config, threads=threads or config.simulation.threads, seed=seed, strict=strict)


# -- audit --------------------------------------------------------------------

def _inputs(**paths) -> dict:
    return {name: path for name, path in paths.items() if path is not None}


@cli.command()
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--labels', 'labels_path', type=existing_file, required=True,
              help='CSV: image_id, identity_id, true_segment[, predicted_segment].')
@click.option('--preds', 'preds_path', type=existing_file, default=None,
              help='CSV: image_id, predicted_segment (overrides predictions in --labels).')
@click.option('--trials', 'trials_path', type=existing_file, default=None)
@click.option('--confusion', 'confusion_path', type=existing_file, default=None)
@click.option('--prior', 'prior_path', type=existing_file, default=None)
@click.option('--min-images', type=click.IntRange(min=1), default=None)
@click.option('--scale', type=click.Choice(['percent', 'unit']), default=None,
              help='Accuracies, DoB and parity differences in percentage points or unit fractions.')
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def audit(state: CliState, taxonomy_path, labels_path, preds_path, trials_path, confusion_path, prior_path,
          min_images, scale, out):
    """Accuracy, fairness and robustness report for a labelled prediction table."""
    taxonomy = read_taxonomy(taxonomy_path)
    table, _ = read_label_table(labels_path, taxonomy, preds_path)
    trials = read_trials(trials_path, taxonomy) if trials_path else None
    tolerance = state.config.validation.tolerance
    confusion = read_confusion(confusion_path, taxonomy, tolerance) if confusion_path else None
    if (trials is None) != (confusion is None):
        raise click.UsageError('--trials and --confusion must be given together')
    pi = read_prior(prior_path, tolerance) if prior_path else None

    report = build_audit_report(
        table, taxonomy,
        percent=state.config.cli.percent_scale if scale is None else scale == 'percent',
        min_images=min_images or state.config.cli.min_images_per_identity,
        trials=trials, confusion=confusion, pi=pi, strict=state.strict,
        condition_threshold=state.config.estimator.condition_threshold, tolerance=tolerance,
        provenance=provenance(_inputs(taxonomy=taxonomy_path, labels=labels_path, predictions=preds_path,
                                      trials=trials_path, confusion=confusion_path, prior=prior_path),
                              state.seed, __version__),
    )
    write_audit_report(out, report)
    logger.info(f"Audit report written to {out}")


@cli.command()
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--labels', 'labels_path', type=existing_file, required=True,
              help='CSV with image_id, identity_id and predicted_segment.')
@click.option('--preds', 'preds_path', type=existing_file, default=None)
@click.option('--min-images', type=click.IntRange(min=1), default=None)
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def robustness(state: CliState, taxonomy_path, labels_path, preds_path, min_images, out):
    """HomE, MaMA and MiMA over the identities of a prediction table."""
    taxonomy = read_taxonomy(taxonomy_path)
    table, _ = read_label_table(labels_path, taxonomy, preds_path)
    block = robustness_block(table, taxonomy, min_images or state.config.cli.min_images_per_identity)
    block['provenance'] = provenance(_inputs(taxonomy=taxonomy_path, labels=labels_path, predictions=preds_path),
                                     state.seed, __version__)
    write_json(out, block)


@cli.command()
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--labels', 'labels_path', type=existing_file, required=True)
@click.option('--preds', 'preds_path', type=existing_file, default=None)
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def confusion(state: CliState, taxonomy_path, labels_path, preds_path, out):
    """Empirical confusion matrix of predictions against true segments."""
    taxonomy = read_taxonomy(taxonomy_path)
    table, _ = read_label_table(labels_path, taxonomy, preds_path)
    write_confusion(out, empirical_confusion(table, taxonomy), taxonomy)


@cli.command()
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--trials', 'trials_path', type=existing_file, required=True,
              help='CSV: identity_id, y, g_hat[, g_true].')
@click.option('--confusion', 'confusion_path', type=existing_file, required=True)
@click.option('--prior', 'prior_path', type=existing_file, default=None,
              help='JSON {"pi": [...]}; estimated from the trials when omitted.')
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def correct(state: CliState, taxonomy_path, trials_path, confusion_path, prior_path, out):
    """Plug-in and confusion-corrected per-group rates."""
    taxonomy = read_taxonomy(taxonomy_path)
    trials = read_trials(trials_path, taxonomy)
    tolerance = state.config.validation.tolerance
    C = read_confusion(confusion_path, taxonomy, tolerance)
    pi = read_prior(prior_path, tolerance) if prior_path else None
    result = correct_rates(trials, C, pi, strict=state.strict,
                           condition_threshold=state.config.estimator.condition_threshold, tolerance=tolerance)
    result['taxonomy'] = taxonomy.to_dict()
    result['provenance'] = provenance(_inputs(taxonomy=taxonomy_path, trials=trials_path,
                                              confusion=confusion_path, prior=prior_path),
                                      state.seed, __version__)
    write_json(out, result)


# -- simulation ---------------------------------------------------------------

@cli.command()
@click.option('--config', 'sim_config_path', type=existing_file, required=True,
              help='Simulation config JSON, a list of configs, or {"configs": [...]}.')
@click.option('--out', type=output_file, required=True)
@click.option('--results', type=output_file, default=None, help='Per-(config, group) CSV for plotting.')
@click.option('--progress', is_flag=True, help='Show progress bars.')
@click.pass_obj
@handle_errors
def simulate(state: CliState, sim_config_path, out, results, progress):
    """Monte Carlo verification of the plug-in bias and the corrected estimator."""
    settings = state.config.simulation
    configs = read_sim_configs(sim_config_path, SimTolerances(se_multiplier=settings.se_multiplier,
                                                              cov_slack=settings.cov_slack,
                                                              max_dropped_fraction=settings.max_dropped_fraction))
    if state.seed is not None:
        configs = [replace(c, seed=state.seed) for c in configs]
    if state.strict:
        configs = [replace(c, tolerances=replace(c.tolerances, max_dropped_fraction=0.0)) for c in configs]
    show_progress = progress or settings.show_progress

    reports, table = sweep(configs, threads=state.threads, show_progress=show_progress)
    write_sim_reports(out, reports)
    write_table(results or out.with_suffix('.csv'), table)
    for report in reports:
        logger.info(f"'{report.config.label}': ok={report.ok}")


# -- probing ------------------------------------------------------------------

@cli.command('train-head')
@click.option('--embeddings', 'embeddings_path', type=existing_file, required=True)
@click.option('--labels', 'labels_path', type=existing_file, required=True,
              help='CSV with image_id, identity_id, true_segment.')
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--kind', type=click.Choice([k.value for k in HeadKind]), default=HeadKind.RBF.value)
@click.option('--reg', type=click.FloatRange(min=0, min_open=True), default=None)
@click.option('--class-weights', type=click.Choice(['balanced', 'none']), default='balanced')
@click.option('--per-segment', type=click.IntRange(min=1), default=None,
              help='Train on a balanced subset with this many images per segment.')
@click.option('--max-images-per-identity', type=click.IntRange(min=1), default=None)
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def train_head_command(state: CliState, embeddings_path, labels_path, taxonomy_path, kind, reg, class_weights,
                       per_segment, max_images_per_identity, out):
    """Train a one-vs-rest squared-hinge head on frozen embeddings."""
    probing = state.config.probing
    taxonomy = read_taxonomy(taxonomy_path)
    table = read_labels(labels_path, taxonomy)
    table.require_labels(true=True)
    if per_segment is not None:
        seed = state.seed if state.seed is not None else probing.seed
        table = balanced_subset(table, taxonomy, per_segment, max_images_per_identity, seed=seed)

    embeddings = read_embeddings(embeddings_path)
    position = {image_id: i for i, image_id in enumerate(embeddings.image_ids)}
    training = embeddings.align(table.image_ids)
    head = train_head(training, table.true_segments, kind,
                      class_weights=None if class_weights == 'none' else class_weights,
                      regularization=reg or probing.regularization, taxonomy=taxonomy,
                      tol=probing.tolerance, max_iter=probing.max_iterations,
                      rbf_max_samples=probing.rbf_max_samples)
    if head.support_indices is not None:
        file_rows = np.array([position[i] for i in training.image_ids], dtype=np.int64)
        head = replace(head, support_indices=file_rows[head.support_indices])
    write_json(out, head_to_document(head, str(embeddings_path), sha256_file(embeddings_path)))
    logger.info(f"Head written to {out}")


def _training_embeddings(document: dict, head_path: Path, override: Optional[Path]):
    if document.get('kind') != HeadKind.RBF.value:
        return None
    reference = document.get('embeddings') or {}
    path = override or (Path(reference['path']) if reference.get('path') else None)
    if path is None:
        raise MalformedDocument('rbf head does not name its training embeddings', file=str(head_path))
    if not path.is_absolute() and not path.exists():
        path = head_path.parent / path
    if override is None and reference.get('sha256') and sha256_file(path) != reference['sha256']:
        raise MalformedDocument('Training embeddings changed since the head was trained',
                                file=str(path), record=reference['sha256'])
    return read_embeddings(path)


@cli.command('predict')
@click.option('--head', 'head_path', type=existing_file, required=True)
@click.option('--embeddings', 'embeddings_path', type=existing_file, required=True)
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--labels', 'labels_path', type=existing_file, default=None,
              help='Label CSV supplying identity ids and true segments.')
@click.option('--training-embeddings', type=existing_file, default=None,
              help='Embeddings an rbf head was trained on (default: the path in the head file).')
@click.option('--diagnostics', type=output_file, default=None, help='JSON with tie counts.')
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def predict_command(state: CliState, head_path, embeddings_path, taxonomy_path, labels_path, training_embeddings,
                    diagnostics, out):
    """Label embeddings with a trained head."""
    taxonomy = read_taxonomy(taxonomy_path)
    document = read_head_document(head_path)
    head = head_from_document(document, _training_embeddings(document, head_path, training_embeddings))
    template = read_labels(labels_path, taxonomy) if labels_path else None
    result = predict(head, read_embeddings(embeddings_path), template)
    write_predictions(out, result.table, taxonomy)
    if diagnostics:
        write_json(diagnostics, {'images': len(result.table), 'ties': result.ties,
                                 'tie_images': [result.table.image_ids[i] for i in result.tie_rows]})


@cli.command()
@click.option('--reference-embeddings', type=existing_file, required=True)
@click.option('--reference-labels', type=existing_file, required=True,
              help='Label CSV with true_segment for every reference image.')
@click.option('--embeddings', 'query_path', type=existing_file, required=True)
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--labels', 'labels_path', type=existing_file, default=None,
              help='Label CSV supplying identity ids and true segments of the queries.')
@click.option('-k', '--k', 'k', type=click.IntRange(min=1), default=None)
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def knn(state: CliState, reference_embeddings, reference_labels, query_path, taxonomy_path, labels_path, k, out):
    """Nearest-neighbour labelling of query embeddings."""
    taxonomy = read_taxonomy(taxonomy_path)
    references = read_labels(reference_labels, taxonomy)
    references.require_labels(true=True)
    reference = read_embeddings(reference_embeddings).align(references.image_ids)
    template = read_labels(labels_path, taxonomy) if labels_path else None
    result = knn_label(read_embeddings(query_path), reference, references.true_segments,
                       k=k or state.config.probing.knn_k, num_segments=taxonomy.K, template=template)
    write_predictions(out, result.table, taxonomy)


@cli.command('derive-labels')
@click.option('--taxonomy', 'taxonomy_path', type=existing_file, required=True)
@click.option('--labels', 'labels_path', type=existing_file, required=True)
@click.option('--preds', 'preds_path', type=existing_file, default=None)
@click.option('--votes', type=output_file, default=None, help='JSON with per-identity votes.')
@click.option('--out', type=output_file, required=True)
@click.pass_obj
@handle_errors
def derive_labels(state: CliState, taxonomy_path, labels_path, preds_path, votes, out):
    """Set true segments to each identity's majority-vote prediction."""
    taxonomy = read_taxonomy(taxonomy_path)
    table, _ = read_label_table(labels_path, taxonomy, preds_path)
    labelled, identity_votes = derive_identity_labels(table)
    write_labels(out, labelled, taxonomy)
    if votes:
        write_json(votes, {identity: {'label': taxonomy.name_of(v.label), 'fraction': v.fraction, 'tie': v.tie}
                           for identity, v in identity_votes.items()})


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Run the CLI in-process and return its exit status"""
    try:
        result = cli.main(args=argv, prog_name='fairprobe', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo('Aborted!', err=True)
        return 1
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == '__main__':
    main()
