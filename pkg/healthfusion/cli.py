"""Command line interface of healthfusion."""
import doctest
import importlib
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional
import click

from healthfusion.config import DataConfig, ModelConfig, check_consistency, parse_configs
from healthfusion.errors import ConfigError, HealthFusionError
from healthfusion.pipeline import run_pipeline
from healthfusion.synthetic import write_synthetic_bundle

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s [%(stage)s] %(name)s: %(message)s"
MODULES = (
    "errors", "tabular", "integration", "ajive", "gfa", "cohort", "downstream",
    "clustering", "evaluation", "config", "synthetic", "pipeline", "cli",
)


class StageFilter(logging.Filter):
    """Give records logged outside a pipeline stage the stage ``-``.

    Examples:
        >>> record = logging.LogRecord("x", logging.INFO, __file__, 1, "hi", None, None)
        >>> StageFilter().filter(record), record.stage
        (True, '-')
    """

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "stage"):
            record.stage = "-"
        return True


def configure_logging(verbosity: int) -> None:
    """One stderr handler; -v for INFO, -vv for DEBUG."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.addFilter(StageFilter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG)


def apply_overrides(data: DataConfig, model: ModelConfig, **flags) -> tuple[DataConfig, ModelConfig]:
    """Replace config values by the flags that were given.

    Examples:
        >>> from healthfusion.config import CohortSpec, ModalitySpec
        >>> data = DataConfig((ModalitySpec("ecg", Path("ecg.csv"), "eid"),),
        ...                   CohortSpec(Path("."), "cohort.csv", "eid"))
        >>> model = ModelConfig("gfa", "logregrssm", Path("out"))
        >>> data, model = apply_overrides(data, model, cohort_path=Path("registry"), n_folds=5,
        ...                               cohort_cov=("age",), seed=None)
        >>> data.cohort.location.as_posix(), model.n_folds, model.cohort_cov, model.seed
        ('registry/cohort.csv', 5, ('age',), 0)
        >>> apply_overrides(data, model, cohort_file="other.csv", test_size=1.5)
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: test_size must lie in (0, 1), got 1.5
    """
    cohort_changes = {
        key: value for key, value in (("path", flags.pop("cohort_path", None)), ("file", flags.pop("cohort_file", None)))
        if value is not None
    }
    if cohort_changes:
        if data.cohort is None:
            raise ConfigError("--cohort-path and --cohort-file need a cohort section in the data config")
        data = replace(data, cohort=replace(data.cohort, **cohort_changes))
    if not flags.get("force"):
        flags.pop("force", None)
    model_changes = {key: value for key, value in flags.items() if value is not None and value != ()}
    if model_changes:
        model = replace(model, **model_changes)
    return data, model


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for solver details.")
def main(verbose: int):
    """Fuse tabular health modalities and model disease outcomes.

    healthfusion integrates several views of the same subjects into one
    latent representation and runs classification, survival or clustering
    on it.
    """
    configure_logging(verbose)


@main.command()
@click.option("--config-data", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="YAML data configuration.")
@click.option("--config-model", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="YAML model configuration.")
@click.option("--cohort-path", type=click.Path(path_type=Path), help="Directory of the cohort table.")
@click.option("--cohort-file", type=str, help="File name of the cohort table.")
@click.option("--end-study-date", type=str, help="Last observation date, YYYY-MM-DD.")
@click.option("--out-path", type=click.Path(path_type=Path), help="Results directory.")
@click.option("--cohort-cov", multiple=True, help="Cohort column added to the model; repeatable.")
@click.option("--latent-impute/--no-latent-impute", default=None, help="Keep subjects missing a view (gfa).")
@click.option("--compare-view-subsets/--no-compare-view-subsets", default=None,
              help="Also model every proper subset of two or more views.")
@click.option("--test-size", type=float, help="Held-out share.")
@click.option("--n-folds", type=int, help="Cross-validation folds.")
@click.option("--seed", type=int, help="Seed of every random draw.")
@click.option("--force", is_flag=True, help="Write into a non-empty results directory.")
def run(config_data: Path, config_model: Path, **flags):
    """Run integration and the downstream analysis in one go."""
    try:
        data, model = parse_configs(config_data, config_model)
        data, model = apply_overrides(data, model, **flags)
        check_consistency(data, model)
        manifest = run_pipeline(data, model)
    except HealthFusionError as error:
        logging.LoggerAdapter(logger, {"stage": error.stage or "-"}).error("%s", error.message)
        sys.exit(error.exit_code)
    click.echo(f"results in {model.out_path} ({len(manifest['files'])} files)")


@main.command("generate-synthetic")
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--n-samples", type=int, default=500, show_default=True)
@click.option("--missing-fraction", type=float, default=0.0, show_default=True,
              help="Share of subjects without the second view.")
@click.option("--seed", type=int, default=0, show_default=True)
def generate_synthetic(out_dir: Path, n_samples: int, missing_fraction: float, seed: int):
    """Write a synthetic three-view bundle with cohort, events and configs."""
    try:
        data_path = write_synthetic_bundle(out_dir, n_samples, missing_fraction=missing_fraction, seed=seed)
    except HealthFusionError as error:
        logger.error("%s", error)
        sys.exit(error.exit_code)
    click.echo(f"data config: {data_path}")


@main.command()
@click.option("--module", "only", type=click.Choice(MODULES), help="Test a single module.")
def test(only: Optional[str]):
    """run doctest."""
    failed = 0
    for name in MODULES if only is None else (only,):
        result = doctest.testmod(importlib.import_module(f"healthfusion.{name}"))
        click.echo(f"{name}: {result}")
        failed += result.failed
    if failed:
        sys.exit(1)


if __name__ == "__main__":
    main()
