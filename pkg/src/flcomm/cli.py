"""Batch experiment CLI.

    flc run --config cfg.json [--out DIR] [--seed N]
    flc compare RUN_DIR... [--target-acc F] [--out DIR]
    flc validate --config cfg.json
    flc gen-data --spec spec.json [--out FILE.npz]

Environment: FLC_DATA_DIR roots the MNIST IDX files, FLC_THREADS sets the
number of parallel seed cells.
"""

import json
import sys
from pathlib import Path

import click
import numpy as np

from flcomm.compare import compare_runs
from flcomm.config import ConfigError, load_config, validate_config
from flcomm.data import make_blobs
from flcomm.runner import run_experiment


@click.group()
def main():
    """Communication-efficient federated learning experiment driver."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--out", "out_dir", default=None, help="Output directory (default: config out_dir).")
@click.option("--seed", type=int, default=None, help="Run a single seed instead of the config's list.")
def run(config_path, out_dir, seed):
    """Run one experiment config (all its seeds) into a run directory."""
    try:
        cfg = load_config(config_path)
    except ConfigError as e:
        raise click.ClickException(str(e))
    out = out_dir if out_dir is not None else cfg["out_dir"]
    seeds = [seed] if seed is not None else None
    manifest = run_experiment(cfg, out, seeds=seeds)
    click.echo(f"wrote {manifest}")


@main.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--target-acc", type=float, default=None,
              help="Report rounds needed to reach this mean test accuracy.")
@click.option("--out", "out_dir", default="compare", help="Comparison output directory.")
def compare(run_dirs, target_acc, out_dir):
    """Compare two or more run directories (same dataset and partition)."""
    try:
        summary = compare_runs(run_dirs, out_dir, target_acc=target_acc)
    except ConfigError as e:
        raise click.ClickException(str(e))
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    click.echo(f"comparison artifacts in {out_dir}/")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
def validate(config_path):
    """Validate a config and print it fully resolved."""
    try:
        cfg = load_config(config_path)
    except ConfigError as e:
        click.echo(f"invalid: {e}", err=True)
        sys.exit(1)
    click.echo(json.dumps(cfg, indent=2, sort_keys=True))


@main.command("gen-data")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=False))
@click.option("--out", "out_path", default="dataset.npz", help="Output .npz path.")
def gen_data(spec_path, out_path):
    """Materialize a synthetic blob dataset described by a JSON spec."""
    path = Path(spec_path)
    if not path.exists():
        raise click.ClickException(f"spec file not found: {path}")
    with open(path) as f:
        spec = json.load(f)
    try:
        cfg = validate_config({"scheme": "fedavg", "dataset": {"kind": "synthetic", **{
            k: v for k, v in spec.items() if k != "seed"}}})
    except ConfigError as e:
        raise click.ClickException(str(e))
    ds = cfg["dataset"]
    seed = int(spec.get("seed", 0))
    rng = np.random.default_rng(seed)
    x_train, y_train, x_test, y_test = make_blobs(
        ds["classes"], ds["features"], ds["samples"], ds["test_samples"],
        ds["spread"], rng, center_scale=ds["center_scale"],
    )
    np.savez(out_path, x_train=x_train, y_train=y_train,
             x_test=x_test, y_test=y_test,
             meta=json.dumps({**ds, "seed": seed}, sort_keys=True))
    click.echo(f"wrote {out_path}: train {x_train.shape}, test {x_test.shape}")


if __name__ == "__main__":
    main()
