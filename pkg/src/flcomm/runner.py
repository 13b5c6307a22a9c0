"""Experiment execution: one run directory per config, one CSV per seed.

Each (config, seed) cell is independent and internally deterministic, so
cells may execute in parallel (FLC_THREADS). CSVs are written atomically;
partial outputs are removed if a cell aborts. The manifest records the
fully resolved config, so re-running a manifest reproduces the CSVs
byte for byte.
"""

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from flcomm import __version__
from flcomm.baselines import FedAvgRun, QsgdRun
from flcomm.metrics import write_metrics_csv
from flcomm.runtime import FedSgdReferenceRun, ProposedRun


def make_runner(cfg: dict, seed: int, data=None):
    scheme = cfg["scheme"]
    if scheme == "proposed":
        return ProposedRun(cfg, seed, data)
    if scheme == "fedsgd-ref":
        return FedSgdReferenceRun(cfg, seed, data)
    if scheme == "fedavg":
        return FedAvgRun(cfg, seed, data, mu=0.0)
    if scheme == "fedprox":
        return FedAvgRun(cfg, seed, data, mu=cfg["fedprox"]["mu"])
    if scheme == "qsgd":
        return QsgdRun(cfg, seed, data)
    raise ValueError(f"unknown scheme '{scheme}'")


def run_cell(cfg: dict, seed: int, data=None):
    """In-process execution of one seed; returns (rows, runner)."""
    runner = make_runner(cfg, seed, data)
    return runner.run(), runner


def seed_csv_name(seed: int) -> str:
    return f"metrics_seed{seed}.csv"


def _write_atomic_csv(path: Path, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    write_metrics_csv(tmp, rows)
    os.replace(tmp, path)


def run_experiment(cfg: dict, out_dir, seeds=None) -> Path:
    """Run every seed of a config into one directory; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds) if seeds is not None else list(cfg["seeds"])
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())

    written: list[Path] = []

    def cell(seed: int) -> None:
        rows, _ = run_cell(cfg, seed)
        path = out / seed_csv_name(seed)
        _write_atomic_csv(path, rows)
        written.append(path)

    threads = max(1, int(os.environ.get("FLC_THREADS", "1")))
    try:
        if threads > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(cell, seeds))
        else:
            for seed in seeds:
                cell(seed)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise

    manifest = {
        "artifact": "flcomm",
        "version": __version__,
        "config": {**cfg, "seeds": seeds},
        "seeds": seeds,
        "metrics_csvs": [seed_csv_name(s) for s in seeds],
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    manifest_path = out / "manifest.json"
    tmp = manifest_path.with_suffix(".json.tmp")
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, manifest_path)
    return manifest_path
