"""Cross-run comparison: aligned per-round tables, figures, and
rounds-to-target-accuracy summaries.

Runs must share dataset and partition settings. Seeds within a run are
aggregated as mean with a min/max band. The table carries, per run,
accuracy/loss/cumulative-bit columns plus the accuracy difference against
the first run; figures are deterministic SVG.
"""

import csv
import json
from pathlib import Path

import numpy as np

from flcomm.config import ConfigError
from flcomm.metrics import read_metrics_csv
from flcomm.plots import line_band_figure


class RunData:
    def __init__(self, directory):
        self.directory = Path(directory)
        manifest_path = self.directory / "manifest.json"
        if not manifest_path.exists():
            raise ConfigError(f"no manifest.json under {self.directory}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        self.config = self.manifest["config"]
        self.seed_columns = []
        for name in self.manifest["metrics_csvs"]:
            self.seed_columns.append(read_metrics_csv(self.directory / name))
        if not self.seed_columns:
            raise ConfigError(f"no metrics CSVs listed in {manifest_path}")
        self.rounds = min(len(c["round"]) for c in self.seed_columns) - 1

    def stack(self, column: str) -> np.ndarray:
        """(seeds, rounds+1) array truncated to the shortest seed."""
        n = self.rounds + 1
        return np.array([c[column][:n] for c in self.seed_columns])

    def band(self, column: str):
        data = self.stack(column)
        return data.mean(axis=0), data.min(axis=0), data.max(axis=0)


def _labels(dirs) -> list[str]:
    labels = []
    for d in dirs:
        base = Path(d).name or str(d)
        label = base
        k = 2
        while label in labels:
            label = f"{base}#{k}"
            k += 1
        labels.append(label)
    return labels


def rounds_to_target(acc_mean: np.ndarray, target: float):
    hits = np.flatnonzero(acc_mean >= target)
    return int(hits[0]) if hits.size else None


def compare_runs(run_dirs, out_dir, target_acc: float | None = None) -> dict:
    """Build comparison artifacts; returns the summary dict."""
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    runs = [RunData(d) for d in run_dirs]
    base = runs[0]
    for other in runs[1:]:
        if other.config["dataset"] != base.config["dataset"] or \
                other.config["partition"] != base.config["partition"]:
            raise ConfigError(
                f"mismatched datasets: {other.directory} vs {base.directory}"
            )

    labels = _labels(run_dirs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_rounds = min(r.rounds for r in runs)
    rounds = np.arange(n_rounds + 1)

    bands = {
        label: {col: tuple(v[: n_rounds + 1] for v in run.band(col))
                for col in ("test_acc", "test_loss", "bits_cum")}
        for label, run in zip(labels, runs)
    }

    header = ["round"]
    for label in labels:
        header += [f"{label}_acc_mean", f"{label}_acc_min", f"{label}_acc_max",
                   f"{label}_loss_mean", f"{label}_bits_mean", f"{label}_acc_diff"]
    base_acc = bands[labels[0]]["test_acc"][0]
    with open(out / "comparison.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i in range(n_rounds + 1):
            row = [str(i)]
            for label in labels:
                acc_mean, acc_lo, acc_hi = bands[label]["test_acc"]
                loss_mean = bands[label]["test_loss"][0]
                bits_mean = bands[label]["bits_cum"][0]
                row += [repr(float(acc_mean[i])), repr(float(acc_lo[i])),
                        repr(float(acc_hi[i])), repr(float(loss_mean[i])),
                        repr(float(bits_mean[i])),
                        repr(float(acc_mean[i] - base_acc[i]))]
            writer.writerow(row)

    for column, ylabel, fname in (
        ("test_acc", "test accuracy", "accuracy.svg"),
        ("test_loss", "test loss", "loss.svg"),
        ("bits_cum", "cumulative uplink bits", "bits.svg"),
    ):
        series = {label: bands[label][column] for label in labels}
        line_band_figure(out / fname, rounds, series, "round", ylabel,
                         f"{ylabel} vs round")

    summary: dict = {"runs": {}, "rounds": n_rounds, "target_acc": target_acc}
    for label in labels:
        acc_mean = bands[label]["test_acc"][0]
        entry = {
            "final_acc_mean": float(acc_mean[-1]),
            "final_loss_mean": float(bands[label]["test_loss"][0][-1]),
            "final_bits_mean": float(bands[label]["bits_cum"][0][-1]),
        }
        if target_acc is not None:
            entry["rounds_to_target"] = rounds_to_target(acc_mean, target_acc)
        summary["runs"][label] = entry
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary
