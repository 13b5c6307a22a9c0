"""Experiment configuration: JSON loading, strict validation, defaults.

Validation rejects unknown keys and out-of-range values with diagnostics
naming the exact key and constraint. Validating an already-resolved config
returns it unchanged, so load -> serialize -> load is idempotent. A run
manifest wraps the resolved config with the seed and artifact version;
feeding a manifest back to the loader re-runs the identical cell.
"""

import json
import math
from pathlib import Path

SCHEMES = ("proposed", "fedavg", "qsgd", "fedprox", "fedsgd-ref")

MNIST_INPUT_DIM = 784
MNIST_CLASSES = 10


class ConfigError(ValueError):
    pass


def _require_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: must be a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(section: dict, allowed, path):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'" if path else f"unknown key '{key}'")


def _as_int(value, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {value}")
    return value


def _as_float(value, path, lo=None, lo_strict=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {value}")
    if lo_strict is not None and value <= lo_strict:
        raise ConfigError(f"{path}: must be > {lo_strict}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {value}")
    return value


def _as_bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: must be true or false, got {value!r}")
    return value


def _as_choice(value, path, options):
    if value not in options:
        raise ConfigError(f"{path}: must be one of {list(options)}, got {value!r}")
    return value


def _as_float_or_literal(value, path, literal, **float_kw):
    if value == literal:
        return value
    return _as_float(value, path, **float_kw)


def _validate_dataset(raw) -> dict:
    if isinstance(raw, str):
        raw = {"kind": raw}
    raw = _require_mapping(raw, "dataset")
    if "kind" not in raw:
        raise ConfigError("dataset.kind: required (synthetic or mnist)")
    kind = _as_choice(raw["kind"], "dataset.kind", ("synthetic", "mnist"))
    if kind == "synthetic":
        _reject_unknown(raw, {"kind", "classes", "features", "samples", "test_samples",
                              "spread", "center_scale"}, "dataset")
        out = {
            "kind": "synthetic",
            "classes": _as_int(raw.get("classes", 4), "dataset.classes", lo=2),
            "features": _as_int(raw.get("features", 20), "dataset.features", lo=1),
            "samples": _as_int(raw.get("samples", 2000), "dataset.samples", lo=2),
            "test_samples": _as_int(raw.get("test_samples", 500), "dataset.test_samples", lo=2),
            "spread": _as_float(raw.get("spread", 1.0), "dataset.spread", lo_strict=0.0),
            "center_scale": _as_float(raw.get("center_scale", 1.0), "dataset.center_scale",
                                      lo_strict=0.0),
        }
        if out["samples"] < out["classes"] or out["test_samples"] < out["classes"]:
            raise ConfigError("dataset.samples: need at least one sample per class per split")
        return out
    _reject_unknown(raw, {"kind", "train_subset", "test_subset", "path"}, "dataset")
    out = {"kind": "mnist", "path": raw.get("path")}
    for key, default in (("train_subset", 1000), ("test_subset", 1000)):
        value = raw.get(key, default)
        out[key] = None if value is None else _as_int(value, f"dataset.{key}", lo=1)
    if out["path"] is not None and not isinstance(out["path"], str):
        raise ConfigError(f"dataset.path: must be a string or null, got {out['path']!r}")
    return out


def _validate_section(raw, name, spec) -> dict:
    section = _require_mapping(raw.get(name, {}), name)
    _reject_unknown(section, set(spec), name)
    return {key: check(section.get(key, default), f"{name}.{key}")
            for key, (default, check) in spec.items()}


def validate_config(raw: dict) -> dict:
    """Resolve defaults and check every constraint; raises ConfigError."""
    raw = _require_mapping(raw, "config")
    if "artifact" in raw and "config" in raw:  # a run manifest: unwrap
        raw = _require_mapping(raw["config"], "config")

    top_keys = {"scheme", "rounds", "seeds", "out_dir", "dataset", "partition", "model",
                "server", "local", "dropout", "quantizer", "controller", "gate",
                "qsgd", "fedprox", "metrics"}
    _reject_unknown(raw, top_keys, "")
    if "scheme" not in raw:
        raise ConfigError("scheme: required")
    if "dataset" not in raw:
        raise ConfigError("dataset: required")

    cfg: dict = {
        "scheme": _as_choice(raw["scheme"], "scheme", SCHEMES),
        "rounds": _as_int(raw.get("rounds", 50), "rounds", lo=0),
        "out_dir": raw.get("out_dir", "runs"),
        "dataset": _validate_dataset(raw["dataset"]),
    }
    if not isinstance(cfg["out_dir"], str):
        raise ConfigError(f"out_dir: must be a string, got {cfg['out_dir']!r}")
    seeds = raw.get("seeds", [1])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError(f"seeds: must be a nonempty list of integers, got {seeds!r}")
    cfg["seeds"] = [_as_int(s, "seeds[]", lo=0) for s in seeds]

    cfg["partition"] = _validate_section(raw, "partition", {
        "mode": ("stratified", lambda v, p: _as_choice(v, p, ("stratified", "dirichlet"))),
        "alpha": (0.5, lambda v, p: _as_float(v, p, lo_strict=0.0)),
        "num_clients": (10, lambda v, p: _as_int(v, p, lo=1)),
    })
    cfg["model"] = _validate_section(raw, "model", {
        "hidden": (32, lambda v, p: _as_int(v, p, lo=1)),
    })
    cfg["server"] = _validate_section(raw, "server", {
        "eta": (0.1, lambda v, p: _as_float(v, p, lo_strict=0.0)),
        "aggregate": ("sum", lambda v, p: _as_choice(v, p, ("sum", "mean"))),
        "weighting": ("as_written", lambda v, p: _as_choice(v, p, ("as_written", "uniform"))),
    })
    cfg["local"] = _validate_section(raw, "local", {
        "epochs": (1, lambda v, p: _as_int(v, p, lo=1)),
        "batch_size": (32, lambda v, p: _as_int(v, p, lo=1)),
        "optimizer": ("sgd", lambda v, p: _as_choice(v, p, ("sgd", "adam"))),
        "lr": (0.1, lambda v, p: _as_float(v, p, lo_strict=0.0)),
        "adam_beta1": (0.9, lambda v, p: _as_float(v, p, lo=0.0, hi=1.0)),
        "adam_beta2": (0.999, lambda v, p: _as_float(v, p, lo=0.0, hi=1.0)),
        "adam_eps": (1e-8, lambda v, p: _as_float(v, p, lo_strict=0.0)),
    })
    cfg["dropout"] = _validate_section(raw, "dropout", {
        "enabled": (False, _as_bool),
        "c_bias": ("auto", lambda v, p: _as_float_or_literal(v, p, "auto", lo=0.0)),
        "d_target": (None, lambda v, p: None if v is None else _as_int(v, p, lo=1)),
        "layer": ("input", lambda v, p: _as_choice(v, p, ("input", "hidden"))),
    })
    cfg["quantizer"] = _validate_section(raw, "quantizer", {
        "mode": ("adaptive", lambda v, p: _as_choice(v, p, ("adaptive", "fixed", "passthrough"))),
        "b_base": (8, lambda v, p: _as_int(v, p, lo=2, hi=12)),
    })
    cfg["controller"] = _validate_section(raw, "controller", {
        "enabled": (True, _as_bool),
        "e_thresh": ("auto", lambda v, p: _as_float_or_literal(v, p, "auto", lo_strict=0.0)),
        "gamma": (2.0, lambda v, p: _as_float(v, p, lo_strict=1.0)),
        "band_eps": ("auto", lambda v, p: _as_float_or_literal(v, p, "auto", lo=0.0)),
        "window": (5, lambda v, p: _as_int(v, p, lo=1)),
        "rebase_period": (20, lambda v, p: _as_int(v, p, lo=1)),
        "v_thresh": ("auto", lambda v, p: _as_float_or_literal(v, p, "auto", lo_strict=0.0)),
        "q_init": (16.0, lambda v, p: _as_float(v, p, lo_strict=0.0)),
        "q_min": (1.0, lambda v, p: _as_float(v, p, lo_strict=0.0)),
        "q_max": (256.0, lambda v, p: _as_float(v, p, lo_strict=0.0)),
        "calib_rounds": (5, lambda v, p: _as_int(v, p, lo=1)),
    })
    cfg["gate"] = _validate_section(raw, "gate", {
        "comm_eps": ("auto:p50", lambda v, p: _as_float_or_literal(v, p, "auto:p50", lo=0.0)),
        "tau": (5, lambda v, p: _as_int(v, p, lo=1)),
    })
    cfg["qsgd"] = _validate_section(raw, "qsgd", {
        "levels": (16, lambda v, p: _as_int(v, p, lo=1)),
    })
    cfg["fedprox"] = _validate_section(raw, "fedprox", {
        "mu": (0.01, lambda v, p: _as_float(v, p, lo=0.0)),
    })
    cfg["metrics"] = _validate_section(raw, "metrics", {
        "count_reports": (False, _as_bool),
    })

    _cross_checks(cfg)
    return cfg


def _input_dim(dataset: dict) -> int:
    return dataset["features"] if dataset["kind"] == "synthetic" else MNIST_INPUT_DIM


def _cross_checks(cfg: dict) -> None:
    ctl = cfg["controller"]
    if ctl["q_min"] > ctl["q_max"]:
        raise ConfigError("controller.q_min: must not exceed controller.q_max")
    if not ctl["q_min"] <= ctl["q_init"] <= ctl["q_max"]:
        raise ConfigError("controller.q_init: must lie in [q_min, q_max]")
    if cfg["quantizer"]["mode"] == "adaptive" and not ctl["enabled"]:
        raise ConfigError("quantizer.mode: 'adaptive' requires controller.enabled=true")
    drop = cfg["dropout"]
    if drop["enabled"] and drop["d_target"] is not None:
        dim = _input_dim(cfg["dataset"]) if drop["layer"] == "input" else cfg["model"]["hidden"]
        if drop["d_target"] >= dim:
            raise ConfigError(
                f"dropout.d_target: must be < {dim} (the {drop['layer']}-layer width)"
            )
    ds = cfg["dataset"]
    train_n = ds["samples"] if ds["kind"] == "synthetic" else ds["train_subset"]
    if train_n is not None and cfg["partition"]["num_clients"] > train_n:
        raise ConfigError(
            f"partition.num_clients: {cfg['partition']['num_clients']} exceeds "
            f"the training set size {train_n}"
        )


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from e
    return validate_config(raw)
