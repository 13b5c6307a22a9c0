"""Importance-based feature elimination with inverted-dropout rescaling.

Each column of a batch feature matrix is scored by its spread across the
batch; low-spread columns are dropped probabilistically and the survivors
are rescaled by their keep probability so the expected matrix is unchanged.
Dropped columns are zeroed in place, never physically removed: compression
is handled by the bit-accounting layer, keeping downstream shapes static.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DropoutConfig:
    """Bias term and target retained-dimension count for the two-branch
    probability rule. ``d_target`` must stay below the feature dimension."""

    c_bias: float
    d_target: int
    clamp_probs: bool = True

    def __post_init__(self):
        if self.c_bias < 0:
            raise ValueError(f"c_bias must be nonnegative, got {self.c_bias}")
        if self.d_target < 1:
            raise ValueError(f"d_target must be >= 1, got {self.d_target}")


@dataclass(frozen=True)
class DropoutMask:
    indicators: np.ndarray  # 0/1 per column
    probs: np.ndarray       # drop probability per column, in [0, 1]


def column_stats(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population standard deviation (divisor B)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
        raise ValueError(f"feature matrix must be 2-D with B,D >= 1, got shape {f.shape}")
    finite = np.isfinite(f).all(axis=0)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"non-finite value in feature column {bad}")
    means = f.mean(axis=0)
    stds = f.std(axis=0)  # population std: ddof=0
    return means, stds


def importance(stds: np.ndarray) -> np.ndarray:
    """Normalized importance scores summing to D; uniform when all spreads
    are zero (a constant batch carries no ranking signal)."""
    stds = np.asarray(stds, dtype=np.float64)
    if (stds < 0).any():
        raise ValueError("standard deviations must be nonnegative")
    total = stds.sum()
    if total == 0.0:
        return np.ones_like(stds)
    return stds * stds.size / total


def min_c_bias(stds: np.ndarray, d_target: int) -> float:
    """Smallest admissible bias term for the given spread vector."""
    stds = np.asarray(stds, dtype=np.float64)
    d = stds.size
    if d_target >= d:
        raise ValueError(f"d_target must be < D={d}, got {d_target}")
    bound = (stds.max() * d - stds.sum()) / (d - d_target)
    return max(0.0, float(bound))


def dropout_probs(stds: np.ndarray, cfg: DropoutConfig) -> np.ndarray:
    """Per-column drop probabilities.

    When no importance score exceeds 1, p_i = 1 - q_i directly. Otherwise
    the bias-smoothed form applies and cfg.c_bias must meet the admissible
    lower bound for this spread vector. Raw probabilities of above-average
    columns are negative by construction, so the result is clamped to [0, 1].
    """
    stds = np.asarray(stds, dtype=np.float64)
    d = stds.size
    q = importance(stds)
    if q.max() <= 1.0:
        probs = 1.0 - q
    else:
        if cfg.d_target >= d:
            raise ValueError(f"d_target must be < D={d}, got {cfg.d_target}")
        required = min_c_bias(stds, cfg.d_target)
        if cfg.c_bias < required:
            raise ValueError(
                f"c_bias={cfg.c_bias} below the admissible minimum "
                f"{required} for this spread vector (D={d}, d_target={cfg.d_target})"
            )
        shifted = stds + cfg.c_bias
        probs = 1.0 - shifted * d / shifted.sum()
    return np.clip(probs, 0.0, 1.0)


def sample_mask(probs: np.ndarray, rng: np.random.Generator) -> DropoutMask:
    """Independent keep/drop indicators; column i is kept with probability
    1 - probs[i]. Exact at both boundaries: p=0 always keeps, p=1 always drops."""
    probs = np.asarray(probs, dtype=np.float64)
    if ((probs < 0) | (probs > 1)).any():
        raise ValueError("drop probabilities must lie in [0, 1]")
    indicators = (rng.random(probs.size) >= probs).astype(np.int64)
    return DropoutMask(indicators=indicators, probs=probs)


def expected_retained(probs: np.ndarray) -> float:
    """Expected number of surviving columns: D - sum(p)."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(probs.size - probs.sum())


def keep_scale(mask: DropoutMask) -> np.ndarray:
    """Per-column multiplier: 1/(1 - p_i) for kept columns, 0 for dropped."""
    kept = mask.indicators == 1
    if (mask.probs[kept] >= 1.0).any():
        raise ValueError("column kept with drop probability 1: rescaling undefined")
    scale = np.zeros(mask.indicators.size)
    scale[kept] = 1.0 / (1.0 - mask.probs[kept])
    return scale


def apply_dropout(f: np.ndarray, mask: DropoutMask) -> np.ndarray:
    """Zero dropped columns and rescale kept ones by 1/(1 - p_i)."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[1] != mask.indicators.size:
        raise ValueError(f"mask length {mask.indicators.size} does not match D={f.shape[1]}")
    return f * keep_scale(mask)[None, :]
