"""Error-sensitivity statistic and quantization-level adaptation.

The controller watches the dispersion of client gradients around the global
gradient estimate. High dispersion demands finer quantization (level down),
low dispersion tolerates coarser updates (level up); a tolerance band around
the threshold absorbs jitter, a moving-average rule freezes the level once
the statistic settles, and a periodic variance check re-baselines when
conditions have shifted. Levels move by a fixed factor gamma and map to the
codec bit depth through level_to_bits.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Level value that maps to b_base bits; the anchor is a fixed constant so
# the level-to-depth mapping does not drift when q_init is re-baselined.
LEVEL_ANCHOR = 16.0

BITS_MIN = 1
BITS_MAX = 12


@dataclass(frozen=True)
class ClientGradientReport:
    """Full-precision local gradient plus the reporting client's sample count."""

    gradient: np.ndarray
    dataset_size: int

    def __post_init__(self):
        if self.dataset_size < 1:
            raise ValueError(f"dataset_size must be >= 1, got {self.dataset_size}")


def global_gradient(reports: list[ClientGradientReport], weighting: str = "as_written") -> np.ndarray:
    """Average of reported gradients over the sampled clients.

    ``as_written`` divides each gradient by its client's sample count before
    averaging; ``uniform`` averages the raw gradients (the usual convention
    when local gradients are already data-averaged).
    """
    if not reports:
        raise ValueError("no client reports")
    if weighting not in ("as_written", "uniform"):
        raise ValueError(f"unknown weighting '{weighting}'")
    dim = reports[0].gradient.size
    acc = np.zeros(dim)
    for rep in reports:
        if rep.gradient.size != dim:
            raise ValueError("gradient dimension mismatch across reports")
        if weighting == "as_written":
            acc += rep.gradient / rep.dataset_size
        else:
            acc += rep.gradient
    return acc / len(reports)


def error_sensitivity(reports: list[ClientGradientReport], g_t: np.ndarray) -> float:
    """Mean squared deviation of raw client gradients from the global gradient."""
    if not reports:
        raise ValueError("no client reports")
    g_t = np.asarray(g_t, dtype=np.float64)
    acc = 0.0
    for rep in reports:
        if rep.gradient.size != g_t.size:
            raise ValueError("gradient dimension mismatch")
        diff = rep.gradient - g_t
        acc += float(diff @ diff)
    return acc / len(reports)


@dataclass(frozen=True)
class SensitivityState:
    """Controller state. Thresholds left as None auto-calibrate after
    ``calib_rounds`` observations: e_thresh becomes the median of the
    first values, band_eps 5% of it, v_thresh (e_thresh/2)^2."""

    level_q: float = 16.0
    e_thresh: float | None = None
    gamma: float = 2.0
    band_eps: float | None = None
    window_w: int = 5
    rebase_t: int = 20
    v_thresh: float | None = None
    q_init: float = 16.0
    q_min: float = 1.0
    q_max: float = 256.0
    calib_rounds: int = 5
    frozen: bool = False
    below_count: int = 0
    observed: int = 0
    history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.gamma <= 1:
            raise ValueError(f"gamma must be > 1, got {self.gamma}")
        if self.band_eps is not None and self.band_eps < 0:
            raise ValueError("band_eps must be nonnegative")
        if self.window_w < 1 or self.rebase_t < 1:
            raise ValueError("window_w and rebase_t must be >= 1")
        if not self.q_min <= self.level_q <= self.q_max:
            raise ValueError(
                f"level_q={self.level_q} outside [{self.q_min}, {self.q_max}]"
            )

    @property
    def history_cap(self) -> int:
        return max(self.window_w, self.rebase_t)


def _append(state: SensitivityState, e_t: float) -> SensitivityState:
    hist = (state.history + (float(e_t),))[-state.history_cap:]
    return replace(state, history=hist, observed=state.observed + 1)


def _calibrate(state: SensitivityState) -> SensitivityState:
    """Resolve auto thresholds from the first calib_rounds observations."""
    e_thresh = float(np.median(state.history[: state.calib_rounds]))
    band = state.band_eps if state.band_eps is not None else 0.05 * e_thresh
    v_thresh = state.v_thresh if state.v_thresh is not None else (0.5 * e_thresh) ** 2
    return replace(state, e_thresh=e_thresh, band_eps=band, v_thresh=v_thresh)


def update_level(state: SensitivityState, e_t: float) -> SensitivityState:
    """One level-update step; e_t enters the history in every case.

    The tolerance band wins over both branches; a frozen controller holds
    its level. While thresholds are still calibrating the level also holds.
    """
    if e_t < 0:
        raise ValueError(f"sensitivity must be nonnegative, got {e_t}")
    state = _append(state, e_t)
    if state.e_thresh is None:
        if state.observed >= state.calib_rounds:
            state = _calibrate(state)
        else:
            return state
    if state.frozen:
        return state
    if abs(e_t - state.e_thresh) < state.band_eps:
        return state
    if e_t > state.e_thresh:
        level = max(state.q_min, state.level_q / state.gamma)
    else:
        level = min(state.q_max, state.level_q * state.gamma)
    return replace(state, level_q=level)


def moving_average(state: SensitivityState) -> float:
    """Mean of the last window_w sensitivities; NaN while history is short."""
    if len(state.history) < state.window_w:
        return float("nan")
    return float(np.mean(state.history[-state.window_w:]))


def check_freeze(state: SensitivityState) -> SensitivityState:
    """Freeze after window_w consecutive below-threshold moving averages;
    unfreeze as soon as the moving average rises above the threshold."""
    if state.e_thresh is None or len(state.history) < state.window_w:
        return state
    ebar = moving_average(state)
    if ebar <= state.e_thresh:
        below = state.below_count + 1
        return replace(state, below_count=below, frozen=state.frozen or below >= state.window_w)
    return replace(state, below_count=0, frozen=False)


def rebaseline(state: SensitivityState) -> tuple[SensitivityState, bool]:
    """Reset the baseline level when the trailing sensitivity variance is
    high. Fires only with a full window; returns (new state, fired)."""
    if state.v_thresh is None or len(state.history) < state.rebase_t:
        return state, False
    window = np.asarray(state.history[-state.rebase_t:])
    v_t = float(np.var(window))
    if v_t <= state.v_thresh:
        return state, False
    new = replace(state, q_init=state.level_q, frozen=False, below_count=0)
    return new, True


def level_to_bits(level_q: float, b_base: int) -> int:
    """Map a level to a codec bit depth: doubling the level drops one bit.

    Anchored at LEVEL_ANCHOR (which maps to b_base) so re-baselining q_init
    never shifts the depth scale.
    """
    if not 2 <= b_base <= 12:
        raise ValueError(f"b_base must be in [2, 12], got {b_base}")
    b = round(b_base - math.log2(level_q / LEVEL_ANCHOR))
    return int(min(BITS_MAX, max(BITS_MIN, b)))


@dataclass(frozen=True)
class ControllerDecision:
    e_t: float
    ebar: float
    level_q: float
    frozen: bool
    rebased: bool
    e_thresh: float


def observe(state: SensitivityState, e_t: float) -> tuple[SensitivityState, ControllerDecision]:
    """One full controller round: level update, freeze check, and the
    re-baseline check every rebase_t observations."""
    state = update_level(state, e_t)
    state = check_freeze(state)
    rebased = False
    if state.observed % state.rebase_t == 0:
        state, rebased = rebaseline(state)
    decision = ControllerDecision(
        e_t=float(e_t),
        ebar=moving_average(state) if state.e_thresh is not None else float("nan"),
        level_q=state.level_q,
        frozen=state.frozen,
        rebased=rebased,
        e_thresh=state.e_thresh if state.e_thresh is not None else float("nan"),
    )
    return state, decision
