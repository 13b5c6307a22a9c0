"""Per-client send/skip gating on the reconstructed innovation norm.

A client transmits when its reconstructed innovation is significant (L2
norm at or above the threshold) or when it has been silent long enough
that the current round would be its tau-th consecutive silent round. The
skip counter counts rounds since the last transmission, including the
round under decision, so tau = 1 degenerates to sending every round and no
client is ever silent for tau or more consecutive rounds.
"""

from dataclasses import dataclass, replace

import numpy as np

from flcomm.innovation_codec import QuantizedInnovation, dequantize


@dataclass(frozen=True)
class GateState:
    comm_eps: float
    tau_max: int
    skip_counter: int = 0

    def __post_init__(self):
        if self.comm_eps < 0:
            raise ValueError(f"comm_eps must be nonnegative, got {self.comm_eps}")
        if self.tau_max < 1:
            raise ValueError(f"tau_max must be >= 1, got {self.tau_max}")
        if not 0 <= self.skip_counter <= self.tau_max:
            raise ValueError(f"skip_counter {self.skip_counter} outside [0, {self.tau_max}]")


@dataclass(frozen=True)
class GateDecision:
    send: bool
    forced: bool  # sent only because the silence bound was reached


def innovation_norm(qi: QuantizedInnovation) -> float:
    """L2 norm of the reconstructed innovation (the quantity the server
    would actually apply; index magnitudes are scale-free)."""
    return float(np.linalg.norm(dequantize(qi)))


def should_send(state: GateState, norm: float) -> tuple[GateDecision, GateState]:
    """Decide send/skip and advance the counter.

    ``pending`` is the silence streak this round would complete; reaching
    tau forces a send regardless of significance.
    """
    if norm < 0:
        raise ValueError(f"norm must be nonnegative, got {norm}")
    pending = state.skip_counter + 1
    significant = norm >= state.comm_eps
    if significant or pending >= state.tau_max:
        return GateDecision(send=True, forced=not significant), replace(state, skip_counter=0)
    return GateDecision(send=False, forced=False), replace(state, skip_counter=pending)


@dataclass(frozen=True)
class ClientMessage:
    client_id: int
    payload: QuantizedInnovation
    norm: float
    forced: bool


def filter_active(messages: list[ClientMessage], comm_eps: float) -> set[int]:
    """Server-side admission: re-check significance for voluntary sends,
    always admit forced sends (dropping one would break the silence bound)."""
    seen: set[int] = set()
    active: set[int] = set()
    for msg in messages:
        if msg.client_id in seen:
            raise ValueError(f"duplicate client id {msg.client_id} in one round")
        seen.add(msg.client_id)
        if msg.forced or innovation_norm(msg.payload) >= comm_eps:
            active.add(msg.client_id)
    return active
