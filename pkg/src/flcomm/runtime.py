"""Federated round loop for the adaptive scheme and its exact reference.

One round: broadcast the model, each client computes a full-precision local
gradient (optionally feature-dropped per batch), forms the innovation
against its synchronized reference, encodes it at the depth chosen by the
controller in the previous round, and the gate decides send/skip. The
server then updates the sensitivity controller from the full-precision
reports (fixing the depth for the next round), admits messages, advances
its per-client reference mirrors for every sender, and steps the model by
the aggregate of the tracked mirrors: delivered innovations are the
increments that keep each mirror equal to the client's latest gradient
estimate, and a silent client's stale estimate keeps contributing until it
is refreshed. With quantization and gating disabled every mirror equals
the client's exact gradient, so the loop reduces to federated SGD. All
reductions iterate in ascending client id so determinism is independent of
client execution order.

Uplink accounting is exact: encoded payload bits for senders, one liveness
flag bit per skipped client; full-precision sensitivity reports are free
by default (metrics.count_reports adds them at 32 bits per component).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from flcomm.comm_gate import ClientMessage, GateState, filter_active, innovation_norm, should_send
from flcomm.data import load_mnist, make_blobs, mnist_root, partition_dirichlet, partition_stratified
from flcomm.feature_dropout import (
    DropoutConfig,
    column_stats,
    dropout_probs,
    keep_scale,
    min_c_bias,
    sample_mask,
)
from flcomm.innovation_codec import (
    RawInnovation,
    advance_reference,
    compute_innovation,
    encoded_bits,
    dequantize,
    quantize,
)
from flcomm.metrics import RoundMetrics
from flcomm.model import MLP
from flcomm.seeding import component_rng
from flcomm.sensitivity_controller import (
    ClientGradientReport,
    SensitivityState,
    error_sensitivity,
    global_gradient,
    level_to_bits,
    observe,
)

PASSTHROUGH_BITS = 32  # reported depth when quantization is disabled


def build_problem(cfg: dict, seed: int, data=None):
    """Dataset, shards, and model for one run cell; fully seed-derived."""
    ds = cfg["dataset"]
    if data is not None:
        x_train, y_train, x_test, y_test = data
    elif ds["kind"] == "synthetic":
        rng = component_rng(seed, "data")
        x_train, y_train, x_test, y_test = make_blobs(
            ds["classes"], ds["features"], ds["samples"], ds["test_samples"],
            ds["spread"], rng, center_scale=ds["center_scale"],
        )
    elif ds["kind"] == "mnist":
        root = mnist_root(ds.get("path"))
        x_train, y_train, x_test, y_test = load_mnist(
            root, ds["train_subset"], ds["test_subset"]
        )
    else:
        raise ValueError(f"unknown dataset kind '{ds['kind']}'")

    part = cfg["partition"]
    prng = component_rng(seed, "partition")
    if part["mode"] == "stratified":
        shards = partition_stratified(y_train, part["num_clients"], prng)
    else:
        shards = partition_dirichlet(y_train, part["num_clients"], part["alpha"], prng)

    n_classes = int(max(y_train.max(), y_test.max())) + 1
    model = MLP(x_train.shape[1], cfg["model"]["hidden"], n_classes)
    return model, (x_train, y_train, x_test, y_test), shards


@dataclass
class ClientState:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    reference: np.ndarray
    gate: GateState
    rng_shuffle: np.random.Generator
    rng_dropout: np.random.Generator


@dataclass
class LocalResult:
    gradient: np.ndarray
    loss: float
    feature_bits_saved: int


def local_pass(model: MLP, w: np.ndarray, client: ClientState,
               epochs: int, batch_size: int, dropout: dict | None) -> LocalResult:
    """Mean cross-entropy gradient over full local passes, minibatched,
    with per-batch feature dropout when enabled."""
    n = client.y.size
    grad_acc = np.zeros(model.dim)
    loss_acc = 0.0
    seen = 0
    saved = 0
    for _ in range(epochs):
        order = client.rng_shuffle.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            xb, yb = client.x[sel], client.y[sel]
            hidden_scale = None
            if dropout is not None and dropout["enabled"]:
                if dropout["layer"] == "input":
                    xb, dropped = _drop_features(xb, dropout, client.rng_dropout)
                    saved += dropped * yb.size * 32
                else:
                    a1 = model._forward(w, xb)[1]
                    hidden_scale, dropped = _feature_scale(a1, dropout, client.rng_dropout)
                    saved += dropped * yb.size * 32
            loss, grad = model.loss_and_grad(w, xb, yb, hidden_scale=hidden_scale)
            grad_acc += grad * yb.size
            loss_acc += loss * yb.size
            seen += yb.size
    return LocalResult(gradient=grad_acc / seen, loss=loss_acc / seen,
                       feature_bits_saved=saved)


def _resolve_dropout_cfg(stds: np.ndarray, dropout: dict) -> DropoutConfig:
    d = stds.size
    d_target = dropout["d_target"] if dropout["d_target"] is not None else math.ceil(d / 2)
    c_bias = dropout["c_bias"]
    if c_bias == "auto":
        c_bias = min_c_bias(stds, d_target)
    return DropoutConfig(c_bias=float(c_bias), d_target=int(d_target))


def _feature_scale(matrix: np.ndarray, dropout: dict, rng) -> tuple[np.ndarray, int]:
    _, stds = column_stats(matrix)
    cfg = _resolve_dropout_cfg(stds, dropout)
    probs = dropout_probs(stds, cfg)
    mask = sample_mask(probs, rng)
    scale = keep_scale(mask)
    return scale, int((mask.indicators == 0).sum())


def _drop_features(xb: np.ndarray, dropout: dict, rng) -> tuple[np.ndarray, int]:
    scale, dropped = _feature_scale(xb, dropout, rng)
    return xb * scale[None, :], dropped


def _evaluation_row(model, w, x_test, y_test, *, rnd, train_loss, e_t, ebar,
                    q_t, b_t, frozen, rebased, sent, skipped, forced,
                    bits_round, bits_cum) -> RoundMetrics:
    acc, test_loss = model.evaluate(w, x_test, y_test)
    return RoundMetrics(
        round=rnd, train_loss=train_loss, test_loss=test_loss, test_acc=acc,
        E_t=e_t, Ebar_t=ebar, q_t=q_t, b_t=b_t, frozen=int(frozen),
        rebased=int(rebased), sent=sent, skipped=skipped, forced=forced,
        bits_round=bits_round, bits_cum=bits_cum,
    )


@dataclass
class SendRecord:
    """Per-client transport record for one round (drives the independent
    bit recount in the test suite)."""

    client_id: int
    sent: bool
    forced: bool
    payload_bits: int  # 0 when skipped; the skip flag is accounted separately


def server_aggregate(messages: list[ClientMessage], dim: int) -> np.ndarray:
    """Sum of the reconstructed innovations of the admitted senders: the
    round's increment to the server's global gradient tracker. Empty
    admission yields the zero vector."""
    acc = np.zeros(dim)
    for msg in messages:
        if msg.payload.dim != dim:
            raise ValueError(f"message dimension {msg.payload.dim} != {dim}")
        acc += dequantize(msg.payload)
    return acc


class ProposedRun:
    """The adaptive scheme end to end; also runs with any subset of the
    three mechanisms disabled."""

    def __init__(self, cfg: dict, seed: int, data=None):
        self.cfg = cfg
        self.seed = seed
        self.model, splits, shards = build_problem(cfg, seed, data)
        self.x_test, self.y_test = splits[2], splits[3]
        x_train, y_train = splits[0], splits[1]

        gate_cfg = cfg["gate"]
        self._eps_auto = gate_cfg["comm_eps"] == "auto:p50"
        eps0 = 0.0 if self._eps_auto else float(gate_cfg["comm_eps"])
        d = self.model.dim
        self.clients = [
            ClientState(
                client_id=i,
                x=x_train[shard],
                y=y_train[shard],
                reference=np.zeros(d),
                gate=GateState(comm_eps=eps0, tau_max=gate_cfg["tau"]),
                rng_shuffle=component_rng(seed, f"client{i}.shuffle"),
                rng_dropout=component_rng(seed, f"client{i}.dropout"),
            )
            for i, shard in enumerate(shards)
        ]

        ctl = cfg["controller"]
        self.controller_enabled = ctl["enabled"]
        self.controller = None
        if self.controller_enabled:
            self.controller = SensitivityState(
                level_q=ctl["q_init"],
                e_thresh=None if ctl["e_thresh"] == "auto" else float(ctl["e_thresh"]),
                gamma=ctl["gamma"],
                band_eps=None if ctl["band_eps"] == "auto" else float(ctl["band_eps"]),
                window_w=ctl["window"],
                rebase_t=ctl["rebase_period"],
                v_thresh=None if ctl["v_thresh"] == "auto" else float(ctl["v_thresh"]),
                q_init=ctl["q_init"],
                q_min=ctl["q_min"],
                q_max=ctl["q_max"],
                calib_rounds=ctl["calib_rounds"],
            )

        q = cfg["quantizer"]
        self.quantizer_mode = q["mode"]
        self.b_base = q["b_base"]
        self.bits_current = PASSTHROUGH_BITS if self.quantizer_mode == "passthrough" else q["b_base"]

        self.w = self.model.init_params(component_rng(seed, "model_init"))
        self.mirrors = [np.zeros(d) for _ in self.clients]
        self.gradient_tracker = np.zeros(d)  # running sum of delivered innovations
        self.eta = cfg["server"]["eta"]
        self.aggregate = cfg["server"]["aggregate"]
        self.weighting = cfg["server"]["weighting"]
        self.count_report_bits = cfg["metrics"]["count_reports"]
        self.round_index = 0
        self.bits_cum = 0
        self.feature_bits_saved = 0
        self.traces: list[list[SendRecord]] = []

    def _initial_row(self) -> RoundMetrics:
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=0, train_loss=float("nan"), e_t=float("nan"), ebar=float("nan"),
            q_t=self.controller.level_q if self.controller_enabled else float("nan"),
            b_t=self.bits_current, frozen=0, rebased=0,
            sent=0, skipped=0, forced=0, bits_round=0, bits_cum=0,
        )

    def step(self) -> RoundMetrics:
        self.round_index += 1
        b_t = self.bits_current
        passthrough = self.quantizer_mode == "passthrough"
        eps_round = self.clients[0].gate.comm_eps

        messages: list[ClientMessage] = []
        reports: list[ClientGradientReport] = []
        trace: list[SendRecord] = []
        loss_acc = 0.0
        n_total = 0
        sent = skipped = forced = 0
        bits_round = 0

        for client in self.clients:
            res = local_pass(
                self.model, self.w, client,
                epochs=self.cfg["local"]["epochs"],
                batch_size=self.cfg["local"]["batch_size"],
                dropout=self.cfg["dropout"],
            )
            self.feature_bits_saved += res.feature_bits_saved
            delta = compute_innovation(res.gradient, client.reference)
            payload = RawInnovation(delta) if passthrough else quantize(delta, b_t)
            norm = innovation_norm(payload)
            decision, client.gate = should_send(client.gate, norm)
            if decision.send:
                client.reference = advance_reference(client.reference, payload)
                messages.append(ClientMessage(client.client_id, payload, norm, decision.forced))
                payload_bits = encoded_bits(payload)
                bits_round += payload_bits
                sent += 1
                forced += decision.forced
                trace.append(SendRecord(client.client_id, True, decision.forced, payload_bits))
            else:
                bits_round += 1  # liveness flag
                skipped += 1
                trace.append(SendRecord(client.client_id, False, False, 0))
            reports.append(ClientGradientReport(res.gradient, client.y.size))
            loss_acc += res.loss * client.y.size
            n_total += client.y.size

        if self.count_report_bits:
            bits_round += len(reports) * self.model.dim * 32

        g_t = global_gradient(reports, weighting=self.weighting)
        e_t = error_sensitivity(reports, g_t)
        if self.controller_enabled:
            self.controller, dec = observe(self.controller, e_t)
            if self.quantizer_mode == "adaptive":
                self.bits_current = level_to_bits(dec.level_q, self.b_base)
            ebar, q_t = dec.ebar, dec.level_q
            frozen, rebased = dec.frozen, dec.rebased
        else:
            ebar = q_t = float("nan")
            frozen = rebased = False

        # The admission re-check never rejects an in-contract sender (norm
        # and threshold are bitwise identical on both ends) but guards the
        # wire protocol; mirrors advance for every sender so they stay
        # synchronized with the client-side references.
        active = filter_active(messages, eps_round)
        if len(active) != len(messages):
            raise RuntimeError("server admission disagrees with client gate decisions")
        for msg in messages:
            self.mirrors[msg.client_id] = advance_reference(
                self.mirrors[msg.client_id], msg.payload
            )
        self.gradient_tracker = self.gradient_tracker + server_aggregate(messages, self.model.dim)
        update = self.gradient_tracker
        if self.aggregate == "mean":
            update = update / len(self.clients)
        self.w = self.w - self.eta * update

        if self._eps_auto and self.round_index == 1:
            resolved = float(np.median([msg.norm for msg in messages]))
            for client in self.clients:
                client.gate = replace(client.gate, comm_eps=resolved)
            self._eps_auto = False

        self.bits_cum += bits_round
        self.traces.append(trace)
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=self.round_index, train_loss=loss_acc / n_total,
            e_t=e_t, ebar=ebar, q_t=q_t, b_t=b_t, frozen=frozen, rebased=rebased,
            sent=sent, skipped=skipped, forced=forced,
            bits_round=bits_round, bits_cum=self.bits_cum,
        )

    def run(self) -> list[RoundMetrics]:
        rows = [self._initial_row()]
        for _ in range(self.cfg["rounds"]):
            rows.append(self.step())
        return rows


class FedSgdReferenceRun:
    """Federated SGD: every round the server steps by the aggregate of the
    clients' exact current gradients, uncompressed and ungated. The oracle
    the full pipeline must match bitwise when all mechanisms are disabled;
    per-client gradient state is carried in the same incremental form the
    pipeline uses so the comparison is bit-exact rather than merely close."""

    def __init__(self, cfg: dict, seed: int, data=None):
        self.cfg = cfg
        self.seed = seed
        self.model, splits, shards = build_problem(cfg, seed, data)
        self.x_test, self.y_test = splits[2], splits[3]
        x_train, y_train = splits[0], splits[1]
        d = self.model.dim
        self.clients = [
            ClientState(
                client_id=i,
                x=x_train[shard],
                y=y_train[shard],
                reference=np.zeros(d),
                gate=GateState(comm_eps=0.0, tau_max=1),
                rng_shuffle=component_rng(seed, f"client{i}.shuffle"),
                rng_dropout=component_rng(seed, f"client{i}.dropout"),
            )
            for i, shard in enumerate(shards)
        ]
        self.w = self.model.init_params(component_rng(seed, "model_init"))
        self.gradient_tracker = np.zeros(d)
        self.eta = cfg["server"]["eta"]
        self.aggregate = cfg["server"]["aggregate"]
        self.weighting = cfg["server"]["weighting"]
        self.round_index = 0
        self.bits_cum = 0

    def _initial_row(self) -> RoundMetrics:
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=0, train_loss=float("nan"), e_t=float("nan"), ebar=float("nan"),
            q_t=float("nan"), b_t=PASSTHROUGH_BITS, frozen=0, rebased=0,
            sent=0, skipped=0, forced=0, bits_round=0, bits_cum=0,
        )

    def step(self) -> RoundMetrics:
        self.round_index += 1
        reports: list[ClientGradientReport] = []
        deltas: list[np.ndarray] = []
        loss_acc = 0.0
        n_total = 0
        for client in self.clients:
            res = local_pass(
                self.model, self.w, client,
                epochs=self.cfg["local"]["epochs"],
                batch_size=self.cfg["local"]["batch_size"],
                dropout=None,
            )
            delta = res.gradient - client.reference
            client.reference = client.reference + delta
            deltas.append(delta)
            reports.append(ClientGradientReport(res.gradient, client.y.size))
            loss_acc += res.loss * client.y.size
            n_total += client.y.size
        g_t = global_gradient(reports, weighting=self.weighting)
        e_t = error_sensitivity(reports, g_t)
        increment = np.zeros(self.model.dim)
        for delta in deltas:
            increment += delta
        self.gradient_tracker = self.gradient_tracker + increment
        update = self.gradient_tracker
        if self.aggregate == "mean":
            update = update / len(self.clients)
        self.w = self.w - self.eta * update
        bits_round = len(self.clients) * self.model.dim * 32
        self.bits_cum += bits_round
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=self.round_index, train_loss=loss_acc / n_total,
            e_t=e_t, ebar=float("nan"), q_t=float("nan"), b_t=PASSTHROUGH_BITS,
            frozen=0, rebased=0, sent=len(self.clients), skipped=0, forced=0,
            bits_round=bits_round, bits_cum=self.bits_cum,
        )

    def run(self) -> list[RoundMetrics]:
        rows = [self._initial_row()]
        for _ in range(self.cfg["rounds"]):
            rows.append(self.step())
        return rows
