"""Comparison schemes: FedAvg, FedProx, and fixed-level stochastic QSGD.

FedAvg clients run local minibatch epochs (SGD or Adam, state reset each
round) and upload full-precision weights, d*32 bits per client per round.
FedProx adds mu*(w_local - w_global) to each local gradient. QSGD clients
upload an unbiased stochastically rounded full gradient at a fixed level
count; the server averages and takes a gradient step.
"""

import math
from dataclasses import dataclass

import numpy as np

from flcomm.metrics import RoundMetrics
from flcomm.model import Adam
from flcomm.runtime import ClientState, _evaluation_row, build_problem, local_pass
from flcomm.comm_gate import GateState
from flcomm.seeding import component_rng


def qsgd_quantize(x: np.ndarray, levels: int, rng: np.random.Generator) -> np.ndarray:
    """Unbiased stochastic uniform quantization onto `levels` magnitude
    steps over [0, max|x|]; signs are kept exactly, zero maps to zero."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    scale = float(np.abs(x).max())
    if scale == 0.0:
        return np.zeros_like(x)
    ratios = np.abs(x) / scale * levels
    lower = np.floor(ratios)
    bump = rng.random(x.size) < (ratios - lower)
    return np.sign(x) * (lower + bump) * (scale / levels)


def qsgd_component_bits(levels: int) -> int:
    """Index width per component: magnitude level plus one sign bit."""
    return math.ceil(math.log2(levels + 1)) + 1


@dataclass
class _LocalClient:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    rng_shuffle: np.random.Generator


class FedAvgRun:
    """Weight averaging with local epochs; mu > 0 turns it into FedProx."""

    def __init__(self, cfg: dict, seed: int, data=None, mu: float = 0.0):
        self.cfg = cfg
        self.mu = mu
        self.model, splits, shards = build_problem(cfg, seed, data)
        self.x_test, self.y_test = splits[2], splits[3]
        x_train, y_train = splits[0], splits[1]
        self.clients = [
            _LocalClient(i, x_train[s], y_train[s], component_rng(seed, f"client{i}.shuffle"))
            for i, s in enumerate(shards)
        ]
        self.w = self.model.init_params(component_rng(seed, "model_init"))
        self.round_index = 0
        self.bits_cum = 0

    def _local_train(self, client: _LocalClient) -> tuple[np.ndarray, float]:
        local = self.cfg["local"]
        w_l = self.w.copy()
        opt = None
        opt_state = None
        if local["optimizer"] == "adam":
            opt = Adam(local["lr"], local["adam_beta1"], local["adam_beta2"], local["adam_eps"])
            opt_state = opt.init_state(self.model.dim)
        loss_acc = 0.0
        seen = 0
        n = client.y.size
        for _ in range(local["epochs"]):
            order = client.rng_shuffle.permutation(n)
            for start in range(0, n, local["batch_size"]):
                sel = order[start:start + local["batch_size"]]
                loss, grad = self.model.loss_and_grad(w_l, client.x[sel], client.y[sel])
                if self.mu:
                    grad = grad + self.mu * (w_l - self.w)
                if opt is None:
                    w_l = w_l - local["lr"] * grad
                else:
                    opt_state, w_l = opt.step(opt_state, w_l, grad)
                loss_acc += loss * sel.size
                seen += sel.size
        return w_l, loss_acc / seen

    def step(self) -> RoundMetrics:
        self.round_index += 1
        w_acc = np.zeros(self.model.dim)
        total = 0
        loss_acc = 0.0
        for client in self.clients:
            w_l, mean_loss = self._local_train(client)
            w_acc += w_l * client.y.size
            loss_acc += mean_loss * client.y.size
            total += client.y.size
        self.w = w_acc / total
        m = len(self.clients)
        bits_round = m * self.model.dim * 32
        self.bits_cum += bits_round
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=self.round_index, train_loss=loss_acc / total,
            e_t=float("nan"), ebar=float("nan"), q_t=float("nan"), b_t=32,
            frozen=0, rebased=0, sent=m, skipped=0, forced=0,
            bits_round=bits_round, bits_cum=self.bits_cum,
        )

    def _initial_row(self) -> RoundMetrics:
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=0, train_loss=float("nan"), e_t=float("nan"), ebar=float("nan"),
            q_t=float("nan"), b_t=32, frozen=0, rebased=0,
            sent=0, skipped=0, forced=0, bits_round=0, bits_cum=0,
        )

    def run(self) -> list[RoundMetrics]:
        rows = [self._initial_row()]
        for _ in range(self.cfg["rounds"]):
            rows.append(self.step())
        return rows


class QsgdRun:
    """Per-round stochastic quantization of full gradients at a fixed level
    count; no innovation tracking, no gating."""

    def __init__(self, cfg: dict, seed: int, data=None):
        self.cfg = cfg
        self.levels = cfg["qsgd"]["levels"]
        self.model, splits, shards = build_problem(cfg, seed, data)
        self.x_test, self.y_test = splits[2], splits[3]
        x_train, y_train = splits[0], splits[1]
        d = self.model.dim
        self.clients = [
            ClientState(
                client_id=i, x=x_train[s], y=y_train[s], reference=np.zeros(d),
                gate=GateState(comm_eps=0.0, tau_max=1),
                rng_shuffle=component_rng(seed, f"client{i}.shuffle"),
                rng_dropout=component_rng(seed, f"client{i}.dropout"),
            )
            for i, s in enumerate(shards)
        ]
        self.rng_rounding = [
            component_rng(seed, f"client{i}.qsgd") for i in range(len(shards))
        ]
        self.w = self.model.init_params(component_rng(seed, "model_init"))
        self.eta = cfg["server"]["eta"]
        self.round_index = 0
        self.bits_cum = 0

    @property
    def component_bits(self) -> int:
        return qsgd_component_bits(self.levels)

    def step(self) -> RoundMetrics:
        self.round_index += 1
        update = np.zeros(self.model.dim)
        loss_acc = 0.0
        total = 0
        for client in self.clients:
            res = local_pass(
                self.model, self.w, client,
                epochs=self.cfg["local"]["epochs"],
                batch_size=self.cfg["local"]["batch_size"],
                dropout=None,
            )
            update += qsgd_quantize(res.gradient, self.levels, self.rng_rounding[client.client_id])
            loss_acc += res.loss * client.y.size
            total += client.y.size
        m = len(self.clients)
        update /= m
        self.w = self.w - self.eta * update
        bits_round = m * (self.model.dim * self.component_bits + 40)
        self.bits_cum += bits_round
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=self.round_index, train_loss=loss_acc / total,
            e_t=float("nan"), ebar=float("nan"), q_t=float("nan"),
            b_t=self.component_bits, frozen=0, rebased=0,
            sent=m, skipped=0, forced=0,
            bits_round=bits_round, bits_cum=self.bits_cum,
        )

    def _initial_row(self) -> RoundMetrics:
        return _evaluation_row(
            self.model, self.w, self.x_test, self.y_test,
            rnd=0, train_loss=float("nan"), e_t=float("nan"), ebar=float("nan"),
            q_t=float("nan"), b_t=self.component_bits, frozen=0, rebased=0,
            sent=0, skipped=0, forced=0, bits_round=0, bits_cum=0,
        )

    def run(self) -> list[RoundMetrics]:
        rows = [self._initial_row()]
        for _ in range(self.cfg["rounds"]):
            rows.append(self.step())
        return rows
