"""Optimizer, metrics, training loop, and the ablation harness.

Reproducibility contract: a run is a pure function of (seed, configs,
dataset).  Everything stochastic flows from one seeded generator, batch
order is the generator's permutation, and metric reductions use ``fsum``
so that record order cannot perturb a single bit of the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import loss as loss_mod
from .autodiff import AutodiffError, Tape
from .dataset import NormStats, _atomic_write, normalize, records_to_arrays
from .loss import LossError, LossWeights, ReconKnown, known_from_raw_inputs, total_loss
from .model import InverseNet, NetConfig, net_forward, net_predict
from .optics import ExperimentConfig

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainError(ValueError):
    """Training configuration or runtime failure."""


class NonFiniteGradientError(TrainError):
    """A gradient went non-finite; the optimizer step was rejected."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 30
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    eval_threshold: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise TrainError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise TrainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise TrainError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_threshold <= 0:
            raise TrainError(f"eval_threshold must be > 0, got {self.eval_threshold}")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def for_params(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
    weight_decay: float = 0.0,
) -> None:
    """In-place Adam update with bias correction and decoupled weight decay.

    The finiteness check runs over every gradient before anything mutates,
    so a rejected step leaves parameters and moments untouched.
    """
    if set(params) != set(grads):
        raise TrainError("gradient keys do not match parameter keys")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r} at step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p -= learning_rate * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + weight_decay * p)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    accuracy_n2: float
    accuracy_k2: float
    accuracy_d: float
    mae: float
    r2: float
    n_records: int


def metrics_from_predictions(pred_norm: np.ndarray, target_norm: np.ndarray, threshold: float) -> MetricsReport:
    """Accuracy per target, pooled MAE, pooled R^2, all in normalized space."""
    pred = np.asarray(pred_norm, dtype=np.float64)
    target = np.asarray(target_norm, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise TrainError(f"prediction/target shapes must match (N, 3), got {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    if n == 0:
        raise TrainError("cannot evaluate zero records")
    err = pred - target
    acc = [(np.abs(err[:, j]) < threshold).sum() / n for j in range(3)]
    mae = math.fsum(np.abs(err).ravel().tolist()) / (3 * n)
    sse = math.fsum((err * err).ravel().tolist())
    means = [math.fsum(target[:, j].tolist()) / n for j in range(3)]
    sst = math.fsum(((target - np.array(means)) ** 2).ravel().tolist())
    if sst == 0.0:
        raise TrainError("targets are constant; R^2 is undefined")
    return MetricsReport(
        accuracy_n2=acc[0], accuracy_k2=acc[1], accuracy_d=acc[2],
        mae=mae, r2=1.0 - sse / sst, n_records=n,
    )


def evaluate(net: InverseNet, records: list, norm: NormStats, threshold: float = 0.05) -> MetricsReport:
    if not records:
        raise TrainError("cannot evaluate zero records")
    x_raw, y_raw = records_to_arrays(records)
    x_norm = normalize(x_raw, norm.input_mean, norm.input_std)
    y_norm = normalize(y_raw, norm.target_mean, norm.target_std)
    return metrics_from_predictions(net_predict(net, x_norm), y_norm, threshold)


def format_metrics_row(label: str, report: MetricsReport) -> str:
    return (
        f"{label:<18s} acc_n2={report.accuracy_n2:.4f} acc_k2={report.accuracy_k2:.4f} "
        f"acc_d={report.accuracy_d:.4f} MAE={report.mae:.6f} R2={report.r2:.6f} "
        f"(n={report.n_records})"
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    fit_loss: float
    recon_loss: float
    total_loss: float
    val_accuracy_n2: float
    val_accuracy_k2: float
    val_accuracy_d: float
    val_mae: float
    val_r2: float


@dataclass
class TrainResult:
    net: InverseNet
    history: list[EpochStats]
    best_epoch: int
    best_val_mae: float
    aborted: bool = False
    abort_reason: str | None = None


def _slice_known(known: ReconKnown, idx: np.ndarray) -> ReconKnown:
    return ReconKnown(
        n3=known.n3[idx], k3=known.k3[idx], lambda_nm=known.lambda_nm[idx],
        psi_deg=known.psi_deg[idx], delta_deg=known.delta_deg[idx],
    )


def train_loop(
    net: InverseNet,
    records: list,
    norm: NormStats,
    exp_cfg: ExperimentConfig,
    cfg: TrainConfig,
) -> TrainResult:
    """Mini-batch Adam over the train split, model selection on val MAE.

    Divergence (non-finite loss or gradient) aborts the run and returns the
    best checkpoint seen so far instead of raising.
    """
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    if not train or not val:
        raise TrainError(f"need non-empty train and val splits, got {len(train)}/{len(val)}")

    x_raw, y_raw = records_to_arrays(train)
    x_norm = normalize(x_raw, norm.input_mean, norm.input_std)
    y_norm = normalize(y_raw, norm.target_mean, norm.target_std)
    known_all = known_from_raw_inputs(x_raw)
    n = len(train)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    state = AdamState.for_params(net.params)

    best = net.clone()
    best_report = evaluate(net, val, norm, cfg.eval_threshold)
    best_mae, best_epoch = best_report.mae, 0
    history: list[EpochStats] = []

    def aborted(reason: str) -> TrainResult:
        return TrainResult(net=best, history=history, best_epoch=best_epoch,
                           best_val_mae=best_mae, aborted=True, abort_reason=reason)

    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        fit_vals: list[float] = []
        recon_vals: list[float] = []
        total_vals: list[float] = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            tape = Tape()
            p = net.bind(tape)
            try:
                pred = net_forward(p, tape.var(x_norm[idx]), net.config)
                breakdown = total_loss(pred, y_norm[idx], _slice_known(known_all, idx),
                                       norm, exp_cfg, cfg.weights)
            except (AutodiffError, LossError) as exc:
                # diverged parameters surface as graph-construction guards
                # (division floors, exclusion budget) before the loss value
                # itself goes non-finite
                return aborted(f"epoch {epoch}: {type(exc).__name__}: {exc}")
            total_value = float(breakdown.total.value)
            if not math.isfinite(total_value):
                return aborted(f"non-finite loss at epoch {epoch}")
            tape.backward(breakdown.total)
            grads = {name: p[name].grad for name in net.params}
            try:
                adam_step(net.params, grads, state, cfg.learning_rate, cfg.weight_decay)
            except NonFiniteGradientError as exc:
                return aborted(f"epoch {epoch}: {exc}")
            fit_vals.append(breakdown.fit)
            recon_vals.append(breakdown.recon)
            total_vals.append(total_value)

        report = evaluate(net, val, norm, cfg.eval_threshold)
        history.append(EpochStats(
            epoch=epoch,
            fit_loss=math.fsum(fit_vals) / len(fit_vals),
            recon_loss=math.fsum(recon_vals) / len(recon_vals),
            total_loss=math.fsum(total_vals) / len(total_vals),
            val_accuracy_n2=report.accuracy_n2, val_accuracy_k2=report.accuracy_k2,
            val_accuracy_d=report.accuracy_d, val_mae=report.mae, val_r2=report.r2,
        ))
        if report.mae < best_mae:
            best, best_mae, best_epoch = net.clone(), report.mae, epoch

    return TrainResult(net=best, history=history, best_epoch=best_epoch, best_val_mae=best_mae)


def write_metrics_csv(path: str, history: list[EpochStats]) -> None:
    cols = ("epoch", "fit_loss", "recon_loss", "total_loss", "val_accuracy_n2",
            "val_accuracy_k2", "val_accuracy_d", "val_mae", "val_r2")
    lines = [",".join(cols)]
    for row in history:
        lines.append(",".join(f"{getattr(row, c):.17g}" if c != "epoch" else str(row.epoch) for c in cols))
    _atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("full", "no-attention", "no-recon-loss", "shallow-encoder")


@dataclass(frozen=True)
class AblationRow:
    name: str
    accuracy_n2: float
    accuracy_k2: float
    accuracy_d: float
    mae: float
    r2: float
    recon_graph_builds: int


@dataclass
class AblationReport:
    rows: list[AblationRow]

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def table(self) -> str:
        header = f"{'variant':<18s} {'acc_n2':>8s} {'acc_k2':>8s} {'acc_d':>8s} {'MAE':>10s} {'R2':>10s}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.name:<18s} {r.accuracy_n2:>8.4f} {r.accuracy_k2:>8.4f} "
                f"{r.accuracy_d:>8.4f} {r.mae:>10.6f} {r.r2:>10.6f}"
            )
        return "\n".join(lines)


def _variant_configs(net_cfg: NetConfig, train_cfg: TrainConfig, name: str) -> tuple[NetConfig, TrainConfig]:
    if name == "full":
        return net_cfg, train_cfg
    if name == "no-attention":
        return replace(net_cfg, use_attention=False), train_cfg
    if name == "no-recon-loss":
        return net_cfg, replace(train_cfg, weights=LossWeights(train_cfg.weights.w_fit, 0.0))
    if name == "shallow-encoder":
        return replace(net_cfg, encoder_layers=2), train_cfg
    raise TrainError(f"unknown ablation variant {name!r}")


def ablation_suite(
    records: list,
    norm: NormStats,
    exp_cfg: ExperimentConfig,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    eval_split: str = "test",
) -> AblationReport:
    """Train every variant from shared seeds and data; report one table.

    All variants construct their nets from the same NetConfig seed, so every
    parameter whose name and shape agree starts identical across variants.
    The no-reconstruction variant is asserted (by the module counter) to
    never build the physics graph.
    """
    eval_records = [r for r in records if r.split == eval_split]
    if not eval_records:
        raise TrainError(f"no records in eval split {eval_split!r}")
    rows = []
    for name in ABLATION_VARIANTS:
        v_net_cfg, v_train_cfg = _variant_configs(net_cfg, train_cfg, name)
        net = InverseNet(v_net_cfg)
        before = loss_mod.RECON_EVALS
        result = train_loop(net, records, norm, exp_cfg, v_train_cfg)
        builds = loss_mod.RECON_EVALS - before
        if name == "no-recon-loss" and builds != 0:
            raise TrainError("no-recon-loss variant built the reconstruction graph")
        report = evaluate(result.net, eval_records, norm, v_train_cfg.eval_threshold)
        rows.append(AblationRow(
            name=name, accuracy_n2=report.accuracy_n2, accuracy_k2=report.accuracy_k2,
            accuracy_d=report.accuracy_d, mae=report.mae, r2=report.r2,
            recon_graph_builds=builds,
        ))
    return AblationReport(rows=rows)
