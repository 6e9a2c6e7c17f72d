"""From-scratch supervised training for the tiny CNN.

Loss is categorical cross-entropy with label smoothing, the optimizer is
AdaDelta, and the monitored metric is recall at a precision floor.  The
training-mode forward uses batch statistics for batch norm (moving
statistics are accumulated with momentum); gradients are exact analytic
backprop, checkable against central finite differences.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .ingest import Session, SessionDataset, leave_one_session_out_splits
from .nn import (
    BATCH_NORM_EPS,
    LAYER_NORM_EPS,
    ModelSpec,
    ModelWeights,
    ShapeMismatchError,
    TRAINABLE_TENSORS,
    _conv_valid,
    forward_batch,
    mmg_spec,
    inertial_spec,
    quantize_like_saved,
)
from .core import stage2_class_ids
from .segment import sliding_windows

_LOG_FLOOR = 1e-12

STAGE_MMG = "mmg"
STAGE_INERTIAL = "inertial"


class BadDistributionError(ValueError):
    """Probabilities are not positive or do not sum to one."""


class DegenerateLabelsError(ValueError):
    """Metric needs at least one positive and one negative label."""


class EmptySplitError(ValueError):
    """A training, validation or test split holds no windows."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    early_stop_patience: int = 30
    restore_best: bool = True
    lr: float = 0.9
    rho: float = 0.95
    epsilon: float = 1e-7
    label_smoothing: float = 0.3
    batch_size: int = 32
    target_precision: float = 0.9
    min_improvement: float = 1e-4
    bn_momentum: float = 0.99
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.early_stop_patience >= self.epochs:
            raise ValueError("patience must be smaller than epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def smoothed_cross_entropy(probs, class_id: int, alpha: float = 0.3) -> float:
    """-sum_k t_k ln p_k with t = (1-alpha)*onehot + alpha/K."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or len(p) < 2:
        raise BadDistributionError("probs must be a vector of >= 2 entries")
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-6:
        raise BadDistributionError("probs must be positive and sum to 1")
    k = len(p)
    if not 0 <= class_id < k:
        raise BadDistributionError(f"class_id {class_id} out of range for K={k}")
    target = np.full(k, alpha / k)
    target[class_id] += 1.0 - alpha
    return float(-(target * np.log(np.maximum(p, _LOG_FLOOR))).sum())


@dataclass
class AdadeltaState:
    """Running squared-gradient and squared-update averages per tensor."""

    eg2: dict[str, np.ndarray] = field(default_factory=dict)
    edx2: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdadeltaState":
        return cls(
            eg2={k: np.zeros_like(v) for k, v in params.items()},
            edx2={k: np.zeros_like(v) for k, v in params.items()},
        )

    def copy(self) -> "AdadeltaState":
        return AdadeltaState(
            eg2={k: v.copy() for k, v in self.eg2.items()},
            edx2={k: v.copy() for k, v in self.edx2.items()},
        )


def adadelta_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdadeltaState,
    lr: float = 0.9,
    rho: float = 0.95,
    eps: float = 1e-7,
) -> tuple[dict[str, np.ndarray], AdadeltaState]:
    """One AdaDelta update; returns fresh params and state.

    Eg2 <- rho*Eg2 + (1-rho)*g^2; dx = -sqrt(Edx2+eps)/sqrt(Eg2+eps) * g;
    Edx2 <- rho*Edx2 + (1-rho)*dx^2; params <- params + lr*dx.
    """
    new_params: dict[str, np.ndarray] = {}
    new_state = AdadeltaState()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"{name}: grad {g.shape} != param {p.shape}")
        eg2 = rho * state.eg2[name] + (1.0 - rho) * g * g
        dx = -np.sqrt(state.edx2[name] + eps) / np.sqrt(eg2 + eps) * g
        edx2 = rho * state.edx2[name] + (1.0 - rho) * dx * dx
        new_params[name] = p + lr * dx
        new_state.eg2[name] = eg2
        new_state.edx2[name] = edx2
    return new_params, new_state


def _smoothed_targets(y: np.ndarray, n_classes: int, alpha: float) -> np.ndarray:
    t = np.full((len(y), n_classes), alpha / n_classes)
    t[np.arange(len(y)), y] += 1.0 - alpha
    return t


def _training_forward(spec: ModelSpec, weights: ModelWeights, x: np.ndarray,
                      dropout_mask: np.ndarray | None):
    """Batched forward with batch-norm batch statistics; returns a cache."""
    w = weights
    z1 = _conv_valid(x, w["conv_w"], w["conv_b"])           # (B, T, F)
    a1 = np.maximum(z1, 0.0)

    mu = a1.mean(axis=2, keepdims=True)
    var = a1.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat_ln = (a1 - mu) * inv_std
    a2 = w["ln_gain"] * xhat_ln + w["ln_bias"]

    bn_mean = a2.mean(axis=(0, 1))
    bn_var = a2.var(axis=(0, 1))
    bn_inv_std = 1.0 / np.sqrt(bn_var + BATCH_NORM_EPS)
    xhat_bn = (a2 - bn_mean) * bn_inv_std
    a3 = w["bn_gain"] * xhat_bn + w["bn_bias"]

    pool = spec.pool
    p_out = spec.pool_out_len
    pooled_src = a3[:, : p_out * pool, :].reshape(len(x), p_out, pool, -1)
    pool_idx = pooled_src.argmax(axis=2)
    a4 = np.take_along_axis(pooled_src, pool_idx[:, :, None, :], axis=2)[:, :, 0, :]

    if dropout_mask is not None:
        a5 = a4 * dropout_mask / (1.0 - spec.dropout_rate)
    else:
        a5 = a4

    flat = a5.reshape(len(x), -1)
    z2 = flat @ w["fc1_w"] + w["fc1_b"]
    a6 = np.maximum(z2, 0.0)
    logits = a6 @ w["fc2_w"] + w["fc2_b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    cache = dict(
        x=x, z1=z1, a1=a1, inv_std=inv_std, xhat_ln=xhat_ln,
        bn_inv_std=bn_inv_std, xhat_bn=xhat_bn, bn_mean=bn_mean, bn_var=bn_var,
        pool_idx=pool_idx, a4=a4, dropout_mask=dropout_mask,
        flat=flat, z2=z2, a6=a6, probs=probs,
    )
    return probs, cache


def training_loss(spec: ModelSpec, weights: ModelWeights, x: np.ndarray,
                  y: np.ndarray, alpha: float = 0.3,
                  dropout_mask: np.ndarray | None = None) -> float:
    """Mean smoothed cross-entropy of the training-mode forward pass."""
    probs, _ = _training_forward(spec, weights, x, dropout_mask)
    targets = _smoothed_targets(np.asarray(y), spec.n_classes, alpha)
    return float(-(targets * np.log(np.maximum(probs, _LOG_FLOOR))).mean(axis=0).sum())


def backward(spec: ModelSpec, weights: ModelWeights, x: np.ndarray, y: np.ndarray,
             alpha: float = 0.3, dropout_mask: np.ndarray | None = None):
    """Analytic gradients of the mean smoothed cross-entropy.

    Returns (grads, info) where grads covers every trainable tensor and
    info carries the loss and the batch statistics for the moving-average
    update.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 3 or x.shape[1:] != (spec.input_len, spec.in_channels):
        raise ShapeMismatchError(
            f"batch shape {x.shape} != (B, {spec.input_len}, {spec.in_channels})"
        )
    if len(x) != len(y):
        raise ShapeMismatchError("x and y batch sizes differ")
    w = weights
    b = len(x)
    probs, cache = _training_forward(spec, w, x, dropout_mask)
    targets = _smoothed_targets(y, spec.n_classes, alpha)
    loss = float(-(targets * np.log(np.maximum(probs, _LOG_FLOOR))).mean(axis=0).sum())

    dlogits = (probs - targets) / b
    grads: dict[str, np.ndarray] = {}
    grads["fc2_w"] = cache["a6"].T @ dlogits
    grads["fc2_b"] = dlogits.sum(axis=0)
    da6 = dlogits @ w["fc2_w"].T
    dz2 = da6 * (cache["z2"] > 0)
    grads["fc1_w"] = cache["flat"].T @ dz2
    grads["fc1_b"] = dz2.sum(axis=0)
    dflat = dz2 @ w["fc1_w"].T

    p_out = spec.pool_out_len
    da5 = dflat.reshape(b, p_out, spec.conv_filters)
    if cache["dropout_mask"] is not None:
        da4 = da5 * cache["dropout_mask"] / (1.0 - spec.dropout_rate)
    else:
        da4 = da5

    # max-pool: route gradient to the argmax positions, zero elsewhere
    da3 = np.zeros((b, spec.conv_out_len, spec.conv_filters))
    da3_pool = da3[:, : p_out * spec.pool, :].reshape(b, p_out, spec.pool, -1)
    np.put_along_axis(da3_pool, cache["pool_idx"][:, :, None, :],
                      da4[:, :, None, :], axis=2)

    # batch norm over the (batch, time) set per filter
    xhat_bn = cache["xhat_bn"]
    grads["bn_gain"] = (da3 * xhat_bn).sum(axis=(0, 1))
    grads["bn_bias"] = da3.sum(axis=(0, 1))
    dxhat_bn = da3 * w["bn_gain"]
    da2 = cache["bn_inv_std"] * (
        dxhat_bn
        - dxhat_bn.mean(axis=(0, 1))
        - xhat_bn * (dxhat_bn * xhat_bn).mean(axis=(0, 1))
    )

    # layer norm across filters at each (sample, time step)
    xhat_ln = cache["xhat_ln"]
    grads["ln_gain"] = (da2 * xhat_ln).sum(axis=(0, 1))
    grads["ln_bias"] = da2.sum(axis=(0, 1))
    dxhat_ln = da2 * w["ln_gain"]
    da1 = cache["inv_std"] * (
        dxhat_ln
        - dxhat_ln.mean(axis=2, keepdims=True)
        - xhat_ln * (dxhat_ln * xhat_ln).mean(axis=2, keepdims=True)
    )

    dz1 = da1 * (cache["z1"] > 0)
    xw = np.lib.stride_tricks.sliding_window_view(x, spec.conv_kernel, axis=1)
    grads["conv_w"] = np.einsum("btck,btf->kcf", xw, dz1)
    grads["conv_b"] = dz1.sum(axis=(0, 1))

    info = {"loss": loss, "bn_mean": cache["bn_mean"], "bn_var": cache["bn_var"]}
    return grads, info


def recall_at_precision(scores, labels, target_precision: float = 0.9) -> float:
    """Best recall over score thresholds whose precision meets the floor.

    Binary when `scores` is a vector of positive-class scores; with a
    (N, K) score matrix the metric is one-vs-rest per class and
    macro-averaged over classes that have both positives and negatives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 2:
        per_class = []
        for k in range(scores.shape[1]):
            binary = (labels == k).astype(np.int64)
            if binary.sum() == 0 or binary.sum() == len(binary):
                continue
            per_class.append(recall_at_precision(scores[:, k], binary, target_precision))
        if not per_class:
            raise DegenerateLabelsError("no class has both positives and negatives")
        return float(np.mean(per_class))

    if len(scores) != len(labels):
        raise ShapeMismatchError("scores and labels differ in length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("need at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.int64)
    tp = np.cumsum(sorted_pos)
    ranks = np.arange(1, len(scores) + 1)
    # a threshold at score s predicts positive for all scores >= s, so only
    # the last index of each tied block is a realizable operating point
    last_of_block = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    precision = tp[last_of_block] / ranks[last_of_block]
    recall = tp[last_of_block] / n_pos
    feasible = precision >= target_precision
    if not feasible.any():
        return 0.0
    return float(recall[feasible].max())


def _majority_label(labels: np.ndarray) -> int:
    """Window label by majority; ties prefer null, then the smallest id."""
    counts = np.bincount(labels)
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    return 0 if 0 in tied else int(tied[0])


def windowed_stage_data(
    sessions: list[Session],
    stage: str,
    scenario: str,
    window_len: int = 100,
    step: int = 25,
):
    """Sliding windows of the stage's input channels plus window labels.

    Stage "mmg": (N, window_len, 4) with binary null/activity labels.
    Stage "inertial": activity windows only, (N, window_len, 7), labels
    remapped to 0..K-1 over the scenario's non-null classes.
    """
    xs, ys = [], []
    stage2_ids = stage2_class_ids(scenario)
    for session in sessions:
        if len(session.frames) < window_len:
            continue
        windows = sliding_windows(session.frames, window_len, step)
        for i, win in enumerate(windows):
            start = i * step
            label = _majority_label(session.labels[start:start + window_len])
            if stage == STAGE_MMG:
                xs.append(win.mmg_matrix())
                ys.append(1 if label > 0 else 0)
            elif stage == STAGE_INERTIAL:
                if label == 0:
                    continue
                xs.append(win.inertial_matrix())
                ys.append(stage2_ids.index(label))
            else:
                raise ValueError(f"unknown stage {stage!r}")
    if not xs:
        return np.zeros((0, window_len, 4 if stage == STAGE_MMG else 7)), np.zeros(0, np.int64)
    return np.stack(xs), np.array(ys, dtype=np.int64)


def stage_spec(stage: str, scenario: str, input_len: int = 100) -> ModelSpec:
    if stage == STAGE_MMG:
        return mmg_spec(input_len)
    if stage == STAGE_INERTIAL:
        return inertial_spec(len(stage2_class_ids(scenario)), input_len)
    raise ValueError(f"unknown stage {stage!r}")


def _val_metric(spec: ModelSpec, weights: ModelWeights, val_x, val_y,
                target_precision: float) -> float:
    probs = forward_batch(spec, weights, val_x)
    try:
        if spec.n_classes == 2:
            return recall_at_precision(probs[:, 1], val_y, target_precision)
        return recall_at_precision(probs, val_y, target_precision)
    except DegenerateLabelsError:
        return 0.0


def fit(spec: ModelSpec, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
        val_x: np.ndarray, val_y: np.ndarray):
    """Train with AdaDelta and early stopping on the monitored metric.

    Stops once the metric has failed to improve by min_improvement for
    more than `patience` epochs; returns (weights, history) with the
    best-epoch weights when restore_best is set.  Returned weights are
    rounded to float32-representable values so the on-disk round trip is
    lossless.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0 or len(val_x) == 0:
        raise EmptySplitError("training and validation splits must be nonempty")
    rng = np.random.default_rng(cfg.rng_seed)
    weights = ModelWeights.initial(spec, rng)
    params = {name: weights[name] for name in TRAINABLE_TENSORS}
    state = AdadeltaState.zeros_like(params)

    # zero-debiased moving statistics: the stored stats are usable from the
    # first batch instead of needing hundreds of momentum updates to warm up
    raw_mean = np.zeros(spec.conv_filters)
    raw_var = np.zeros(spec.conv_filters)
    stat_updates = 0

    best_metric = -np.inf
    best_weights = weights.copy()
    bad_epochs = 0
    history: list[dict] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        epoch_losses = []
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            bx, by = x[idx], y[idx]
            mask = None
            if spec.dropout_rate > 0.0:
                mask = (
                    rng.random((len(bx), spec.pool_out_len, spec.conv_filters))
                    >= spec.dropout_rate
                )
            grads, info = backward(spec, weights, bx, by,
                                   alpha=cfg.label_smoothing, dropout_mask=mask)
            if not np.isfinite(info["loss"]):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            params, state = adadelta_step(params, grads, state,
                                          lr=cfg.lr, rho=cfg.rho, eps=cfg.epsilon)
            for name in TRAINABLE_TENSORS:
                weights[name] = params[name]
            m = cfg.bn_momentum
            raw_mean = m * raw_mean + (1 - m) * info["bn_mean"]
            raw_var = m * raw_var + (1 - m) * info["bn_var"]
            stat_updates += 1
            debias = 1.0 - m**stat_updates
            weights["bn_mean"] = raw_mean / debias
            weights["bn_var"] = raw_var / debias
            epoch_losses.append(info["loss"])

        metric = _val_metric(spec, weights, val_x, val_y, cfg.target_precision)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
             "val_metric": metric}
        )
        # the snapshot follows ties (any tied-best epoch is a best epoch and
        # later ones are better converged); the patience counter does not
        if metric >= best_metric or epoch == 1:
            best_weights = weights.copy()
        if metric >= best_metric + cfg.min_improvement or epoch == 1:
            best_metric = metric
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.early_stop_patience:
                break

    final = best_weights if cfg.restore_best else weights
    return quantize_like_saved(final), history


@dataclass
class EvalReport:
    """Window-level confusion matrix and per-class scores for one fold."""

    fold_id: str
    confusion: np.ndarray  # (K, K), rows = true class, cols = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float

    def to_line(self) -> str:
        parts = [f"fold={self.fold_id}", f"macro_f1={self.macro_f1:.6f}"]
        parts += [f"f1_{k}={v:.6f}" for k, v in enumerate(self.f1)]
        return " ".join(parts)


def evaluate(spec: ModelSpec, weights: ModelWeights, x: np.ndarray,
             y: np.ndarray, fold_id: str = "all") -> EvalReport:
    """Confusion matrix over argmax predictions plus macro-F1."""
    if len(x) == 0:
        raise EmptySplitError("no test windows")
    probs = forward_batch(spec, weights, np.asarray(x, dtype=np.float64))
    preds = probs.argmax(axis=1)
    k = spec.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for true, pred in zip(np.asarray(y, dtype=np.int64), preds):
        confusion[true, pred] += 1
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    tp = np.diag(confusion).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros(k), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(k), where=support > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(k), where=pr > 0)
    return EvalReport(
        fold_id=fold_id,
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
    )


def _fold_seed(base_seed: int, session_id: str) -> int:
    # stable per-fold seed so fold reports do not depend on processing order
    return (base_seed + zlib.crc32(session_id.encode())) % (2**63)


def crossval(dataset: SessionDataset, stage: str, cfg: TrainConfig,
             window_len: int = 100, step: int = 25) -> list[EvalReport]:
    """Leave-one-session-out evaluation; trains a fresh model per fold.

    Within each fold the last remaining training session is held out as the
    validation split for the monitored metric.
    """
    reports = []
    for train_sessions, test_session in leave_one_session_out_splits(dataset):
        if len(train_sessions) >= 2:
            fit_sessions, val_sessions = train_sessions[:-1], train_sessions[-1:]
        else:
            fit_sessions = val_sessions = train_sessions
        spec = stage_spec(stage, dataset.scenario, window_len)
        x, y = windowed_stage_data(fit_sessions, stage, dataset.scenario,
                                   window_len, step)
        vx, vy = windowed_stage_data(val_sessions, stage, dataset.scenario,
                                     window_len, step)
        tx, ty = windowed_stage_data([test_session], stage, dataset.scenario,
                                     window_len, step)
        if len(x) == 0 or len(vx) == 0 or len(tx) == 0:
            raise EmptySplitError(
                f"fold {test_session.session_id} has an empty {stage} split"
            )
        fold_cfg = replace(cfg, rng_seed=_fold_seed(cfg.rng_seed, test_session.session_id))
        weights, _ = fit(spec, x, y, fold_cfg, vx, vy)
        reports.append(evaluate(spec, weights, tx, ty, fold_id=test_session.session_id))
    return reports


def history_lines(history: list[dict]) -> list[str]:
    """History as CSV lines: epoch,train_loss,val_metric."""
    lines = ["epoch,train_loss,val_metric"]
    for row in history:
        lines.append(f"{row['epoch']},{row['train_loss']!r},{row['val_metric']!r}")
    return lines
