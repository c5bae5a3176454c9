"""Small feed-forward network mapping a grade preview to a fuel weight.

Input is a 100-sample (3 km at 30 m) grade look-ahead plus the cruise set
point; hidden widths are 250-80-16 with a single rectified output so the
predicted weight can never go negative.  Training is plain minibatch SGD on
mean squared error with an L2 penalty on the weights, all implemented on
numpy arrays so runs are bit-reproducible from a seed.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .road import RoadProfile, preview

PREVIEW_LEN = 100
LAYER_DIMS = (PREVIEW_LEN + 1, 250, 80, 16, 1)


class TrainingError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-feature min-max map to [0, 1]; constant features map to 0."""

    mins: np.ndarray
    ranges: np.ndarray
    fitted_on: str  # provenance marker, e.g. "train"

    @staticmethod
    def fit(data: np.ndarray, fitted_on: str) -> "MinMaxScaler":
        arr = np.atleast_2d(np.asarray(data, dtype=float))
        mins = arr.min(axis=0)
        ranges = arr.max(axis=0) - mins
        ranges = np.where(ranges > 0.0, ranges, 1.0)
        return MinMaxScaler(mins=mins, ranges=ranges, fitted_on=fitted_on)

    def transform(self, data):
        return (np.asarray(data, dtype=float) - self.mins) / self.ranges

    def inverse(self, data):
        return np.asarray(data, dtype=float) * self.ranges + self.mins


@dataclass
class MlpModel:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_scaler: MinMaxScaler
    target_scaler: MinMaxScaler

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Rectified forward pass on already-scaled inputs (batch, features)."""
        a = x
        for w, b in zip(self.weights, self.biases):
            a = np.maximum(a @ w + b, 0.0)
        return a

    def weight_norm_sq(self) -> float:
        return float(sum(np.sum(w * w) for w in self.weights))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-2
    epochs: int = 1500
    batch_size: int = 32
    l2: float = 1e-5
    test_fraction: float = 0.2
    val_fraction: float = 0.05
    patience: int = 150
    restore_best: bool = True  # return the best-validation snapshot
    seed: int = 0


@dataclass
class TrainHistory:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    test_indices: np.ndarray
    val_indices: np.ndarray


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, 101)
    targets: np.ndarray   # (n,)
    positions: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


def make_dataset(road: RoadProfile, series, v_ref: float) -> Dataset:
    """One sample per road position: preview grades plus the set point.

    Rows whose recovered weight carries any flag are dropped; a dataset whose
    features never vary (a flat road) is allowed but warned about since the
    network cannot learn anything from it.
    """
    if len(series) != road.n_steps:
        raise ValueError(
            f"series length {len(series)} does not match road segments {road.n_steps}"
        )
    rows = []
    targets = []
    positions = []
    for k in range(road.n_steps):
        if series.flags[k]:
            continue
        window = preview(road, k, PREVIEW_LEN).samples
        rows.append(np.concatenate([window, [v_ref]]))
        targets.append(series.gamma[k])
        positions.append(k)
    features = np.asarray(rows, dtype=float)
    if len(features) and float(np.max(np.var(features, axis=0))) == 0.0:
        warnings.warn("dataset features have zero variance; nothing to learn from")
    return Dataset(
        features=features,
        targets=np.asarray(targets, dtype=float),
        positions=np.asarray(positions, dtype=int),
    )


def _init_params(dims: tuple[int, ...], rng: np.random.Generator):
    weights = []
    biases = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        last = i == len(dims) - 2
        # the output layer starts at zero weights with a positive bias so the
        # final rectifier is alive for every input; random output weights can
        # push the whole batch negative and kill every gradient at birth
        if last:
            weights.append(np.zeros((dims[i], dims[i + 1])))
        else:
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(dims[i], dims[i + 1])))
        biases.append(np.full(dims[i + 1], 0.5 if last else 0.01))
    return weights, biases


def _forward_cached(weights, biases, x):
    pre = []
    acts = [x]
    a = x
    for w, b in zip(weights, biases):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    return pre, acts


def _loss_and_grads(weights, biases, x, y, l2):
    """MSE + L2 loss with analytic backprop gradients."""
    pre, acts = _forward_cached(weights, biases, x)
    out = acts[-1][:, 0]
    err = out - y
    n = len(y)
    loss = float(np.mean(err * err)) + l2 * sum(float(np.sum(w * w)) for w in weights)

    delta = (2.0 * err / n)[:, None] * (pre[-1] > 0.0)
    grads_w = []
    grads_b = []
    for layer in range(len(weights) - 1, -1, -1):
        grads_w.append(acts[layer].T @ delta + 2.0 * l2 * weights[layer])
        grads_b.append(delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ weights[layer].T) * (pre[layer - 1] > 0.0)
    grads_w.reverse()
    grads_b.reverse()
    return loss, grads_w, grads_b


def train(dataset: Dataset, config: TrainConfig) -> tuple[MlpModel, TrainHistory]:
    """Fit the network; deterministic for a fixed seed.

    The test split is carved off first and never touched; scalers are fitted
    on the training portion only; a small validation slice of the training
    data drives early stopping with best-weight restore.
    """
    n = len(dataset)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split and train, got {n}")
    if n < 100:
        warnings.warn(f"training on only {n} samples; intended minimum is 100")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_test = max(1, int(round(config.test_fraction * n)))
    test_idx = perm[:n_test]
    train_idx = perm[n_test:]
    n_val = max(1, int(round(config.val_fraction * len(train_idx))))
    val_idx = train_idx[:n_val]
    fit_idx = train_idx[n_val:]

    input_scaler = MinMaxScaler.fit(dataset.features[fit_idx], fitted_on="train")
    target_scaler = MinMaxScaler.fit(dataset.targets[fit_idx, None], fitted_on="train")
    x_fit = input_scaler.transform(dataset.features[fit_idx])
    y_fit = target_scaler.transform(dataset.targets[fit_idx, None])[:, 0]
    x_val = input_scaler.transform(dataset.features[val_idx])
    y_val = target_scaler.transform(dataset.targets[val_idx, None])[:, 0]

    weights, biases = _init_params(LAYER_DIMS, rng)
    best = ([w.copy() for w in weights], [b.copy() for b in biases])
    best_val = np.inf
    best_epoch = 0
    since_best = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    n_fit = len(fit_idx)
    for epoch in range(config.epochs):
        order = rng.permutation(n_fit)
        for start in range(0, n_fit, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, gw, gb = _loss_and_grads(weights, biases, x_fit[batch], y_fit[batch], config.l2)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            for i in range(len(weights)):
                weights[i] -= config.learning_rate * gw[i]
                biases[i] -= config.learning_rate * gb[i]

        epoch_loss, _, _ = _loss_and_grads(weights, biases, x_fit, y_fit, config.l2)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        train_losses.append(epoch_loss)
        val_out = _forward_cached(weights, biases, x_val)[1][-1][:, 0]
        val_loss = float(np.mean((val_out - y_val) ** 2))
        val_losses.append(val_loss)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best = ([w.copy() for w in weights], [b.copy() for b in biases])
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break

    final = best if config.restore_best else (weights, biases)
    model = MlpModel(
        layer_dims=LAYER_DIMS,
        weights=final[0],
        biases=final[1],
        input_scaler=input_scaler,
        target_scaler=target_scaler,
    )
    history = TrainHistory(
        train_loss=train_losses,
        val_loss=val_losses,
        best_epoch=best_epoch,
        test_indices=test_idx,
        val_indices=val_idx,
    )
    return model, history


def predict(model: MlpModel, grade_preview, v_ref: float) -> float:
    """Fuel weight for one preview; nonnegative by construction."""
    window = np.asarray(grade_preview, dtype=float)
    if len(window) != PREVIEW_LEN:
        raise ValueError(f"preview must hold {PREVIEW_LEN} samples, got {len(window)}")
    x = model.input_scaler.transform(np.concatenate([window, [v_ref]])[None, :])
    out_scaled = model.forward(x)[0, 0]
    return float(model.target_scaler.inverse([[out_scaled]])[0, 0])


def predict_batch(model: MlpModel, features: np.ndarray) -> np.ndarray:
    x = model.input_scaler.transform(features)
    out = model.forward(x)[:, 0]
    return model.target_scaler.inverse(out[:, None])[:, 0]


@dataclass(frozen=True)
class EvalMetrics:
    mse_scaled: float
    mae_scaled: float
    mse_original: float
    mae_original: float


def evaluate(model: MlpModel, features: np.ndarray, targets: np.ndarray) -> EvalMetrics:
    """MSE/MAE on both the scaled and the original target units."""
    pred = predict_batch(model, features)
    err = pred - targets
    t_scaled = model.target_scaler.transform(targets[:, None])[:, 0]
    p_scaled = model.target_scaler.transform(pred[:, None])[:, 0]
    err_s = p_scaled - t_scaled
    return EvalMetrics(
        mse_scaled=float(np.mean(err_s * err_s)),
        mae_scaled=float(np.mean(np.abs(err_s))),
        mse_original=float(np.mean(err * err)),
        mae_original=float(np.mean(np.abs(err))),
    )


def save_model(model: MlpModel, path, fingerprint: str = "") -> None:
    """Self-describing text serialization: dims, scalers, then every layer."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# ecocruise mlp v1\n")
        if fingerprint:
            fh.write(f"# fingerprint: {fingerprint}\n")
        fh.write("dims " + " ".join(str(d) for d in model.layer_dims) + "\n")
        for name, scaler in (("input", model.input_scaler), ("target", model.target_scaler)):
            fh.write(f"scaler {name} {scaler.fitted_on}\n")
            fh.write(" ".join(f"{v:.17g}" for v in scaler.mins) + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in scaler.ranges) + "\n")
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            fh.write(f"layer {i} {w.shape[0]} {w.shape[1]}\n")
            for row in w:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in b) + "\n")


def load_model(path) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    cursor = 0

    def take() -> str:
        nonlocal cursor
        cursor += 1
        return lines[cursor - 1]

    head = take().split()
    if head[0] != "dims":
        raise ValueError(f"{path}: not a model file")
    dims = tuple(int(d) for d in head[1:])
    scalers = {}
    for _ in range(2):
        tag, name, fitted_on = take().split()
        if tag != "scaler":
            raise ValueError(f"{path}: malformed scaler block")
        mins = np.array([float(v) for v in take().split()])
        ranges = np.array([float(v) for v in take().split()])
        scalers[name] = MinMaxScaler(mins=mins, ranges=ranges, fitted_on=fitted_on)
    weights = []
    biases = []
    for i in range(len(dims) - 1):
        tag, idx, rows, cols = take().split()
        if tag != "layer" or int(idx) != i:
            raise ValueError(f"{path}: malformed layer block {i}")
        w = np.array([[float(v) for v in take().split()] for _ in range(int(rows))])
        b = np.array([float(v) for v in take().split()])
        weights.append(w)
        biases.append(b)
    return MlpModel(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        input_scaler=scalers["input"],
        target_scaler=scalers["target"],
    )


def write_dataset_csv(dataset: Dataset, path, header_lines: list[str] | None = None) -> None:
    """Export ``g_1..g_100,v_ref,gamma`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow([f"g_{i}" for i in range(1, PREVIEW_LEN + 1)] + ["v_ref", "gamma"])
        for row, target in zip(dataset.features, dataset.targets):
            writer.writerow([f"{v:.9g}" for v in row] + [f"{target:.9g}"])


def read_dataset_csv(path) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or rows[0][0] != "g_1":
        raise ValueError(f"{path}: not a dataset export")
    body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return Dataset(
        features=body[:, : PREVIEW_LEN + 1],
        targets=body[:, PREVIEW_LEN + 1],
        positions=np.arange(len(body)),
    )
