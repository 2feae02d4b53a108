"""One-hidden-layer feed-forward network producing the governor coordination signal.

The network sees ``[farm P_out, omega_SG1 .. omega_SGn, e]`` and is trained by
plain mini-batch gradient descent on the mean squared error. Inputs and
targets are min-max scaled to [-1, 1]; a feature with zero range scales to 0
and unscales to its (single) value, so a network trained on all-zero targets
outputs exactly zero.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class WeightsFileError(ValueError):
    """Malformed or inconsistent weights file."""


class TrainingDiverged(ArithmeticError):
    pass


@dataclass
class Mlp:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2", "x_lo", "x_hi", "y_lo", "y_hi"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        h, n = self.W1.shape
        o = self.W2.shape[0]
        if self.b1.shape != (h,) or self.W2.shape != (o, h) or self.b2.shape != (o,):
            raise ValueError("inconsistent layer dimensions")
        if self.x_lo.shape != (n,) or self.x_hi.shape != (n,) or self.y_lo.shape != (o,) or self.y_hi.shape != (o,):
            raise ValueError("scaler dimensions do not match the layers")
        if np.any(self.x_hi < self.x_lo) or np.any(self.y_hi < self.y_lo):
            raise ValueError("scaler ranges must satisfy lo <= hi")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden units are supported")

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_out(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "Mlp":
        return Mlp(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                   self.x_lo.copy(), self.x_hi.copy(), self.y_lo.copy(), self.y_hi.copy(), self.activation)

    def kernel_arrays(self):
        """Contiguous arrays in the order the simulator's compiled forward pass expects."""
        if self.n_out != 1:
            raise ValueError("the coordination signal is a single output")
        return tuple(np.ascontiguousarray(a) for a in
                     (self.W1, self.b1, self.W2, self.b2, self.x_lo, self.x_hi, self.y_lo, self.y_hi))


def init_mlp(n_in: int, n_hidden: int = 10, n_out: int = 1, seed: int = 0) -> Mlp:
    """Uniform weights in +-1/sqrt(fan_in), identity scalers."""
    if min(n_in, n_hidden, n_out) < 1:
        raise ValueError("layer widths must be positive")
    rng = np.random.default_rng(seed)
    a1, a2 = 1 / math.sqrt(n_in), 1 / math.sqrt(n_hidden)
    return Mlp(rng.uniform(-a1, a1, (n_hidden, n_in)), rng.uniform(-a1, a1, n_hidden),
               rng.uniform(-a2, a2, (n_out, n_hidden)), rng.uniform(-a2, a2, n_out),
               -np.ones(n_in), np.ones(n_in), -np.ones(n_out), np.ones(n_out))


def _scale(v, lo, hi):
    half = 0.5 * (hi - lo)
    safe = np.where(half > 0, half, 1.0)
    return np.where(half > 0, (v - 0.5 * (hi + lo)) / safe, 0.0)


def _unscale(z, lo, hi):
    return 0.5 * (hi + lo) + 0.5 * (hi - lo) * z


def scale_inputs(mlp: Mlp, X) -> np.ndarray:
    return _scale(np.asarray(X, dtype=float), mlp.x_lo, mlp.x_hi)


def scale_targets(mlp: Mlp, Y) -> np.ndarray:
    return _scale(np.asarray(Y, dtype=float), mlp.y_lo, mlp.y_hi)


def raw_forward(mlp: Mlp, Z: np.ndarray):
    """Forward pass on already-scaled inputs; returns (hidden activations, scaled outputs)."""
    H = np.tanh(Z @ mlp.W1.T + mlp.b1)
    return H, H @ mlp.W2.T + mlp.b2


def mlp_forward(mlp: Mlp, x) -> np.ndarray:
    """Outputs in target units for one input vector or a ``k x n_in`` batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mlp.n_in or x.ndim > 2:
        raise ValueError(f"expected inputs of length {mlp.n_in}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    _, z = raw_forward(mlp, scale_inputs(mlp, x))
    return _unscale(z, mlp.y_lo, mlp.y_hi)


def mse_cost(preds, targets) -> float:
    """Mean over samples of the squared Euclidean error."""
    p = np.asarray(preds, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ValueError("prediction and target shapes differ")
    if p.shape[0] == 0:
        raise ValueError("empty batch")
    d = (p - t).reshape(p.shape[0], -1)
    return float(np.sum(d * d) / p.shape[0])


def regression_r(preds, targets) -> float:
    """sqrt(1 - MSE(pred) / MSE(mean predictor)), radicand clamped at zero."""
    p = np.asarray(preds, dtype=float)
    t = np.asarray(targets, dtype=float)
    if t.shape[0] < 2:
        raise ValueError("need at least two samples")
    den = mse_cost(np.broadcast_to(t.mean(axis=0), t.shape), t)
    if den == 0:
        raise ValueError("targets have zero variance")
    return math.sqrt(max(0.0, 1.0 - mse_cost(p, t) / den))


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


def scaled_loss(mlp: Mlp, X, Y) -> float:
    """Training objective: mean squared error in scaled target space."""
    _, z = raw_forward(mlp, scale_inputs(mlp, X))
    return mse_cost(z, scale_targets(mlp, np.asarray(Y, dtype=float).reshape(len(z), -1)))


def backprop_gradients(mlp: Mlp, X, Y) -> Gradients:
    """Exact gradients of :func:`scaled_loss` with respect to every weight and bias."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] != mlp.n_in:
        raise ValueError("input batch has the wrong width")
    Y = Y.reshape(X.shape[0], -1)
    if Y.shape[1] != mlp.n_out:
        raise ValueError("target batch has the wrong width")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    return _grads(mlp, scale_inputs(mlp, X), scale_targets(mlp, Y))


def _grads(mlp, Z, T):
    H, out = raw_forward(mlp, Z)
    d_out = 2.0 * (out - T) / Z.shape[0]
    d_h = (d_out @ mlp.W2) * (1.0 - H * H)
    return Gradients(d_h.T @ Z, d_h.sum(axis=0), d_out.T @ H, d_out.sum(axis=0))


# ----------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have the same number of rows")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.inputs.shape[1])]
        if len(self.feature_names) != self.inputs.shape[1]:
            raise ValueError("feature names do not match the input width")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], list(self.feature_names))


def split_dataset(ds: Dataset, ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Random partition; sizes are floored and the remainder goes to the training split."""
    _check_ratios(ratios)
    k = len(ds)
    if k < 3:
        raise ValueError("need at least three samples to split")
    n_val = math.floor(k * ratios[1] + 1e-9)
    n_test = math.floor(k * ratios[2] + 1e-9)
    n_train = k - n_val - n_test
    if n_train < 1:
        raise ValueError("training split would be empty")
    perm = np.random.default_rng(seed).permutation(k)
    return (ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:n_train + n_val])),
            ds.subset(np.sort(perm[n_train + n_val:])))


def _check_ratios(ratios):
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must be three positive numbers summing to 1")


FEATURE_P = "p_out_pu"
FEATURE_E = "e_hzs"
TARGET_COLUMN = "target_uc"


def feature_names(n_sg: int) -> list[str]:
    return [FEATURE_P] + [f"omega_sg{i + 1}_pu" for i in range(n_sg)] + [FEATURE_E]


def generate_dataset(traces, alpha: float = 1.0, n_samples: int | None = 50_000) -> Dataset:
    """Assemble samples from inertial-mode traces; the target is ``-alpha * dP``.

    ``dP`` is the farm's extra injection (system pu) and ``u_c`` a governor
    speed-reference offset, so a positive support injection maps to a
    negative offset that raises mechanical power. When ``n_samples`` is set,
    rows are taken at evenly spaced indices of the concatenated traces.
    """
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    if not traces:
        raise ValueError("no traces")
    xs, ys = [], []
    names = None
    for tr in traces:
        cols = tr.columns
        n_sg = sum(1 for c in cols if c.startswith("omega_sg"))
        want = feature_names(n_sg)
        missing = [c for c in want + ["dp_pu"] if c not in cols]
        if missing:
            raise KeyError(f"trace is missing columns {missing}")
        if names is not None and names != want:
            raise ValueError("traces describe different systems")
        names = want
        if tr.meta.get("mode", "inertial") != "inertial":
            raise ValueError("dataset traces must be recorded in inertial mode")
        xs.append(np.column_stack([cols[c] for c in want]))
        ys.append(-alpha * np.asarray(cols["dp_pu"]) + 0.0)
    X = np.vstack(xs)
    Y = np.concatenate(ys)
    if n_samples is not None:
        if n_samples < 1:
            raise ValueError("n_samples must be positive")
        if n_samples > len(X):
            raise ValueError(f"requested {n_samples} samples from {len(X)} available")
        idx = np.round(np.linspace(0, len(X) - 1, n_samples)).astype(int)
        X, Y = X[idx], Y[idx]
    return Dataset(X, Y, names)


def write_dataset(ds: Dataset, path) -> None:
    def rows(fh):
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + [TARGET_COLUMN])
        for x, y in zip(ds.inputs, ds.targets):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y[0]))])
    _atomic_write(path, rows, newline="")


def read_dataset(path) -> Dataset:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    if not rows or TARGET_COLUMN not in rows[0]:
        raise ValueError(f"{path}: no {TARGET_COLUMN} column")
    head = rows[0]
    try:
        data = np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(head))
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    j = head.index(TARGET_COLUMN)
    keep = [i for i in range(len(head)) if i != j]
    return Dataset(data[:, keep], data[:, j], [head[i] for i in keep])


# ----------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    max_epochs: int = 500
    split_ratios: tuple = (0.70, 0.15, 0.15)
    rng_seed: int = 0
    early_stop_patience: int = 50
    n_hidden: int = 10

    def __post_init__(self):
        _check_ratios(self.split_ratios)
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and non-negative")
        if self.batch_size < 1 or self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("batch_size, patience must be >= 1 and max_epochs >= 0")


@dataclass
class TrainReport:
    train_mse: list
    val_mse: list
    test_mse: list
    best_epoch: int
    r_train: float
    r_val: float
    r_test: float
    r_all: float
    final: dict = field(default_factory=dict)

    def rows(self):
        for i, (a, b, c) in enumerate(zip(self.train_mse, self.val_mse, self.test_mse)):
            yield {"epoch": i, "train_mse": a, "val_mse": b, "test_mse": c}


def fit_scalers(mlp: Mlp, ds: Dataset) -> Mlp:
    m = mlp.copy()
    m.x_lo, m.x_hi = ds.inputs.min(axis=0), ds.inputs.max(axis=0)
    m.y_lo, m.y_hi = ds.targets.min(axis=0), ds.targets.max(axis=0)
    return m


def _safe_r(p, t):
    try:
        return regression_r(p, t)
    except ValueError:
        return float("nan")


def train(mlp_init: Mlp, ds: Dataset, cfg: TrainConfig = TrainConfig()):
    """Mini-batch gradient descent with early stopping on the validation split.

    Scalers are fitted on the training split. Epoch 0 in the curves is the
    initial network; the returned network is the one with the lowest
    validation error.
    """
    if ds.inputs.shape[1] != mlp_init.n_in or ds.targets.shape[1] != mlp_init.n_out:
        raise ValueError(f"dataset is {ds.inputs.shape[1]} -> {ds.targets.shape[1]}, "
                         f"network is {mlp_init.n_in} -> {mlp_init.n_out}")
    tr, va, te = split_dataset(ds, cfg.split_ratios, cfg.rng_seed)
    mlp = fit_scalers(mlp_init, tr)
    rng = np.random.default_rng(cfg.rng_seed + 1)
    Z, T = scale_inputs(mlp, tr.inputs), scale_targets(mlp, tr.targets)
    curves = ([], [], [])

    def record(epoch):
        for c, part in zip(curves, (tr, va, te)):
            v = mse_cost(mlp_forward(mlp, part.inputs), part.targets)
            if not math.isfinite(v):
                raise TrainingDiverged(f"training diverged at epoch {epoch}")
            c.append(v)

    record(0)
    best, best_epoch, stale = mlp.copy(), 0, 0
    lr, bs = cfg.learning_rate, cfg.batch_size
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(Z))
        for s in range(0, len(Z), bs):
            idx = perm[s:s + bs]
            g = _grads(mlp, Z[idx], T[idx])
            mlp.W1 -= lr * g.W1
            mlp.b1 -= lr * g.b1
            mlp.W2 -= lr * g.W2
            mlp.b2 -= lr * g.b2
        record(epoch)
        if curves[1][-1] < curves[1][best_epoch]:
            best, best_epoch, stale = mlp.copy(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    preds = [mlp_forward(best, p.inputs) for p in (tr, va, te)]
    r = [_safe_r(p, part.targets) for p, part in zip(preds, (tr, va, te))]
    r_all = _safe_r(np.vstack(preds), np.vstack([tr.targets, va.targets, te.targets]))
    final = {"train_mse": mse_cost(preds[0], tr.targets), "val_mse": mse_cost(preds[1], va.targets),
             "test_mse": mse_cost(preds[2], te.targets)}
    return best, TrainReport(*curves, best_epoch, *r, r_all, final)


# ----------------------------------------------------------------------------
# persistence


def _atomic_write(path, writer, newline=None):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline=newline) as fh:
        writer(fh)
    os.replace(tmp, path)


def weights_dict(mlp: Mlp) -> dict:
    return {"n_in": mlp.n_in, "n_hidden": mlp.n_hidden, "n_out": mlp.n_out, "activation": mlp.activation,
            "scalers": {"input_lo": mlp.x_lo.tolist(), "input_hi": mlp.x_hi.tolist(),
                        "target_lo": mlp.y_lo.tolist(), "target_hi": mlp.y_hi.tolist()},
            "W1": mlp.W1.tolist(), "b1": mlp.b1.tolist(), "W2": mlp.W2.tolist(), "b2": mlp.b2.tolist()}


def save_weights(mlp: Mlp, path) -> None:
    text = json.dumps(weights_dict(mlp), indent=1) + "\n"
    _atomic_write(path, lambda fh: fh.write(text))


def load_weights(path) -> Mlp:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise WeightsFileError(f"{path}: {exc}") from None
    try:
        n_in, n_h, n_out = int(d["n_in"]), int(d["n_hidden"]), int(d["n_out"])
        sc = d["scalers"]
        arrays = [np.array(d[k], dtype=float) for k in ("W1", "b1", "W2", "b2")]
        scal = [np.array(sc[k], dtype=float) for k in ("input_lo", "input_hi", "target_lo", "target_hi")]
        act = d.get("activation", "tanh")
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightsFileError(f"{path}: missing or malformed field ({exc})") from None
    shapes = [(n_h, n_in), (n_h,), (n_out, n_h), (n_out,), (n_in,), (n_in,), (n_out,), (n_out,)]
    for a, s in zip(arrays + scal, shapes):
        if a.shape != s:
            raise WeightsFileError(f"{path}: payload shape {a.shape} does not match declared {s}")
    return Mlp(*arrays, *scal, activation=act)
