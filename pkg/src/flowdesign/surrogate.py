"""Feed-forward network core and the trained limit-state surrogate.

The network is a plain MLP with swish hidden activations and a linear output.
Training standardizes inputs and outputs to zero mean / unit variance and runs
full-batch Adam by default (design sets here are tiny, ~100 points).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NumericalError, Var

CHECKPOINT_FORMAT = "flowdesign-surrogate"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Layer parameters of an MLP: weights[k] is (d_{k+1}, d_k)."""

    weights: list
    biases: list
    activation: str = "swish"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input width {w.shape[1]} does not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameters")
        if self.activation != "swish":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def arrays(self):
        """All parameter arrays, weights and biases interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)


def init_mlp(sizes, rng, zero_last=False):
    """Scaled-uniform fan-in initialization, U(-1/sqrt(d_in), 1/sqrt(d_in)).

    With `zero_last` the output layer starts at exactly zero (used for
    identity-initialized flow conditioners).
    """
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        d_in, d_out = sizes[k], sizes[k + 1]
        if zero_last and k == len(sizes) - 2:
            weights.append(np.zeros((d_out, d_in)))
            biases.append(np.zeros(d_out))
        else:
            bound = 1.0 / np.sqrt(d_in)
            weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
            biases.append(rng.uniform(-bound, bound, size=d_out))
    return MlpParams(weights, biases)


def mlp_apply(x, weights, biases):
    """Batched MLP forward pass; works on ndarrays and on taped Vars.

    `x` is (n, d_in); returns (n, d_out). Entries of `weights`/`biases` may be
    Vars (training) or plain arrays (inference / conditioning on constants).
    """
    h = x
    last = len(weights) - 1
    for k in range(len(weights)):
        h = ad.affine(h, weights[k], biases[k])
        if k < last:
            h = ad.swish(h)
    return h


def mlp_forward(params: MlpParams, x) -> float:
    """Scalar network output at a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != params.in_dim:
        raise ValueError(f"input of length {x.shape} does not match network width {params.in_dim}")
    if params.out_dim != 1:
        raise ValueError("mlp_forward expects a scalar-output network")
    out = mlp_apply(x[None, :], params.weights, params.biases)
    return float(out[0, 0])


def mlp_forward_batch(params: MlpParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ValueError(f"batch of shape {X.shape} does not match network width {params.in_dim}")
    return mlp_apply(X, params.weights, params.biases)[:, 0]


class Dataset:
    """The evaluated design set {(x_i, y_i)}; exact-duplicate inputs rejected."""

    def __init__(self, inputs, outputs):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(outputs, dtype=float).ravel()
        if len(X) != len(y):
            raise ValueError("inputs and outputs must have equal length")
        if len(X) == 0:
            raise ValueError("dataset must hold at least one point")
        self.inputs = X
        self.outputs = y
        self._keys = set()
        for row in X:
            key = row.tobytes()
            if key in self._keys:
                raise ValueError("duplicate input row")
            self._keys.add(key)

    def __len__(self):
        return len(self.inputs)

    @property
    def dim(self):
        return self.inputs.shape[1]

    def add_batch(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        fresh = set()
        for row in X:
            key = row.tobytes()
            if key in self._keys or key in fresh:
                raise ValueError("duplicate input row")
            fresh.add(key)
        self.inputs = np.vstack([self.inputs, X])
        self.outputs = np.concatenate([self.outputs, y])
        self._keys |= fresh

    def copy(self):
        return Dataset(self.inputs.copy(), self.outputs.copy())


@dataclass
class Standardizer:
    """Zero-mean / unit-variance affine maps for inputs and outputs."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        x_std = X.std(axis=0)
        x_std = np.where(x_std > 1e-12, x_std, 1.0)  # degenerate coordinate -> unit scale
        y_std = float(y.std())
        if y_std <= 1e-12:
            y_std = 1.0
        return cls(X.mean(axis=0), x_std, float(y.mean()), y_std)

    def transform_x(self, X):
        return (X - self.x_mean) / self.x_std

    def inverse_x(self, Xs):
        return Xs * self.x_std + self.x_mean

    def transform_y(self, y):
        return (y - self.y_mean) / self.y_std

    def inverse_y(self, ys):
        return ys * self.y_std + self.y_mean


@dataclass
class TrainConfig:
    hidden: tuple = (64, 64, 64)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None  # None -> full batch
    epochs: int = 3000
    seed: int = 0

    def __post_init__(self):
        if not all(int(h) > 0 for h in self.hidden):
            raise ValueError("hidden layer sizes must be positive")
        if self.lr <= 0 or self.eps <= 0 or self.epochs <= 0:
            raise ValueError("lr, eps and epochs must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam moment decays must lie in (0, 1)")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValueError("batch size must be positive")


def mse_loss(params: MlpParams, data: Dataset) -> float:
    """Mean squared training error, (1/N) sum (y_i - NN(x_i))^2."""
    pred = mlp_forward_batch(params, data.inputs)
    return float(np.mean((data.outputs - pred) ** 2))


def mse_loss_grad(params: MlpParams, X, y):
    """Taped loss and its gradient arrays, aligned with `params.arrays()`."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    leaves = [Var(a) for a in params.arrays()]
    w = leaves[0::2]
    b = leaves[1::2]
    resid = mlp_apply(X, w, b) - y
    loss = ad.vmean(resid * resid)
    ad.backward(loss)
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
             for leaf in leaves]
    return float(loss.value), grads


@dataclass
class SurrogateModel:
    """Trained approximation of the limit-state function, in original units."""

    params: MlpParams
    standardizer: Standardizer
    final_loss: float
    initial_loss: float
    epochs: int
    seed: int

    def evaluate(self, x) -> float:
        xs = self.standardizer.transform_x(np.asarray(x, dtype=float))
        return self.standardizer.inverse_y(mlp_forward(self.params, xs))

    def evaluate_batch(self, X) -> np.ndarray:
        Xs = self.standardizer.transform_x(np.atleast_2d(np.asarray(X, dtype=float)))
        return self.standardizer.inverse_y(mlp_forward_batch(self.params, Xs))

    def taped_batch(self, x: Var) -> Var:
        """Taped batched evaluation for gradient flow through the input."""
        st = self.standardizer
        xs = (x - st.x_mean) * (1.0 / st.x_std)
        out = mlp_apply(xs, self.params.weights, self.params.biases)
        return ad.vsum(out, axis=1) * st.y_std + st.y_mean


def train_surrogate(data: Dataset, config: TrainConfig | None = None) -> SurrogateModel:
    """Fit the MLP surrogate to the design set with full-batch Adam.

    Deterministic for a fixed seed. The returned parameters are the best
    (lowest full-data loss, standardized units) seen over training, so the
    final loss never exceeds the loss at initialization.
    """
    config = config or TrainConfig()
    if len(data) < 2:
        raise ValueError("training needs at least two points")
    if not np.isfinite(data.outputs).all():
        raise ValueError("non-finite training targets")

    st = Standardizer.fit(data.inputs, data.outputs)
    Xs = st.transform_x(data.inputs)
    ys = st.transform_y(data.outputs).reshape(-1, 1)
    n = len(data)

    rng = np.random.default_rng(config.seed)
    sizes = [data.dim, *config.hidden, 1]
    params = init_mlp(sizes, rng)
    flat, views = ad.flatten_arrays(params.arrays())
    gflat = np.empty_like(flat)
    state = AdamState.zeros(flat.size)

    batch = n if config.batch_size is None else min(config.batch_size, n)
    full_batch = batch >= n

    def epoch_step(Xb, yb):
        leaves = [Var(v) for v in views]
        resid = mlp_apply(Xb, leaves[0::2], leaves[1::2]) - yb
        loss = ad.vmean(resid * resid)
        ad.backward(loss)
        ad.gather_grads(leaves, gflat)
        return float(loss.value)

    best_loss = np.inf
    best_theta = flat.copy()
    initial_loss = None
    for epoch in range(config.epochs):
        if full_batch:
            loss = epoch_step(Xs, ys)
        else:
            order = rng.permutation(n)
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                epoch_step(Xs[idx], ys[idx])
                ad.adam_step(flat, gflat, state, lr=config.lr, beta1=config.beta1,
                             beta2=config.beta2, eps=config.eps)
            loss = float(np.mean((mlp_apply(Xs, views[0::2], views[1::2]) - ys) ** 2))
        if not np.isfinite(loss):
            raise NumericalError(f"training diverged at epoch {epoch}")
        if initial_loss is None:
            initial_loss = loss
        if loss < best_loss:
            best_loss = loss
            best_theta[:] = flat
        if full_batch:
            ad.adam_step(flat, gflat, state, lr=config.lr, beta1=config.beta1,
                         beta2=config.beta2, eps=config.eps)

    flat[:] = best_theta
    trained = MlpParams([w.copy() for w in views[0::2]], [b.copy() for b in views[1::2]])
    return SurrogateModel(trained, st, final_loss=float(best_loss),
                          initial_loss=float(initial_loss), epochs=config.epochs,
                          seed=config.seed)


# -- checkpoint serialization -------------------------------------------------


def surrogate_to_dict(model: SurrogateModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "activation": model.params.activation,
        "shapes": [list(w.shape) for w in model.params.weights],
        "weights": [w.ravel().tolist() for w in model.params.weights],
        "biases": [b.tolist() for b in model.params.biases],
        "standardizer": {
            "x_mean": model.standardizer.x_mean.tolist(),
            "x_std": model.standardizer.x_std.tolist(),
            "y_mean": model.standardizer.y_mean,
            "y_std": model.standardizer.y_std,
        },
        "metadata": {
            "final_loss": model.final_loss,
            "initial_loss": model.initial_loss,
            "epochs": model.epochs,
            "seed": model.seed,
        },
    }


def surrogate_from_dict(doc: dict) -> SurrogateModel:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a surrogate checkpoint: {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    weights = [np.array(w, dtype=float).reshape(shape)
               for w, shape in zip(doc["weights"], doc["shapes"])]
    biases = [np.array(b, dtype=float) for b in doc["biases"]]
    st = doc["standardizer"]
    meta = doc["metadata"]
    return SurrogateModel(
        MlpParams(weights, biases, doc["activation"]),
        Standardizer(np.array(st["x_mean"], dtype=float), np.array(st["x_std"], dtype=float),
                     float(st["y_mean"]), float(st["y_std"])),
        final_loss=float(meta["final_loss"]), initial_loss=float(meta["initial_loss"]),
        epochs=int(meta["epochs"]), seed=int(meta["seed"]),
    )


def save_surrogate(model: SurrogateModel, path):
    with open(path, "w") as fh:
        json.dump(surrogate_to_dict(model), fh)


def load_surrogate(path) -> SurrogateModel:
    with open(path) as fh:
        return surrogate_from_dict(json.load(fh))
