"""Coupling-layer normalizing flow with free-energy training.

The flow composes K affine coupling layers. Each layer leaves the masked
coordinates unchanged and applies z -> z * exp(s) + t to the rest, where the
log-scale s and shift t come from small MLP conditioners fed the masked
coordinates. Log-scales pass through s_max * tanh(s / s_max), so every layer
is invertible for any parameter values and Jacobians stay bounded.

A flow whose conditioner output layers are zero is exactly the identity, so a
fresh flow represents the standard-Gaussian base distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NumericalError, Var
from .mc import Box
from .surrogate import MlpParams, init_mlp, mlp_apply

CHECKPOINT_FORMAT = "flowdesign-flow"
CHECKPOINT_VERSION = 1


def base_log_pdf(Z) -> np.ndarray:
    """Standard-Gaussian log density of the flow base, batched."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    d = Z.shape[1]
    return -0.5 * d * np.log(2.0 * np.pi) - 0.5 * np.sum(Z * Z, axis=1)


@dataclass
class CouplingLayer:
    """One affine coupling transform; mask value 1 marks pass-through coords."""

    mask: np.ndarray
    scale_net: MlpParams
    shift_net: MlpParams
    s_max: float = 4.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=float)
        d = self.mask.shape[0]
        if d >= 2 and (self.mask.sum() == 0 or self.mask.sum() == d):
            raise ValueError("coupling mask must leave some coordinates on each side")
        if self.s_max <= 0:
            raise ValueError("scale bound must be positive")

    def _scale_shift(self, z, scale_params=None, shift_params=None):
        sw, sb = scale_params if scale_params else (self.scale_net.weights, self.scale_net.biases)
        tw, tb = shift_params if shift_params else (self.shift_net.weights, self.shift_net.biases)
        inv = 1.0 - self.mask
        zin = z * self.mask
        raw_s = mlp_apply(zin, sw, sb)
        raw_t = mlp_apply(zin, tw, tb)
        s = ad.tanh(raw_s * (1.0 / self.s_max)) * self.s_max * inv
        t = raw_t * inv
        return s, t

    def forward(self, z, scale_params=None, shift_params=None):
        """(z', log|det J|) with z' = z e^s + t; s, t vanish on masked coords."""
        s, t = self._scale_shift(z, scale_params, shift_params)
        return z * ad.exp(s) + t, ad.vsum(s, axis=1)

    def inverse(self, z):
        # masked coords are unchanged by forward, so s, t are recoverable
        s, t = self._scale_shift(z)
        return (z - t) * ad.exp(-s), ad.vsum(s, axis=1)


@dataclass
class NormalizingFlow:
    """Stack of coupling layers mapping the Gaussian base to the target."""

    layers: list
    dim: int
    history: np.ndarray | None = None  # training objective per step, if trained

    def forward(self, z0):
        single = np.ndim(ad.value_of(z0)) == 1
        z = np.atleast_2d(np.asarray(z0, dtype=float)) if not isinstance(z0, Var) else z0
        logdet = 0.0
        for layer in self.layers:
            z, ld = layer.forward(z)
            logdet = logdet + ld
        if single:
            return np.asarray(z)[0], float(np.asarray(logdet)[0])
        return z, logdet

    def inverse(self, z):
        single = np.ndim(z) == 1
        z0, _ = self._inverse_logdet(np.atleast_2d(np.asarray(z, dtype=float)))
        return z0[0] if single else z0

    def _inverse_logdet(self, Z):
        logdet = np.zeros(len(Z))
        for layer in reversed(self.layers):
            Z, ld = layer.inverse(Z)
            logdet += ld
        return Z, logdet  # logdet of the *forward* map at the recovered base point

    def log_density(self, z):
        """log q(z) = base log-pdf at f^{-1}(z) minus the forward log-det there."""
        single = np.ndim(z) == 1
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        z0, logdet = self._inverse_logdet(Z)
        out = base_log_pdf(z0) - logdet
        return float(out[0]) if single else out

    def sample(self, n: int, seed: int) -> np.ndarray:
        if n == 0:
            return np.empty((0, self.dim))
        z0 = np.random.default_rng(seed).standard_normal((n, self.dim))
        z, _ = self.forward(z0)
        return z

    def parameter_arrays(self):
        arrs = []
        for layer in self.layers:
            arrs += layer.scale_net.arrays()
            arrs += layer.shift_net.arrays()
        return arrs


@dataclass
class FlowTrainConfig:
    n_layers: int = 8
    hidden: tuple = (64, 64)
    batch: int = 256
    steps: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    s_max: float = 4.0

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("flow needs at least two coupling layers")
        if self.batch < 16:
            raise ValueError("free-energy batches below 16 are too noisy")
        if self.steps < 1 or self.lr <= 0:
            raise ValueError("steps and learning rate must be positive")


def make_flow(d: int, n_layers: int = 8, hidden=(64, 64), s_max: float = 4.0,
              seed: int = 0) -> NormalizingFlow:
    """Identity-initialized flow: random conditioner trunks, zero output layers."""
    rng = np.random.default_rng(seed)
    sizes = [d, *hidden, d]
    layers = []
    for k in range(n_layers):
        mask = np.array([(i + k) % 2 == 0 for i in range(d)], dtype=float)
        layers.append(CouplingLayer(
            mask=mask,
            scale_net=init_mlp(sizes, rng, zero_last=True),
            shift_net=init_mlp(sizes, rng, zero_last=True),
            s_max=s_max,
        ))
    return NormalizingFlow(layers, d)


def train_flow(target, d: int, config: FlowTrainConfig | None = None) -> NormalizingFlow:
    """Fit a flow to an unnormalized log density by free-energy descent.

    The objective per step is the Monte Carlo estimate of
        F = E[ln q0(z0)] - E[target(z_K)] - E[sum_k ln|det df_k/dz|],
    an upper bound on -log evidence; `target` receives a taped (batch, d) Var
    and must return a taped (batch,) Var of unnormalized log densities.
    """
    config = config or FlowTrainConfig()
    rng = np.random.default_rng(config.seed)
    flow = make_flow(d, config.n_layers, config.hidden, config.s_max,
                     seed=int(rng.integers(2 ** 32)))

    flat, views = ad.flatten_arrays(flow.parameter_arrays())
    _bind_views(flow, views)
    gflat = np.empty_like(flat)
    state = AdamState.zeros(flat.size)
    history = np.empty(config.steps)

    for step in range(config.steps):
        z0 = rng.standard_normal((config.batch, d))
        lnq0 = float(np.mean(base_log_pdf(z0)))

        leaves = []
        z = z0
        logdet = 0.0
        for layer in flow.layers:
            sp = _as_leaves(layer.scale_net, leaves)
            tp = _as_leaves(layer.shift_net, leaves)
            z, ld = layer.forward(z, scale_params=sp, shift_params=tp)
            logdet = logdet + ld

        loss = ad.vmean(target(z)) * (-1.0) - ad.vmean(logdet)
        objective = lnq0 + float(loss.value)
        if not np.isfinite(objective):
            raise NumericalError(f"flow training diverged at step {step}")
        history[step] = objective

        ad.backward(loss)
        ad.gather_grads(leaves, gflat)
        ad.adam_step(flat, gflat, state, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.eps)

    _bind_views(flow, [v.copy() for v in views])  # decouple from the training buffer
    flow.history = history
    return flow


def _as_leaves(net: MlpParams, leaves: list):
    ws, bs = [], []
    for w, b in zip(net.weights, net.biases):
        vw, vb = Var(w), Var(b)
        ws.append(vw)
        bs.append(vb)
        leaves.append(vw)
        leaves.append(vb)
    return ws, bs


def _bind_views(flow: NormalizingFlow, arrays):
    it = iter(arrays)
    for layer in flow.layers:
        for net in (layer.scale_net, layer.shift_net):
            for k in range(len(net.weights)):
                net.weights[k] = next(it)
                net.biases[k] = next(it)


# -- checkpoint serialization -------------------------------------------------


def _net_to_dict(net: MlpParams) -> dict:
    return {
        "shapes": [list(w.shape) for w in net.weights],
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(doc: dict) -> MlpParams:
    weights = [np.array(w, dtype=float).reshape(shape)
               for w, shape in zip(doc["weights"], doc["shapes"])]
    return MlpParams(weights, [np.array(b, dtype=float) for b in doc["biases"]])


def flow_to_dict(flow: NormalizingFlow, box: Box | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": flow.dim,
        "layers": [{
            "mask": layer.mask.tolist(),
            "s_max": layer.s_max,
            "scale_net": _net_to_dict(layer.scale_net),
            "shift_net": _net_to_dict(layer.shift_net),
        } for layer in flow.layers],
        "box": None,
    }
    if box is not None:
        doc["box"] = {"lower": box.lower.tolist(), "upper": box.upper.tolist()}
    return doc


def flow_from_dict(doc: dict):
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a flow checkpoint: {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    layers = [CouplingLayer(np.array(spec["mask"], dtype=float),
                            _net_from_dict(spec["scale_net"]),
                            _net_from_dict(spec["shift_net"]),
                            s_max=float(spec["s_max"]))
              for spec in doc["layers"]]
    flow = NormalizingFlow(layers, int(doc["dim"]))
    box = None
    if doc.get("box") is not None:
        box = Box(np.array(doc["box"]["lower"], dtype=float),
                  np.array(doc["box"]["upper"], dtype=float))
    return flow, box


def save_flow(flow: NormalizingFlow, path, box: Box | None = None):
    with open(path, "w") as fh:
        json.dump(flow_to_dict(flow, box), fh)


def load_flow(path):
    with open(path) as fh:
        return flow_from_dict(json.load(fh))


# spec-style operation aliases
def flow_forward(flow: NormalizingFlow, z0):
    return flow.forward(z0)


def flow_inverse(flow: NormalizingFlow, z):
    return flow.inverse(z)


def flow_log_density(flow: NormalizingFlow, z):
    return flow.log_density(z)


def sample_flow(flow: NormalizingFlow, n: int, seed: int):
    return flow.sample(n, seed)
