"""Dense feedforward networks with ELU hidden layers and analytic gradients.

Everything is plain numpy. Forward and backward passes accept a single input
vector or a batch (rows are samples). Besides the usual weight gradients for
Adam training, grad_input returns the gradient of a weighted output sum with
respect to the input, which is what every gradient-based attack consumes.

Weight files are flat binary, little-endian:

    magic   4s   b"MUWT"
    version u8   1
    layers  u32
    per layer: rows u32, cols u32, act u8 (ord('e') elu / ord('l') linear),
               weights rows*cols f64 row-major, biases cols f64

A text sidecar "<path>.scaler" holds the output scaler ("scale=..",
"offset=.." lines). Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MUWT"
FORMAT_VERSION = 1

M1_HIDDEN = (64, 32, 32, 32, 5)
M2_HIDDEN = (512, 256, 128, 128, 5)


class DimensionMismatch(ValueError):
    """Input/weight shapes do not line up."""


class NonFiniteLoss(RuntimeError):
    """Training loss became NaN or infinite."""


def elu(z):
    """ELU with alpha=1: z for z>=0, exp(z)-1 below."""
    z = np.asarray(z, dtype=float)
    out = np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))
    return float(out) if out.ndim == 0 else out


def elu_prime(z):
    """Derivative of elu; defined as 1 at z=0 (right limit)."""
    z = np.asarray(z, dtype=float)
    out = np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))
    return float(out) if out.ndim == 0 else out


@dataclass
class Mlp:
    layer_dims: list[int]
    weights: list[np.ndarray]     # weights[l]: (layer_dims[l], layer_dims[l+1])
    biases: list[np.ndarray]      # biases[l]: (layer_dims[l+1],)
    activations: list[str]        # per layer, "elu" or "linear"

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def validate(self) -> None:
        n = self.n_layers
        if len(self.layer_dims) != n + 1 or len(self.biases) != n or len(self.activations) != n:
            raise DimensionMismatch("inconsistent layer bookkeeping")
        for l in range(n):
            expect = (self.layer_dims[l], self.layer_dims[l + 1])
            if self.weights[l].shape != expect:
                raise DimensionMismatch(f"layer {l}: weight shape {self.weights[l].shape} != {expect}")
            if self.biases[l].shape != (self.layer_dims[l + 1],):
                raise DimensionMismatch(f"layer {l}: bias shape {self.biases[l].shape}")
        if any(act not in ("elu", "linear") for act in self.activations):
            raise ValueError("activations must be 'elu' or 'linear'")
        if self.activations[-1] != "linear" or any(a != "elu" for a in self.activations[:-1]):
            raise ValueError("hidden activations must be elu and the final one linear")

    def copy(self) -> "Mlp":
        return Mlp(layer_dims=list(self.layer_dims),
                   weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases],
                   activations=list(self.activations))


def init_mlp(layer_dims, seed: int) -> Mlp:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases, seeded."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("layer_dims needs at least two positive entries")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    activations = ["elu"] * (len(dims) - 2) + ["linear"]
    model = Mlp(layer_dims=dims, weights=weights, biases=biases, activations=activations)
    model.validate()
    return model


def make_m1(input_dim: int = 40, output_dim: int = 6, seed: int = 0) -> Mlp:
    """Small architecture: 40-64-32-32-32-5-6 at the default dims."""
    return init_mlp([input_dim, *M1_HIDDEN, output_dim], seed)


def make_m2(input_dim: int = 40, output_dim: int = 6, seed: int = 0) -> Mlp:
    """Large architecture: 40-512-256-128-128-5-6 at the default dims."""
    return init_mlp([input_dim, *M2_HIDDEN, output_dim], seed)


def _check_input(model: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"input dim {x.shape[-1]} != {model.input_dim}")
    return x


def forward(model: Mlp, x) -> np.ndarray:
    """Model output for one input vector or a batch of rows."""
    a = _check_input(model, x)
    for w, b, act in zip(model.weights, model.biases, model.activations):
        z = a @ w + b
        a = elu(z) if act == "elu" else z
    return a


def _forward_cached(model: Mlp, x: np.ndarray):
    """Forward pass keeping pre-activations; x must be a batch."""
    pre, post = [], [x]
    a = x
    for w, b, act in zip(model.weights, model.biases, model.activations):
        z = a @ w + b
        a = elu(z) if act == "elu" else z
        pre.append(z)
        post.append(a)
    return pre, post


def grad_input(model: Mlp, x, out_weights) -> np.ndarray:
    """Gradient of out_weights . forward(model, x) with respect to x.

    Reverse-mode pass; out_weights has length output_dim. Works on a single
    vector or a batch and returns the matching shape.
    """
    x = _check_input(model, x)
    out_weights = np.asarray(out_weights, dtype=float)
    if out_weights.shape != (model.output_dim,):
        raise DimensionMismatch("out_weights length must equal the output dim")
    single = x.ndim == 1
    xb = x[None, :] if single else x
    pre, _ = _forward_cached(model, xb)
    g = np.broadcast_to(out_weights, (xb.shape[0], model.output_dim)).copy()
    for l in range(model.n_layers - 1, -1, -1):
        if model.activations[l] == "elu":
            g = g * elu_prime(pre[l])
        g = g @ model.weights[l].T
    return g[0] if single else g


def mse_and_gradients(model: Mlp, X: np.ndarray, Y: np.ndarray):
    """Mean-squared error over all entries plus weight/bias gradients."""
    X = _check_input(model, np.atleast_2d(X))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape != (X.shape[0], model.output_dim):
        raise DimensionMismatch("target shape does not match the model output")
    with np.errstate(over="ignore", invalid="ignore"):   # divergence is reported via NonFiniteLoss
        pre, post = _forward_cached(model, X)
        err = post[-1] - Y
        loss = float(np.mean(err ** 2))
        g = (2.0 / err.size) * err
        grads_w, grads_b = [None] * model.n_layers, [None] * model.n_layers
        for l in range(model.n_layers - 1, -1, -1):
            if model.activations[l] == "elu":
                g = g * elu_prime(pre[l])
            grads_w[l] = post[l].T @ g
            grads_b[l] = g.sum(axis=0)
            if l > 0:
                g = g @ model.weights[l].T
    return loss, grads_w, grads_b


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0

    def validate(self) -> None:
        ok = (self.learning_rate > 0 and 0 < self.adam_beta1 < 1
              and 0 < self.adam_beta2 < 1 and self.batch_size >= 1 and self.epochs >= 1)
        if not ok:
            raise ValueError("invalid training settings")


def train(model: Mlp, X: np.ndarray, Y: np.ndarray,
          settings: TrainSettings | None = None) -> tuple[Mlp, list[float]]:
    """Adam on the MSE loss; returns a trained copy and the per-epoch loss history.

    Deterministic given the settings seed (which drives the shuffles only;
    initial weights come with the model).
    """
    settings = settings or TrainSettings()
    settings.validate()
    X = _check_input(model, np.atleast_2d(np.asarray(X, dtype=float)))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(X) == 0:
        raise ValueError("empty training set")
    model = model.copy()
    rng = np.random.default_rng(settings.seed)
    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    b1, b2, eps, lr = (settings.adam_beta1, settings.adam_beta2,
                       settings.adam_eps, settings.learning_rate)
    t = 0
    history = []
    for _ in range(settings.epochs):
        order = rng.permutation(len(X))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(X), settings.batch_size):
            idx = order[start:start + settings.batch_size]
            loss, gw, gb = mse_and_gradients(model, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at step {t}")
            epoch_loss += loss
            n_batches += 1
            t += 1
            c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
            for l in range(model.n_layers):
                m_w[l] = b1 * m_w[l] + (1 - b1) * gw[l]
                v_w[l] = b2 * v_w[l] + (1 - b2) * gw[l] ** 2
                model.weights[l] -= lr * (m_w[l] / c1) / (np.sqrt(v_w[l] / c2) + eps)
                m_b[l] = b1 * m_b[l] + (1 - b1) * gb[l]
                v_b[l] = b2 * v_b[l] + (1 - b2) * gb[l] ** 2
                model.biases[l] -= lr * (m_b[l] / c1) / (np.sqrt(v_b[l] / c2) + eps)
        history.append(epoch_loss / n_batches)
    return model, history


@dataclass(frozen=True)
class OutputScaler:
    """Affine map between network output units and milliwatts."""

    scale: float            # mW per output unit
    offset: float = 0.0     # mW

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.offset

    def normalize(self, p):
        return (np.asarray(p, dtype=float) - self.offset) / self.scale


_ACT_CODE = {"elu": ord("e"), "linear": ord("l")}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


def save_weights(model: Mlp, path, scaler: OutputScaler) -> None:
    """Write the binary weight file plus the scaler sidecar."""
    model.validate()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", FORMAT_VERSION, model.n_layers))
        for w, b, act in zip(model.weights, model.biases, model.activations):
            fh.write(struct.pack("<IIB", w.shape[0], w.shape[1], _ACT_CODE[act]))
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(str(path) + ".scaler", "w", encoding="utf-8") as fh:
        fh.write(f"scale={scaler.scale!r}\noffset={scaler.offset!r}\n")


def load_weights(path) -> tuple[Mlp, OutputScaler]:
    """Read a weight file and its scaler sidecar; inverse of save_weights."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a weight file")
        version, n_layers = struct.unpack("<BI", fh.read(5))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        weights, biases, activations = [], [], []
        for _ in range(n_layers):
            rows, cols, act = struct.unpack("<IIB", fh.read(9))
            w = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8").reshape(rows, cols)
            b = np.frombuffer(fh.read(cols * 8), dtype="<f8")
            weights.append(w.astype(float))
            biases.append(b.astype(float))
            activations.append(_ACT_NAME[act])
    dims = [weights[0].shape[0]] + [w.shape[1] for w in weights]
    model = Mlp(layer_dims=dims, weights=weights, biases=biases, activations=activations)
    model.validate()
    scaler_vals = {}
    with open(str(path) + ".scaler", "r", encoding="utf-8") as fh:
        for line in fh:
            key, _, val = line.strip().partition("=")
            scaler_vals[key] = float(val)
    return model, OutputScaler(scale=scaler_vals["scale"], offset=scaler_vals["offset"])
