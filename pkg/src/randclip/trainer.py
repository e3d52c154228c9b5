"""Desk-scale DP-SGD with randomized clipping on a token-wise linear network."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    Estimator, FactoredSample, SketchConfig, exact_norm_sq, ghost_norm_sq, hutch_norm_sq,
    hutchpp_norm_sq,
)
from .linalg import DimensionError, Mat, NonFiniteEntries
from .numerics import DomainError, SeededStream, sample_gaussian

# sub-stream tags under each step
_NORM_TAG = 0
_NOISE_TAG = 1


class Routine(str, enum.Enum):
    EXACT = "exact"
    GHOST = "ghost"
    HUTCH = "hutch"
    HUTCHPP = "hutchpp"


class NonFiniteGradient(ArithmeticError):
    """Raised when an update would contain NaN or infinite entries."""


@dataclass
class ToyModel:
    """Token-wise linear network with a scalar output per token.

    Layer l maps width d_l to p_l = d_{l+1}; the last layer has p = 1. The
    loss of a sample is the mean over its T tokens of the squared error.

    Attributes:
        layers: weight matrices W_l of shape (d_l, p_l).
    """

    layers: list[np.ndarray]

    def __post_init__(self):
        self.layers = [np.array(w, dtype=np.float64) for w in self.layers]
        if not self.layers:
            raise DimensionError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise DimensionError(f"layer widths do not chain: {a.shape} then {b.shape}")
        if self.layers[-1].shape[1] != 1:
            raise DimensionError("last layer must have a single output")

    @classmethod
    def init(cls, widths, stream: SeededStream) -> ToyModel:
        """Gaussian init with variance 1/d_l for widths (d_0, d_1, ..., 1)."""
        layers = []
        for l, (d, p) in enumerate(zip(widths, widths[1:])):
            w = stream.substream(l).standard_normal((d, p)) / math.sqrt(d)
            layers.append(w)
        return cls(layers)

    def copy(self) -> ToyModel:
        return ToyModel([w.copy() for w in self.layers])

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.layers)


@dataclass
class Captured:
    """What a forward hook records for a batch.

    Attributes:
        losses: per-sample losses, shape (B,).
        activations: per layer, the inputs A_l of shape (B, T, d_l).
        residual: prediction minus target, shape (B, T).
    """

    losses: np.ndarray
    activations: list[np.ndarray]
    residual: np.ndarray


def forward_capture(model: ToyModel, X: np.ndarray, y: np.ndarray) -> Captured:
    """Forward pass recording every layer's input.

    Raises:
        DimensionError: if ``X`` is not (B, T, d_0) or ``y`` not (B, T).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != model.layers[0].shape[0]:
        raise DimensionError(f"X must be (B, T, {model.layers[0].shape[0]}), got {X.shape}")
    if y.shape != X.shape[:2]:
        raise DimensionError(f"y must be {X.shape[:2]}, got {y.shape}")
    acts = []
    h = X
    for w in model.layers:
        acts.append(h)
        h = h @ w
    residual = h[..., 0] - y
    return Captured(losses=np.mean(residual**2, axis=1), activations=acts, residual=residual)


def output_grads(model: ToyModel, cap: Captured) -> list[np.ndarray]:
    """Per-sample gradients of L_i with respect to each layer's output, (B, T, p_l)."""
    T = cap.residual.shape[1]
    g = (2.0 / T) * cap.residual[..., None]
    grads = [g]
    for w in reversed(model.layers[1:]):
        g = g @ w.T
        grads.append(g)
    return grads[::-1]


def per_sample_grads(model: ToyModel, cap: Captured) -> list[np.ndarray]:
    """Materialized per-sample gradients A_i^T G_i per layer, (B, d_l, p_l)."""
    G = output_grads(model, cap)
    return [np.einsum("btd,btp->bdp", a, g) for a, g in zip(cap.activations, G)]


def per_sample_norms(
    cap: Captured, model: ToyModel, routine: Routine, k: int, stream: SeededStream,
) -> np.ndarray:
    """Squared per-sample gradient norms, per layer, from the factored form.

    Sample i and layer l use the sub-stream ``stream.substream(i, l)``.

    Returns:
        (B, L) array; row sums are the per-sample estimates n_i.
    """
    routine = Routine(routine)
    G = output_grads(model, cap)
    B = cap.residual.shape[0]
    out = np.empty((B, len(model.layers)))
    for l, (a, g) in enumerate(zip(cap.activations, G)):
        for i in range(B):
            s = FactoredSample(Mat(a[i]), Mat(g[i]))
            if routine is Routine.EXACT:
                out[i, l] = exact_norm_sq(s)
            elif routine is Routine.GHOST:
                out[i, l] = ghost_norm_sq(s)
            elif routine is Routine.HUTCH:
                out[i, l] = hutch_norm_sq(s, SketchConfig(k, Estimator.HUTCH), stream.substream(i, l))
            else:
                out[i, l] = hutchpp_norm_sq(
                    s, SketchConfig(k, Estimator.HUTCHPP), stream.substream(i, l))
    return out


@dataclass
class TrainConfig:
    """Hyperparameters of a DP-SGD-RC run.

    The update is W <- W - lr * (sum of clipped gradients + sigma C noise);
    lr absorbs any 1/B averaging.
    """

    C: float
    sigma: float
    lr: float
    B: int
    steps: int
    routine: Routine = Routine.EXACT
    k: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise DomainError(f"C must be positive, got {self.C!r}")
        if not self.sigma >= 0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma!r}")
        if not self.lr > 0:
            raise DomainError(f"lr must be positive, got {self.lr!r}")
        if self.B < 1 or self.steps < 0 or self.k < 1:
            raise DomainError("B and k must be positive and steps nonnegative")
        self.routine = Routine(self.routine)


@dataclass
class StepRecord:
    """Diagnostics of one step.

    Attributes:
        n_hat: per-sample, per-layer squared-norm estimates, (B, L).
        n_true: exact per-sample squared norms, (B,).
        rescale: min(C / sqrt(n_hat_i), 1) per sample.
        z_ratio: sqrt(n_true / n_hat) per sample.
        clipped_grad: summed clipped gradient per layer, before noise.
        noise: noise added per layer.
    """

    step: int
    losses: np.ndarray
    n_hat: np.ndarray
    n_true: np.ndarray
    rescale: np.ndarray
    z_ratio: np.ndarray
    clipped_grad: list[np.ndarray]
    noise: list[np.ndarray]

    @property
    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(g * g)) for g in self.clipped_grad))

    @property
    def noisy_grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum((g + z) ** 2)) for g, z in zip(self.clipped_grad, self.noise)))


def noise_stream(seed: int, step: int, layer: int) -> SeededStream:
    """Stream of the Gaussian noise added to layer ``layer`` at ``step``."""
    return SeededStream(seed, 0, (step, _NOISE_TAG, layer))


def norm_stream(seed: int, step: int) -> SeededStream:
    """Parent stream of the sketches used at ``step``; children are (sample, layer)."""
    return SeededStream(seed, 0, (step, _NORM_TAG))


def rescale_factors(n_hat: np.ndarray, C: float) -> np.ndarray:
    """min(C / sqrt(n), 1), with 1 where n = 0."""
    n_hat = np.asarray(n_hat, dtype=float)
    root = np.sqrt(n_hat)
    with np.errstate(divide="ignore"):
        return np.where(root > 0, np.minimum(C / np.where(root > 0, root, 1.0), 1.0), 1.0)


def clipped_noisy_step(
    model: ToyModel, X: np.ndarray, y: np.ndarray, cfg: TrainConfig, step: int,
) -> tuple[ToyModel, StepRecord]:
    """One DP-SGD step with clipping by the estimated per-sample norms.

    The first backward pass feeds the norm routine; the second is the
    gradient of sum_i r_i L_i, computed from the same captured factors.

    Raises:
        NonFiniteGradient: if the noisy gradient has non-finite entries.
    """
    cap = forward_capture(model, X, y)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            n_layer = per_sample_norms(cap, model, cfg.routine, cfg.k, norm_stream(cfg.seed, step))
    except NonFiniteEntries as err:
        raise NonFiniteGradient(f"non-finite activations or gradients at step {step}") from err
    n_hat = n_layer.sum(axis=1)
    if not np.all(np.isfinite(n_hat)):
        raise NonFiniteGradient(f"non-finite norm estimate at step {step}")
    G = output_grads(model, cap)
    n_true = sum(
        np.einsum("bst,bst->b", a @ a.transpose(0, 2, 1), g @ g.transpose(0, 2, 1))
        for a, g in zip(cap.activations, G)
    )
    r = rescale_factors(n_hat, cfg.C)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(n_hat > 0, np.sqrt(n_true / np.where(n_hat > 0, n_hat, 1.0)), 1.0)
    clipped = [np.einsum("btd,btp,b->dp", a, g, r) for a, g in zip(cap.activations, G)]
    noise = [
        sample_gaussian(noise_stream(cfg.seed, step, l), 0.0, cfg.sigma * cfg.C, w.size).reshape(w.shape)
        for l, w in enumerate(model.layers)
    ]
    new = model.copy()
    for w, g, e in zip(new.layers, clipped, noise):
        upd = g + e
        if not np.all(np.isfinite(upd)):
            raise NonFiniteGradient(f"non-finite gradient at step {step}")
        w -= cfg.lr * upd
    rec = StepRecord(step=step, losses=cap.losses, n_hat=n_layer, n_true=n_true, rescale=r,
                     z_ratio=z, clipped_grad=clipped, noise=noise)
    return new, rec


@dataclass
class ToyTask:
    """Synthetic teacher-student regression on token sequences.

    Inputs are standard normal; targets are a fixed random linear map of
    each token plus Gaussian label noise.
    """

    d0: int
    T: int
    noise: float = 0.1
    seed: int = 0
    teacher: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.teacher = SeededStream(self.seed, 0, (1,)).standard_normal(self.d0) / math.sqrt(self.d0)

    def batch(self, step: int, B: int) -> tuple[np.ndarray, np.ndarray]:
        s = SeededStream(self.seed, 0, (2, step))
        X = s.standard_normal((B, self.T, self.d0))
        y = X @ self.teacher + self.noise * s.standard_normal((B, self.T))
        return X, y


@dataclass
class TrainResult:
    model: ToyModel
    losses: np.ndarray
    records: list[StepRecord]


def train(model: ToyModel, data, cfg: TrainConfig, keep_records: bool = True) -> TrainResult:
    """Run ``cfg.steps`` steps; ``data(step, B)`` returns the batch (X, y)."""
    losses = np.empty(cfg.steps)
    records = []
    for t in range(cfg.steps):
        X, y = data(t, cfg.B)
        model, rec = clipped_noisy_step(model, X, y, cfg, t)
        losses[t] = float(rec.losses.mean())
        if keep_records:
            records.append(rec)
    return TrainResult(model=model, losses=losses, records=records)


def evaluate(model: ToyModel, X: np.ndarray, y: np.ndarray) -> float:
    """Mean loss of ``model`` on a batch."""
    return float(forward_capture(model, X, y).losses.mean())


RECORD_HEADER = ["step", "sample", "layer", "n_hat", "rescale", "Z_ratio", "loss"]


def records_csv(records) -> str:
    """CSV with one row per (step, sample, layer)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    for rec in records:
        for i in range(rec.n_hat.shape[0]):
            for l in range(rec.n_hat.shape[1]):
                w.writerow([rec.step, i, l, f"{rec.n_hat[i, l]:.17g}", f"{rec.rescale[i]:.17g}",
                            f"{rec.z_ratio[i]:.17g}", f"{rec.losses[i]:.17g}"])
    return buf.getvalue()
