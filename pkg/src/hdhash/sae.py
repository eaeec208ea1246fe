"""Tanh autoencoder layers trained greedily with balance/decorrelation penalties.

Each layer maps p inputs to q outputs through v = tanh(enc_w @ x + enc_b) and
reconstructs through r = tanh(dec_w @ v + dec_b). The training objective for
a batch of N input rows x(n) is

    R = 1/2 sum_n ||r(n) - x(n)||^2
      + lam/2 * ||sum_n v(n)||^2
      + decorrelation penalty

where the decorrelation penalty compares output second moments against the
identity: per_sample mode sums mu/2 * ||(1/N) v(n) v(n)^T - I||_F^2 over
samples, batch mode penalizes mu/2 * ||(1/N) sum_n v(n) v(n)^T - I||_F^2.
The balance term pushes each output dimension to average zero over the batch
(a balanced bit after thresholding); the decorrelation term pushes distinct
output dimensions toward zero correlation.

Gradients are exact derivatives of this objective (validated against central
finite differences in the test suite). All four parameter blocks, encoder and
decoder, are trained; they are not tied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

DECORRELATION_MODES = ("batch", "per_sample")


def _check_penalties(lam: float, mu: float, decorrelation_mode: str) -> None:
    if lam < 0 or mu < 0:
        raise ConfigError(f"penalty weights must be >= 0, got lam={lam}, mu={mu}")
    if decorrelation_mode not in DECORRELATION_MODES:
        raise ConfigError(f"unknown decorrelation_mode {decorrelation_mode!r}")


@dataclass(frozen=True)
class SaeLayer:
    """One autoencoder layer: encoder q x p, decoder p x q, untied."""

    enc_w: np.ndarray
    enc_b: np.ndarray
    dec_w: np.ndarray
    dec_b: np.ndarray

    def __post_init__(self):
        for name in ("enc_w", "enc_b", "dec_w", "dec_b"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        q, p = self.enc_w.shape
        if self.enc_b.shape != (q,):
            raise ShapeError(f"enc_b must have shape ({q},), got {self.enc_b.shape}")
        if self.dec_w.shape != (p, q):
            raise ShapeError(f"dec_w must have shape ({p}, {q}), got {self.dec_w.shape}")
        if self.dec_b.shape != (p,):
            raise ShapeError(f"dec_b must have shape ({p},), got {self.dec_b.shape}")

    @property
    def in_dim(self) -> int:
        return self.enc_w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.enc_w.shape[0]


@dataclass(frozen=True)
class SaeGradients:
    d_enc_w: np.ndarray
    d_enc_b: np.ndarray
    d_dec_w: np.ndarray
    d_dec_b: np.ndarray


@dataclass(frozen=True)
class SaeStack:
    """Ordered autoencoder layers with chained dimensions."""

    layers: tuple[SaeLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("stack needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer dims do not chain: {a.out_dim} followed by {b.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [la.out_dim for la in self.layers]


def _as_rows(v, dim: int, what: str) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    rows = v.reshape(1, -1) if single else v
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise ShapeError(f"{what} must have width {dim}, got shape {v.shape}")
    return rows, single


def forward(layer: SaeLayer, v_prev) -> np.ndarray:
    """Encoder pass tanh(enc_w @ v + enc_b); accepts a vector or row matrix."""
    rows, single = _as_rows(v_prev, layer.in_dim, "input")
    out = np.tanh(rows @ layer.enc_w.T + layer.enc_b)
    return out[0] if single else out


def reconstruct(layer: SaeLayer, v) -> np.ndarray:
    """Decoder pass tanh(dec_w @ v + dec_b); accepts a vector or row matrix."""
    rows, single = _as_rows(v, layer.out_dim, "code")
    out = np.tanh(rows @ layer.dec_w.T + layer.dec_b)
    return out[0] if single else out


def _passes(layer: SaeLayer, batch: np.ndarray):
    v = np.tanh(batch @ layer.enc_w.T + layer.enc_b)
    recon = np.tanh(v @ layer.dec_w.T + layer.dec_b)
    return v, recon


def objective(layer: SaeLayer, batch, lam: float, mu: float,
              decorrelation_mode: str = "batch") -> float:
    """Regularized reconstruction objective R for one batch."""
    _check_penalties(lam, mu, decorrelation_mode)
    batch, _ = _as_rows(np.atleast_2d(batch), layer.in_dim, "batch")
    n, q = batch.shape[0], layer.out_dim
    v, recon = _passes(layer, batch)
    r = 0.5 * np.sum((recon - batch) ** 2)
    r += 0.5 * lam * np.sum(v.sum(axis=0) ** 2)
    if decorrelation_mode == "per_sample":
        # ||(1/N) v v^T - I||_F^2 collapses to a function of ||v||^2.
        sq = np.sum(v ** 2, axis=1)
        r += 0.5 * mu * np.sum((sq / n) ** 2 - 2.0 * sq / n + q)
    else:
        cov = v.T @ v / n
        r += 0.5 * mu * np.sum((cov - np.eye(q)) ** 2)
    return float(r)


def gradients(layer: SaeLayer, batch, lam: float, mu: float,
              decorrelation_mode: str = "batch") -> SaeGradients:
    """Exact gradients of objective() for all four parameter blocks."""
    _check_penalties(lam, mu, decorrelation_mode)
    batch, _ = _as_rows(np.atleast_2d(batch), layer.in_dim, "batch")
    n = batch.shape[0]
    v, recon = _passes(layer, batch)

    delta_dec = (recon - batch) * (1.0 - recon ** 2)
    d_dec_w = delta_dec.T @ v
    d_dec_b = delta_dec.sum(axis=0)

    g_v = delta_dec @ layer.dec_w
    if lam:
        g_v = g_v + lam * v.sum(axis=0)
    if mu:
        if decorrelation_mode == "per_sample":
            # ((1/N) v v^T - I) v = (||v||^2 / N - 1) v per sample.
            sq = np.sum(v ** 2, axis=1)
            g_v = g_v + (2.0 * mu / n) * (sq / n - 1.0)[:, None] * v
        else:
            a = v.T @ v / n - np.eye(layer.out_dim)
            g_v = g_v + (2.0 * mu / n) * (v @ a)
    delta_enc = g_v * (1.0 - v ** 2)
    d_enc_w = delta_enc.T @ batch
    d_enc_b = delta_enc.sum(axis=0)
    return SaeGradients(d_enc_w, d_enc_b, d_dec_w, d_dec_b)


def sgd_step(layer: SaeLayer, grads: SaeGradients, alpha: float) -> SaeLayer:
    """One gradient-descent update p := p - alpha * grad on every block."""
    if alpha <= 0:
        raise ConfigError(f"learning rate must be > 0, got {alpha}")
    return SaeLayer(
        layer.enc_w - alpha * grads.d_enc_w,
        layer.enc_b - alpha * grads.d_enc_b,
        layer.dec_w - alpha * grads.d_dec_w,
        layer.dec_b - alpha * grads.d_dec_b,
    )


def train_layer(layer: SaeLayer, batches, lam: float, mu: float, alpha: float,
                decorrelation_mode: str = "batch") -> tuple[SaeLayer, list[float]]:
    """One gradient step per batch, in order.

    Returns the updated layer and the objective evaluated on each batch
    right after its update.
    """
    trace = []
    for batch in batches:
        g = gradients(layer, batch, lam, mu, decorrelation_mode)
        layer = sgd_step(layer, g, alpha)
        trace.append(objective(layer, batch, lam, mu, decorrelation_mode))
    return layer, trace


def encode_stack(stack: SaeStack, x) -> np.ndarray:
    """Chain forward() through every layer; accepts a vector or row matrix."""
    out = x
    for layer in stack.layers:
        out = forward(layer, out)
    return out


def binarize_pm(v) -> np.ndarray:
    """Threshold at zero: bit 1 for v >= 0, else 0 (ties go to 1)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ShapeError("cannot binarize non-finite values")
    return (v >= 0).astype(np.uint8)
