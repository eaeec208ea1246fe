"""Binary RBM head with balance/decorrelation penalties and CD training.

The model over binary visible v and hidden h has energy

    E(v, h) = -vis_bias . v - hid_bias . h - h . (w @ v)

with joint probability exp(-E) / Z. Conditionals factorize into sigmoids.
Training combines a contrastive-divergence estimate of the negative
log-likelihood gradient (r Gibbs steps from the data) with exact analytic
gradients of two deterministic penalties on the thresholded hidden map. The
threshold is smoothed during training by f(x) = (tanh(beta * x) + 1) / 2,
which approaches the 0/1 step as beta grows; final codes always use the hard
sign rule, never sampling.

For tiny models (v_dim + h_dim <= 20) the partition function is enumerable,
giving exact log-likelihoods and gradients used as oracles by the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import HashCode
from .errors import CapacityError, ConfigError, DomainError, ShapeError

from .sae import _check_penalties

EXACT_LIMIT_BITS = 20


@dataclass(frozen=True)
class Rbm:
    """RBM parameters: w is h_dim x v_dim, biases match each side."""

    w: np.ndarray
    vis_bias: np.ndarray
    hid_bias: np.ndarray
    beta: float = 10.0
    cd_steps: int = 1

    def __post_init__(self):
        for name in ("w", "vis_bias", "hid_bias"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        h, v = self.w.shape
        if self.vis_bias.shape != (v,):
            raise ShapeError(f"vis_bias must have shape ({v},), got {self.vis_bias.shape}")
        if self.hid_bias.shape != (h,):
            raise ShapeError(f"hid_bias must have shape ({h},), got {self.hid_bias.shape}")
        if self.beta < 1:
            raise ConfigError(f"surrogate sharpness beta must be >= 1, got {self.beta}")
        if self.cd_steps < 1:
            raise ConfigError(f"cd_steps must be >= 1, got {self.cd_steps}")

    @property
    def v_dim(self) -> int:
        return self.w.shape[1]

    @property
    def h_dim(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class RbmGradients:
    d_w: np.ndarray
    d_vis_bias: np.ndarray
    d_hid_bias: np.ndarray


@dataclass(frozen=True)
class GibbsStats:
    """Bookkeeping from one chain: sample counts and the conditionals
    P(h=1 | .) at the start and end states."""

    h_samples: int
    v_samples: int
    p_h_start: np.ndarray
    p_h_end: np.ndarray


@dataclass(frozen=True)
class CdBatchStats:
    """Chain endpoints for every batch row (v_start is the data)."""

    v_start: np.ndarray
    v_end: np.ndarray


def _check_binary(x, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise ShapeError(f"{what} must have width {dim}, got shape {arr.shape}")
    if not np.all((rows == 0) | (rows == 1)):
        raise DomainError(f"{what} entries must be 0 or 1")
    return arr


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def energy(rbm: Rbm, v, h) -> float:
    """E(v, h) for one binary configuration."""
    v = _check_binary(v, rbm.v_dim, "visible vector")
    h = _check_binary(h, rbm.h_dim, "hidden vector")
    if v.ndim != 1 or h.ndim != 1:
        raise ShapeError("energy takes single vectors, not batches")
    return float(-rbm.vis_bias @ v - rbm.hid_bias @ h - h @ rbm.w @ v)


def prob_h_given_v(rbm: Rbm, v) -> np.ndarray:
    """sigmoid(w @ v + hid_bias), componentwise over hidden units."""
    v = _check_binary(v, rbm.v_dim, "visible vector")
    return _sigmoid(v @ rbm.w.T + rbm.hid_bias)


def prob_v_given_h(rbm: Rbm, h) -> np.ndarray:
    """sigmoid(w.T @ h + vis_bias), componentwise over visible units."""
    h = _check_binary(h, rbm.h_dim, "hidden vector")
    return _sigmoid(h @ rbm.w + rbm.vis_bias)


def free_energy(rbm: Rbm, v) -> np.ndarray:
    """F(v) = -vis_bias . v - sum_i softplus(w_i . v + hid_bias_i).

    exp(-F(v)) = sum_h exp(-E(v, h)); computed overflow-safe. Accepts a
    vector (returns a scalar) or a row matrix (returns a vector).
    """
    v = _check_binary(v, rbm.v_dim, "visible vector")
    rows = v.reshape(1, -1) if v.ndim == 1 else v
    pre = rows @ rbm.w.T + rbm.hid_bias
    f = -rows @ rbm.vis_bias - np.logaddexp(0.0, pre).sum(axis=1)
    return float(f[0]) if v.ndim == 1 else f


def gibbs_chain(rbm: Rbm, v0, rng, steps: int | None = None) -> tuple[np.ndarray, GibbsStats]:
    """Alternate h ~ P(h|v), v ~ P(v|h) for `steps` rounds (default cd_steps).

    Deterministic for a fixed seed. Returns the final visible state and the
    conditionals needed by the CD estimator.
    """
    v0 = _check_binary(v0, rbm.v_dim, "start state")
    if v0.ndim != 1:
        raise ShapeError("gibbs_chain takes a single start vector")
    if steps is None:
        steps = rbm.cd_steps
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    gen = np.random.default_rng(rng)
    p_h_start = prob_h_given_v(rbm, v0)
    v = v0
    p_h = p_h_start
    for _ in range(steps):
        h = (gen.random(rbm.h_dim) < p_h).astype(np.float64)
        p_v = prob_v_given_h(rbm, h)
        v = (gen.random(rbm.v_dim) < p_v).astype(np.float64)
        p_h = prob_h_given_v(rbm, v)
    stats = GibbsStats(steps, steps, p_h_start, p_h)
    return v, stats


def surrogate_hidden(rbm: Rbm, v) -> np.ndarray:
    """Smoothed hidden map f(w @ v + hid_bias), f(x) = (tanh(beta x) + 1) / 2."""
    v = _check_binary(v, rbm.v_dim, "visible input")
    return 0.5 * (np.tanh(rbm.beta * (v @ rbm.w.T + rbm.hid_bias)) + 1.0)


def surrogate_derivative(rbm: Rbm, pre_activation) -> np.ndarray:
    """d/dx of the smoothed hidden map: beta/2 * (1 - tanh^2(beta x))."""
    t = np.tanh(rbm.beta * np.asarray(pre_activation, dtype=np.float64))
    return 0.5 * rbm.beta * (1.0 - t ** 2)


def reg_objective_terms(rbm: Rbm, batch, lam: float, mu: float,
                        decorrelation_mode: str = "batch") -> float:
    """Deterministic penalty value on the smoothed hidden map.

    lam/2 * ||sum_n h(n)||^2 plus the decorrelation penalty against I (same
    two modes as the autoencoder objective). The likelihood term is handled
    separately by CD and is not included here.
    """
    _check_penalties(lam, mu, decorrelation_mode)
    batch = _check_binary(np.atleast_2d(batch), rbm.v_dim, "batch")
    n, q = batch.shape[0], rbm.h_dim
    h = surrogate_hidden(rbm, batch)
    value = 0.5 * lam * np.sum(h.sum(axis=0) ** 2)
    if decorrelation_mode == "per_sample":
        sq = np.sum(h ** 2, axis=1)
        value += 0.5 * mu * np.sum((sq / n) ** 2 - 2.0 * sq / n + q)
    else:
        cov = h.T @ h / n
        value += 0.5 * mu * np.sum((cov - np.eye(q)) ** 2)
    return float(value)


def penalty_gradients(rbm: Rbm, batch, lam: float, mu: float,
                      decorrelation_mode: str = "batch") -> RbmGradients:
    """Exact gradients of reg_objective_terms (visible bias gets none)."""
    _check_penalties(lam, mu, decorrelation_mode)
    batch = _check_binary(np.atleast_2d(batch), rbm.v_dim, "batch")
    n = batch.shape[0]
    pre = batch @ rbm.w.T + rbm.hid_bias
    h = 0.5 * (np.tanh(rbm.beta * pre) + 1.0)
    fprime = surrogate_derivative(rbm, pre)

    g_h = np.zeros_like(h)
    if lam:
        g_h = g_h + lam * h.sum(axis=0)
    if mu:
        if decorrelation_mode == "per_sample":
            sq = np.sum(h ** 2, axis=1)
            g_h = g_h + (2.0 * mu / n) * (sq / n - 1.0)[:, None] * h
        else:
            a = h.T @ h / n - np.eye(rbm.h_dim)
            g_h = g_h + (2.0 * mu / n) * (h @ a)
    g_pre = g_h * fprime
    return RbmGradients(
        g_pre.T @ batch,
        np.zeros(rbm.v_dim),
        g_pre.sum(axis=0),
    )


def _master_seed(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    gen = np.random.default_rng(rng)
    return int(gen.integers(0, 2 ** 63))


def cd_gradients_with_stats(rbm: Rbm, batch, lam: float, mu: float,
                            decorrelation_mode: str = "batch", rng=0,
                            steps: int | None = None) -> tuple[RbmGradients, CdBatchStats]:
    """CD-r estimate of the training gradient, plus chain endpoints.

    The likelihood part is the negative-phase/positive-phase difference
    summed over the batch, oriented so that subtracting alpha * grad raises
    data likelihood. Each row's chain uses an independent stream seeded with
    master_seed XOR row_index, so results do not depend on scheduling.
    steps=0 pins the chain end to the data (a test hook: the likelihood part
    cancels exactly).
    """
    _check_penalties(lam, mu, decorrelation_mode)
    batch = _check_binary(np.atleast_2d(batch), rbm.v_dim, "batch")
    master = _master_seed(rng)
    v_end = np.empty_like(batch)
    for i, row in enumerate(batch):
        v_end[i], _ = gibbs_chain(rbm, row, np.random.default_rng(master ^ i), steps)
    p_h0 = _sigmoid(batch @ rbm.w.T + rbm.hid_bias)
    p_hr = _sigmoid(v_end @ rbm.w.T + rbm.hid_bias)
    d_w = p_hr.T @ v_end - p_h0.T @ batch
    d_a = (v_end - batch).sum(axis=0)
    d_b = (p_hr - p_h0).sum(axis=0)
    pen = penalty_gradients(rbm, batch, lam, mu, decorrelation_mode)
    grads = RbmGradients(d_w + pen.d_w, d_a + pen.d_vis_bias, d_b + pen.d_hid_bias)
    return grads, CdBatchStats(batch, v_end)


def cd_gradients(rbm: Rbm, batch, lam: float, mu: float,
                 decorrelation_mode: str = "batch", rng=0,
                 steps: int | None = None) -> RbmGradients:
    grads, _ = cd_gradients_with_stats(rbm, batch, lam, mu, decorrelation_mode,
                                       rng, steps)
    return grads


def _enumerate_states(n: int) -> np.ndarray:
    """All 2^n binary vectors as rows; bit i of the counter is column i."""
    counters = np.arange(2 ** n, dtype=np.uint32)
    return ((counters[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)


def _check_exact_capacity(rbm: Rbm) -> None:
    if rbm.v_dim + rbm.h_dim > EXACT_LIMIT_BITS:
        raise CapacityError(
            f"exact enumeration limited to v_dim + h_dim <= {EXACT_LIMIT_BITS}, "
            f"got {rbm.v_dim} + {rbm.h_dim}"
        )


def _joint_table(rbm: Rbm):
    """Negative energies for all (h, v) pairs plus the state enumerations."""
    all_v = _enumerate_states(rbm.v_dim)
    all_h = _enumerate_states(rbm.h_dim)
    neg_e = (all_h @ rbm.hid_bias)[:, None] + (all_v @ rbm.vis_bias)[None, :]
    neg_e = neg_e + all_h @ rbm.w @ all_v.T
    return all_v, all_h, neg_e


def _state_index(batch: np.ndarray) -> np.ndarray:
    powers = (2 ** np.arange(batch.shape[1])).astype(np.float64)
    return np.rint(batch @ powers).astype(np.int64)


def exact_loglik(rbm: Rbm, batch) -> float:
    """Sum over rows of ln P(v), by enumerating every joint state."""
    _check_exact_capacity(rbm)
    batch = _check_binary(np.atleast_2d(batch), rbm.v_dim, "batch")
    _, _, neg_e = _joint_table(rbm)
    m = neg_e.max()
    log_z = m + np.log(np.exp(neg_e - m).sum())
    cols = neg_e[:, _state_index(batch)]
    cm = cols.max(axis=0)
    log_marginal = cm + np.log(np.exp(cols - cm).sum(axis=0))
    return float(np.sum(log_marginal - log_z))


def exact_loglik_grad(rbm: Rbm, batch) -> RbmGradients:
    """Exact gradient of exact_loglik via full enumeration.

    Positive phase uses the enumerated conditional expectation of h given
    each data row; negative phase uses the enumerated model expectations.
    """
    _check_exact_capacity(rbm)
    batch = _check_binary(np.atleast_2d(batch), rbm.v_dim, "batch")
    n = batch.shape[0]
    all_v, all_h, neg_e = _joint_table(rbm)
    m = neg_e.max()
    p = np.exp(neg_e - m)
    p /= p.sum()
    model_hv = all_h.T @ p @ all_v
    model_v = p.sum(axis=0) @ all_v
    model_h = p.sum(axis=1) @ all_h

    cols = neg_e[:, _state_index(batch)]
    cols = np.exp(cols - cols.max(axis=0))
    cols /= cols.sum(axis=0)
    cond_h = (all_h.T @ cols).T  # one row of E[h | v_n] per batch row
    return RbmGradients(
        cond_h.T @ batch - n * model_hv,
        batch.sum(axis=0) - n * model_v,
        cond_h.sum(axis=0) - n * model_h,
    )


def update(rbm: Rbm, grads: RbmGradients, alpha: float) -> Rbm:
    """One descent update p := p - alpha * grad on all three blocks."""
    if alpha <= 0:
        raise ConfigError(f"learning rate must be > 0, got {alpha}")
    return Rbm(
        rbm.w - alpha * grads.d_w,
        rbm.vis_bias - alpha * grads.d_vis_bias,
        rbm.hid_bias - alpha * grads.d_hid_bias,
        beta=rbm.beta,
        cd_steps=rbm.cd_steps,
    )


def hash_bits(rbm: Rbm, v) -> np.ndarray:
    """Deterministic bit matrix: bit 1 where w @ v + hid_bias >= 0."""
    v = _check_binary(v, rbm.v_dim, "visible input")
    return ((v @ rbm.w.T + rbm.hid_bias) >= 0).astype(np.uint8)


def hash_code(rbm: Rbm, v) -> HashCode:
    """Hash one visible vector to a packed h_dim-bit code (no sampling)."""
    v = _check_binary(v, rbm.v_dim, "visible vector")
    if v.ndim != 1:
        raise ShapeError("hash_code takes a single vector; use hash_bits for batches")
    return HashCode.from_bits(hash_bits(rbm, v))
