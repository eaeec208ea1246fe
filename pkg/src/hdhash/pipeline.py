"""End-to-end training loop, feature-to-code encoding, and model persistence.

Training alternates two stages over seeded epoch batches, outer_iters times:
(a) every autoencoder layer takes one gradient step per batch, feeding the
next layer its freshly updated outputs, then (b) the RBM head takes one CD
step on the thresholded top-layer outputs. After each outer iteration except
the first and last, a stage whose summed objective moved by more than its
tolerance since the previous iteration is re-run on the same epoch plan, at
most max_repeats_per_iter times.

The tracked objectives are sums over the iteration's batches: R for the
autoencoder stage (all layers), and for the RBM stage the penalty terms plus
the free-energy gap between each batch and its chain endpoints (a tractable
stand-in for the intractable likelihood term). Both traces land in the
returned history together with the repeat counts.

Models serialize to a versioned, CRC-checked text payload that round-trips
every float64 exactly (17 significant digits).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import rbm as rbm_ops
from . import sae as sae_ops
from .codes import HashCode, pack_bits
from .errors import (
    CapacityError,
    ChecksumError,
    ConfigError,
    DataError,
    DivergenceError,
    FormatError,
    TruncationError,
    VersionError,
)
from .features import FeatureMatrix, NormStats, plan_epochs
from .rbm import Rbm
from .sae import DECORRELATION_MODES, SaeLayer, SaeStack

MODEL_MAGIC = b"HDHM"
MODEL_FORMAT_VERSION = 1

INIT_MODES = ("paper", "symmetric")


@dataclass(frozen=True)
class TrainingConfig:
    """All training hyperparameters.

    eps_sae / eps_rbm of None mean "auto": 1e-3 times the first iteration's
    objective magnitude for that stage.
    """

    layer_dims: tuple[int, ...]
    code_bits: int
    epochs: int
    batch_size: int
    seed: int = 0
    lam: float = 0.1
    mu: float = 0.1
    beta: float = 10.0
    alpha: float = 0.01
    cd_steps: int = 1
    outer_iters: int = 10
    eps_sae: float | None = None
    eps_rbm: float | None = None
    decorrelation_mode: str = "batch"
    init_mode: str = "paper"
    max_repeats_per_iter: int = 3

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ConfigError(f"layer_dims needs >= 2 positive entries, got {dims}")
        if self.code_bits < 1:
            raise ConfigError(f"code_bits must be >= 1, got {self.code_bits}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.lam < 0 or self.mu < 0:
            raise ConfigError("penalty weights lam/mu must be >= 0")
        if self.beta < 1:
            raise ConfigError(f"beta must be >= 1, got {self.beta}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.cd_steps < 1:
            raise ConfigError(f"cd_steps must be >= 1, got {self.cd_steps}")
        if self.outer_iters < 1:
            raise ConfigError(f"outer_iters must be >= 1, got {self.outer_iters}")
        for name in ("eps_sae", "eps_rbm"):
            val = getattr(self, name)
            if val is not None and val < 0:
                raise ConfigError(f"{name} must be >= 0 or auto")
        if self.decorrelation_mode not in DECORRELATION_MODES:
            raise ConfigError(f"unknown decorrelation_mode {self.decorrelation_mode!r}")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"unknown init_mode {self.init_mode!r}")
        if self.max_repeats_per_iter < 0:
            raise ConfigError("max_repeats_per_iter must be >= 0")


# Config-file key -> constructor attribute. File keys are the public contract.
_CONFIG_KEYS = (
    ("lambda", "lam"),
    ("mu", "mu"),
    ("beta", "beta"),
    ("alpha", "alpha"),
    ("layer_dims", "layer_dims"),
    ("code_bits", "code_bits"),
    ("outer_iters", "outer_iters"),
    ("eps_sae", "eps_sae"),
    ("eps_rbm", "eps_rbm"),
    ("epochs", "epochs"),
    ("batch_size", "batch_size"),
    ("cd_steps", "cd_steps"),
    ("seed", "seed"),
    ("decorrelation_mode", "decorrelation_mode"),
    ("init_mode", "init_mode"),
    ("max_repeats_per_iter", "max_repeats_per_iter"),
)

_INT_KEYS = {"code_bits", "outer_iters", "epochs", "batch_size", "cd_steps",
             "seed", "max_repeats_per_iter"}
_FLOAT_KEYS = {"lambda", "mu", "beta", "alpha"}
_EPS_KEYS = {"eps_sae", "eps_rbm"}


def parse_config_text(text: str, where: str = "config") -> TrainingConfig:
    """Parse flat key=value config text; every key is required."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: line {lineno} is not key=value: {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        raw[key] = value

    known = {k for k, _ in _CONFIG_KEYS}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
    kwargs = {}
    for key, attr in _CONFIG_KEYS:
        if key not in raw:
            raise ConfigError(f"{where}: missing config key {key!r}")
        value = raw[key]
        try:
            if key in _INT_KEYS:
                kwargs[attr] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[attr] = float(value)
            elif key in _EPS_KEYS:
                kwargs[attr] = None if value == "auto" else float(value)
            elif key == "layer_dims":
                kwargs[attr] = tuple(int(p) for p in value.split(",") if p.strip())
            else:
                kwargs[attr] = value
        except ValueError:
            raise ConfigError(f"{where}: bad value for {key!r}: {value!r}") from None
    return TrainingConfig(**kwargs)


def parse_config_file(path) -> TrainingConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), where=str(path))


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _fmt_vec(arr: np.ndarray) -> str:
    return " ".join(_fmt(x) for x in np.asarray(arr, dtype=np.float64).ravel())


def config_lines(config: TrainingConfig, prefix: str = "config.") -> list[str]:
    out = []
    for key, attr in _CONFIG_KEYS:
        val = getattr(config, attr)
        if key in _EPS_KEYS:
            text = "auto" if val is None else _fmt(val)
        elif key == "layer_dims":
            text = ",".join(str(d) for d in val)
        elif key in _FLOAT_KEYS:
            text = _fmt(val)
        else:
            text = str(val)
        out.append(f"{prefix}{key}={text}")
    return out


@dataclass(frozen=True)
class Model:
    """A trained encoder: normalization stats, autoencoder stack, RBM head."""

    sae: SaeStack
    rbm: Rbm
    norm_stats: NormStats
    config: TrainingConfig
    format_version: int = MODEL_FORMAT_VERSION

    def __post_init__(self):
        if self.sae.dims[-1] != self.rbm.v_dim:
            raise ConfigError(
                f"stack output {self.sae.dims[-1]} != RBM visible {self.rbm.v_dim}"
            )
        if self.rbm.h_dim != self.config.code_bits:
            raise ConfigError(
                f"RBM hidden {self.rbm.h_dim} != code_bits {self.config.code_bits}"
            )

    @property
    def code_bits(self) -> int:
        return self.rbm.h_dim

    @property
    def input_dim(self) -> int:
        return self.sae.dims[0]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    sae_objective: float
    rbm_objective: float
    sae_repeats: int
    rbm_repeats: int


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def init_model(config: TrainingConfig, rng=None) -> Model:
    """Draw initial parameters.

    "paper" mode draws every parameter uniformly from [0, 1); "symmetric"
    draws from [-s, s] with s = sqrt(6 / (fan_in + fan_out)) per block,
    which keeps tanh units out of saturation and usually trains better.
    """
    gen = np.random.default_rng(config.seed if rng is None else rng)

    def draw(shape, fan_in, fan_out):
        if config.init_mode == "paper":
            return gen.random(shape)
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return gen.uniform(-s, s, shape)

    layers = []
    for p, q in zip(config.layer_dims, config.layer_dims[1:]):
        layers.append(SaeLayer(
            draw((q, p), p, q),
            draw(q, p, q),
            draw((p, q), p, q),
            draw(p, p, q),
        ))
    v_dim = config.layer_dims[-1]
    k = config.code_bits
    head = Rbm(
        draw((k, v_dim), v_dim, k),
        draw(v_dim, v_dim, k),
        draw(k, v_dim, k),
        beta=config.beta,
        cd_steps=config.cd_steps,
    )
    return Model(SaeStack(tuple(layers)), head, NormStats.identity(config.layer_dims[0]),
                 config)


def _check_finite_sae(layers, value, t):
    if not np.isfinite(value):
        raise DivergenceError("sae", t)
    for layer in layers:
        for block in (layer.enc_w, layer.enc_b, layer.dec_w, layer.dec_b):
            if not np.all(np.isfinite(block)):
                raise DivergenceError("sae", t)


def _check_finite_rbm(head, value, t):
    if not np.isfinite(value):
        raise DivergenceError("rbm", t)
    for block in (head.w, head.vis_bias, head.hid_bias):
        if not np.all(np.isfinite(block)):
            raise DivergenceError("rbm", t)


def _sae_batch_step(layers, x, config, t):
    """One gradient step for every layer on batch x; returns summed R and
    the top-layer outputs under the updated parameters."""
    total = 0.0
    inp = x
    for li, layer in enumerate(layers):
        g = sae_ops.gradients(layer, inp, config.lam, config.mu,
                              config.decorrelation_mode)
        layer = sae_ops.sgd_step(layer, g, config.alpha)
        layers[li] = layer
        total += sae_ops.objective(layer, inp, config.lam, config.mu,
                                   config.decorrelation_mode)
        inp = sae_ops.forward(layer, inp)
    _check_finite_sae(layers, total, t)
    return total, inp


def _rbm_batch_step(head, visible, config, t, chain_seed):
    """One CD update on a binarized batch; returns the new head and its
    objective contribution (penalties plus free-energy gap, post-update)."""
    grads, stats = rbm_ops.cd_gradients_with_stats(
        head, visible, config.lam, config.mu, config.decorrelation_mode,
        rng=chain_seed)
    head = rbm_ops.update(head, grads, config.alpha)
    gap = float(np.sum(rbm_ops.free_energy(head, stats.v_start)
                       - rbm_ops.free_energy(head, stats.v_end)))
    value = rbm_ops.reg_objective_terms(head, visible, config.lam, config.mu,
                                        config.decorrelation_mode) + gap
    _check_finite_rbm(head, value, t)
    return head, value


def _interleaved_pass(layers, head, data, plan, config, t, rep):
    r_total = 0.0
    j_total = 0.0
    for m, idx in enumerate(plan.batches()):
        r_b, top = _sae_batch_step(layers, data.values[idx], config, t)
        r_total += r_b
        visible = sae_ops.binarize_pm(top)
        head, j_b = _rbm_batch_step(
            head, visible, config, t, _derive_seed(config.seed, t, rep, m))
        j_total += j_b
    return head, r_total, j_total


def _sae_pass(layers, data, plan, config, t):
    total = 0.0
    for idx in plan.batches():
        r_b, _ = _sae_batch_step(layers, data.values[idx], config, t)
        total += r_b
    return total


def _rbm_pass(layers, head, data, plan, config, t, rep):
    total = 0.0
    stack = SaeStack(tuple(layers))
    for m, idx in enumerate(plan.batches()):
        visible = sae_ops.binarize_pm(sae_ops.encode_stack(stack, data.values[idx]))
        head, j_b = _rbm_batch_step(
            head, visible, config, t, _derive_seed(config.seed, t, rep, m))
        total += j_b
    return head, total


def train(config: TrainingConfig, data: FeatureMatrix) -> tuple[Model, list[IterationRecord]]:
    """Run the full training loop; returns the model and per-iteration history."""
    if data.dim != config.layer_dims[0]:
        raise ConfigError(
            f"data dimension {data.dim} != layer_dims[0] {config.layer_dims[0]}"
        )
    if config.epochs * config.batch_size > data.rows:
        raise CapacityError(
            f"need {config.epochs} x {config.batch_size} rows, have {data.rows}"
        )
    if not np.all(np.abs(data.values) <= 1.0):
        raise DataError("training data must be normalized into [-1, 1] first")

    model = init_model(config)
    layers = list(model.sae.layers)
    head = model.rbm

    eps_sae = config.eps_sae
    eps_rbm = config.eps_rbm
    history: list[IterationRecord] = []
    for t in range(1, config.outer_iters + 1):
        plan = plan_epochs(data, config.epochs, config.batch_size,
                           _derive_seed(config.seed, t))
        head, r_t, j_t = _interleaved_pass(layers, head, data, plan, config, t, 0)
        if t == 1:
            if eps_sae is None:
                eps_sae = 1e-3 * abs(r_t)
            if eps_rbm is None:
                eps_rbm = 1e-3 * abs(j_t)
        sae_reps = 0
        rbm_reps = 0
        # Convergence pressure applies to interior iterations only.
        if 1 < t < config.outer_iters:
            basis = history[-1].sae_objective
            while sae_reps < config.max_repeats_per_iter and abs(r_t - basis) > eps_sae:
                basis = r_t
                r_t = _sae_pass(layers, data, plan, config, t)
                sae_reps += 1
            basis = history[-1].rbm_objective
            while rbm_reps < config.max_repeats_per_iter and abs(j_t - basis) > eps_rbm:
                basis = j_t
                head, j_t = _rbm_pass(layers, head, data, plan, config, t,
                                      rbm_reps + 1)
                rbm_reps += 1
        history.append(IterationRecord(t, r_t, j_t, sae_reps, rbm_reps))

    norm = data.norm_stats if data.norm_stats is not None else NormStats.identity(data.dim)
    final = Model(SaeStack(tuple(layers)), head, norm, config)
    return final, history


def encode(model: Model, x) -> HashCode:
    """Hash one raw feature vector: normalize, encode, threshold, RBM hash."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError("encode takes a single feature vector; see encode_matrix")
    normed = model.norm_stats.apply(x)
    top = sae_ops.encode_stack(model.sae, normed)
    return rbm_ops.hash_code(model.rbm, sae_ops.binarize_pm(top))


def encode_matrix(model: Model, values) -> np.ndarray:
    """Hash many rows at once; returns packed code words, one row per input."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    normed = model.norm_stats.apply(values)
    top = sae_ops.encode_stack(model.sae, normed)
    bits = rbm_ops.hash_bits(model.rbm, sae_ops.binarize_pm(top))
    return pack_bits(bits)


def _model_payload(model: Model) -> str:
    lines = config_lines(model.config)
    lines.append(f"norm.mode={model.norm_stats.mode}")
    lines.append(f"norm.shift={_fmt_vec(model.norm_stats.shift)}")
    lines.append(f"norm.scale={_fmt_vec(model.norm_stats.scale)}")
    lines.append(f"sae.layer_count={len(model.sae.layers)}")
    for i, layer in enumerate(model.sae.layers):
        lines.append(f"sae.{i}.in_dim={layer.in_dim}")
        lines.append(f"sae.{i}.out_dim={layer.out_dim}")
        lines.append(f"sae.{i}.enc_w={_fmt_vec(layer.enc_w)}")
        lines.append(f"sae.{i}.enc_b={_fmt_vec(layer.enc_b)}")
        lines.append(f"sae.{i}.dec_w={_fmt_vec(layer.dec_w)}")
        lines.append(f"sae.{i}.dec_b={_fmt_vec(layer.dec_b)}")
    lines.append(f"rbm.v_dim={model.rbm.v_dim}")
    lines.append(f"rbm.h_dim={model.rbm.h_dim}")
    lines.append(f"rbm.beta={_fmt(model.rbm.beta)}")
    lines.append(f"rbm.cd_steps={model.rbm.cd_steps}")
    lines.append(f"rbm.w={_fmt_vec(model.rbm.w)}")
    lines.append(f"rbm.vis_bias={_fmt_vec(model.rbm.vis_bias)}")
    lines.append(f"rbm.hid_bias={_fmt_vec(model.rbm.hid_bias)}")
    return "\n".join(lines) + "\n"


def save_model(model: Model, path) -> None:
    payload = _model_payload(model).encode("utf-8")
    header = MODEL_MAGIC + np.uint32(MODEL_FORMAT_VERSION).tobytes()
    header += np.uint32(zlib.crc32(payload)).tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def _parse_vec(text: str, size: int, key: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != size:
        raise FormatError(f"model field {key}: expected {size} values, got {len(parts)}")
    return np.array([float(p) for p in parts], dtype=np.float64)


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise TruncationError(f"{path}: shorter than the fixed header")
    if blob[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MODEL_MAGIC!r}")
    version = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    if version != MODEL_FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version}, this reader supports "
            f"{MODEL_FORMAT_VERSION}"
        )
    stored_crc = int(np.frombuffer(blob, dtype="<u4", count=1, offset=8)[0])
    payload = blob[12:]
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")

    fields = {}
    for line in payload.decode("utf-8").splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        fields[key] = value

    def need(key):
        if key not in fields:
            raise FormatError(f"{path}: missing model field {key!r}")
        return fields[key]

    config = parse_config_text(
        "\n".join(f"{k}={need('config.' + k)}" for k, _ in _CONFIG_KEYS),
        where=str(path),
    )
    dim = config.layer_dims[0]
    norm = NormStats(need("norm.mode"),
                     _parse_vec(need("norm.shift"), dim, "norm.shift"),
                     _parse_vec(need("norm.scale"), dim, "norm.scale"))
    count = int(need("sae.layer_count"))
    layers = []
    for i in range(count):
        p = int(need(f"sae.{i}.in_dim"))
        q = int(need(f"sae.{i}.out_dim"))
        layers.append(SaeLayer(
            _parse_vec(need(f"sae.{i}.enc_w"), q * p, f"sae.{i}.enc_w").reshape(q, p),
            _parse_vec(need(f"sae.{i}.enc_b"), q, f"sae.{i}.enc_b"),
            _parse_vec(need(f"sae.{i}.dec_w"), p * q, f"sae.{i}.dec_w").reshape(p, q),
            _parse_vec(need(f"sae.{i}.dec_b"), p, f"sae.{i}.dec_b"),
        ))
    v_dim = int(need("rbm.v_dim"))
    h_dim = int(need("rbm.h_dim"))
    head = Rbm(
        _parse_vec(need("rbm.w"), h_dim * v_dim, "rbm.w").reshape(h_dim, v_dim),
        _parse_vec(need("rbm.vis_bias"), v_dim, "rbm.vis_bias"),
        _parse_vec(need("rbm.hid_bias"), h_dim, "rbm.hid_bias"),
        beta=float(need("rbm.beta")),
        cd_steps=int(need("rbm.cd_steps")),
    )
    return Model(SaeStack(tuple(layers)), head, norm, config)
