"""A small trainable convolutional network with hand-written gradients.

Architecture: a stack of same-padding convolutions with ReLU between
(none after the last), optionally added back onto the input (residual).
The final layer initializes to zero, so a fresh residual network is
exactly the identity map; wrapped into a data-consistent projection it
then reproduces the plain right inverse, which is the reference point
training improves on.

Sinogram-domain networks use a (1, k) kernel: they convolve along the
detector axis only and treat each angle row independently with shared
weights.

Gradients are exact reverse-mode derivatives of

    mean_i ||forward(v_i) - x_i||^2 + weight_decay * sum_l ||K_l||^2

with the ReLU subgradient at 0 taken as 0, and weight decay applied to
convolution kernels only, never biases.  No autodiff framework is
involved; the finite-difference oracle in the test suite checks every
parameter path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from dcreg.linalg import DimensionMismatchError, l2_distance, l2_norm
from dcreg.rng import Rng

# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkArch:
    """Layer widths (including in/out channels), kernel size, residual flag."""

    channels: tuple[int, ...] = (1, 8, 8, 1)
    kernel: tuple[int, int] = (3, 3)
    residual: bool = True

    def __post_init__(self):
        if len(self.channels) < 2:
            raise ValueError("NetworkArch: need at least one layer")
        if self.residual and self.channels[0] != self.channels[-1]:
            raise ValueError("NetworkArch: residual needs matching in/out channels")
        kh, kw = self.kernel
        if kh % 2 != 1 or kw % 2 != 1:
            raise ValueError("NetworkArch: kernel sides must be odd (same padding)")

    @property
    def n_layers(self) -> int:
        return len(self.channels) - 1


@dataclass
class NetworkParameters:
    arch: NetworkArch
    kernels: list[np.ndarray]  # each (c_out, c_in, kh, kw)
    biases: list[np.ndarray]  # each (c_out,)


def init_network(arch: NetworkArch, rng: Rng) -> NetworkParameters:
    """Centered-uniform init scaled by 1/sqrt(fan-in); last layer zero.

    Weights are drawn layer by layer in C order from the given stream,
    biases start at zero, so identical seeds give identical parameters.
    """
    kh, kw = arch.kernel
    kernels, biases = [], []
    n = arch.n_layers
    for layer in range(n):
        c_in, c_out = arch.channels[layer], arch.channels[layer + 1]
        if layer == n - 1:
            k = np.zeros((c_out, c_in, kh, kw))
        else:
            bound = 1.0 / np.sqrt(c_in * kh * kw)
            k = rng.uniform_vector(c_out * c_in * kh * kw, -bound, bound).reshape(
                c_out, c_in, kh, kw
            )
        kernels.append(k)
        biases.append(np.zeros(c_out))
    return NetworkParameters(arch, kernels, biases)


def clone_parameters(params: NetworkParameters) -> NetworkParameters:
    return NetworkParameters(
        params.arch,
        [k.copy() for k in params.kernels],
        [b.copy() for b in params.biases],
    )


# ---------------------------------------------------------------------------
# convolution kernels (same padding, zeros outside)
# ---------------------------------------------------------------------------


def _pad(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _conv(xp: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Correlate padded input (B,C,H+kh-1,W+kw-1) with kernel (O,C,kh,kw)."""
    o, c, kh, kw = k.shape
    h = xp.shape[2] - kh + 1
    w = xp.shape[3] - kw + 1
    acc = None
    for dy in range(kh):
        for dx in range(kw):
            part = np.tensordot(k[:, :, dy, dx], xp[:, :, dy : dy + h, dx : dx + w], axes=(1, 1))
            acc = part if acc is None else acc + part
    return acc.transpose(1, 0, 2, 3)


def _conv_back(
    xp: np.ndarray, k: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the correlation: (dK, db, dx)."""
    o, c, kh, kw = k.shape
    h, w = dout.shape[2], dout.shape[3]
    dk = np.empty_like(k)
    dxp = np.zeros_like(xp)
    for dy in range(kh):
        for dx in range(kw):
            xs = xp[:, :, dy : dy + h, dx : dx + w]
            dk[:, :, dy, dx] = np.tensordot(dout, xs, axes=([0, 2, 3], [0, 2, 3]))
            dxp[:, :, dy : dy + h, dx : dx + w] += np.tensordot(
                k[:, :, dy, dx], dout, axes=(0, 1)
            ).transpose(1, 0, 2, 3)
    db = dout.sum(axis=(0, 2, 3))
    ph, pw = kh // 2, kw // 2
    dx_ = dxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else dxp
    return dk, db, dx_


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _as_batch(x: np.ndarray, c_in: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if c_in != 1:
            raise DimensionMismatchError("2-d input but network expects multiple channels")
        return x[None, None], True
    if x.ndim == 3:
        # (B, H, W) batch of single-channel grids
        if c_in != 1:
            raise DimensionMismatchError("3-d input but network expects multiple channels")
        return x[:, None], False
    if x.ndim == 4:
        if x.shape[1] != c_in:
            raise DimensionMismatchError(
                f"input has {x.shape[1]} channels, network expects {c_in}"
            )
        return x, False
    raise DimensionMismatchError(f"unsupported input rank {x.ndim}")


def forward_batch(params: NetworkParameters, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the network on a (B,C,H,W) batch; returns output and cache."""
    arch = params.arch
    kh, kw = arch.kernel
    a = x
    cache = []
    n = arch.n_layers
    for layer in range(n):
        xp = _pad(a, kh, kw)
        z = _conv(xp, params.kernels[layer]) + params.biases[layer][None, :, None, None]
        cache.append((xp, z))
        a = np.maximum(z, 0.0) if layer < n - 1 else z
    out = x + a if arch.residual else a
    return out, cache


def backward_batch(
    params: NetworkParameters, cache: list, dout: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse-mode pass; returns per-layer (dK, db) and the input gradient."""
    arch = params.arch
    n = arch.n_layers
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * n  # type: ignore[list-item]
    da = dout
    for layer in range(n - 1, -1, -1):
        xp, z = cache[layer]
        dz = da if layer == n - 1 else da * (z > 0.0)
        dk, db, da = _conv_back(xp, params.kernels[layer], dz)
        grads[layer] = (dk, db)
    dx = dout + da if arch.residual else da
    return grads, dx


def network_forward(params: NetworkParameters, x: np.ndarray) -> np.ndarray:
    """Apply the network to one grid (or a (B,H,W) / (B,C,H,W) batch)."""
    xb, single = _as_batch(x, params.arch.channels[0])
    out, _ = forward_batch(params, xb)
    if single:
        return out[0, 0]
    if np.asarray(x).ndim == 3:
        return out[:, 0]
    return out


def network_map(params: NetworkParameters) -> Callable[[np.ndarray], np.ndarray]:
    """The network as a plain grid-to-grid callable (for wrappers)."""
    return lambda x: network_forward(params, x)


def network_gradient(
    params: NetworkParameters,
    inputs: np.ndarray,
    targets: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Loss and exact gradient of the batch-mean squared-error objective."""
    xb, _ = _as_batch(inputs, params.arch.channels[0])
    tb, _ = _as_batch(targets, params.arch.channels[-1])
    if xb.shape[0] != tb.shape[0]:
        raise DimensionMismatchError("inputs and targets disagree on batch size")
    b = xb.shape[0]
    out, cache = forward_batch(params, xb)
    resid = out - tb
    loss = float((resid * resid).sum()) / b
    dout = (2.0 / b) * resid
    grads, _ = backward_batch(params, cache, dout)
    if weight_decay:
        loss += weight_decay * sum(float((k * k).sum()) for k in params.kernels)
        grads = [(dk + 2.0 * weight_decay * k, db) for (dk, db), k in zip(grads, params.kernels)]
    return loss, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    t: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @staticmethod
    def zeros_like(params: NetworkParameters) -> "OptimizerState":
        flat = list(params.kernels) + list(params.biases)
        return OptimizerState(
            0, [np.zeros_like(a) for a in flat], [np.zeros_like(a) for a in flat]
        )


def adam_step(
    params: NetworkParameters,
    grads: list[tuple[np.ndarray, np.ndarray]],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update, in place, with standard bias correction."""
    state.t += 1
    t = state.t
    flat_params = list(params.kernels) + list(params.biases)
    flat_grads = [g[0] for g in grads] + [g[1] for g in grads]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(flat_params, flat_grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr_start: float = 1e-3
    lr_final: float = 1e-4
    weight_decay: float = 0.0
    arch: NetworkArch = field(default_factory=NetworkArch)


class TrainAdapter:
    """Optional hook turning raw network outputs into training outputs.

    The data-consistent trainings wrap the network output (pointwise
    saturation projection, null-space projection) before the loss;
    subclasses implement the wrapped forward and the corresponding
    pullback of the output gradient.  Index arguments refer to positions
    in the full training set so adapters can look up per-sample context.
    """

    def forward(self, u_out: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return u_out

    def backward(self, d_wrapped: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return d_wrapped


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.epochs <= 1 or cfg.lr_start == cfg.lr_final:
        return cfg.lr_start
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_start * (cfg.lr_final / cfg.lr_start) ** frac


def train(
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    rng: Rng,
    adapter: TrainAdapter | None = None,
    val_inputs: np.ndarray | None = None,
    val_targets: np.ndarray | None = None,
    val_adapter: TrainAdapter | None = None,
    params: NetworkParameters | None = None,
) -> tuple[NetworkParameters, dict]:
    """Shuffled mini-batch Adam on (input, target) grid pairs.

    Inputs are whatever the configured right inverse / regularizer
    produced upstream; this loop never applies forward operators itself.
    Returns the trained parameters and a history dict with per-epoch
    train loss and, if validation data is given, the final validation
    loss.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("train: empty dataset")
    if targets.shape[0] != n:
        raise DimensionMismatchError("train: inputs/targets length mismatch")
    adapter = adapter or TrainAdapter()
    if params is None:
        params = init_network(cfg.arch, rng)
    state = OptimizerState.zeros_like(params)
    history: dict = {"train_loss": []}
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, _ = _as_batch(inputs[idx], params.arch.channels[0])
            tb, _ = _as_batch(targets[idx], params.arch.channels[-1])
            b = xb.shape[0]
            out, cache = forward_batch(params, xb)
            wrapped = adapter.forward(out[:, 0], idx)
            resid = wrapped - tb[:, 0]
            loss = float((resid * resid).sum()) / b
            d_wrapped = (2.0 / b) * resid
            dout = adapter.backward(d_wrapped, idx)[:, None]
            grads, _ = backward_batch(params, cache, dout)
            if cfg.weight_decay:
                loss += cfg.weight_decay * sum(float((k * k).sum()) for k in params.kernels)
                grads = [
                    (dk + 2.0 * cfg.weight_decay * k, db)
                    for (dk, db), k in zip(grads, params.kernels)
                ]
            adam_step(params, grads, state, lr)
            epoch_loss += loss * b
        history["train_loss"].append(epoch_loss / n)
    if val_inputs is not None and val_targets is not None:
        history["val_loss"] = evaluate_loss(
            params, val_inputs, val_targets, val_adapter or TrainAdapter()
        )
    return params, history


def evaluate_loss(
    params: NetworkParameters,
    inputs: np.ndarray,
    targets: np.ndarray,
    adapter: TrainAdapter | None = None,
) -> float:
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    adapter = adapter or TrainAdapter()
    xb, _ = _as_batch(inputs, params.arch.channels[0])
    out, _ = forward_batch(params, xb)
    wrapped = adapter.forward(out[:, 0], np.arange(inputs.shape[0]))
    resid = wrapped - targets
    return float((resid * resid).sum()) / inputs.shape[0]


# ---------------------------------------------------------------------------
# Lipschitz estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzReport:
    lower: float  # largest observed ratio / Jacobian norm: a lower bound
    upper: float  # 1 + product of layer norms (residual) or the product


def _jvp(params: NetworkParameters, cache: list, v: np.ndarray) -> np.ndarray:
    """Directional derivative of the network at the cached point."""
    arch = params.arch
    kh, kw = arch.kernel
    n = arch.n_layers
    t = v
    for layer in range(n):
        tp = _pad(t, kh, kw)
        tz = _conv(tp, params.kernels[layer])
        if layer < n - 1:
            _, z = cache[layer]
            tz = tz * (z > 0.0)
        t = tz
    return v + t if arch.residual else t


def layer_spectral_norms(
    params: NetworkParameters, grid_shape: tuple[int, int], rng: Rng, iters: int = 200
) -> list[float]:
    """Operator norm of each convolution layer on the given grid."""
    kh, kw = params.arch.kernel
    norms = []
    for layer, k in enumerate(params.kernels):
        c_in = params.arch.channels[layer]
        v = rng.gaussian_vector(c_in * grid_shape[0] * grid_shape[1]).reshape(
            1, c_in, *grid_shape
        )
        v /= max(l2_norm(v), 1e-300)
        est = 0.0
        for _ in range(iters):
            av = _conv(_pad(v, kh, kw), k)
            new_est = l2_norm(av)
            if new_est == 0.0:
                break
            _, _, w = _conv_back(_pad(v, kh, kw), k, av)
            nw = l2_norm(w)
            if nw == 0.0:
                break
            v = w / nw
            if abs(new_est - est) <= 1e-12 * max(new_est, 1e-300):
                est = new_est
                break
            est = new_est
        norms.append(est)
    return norms


def lipschitz_estimate(
    params: NetworkParameters,
    grid_shape: tuple[int, int],
    rng: Rng,
    n_pairs: int = 20,
    n_points: int = 5,
    power_iters: int = 60,
) -> LipschitzReport:
    """Probe-based lower bound and layer-product upper bound.

    The lower bound takes the best of finite-difference ratios on random
    pairs and power-iterated Jacobian norms at random points; for a ReLU
    network it can only underestimate.  The upper bound multiplies the
    per-layer operator norms (ReLU is 1-Lipschitz) and adds 1 for the
    residual skip.
    """
    h, w = grid_shape
    c_in = params.arch.channels[0]
    lower = 0.0
    for _ in range(n_pairs):
        a = rng.gaussian_vector(c_in * h * w).reshape(1, c_in, h, w)
        b = rng.gaussian_vector(c_in * h * w).reshape(1, c_in, h, w)
        fa, _ = forward_batch(params, a)
        fb, _ = forward_batch(params, b)
        denom = l2_distance(a, b)
        if denom > 0:
            lower = max(lower, l2_distance(fa, fb) / denom)
    for _ in range(n_points):
        x = rng.gaussian_vector(c_in * h * w).reshape(1, c_in, h, w)
        _, cache = forward_batch(params, x)
        v = rng.gaussian_vector(c_in * h * w).reshape(1, c_in, h, w)
        v /= max(l2_norm(v), 1e-300)
        sigma = 0.0
        for _ in range(power_iters):
            jv = _jvp(params, cache, v)
            sigma = l2_norm(jv)
            if sigma == 0.0:
                break
            _, jt = backward_batch(params, cache, jv)
            njt = l2_norm(jt)
            if njt == 0.0:
                break
            v = jt / njt
        lower = max(lower, sigma)
    prod = 1.0
    for s in layer_spectral_norms(params, grid_shape, rng):
        prod *= s
    upper = 1.0 + prod if params.arch.residual else prod
    return LipschitzReport(lower=lower, upper=upper)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def checkpoint_save(path, params: NetworkParameters, meta: dict | None = None) -> None:
    """Write parameters and metadata to a single .npz container."""
    arch = params.arch
    payload = {
        "version": np.array(_CHECKPOINT_VERSION),
        "channels": np.array(arch.channels, dtype=np.int64),
        "kernel": np.array(arch.kernel, dtype=np.int64),
        "residual": np.array(1 if arch.residual else 0),
        "meta": np.array(json.dumps(meta or {})),
    }
    for i, (k, b) in enumerate(zip(params.kernels, params.biases)):
        payload[f"k{i}"] = k
        payload[f"b{i}"] = b
    np.savez(path, **payload)


def checkpoint_load(path) -> tuple[NetworkParameters, dict]:
    """Load a checkpoint written by :func:`checkpoint_save` (bit-exact)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version} not supported")
        arch = NetworkArch(
            channels=tuple(int(c) for c in data["channels"]),
            kernel=tuple(int(k) for k in data["kernel"]),
            residual=bool(int(data["residual"])),
        )
        kernels = [data[f"k{i}"].copy() for i in range(arch.n_layers)]
        biases = [data[f"b{i}"].copy() for i in range(arch.n_layers)]
        meta = json.loads(str(data["meta"]))
    return NetworkParameters(arch, kernels, biases), meta
