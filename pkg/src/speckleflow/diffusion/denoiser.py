"""Small convolutional noise-prediction network with hand-written gradients.

The network receives the noisy latent concatenated channelwise with the
conditioning tensor, runs a stack of 3x3 same-padded conv layers, and after
every hidden layer applies a per-channel scale-and-shift derived from a
sinusoidal embedding of the diffusion step, followed by SiLU. The final
conv layer has a single output channel and no bias, so zero weights predict
zero noise.

All parameters live in one flat vector (the on-disk model format stores it
verbatim); forward and backward are implemented directly in numpy via
im2col so gradients can be validated against finite differences at double
precision while training runs in float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericalError


@dataclass(frozen=True)
class DenoiserArch:
    """Shape of the denoiser: conv widths, kernel, and time-embedding size.

    ``in_channels`` counts the noisy latent plus all condition channels
    (n_few frames + 1 prior). ``n_layers`` is the total number of conv
    layers including the final single-channel projection.
    """

    in_channels: int
    hidden_channels: int = 32
    n_layers: int = 4
    kernel_size: int = 3
    time_embed_dim: int = 32

    def __post_init__(self):
        if self.in_channels < 1 or self.hidden_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.n_layers < 2:
            raise ValueError("need at least one hidden layer plus the output layer")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even and >= 2")


def param_table(arch: DenoiserArch) -> list[tuple[str, tuple[int, ...], int, int]]:
    """Ordered (name, shape, start, end) layout of the flat weight vector."""
    entries: list[tuple[str, tuple[int, ...], int, int]] = []
    offset = 0

    def add(name: str, shape: tuple[int, ...]) -> None:
        nonlocal offset
        size = int(np.prod(shape))
        entries.append((name, shape, offset, offset + size))
        offset += size

    k = arch.kernel_size
    c_in = arch.in_channels
    for layer in range(arch.n_layers - 1):
        c_out = arch.hidden_channels
        add(f"conv{layer}.weight", (c_out, c_in, k, k))
        add(f"conv{layer}.bias", (c_out,))
        add(f"film{layer}.weight", (2 * c_out, arch.time_embed_dim))
        add(f"film{layer}.bias", (2 * c_out,))
        c_in = c_out
    add("final.weight", (1, c_in, k, k))
    return entries


def n_params(arch: DenoiserArch) -> int:
    return param_table(arch)[-1][3]


@dataclass
class DenoiserParams:
    """Architecture descriptor plus the flat weight vector."""

    arch: DenoiserArch
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        if self.weights.ndim != 1 or self.weights.size != n_params(self.arch):
            raise ValueError(
                f"weight vector has {self.weights.size} entries, "
                f"architecture needs {n_params(self.arch)}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    def view(self, name: str) -> np.ndarray:
        """Reshaped view into the flat vector for one parameter tensor."""
        for entry, shape, start, end in param_table(self.arch):
            if entry == name:
                return self.weights[start:end].reshape(shape)
        raise KeyError(name)


def init_params(arch: DenoiserArch, seed: int, dtype=np.float32) -> DenoiserParams:
    """Fan-in-scaled uniform init; biases and the final layer start at zero.

    A zero final layer makes the untrained network predict zero noise,
    which keeps the first optimizer steps well-scaled.
    """
    rng = np.random.default_rng(seed)
    flat = np.zeros(n_params(arch), dtype=np.float64)
    for name, shape, start, end in param_table(arch):
        if name == "final.weight" or name.endswith(".bias"):
            continue
        if name.startswith("conv"):
            fan_in = int(np.prod(shape[1:]))
        else:  # film projection from the time embedding
            fan_in = shape[1]
        bound = 1.0 / math.sqrt(fan_in)
        flat[start:end] = rng.uniform(-bound, bound, size=end - start)
    return DenoiserParams(arch=arch, weights=flat.astype(dtype))


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal encoding of the diffusion step.

    Frequencies follow a geometric ladder from 1 down to 1/10000; returns
    shape (dim,) for a scalar t or (B, dim) for a vector of steps.
    """
    if dim < 2 or dim % 2:
        raise ValueError("embedding dim must be even and >= 2")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / max(half - 1, 1))
    args = np.asarray(t, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def _silu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # tanh form of the sigmoid avoids exp overflow in float32
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return x * sig, sig


def _silu_grad(x: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return sig * (1.0 + x * (1.0 - sig))


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, H*W) patch matrix with same zero padding."""
    b, c, h, w = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
    return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * k * k, h * w)


def _col2im(dcols: np.ndarray, x_shape: tuple[int, ...], k: int) -> np.ndarray:
    """Scatter-add the patch-matrix gradient back onto the input grid."""
    b, c, h, w = x_shape
    pad = k // 2
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d6 = dcols.reshape(b, c, k, k, h, w)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki : ki + h, kj : kj + w] += d6[:, :, ki, kj]
    return dxp[:, :, pad : pad + h, pad : pad + w]


def _conv_forward(x_cols: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    c_out = weight.shape[0]
    w_mat = weight.reshape(c_out, -1)
    out = np.matmul(w_mat, x_cols)  # (B, C_out, H*W)
    if bias is not None:
        out += bias[None, :, None]
    return out


def _conv_backward(
    dz: np.ndarray, x_cols: np.ndarray, weight: np.ndarray, with_dx: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    c_out = weight.shape[0]
    w_mat = weight.reshape(c_out, -1)
    b = dz.shape[0]
    # fold the batch into one GEMM for the weight gradient
    dz_flat = np.ascontiguousarray(dz.transpose(1, 0, 2)).reshape(c_out, -1)
    cols_flat = np.ascontiguousarray(x_cols.transpose(1, 0, 2)).reshape(x_cols.shape[1], -1)
    dw = np.matmul(dz_flat, cols_flat.T).reshape(weight.shape)
    db = dz.sum(axis=(0, 2))
    dcols = np.matmul(w_mat.T, dz) if with_dx else None
    return dw, db, dcols


def _forward(
    params: DenoiserParams, x: np.ndarray, emb: np.ndarray, keep_cache: bool = False
) -> tuple[np.ndarray, list | None]:
    """Batched forward pass; x is (B, C_in, H, W), emb is (B, embed_dim)."""
    arch = params.arch
    dtype = params.weights.dtype
    b, c, h, w = x.shape
    if c != arch.in_channels:
        raise ValueError(f"expected {arch.in_channels} input channels, got {c}")
    k = arch.kernel_size
    hidden = arch.hidden_channels
    a = x.astype(dtype, copy=False)
    emb = np.asarray(emb, dtype=dtype)
    cache: list = []
    for layer in range(arch.n_layers - 1):
        cols = _im2col(a, k)
        z = _conv_forward(cols, params.view(f"conv{layer}.weight"), params.view(f"conv{layer}.bias"))
        z = z.reshape(b, hidden, h, w)
        sc = emb @ params.view(f"film{layer}.weight").T + params.view(f"film{layer}.bias")
        scale, shift = sc[:, :hidden], sc[:, hidden:]
        f = z * (1.0 + scale)[:, :, None, None] + shift[:, :, None, None]
        a_next, sig = _silu(f)
        if not np.all(np.isfinite(a_next)):
            raise NumericalError(f"non-finite activation after hidden layer {layer}")
        if keep_cache:
            cache.append((cols, z, scale, f, sig, a.shape))
        a = a_next
    cols = _im2col(a, k)
    out = _conv_forward(cols, params.view("final.weight"), None).reshape(b, 1, h, w)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite network output")
    if keep_cache:
        cache.append((cols, a.shape))
    return out, (cache if keep_cache else None)


def _backward(params: DenoiserParams, cache: list, dout: np.ndarray, emb: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient of a scalar loss w.r.t. the flat weight vector.

    ``dout`` is the loss gradient at the network output, (B, 1, H, W).
    """
    arch = params.arch
    dtype = params.weights.dtype
    emb = np.asarray(emb, dtype=dtype)
    b = dout.shape[0]
    h, w = dout.shape[2], dout.shape[3]
    grads = np.zeros_like(params.weights)
    table = {name: (shape, start, end) for name, shape, start, end in param_table(arch)}

    def store(name: str, value: np.ndarray) -> None:
        shape, start, end = table[name]
        grads[start:end] = value.reshape(-1)

    final_cols, a_shape = cache[-1]
    dz = dout.reshape(b, 1, h * w).astype(dtype, copy=False)
    dw, _, dcols = _conv_backward(dz, final_cols, params.view("final.weight"), with_dx=True)
    store("final.weight", dw)
    da = _col2im(dcols, a_shape, arch.kernel_size)

    for layer in range(arch.n_layers - 2, -1, -1):
        cols, z, scale, f, sig, in_shape = cache[layer]
        df = da * _silu_grad(f, sig)
        dz_img = df * (1.0 + scale)[:, :, None, None]
        dscale = np.sum(df * z, axis=(2, 3))
        dshift = np.sum(df, axis=(2, 3))
        dsc = np.concatenate([dscale, dshift], axis=1)  # (B, 2*hidden)
        store(f"film{layer}.weight", dsc.T @ emb)
        store(f"film{layer}.bias", dsc.sum(axis=0))
        dz = dz_img.reshape(b, arch.hidden_channels, h * w)
        dw, db, dcols = _conv_backward(
            dz, cols, params.view(f"conv{layer}.weight"), with_dx=layer > 0
        )
        store(f"conv{layer}.weight", dw)
        store(f"conv{layer}.bias", db)
        if layer > 0:
            da = _col2im(dcols, in_shape, arch.kernel_size)
    return grads


def denoise_predict(params: DenoiserParams, x_t: np.ndarray, t, cond) -> np.ndarray:
    """Predict the injected noise for one latent given its condition.

    ``cond`` may be a Condition or a raw (C, H, W) channel stack; output is
    H x W in the parameter dtype. Deterministic; aborts on non-finite
    activations.
    """
    channels = getattr(cond, "channels", cond)
    x_t = np.asarray(x_t)
    channels = np.asarray(channels)
    if x_t.ndim != 2:
        raise ValueError("x_t must be 2D")
    if channels.ndim != 3 or channels.shape[1:] != x_t.shape:
        raise ValueError(f"condition shape {channels.shape} incompatible with latent {x_t.shape}")
    net_in = np.concatenate([x_t[None], channels])[None]  # (1, C_in, H, W)
    emb = time_embedding(np.array([t], dtype=np.float64), params.arch.time_embed_dim)
    out, _ = _forward(params, net_in, emb)
    return out[0, 0]
