"""Dense tensor primitives with hand-written gradients.

Tensors are plain ``numpy.ndarray`` objects (row-major, explicit shape).
Every function here is pure: inputs are never modified in place.
"""
import numpy as np

from .errors import DimensionError


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b):
    """Matrix product of ``a[m, k]`` and ``b[k, n]``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(a, b, upstream):
    """Return ``(dA, dB)`` for ``C = A @ B`` given ``dC``."""
    upstream = np.asarray(upstream)
    if upstream.shape != (a.shape[0], b.shape[1]):
        raise DimensionError(
            f"matmul_backward: upstream {upstream.shape} does not match output "
            f"({a.shape[0]}, {b.shape[1]})"
        )
    return upstream @ b.T, a.T @ upstream


def add_bias(x, bias):
    """Add a bias vector to every row of ``x`` (the only broadcast we allow)."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not fit rows of {x.shape}")
    return x + bias


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    # subgradient at exactly 0 is 0
    _check_same_shape(x, upstream, "relu_backward")
    return np.where(x > 0, upstream, 0.0)


def softmax_rows(z):
    """Row-wise softmax with max subtraction."""
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DimensionError(f"softmax_rows expects [B, K>=2], got {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def conv3x3_forward(x, w, b):
    """Stride-1, zero-padded 3x3 convolution.

    ``x`` is ``[B, C_in, H, W]``, ``w`` is ``[C_out, C_in, 3, 3]``; output keeps H and W.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv3x3: input {x.shape} incompatible with kernel {w.shape}")
    _, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((x.shape[0], w.shape[0], h, wd), dtype=np.result_type(x, w))
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di:di + h, dj:dj + wd]
            out += np.einsum("bchw,oc->bohw", patch, w[:, :, di, dj])
    return out + b[None, :, None, None]


def conv3x3_backward(x, w, upstream):
    """Return ``(dx, dw, db)`` for :func:`conv3x3_forward`."""
    _, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di:di + h, dj:dj + wd]
            dw[:, :, di, dj] = np.einsum("bohw,bchw->oc", upstream, patch)
            dxp[:, :, di:di + h, dj:dj + wd] += np.einsum("bohw,oc->bchw", upstream, w[:, :, di, dj])
    db = upstream.sum(axis=(0, 2, 3))
    return dxp[:, :, 1:-1, 1:-1], dw, db


def maxpool2_forward(x):
    """2x2 max pooling with stride 2; returns ``(out, argmax_mask)``."""
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even spatial dims, got {x.shape}")
    blocks = x.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(bsz, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(idx, upstream, in_shape):
    bsz, c, h, w = in_shape
    grad_blocks = np.zeros((bsz, c, h // 2, w // 2, 4), dtype=upstream.dtype)
    np.put_along_axis(grad_blocks, idx[..., None], upstream[..., None], axis=-1)
    grad = grad_blocks.reshape(bsz, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return grad.reshape(bsz, c, h, w)


def finite_difference_grad(f, x, eps=1e-5, indices=None):
    """Central-difference gradient of scalar ``f`` at ``x``.

    If ``indices`` (flat positions) is given, only those coordinates are
    probed and a 1-D array of the same length is returned.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    out = []
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        out.append((fp - fm) / (2.0 * eps))
    out = np.asarray(out, dtype=np.float64)
    return out.reshape(x.shape) if indices is None else out


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom
