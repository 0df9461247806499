"""Stochastic input perturbation ("mutation") applied to one network's batch.

Inputs are treated as images: ``[B, C, H, W]``, ``[B, H, W]``, or flat
``[B, D]`` vectors, which are handled as a single-row image ``H=1, W=D``.
Every transform returns a tensor of the same shape as its input.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

KINDS = ("random_crop", "noise_inject", "fusion", "splice", "deform")

CROP_SCALE_RANGE = (0.3, 0.7)
MIX_LAMBDA_RANGE = (0.3, 0.7)
NOISE_SIGMA_RANGE = (0.05, 0.2)
MAX_SHIFT_FRACTION = 0.25


@dataclass(frozen=True)
class PerturbConfig:
    kinds: tuple = KINDS
    crop_scale: tuple = CROP_SCALE_RANGE
    mix_lambda: tuple = MIX_LAMBDA_RANGE
    noise_sigma: tuple = NOISE_SIGMA_RANGE

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if not self.kinds:
            raise ConfigError("perturbation pool is empty")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ConfigError(f"unknown perturbation kinds {sorted(unknown)}")
        for name in ("crop_scale", "mix_lambda", "noise_sigma"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ConfigError(f"invalid {name} range ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))


@dataclass
class PerturbEvent:
    iteration: int
    target_net: int
    kind: str
    crop_scale: Optional[float] = None
    noise_sigma: Optional[float] = None
    mix_lambda: Optional[float] = None
    box: Optional[tuple] = None  # (row0, row1, col0, col1) for crop / splice
    patch_fraction: Optional[float] = None
    flip: Optional[bool] = None
    shift: Optional[tuple] = None
    partner: Optional[np.ndarray] = field(default=None, repr=False)

    def params_dict(self) -> dict:
        d = asdict(self)
        d.pop("partner")
        return {k: v for k, v in d.items() if v is not None}


def _as_image(x):
    """View ``x`` as ``[B, C, H, W]``; returns the view and a restore callable."""
    shape = x.shape
    if x.ndim == 2:
        return x.reshape(shape[0], 1, 1, shape[1]), shape
    if x.ndim == 3:
        return x.reshape(shape[0], 1, shape[1], shape[2]), shape
    if x.ndim == 4:
        return x, shape
    raise ConfigError(f"cannot perturb inputs of shape {shape}")


def select_mutation_target(n: int, iteration: int, rng) -> int:
    """Uniformly pick the network whose batch is perturbed this iteration.

    ``iteration`` is accepted for logging symmetry; the draw depends only on ``rng``.
    """
    if n < 2:
        raise ConfigError(f"a cohort needs at least 2 networks, got {n}")
    return int(rng.integers(n))


def choose_kind(cfg: PerturbConfig, rng) -> str:
    return cfg.kinds[int(rng.integers(len(cfg.kinds)))]


def _crop_box(h, w, scale, rng):
    if h == 1:
        ch, cw = 1, max(1, int(round(w * scale)))
    else:
        side = np.sqrt(scale)
        ch, cw = max(1, int(round(h * side))), max(1, int(round(w * side)))
    r0 = int(rng.integers(h - ch + 1))
    c0 = int(rng.integers(w - cw + 1))
    return r0, r0 + ch, c0, c0 + cw


def _resize_nearest(img, h, w):
    rows = (np.arange(h) * img.shape[2] // h).astype(int)
    cols = (np.arange(w) * img.shape[3] // w).astype(int)
    return img[:, :, rows][:, :, :, cols]


def stochastic_perturb(inputs, labels, kind: str, rng, cfg: Optional[PerturbConfig] = None,
                       params: Optional[dict] = None, iteration: int = -1, target_net: int = -1):
    """Apply one perturbation to a whole batch.

    Returns ``(new_inputs, new_labels, event)``. ``params`` can pin any of
    the random draws (``crop_scale``, ``noise_sigma``, ``mix_lambda``,
    ``flip``, ``shift``, ``partner``), which is mostly useful in tests.
    """
    cfg = cfg or PerturbConfig()
    params = params or {}
    if kind not in KINDS:
        raise ConfigError(f"unknown perturbation kind {kind!r}")
    x = np.asarray(inputs)
    y = np.asarray(labels)
    bsz = x.shape[0]
    if kind in ("fusion", "splice") and bsz < 2:
        kind = "noise_inject"
    img, orig_shape = _as_image(x)
    _, _, h, w = img.shape
    event = PerturbEvent(iteration=iteration, target_net=target_net, kind=kind)

    def draw(name, lo_hi):
        if name in params:
            return float(params[name])
        return float(rng.uniform(*lo_hi))

    if kind == "random_crop":
        scale = draw("crop_scale", cfg.crop_scale)
        r0, r1, c0, c1 = _crop_box(h, w, scale, rng)
        out = _resize_nearest(img[:, :, r0:r1, c0:c1], h, w)
        event.crop_scale, event.box = scale, (r0, r1, c0, c1)
        new_y = y.copy()
    elif kind == "noise_inject":
        sigma = draw("noise_sigma", cfg.noise_sigma)
        lo, hi = float(img.min()), float(img.max())
        noise = rng.standard_normal(img.shape) * (sigma * (hi - lo))
        out = np.clip(img + noise, lo, hi).astype(img.dtype)
        event.noise_sigma = sigma
        new_y = y.copy()
    elif kind == "fusion":
        lam = draw("mix_lambda", cfg.mix_lambda)
        partner = np.asarray(params["partner"]) if "partner" in params else rng.permutation(bsz)
        out = lam * img + (1.0 - lam) * img[partner]
        new_y = lam * y + (1.0 - lam) * y[partner]
        event.mix_lambda, event.partner = lam, partner
    elif kind == "splice":
        lam = draw("mix_lambda", cfg.mix_lambda)
        partner = np.asarray(params["partner"]) if "partner" in params else rng.permutation(bsz)
        # patch area targets 1 - lam of the image; label weight uses the exact pixel count
        r0, r1, c0, c1 = _crop_box(h, w, 1.0 - lam, rng)
        out = img.copy()
        out[:, :, r0:r1, c0:c1] = img[partner][:, :, r0:r1, c0:c1]
        frac = (r1 - r0) * (c1 - c0) / float(h * w)
        new_y = (1.0 - frac) * y + frac * y[partner]
        event.mix_lambda, event.partner = lam, partner
        event.box, event.patch_fraction = (r0, r1, c0, c1), frac
    else:  # deform
        flip = bool(params["flip"]) if "flip" in params else bool(rng.integers(2))
        max_dy, max_dx = int(MAX_SHIFT_FRACTION * h), int(MAX_SHIFT_FRACTION * w)
        if "shift" in params:
            dy, dx = map(int, params["shift"])
        else:
            dy = int(rng.integers(-max_dy, max_dy + 1))
            dx = int(rng.integers(-max_dx, max_dx + 1))
        src = img[:, :, :, ::-1] if flip else img
        out = np.zeros_like(img)
        ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
        xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
        out[:, :, yd, xd] = src[:, :, ys, xs]
        event.flip, event.shift = flip, (dy, dx)
        new_y = y.copy()
    return out.reshape(orig_shape), new_y, event
