"""Small networks (MLP and a two-conv CNN), backprop, and Nesterov SGD.

A network exposes a *feature tap*: the output of one hidden layer is
returned alongside the logits so a feature-imitation loss can be applied
to it, and a gradient on that feature can be injected during backward.
"""
from __future__ import annotations

import dataclasses
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError, TrainingDivergedError

CHECKPOINT_FORMAT_VERSION = 1

DEFAULT_LR_SCHEDULE = ((0.0, 1.0), (0.5, 0.1), (0.75, 0.01))


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description.

    ``hidden`` holds the hidden widths for an MLP, or
    ``(conv1_channels, conv2_channels, dense_width)`` for ``smallcnn``.
    ``feature_layer`` defaults to the last hidden layer.
    """

    kind: str
    input_shape: tuple
    hidden: tuple
    num_classes: int
    feature_layer: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(d) for d in self.hidden))
        self.validate()

    @property
    def num_layers(self) -> int:
        if self.kind == "mlp":
            return len(self.hidden) + 1
        return 4

    @property
    def feature_index(self) -> int:
        return self.num_layers - 2 if self.feature_layer is None else self.feature_layer

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def layer_output_sizes(self) -> list:
        if self.kind == "mlp":
            return list(self.hidden) + [self.num_classes]
        c, h, w = self.input_shape
        c1, c2, dense = self.hidden
        return [c1 * h * w, c2 * (h // 2) * (w // 2), dense, self.num_classes]

    @property
    def feature_width(self) -> int:
        return self.layer_output_sizes()[self.feature_index]

    def validate(self):
        if self.kind not in ("mlp", "smallcnn"):
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if any(d <= 0 for d in self.input_shape) or not self.input_shape:
            raise ConfigError(f"invalid input_shape {self.input_shape}")
        if any(d <= 0 for d in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        if self.kind == "mlp" and len(self.hidden) == 0:
            raise ConfigError("an MLP needs at least one hidden layer")
        if self.kind == "smallcnn":
            if len(self.hidden) != 3:
                raise ConfigError("smallcnn hidden must be (conv1, conv2, dense)")
            if len(self.input_shape) != 3:
                raise ConfigError("smallcnn input_shape must be (C, H, W)")
            if self.input_shape[1] % 2 or self.input_shape[2] % 2:
                raise ConfigError("smallcnn needs even H and W for pooling")
        if not 0 <= self.feature_index < self.num_layers - 1:
            raise ConfigError(
                f"feature_layer {self.feature_index} out of range for {self.num_layers} layers"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"input_shape": list(self.input_shape), "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        try:
            return cls(
                kind=d.get("kind", "mlp"),
                input_shape=tuple(d["input_shape"]),
                hidden=tuple(d["hidden"]),
                num_classes=int(d["num_classes"]),
                feature_layer=d.get("feature_layer"),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid architecture entry {d!r}: {exc}") from exc


@dataclass
class NetworkState:
    arch: ArchSpec
    params: list
    momentum: list
    net_id: int = 0

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.arch, [p.copy() for p in self.params], [m.copy() for m in self.momentum], self.net_id
        )

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params))


@dataclass
class ForwardRecord:
    logits: np.ndarray
    probs: np.ndarray
    feature: np.ndarray
    cache: list = field(repr=False, default_factory=list)
    input_shape: tuple = ()


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    lr_schedule: tuple = DEFAULT_LR_SCHEDULE

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule", tuple(tuple(map(float, p)) for p in self.lr_schedule))
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        mults = [m for _, m in self.lr_schedule]
        if any(m <= 0 for m in mults) or any(b > a for a, b in zip(mults, mults[1:])):
            raise ConfigError("lr_schedule multipliers must be positive and non-increasing")
        fracs = [f for f, _ in self.lr_schedule]
        if fracs != sorted(fracs):
            raise ConfigError("lr_schedule points must be sorted by epoch fraction")

    def lr_at(self, epoch_fraction: float) -> float:
        """Base rate times the multiplier of the last schedule point <= ``epoch_fraction``."""
        mult = 1.0
        for frac, m in self.lr_schedule:
            if frac <= epoch_fraction:
                mult = m
        return self.learning_rate * mult


def init_network(arch: ArchSpec, seed, net_id: int = 0, dtype=np.float64) -> NetworkState:
    """He-uniform weights for hidden layers, LeCun-uniform for the logit layer, zero biases."""
    arch.validate()
    rng = np.random.default_rng(seed)
    params = []

    def uniform(shape, fan_in, gain):
        bound = np.sqrt(gain / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    if arch.kind == "mlp":
        widths = [arch.input_size] + list(arch.hidden) + [arch.num_classes]
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            last = i == len(widths) - 2
            params.append(uniform((fan_in, fan_out), fan_in, 3.0 if last else 6.0))
            params.append(np.zeros(fan_out, dtype=dtype))
    else:
        c, h, w = arch.input_shape
        c1, c2, dense = arch.hidden
        params.append(uniform((c1, c, 3, 3), c * 9, 6.0))
        params.append(np.zeros(c1, dtype=dtype))
        params.append(uniform((c2, c1, 3, 3), c1 * 9, 6.0))
        params.append(np.zeros(c2, dtype=dtype))
        flat = c2 * (h // 2) * (w // 2)
        params.append(uniform((flat, dense), flat, 6.0))
        params.append(np.zeros(dense, dtype=dtype))
        params.append(uniform((dense, arch.num_classes), dense, 3.0))
        params.append(np.zeros(arch.num_classes, dtype=dtype))
    return NetworkState(arch, params, [np.zeros_like(p) for p in params], net_id)


def _check_input(net: NetworkState, inputs: np.ndarray) -> np.ndarray:
    arch = net.arch
    if inputs.ndim < 2 or int(np.prod(inputs.shape[1:])) != arch.input_size:
        raise DimensionError(
            f"net {net.net_id}: input shape {inputs.shape} does not match arch input {arch.input_shape}"
        )
    if arch.kind == "mlp":
        return inputs.reshape(inputs.shape[0], -1)
    return inputs.reshape((inputs.shape[0],) + arch.input_shape)


def forward(net: NetworkState, inputs) -> ForwardRecord:
    arch = net.arch
    x = _check_input(net, np.asarray(inputs))
    p = net.params
    cache = []
    outputs = []
    if arch.kind == "mlp":
        h = x
        n_layers = arch.num_layers
        for layer in range(n_layers):
            w, b = p[2 * layer], p[2 * layer + 1]
            pre = T.add_bias(T.matmul(h, w), b)
            cache.append((h, pre))
            h = pre if layer == n_layers - 1 else T.relu_forward(pre)
            outputs.append(h)
        logits = h
    else:
        pre1 = T.conv3x3_forward(x, p[0], p[1])
        a1 = T.relu_forward(pre1)
        pre2 = T.conv3x3_forward(a1, p[2], p[3])
        a2 = T.relu_forward(pre2)
        pooled, idx = T.maxpool2_forward(a2)
        flat = pooled.reshape(pooled.shape[0], -1)
        pre3 = T.add_bias(T.matmul(flat, p[4]), p[5])
        a3 = T.relu_forward(pre3)
        logits = T.add_bias(T.matmul(a3, p[6]), p[7])
        cache = [(x, pre1), (a1, pre2, idx, a2.shape), (flat, pre3), (a3, logits)]
        outputs = [a1, pooled, a3, logits]
    feature = outputs[arch.feature_index].reshape(x.shape[0], -1)
    return ForwardRecord(logits, T.softmax_rows(logits), feature, cache, x.shape)


def backward(net: NetworkState, record: ForwardRecord, grad_logits, grad_feature=None) -> list:
    """Parameter gradients of a scalar loss given its gradients on logits and feature.

    ``grad_feature`` (optional) is injected at the feature tap and summed with
    the gradient flowing back from the logits.
    """
    arch = net.arch
    grad_logits = np.asarray(grad_logits)
    if grad_logits.shape != record.logits.shape:
        raise DimensionError(
            f"net {net.net_id}: logit grad {grad_logits.shape} vs logits {record.logits.shape}"
        )
    if grad_feature is not None:
        grad_feature = np.asarray(grad_feature)
        if grad_feature.shape != record.feature.shape:
            raise DimensionError(
                f"net {net.net_id}: feature grad {grad_feature.shape} vs feature {record.feature.shape}"
            )
    fl = arch.feature_index
    p = net.params
    grads = [None] * len(p)

    def inject(layer, g):
        if grad_feature is not None and layer == fl:
            return g + grad_feature.reshape(g.shape)
        return g

    if arch.kind == "mlp":
        g = grad_logits
        for layer in reversed(range(arch.num_layers)):
            h_in, pre = record.cache[layer]
            if layer != arch.num_layers - 1:
                g = T.relu_backward(pre, inject(layer, g))
            dh, dw = T.matmul_backward(h_in, p[2 * layer], g)
            grads[2 * layer] = dw
            grads[2 * layer + 1] = g.sum(axis=0)
            g = dh
        return grads

    (x, pre1), (a1, pre2, idx, a2_shape), (flat, pre3), (a3, _) = record.cache
    da3, grads[6] = T.matmul_backward(a3, p[6], grad_logits)
    grads[7] = grad_logits.sum(axis=0)
    g3 = T.relu_backward(pre3, inject(2, da3))
    dflat, grads[4] = T.matmul_backward(flat, p[4], g3)
    grads[5] = g3.sum(axis=0)
    dpooled = inject(1, dflat).reshape(a2_shape[0], a2_shape[1], a2_shape[2] // 2, a2_shape[3] // 2)
    da2 = T.maxpool2_backward(idx, dpooled, a2_shape)
    g2 = T.relu_backward(pre2, da2)
    da1, grads[2], grads[3] = T.conv3x3_backward(a1, p[2], g2)
    g1 = T.relu_backward(pre1, inject(0, da1))
    _, grads[0], grads[1] = T.conv3x3_backward(x, p[0], g1)
    return grads


def nesterov_update(params, slots, grads, lr, momentum, weight_decay, nesterov=True):
    """One momentum step; returns ``(new_params, new_slots)``.

    v' = mu*v - lr*g ;  theta' = theta + mu*v' - lr*g   (nesterov)
    v' = mu*v - lr*g ;  theta' = theta + v'             (heavy ball)
    where g already includes ``weight_decay * theta``.
    """
    new_p, new_v = [], []
    for theta, v, g in zip(params, slots, grads):
        if weight_decay:
            g = g + weight_decay * theta
        v2 = momentum * v - lr * g
        if nesterov:
            theta2 = theta + momentum * v2 - lr * g
        else:
            theta2 = theta + v2
        new_p.append(theta2)
        new_v.append(v2)
    return new_p, new_v


def sgd_step(net: NetworkState, grads: Sequence, cfg: OptimConfig, epoch_fraction: float = 0.0,
             iteration: Optional[int] = None) -> NetworkState:
    if len(grads) != len(net.params):
        raise DimensionError(f"net {net.net_id}: {len(grads)} grads for {len(net.params)} params")
    for g, p in zip(grads, net.params):
        if g.shape != p.shape:
            raise DimensionError(f"net {net.net_id}: grad {g.shape} vs param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(
                f"non-finite gradient in net {net.net_id} at iteration {iteration}",
                net_id=net.net_id, iteration=iteration,
            )
    lr = cfg.lr_at(epoch_fraction)
    params, slots = nesterov_update(
        net.params, net.momentum, grads, lr, cfg.momentum, cfg.weight_decay, cfg.nesterov
    )
    if not all(np.all(np.isfinite(p)) for p in params):
        raise TrainingDivergedError(
            f"non-finite parameters in net {net.net_id} at iteration {iteration}",
            net_id=net.net_id, iteration=iteration,
        )
    return NetworkState(net.arch, params, slots, net.net_id)


def predict(net: NetworkState, inputs, batch_size: int = 1024) -> np.ndarray:
    out = []
    for start in range(0, len(inputs), batch_size):
        out.append(forward(net, inputs[start:start + batch_size]).logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def accuracy(net: NetworkState, inputs, class_ids) -> float:
    """Top-1 accuracy in percent."""
    if len(inputs) == 0:
        return 0.0
    return float(100.0 * np.mean(predict(net, inputs) == class_ids))


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, nets: Sequence[NetworkState], extra: Optional[dict] = None):
    """Write a zip container: ``manifest.json`` plus one little-endian float32 blob per tensor.

    The file is written to a temporary name and renamed into place.
    """
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION, "networks": [], "extra": extra or {}}
    blobs = {}
    for net in nets:
        entry = {"net_id": net.net_id, "arch": net.arch.to_dict(), "params": []}
        for k, p in enumerate(net.params):
            name = f"net{net.net_id}/param{k}.f32"
            entry["params"].append({"file": name, "shape": list(p.shape)})
            blobs[name] = np.ascontiguousarray(p, dtype="<f4").tobytes()
        manifest["networks"].append(entry)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
            for name, data in blobs.items():
                zf.writestr(name, data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_checkpoint(path, dtype=np.float64):
    """Return ``(nets, manifest)``; momentum slots are reset to zero."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise FormatError(f"{path}: unsupported format_version {manifest.get('format_version')}")
            nets = []
            for entry in manifest["networks"]:
                arch = ArchSpec.from_dict(entry["arch"])
                params = []
                for spec in entry["params"]:
                    raw = np.frombuffer(zf.read(spec["file"]), dtype="<f4")
                    shape = tuple(spec["shape"])
                    if raw.size != int(np.prod(shape)):
                        raise FormatError(f"{path}: {spec['file']} holds {raw.size} values, expected {shape}")
                    params.append(raw.reshape(shape).astype(dtype))
                nets.append(NetworkState(arch, params, [np.zeros_like(p) for p in params], entry["net_id"]))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a valid checkpoint ({exc})") from exc
    return nets, manifest
