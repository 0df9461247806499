"""Joint training of a cohort of networks.

Three strategies share one step interface ``step(cohort, batch, cfg, streams, iteration, epoch_fraction)``:

* ``competitive`` - each mini-batch the network with the lowest
  classification loss is elected teacher. The teacher updates on its own
  classification loss only; every other network adds a KL term towards the
  teacher's predictions and an L2 term towards its features.
* ``dml`` - deep mutual learning: every network distills from all others.
* ``independent`` - classification loss only.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import losses as L
from .config import RunConfig, resolve_archs
from .data import Dataset, batches, num_batches
from .errors import ConfigError, TrainingDivergedError
from .metrics import MetricsWriter
from .nn import (ArchSpec, NetworkState, accuracy, backward, forward, init_network,
                 nesterov_update, save_checkpoint, sgd_step)
from .perturb import PerturbEvent, choose_kind, select_mutation_target, stochastic_perturb

CONVERGENCE_MARGIN = 0.5  # accuracy points


@dataclass
class Adapter:
    """Student-owned linear map from its feature width to a wider/narrower teacher width."""

    weight: np.ndarray
    bias: np.ndarray
    momentum: list = field(default_factory=list)

    def __post_init__(self):
        if not self.momentum:
            self.momentum = [np.zeros_like(self.weight), np.zeros_like(self.bias)]

    @classmethod
    def create(cls, d_in: int, d_out: int, seed, dtype=np.float64) -> "Adapter":
        rng = np.random.default_rng(seed)
        bound = np.sqrt(3.0 / d_in)
        return cls(rng.uniform(-bound, bound, (d_in, d_out)).astype(dtype), np.zeros(d_out, dtype=dtype))

    def apply(self, feature):
        return feature @ self.weight + self.bias

    def backward(self, feature, upstream):
        """Return ``(grad_on_feature, [grad_weight, grad_bias])``."""
        return upstream @ self.weight.T, [feature.T @ upstream, upstream.sum(axis=0)]

    def step(self, grads, lr, momentum, weight_decay, nesterov=True, input_power=0.0) -> "Adapter":
        """Momentum step with a normalised learning rate ``lr / (1 + input_power)``.

        ``input_power`` is the batch mean of ``||F||^2`` for the adapter input;
        the normalisation keeps the regression stable whatever the feature scale.
        """
        lr = lr / (1.0 + input_power)
        (w, b), slots = nesterov_update([self.weight, self.bias], self.momentum, grads,
                                        lr, momentum, weight_decay, nesterov)
        return Adapter(w, b, slots)


@dataclass
class Cohort:
    nets: list
    adapters: dict = field(default_factory=dict)  # (student index, target width) -> Adapter

    def copy(self) -> "Cohort":
        return Cohort([n.copy() for n in self.nets],
                      {k: Adapter(a.weight.copy(), a.bias.copy(), [m.copy() for m in a.momentum])
                       for k, a in self.adapters.items()})


@dataclass
class RngStreams:
    """Perturbation randomness: one stream picks (network, kind), one draws the transform parameters."""

    choice: np.random.Generator
    params: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        return cls(np.random.default_rng([int(seed), 0]), np.random.default_rng([int(seed), 1]))


@dataclass
class CohortStep:
    iteration: int
    strategy: str
    l_c: list
    l_d: list
    l_f: list
    total: list
    roles: list
    teacher: Optional[int] = None
    event: Optional[PerturbEvent] = None
    grad_norms: list = field(default_factory=list)

    @property
    def perturbed(self) -> list:
        return [self.event is not None and self.event.target_net == i for i in range(len(self.l_c))]


def make_cohort(archs, init_seed: int = 0, use_feature_loss: bool = True, dtype=np.float64) -> Cohort:
    """Initialise networks (net ``i`` seeded by ``[init_seed, i]``) and any feature adapters needed."""
    archs = [a if isinstance(a, ArchSpec) else ArchSpec.from_dict(a) for a in archs]
    nets = [init_network(a, [int(init_seed), i], net_id=i, dtype=dtype) for i, a in enumerate(archs)]
    adapters = {}
    if use_feature_loss:
        widths = [a.feature_width for a in archs]
        for i, d_in in enumerate(widths):
            for d_out in sorted(set(widths[:i] + widths[i + 1:])):
                if d_out != d_in:
                    adapters[(i, d_out)] = Adapter.create(d_in, d_out, [int(init_seed), 1000 + i, d_out], dtype)
    return Cohort(nets, adapters)


def elect_teacher(losses, iteration: Optional[int] = None) -> int:
    """Index of the lowest loss; ties go to the lowest index."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 2:
        raise ConfigError("teacher election needs at least two networks")
    if not np.all(np.isfinite(losses)):
        bad = int(np.flatnonzero(~np.isfinite(losses))[0])
        raise TrainingDivergedError(f"non-finite classification loss for net {bad} at iteration {iteration}",
                                    net_id=bad, iteration=iteration)
    return int(np.argmin(losses))


def _cohort_inputs(cohort, batch, cfg, streams, iteration):
    n = len(cohort.nets)
    inputs = [batch.inputs] * n
    labels = [batch.labels] * n
    event = None
    if cfg.use_perturbation and streams is not None:
        target = select_mutation_target(n, iteration, streams.choice)
        kind = choose_kind(cfg.perturbation, streams.choice)
        x, y, event = stochastic_perturb(batch.inputs, batch.labels, kind, streams.params, cfg.perturbation,
                                         iteration=iteration, target_net=target)
        inputs[target], labels[target] = x, y
    return inputs, labels, event


def _forward_all(cohort, inputs, labels, iteration, check_finite=True):
    recs = [forward(net, x) for net, x in zip(cohort.nets, inputs)]
    ce = [L.cross_entropy(r.probs, y) for r, y in zip(recs, labels)]
    for i, (lc, _) in enumerate(ce):
        if check_finite and not np.isfinite(lc):
            raise TrainingDivergedError(f"non-finite loss for net {i} at iteration {iteration}",
                                        net_id=i, iteration=iteration)
    return recs, ce


def _reference_output(cohort, j, inputs, recs, i, temperature):
    """Net ``j``'s (constant) outputs on net ``i``'s batch: ``(probs, feature)``."""
    rec = recs[j] if inputs[i] is inputs[j] else forward(cohort.nets[j], inputs[i])
    probs = rec.probs if temperature == 1.0 else L.softened(rec.logits, temperature)
    return probs, rec.feature


def _student_probs(rec, temperature):
    return rec.probs if temperature == 1.0 else L.softened(rec.logits, temperature)


def _feature_term(cohort, i, feature, target):
    """L2 feature loss for student ``i`` against ``target``, through an adapter when widths differ.

    Returns ``(loss, grad_on_student_feature, adapter_key, adapter_grads)``.
    """
    d_t = target.shape[1]
    if feature.shape[1] == d_t:
        loss, g = L.feature_l2(feature, target)
        return loss, g, None, None
    key = (i, d_t)
    adapter = cohort.adapters.get(key)
    if adapter is None:
        raise ConfigError(f"net {i}: feature width {feature.shape[1]} != {d_t} and no adapter configured")
    loss, g = L.feature_l2(adapter.apply(feature), target)
    g_feat, a_grads = adapter.backward(feature, g)
    return loss, g_feat, key, a_grads


def _grad_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def _apply_steps(cohort, grads, adapter_grads, cfg, epoch_fraction, iteration):
    nets = [sgd_step(net, g, cfg.optimizer, epoch_fraction, iteration=iteration)
            for net, g in zip(cohort.nets, grads)]
    adapters = dict(cohort.adapters)
    opt = cfg.optimizer
    lr = opt.lr_at(epoch_fraction)
    for key, (g, power) in adapter_grads.items():
        # adapters move only on their feature-loss gradient: no weight decay
        adapters[key] = cohort.adapters[key].step(g, lr, opt.momentum, 0.0, opt.nesterov, power)
    return Cohort(nets, adapters)


def _accumulate(store, key, grads, feature):
    if key is None:
        return
    power = float(np.mean(np.sum(feature * feature, axis=1)))
    if key in store:
        store[key] = ([a + b for a, b in zip(store[key][0], grads)], power)
    else:
        store[key] = (grads, power)


def competitive_step(cohort: Cohort, batch, cfg: RunConfig, streams: Optional[RngStreams] = None,
                     iteration: int = 0, epoch_fraction: float = 0.0):
    """One competitive-distillation iteration; returns ``(new_cohort, CohortStep)``.

    The teacher is elected on each network's own (possibly perturbed) batch.
    For each student the teacher is evaluated on that student's batch so the
    distillation targets line up sample by sample.
    """
    n = len(cohort.nets)
    w = cfg.weights
    temp = cfg.temperature
    inputs, labels, event = _cohort_inputs(cohort, batch, cfg, streams, iteration)
    recs, ce = _forward_all(cohort, inputs, labels, iteration)
    l_c = [lc for lc, _ in ce]
    t = elect_teacher(l_c, iteration)

    grads, l_d, l_f, total, roles = [], [0.0] * n, [0.0] * n, [], []
    adapter_grads = {}
    for i, (net, rec) in enumerate(zip(cohort.nets, recs)):
        if i == t:
            grads.append(backward(net, rec, ce[i][1]))
            total.append(L.teacher_loss(l_c[i]))
            roles.append("teacher")
            continue
        p_t, f_t = _reference_output(cohort, t, inputs, recs, i, temp)
        l_d[i], g_kl = L.kl_distill(p_t, _student_probs(rec, temp))
        grad_logits = ce[i][1] + (w.alpha / temp) * g_kl
        grad_feat = None
        if cfg.use_feature_loss:
            l_f[i], g_f, key, a_grads = _feature_term(cohort, i, rec.feature, f_t)
            grad_feat = w.beta * g_f
            if key is not None:
                _accumulate(adapter_grads, key, [w.beta * g for g in a_grads], rec.feature)
        grads.append(backward(net, rec, grad_logits, grad_feat))
        total.append(L.student_loss(l_c[i], l_d[i], l_f[i], w))
        roles.append("student")

    new = _apply_steps(cohort, grads, adapter_grads, cfg, epoch_fraction, iteration)
    step = CohortStep(iteration, "competitive", l_c, l_d, l_f, total, roles, teacher=t, event=event,
                      grad_norms=[_grad_norm(g) for g in grads])
    return new, step


def dml_step(cohort: Cohort, batch, cfg: RunConfig, streams: Optional[RngStreams] = None,
             iteration: int = 0, epoch_fraction: float = 0.0):
    """Deep mutual learning: net ``i`` minimises ``L_C + alpha * mean_j KL(p_j||p_i) [+ beta * mean_j ||F_i - F_j||^2]``."""
    n = len(cohort.nets)
    if n < 2:
        raise ConfigError("dml needs at least two networks")
    w = cfg.weights
    temp = cfg.temperature
    inputs, labels, event = _cohort_inputs(cohort, batch, cfg, streams, iteration)
    recs, ce = _forward_all(cohort, inputs, labels, iteration)
    l_c = [lc for lc, _ in ce]

    grads, l_d, l_f, total = [], [0.0] * n, [0.0] * n, []
    adapter_grads = {}
    scale = 1.0 / (n - 1)
    for i, (net, rec) in enumerate(zip(cohort.nets, recs)):
        grad_logits = ce[i][1]
        grad_feat = None
        p_i = _student_probs(rec, temp)
        for j in range(n):
            if j == i:
                continue
            p_j, f_j = _reference_output(cohort, j, inputs, recs, i, temp)
            kl, g_kl = L.kl_distill(p_j, p_i)
            l_d[i] += scale * kl
            grad_logits = grad_logits + (w.alpha * scale / temp) * g_kl
            if cfg.use_feature_loss:
                lf, g_f, key, a_grads = _feature_term(cohort, i, rec.feature, f_j)
                l_f[i] += scale * lf
                g_f = (w.beta * scale) * g_f
                grad_feat = g_f if grad_feat is None else grad_feat + g_f
                if key is not None:
                    _accumulate(adapter_grads, key, [(w.beta * scale) * g for g in a_grads], rec.feature)
        grads.append(backward(net, rec, grad_logits, grad_feat))
        total.append(L.student_loss(l_c[i], l_d[i], l_f[i], w))

    new = _apply_steps(cohort, grads, adapter_grads, cfg, epoch_fraction, iteration)
    step = CohortStep(iteration, "dml", l_c, l_d, l_f, total, ["student"] * n, event=event,
                      grad_norms=[_grad_norm(g) for g in grads])
    return new, step


def independent_step(cohort: Cohort, batch, cfg: RunConfig, streams: Optional[RngStreams] = None,
                     iteration: int = 0, epoch_fraction: float = 0.0):
    n = len(cohort.nets)
    inputs, labels, event = _cohort_inputs(cohort, batch, cfg, streams, iteration) if n >= 2 else \
        ([batch.inputs], [batch.labels], None)
    recs, ce = _forward_all(cohort, inputs, labels, iteration)
    grads = [backward(net, rec, g) for net, rec, (_, g) in zip(cohort.nets, recs, ce)]
    l_c = [lc for lc, _ in ce]
    new = _apply_steps(cohort, grads, {}, cfg, epoch_fraction, iteration)
    step = CohortStep(iteration, "independent", l_c, [0.0] * n, [0.0] * n, list(l_c), ["independent"] * n,
                      event=event, grad_norms=[_grad_norm(g) for g in grads])
    return new, step


STEP_FUNCTIONS = {
    "competitive": competitive_step,
    "dml": dml_step,
    "independent": independent_step,
}


@dataclass
class RunReport:
    strategy: str
    final_acc: list
    best_acc: list
    acc_history: list  # one list of per-net accuracies per evaluation (epoch 0 = before training)
    eval_iterations: list
    iterations: int
    teacher_switches: int
    teacher_counts: list
    convergence_step: list
    wall_clock_per_step: float
    label: Optional[str] = None
    imp_ind: Optional[list] = None
    imp_dml: Optional[list] = None
    steps: list = field(default_factory=list, repr=False)

    @property
    def best_net_acc(self) -> float:
        return max(self.final_acc)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "steps"}
        return d


def convergence_steps(acc_history, eval_iterations, margin=CONVERGENCE_MARGIN) -> list:
    """Per net, the first evaluated iteration whose accuracy is within ``margin`` points of the final one."""
    hist = np.asarray(acc_history)
    out = []
    for j in range(hist.shape[1]):
        final = hist[-1, j]
        k = int(np.flatnonzero(hist[:, j] >= final - margin)[0])
        out.append(int(eval_iterations[k]))
    return out


def count_teacher_switches(teachers) -> int:
    teachers = [t for t in teachers if t is not None]
    return int(sum(a != b for a, b in zip(teachers, teachers[1:])))


def train(cfg: RunConfig, train_ds: Dataset, test_ds: Dataset, output_dir: Optional[str] = None,
          keep_steps: bool = True, dtype=np.float64, label: Optional[str] = None) -> RunReport:
    """Run ``cfg.epochs`` epochs of the configured strategy.

    When ``output_dir`` is given, ``metrics.csv`` and a final checkpoint are
    written there. On divergence the metrics gathered so far are flushed
    before the error propagates.
    """
    import os

    archs = resolve_archs(cfg, train_ds)
    cohort = make_cohort(archs, cfg.seeds.init, cfg.use_feature_loss, dtype)
    streams = RngStreams.from_seed(cfg.seeds.perturb)
    step_fn = STEP_FUNCTIONS[cfg.strategy]
    x_test, y_test = test_ds.inputs.astype(dtype, copy=False), test_ds.class_ids
    x_train = train_ds if train_ds.inputs.dtype == dtype else Dataset(
        train_ds.inputs.astype(dtype), train_ds.labels.astype(dtype), train_ds.num_classes,
        train_ds.split, train_ds.stats)

    writer = None
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        writer = MetricsWriter(os.path.join(output_dir, "metrics.csv"))

    def evaluate(epoch):
        accs = [accuracy(net, x_test, y_test) for net in cohort.nets]
        if writer:
            writer.write_eval(epoch, accs)
        return accs

    steps, teachers = [], []
    history = []
    eval_iters = []
    it = 0
    elapsed = 0.0
    nb = num_batches(x_train, cfg.batch_size)
    try:
        history.append(evaluate(0))
        eval_iters.append(0)
        for epoch in range(cfg.epochs):
            for b, batch in enumerate(batches(x_train, cfg.batch_size, epoch, cfg.seeds.shuffle)):
                frac = (epoch + b / nb) / cfg.epochs
                t0 = time.perf_counter()
                cohort, step = step_fn(cohort, batch, cfg, streams, iteration=it, epoch_fraction=frac)
                elapsed += time.perf_counter() - t0
                if writer:
                    writer.write_step(step)
                teachers.append(step.teacher)
                if keep_steps:
                    steps.append(step)
                it += 1
            history.append(evaluate(epoch + 1))
            eval_iters.append(it)
    finally:
        if writer:
            writer.close()

    if output_dir is not None and cfg.save_checkpoint:
        save_checkpoint(os.path.join(output_dir, "checkpoint.zip"), cohort.nets,
                        extra={"strategy": cfg.strategy, "iterations": it})
    n = len(cohort.nets)
    counts = [sum(1 for t in teachers if t == i) for i in range(n)]
    return RunReport(
        strategy=cfg.strategy,
        label=label,
        final_acc=list(history[-1]),
        best_acc=[float(max(h[j] for h in history)) for j in range(n)],
        acc_history=history,
        eval_iterations=eval_iters,
        iterations=it,
        teacher_switches=count_teacher_switches(teachers),
        teacher_counts=counts if cfg.strategy == "competitive" else [0] * n,
        convergence_step=convergence_steps(history, eval_iters),
        wall_clock_per_step=elapsed / it if it else 0.0,
        steps=steps,
    )
