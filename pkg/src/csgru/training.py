"""Max-over-time cross-entropy, Adam, and the BPTT training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import primitive
from .errors import DataError, ShapeError, TrainingDiverged
from .metrics import accuracy, spiking_activity_rate

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "spikes_per_neuron_per_step", "wall_seconds")


# --------------------------------------------------------------------------
# losses

def _max_time_forward(traj):
    if np.shape(traj)[0] < 1:
        raise ShapeError("max_over_time needs at least one timestep")
    return np.max(traj, axis=0)


def _max_time_vjp(g, out, traj):
    # gradient goes to the first timestep attaining the max
    idx = np.argmax(traj, axis=0)
    d = np.zeros_like(traj)
    np.put_along_axis(d, idx[None], np.asarray(g)[None], axis=0)
    return (d,)


primitive("max_over_time", _max_time_vjp)(_max_time_forward)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_labels(logits, labels):
    labels = np.atleast_1d(np.asarray(labels))
    n_classes = np.shape(logits)[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range for {n_classes} classes: {labels}")
    return labels


def _ce_forward(logits, labels):
    labels = _check_labels(logits, labels)
    lp = _log_softmax(np.atleast_2d(logits))
    return -np.mean(lp[np.arange(len(labels)), labels])


def _ce_vjp(g, out, logits, labels):
    labels = _check_labels(logits, labels)
    x = np.atleast_2d(logits)
    p = np.exp(_log_softmax(x))
    p[np.arange(len(labels)), labels] -= 1.0
    return ((g / len(labels)) * p.reshape(np.shape(logits)),)


primitive("cross_entropy", _ce_vjp)(_ce_forward)


def max_over_time(trajectory):
    """Per-class maximum of a ``T x ...`` readout trajectory."""
    return ad.apply("max_over_time", trajectory)


def cross_entropy(logits, labels):
    """Mean ``-log softmax(logits)[label]`` over the batch."""
    return ad.apply("cross_entropy", logits, labels=np.asarray(labels))


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState, frozen=()):
    """One bias-corrected Adam step. Returns ``(new_params, new_state)``; inputs are untouched."""
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, m_new, v_new = {}, dict(state.m), dict(state.v)
    for k in sorted(params):
        p = params[k]
        if k in frozen or k not in grads:
            new_params[k] = p
            continue
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter has {np.shape(p)}")
        m = state.beta1 * state.m.get(k, 0.0) + (1.0 - state.beta1) * g
        v = state.beta2 * state.v.get(k, 0.0) + (1.0 - state.beta2) * (g * g)
        m_new[k], v_new[k] = m, v
        new_params[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new_params, replace(state, t=t, m=m_new, v=v_new)


def clip_by_norm(grads: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float | None = None
    eval_batch: int = 256
    record_wall_time: bool = False


def loss_and_grads(network, x, y):
    """Forward + backward on one batch; returns ``(loss, grads, logits, spikes)``."""
    tape = ad.Tape()
    leaves = network.bind(tape)
    traj, spikes = network.forward(tape, x, leaves)
    logits = max_over_time(traj)
    loss = cross_entropy(logits, y)
    g = tape.backward(loss)
    grads = {k: g[v] for k, v in leaves.items()}
    return float(loss.value), grads, logits.value, spikes


def evaluate(network, x, y, batch_size=256):
    """Returns ``(logits, accuracy, activity_rate)`` on a labelled set."""
    logits, spike_sum, slots = [], 0.0, 0
    for lo in range(0, len(x), batch_size):
        tape = ad.Tape(grad_enabled=False)
        traj, spikes = network.forward(tape, x[lo:lo + batch_size])
        logits.append(np.max(traj.value, axis=0))
        for s in spikes:
            spike_sum += float(s.sum())
            slots += s.size
    logits = np.concatenate(logits)
    rate = spike_sum / slots if slots else float("nan")
    return logits, accuracy(logits, y), rate


def train(network, train_set, test_set, cfg: TrainConfig, on_epoch=None):
    """Minibatch BPTT with Adam. Mutates ``network.params``; returns one dict per epoch.

    ``train_set``/``test_set`` are ``(x, y)`` pairs with ``x`` shaped
    ``N x T x ...``. Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    x_train, y_train = train_set
    x_test, y_test = test_set
    if len(x_train) == 0:
        raise DataError("empty training set")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    state = AdamState(lr=cfg.lr)
    frozen = network.frozen()
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(x_train))
        loss_sum, hits = 0.0, 0
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            loss, grads, logits, _ = loss_and_grads(network, x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch {b}", epoch, b)
            if cfg.clip_norm is not None:
                grads = clip_by_norm(grads, cfg.clip_norm)
            network.params, state = adam_update(network.params, grads, state, frozen)
            loss_sum += loss * len(idx)
            hits += int(np.sum(np.argmax(logits, axis=-1) == y_train[idx]))
        _, test_acc, rate = evaluate(network, x_test, y_test, cfg.eval_batch) if len(x_test) else (None, float("nan"), float("nan"))
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / len(order),
            "train_acc": hits / len(order),
            "test_acc": test_acc,
            "spikes_per_neuron_per_step": rate,
            "wall_seconds": time.perf_counter() - start if cfg.record_wall_time else None,
        }
        rows.append(row)
        log.info("epoch %d loss %.4f train %.3f test %.3f rate %.3f",
                 epoch, row["train_loss"], row["train_acc"], test_acc, rate)
        if on_epoch is not None:
            on_epoch(row)
    return rows


__all__ = [
    "AdamState", "TrainConfig", "adam_update", "cross_entropy", "evaluate", "loss_and_grads",
    "max_over_time", "spiking_activity_rate", "train",
]
