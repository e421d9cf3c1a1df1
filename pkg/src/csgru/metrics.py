import numpy as np

from .errors import DataError


def spiking_activity_rate(records) -> float:
    """Spikes per neuron per timestep, pooled over layers and samples.

    ``records`` is a list of binary spike arrays, one per spiking layer,
    each ``T x neurons`` or ``N x T x neurons``. The non-spiking readout
    is never part of it.
    """
    records = [np.asarray(r) for r in records]
    if not records or all(r.size == 0 for r in records):
        raise DataError("no spike records to measure")
    total = 0.0
    slots = 0
    for r in records:
        if not np.isin(r, (0, 1)).all():
            raise DataError("spike records must be binary")
        total += float(r.sum())
        slots += r.size
    return total / slots


def accuracy(logits, labels) -> float:
    """Fraction of argmax hits; ties go to the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DataError("no samples to score")
    return float(np.mean(np.argmax(logits, axis=-1) == labels))


def relative_reduction(rate, baseline) -> float:
    """Percentage drop of ``rate`` relative to ``baseline``."""
    if baseline <= 0:
        return float("nan")
    return 100.0 * (baseline - rate) / baseline
