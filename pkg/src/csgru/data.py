"""Spike-train generation and ingestion.

All sequences are binary ``uint8`` arrays shaped ``T x C x H x W``
(datasets add a leading sample axis). Random draws come from a Philox
counter-based generator keyed by ``(seed, sample)``, so any sample can be
regenerated on its own, in any order.
"""

from __future__ import annotations

import gzip
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor
from .errors import ConfigError, DataError

TEMPLATE_STEPS = 8


@dataclass(frozen=True)
class SpikeSequence:
    data: np.ndarray
    label: int = 0

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 4 or d.shape[0] < 1:
            raise DataError(f"spike sequence must be T x C x H x W with T >= 1, got {d.shape}")
        if not np.isin(d, (0, 1)).all():
            raise DataError("spike sequence must be binary")
        object.__setattr__(self, "data", d.astype(np.uint8))

    @property
    def T(self) -> int:
        return self.data.shape[0]


def _stream(seed: int, sample: int) -> np.random.Generator:
    key = np.array([seed, sample], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# --------------------------------------------------------------------------
# rate coding

def rate_encode(image, T: int, seed: int, sample: int = 0, label: int = 0) -> SpikeSequence:
    """Independent Bernoulli(pixel) spike per timestep and pixel."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3:
        raise DataError(f"expected a C x H x W image, got shape {image.shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0 or not np.isfinite(image).all()):
        raise DataError("pixel values must lie in [0, 1]")
    if T < 1:
        raise ConfigError(f"need at least one timestep, got T={T}")
    u = _stream(seed, sample).random((T, *image.shape))
    return SpikeSequence((u < image[None]).astype(np.uint8), label)


def rate_encode_batch(images, T: int, seed: int, first_sample: int = 0) -> np.ndarray:
    """``N x C x H x W`` images to ``N x T x C x H x W`` spikes."""
    return np.stack([rate_encode(img, T, seed, first_sample + n).data for n, img in enumerate(images)])


# --------------------------------------------------------------------------
# synthetic tasks

def _bands(index, n_bands):
    # map a coordinate grid onto n_bands contiguous bands
    top = index.max() + 1
    return (index * n_bands) // top


def templates(kind: str, grid) -> list[np.ndarray]:
    """Per-class binary templates, each ``TEMPLATE_STEPS x C x H x W``."""
    c, h, w = grid
    if c < 1 or h < 4 or w < 4:
        raise ConfigError(f"grid must be at least 1x4x4, got {grid}")
    L = TEMPLATE_STEPS
    yy, xx = np.mgrid[0:h, 0:w]
    steps = np.arange(L)[:, None, None]
    if kind == "pattern3":
        diagonal = _bands(yy + xx, L)[None] == steps
        horizontal = np.broadcast_to(_bands(xx, L)[None] == steps, (L, h, w))
        center = (yy >= h // 4) & (yy < h - h // 4) & (xx >= w // 4) & (xx < w - w // 4)
        blink = (steps % 2 == 0) & center[None]
        maps = [diagonal, horizontal, blink]
    elif kind == "moving-bar":
        cols = _bands(xx, L)[None]
        rows = _bands(yy, L)[None]
        maps = [cols == steps, cols == L - 1 - steps, rows == steps, rows == L - 1 - steps]
    else:
        raise ConfigError(f"unknown synthetic task {kind!r}")
    out = []
    for m in maps:
        m = np.broadcast_to(m, (L, h, w))
        if not m.any():
            raise ConfigError(f"{kind} template is empty on grid {grid}")
        out.append(np.broadcast_to(m[:, None], (L, c, h, w)).astype(np.uint8))
    return out


def synth_task(kind: str, n_samples: int, T: int, grid, noise_rate: float, seed: int):
    """Balanced synthetic classification set; returns ``(x, y)``.

    Sample ``n`` is its class template placed at a random onset, OR-ed
    with Bernoulli(``noise_rate``) background spikes.
    """
    grid = tuple(int(g) for g in grid)
    if T < TEMPLATE_STEPS:
        raise ConfigError(f"T must be at least {TEMPLATE_STEPS}, got {T}")
    if not 0.0 <= noise_rate <= 1.0:
        raise ConfigError(f"noise_rate must be in [0, 1], got {noise_rate}")
    tmpl = templates(kind, grid)
    k = len(tmpl)
    labels = np.arange(n_samples) % k
    labels = np.random.Generator(np.random.Philox(key=np.array([seed, 2**63], dtype=np.uint64))).permutation(labels)
    x = np.zeros((n_samples, T, *grid), dtype=np.uint8)
    for n in range(n_samples):
        rng = _stream(seed, n)
        onset = int(rng.integers(0, T - TEMPLATE_STEPS + 1))
        x[n] = rng.random((T, *grid)) < noise_rate
        x[n, onset:onset + TEMPLATE_STEPS] |= tmpl[labels[n]]
    return x, labels.astype(np.int64)


def template_oracle(x, kind: str) -> np.ndarray:
    """Classify by the template/onset with the highest fraction of its spikes present."""
    x = np.asarray(x)
    tmpl = templates(kind, x.shape[2:])
    n_steps = x.shape[1]
    scores = np.full((len(x), len(tmpl)), -np.inf)
    for c, t in enumerate(tmpl):
        size = t.sum()
        for onset in range(n_steps - TEMPLATE_STEPS + 1):
            window = x[:, onset:onset + TEMPLATE_STEPS]
            hit = (window & t[None]).reshape(len(x), -1).sum(axis=1) / size
            scores[:, c] = np.maximum(scores[:, c], hit)
    return np.argmax(scores, axis=1)


# --------------------------------------------------------------------------
# event files

def load_events(path, sensor, T: int, window: float) -> SpikeSequence:
    """OR-bin a ``t,x,y,p`` CSV (t in microseconds) into ``T x 2 x H x W``.

    Events with ``t >= window`` seconds are dropped.
    """
    h, w = sensor
    out = np.zeros((T, 2, h, w), dtype=np.uint8)
    window_us = window * 1e6
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                t, x, y, p = float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
                if len(parts) != 4:
                    raise ValueError
            except (ValueError, IndexError):
                if lineno == 1 and line.replace(" ", "").lower() == "t,x,y,p":
                    continue
                raise DataError(f"{path}:{lineno}: malformed event line {line!r}") from None
            if not (0 <= x < w and 0 <= y < h) or p not in (0, 1) or t < 0:
                raise DataError(f"{path}:{lineno}: event {line!r} outside sensor {h}x{w}")
            if t >= window_us:
                continue
            out[int(t * T // window_us), p, y, x] = 1
    return SpikeSequence(out)


def save_events(path, events, header: bool = True):
    """Write ``(t, x, y, p)`` rows in the format :func:`load_events` reads."""
    with open(path, "w") as f:
        if header:
            f.write("t,x,y,p\n")
        for t, x, y, p in events:
            f.write(f"{int(t)},{int(x)},{int(y)},{int(p)}\n")


def events_from_sequence(seq: SpikeSequence, window: float):
    """One event at the start of each active bin, the inverse of OR-binning."""
    T = seq.T
    bins, p, y, x = np.nonzero(seq.data)
    t = np.ceil(bins * window * 1e6 / T).astype(np.int64)
    order = np.lexsort((x, y, p, t))
    return [(int(t[i]), int(x[i]), int(y[i]), int(p[i])) for i in order]


# --------------------------------------------------------------------------
# IDX files

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _open(path, mode="rb"):
    return gzip.open(path, mode) if str(path).endswith(".gz") else open(path, mode)


def read_idx(path) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise DataError(f"{path}: not an IDX file")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = np.dtype(_IDX_TYPES[raw[2]])
    body = raw[4 + 4 * ndim:]
    if len(body) != dtype.itemsize * int(np.prod(dims)):
        raise DataError(f"{path}: payload size does not match header dims {dims}")
    return np.frombuffer(body, dtype=dtype).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    code = {np.dtype("uint8"): 0x08, np.dtype("int8"): 0x09}.get(array.dtype)
    if code is None:
        raise DataError(f"IDX writer supports uint8/int8, got {array.dtype}")
    buf = io.BytesIO()
    buf.write(bytes([0, 0, code, array.ndim]))
    buf.write(struct.pack(f">{array.ndim}I", *array.shape))
    buf.write(array.tobytes())
    with _open(path, "wb") as f:
        f.write(buf.getvalue())


def load_idx_images(images_path, labels_path, limit=None, offset=0):
    """IDX image/label pair scaled to ``[0, 1]``, as ``N x 1 x H x W`` and ``N``."""
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    stop = None if limit is None else offset + limit
    images = images[offset:stop].astype(np.float64) / 255.0
    if images.ndim == 3:
        images = images[:, None]
    return images, labels[offset:stop]


# --------------------------------------------------------------------------
# reshaping pipeline

@dataclass(frozen=True)
class PipelineSpec:
    target_grid: tuple | None = None
    pool: bool = False
    # learnable strided front-end conv; realised inside the network
    downconv_channels: int | None = None
    downconv_kernel: tuple | None = None
    downconv_stride: int = 1


def to_grid(x, grid) -> np.ndarray:
    """Rearrange the features of ``N x T x ...`` row-major into ``N x T x C x H x W``.

    Flat feature ``k`` lands at channel ``k // (H*W)``, row ``(k // W) % H``,
    column ``k % W``.
    """
    x = np.asarray(x)
    grid = tuple(int(g) for g in grid)
    if x.ndim < 3:
        raise ConfigError(f"expected N x T x features, got shape {x.shape}")
    flat = x.reshape(*x.shape[:2], -1)
    if flat.shape[-1] != int(np.prod(grid)):
        raise ConfigError(f"{flat.shape[-1]} features cannot be arranged as {'x'.join(map(str, grid))}")
    return flat.reshape(*x.shape[:2], *grid)


def reshape_pipeline(x, spec: PipelineSpec) -> np.ndarray:
    """Apply the data-side steps (grid rearrangement, 2x2 max-pool) to ``N x T x ...`` spikes.

    Pooling binary maps is a logical OR of each window, so the output
    stays binary. The learnable conv step lives in the network.
    """
    x = np.asarray(x)
    if spec.target_grid is not None:
        x = to_grid(x, spec.target_grid)
    if spec.pool:
        if x.ndim != 5:
            raise ConfigError(f"pooling needs N x T x C x H x W input, got {x.shape}")
        n, t = x.shape[:2]
        pooled = tensor.maxpool2d(x.reshape(n * t, *x.shape[2:]).astype(np.float64), 2)
        x = pooled.reshape(n, t, *pooled.shape[1:]).astype(np.uint8)
    return x
