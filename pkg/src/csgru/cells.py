"""Recurrent spiking cells, the readout layer and sequence unrolling.

Step functions take *effective* parameters: decays ``alpha``/``beta`` are
already in ``[0, 1]`` and weights are either dense matrices (``out x in``)
or convolution kernels (``C_out x C_in x k x k``). The operator kind is
read off the weight rank, so one step function serves both the dense and
the convolutional form. Arguments may be plain arrays or tape
:class:`~csgru.autodiff.Var` s; results are always ``Var`` s.

:class:`Network` owns the free parameters (decays stored pre-sigmoid),
builds the effective ones on a tape and unrolls a minibatch through time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logit

from . import autodiff as ad
from .autodiff import SurrogateSpec, Var
from .errors import ConfigError, ShapeError

CELL_KINDS = ("gru", "cuba_lif", "spikgru", "variant")


@dataclass(frozen=True)
class ModSet:
    mod1: bool = False  # gated current r_t replaces the constant decay
    mod2: bool = False  # update gate reads i_t instead of the input spikes
    mod3: bool = False  # convolutional operators
    mod4: bool = False  # arctan surrogate

    @classmethod
    def from_ids(cls, ids) -> "ModSet":
        ids = {int(k) for k in ids}
        if not ids <= {1, 2, 3, 4}:
            raise ConfigError(f"mods must be drawn from 1..4, got {sorted(ids)}")
        return cls(*(k in ids for k in (1, 2, 3, 4)))

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(k for k, on in zip((1, 2, 3, 4), (self.mod1, self.mod2, self.mod3, self.mod4)) if on)

    def label(self) -> str:
        return "SpikGRU" + ("-mod" + "-".join(map(str, self.ids)) if self.ids else "")


@dataclass(frozen=True)
class StepConfig:
    surrogate: SurrogateSpec = SurrogateSpec()
    smooth: bool = False
    detach_reset: bool = False

    @property
    def v_th(self) -> float:
        return self.surrogate.v_th


class CellState(NamedTuple):
    i: object
    v: object
    s: object


# --------------------------------------------------------------------------
# operator helpers

def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _is_conv(w) -> bool:
    return np.ndim(_value(w)) == 4


def _apply(w, x):
    """``W s`` for a dense weight, ``W * s`` for a kernel."""
    if _is_conv(w):
        if np.ndim(_value(x)) not in (3, 4):
            raise ConfigError(f"convolutional operator needs a C x H x W operand, got shape {np.shape(_value(x))}")
        return ad.conv(x, w)
    if np.ndim(_value(x)) not in (1, 2):
        raise ShapeError(f"dense operator needs a flat operand, got shape {np.shape(_value(x))}")
    return ad.matmul(w, x)


def _bias(b, w):
    # conv biases are per channel and broadcast over H x W
    if _is_conv(w):
        return ad.reshape(b, (-1, 1, 1))
    return b


def _gate_input(w, x, u, s, b):
    return _apply(w, x) + _apply(u, s) + _bias(b, w)


def _reset(s, cfg: StepConfig):
    return ad.detach(s) if cfg.detach_reset and isinstance(s, Var) else s


def _fire(v, cfg: StepConfig):
    return ad.spike(v - cfg.v_th, cfg.surrogate, smooth=cfg.smooth)


# --------------------------------------------------------------------------
# cell steps

def cuba_lif_step(state: CellState, x, p, cfg: StepConfig = StepConfig()):
    """Current-based LIF. ``p`` holds ``alpha``, ``beta``, ``i.W``, ``i.U``, ``i.b``."""
    i = p["alpha"] * state.i + _apply(p["i.W"], x) + _apply(p["i.U"], state.s) + _bias(p["i.b"], p["i.W"])
    v = p["beta"] * state.v + (1.0 - p["beta"]) * i - cfg.v_th * _reset(state.s, cfg)
    s = _fire(v, cfg)
    return CellState(i, v, s), s


def spikgru_step(state: CellState, x, p, cfg: StepConfig = StepConfig()):
    """SpikGRU: Cuba-LIF with a sigmoid update gate in place of ``beta``."""
    i = p["alpha"] * state.i + _apply(p["i.W"], x) + _apply(p["i.U"], state.s) + _bias(p["i.b"], p["i.W"])
    z = ad.sigmoid(_apply(p["z.W"], x) + _apply(p["z.U"], state.s) + _bias(p["z.b"], p["z.W"]))
    v = z * state.v + (1.0 - z) * i - cfg.v_th * _reset(state.s, cfg)
    s = _fire(v, cfg)
    return CellState(i, v, s), s


def variant_step(state: CellState, x, p, mods: ModSet, cfg: StepConfig = StepConfig()):
    """SpikGRU with the mod1..mod3 substitutions; all four on is CS-GRU.

    mod4 only changes the surrogate, which arrives through ``cfg``.
    """
    conv = _is_conv(p["i.W"])
    if mods.mod3 != conv:
        raise ConfigError(
            "mod3 requires convolutional kernels and C x H x W state" if mods.mod3
            else "convolutional kernels given but mod3 is off"
        )
    if mods.mod3 and np.ndim(_value(state.v)) not in (3, 4):
        raise ConfigError(f"mod3 needs a spatial state, got shape {np.shape(_value(state.v))}")

    if mods.mod1:
        decay = ad.sigmoid(_gate_input(p["r.W"], x, p["r.U"], state.s, p["r.b"]))
    else:
        decay = p["alpha"]
    i = decay * state.i + _apply(p["i.W"], x) + _apply(p["i.U"], state.s) + _bias(p["i.b"], p["i.W"])
    z = ad.sigmoid(_gate_input(p["z.W"], i if mods.mod2 else x, p["z.U"], state.s, p["z.b"]))
    v = z * state.v + (1.0 - z) * i - cfg.v_th * _reset(state.s, cfg)
    s = _fire(v, cfg)
    return CellState(i, v, s), s


def gru_step(h_prev, x, p):
    """Standard (non-spiking) GRU."""
    z = ad.sigmoid(_gate_input(p["z.W"], x, p["z.U"], h_prev, p["z.b"]))
    r = ad.sigmoid(_gate_input(p["r.W"], x, p["r.U"], h_prev, p["r.b"]))
    h_tilde = ad.tanh(_apply(p["h.W"], x) + _apply(p["h.U"], r * h_prev) + _bias(p["h.b"], p["h.W"]))
    return z * h_prev + (1.0 - z) * h_tilde


def readout_step(out_prev, x, p):
    """Leaky non-spiking integrator ``out = alpha * out_prev + W x + b``."""
    return p["alpha"] * out_prev + ad.affine(p["W"], x, p["b"])


# --------------------------------------------------------------------------
# network

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_shape: tuple
    hidden_shape: tuple
    mods: ModSet = ModSet()
    kernel_size: int = 3

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ConfigError(f"unknown cell kind {self.kind!r}; expected one of {CELL_KINDS}")
        if self.conv:
            if len(self.hidden_shape) != 3 or len(self.in_shape) != 3:
                raise ConfigError(
                    f"mod3 needs spatial input and hidden grids, got {self.in_shape} -> {self.hidden_shape}"
                )
            if tuple(self.in_shape[1:]) != tuple(self.hidden_shape[1:]):
                raise ConfigError(
                    f"convolutional layer keeps H x W fixed; input {self.in_shape} vs hidden {self.hidden_shape}"
                )
            if self.kernel_size % 2 == 0:
                raise ConfigError(f"kernel size must be odd, got {self.kernel_size}")

    @property
    def conv(self) -> bool:
        return self.kind == "variant" and self.mods.mod3

    @property
    def n_in(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def n_hidden(self) -> int:
        return int(np.prod(self.hidden_shape))

    @property
    def state_shape(self) -> tuple:
        return tuple(self.hidden_shape) if self.conv else (self.n_hidden,)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.in_shape) if self.conv else (self.n_in,)

    def gates(self) -> tuple[str, ...]:
        if self.kind == "gru":
            return ("z", "r", "h")
        if self.kind == "cuba_lif":
            return ("i",)
        if self.kind == "spikgru":
            return ("i", "z")
        return ("r", "i", "z") if self.mods.mod1 else ("i", "z")


@dataclass(frozen=True)
class DownConv:
    """Learnable strided front-end convolution (valid padding)."""

    in_channels: int
    out_channels: int
    kernel: tuple
    stride: int

    def out_shape(self, in_shape):
        _, h, w = in_shape
        kh, kw = self.kernel
        ho, wo = (h - kh) // self.stride + 1, (w - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"downsampling kernel {self.kernel} does not fit input {in_shape}")
        return (self.out_channels, ho, wo)


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Network:
    """Stack of recurrent layers followed by a leaky readout.

    Parameters live in ``params`` as float64 arrays keyed
    ``layer.gate.role`` (``l0.i.W``, ``l0.decay.alpha``, ``readout.out.W``).
    Decays are stored as free logits; the effective value is their sigmoid.
    """

    layers: list
    n_classes: int
    step_cfg: StepConfig = StepConfig()
    downconv: DownConv | None = None
    learn_decay: bool = True
    init_scale: float = 3.0  # weight bound sqrt(init_scale / fan_in)
    params: dict = field(default_factory=dict)

    def frozen(self) -> set:
        if self.learn_decay:
            return set()
        return {k for k in self.params if ".decay." in k and not k.startswith("readout")}

    def init_params(self, seed: int) -> "Network":
        rng = np.random.Generator(np.random.PCG64(seed))
        params = {}
        keep = float(logit(0.9))
        if self.downconv is not None:
            d = self.downconv
            bound = np.sqrt(self.init_scale / (d.in_channels * d.kernel[0] * d.kernel[1]))
            params["input.down.W"] = _uniform(rng, bound, (d.out_channels, d.in_channels, *d.kernel))
            params["input.down.b"] = np.zeros(d.out_channels)
        for n, layer in enumerate(self.layers):
            pre = f"l{n}"
            for gate in layer.gates():
                src = layer.hidden_shape if (gate == "z" and layer.kind == "variant" and layer.mods.mod2) else layer.in_shape
                if layer.conv:
                    k = layer.kernel_size
                    c_out = layer.hidden_shape[0]
                    params[f"{pre}.{gate}.W"] = _uniform(rng, np.sqrt(self.init_scale / (src[0] * k * k)), (c_out, src[0], k, k))
                    params[f"{pre}.{gate}.U"] = _uniform(rng, np.sqrt(self.init_scale / (c_out * k * k)), (c_out, c_out, k, k))
                    params[f"{pre}.{gate}.b"] = np.zeros(c_out)
                else:
                    n_src = int(np.prod(src))
                    h = layer.n_hidden
                    params[f"{pre}.{gate}.W"] = _uniform(rng, np.sqrt(self.init_scale / n_src), (h, n_src))
                    params[f"{pre}.{gate}.U"] = _uniform(rng, np.sqrt(self.init_scale / h), (h, h))
                    params[f"{pre}.{gate}.b"] = np.zeros(h)
                if gate == "z" or (gate == "r" and layer.kind == "variant"):
                    # r replaces alpha, so it starts where alpha would
                    params[f"{pre}.{gate}.b"][:] = keep
            if layer.kind in ("cuba_lif", "spikgru") or (layer.kind == "variant" and not layer.mods.mod1):
                params[f"{pre}.decay.alpha"] = np.full(layer.state_shape, keep)
            if layer.kind == "cuba_lif":
                params[f"{pre}.decay.beta"] = np.full(layer.state_shape, keep)
        n_last = self.layers[-1].n_hidden
        params["readout.out.W"] = _uniform(rng, np.sqrt(self.init_scale / n_last), (self.n_classes, n_last))
        params["readout.out.b"] = np.zeros(self.n_classes)
        params["readout.decay.alpha"] = np.array(keep)
        self.params = params
        return self

    def n_spiking(self) -> int:
        return sum(layer.n_hidden for layer in self.layers if layer.kind != "gru")

    def bind(self, tape: ad.Tape) -> dict:
        """Put every free parameter on ``tape`` as a leaf, in sorted order."""
        return {k: tape.leaf(self.params[k], name=k) for k in sorted(self.params)}

    def _layer_params(self, leaves, n):
        pre = f"l{n}."
        p = {k[len(pre):]: v for k, v in leaves.items() if k.startswith(pre)}
        for key in ("alpha", "beta"):
            if f"decay.{key}" in p:
                p[key] = ad.sigmoid(p.pop(f"decay.{key}"))
        return p

    def forward(self, tape: ad.Tape, x, leaves=None):
        """Unroll a batch ``x`` of shape ``N x T x C x H x W`` from zero state.

        Returns ``(trajectory, spikes)``: the readout ``Var`` of shape
        ``T x N x classes`` and, per spiking layer, an ``N x T x neurons``
        array of emitted spikes.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[1] < 1:
            raise ShapeError(f"expected N x T x ... input with T >= 1, got shape {x.shape}")
        n_batch, n_steps = x.shape[:2]
        if leaves is None:
            leaves = self.bind(tape)
        per_layer = [self._layer_params(leaves, n) for n in range(len(self.layers))]
        readout = {
            "W": leaves["readout.out.W"],
            "b": leaves["readout.out.b"],
            "alpha": ad.sigmoid(leaves["readout.decay.alpha"]),
        }
        states = []
        for layer in self.layers:
            zero = np.zeros((n_batch, *layer.state_shape))
            states.append(zero if layer.kind == "gru" else CellState(zero, zero, zero))
        records = [[] for _ in self.layers]
        out = np.zeros((n_batch, self.n_classes))
        trajectory = []
        cfg = self.step_cfg
        for t in range(n_steps):
            h = x[:, t]
            if self.downconv is not None:
                h = ad.conv2d(h, leaves["input.down.W"], leaves["input.down.b"],
                              stride=self.downconv.stride, padding="valid")
            for n, layer in enumerate(self.layers):
                h = ad.reshape(h, (n_batch, *layer.input_shape)) if isinstance(h, Var) else h.reshape(n_batch, *layer.input_shape)
                p = per_layer[n]
                if layer.kind == "gru":
                    states[n] = h = gru_step(states[n], h, p)
                else:
                    step = {
                        "cuba_lif": lambda s, xx, pp: cuba_lif_step(s, xx, pp, cfg),
                        "spikgru": lambda s, xx, pp: spikgru_step(s, xx, pp, cfg),
                        "variant": lambda s, xx, pp: variant_step(s, xx, pp, layer.mods, cfg),
                    }[layer.kind]
                    states[n], h = step(states[n], h, p)
                    records[n].append(_value(h).reshape(n_batch, -1))
            out = readout_step(out, ad.reshape(h, (n_batch, -1)), readout)
            trajectory.append(out)
        spikes = [np.stack(r, axis=1) for r, layer in zip(records, self.layers) if layer.kind != "gru"]
        return ad.stack(trajectory), spikes


def unroll(network: Network, sequence, tape: ad.Tape | None = None):
    """Unroll a single ``T x C x H x W`` sequence; returns ``(T x classes, spikes)``."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim == 0 or seq.shape[0] < 1:
        raise ShapeError("cannot unroll an empty sequence")
    tape = tape or ad.Tape(grad_enabled=False)
    traj, spikes = network.forward(tape, seq[None])
    return traj.value[:, 0], [s[0] for s in spikes]
