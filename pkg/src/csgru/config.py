"""Declarative experiment configuration (JSON round-trippable)."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import SURROGATE_KINDS, SurrogateSpec
from .cells import CELL_KINDS, DownConv, LayerSpec, ModSet, Network, StepConfig
from .data import PipelineSpec
from .errors import ConfigError

TASK_KINDS = ("pattern3", "moving-bar", "mnist")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "pattern3"
    n_train: int = 600
    n_test: int = 200
    T: int = 20
    grid: tuple = (1, 8, 8)
    noise_rate: float = 0.05
    seed: int = 0
    # mnist: IDX files; the test split is read after the first n_train
    # samples unless separate test files are given
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    cell: str = "variant"
    mods: ModSet = ModSet()
    surrogate: str = "triangular"  # used unless mod4 is on
    mod4_surrogate: str = "arctan"
    surrogate_scale: float = 1.0
    v_th: float = 1.0
    task: TaskSpec = TaskSpec()
    pipeline: PipelineSpec = PipelineSpec()
    hidden: int = 128
    hidden_grid: tuple | None = (2, 8, 8)  # mod3 arrangement of the hidden units
    kernel_size: int = 3
    layers: int = 1
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float | None = None
    detach_reset: bool = False
    learn_decay: bool = True
    init_scale: float = 3.0
    record_wall_time: bool = False

    # ------------------------------------------------------------------

    def surrogate_spec(self) -> SurrogateSpec:
        kind = self.mod4_surrogate if (self.cell == "variant" and self.mods.mod4) else self.surrogate
        return SurrogateSpec(kind, self.surrogate_scale, self.v_th)

    @property
    def conv(self) -> bool:
        return self.cell == "variant" and self.mods.mod3

    def label(self) -> str:
        return {"gru": "GRU", "cuba_lif": "Cuba-LIF", "spikgru": "SpikGRU"}.get(self.cell) or self.mods.label()

    def data_shape(self) -> tuple:
        """Per-timestep shape after the data-side pipeline (grid, pooling)."""
        shape = tuple(self.pipeline.target_grid or self.task.grid)
        if self.pipeline.pool:
            c, h, w = shape
            shape = (c, -(-h // 2), -(-w // 2))
        return shape

    def input_shape(self) -> tuple:
        """Per-timestep input shape seen by the first recurrent layer."""
        shape = self.data_shape()
        if self.pipeline.downconv_channels:
            shape = self._downconv(shape).out_shape(shape)
        return shape

    def _downconv(self, shape) -> DownConv:
        kernel = tuple(self.pipeline.downconv_kernel or (3, 3))
        return DownConv(shape[0], self.pipeline.downconv_channels, kernel, self.pipeline.downconv_stride)

    def validate(self) -> "ExperimentConfig":
        if self.cell not in CELL_KINDS:
            raise ConfigError(f"cell must be one of {CELL_KINDS}, got {self.cell!r}")
        for kind in (self.surrogate, self.mod4_surrogate):
            if kind not in SURROGATE_KINDS:
                raise ConfigError(f"surrogate must be one of {SURROGATE_KINDS}, got {kind!r}")
        if self.cell != "variant" and self.mods.ids:
            raise ConfigError(f"mods only apply to the variant cell, not {self.cell!r}")
        if self.task.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.task.kind!r}")
        if self.task.kind == "mnist" and not (self.task.images and self.task.labels):
            raise ConfigError("mnist task needs IDX 'images' and 'labels' paths")
        for name in ("epochs", "batch_size", "hidden", "layers"):
            if getattr(self, name) < 1 and not (name == "epochs" and self.epochs == 0):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0 or self.surrogate_scale <= 0 or self.init_scale <= 0:
            raise ConfigError("lr must be >= 0, surrogate_scale and init_scale > 0")
        if self.conv:
            if self.hidden_grid is None or len(self.hidden_grid) != 3:
                raise ConfigError("mod3 needs a C x H x W hidden_grid")
            if int(np.prod(self.hidden_grid)) != self.hidden:
                raise ConfigError(f"hidden_grid {self.hidden_grid} does not hold {self.hidden} units")
            if tuple(self.hidden_grid[1:]) != tuple(self.input_shape()[1:]):
                raise ConfigError(
                    f"hidden_grid {self.hidden_grid} must match the input's H x W {self.input_shape()[1:]}"
                )
        if self.pipeline.target_grid is not None:
            if int(np.prod(self.pipeline.target_grid)) != int(np.prod(self.task.grid)):
                raise ConfigError(f"cannot arrange {self.task.grid} as {self.pipeline.target_grid}")
        try:
            self.build_network(3)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def build_network(self, n_classes: int) -> Network:
        in_shape = self.input_shape()
        hidden_shape = tuple(self.hidden_grid) if self.conv else (self.hidden,)
        layers = []
        for n in range(self.layers):
            src = in_shape if n == 0 else hidden_shape
            layers.append(LayerSpec(self.cell, tuple(src), hidden_shape, self.mods, self.kernel_size))
        down = None
        if self.pipeline.downconv_channels:
            down = self._downconv(self.data_shape())
        step = StepConfig(self.surrogate_spec(), detach_reset=self.detach_reset)
        return Network(layers, n_classes, step, down, self.learn_decay, self.init_scale)

    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mods"] = list(self.mods.ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "mods" in d:
                mods = d["mods"]
                d["mods"] = ModSet.from_ids(mods) if isinstance(mods, (list, tuple)) else ModSet(**mods)
            if "task" in d:
                task = dict(d["task"])
                if "grid" in task:
                    task["grid"] = tuple(task["grid"])
                d["task"] = TaskSpec(**task)
            if "pipeline" in d:
                pipe = dict(d["pipeline"])
                for k in ("target_grid", "downconv_kernel"):
                    if pipe.get(k) is not None:
                        pipe[k] = tuple(pipe[k])
                d["pipeline"] = PipelineSpec(**pipe)
            if d.get("hidden_grid") is not None:
                d["hidden_grid"] = tuple(d["hidden_grid"])
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"malformed config: {e}") from e

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(raw)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


__all__ = ["ExperimentConfig", "TaskSpec", "PipelineSpec"]
