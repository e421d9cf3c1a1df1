"""Byte-stable array archives (parameter checkpoints, encoded spike sets).

An archive is an uncompressed zip holding ``manifest.json`` plus one raw
little-endian payload per array. Entries are written in sorted order with
a fixed timestamp, so equal contents give byte-identical files.
"""

from __future__ import annotations

import json
import zipfile

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def write_archive(path, arrays: dict, manifest: dict, dtype: str = "<f8"):
    manifest = dict(manifest)
    manifest["version"] = FORMAT_VERSION
    manifest["dtype"] = dtype
    manifest["arrays"] = {k: list(np.shape(arrays[k])) for k in sorted(arrays)}
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(arrays):
            payload = np.ascontiguousarray(np.asarray(arrays[name]).astype(dtype))
            zf.writestr(_entry(f"{name}.bin"), payload.tobytes())


def read_archive(path):
    """Returns ``(arrays, manifest)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("version") != FORMAT_VERSION:
                raise DataError(f"{path}: unsupported archive version {manifest.get('version')}")
            dtype = np.dtype(manifest["dtype"])
            arrays = {}
            for name, shape in manifest["arrays"].items():
                raw = zf.read(f"{name}.bin")
                arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    except (zipfile.BadZipFile, KeyError, ValueError) as e:
        raise DataError(f"{path}: corrupt archive ({e})") from e
    return arrays, manifest


def save_checkpoint(path, network, config):
    """Parameters as float64 plus a manifest naming cell kind, mods and shapes."""
    manifest = {
        "kind": "checkpoint",
        "cell": config.cell,
        "mods": list(config.mods.ids),
        "n_classes": network.n_classes,
        "config": config.to_dict(),
    }
    write_archive(path, network.params, manifest, "<f8")


def load_checkpoint(path):
    """Rebuild the network stored at ``path``; returns ``(network, config)``."""
    from .config import ExperimentConfig

    params, manifest = read_archive(path)
    if manifest.get("kind") != "checkpoint":
        raise DataError(f"{path} is not a checkpoint")
    config = ExperimentConfig.from_dict(manifest["config"])
    network = config.build_network(manifest["n_classes"])
    network.init_params(config.seed)
    missing = set(network.params) ^ set(params)
    if missing:
        raise DataError(f"{path}: parameter names do not match the configured network: {sorted(missing)}")
    for k, v in params.items():
        if v.shape != network.params[k].shape:
            raise DataError(f"{path}: {k} has shape {v.shape}, expected {network.params[k].shape}")
    network.params = {k: params[k].astype(np.float64) for k in sorted(params)}
    return network, config
