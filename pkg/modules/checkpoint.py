import io
import zipfile
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import orjson
import torch

from atomic_update import atomic_write_bytes
from errors import ConfigError, DimensionError
from logging_config import get_logger
from model import ModelConfig, build_model

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
BLOB_DTYPE = "float32-le"
FORMAT_VERSION = 1
ADAM_MOMENTS = ("exp_avg", "exp_avg_sq")


@dataclass
class Checkpoint:
    parameters: Dict[str, np.ndarray]
    config: ModelConfig
    iteration: int = 0
    optimizer: Dict[str, dict] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)


def _to_float32(tensor):
    return tensor.detach().cpu().to(torch.float32).numpy().copy()


def capture(model, optimizer=None, iteration=0, data_seed=None):
    """Snapshot model parameters, optimizer moments and RNG state."""
    parameters = {name: _to_float32(p) for name, p in model.named_parameters()}
    moments = {}
    if optimizer is not None:
        for name, p in model.named_parameters():
            state = optimizer.state.get(p)
            if not state:
                continue
            moments[name] = {"step": int(float(state["step"]))}
            for key in ADAM_MOMENTS:
                moments[name][key] = _to_float32(state[key])
    rng_state = {
        "data_order": "per-iteration",
        "data_seed": data_seed,
        "torch": torch.get_rng_state().numpy().tobytes().hex(),
    }
    return Checkpoint(parameters, model.cfg, iteration, moments, rng_state)


def _blob_name(prefix, name):
    return f"{prefix}/{name}.bin"


def save_checkpoint(ckpt, path):
    """Write one archive: manifest.json plus a little-endian float32 blob per array."""
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": BLOB_DTYPE,
        "config": ckpt.config.to_dict(),
        "iteration": ckpt.iteration,
        "rng_state": ckpt.rng_state,
        "parameters": [],
        "optimizer": {},
    }
    blobs = {}
    for name, array in ckpt.parameters.items():
        entry = _blob_name("params", name)
        manifest["parameters"].append({"name": name, "shape": list(array.shape), "blob": entry})
        blobs[entry] = array
    for name, state in ckpt.optimizer.items():
        record = {"step": state["step"]}
        for key in ADAM_MOMENTS:
            entry = _blob_name(f"optimizer/{key}", name)
            record[key] = entry
            blobs[entry] = state[key]
        manifest["optimizer"][name] = record

    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as archive:
        archive.writestr(MANIFEST_NAME, orjson.dumps(manifest, option=orjson.OPT_INDENT_2))
        for entry, array in blobs.items():
            archive.writestr(entry, np.ascontiguousarray(array, dtype="<f4").tobytes())
    atomic_write_bytes(buffer.getvalue(), path)
    logger.info(f"Saved checkpoint at iteration {ckpt.iteration} to {path}")
    return path


def _read_blob(archive, entry, shape):
    array = np.frombuffer(archive.read(entry), dtype="<f4").astype(np.float32)
    expected = int(np.prod(shape)) if shape else 1
    if array.size != expected:
        raise DimensionError(f"Blob '{entry}' holds {array.size} values, manifest expects {expected}.")
    return array.reshape(shape)


def load_checkpoint(path):
    with zipfile.ZipFile(path, "r") as archive:
        manifest = orjson.loads(archive.read(MANIFEST_NAME))
        if manifest.get("dtype") != BLOB_DTYPE:
            raise ConfigError(f"Unsupported checkpoint dtype '{manifest.get('dtype')}'.")
        shapes = {}
        parameters = {}
        for entry in manifest["parameters"]:
            if entry["name"] in parameters:
                raise ConfigError(f"Duplicate parameter '{entry['name']}' in {path}.")
            shapes[entry["name"]] = entry["shape"]
            parameters[entry["name"]] = _read_blob(archive, entry["blob"], entry["shape"])
        optimizer = {}
        for name, record in manifest.get("optimizer", {}).items():
            optimizer[name] = {"step": record["step"]}
            for key in ADAM_MOMENTS:
                optimizer[name][key] = _read_blob(archive, record[key], shapes[name])
    config = ModelConfig.from_dict(manifest["config"])
    return Checkpoint(parameters, config, manifest["iteration"], optimizer, manifest.get("rng_state", {}))


def restore_model(ckpt):
    """Build the network for ckpt.config and load its parameters."""
    model, _ = build_model(ckpt.config)
    expected = dict(model.named_parameters())
    missing = set(expected) - set(ckpt.parameters)
    unexpected = set(ckpt.parameters) - set(expected)
    if missing or unexpected:
        raise ConfigError(
            f"Checkpoint does not fit its config (missing {sorted(missing)}, unexpected {sorted(unexpected)})."
        )
    with torch.no_grad():
        for name, p in expected.items():
            array = ckpt.parameters[name]
            if tuple(array.shape) != tuple(p.shape):
                raise DimensionError(f"Parameter '{name}' has shape {array.shape}, model expects {tuple(p.shape)}.")
            p.copy_(torch.from_numpy(array))
    return model


def restore_optimizer(ckpt, model, optimizer):
    """Load the saved Adam moments into an optimizer built over model.parameters()."""
    state = {}
    for index, (name, _) in enumerate(model.named_parameters()):
        saved = ckpt.optimizer.get(name)
        if saved is None:
            continue
        state[index] = {"step": torch.tensor(float(saved["step"]))}
        for key in ADAM_MOMENTS:
            state[index][key] = torch.from_numpy(saved[key].copy())
    template = optimizer.state_dict()
    template["state"] = state
    optimizer.load_state_dict(template)


def restore_rng(ckpt):
    raw = ckpt.rng_state.get("torch")
    if raw:
        torch.set_rng_state(torch.from_numpy(np.frombuffer(bytes.fromhex(raw), dtype=np.uint8).copy()))
