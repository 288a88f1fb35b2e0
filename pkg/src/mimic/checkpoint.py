"""
Binary checkpoint format for interaction networks

Layout: magic ``HMNC``, u32 format version, u64 header length, a canonical
JSON header (model config, step counter, RNG state, parameter table, run
header), then per parameter a u32 name length, the UTF-8 name, a u64 blob
length and little-endian float32 data.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .config import ModelConfig
from .errors import CheckpointError
from .network import InteractionNet

logger = logging.getLogger(__name__)

MAGIC = b"HMNC"
FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Serializable snapshot of a trained network."""
    config: ModelConfig
    params: Dict[str, np.ndarray]
    step: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    run_header: str = ""
    version: int = FORMAT_VERSION
    extra: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: InteractionNet, step: int = 0,
                   rng: Optional[np.random.Generator] = None, run_header: str = "") -> "Checkpoint":
        return cls(
            config=model.config,
            params={name: p.data.astype(BLOB_DTYPE) for name, p in model.params.items()},
            step=step,
            rng_state=rng.bit_generator.state if rng is not None else None,
            run_header=run_header,
        )

    def to_model(self) -> InteractionNet:
        """Rebuild the network and load the stored weights."""
        model = InteractionNet(self.config)
        missing = set(model.params) - set(self.params)
        unknown = set(self.params) - set(model.params)
        if missing or unknown:
            raise CheckpointError(f"Checkpoint parameters do not match the model "
                                  f"(missing {sorted(missing)}, unknown {sorted(unknown)})")
        for name, param in model.params.items():
            blob = self.params[name]
            if blob.shape != param.shape:
                raise CheckpointError(f"Parameter {name} has shape {blob.shape}, model expects {param.shape}",
                                      field=name, value=blob.shape)
            param.data = blob.astype(param.dtype)
            param.velocity = np.zeros_like(param.data)
        return model

    def restore_rng(self) -> np.random.Generator:
        """Generator continuing from the stored RNG state."""
        rng = np.random.default_rng()
        if self.rng_state is not None:
            rng.bit_generator.state = self.rng_state
        return rng


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]):
    """Write a checkpoint; identical content yields identical bytes."""
    names = list(checkpoint.params)
    header = {
        "config": checkpoint.config.to_dict(),
        "step": checkpoint.step,
        "rng": checkpoint.rng_state,
        "params": [{"name": n, "shape": list(checkpoint.params[n].shape)} for n in names],
        "run": checkpoint.run_header,
        "extra": checkpoint.extra,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", checkpoint.version))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for name in names:
            encoded = name.encode("utf-8")
            blob = np.ascontiguousarray(checkpoint.params[name], dtype=BLOB_DTYPE).tobytes()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
    logger.info(f"Saved checkpoint at step {checkpoint.step} to {path}")


def _read_exact(f, size: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise CheckpointError(f"Truncated checkpoint while reading {what}", field=what)
    return data


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: On bad magic, unsupported version or truncation
    """
    path = Path(path)
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"Cannot open checkpoint {path}: {e}", field="checkpoint", value=str(path))
    with f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)", field="magic")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}", field="version", value=version)
        (header_len,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        try:
            header = json.loads(_read_exact(f, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"Corrupt checkpoint header: {e}", field="header")

        params: Dict[str, np.ndarray] = {}
        for entry in header["params"]:
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            if name != entry["name"]:
                raise CheckpointError(f"Parameter order mismatch: {name} != {entry['name']}", field=name)
            (blob_len,) = struct.unpack("<Q", _read_exact(f, 8, f"{name} length"))
            blob = _read_exact(f, blob_len, name)
            shape = tuple(entry["shape"])
            array = np.frombuffer(blob, dtype=BLOB_DTYPE)
            if array.size != int(np.prod(shape)):
                raise CheckpointError(f"Parameter {name} blob has {array.size} values for shape {shape}",
                                      field=name, value=shape)
            params[name] = array.reshape(shape).copy()

    try:
        config = ModelConfig.from_dict(header["config"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"Checkpoint holds an invalid model config: {e}", field="config")
    logger.info(f"Loaded checkpoint {path} (step {header['step']})")
    return Checkpoint(
        config=config,
        params=params,
        step=header["step"],
        rng_state=header.get("rng"),
        run_header=header.get("run", ""),
        version=version,
        extra=header.get("extra", {}),
    )


def load_model(path: Union[str, Path]) -> InteractionNet:
    """Network restored from a checkpoint file."""
    return load_checkpoint(path).to_model()
