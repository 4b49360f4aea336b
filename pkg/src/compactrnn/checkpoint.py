"""Binary checkpoints: byte-exact save/load of a training run.

Layout (little-endian)::

    magic     8 bytes  b"CRNNCKPT"
    version   uint32
    hlen      uint64   length of the JSON header
    header    hlen bytes of UTF-8 JSON (config echo, counters, stream positions,
              and the ordered list of blobs as [name, type, nbytes, shape])
    blobs     concatenated in header order

Map blobs use ``LinearMap.to_bytes``; vectors and carried states are raw
float64 arrays.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linear_maps
from .config import config_from_dict, config_to_dict

MAGIC = b"CRNNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    blobs: dict      # name -> bytes, in header order

    @property
    def config(self):
        return config_from_dict(self.header["config"])

    def param_blob_count(self):
        """Number of trainable doubles stored across parameter blobs."""
        total = 0
        for name, kind, nbytes, _ in self.header["blobs"]:
            if kind == "map":
                total += linear_maps.map_from_bytes(self.blobs[name]).param_count
            elif kind == "vector":
                total += nbytes // 8
        return total


def _array_bytes(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def trainer_to_bytes(trainer):
    entries, blobs = [], []
    for name, block in trainer.network.named_blocks():
        if isinstance(block, linear_maps.LinearMap):
            data, kind, shape = block.to_bytes(), "map", list(block.shape)
        else:
            data, kind, shape = _array_bytes(block), "vector", list(block.shape)
        entries.append([name, kind, len(data), shape])
        blobs.append(data)
    for idx, state in enumerate(trainer.states, start=1):
        for field in ("hidden", "cell", "up"):
            arr = getattr(state, field)
            if arr is not None:
                data = _array_bytes(arr)
                entries.append([f"state.layer{idx}.{field}", "state", len(data), list(arr.shape)])
                blobs.append(data)
    header = {
        "config": config_to_dict(trainer.config),
        "step": trainer.step,
        "frames_seen": trainer.frames_seen,
        "rng_state": trainer.rng.state,
        "stream_positions": trainer.stream.positions,
        "blobs": entries,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(raw)) + raw + b"".join(blobs)


def save_checkpoint(path, trainer):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(trainer_to_bytes(trainer))
    tmp.replace(path)


def checkpoint_from_bytes(buf):
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {VERSION}")
    start = 20
    header = json.loads(buf[start:start + hlen].decode())
    off = start + hlen
    blobs = {}
    for name, _, nbytes, _ in header["blobs"]:
        blobs[name] = bytes(buf[off:off + nbytes])
        off += nbytes
    if off != len(buf):
        raise CheckpointError("checkpoint size does not match its header")
    return Checkpoint(header, blobs)


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())


def restore_into(trainer, ckpt):
    """Overwrite the trainer's parameters, counters, streams and states from ``ckpt``."""
    blocks = dict(trainer.network.named_blocks())
    for name, kind, _, shape in ckpt.header["blobs"]:
        data = ckpt.blobs[name]
        if kind == "state":
            continue
        if name not in blocks:
            raise CheckpointError(f"checkpoint block {name} not in network")
        block = blocks[name]
        if kind == "map":
            saved = linear_maps.map_from_bytes(data)
            if saved.kind != block.kind or saved.shape != block.shape:
                raise CheckpointError(f"{name}: checkpoint has {saved.kind} {saved.shape}, "
                                      f"network has {block.kind} {block.shape}")
            for key, arr in block.params.items():
                if saved.params[key].shape != arr.shape:
                    raise CheckpointError(f"{name}/{key}: shape mismatch")
                arr[...] = saved.params[key]
            if block.kind == "hashed":
                block.seed = saved.seed
                block._index = None
        else:
            values = np.frombuffer(data, dtype="<f8")
            if values.size != block.size:
                raise CheckpointError(f"{name}: expected {block.size} values, got {values.size}")
            block[...] = values.reshape(block.shape)
    for idx, state in enumerate(trainer.states, start=1):
        for field in ("hidden", "cell", "up"):
            key = f"state.layer{idx}.{field}"
            if key in ckpt.blobs:
                shape = next(e[3] for e in ckpt.header["blobs"] if e[0] == key)
                setattr(state, field, np.frombuffer(ckpt.blobs[key], dtype="<f8").reshape(shape).copy())
    trainer.step = ckpt.header["step"]
    trainer.frames_seen = ckpt.header["frames_seen"]
    trainer.rng.state = ckpt.header["rng_state"]
    trainer.stream.positions = [list(p) for p in ckpt.header["stream_positions"]]
    return trainer
