"""Binary checkpoints: parameters, entity states and the run config.

Layout (little-endian): ``DRXM`` magic, u16 version, u32 epoch, u32 d, b
and S (the hyperparameter block), config text, then named float64 tensors
(parameters first, then ``state.U`` and ``state.I``), closed by a CRC32 of
everything before it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, load_config, parse_pairs
from .ingest import BundleFormatError, ChecksumError, _Reader
from .model import EntityState, HyperParams

CKPT_MAGIC = b"DRXM"
CKPT_VERSION = 1
STATE_KEYS = ("state.U", "state.I")


class CheckpointError(BundleFormatError):
    pass


@dataclass
class Checkpoint:
    params: dict
    states: EntityState
    config: TrainConfig
    epoch: int = 0
    hyper: HyperParams | None = None


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f8")
    key = name.encode("utf-8")
    return b"".join([struct.pack("<I", len(key)), key, struct.pack("<B", a.ndim),
                     struct.pack(f"<{a.ndim}Q", *a.shape), a.tobytes()])


def checkpoint_bytes(params: dict, states: EntityState, config: TrainConfig, epoch: int = 0) -> bytes:
    cfg = config.dumps().encode("utf-8")
    d, b = params["P_t"].shape[1], params["P_t"].shape[0]
    S = params["P_s"].shape[0]
    tensors = [(k, params[k]) for k in sorted(params)] + [("state.U", states.U), ("state.I", states.I)]
    body = b"".join([CKPT_MAGIC, struct.pack("<HIIIII", CKPT_VERSION, epoch, d, b, S, len(cfg)), cfg,
                     struct.pack("<I", len(tensors))] + [_pack_tensor(k, v) for k, v in tensors])
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, params, states, config, epoch: int = 0) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, states, config, epoch))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(buf) < 34:
        raise ChecksumError(f"{path}: truncated checkpoint")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated)")
    rd = _Reader(body, 4)
    (version,) = rd.unpack("<H")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    epoch, d, b, S, n_cfg = rd.unpack("<IIIII")
    config = load_config(overrides=parse_pairs(rd.take(n_cfg).decode("utf-8")))
    (n,) = rd.unpack("<I")
    tensors = {}
    for _ in range(n):
        (ln,) = rd.unpack("<I")
        name = rd.take(ln).decode("utf-8")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}Q")
        tensors[name] = rd.array("<f8", int(np.prod(shape, dtype=np.int64))).reshape(shape).copy()
    if rd.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint body")
    missing = [k for k in STATE_KEYS if k not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing {', '.join(missing)}")
    states = EntityState(tensors.pop("state.U"), tensors.pop("state.I"))
    if tensors.get("P_t", np.empty((b, d))).shape != (b, d) or states.U.shape[1:] != (d,):
        raise CheckpointError(f"{path}: tensor shapes disagree with the hyperparameter block")
    hyper = HyperParams(d=d, b=b, S=S, lam=config.lam)
    return Checkpoint(tensors, states, config, epoch, hyper)
