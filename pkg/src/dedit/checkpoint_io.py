"""Checkpoint file format.

Layout: magic "DEDT", u32 version, u32 tensor count, then per tensor a
u16 name length, the UTF-8 name, u8 rank, u32 dims, and the f32 payload,
all little-endian; the file ends with a CRC32 of every preceding byte.
Config and vocabulary metadata ride along as reserved "meta.*" tensors
so one format carries the whole model state.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from typing import Dict

import numpy as np

from . import tensor as tc
from .errors import CorruptionError, IntegrityError, VersionError
from .model import CHECKPOINT_VERSION, CURVES, TAGS, Checkpoint, Denoiser, DenoiserConfig
from .schedule import noise_rng
from .text import TextEncoder, Vocabulary

MAGIC = b"DEDT"


def _text_tensor(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _tensor_text(arr: np.ndarray) -> str:
    return bytes(arr.astype(np.uint8)).decode("utf-8")


def _meta_tensors(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    pairs = np.array([p for pair in ckpt.vocab.injected_items for p in pair],
                     dtype=np.float32)
    owners = "\n".join(f"{name}\t{first}\t{n}"
                       for name, (first, n) in ckpt.vocab.injection_owners.items())
    return {
        "meta.config": ckpt.config.to_array(),
        "meta.words": _text_tensor("\n".join(ckpt.vocab.words)),
        "meta.injected_items": pairs,
        "meta.owners": _text_tensor(owners),
        "meta.tag": np.array([TAGS.index(ckpt.tag)], dtype=np.float32),
        "meta.schedule": np.array([ckpt.schedule_T,
                                   CURVES.index(ckpt.schedule_curve)], dtype=np.float32),
    }


def serialize_tensors(tensors: Dict[str, np.ndarray], version: int) -> bytes:
    chunks = [MAGIC, struct.pack("<I", version), struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        if arr.ndim > 255:
            raise CorruptionError(f"tensor {name} rank {arr.ndim} exceeds format limit")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            chunks.append(struct.pack("<I", d))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def deserialize_tensors(data: bytes) -> tuple:
    if len(data) < 16:
        raise CorruptionError("checkpoint file truncated before header")
    body, footer = data[:-4], data[-4:]
    if struct.unpack("<I", footer)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise IntegrityError("checkpoint CRC mismatch")
    if body[:4] != MAGIC:
        raise CorruptionError(f"bad magic {body[:4]!r}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version}, supported {CHECKPOINT_VERSION}")
    off = 12
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", body, off) if rank else ()
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
        except (struct.error, ValueError) as e:
            raise CorruptionError(f"checkpoint tensor table truncated: {e}") from None
        if name in out:
            raise CorruptionError(f"duplicate tensor name {name!r}")
        # frombuffer views are read-only; hand out writable owned arrays
        # so a loaded checkpoint can train
        out[name] = np.array(arr, dtype=np.float32, order="C")
    if off != len(body):
        raise CorruptionError(f"{len(body) - off} trailing bytes after tensor table")
    return version, out


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    tensors: Dict[str, np.ndarray] = {n: t.values for n, t in ckpt.params().items()}
    tensors.update(_meta_tensors(ckpt))
    return serialize_tensors(tensors, ckpt.version)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    blob = checkpoint_to_bytes(ckpt)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def clone_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    """Independent deep copy via the serialized form, so a clone equals
    a save/load round trip bit for bit."""
    return checkpoint_from_bytes(checkpoint_to_bytes(ckpt))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    version, tensors = deserialize_tensors(data)

    for required in ("meta.config", "meta.words"):
        if required not in tensors:
            raise CorruptionError(f"checkpoint lacks {required}")
    config = DenoiserConfig.from_array(tensors.pop("meta.config"))
    words = _tensor_text(tensors.pop("meta.words")).split("\n")
    pairs = tensors.pop("meta.injected_items", np.zeros(0, dtype=np.float32))
    owners_text = _tensor_text(tensors.pop("meta.owners", np.zeros(0, dtype=np.float32)))
    tag_arr = tensors.pop("meta.tag", np.zeros(1, dtype=np.float32))
    sched_arr = tensors.pop("meta.schedule", np.array([100.0, 1.0], dtype=np.float32))

    vocab = Vocabulary(words, dim=config.context_dim, seed=0)
    if vocab.base_size != len(words):
        raise CorruptionError("vocabulary word list does not include the null token")
    vocab.injected_items = [(int(pairs[i]), int(pairs[i + 1]))
                            for i in range(0, len(pairs), 2)]
    for line in owners_text.split("\n"):
        if line:
            name, first, n = line.split("\t")
            vocab.injection_owners[name] = (int(first), int(n))
    encoder = TextEncoder(config.context_dim, seed=0)
    denoiser = Denoiser(config, noise_rng(0, 2))
    ckpt = Checkpoint(config, vocab, encoder, denoiser)
    ckpt.tag = TAGS[int(tag_arr[0])]
    ckpt.schedule_T = int(sched_arr[0])
    ckpt.schedule_curve = CURVES[int(sched_arr[1])]

    params = ckpt.params()
    inj = tensors.get("vocab.injected_rows")
    if inj is not None:
        vocab.injected_rows = tc.Tensor(inj)
        params = ckpt.params()
    for name, t in params.items():
        if name not in tensors:
            raise CorruptionError(f"checkpoint lacks tensor {name!r}")
        arr = tensors.pop(name)
        if tuple(arr.shape) != t.shape:
            raise CorruptionError(
                f"tensor {name!r} has shape {tuple(arr.shape)}, expected {t.shape}")
        t.values = np.ascontiguousarray(arr, dtype=np.float32)
    if tensors:
        raise CorruptionError(f"unrecognized tensors in checkpoint: {sorted(tensors)}")
    return ckpt


def checkpoints_equal(a: Checkpoint, b: Checkpoint) -> bool:
    pa, pb = a.params(), b.params()
    if set(pa) != set(pb) or a.config != b.config or a.vocab.words != b.vocab.words:
        return False
    if a.vocab.injected_items != b.vocab.injected_items:
        return False
    if a.vocab.injection_owners != b.vocab.injection_owners:
        return False
    if (a.tag, a.schedule_T, a.schedule_curve) != (b.tag, b.schedule_T, b.schedule_curve):
        return False
    return all(np.array_equal(pa[n].values, pb[n].values) for n in pa)
