"""Single-file binary container for named f64 tensors plus UTF-8 metadata.

Layout (all integers little-endian):

    magic   5 bytes  b"ICLCT"
    version u32
    n_meta  u32, then per entry: key_len u32, key, value_len u32, value
    n_tens  u64, then per tensor: name_len u32, name, rank u64,
            dims u64 * rank, values f64 row-major

Entry order is preserved on load, so save(load(x)) reproduces x byte for
byte.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError

MAGIC = b"ICLCT"
VERSION = 1


def save_container(path, metadata: dict, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(metadata)))
        for key, value in metadata.items():
            kb, vb = key.encode(), str(value).encode()
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<I", len(vb)))
            fh.write(vb)
        fh.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)  # keeps 0-d shapes intact
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype("<f8").tobytes())


def load_container(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise ContractError(f"{path} is not a checkpoint container")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ContractError(f"unsupported container version {version}")
        (n_meta,) = struct.unpack("<I", fh.read(4))
        metadata = {}
        for _ in range(n_meta):
            (klen,) = struct.unpack("<I", fh.read(4))
            key = fh.read(klen).decode()
            (vlen,) = struct.unpack("<I", fh.read(4))
            metadata[key] = fh.read(vlen).decode()
        (n_tens,) = struct.unpack("<Q", fh.read(8))
        tensors = {}
        for _ in range(n_tens):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode()
            (rank,) = struct.unpack("<Q", fh.read(8))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
            tensors[name] = values.astype(np.float64)
        return metadata, tensors
