"""Binary checkpoint container for :class:`~pinet.blocks.ProductNet`.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"PINETCKP"
    8       4     uint32 format version (1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header (keys sorted, no whitespace)
    16+H    ...   payload: every tensor listed in the header, in order,
                  as row-major float64 little-endian values

The header holds ``blocks`` (one dict of spec fields per block), ``tensors``
(``name``, ``shape``, ``offset`` and ``nbytes`` relative to the payload
start), ``payload_bytes``, ``payload_sha256`` and a free-form ``meta`` dict.
Parameter tensors are named ``block<i>.<param>``. Two extra tensors,
``fingerprint.inputs`` and ``fingerprint.outputs``, record the network's
outputs at seeded probe points when it was saved, so a reader can confirm
the parameters still compute the same function.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import ProductNet, PolyBlockParams, spec_from_dict
from .tensor import Tensor

MAGIC = b"PINETCKP"
VERSION = 1
FINGERPRINT_POINTS = 16
FINGERPRINT_SEED = 20240601


class CheckpointError(ValueError):
    """Malformed or corrupted checkpoint file."""


@dataclass
class Checkpoint:
    net: ProductNet
    meta: dict = field(default_factory=dict)
    digest_ok: bool = True
    fingerprint_inputs: Tensor | None = None
    fingerprint_outputs: Tensor | None = None


def fingerprint_inputs(input_dim: int) -> Tensor:
    rng = np.random.default_rng(FINGERPRINT_SEED)
    return Tensor(rng.uniform(-1.0, 1.0, size=(FINGERPRINT_POINTS, input_dim)))


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(net: ProductNet, meta: dict | None = None) -> bytes:
    named = list(net.named_params())
    zf = fingerprint_inputs(net.input_dim)
    named.append(("fingerprint.inputs", zf))
    named.append(("fingerprint.outputs", net(zf)))
    entries, chunks, offset = [], [], 0
    for name, t in named:
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "blocks": [b.spec.to_dict() for b in net.blocks],
        "meta": meta or {},
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + payload


def save_checkpoint(path, net: ProductNet, meta: dict | None = None) -> None:
    atomic_write_bytes(path, encode(net, meta))


def decode(data: bytes, strict: bool = True) -> Checkpoint:
    """Parse checkpoint bytes.

    With ``strict`` a digest mismatch raises; otherwise it is reported through
    ``Checkpoint.digest_ok`` so verification tooling can inspect the damage.
    """
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("bad magic at offset 0: not a pinet checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version} at offset 8")
    if 16 + hlen > len(data):
        raise CheckpointError(f"header length {hlen} at offset 12 runs past end of file")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header at offset 16: {exc}") from None
    payload = data[16 + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(
            f"payload is {len(payload)} bytes, header declares {header.get('payload_bytes')}"
        )
    digest_ok = hashlib.sha256(payload).hexdigest() == header.get("payload_sha256")
    if strict and not digest_ok:
        raise CheckpointError("payload digest mismatch: checkpoint is corrupted")
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        if entry["nbytes"] != n or entry["offset"] + n > len(payload):
            raise CheckpointError(f"tensor {entry['name']!r}: extent does not match payload")
        arr = np.frombuffer(payload, dtype="<f8", count=n // 8, offset=entry["offset"])
        tensors[entry["name"]] = Tensor(arr.reshape(shape).astype(np.float64))
    blocks = []
    for i, sd in enumerate(header["blocks"]):
        spec = spec_from_dict(sd)
        prefix = f"block{i}."
        blocks.append(PolyBlockParams(spec, {k[len(prefix):]: v for k, v in tensors.items()
                                             if k.startswith(prefix)}))
    return Checkpoint(
        net=ProductNet(blocks),
        meta=header.get("meta", {}),
        digest_ok=digest_ok,
        fingerprint_inputs=tensors.get("fingerprint.inputs"),
        fingerprint_outputs=tensors.get("fingerprint.outputs"),
    )


def load_checkpoint(path, strict: bool = True) -> Checkpoint:
    return decode(Path(path).read_bytes(), strict=strict)
