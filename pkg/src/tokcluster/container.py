"""Flat tensor container for weight and feature dumps.

File layout, designed for trivial cross-language parsing:

    bytes 0..8    magic ``b"NTCONT\\x00\\x01"``
    bytes 8..12   header length (little-endian uint32)
    header        UTF-8 JSON: {"entries": [{"name": str, "shape": [int...],
                  "offset": int}, ...]}  -- offsets in bytes from payload start
    payload       raw little-endian float32 values, entries packed in order

Round trips are bit-exact: values are written and re-read as raw bytes.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"NTCONT\x00\x01"


class ContainerError(Exception):
    """Base class for container load failures."""


class ContainerFormatError(ContainerError):
    """Magic, header, or entry table is malformed."""


class ContainerPayloadError(ContainerError):
    """Payload length does not match the entry table."""


class NamedTensorContainer:
    """Ordered mapping of unique names to float32 arrays."""

    def __init__(self, entries=None):
        self._entries: dict[str, np.ndarray] = {}
        if entries is not None:
            items = entries.items() if hasattr(entries, "items") else entries
            for name, arr in items:
                self.add(name, arr)

    def add(self, name: str, arr) -> None:
        if not isinstance(name, str) or not name:
            raise ContainerFormatError(f"entry name must be a non-empty string, got {name!r}")
        if name in self._entries:
            raise ContainerFormatError(f"duplicate entry name: {name!r}")
        value = np.ascontiguousarray(arr, dtype=np.float32)
        self._entries[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def __eq__(self, other):
        if not isinstance(other, NamedTensorContainer):
            return NotImplemented
        if self.names() != other.names():
            return False
        return all(
            a.shape == other[n].shape and a.tobytes() == other[n].tobytes()
            for n, a in self.items()
        )


def save_container(path, tensors) -> None:
    """Write a container (or any name->array mapping) to ``path``."""
    if not isinstance(tensors, NamedTensorContainer):
        tensors = NamedTensorContainer(tensors)
    header_entries = []
    offset = 0
    payloads = []
    for name, arr in tensors.items():
        raw = arr.astype("<f4", copy=False).tobytes()
        header_entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"entries": header_entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(4, "little"))
        f.write(header)
        for raw in payloads:
            f.write(raw)


def load_container(path) -> NamedTensorContainer:
    """Read a container written by :func:`save_container`.

    Raises :class:`ContainerFormatError` for bad magic/header/duplicate names
    and :class:`ContainerPayloadError` when the payload length disagrees with
    the entry table. I/O failures propagate as ``OSError``.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise ContainerFormatError("not a tensor container (bad magic)")
    header_len = int.from_bytes(blob[len(MAGIC) : len(MAGIC) + 4], "little")
    header_start = len(MAGIC) + 4
    if header_start + header_len > len(blob):
        raise ContainerFormatError("header extends past end of file")
    try:
        header = json.loads(blob[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or not isinstance(header.get("entries"), list):
        raise ContainerFormatError("header missing 'entries' list")

    payload = blob[header_start + header_len :]
    out = NamedTensorContainer()
    expected_end = 0
    for entry in header["entries"]:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ContainerFormatError(f"malformed entry {entry!r}") from exc
        if any(s < 0 for s in shape) or offset < 0:
            raise ContainerFormatError(f"negative shape or offset in entry {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(payload):
            raise ContainerPayloadError(
                f"entry {name!r} needs payload bytes [{offset}, {offset + nbytes}) "
                f"but payload has {len(payload)}"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        if name in out:
            raise ContainerFormatError(f"duplicate entry name: {name!r}")
        out.add(name, arr.reshape(shape))
        expected_end = max(expected_end, offset + nbytes)
    if expected_end != len(payload):
        raise ContainerPayloadError(
            f"payload has {len(payload)} bytes but entries account for {expected_end}"
        )
    return out
