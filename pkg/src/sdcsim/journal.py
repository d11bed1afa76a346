"""Append-only, hash-chained event journal.

Every ledger mutation and contract state change is serialized into an
EventRecord and appended as a block. Block k stores
``hash = SHA256(index(8 BE) || prev_hash(32) || payload)``, with block 0
chaining from 32 zero bytes, so any bit flipped anywhere in the history
invalidates verification of the chain.

Serialization is canonical: fixed field order, length-prefixed UTF-8
strings, fixed-width big-endian integers, detail pairs sorted by key.
The same sequence of records therefore always produces the same final
hash, which is what the run-determinism and mode-equivalence checks
compare.

On-disk block layout (repeated per block, no file header):

    index(8 BE) || prev_hash(32) || payload_len(4 BE) || payload || hash(32)
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import CorruptJournal

ZERO_HASH = bytes(32)

SYSTEM_ACTOR = "SYSTEM"


class EventKind(str, Enum):
    TRANSFER = "Transfer"
    APPROVAL = "Approval"
    BURN = "Burn"
    LOCK = "Lock"
    RELEASE = "Release"
    STATE_TRANSITION = "StateTransition"
    VALUATION = "Valuation"
    SETTLEMENT = "Settlement"
    TERMINATION = "Termination"


class Clock:
    """Simulated integer clock; time only moves forward."""

    def __init__(self, start: int = 0):
        self._tick = start

    def now(self) -> int:
        return self._tick

    def advance_to(self, tick: int) -> None:
        if tick < self._tick:
            raise ValueError(f"clock cannot move backwards: {self._tick} -> {tick}")
        self._tick = tick


def _pack_str(s: str) -> bytes:
    data = s.encode("utf-8")
    return struct.pack(">I", len(data)) + data


def _unpack_str(buf: bytes, offset: int) -> tuple[str, int]:
    if offset + 4 > len(buf):
        raise CorruptJournal("truncated string length")
    (n,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    if offset + n > len(buf):
        raise CorruptJournal("truncated string data")
    return buf[offset:offset + n].decode("utf-8"), offset + n


@dataclass(frozen=True)
class EventRecord:
    """One journaled event: simulated timestamp, kind, acting account, details.

    `details` is held pre-sorted by key so serialization is canonical.
    """

    timestamp: int
    kind: EventKind
    actor: str
    details: tuple[tuple[str, str], ...]

    @classmethod
    def create(cls, timestamp: int, kind: EventKind, actor: str, **details) -> "EventRecord":
        items = tuple(sorted((k, str(v)) for k, v in details.items()))
        return cls(timestamp=timestamp, kind=kind, actor=actor, details=items)

    def detail(self, key: str) -> str:
        for k, v in self.details:
            if k == key:
                return v
        raise KeyError(key)

    def to_bytes(self) -> bytes:
        parts = [struct.pack(">Q", self.timestamp), _pack_str(self.kind.value), _pack_str(self.actor)]
        parts.append(struct.pack(">I", len(self.details)))
        for k, v in self.details:
            parts.append(_pack_str(k))
            parts.append(_pack_str(v))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "EventRecord":
        if len(payload) < 8:
            raise CorruptJournal("truncated timestamp")
        (ts,) = struct.unpack_from(">Q", payload, 0)
        kind_s, off = _unpack_str(payload, 8)
        actor, off = _unpack_str(payload, off)
        if off + 4 > len(payload):
            raise CorruptJournal("truncated detail count")
        (n,) = struct.unpack_from(">I", payload, off)
        off += 4
        details = []
        for _ in range(n):
            k, off = _unpack_str(payload, off)
            v, off = _unpack_str(payload, off)
            details.append((k, v))
        if off != len(payload):
            raise CorruptJournal("trailing bytes in record payload")
        try:
            kind = EventKind(kind_s)
        except ValueError as exc:
            raise CorruptJournal(f"unknown event kind {kind_s!r}") from exc
        return cls(timestamp=ts, kind=kind, actor=actor, details=tuple(details))


def block_hash(index: int, prev_hash: bytes, payload: bytes) -> bytes:
    return hashlib.sha256(struct.pack(">Q", index) + prev_hash + payload).digest()


@dataclass(frozen=True)
class JournalBlock:
    index: int
    prev_hash: bytes
    payload: bytes
    hash: bytes


class Journal:
    """Single-writer block chain of EventRecords."""

    def __init__(self):
        self._blocks: list[JournalBlock] = []

    def __len__(self) -> int:
        return len(self._blocks)

    @property
    def blocks(self) -> list[JournalBlock]:
        return list(self._blocks)

    def append(self, record: EventRecord) -> JournalBlock:
        payload = record.to_bytes()
        index = len(self._blocks)
        prev = self._blocks[-1].hash if self._blocks else ZERO_HASH
        block = JournalBlock(index=index, prev_hash=prev, payload=payload,
                             hash=block_hash(index, prev, payload))
        self._blocks.append(block)
        return block

    def verify(self) -> bool:
        prev = ZERO_HASH
        for i, block in enumerate(self._blocks):
            if block.index != i or block.prev_hash != prev:
                return False
            if block_hash(block.index, block.prev_hash, block.payload) != block.hash:
                return False
            prev = block.hash
        return True

    def final_hash(self) -> bytes:
        return self._blocks[-1].hash if self._blocks else ZERO_HASH

    def records(self) -> list[EventRecord]:
        return [EventRecord.from_bytes(b.payload) for b in self._blocks]

    def export(self, path: str | Path) -> None:
        """Write all blocks to `path` atomically (temp file + rename)."""
        out = bytearray()
        for b in self._blocks:
            out += struct.pack(">Q", b.index)
            out += b.prev_hash
            out += struct.pack(">I", len(b.payload))
            out += b.payload
            out += b.hash
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(bytes(out))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "Journal":
        """Read a journal file back; raises CorruptJournal if the file is
        truncated, malformed or fails chain verification."""
        data = Path(path).read_bytes()
        journal = cls()
        off = 0
        while off < len(data):
            if off + 8 + 32 + 4 > len(data):
                raise CorruptJournal("truncated block header")
            (index,) = struct.unpack_from(">Q", data, off)
            off += 8
            prev = data[off:off + 32]
            off += 32
            (plen,) = struct.unpack_from(">I", data, off)
            off += 4
            if off + plen + 32 > len(data):
                raise CorruptJournal("truncated block body")
            payload = data[off:off + plen]
            off += plen
            digest = data[off:off + 32]
            off += 32
            journal._blocks.append(JournalBlock(index=index, prev_hash=prev,
                                                payload=payload, hash=digest))
        if not journal.verify():
            raise CorruptJournal("chain verification failed")
        for block in journal._blocks:
            EventRecord.from_bytes(block.payload)  # payloads must decode
        return journal
