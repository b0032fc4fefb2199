"""Functional model of the unified-memory fabric.

One DRAM array shared by every initiator, an isolated NPU SRAM, and an
SMMU that filters each transaction by stream ID.  No timing lives here.

Response rules:

* address not backed by DRAM or SRAM -> ``DECERR``
* backed, but the policy has no entry granting (stream, op) -> ``SLVERR``
* SMMU without an installed policy runs in bypass and permits everything
  that is mapped (the misconfigured-firmware case)
* with tag enforcement on, a restricted-tag SRAM additionally refuses every
  stream except the NPU one, independent of the SMMU
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

from .crypto import LINE_BYTES
from .errors import AlreadyLocked, Misaligned, NormalWorldDenied, PolicyError
from .profiles import PlatformProfile

DEFAULT_DRAM_BASE = 0x8000_0000
DEFAULT_SRAM_BASE = 0x4000_0000


class BusStatus(str, enum.Enum):
    OKAY = "OKAY"
    SLVERR = "SLVERR"
    DECERR = "DECERR"


@dataclass(frozen=True)
class BusResponse:
    status: BusStatus
    payload: bytes | None = None

    def __post_init__(self):
        if self.status is not BusStatus.OKAY and self.payload is not None:
            raise ValueError("error responses carry no payload")

    @property
    def ok(self) -> bool:
        return self.status is BusStatus.OKAY


@dataclass(frozen=True)
class StreamId:
    id: int
    role: str


CPU = StreamId(0, "cpu")
NPU_DMA = StreamId(1, "npu-dma")
ROGUE = StreamId(2, "rogue-peripheral")
DEFAULT_STREAMS = (CPU, NPU_DMA, ROGUE)


@dataclass(frozen=True)
class SmmuEntry:
    stream_id: int
    start: int
    end: int  # exclusive
    ops: frozenset[str] = frozenset({"r", "w"})

    def covers(self, start: int, end: int) -> bool:
        return self.start <= start and end <= self.end


@dataclass(frozen=True)
class SmmuPolicy:
    entries: tuple[SmmuEntry, ...]
    locked: bool = False

    def permits(self, stream_id: int, op: str, start: int, end: int) -> bool:
        return any(
            e.stream_id == stream_id and op in e.ops and e.covers(start, end) for e in self.entries
        )

    def to_dict(self) -> dict:
        return {
            "locked": self.locked,
            "entries": [
                {"stream_id": e.stream_id, "start": e.start, "end": e.end, "ops": sorted(e.ops)}
                for e in self.entries
            ],
        }


@dataclass
class DramImage:
    base_addr: int
    contents: bytearray
    logical_len: int = 0
    # (start, end) physical range holding packed ciphertext, if any
    weight_region: tuple[int, int] | None = None

    @property
    def end(self) -> int:
        return self.base_addr + len(self.contents)


@dataclass
class SramRegion:
    base_addr: int
    size: int
    contents: bytearray = field(init=False)
    restricted_tag: bool = False

    def __post_init__(self):
        if self.size <= 0 or self.size % LINE_BYTES:
            raise ValueError("SRAM size must be a positive multiple of the line size")
        self.contents = bytearray(self.size)

    @property
    def end(self) -> int:
        return self.base_addr + self.size

    def is_zero(self) -> bool:
        return not any(self.contents)


class MemoryFabric:
    def __init__(
        self,
        profile: PlatformProfile,
        dram_size: int = 1 << 20,
        dram_base: int = DEFAULT_DRAM_BASE,
        sram_base: int = DEFAULT_SRAM_BASE,
        sram_size: int | None = None,
        streams: tuple[StreamId, ...] = DEFAULT_STREAMS,
        tag_enforcement: bool = False,
    ):
        ids = [s.id for s in streams]
        if len(set(ids)) != len(ids):
            raise ValueError("stream ids must be unique within a fabric")
        self.profile = profile
        self.streams = streams
        self.npu = next(s for s in streams if s.role == "npu-dma")
        self.dram = DramImage(dram_base, bytearray(dram_size))
        self.sram = SramRegion(sram_base, sram_size if sram_size is not None else profile.sram_size)
        if _overlaps(self.dram.base_addr, self.dram.end, self.sram.base_addr, self.sram.end):
            raise ValueError("DRAM and SRAM windows overlap")
        self.policy: SmmuPolicy | None = None
        self.tag_enforcement = tag_enforcement

    @property
    def locked(self) -> bool:
        return self.policy is not None and self.policy.locked

    def standard_policy(self, locked: bool = True) -> SmmuPolicy:
        """DRAM shared by all streams; SRAM granted to the NPU stream only."""
        entries = [SmmuEntry(s.id, self.dram.base_addr, self.dram.end) for s in self.streams]
        entries.append(SmmuEntry(self.npu.id, self.sram.base_addr, self.sram.end))
        return SmmuPolicy(tuple(entries), locked=locked)

    def _region(self, addr: int, length: int):
        last = addr + length - 1
        for region in (self.dram, self.sram):
            inside_first = region.base_addr <= addr < region.end
            inside_last = region.base_addr <= last < region.end
            if inside_first and inside_last:
                return region
            if inside_first or inside_last:
                raise Misaligned(f"transaction {addr:#x}+{length} straddles a region boundary")
        return None

    def _permitted(self, initiator: StreamId, op: str, region, addr: int, length: int) -> bool:
        if region is self.sram and self.tag_enforcement and self.sram.restricted_tag:
            if initiator.id != self.npu.id:
                return False
        if self.policy is None:
            return True
        first = addr - addr % LINE_BYTES
        verdicts = {
            self.policy.permits(initiator.id, op, line, line + LINE_BYTES)
            for line in range(first, addr + length, LINE_BYTES)
        }
        if len(verdicts) > 1:
            raise Misaligned(f"transaction {addr:#x}+{length} straddles a permission boundary")
        return verdicts.pop()

    def _access(self, initiator: StreamId, op: str, addr: int, length: int):
        if length <= 0:
            raise ValueError("bus transactions need a positive length")
        region = self._region(addr, length)
        if region is None:
            return None, BusResponse(BusStatus.DECERR)
        if not self._permitted(initiator, op, region, addr, length):
            return None, BusResponse(BusStatus.SLVERR)
        return region, None

    def load_dram(self, addr: int, data: bytes) -> None:
        """Place bytes in DRAM outside the bus model (image loading)."""
        off = addr - self.dram.base_addr
        if off < 0 or off + len(data) > len(self.dram.contents):
            raise ValueError("data does not fit in DRAM")
        self.dram.contents[off : off + len(data)] = data


def _overlaps(a0: int, a1: int, b0: int, b1: int) -> bool:
    return a0 < b1 and b0 < a1


def bus_read(fabric: MemoryFabric, initiator: StreamId, addr: int, length: int) -> BusResponse:
    region, err = fabric._access(initiator, "r", addr, length)
    if err is not None:
        return err
    off = addr - region.base_addr
    return BusResponse(BusStatus.OKAY, bytes(region.contents[off : off + length]))


def bus_write(fabric: MemoryFabric, initiator: StreamId, addr: int, data: bytes) -> BusResponse:
    region, err = fabric._access(initiator, "w", addr, len(data))
    if err is not None:
        return err
    off = addr - region.base_addr
    region.contents[off : off + len(data)] = data
    return BusResponse(BusStatus.OKAY)


def configure_smmu(fabric: MemoryFabric, caller_is_secure_world: bool, policy: SmmuPolicy) -> None:
    if not caller_is_secure_world:
        raise NormalWorldDenied("SMMU configuration is only writable from the secure world")
    if fabric.locked:
        raise AlreadyLocked("SMMU configuration is locked")
    owners = {
        e.stream_id
        for e in policy.entries
        if _overlaps(e.start, e.end, fabric.sram.base_addr, fabric.sram.end)
    }
    if len(owners) > 1:
        raise PolicyError(f"protected SRAM is mapped to several streams: {sorted(owners)}")
    fabric.policy = policy


def lock_smmu(fabric: MemoryFabric, caller_is_secure_world: bool) -> None:
    if not caller_is_secure_world:
        raise NormalWorldDenied("SMMU lock is only reachable from the secure world")
    if fabric.policy is None:
        raise PolicyError("nothing to lock: no policy installed")
    if not fabric.locked:
        fabric.policy = SmmuPolicy(fabric.policy.entries, locked=True)


def scrub_sram(fabric: MemoryFabric) -> float:
    """Hardware scrub engine: zero all SRAM, return the fill time in ns.

    This is the privileged control path; bus masters cannot reach it.
    """
    fabric.sram.contents[:] = bytes(fabric.sram.size)
    return scrub_duration_ns(fabric.sram.size, fabric.profile.sram_bw)


def scrub_duration_ns(size: int, sram_bw: float) -> float:
    return size / sram_bw * 1e9


def dump_snapshot(fabric: MemoryFabric, prefix: str | Path) -> tuple[Path, Path]:
    """Write DRAM then SRAM as one flat binary plus a JSON map of it."""
    prefix = Path(prefix)
    bin_path = prefix.with_suffix(".bin")
    meta_path = prefix.with_suffix(".json")
    bin_path.write_bytes(bytes(fabric.dram.contents) + bytes(fabric.sram.contents))
    meta = {
        "regions": [
            {"name": "dram", "base": fabric.dram.base_addr, "size": len(fabric.dram.contents), "file_offset": 0},
            {
                "name": "sram",
                "base": fabric.sram.base_addr,
                "size": fabric.sram.size,
                "file_offset": len(fabric.dram.contents),
                "restricted_tag": fabric.sram.restricted_tag,
            },
        ],
        "weight_region": list(fabric.dram.weight_region) if fabric.dram.weight_region else None,
        "streams": [{"id": s.id, "role": s.role} for s in fabric.streams],
        "policy": fabric.policy.to_dict() if fabric.policy else None,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bin_path, meta_path
