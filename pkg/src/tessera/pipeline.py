"""Timed ICE datapath: per-line latency, DMA tile streaming, jitter study.

Jitter model
------------
Request ``i`` issues at ``i * 64 / bw_ceiling``.  Its keystream latency and
DRAM latency are independent normals around the profile means (standard
deviations given as fractions of the mean), each clamped below at 5 % of
its mean.  A stall is a request whose keystream is still in flight when
its ciphertext lands.  FIFO occupancy counts requests whose keystream is
ready while their ciphertext is still pending.

All event times are integer picoseconds.  Randomness comes from numpy's
PCG64 bit generator seeded with the 64-bit ``seed``: the first ``n``
standard normals drive the keystream latencies and the next ``n`` drive
the DRAM latencies, so changing a sigma with a fixed seed reuses the same
underlying draws.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .crypto import LINE_BYTES, range_keystream, xor_bytes
from .errors import IceNotProvisioned
from .fabric import MemoryFabric, NPU_DMA, bus_read, bus_write
from .keys import IceRegisters
from .profiles import PlatformProfile

ICE_CLOCK_HZ = 1.4e9
T_ADDR_CYCLES = 1
T_XOR_CYCLES = 2
PROVISIONED_FIFO_BYTES = 4096
MODES = ("tessera", "direct", "plaintext")


def cycles_ns(cycles: float, clock_hz: float = ICE_CLOCK_HZ) -> float:
    return cycles / clock_hz * 1e9


def line_latency(profile: PlatformProfile, mode: str = "tessera", *, t_addr_ns: float | None = None,
                 t_xor_ns: float | None = None) -> float:
    """Latency of one 64-byte line in ns.

    ``tessera`` overlaps keystream generation with the line transfer,
    ``direct`` decrypts only after the data arrives, ``plaintext`` has no
    crypto at all.
    """
    t_addr = cycles_ns(T_ADDR_CYCLES) if t_addr_ns is None else t_addr_ns
    t_xor = cycles_ns(T_XOR_CYCLES) if t_xor_ns is None else t_xor_ns
    fetch = LINE_BYTES / profile.bw_ceiling * 1e9
    if mode == "tessera":
        return t_addr + max(profile.t_ks_ns, fetch) + t_xor
    if mode == "direct":
        return t_addr + fetch + profile.t_ks_ns
    if mode == "plaintext":
        return fetch
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def fifo_high_water(profile_or_bw, worst_latency_ns: float) -> float:
    """Little's law: bytes in flight = bandwidth x latency."""
    bw = profile_or_bw.bw_ceiling if isinstance(profile_or_bw, PlatformProfile) else float(profile_or_bw)
    if bw < 0 or worst_latency_ns < 0:
        raise ValueError("bandwidth and latency must be non-negative")
    return bw * worst_latency_ns * 1e-9


@dataclass(frozen=True)
class TileDescriptor:
    base: int
    length: int
    label: str = ""

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("tile length must be positive")
        if self.base % LINE_BYTES:
            raise ValueError(f"tile {self.label!r} base {self.base:#x} is not line aligned")

    @property
    def n_lines(self) -> int:
        return math.ceil(self.length / LINE_BYTES)

    @property
    def fetched_bytes(self) -> int:
        return self.n_lines * LINE_BYTES


@dataclass
class StreamReport:
    lines_processed: int = 0
    bytes_fetched: int = 0
    errors: list[dict] = field(default_factory=list)
    placements: list[dict] = field(default_factory=list)


class IceEngine:
    """Fetch-decrypt-place datapath bound to one fabric and one set of ICE registers.

    Tiles land in SRAM back to back from the SRAM base; a tile that would
    run past the end of SRAM starts again at offset 0.
    """

    def __init__(self, fabric: MemoryFabric, ice: IceRegisters):
        self.fabric = fabric
        self.ice = ice

    def sram_slots(self, tiles: Iterable[TileDescriptor]) -> list[int]:
        slots, cursor = [], 0
        for t in tiles:
            if t.fetched_bytes > self.fabric.sram.size:
                raise ValueError(f"tile {t.label!r} is larger than SRAM")
            if cursor + t.fetched_bytes > self.fabric.sram.size:
                cursor = 0
            slots.append(self.fabric.sram.base_addr + cursor)
            cursor += t.fetched_bytes
        return slots

    def tile_keystream(self, tile: TileDescriptor) -> bytes:
        if not self.ice.armed:
            raise IceNotProvisioned("ICE key register is empty")
        return range_keystream(self.ice.key, self.ice.iv(), tile.base, tile.n_lines)

    def process_line(self, tile: TileDescriptor, j: int, sram_addr: int, keystream: bytes,
                     report: StreamReport) -> bool:
        """Fetch, decrypt and place line ``j`` of ``tile``; False on a bus error."""
        addr = tile.base + j * LINE_BYTES
        resp = bus_read(self.fabric, NPU_DMA, addr, LINE_BYTES)
        report.bytes_fetched += LINE_BYTES if resp.ok else 0
        if not resp.ok:
            report.errors.append({"tile": tile.label, "addr": addr, "op": "read", "status": resp.status.value})
            return False
        ks = keystream[j * LINE_BYTES : (j + 1) * LINE_BYTES]
        out = bus_write(self.fabric, NPU_DMA, sram_addr + j * LINE_BYTES, xor_bytes(resp.payload, ks))
        if not out.ok:
            report.errors.append({"tile": tile.label, "addr": addr, "op": "write", "status": out.status.value})
            return False
        report.lines_processed += 1
        return True


def stream_decrypt(fabric: MemoryFabric, ice: IceRegisters, tiles: list[TileDescriptor]) -> StreamReport:
    if not ice.armed:
        raise IceNotProvisioned("ICE key register is empty")
    engine = IceEngine(fabric, ice)
    report = StreamReport()
    for tile, slot in zip(tiles, engine.sram_slots(tiles)):
        ks = engine.tile_keystream(tile)
        for j in range(tile.n_lines):
            engine.process_line(tile, j, slot, ks, report)
        report.placements.append({"tile": tile.label, "sram_addr": slot, "lines": tile.n_lines})
    return report


@dataclass(frozen=True)
class JitterParams:
    sigma_ks_frac: float = 0.1
    sigma_dram_frac: float = 0.2
    n_requests: int = 100_000
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_ks_frac", "sigma_dram_frac"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.n_requests < 1:
            raise ValueError("n_requests must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class SimStats:
    profile: str
    seed: int
    n_requests: int
    sigma_ks_frac: float
    sigma_dram_frac: float
    stall_count: int
    stall_probability: float
    max_fifo_occupancy_lines: int
    max_fifo_occupancy_bytes: int
    mean_line_latency_ns: float
    effective_bw_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


CSV_HEADER = ("profile", "seed", "n", "sigma_ks", "sigma_dram", "stalls", "stall_prob",
              "max_occ_lines", "max_occ_bytes")


def _latency_ps(mean_ns: float, frac: float, z: np.ndarray) -> np.ndarray:
    samples = np.maximum(mean_ns + frac * mean_ns * z, 0.05 * mean_ns)
    return np.rint(samples * 1000).astype(np.int64)


def simulate_jitter(profile: PlatformProfile, jitter: JitterParams = JitterParams()) -> SimStats:
    n = jitter.n_requests
    rng = np.random.Generator(np.random.PCG64(jitter.seed))
    z_ks = rng.standard_normal(n)
    z_dram = rng.standard_normal(n)
    t_ks = _latency_ps(profile.t_ks_ns, jitter.sigma_ks_frac, z_ks)
    t_dram = _latency_ps(profile.t_dram_ns, jitter.sigma_dram_frac, z_dram)

    interval_ps = round(profile.line_interval_ns * 1000)
    issue = np.arange(n, dtype=np.int64) * interval_ps
    ks_ready = issue + t_ks
    arrival = issue + t_dram
    stalled = ks_ready > arrival
    stall_count = int(stalled.sum())

    # occupancy intervals [ks_ready, arrival); at equal timestamps departures go first
    waiting = ks_ready < arrival
    times = np.concatenate([ks_ready[waiting], arrival[waiting]])
    deltas = np.concatenate([np.ones(waiting.sum(), np.int64), -np.ones(waiting.sum(), np.int64)])
    order = np.lexsort((deltas, times))
    max_occ = int(np.cumsum(deltas[order]).max()) if times.size else 0

    stall_ps = np.where(stalled, ks_ready - arrival, 0).sum()
    span_ps = n * interval_ps
    done_ps = np.maximum(ks_ready, arrival) - issue
    mean_latency = float(done_ps.mean()) / 1000 + cycles_ns(T_ADDR_CYCLES) + cycles_ns(T_XOR_CYCLES)

    return SimStats(
        profile=profile.name,
        seed=jitter.seed,
        n_requests=n,
        sigma_ks_frac=jitter.sigma_ks_frac,
        sigma_dram_frac=jitter.sigma_dram_frac,
        stall_count=stall_count,
        stall_probability=stall_count / n,
        max_fifo_occupancy_lines=max_occ,
        max_fifo_occupancy_bytes=max_occ * LINE_BYTES,
        mean_line_latency_ns=mean_latency,
        effective_bw_fraction=float(span_ps / (span_ps + stall_ps)),
    )


def stats_csv(rows: Iterable[SimStats], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER)
    for s in rows:
        w.writerow([s.profile, s.seed, s.n_requests, s.sigma_ks_frac, s.sigma_dram_frac, s.stall_count,
                    f"{s.stall_probability:.6f}", s.max_fifo_occupancy_lines, s.max_fifo_occupancy_bytes])
    return buf.getvalue()
