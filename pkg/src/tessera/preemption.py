"""Preemption hook and resume path for an inference streaming through the ICE.

A context walks its tile schedule line by line.  Up to ``inflight_depth``
lines can be issued on the bus but not yet written to SRAM; preemption
stops issue, drains those lines, has the scrub engine zero SRAM, clears
the ICE registers, and only then lets the OS switch.  Resume re-arms the
ICE through the enclave and restarts the interrupted tile from its first
line.

A tile counts as delivered once its last line has been written; that is
when the NPU consumes it.  ``delivered`` is therefore the output that must
match an uninterrupted run.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .crypto import LINE_BYTES, xor_bytes
from .errors import IceNotProvisioned, InvalidTransition, NotRunning
from .fabric import NPU_DMA, MemoryFabric, bus_read, bus_write, scrub_sram
from .keys import AppIdentity, EnclaveState, IceRegisters, KeyBlob, unseal_and_provision
from .pipeline import IceEngine, StreamReport, TileDescriptor


class PreemptState(str, enum.Enum):
    RUNNING = "Running"
    DMA_STOPPED = "DmaStopped"
    DRAINED = "Drained"
    SCRUBBED = "Scrubbed"
    KEYS_CLEARED = "KeysCleared"
    SWITCHED = "Switched"
    REPROVISIONED = "Reprovisioned"
    RESTARTED = "Restarted"


_NEXT = {
    PreemptState.RUNNING: PreemptState.DMA_STOPPED,
    PreemptState.DMA_STOPPED: PreemptState.DRAINED,
    PreemptState.DRAINED: PreemptState.SCRUBBED,
    PreemptState.SCRUBBED: PreemptState.KEYS_CLEARED,
    PreemptState.KEYS_CLEARED: PreemptState.SWITCHED,
    PreemptState.SWITCHED: PreemptState.REPROVISIONED,
    PreemptState.REPROVISIONED: PreemptState.RESTARTED,
    PreemptState.RESTARTED: PreemptState.RUNNING,
}


@dataclass
class PreemptReport:
    duration_ns: float
    sram_zeroed: bool
    keys_cleared: bool
    resumed_tile_index: int


def preempt_latency(sram_size: float, sram_bw: float, t_save_ns: float) -> float:
    """SRAM zero-fill time plus fixed save/switch cost, in ns."""
    if sram_size < 0 or t_save_ns < 0 or sram_bw <= 0:
        raise ValueError("SRAM size and save time must be non-negative, bandwidth positive")
    return sram_size / sram_bw * 1e9 + t_save_ns


class InferenceContext:
    def __init__(self, fabric: MemoryFabric, ice: IceRegisters, tiles: list[TileDescriptor],
                 inflight_depth: int = 4):
        if inflight_depth < 0:
            raise ValueError("inflight_depth must be non-negative")
        self.fabric = fabric
        self.ice = ice
        self.tiles = list(tiles)
        self.engine = IceEngine(fabric, ice)
        self.slots = self.engine.sram_slots(self.tiles)
        self.inflight_depth = inflight_depth
        self.state = PreemptState.RUNNING
        self.tile_index = 0
        self.line_index = 0
        self.inflight: deque[tuple[int, int, bytes]] = deque()
        self.delivered: list[bytes] = []
        self.report = StreamReport()
        self.clock_ns = 0.0
        self.log: list[dict] = [{"t_ns": 0.0, "state": self.state.value}]
        self._keystream: bytes | None = None

    # -- state machine -------------------------------------------------
    def _advance(self, expected: PreemptState, **extra) -> None:
        if _NEXT[self.state] is not expected:
            raise InvalidTransition(f"{self.state.value} -> {expected.value} is not allowed")
        self.state = expected
        self.log.append({"t_ns": round(self.clock_ns, 3), "state": expected.value, **extra})

    @property
    def done(self) -> bool:
        return self.tile_index >= len(self.tiles) and not self.inflight

    @property
    def issuing(self) -> bool:
        return self.state is PreemptState.RUNNING and self.tile_index < len(self.tiles)

    # -- datapath --------------------------------------------------------
    def _issue(self) -> None:
        tile = self.tiles[self.tile_index]
        if self.line_index == 0 or self._keystream is None:
            self._keystream = self.engine.tile_keystream(tile)
        addr = tile.base + self.line_index * LINE_BYTES
        resp = bus_read(self.fabric, NPU_DMA, addr, LINE_BYTES)
        if not resp.ok:
            self.report.errors.append({"tile": tile.label, "addr": addr, "op": "read", "status": resp.status.value})
            payload = bytes(LINE_BYTES)
        else:
            self.report.bytes_fetched += LINE_BYTES
            payload = resp.payload
        ks = self._keystream[self.line_index * LINE_BYTES : (self.line_index + 1) * LINE_BYTES]
        self.inflight.append((self.tile_index, self.line_index, xor_bytes(payload, ks)))
        self.clock_ns += self.fabric.profile.line_interval_ns
        self.line_index += 1
        if self.line_index == tile.n_lines:
            self.tile_index += 1
            self.line_index = 0
            self._keystream = None

    def _retire(self) -> None:
        t, j, plain = self.inflight.popleft()
        tile = self.tiles[t]
        resp = bus_write(self.fabric, NPU_DMA, self.slots[t] + j * LINE_BYTES, plain)
        if not resp.ok:
            self.report.errors.append({"tile": tile.label, "op": "write", "status": resp.status.value})
            return
        self.report.lines_processed += 1
        if j == tile.n_lines - 1:
            got = bus_read(self.fabric, NPU_DMA, self.slots[t], tile.fetched_bytes)
            self.delivered.append(got.payload[: tile.length])

    def step(self) -> bool:
        """Issue one line (and retire the oldest beyond the window)."""
        if not self.issuing:
            return False
        if not self.ice.armed:
            raise IceNotProvisioned("ICE key register is empty")
        self._issue()
        while len(self.inflight) > self.inflight_depth:
            self._retire()
        return True

    def run(self, max_lines: int | None = None) -> int:
        """Issue up to ``max_lines`` lines; drain completely once the schedule ends."""
        issued = 0
        while self.issuing and (max_lines is None or issued < max_lines):
            self.step()
            issued += 1
        if self.state is PreemptState.RUNNING and self.tile_index >= len(self.tiles):
            while self.inflight:
                self._retire()
        return issued

    # -- preemption hook -------------------------------------------------
    def preempt(self) -> PreemptReport:
        if self.state is not PreemptState.RUNNING:
            raise NotRunning(f"cannot preempt a context in state {self.state.value}")
        start = self.clock_ns
        self._advance(PreemptState.DMA_STOPPED)
        while self.inflight:
            self._retire()
        self._advance(PreemptState.DRAINED)
        scrub_ns = scrub_sram(self.fabric)
        self.clock_ns += scrub_ns
        self._advance(PreemptState.SCRUBBED, sram_zero=self.fabric.sram.is_zero())
        self.ice.clear()
        self._keystream = None
        self._advance(PreemptState.KEYS_CLEARED, ice_zero=self.ice.is_zero())
        duration = preempt_latency(self.fabric.sram.size, self.fabric.profile.sram_bw, self.fabric.profile.t_save_ns)
        self.clock_ns = start + duration
        self._advance(PreemptState.SWITCHED)
        return PreemptReport(
            duration_ns=duration,
            sram_zeroed=self.fabric.sram.is_zero(),
            keys_cleared=self.ice.is_zero(),
            resumed_tile_index=self.tile_index,
        )

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def preempt(context: InferenceContext) -> PreemptReport:
    return context.preempt()


def resume(context: InferenceContext, enclave: EnclaveState, blob: KeyBlob, caller: AppIdentity) -> None:
    """Re-arm the ICE and rewind to the start of the interrupted tile.

    A failed provisioning leaves the context Switched with the ICE empty.
    """
    if context.state is not PreemptState.SWITCHED:
        raise InvalidTransition(f"resume requires a Switched context, not {context.state.value}")
    unseal_and_provision(enclave, blob, caller, context.ice)
    context._advance(PreemptState.REPROVISIONED)
    # partial-tile progress was scrubbed; the whole tile comes back from DRAM
    context.line_index = 0
    context._keystream = None
    context._advance(PreemptState.RESTARTED, tile_index=context.tile_index)
    context._advance(PreemptState.RUNNING)


def scrub_preceded_switch(log: list[dict]) -> bool:
    """True iff every Switched record comes after an all-zero scrub record."""
    scrubbed = False
    for rec in log:
        if rec["state"] == PreemptState.SCRUBBED.value:
            scrubbed = bool(rec.get("sram_zero"))
        elif rec["state"] == PreemptState.SWITCHED.value:
            if not scrubbed:
                return False
            scrubbed = False
    return True
