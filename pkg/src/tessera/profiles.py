"""Platform profiles: measured latencies plus memory and SRAM geometry.

The latency pairs are the measured per-line keystream and DRAM latencies
for the three evaluated SoCs.  SRAM sizes are decimal megabytes; that is
the reading under which the preemption-latency table reproduces.

Only the i9 bandwidth ceiling (22.4 GB/s) is a measured figure.  The two
Jetson ceilings scale their nominal peaks (136.5 and 204.8 GB/s) by the
same measured/peak ratio the i9 shows against DDR5-4800 (22.4 / 76.8).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

GB = 1e9
MB = 1_000_000
DEFAULT_T_SAVE_NS = 1500.0
_MEASURED_OVER_PEAK = 22.4 / 76.8


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    t_ks_ns: float
    t_dram_ns: float
    memory_type: str
    bw_ceiling: float  # bytes/s
    sram_size: int  # bytes
    sram_bw: float  # bytes/s
    t_save_ns: float = DEFAULT_T_SAVE_NS

    def __post_init__(self):
        for f in ("t_ks_ns", "t_dram_ns", "bw_ceiling", "sram_size", "sram_bw"):
            if not getattr(self, f) > 0:
                raise ValueError(f"profile {self.name!r}: {f} must be positive")
        if self.t_save_ns < 0:
            raise ValueError(f"profile {self.name!r}: t_save_ns must be non-negative")

    @property
    def slack_ns(self) -> float:
        return self.t_dram_ns - self.t_ks_ns

    @property
    def line_interval_ns(self) -> float:
        return 64 / self.bw_ceiling * 1e9

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "PlatformProfile":
        return replace(self, **changes)


I9 = PlatformProfile(
    name="i9",
    t_ks_ns=4.2,
    t_dram_ns=71.6,
    memory_type="DDR5-4800",
    bw_ceiling=22.4 * GB,
    sram_size=2 * MB,
    sram_bw=512 * GB,
)
XAVIER = PlatformProfile(
    name="xavier",
    t_ks_ns=16.8,
    t_dram_ns=43.2,
    memory_type="LPDDR4x",
    bw_ceiling=round(136.5 * _MEASURED_OVER_PEAK, 1) * GB,
    sram_size=4 * MB,
    sram_bw=480 * GB,
)
ORIN = PlatformProfile(
    name="orin",
    t_ks_ns=12.1,
    t_dram_ns=38.7,
    memory_type="LPDDR5X",
    bw_ceiling=round(204.8 * _MEASURED_OVER_PEAK, 1) * GB,
    sram_size=4 * MB,
    sram_bw=960 * GB,
)

BUILTIN = {p.name: p for p in (I9, XAVIER, ORIN)}


def load_profile(spec: str | Path) -> PlatformProfile:
    """Resolve a built-in name or a path to a JSON profile document."""
    key = str(spec).lower()
    if key in BUILTIN:
        return BUILTIN[key]
    path = Path(spec)
    if not path.exists():
        raise ValueError(f"unknown profile {spec!r}: not a built-in ({', '.join(BUILTIN)}) or a file")
    return profile_from_dict(json.loads(path.read_text()))


def profile_from_dict(doc: dict) -> PlatformProfile:
    known = {f.name for f in fields(PlatformProfile)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown profile fields: {sorted(unknown)}")
    return PlatformProfile(**doc)
