"""Closed-form bandwidth, throughput, energy and area models.

Units: bytes, bytes/s, ns, joules internally; tables report the units in
their column names.  Model sizes quoted in MB are decimal (10**6 bytes).
Percentages are rounded half-up to one decimal.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal
from pathlib import Path

from .crypto import AES_BLOCK, LINE_BYTES
from .pipeline import fifo_high_water
from .preemption import preempt_latency
from .profiles import BUILTIN, PlatformProfile

PAGE_BYTES = 4096
AXI_BURST_BEATS = 128
XOR_PENALTY_CYCLES = 2


@dataclass(frozen=True)
class TileClass:
    label: str
    tile_bytes: int

    def __post_init__(self):
        if self.tile_bytes <= 0:
            raise ValueError("tile_bytes must be positive")


LAYER_TILES = (
    TileClass("Batch Norm", 128),
    TileClass("DW Conv 3x3", 288),
    TileClass("PW Conv (narrow)", 512),
    TileClass("Conv 3x3 (mid)", 1024),
    TileClass("PW Conv (wide)", 2048),
    TileClass("Conv/Attn/FC", 4096),
)


def round_half_up(x: float, places: int = 1) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def truncate(x: float, places: int = 1) -> float:
    """Energy figures are quoted truncated (28.08 mJ reads as 28.0)."""
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_DOWN))


def amplification(tile_bytes: int, mode: str = "tessera") -> float:
    if tile_bytes <= 0:
        raise ValueError("tile_bytes must be positive")
    if mode == "page":
        return float(math.ceil(PAGE_BYTES / tile_bytes))
    if mode == "tessera":
        return math.ceil(tile_bytes / LINE_BYTES) * LINE_BYTES / tile_bytes
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class Bandwidth:
    fraction: float  # of the unencrypted ceiling
    bytes_per_s: float

    @property
    def pct(self) -> float:
        return round_half_up(self.fraction * 100)


def crypto_factor(profile: PlatformProfile, mode: str, burst: int = AXI_BURST_BEATS,
                  xor_cycles: int = XOR_PENALTY_CYCLES) -> float:
    if mode == "baseline":
        return 1.0
    if mode == "direct":
        return profile.t_dram_ns / (profile.t_dram_ns + profile.t_ks_ns)
    if mode == "tessera":
        return burst / (burst + xor_cycles)
    raise ValueError(f"unknown mode {mode!r}")


def effective_bandwidth(profile: PlatformProfile, mode: str, tile_bytes: int | None = None,
                        granularity: str = "tessera", amp: float | None = None) -> Bandwidth:
    """Throughput after fetch amplification and exposed crypto latency.

    ``granularity`` picks how ``tile_bytes`` is amplified (``tessera`` for
    line-granular fetch, ``page`` for 4 KiB pages); ``amp`` overrides it.
    """
    if amp is None:
        amp = 1.0 if tile_bytes is None else amplification(tile_bytes, granularity)
    if amp < 1:
        raise ValueError("amplification cannot be below 1")
    frac = crypto_factor(profile, mode) / amp
    return Bandwidth(frac, profile.bw_ceiling * frac)


@dataclass(frozen=True)
class EnergyParams:
    model_bytes: float
    load_bw: float
    dram_pj_per_byte: float = 120.0
    ice_power_w: float = 0.090

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be positive")


@dataclass(frozen=True)
class Energy:
    dram_mj: float
    ice_mj: float
    load_time_ms: float

    @property
    def total_mj(self) -> float:
        return self.dram_mj + self.ice_mj


def inference_energy(params: EnergyParams, amp: float, include_ice: bool = True) -> Energy:
    dram_j = params.model_bytes * amp * params.dram_pj_per_byte * 1e-12
    load_s = params.model_bytes / params.load_bw
    ice_j = params.ice_power_w * load_s if include_ice else 0.0
    return Energy(dram_j * 1e3, ice_j * 1e3, load_s * 1e3)


@dataclass(frozen=True)
class PpaParams:
    gate_equivalents: float = 100_000
    um2_per_ge: float = 0.4
    pj_per_bit: float = 0.5


@dataclass(frozen=True)
class Ppa:
    area_mm2: float
    power_w: float
    aes_blocks_per_s: float


def ppa(params: PpaParams, throughput_bps: float) -> Ppa:
    """Area, power and AES rate for a core sustaining ``throughput_bps`` bytes/s."""
    if throughput_bps <= 0:
        raise ValueError("throughput must be positive")
    area_um2 = params.gate_equivalents * params.um2_per_ge
    power = throughput_bps * 8 * params.pj_per_bit * 1e-12
    return Ppa(area_um2 * 1e-6, power, throughput_bps / AES_BLOCK)


# -- tables ---------------------------------------------------------------

RESNET18_BYTES = 46.8e6
PAGE_LEVEL_AMP = 5.0


def preempt_rows(profiles=None) -> list[dict]:
    rows = []
    for p in (profiles or BUILTIN.values()):
        t = preempt_latency(p.sram_size, p.sram_bw, p.t_save_ns)
        rows.append({
            "platform": p.name,
            "sram_bytes": p.sram_size,
            "sram_bw_gbps": p.sram_bw / 1e9,
            "t_save_us": p.t_save_ns / 1e3,
            "t_preempt_us": round(t / 1e3, 4),
            "t_preempt_us_rounded": round_half_up(t / 1e3),
            "under_scheduler_floor": t < 100_000,
        })
    return rows


def throughput_rows(profiles=None) -> list[dict]:
    rows = []
    for p in (profiles or BUILTIN.values()):
        direct = effective_bandwidth(p, "direct")
        tess = effective_bandwidth(p, "tessera")
        rows.append({
            "platform": p.name,
            "t_ks_ns": p.t_ks_ns,
            "t_dram_ns": p.t_dram_ns,
            "slack_ns": round(p.slack_ns, 4),
            "baseline_pct": 100.0,
            "direct_pct": direct.pct,
            "tessera_pct": tess.pct,
            "direct_frac": round(direct.fraction, 6),
            "tessera_frac": round(tess.fraction, 6),
            "tessera_gbps": round(tess.bytes_per_s / 1e9, 4),
        })
    return rows


def amplification_rows(tiles=LAYER_TILES) -> list[dict]:
    return [
        {"layer": t.label, "tile_bytes": t.tile_bytes,
         "page_amp": int(amplification(t.tile_bytes, "page")),
         "tessera_amp": round(amplification(t.tile_bytes, "tessera"), 6)}
        for t in tiles
    ]


def energy_rows(profile: PlatformProfile = BUILTIN["i9"], model_bytes: float = RESNET18_BYTES) -> list[dict]:
    load_bw = effective_bandwidth(profile, "tessera").bytes_per_s
    params = EnergyParams(model_bytes=model_bytes, load_bw=load_bw)
    page = inference_energy(params, PAGE_LEVEL_AMP, include_ice=False)
    line = inference_energy(params, 1.0)
    little = fifo_high_water(profile, 100.0)
    chip = ppa(PpaParams(), profile.bw_ceiling)
    return [
        {"quantity": "page_level_dram_mj", "value": round(page.dram_mj, 4), "reported": truncate(page.dram_mj)},
        {"quantity": "tessera_dram_mj", "value": round(line.dram_mj, 4), "reported": truncate(line.dram_mj)},
        {"quantity": "tessera_ice_mj", "value": round(line.ice_mj, 4), "reported": truncate(line.ice_mj, 2)},
        {"quantity": "load_time_ms", "value": round(line.load_time_ms, 4), "reported": round_half_up(line.load_time_ms, 2)},
        {"quantity": "net_saving_mj", "value": round(page.total_mj - line.total_mj, 4),
         "reported": truncate(page.total_mj - line.total_mj)},
        {"quantity": "fifo_little_bytes", "value": round(little, 4), "reported": round(little)},
        {"quantity": "ice_area_mm2", "value": round(chip.area_mm2, 6), "reported": round_half_up(chip.area_mm2, 2)},
        {"quantity": "ice_power_mw", "value": round(chip.power_w * 1e3, 4), "reported": round_half_up(chip.power_w * 1e3)},
        {"quantity": "aes_blocks_per_s", "value": chip.aes_blocks_per_s, "reported": chip.aes_blocks_per_s},
    ]


TABLES = {
    "preempt_latency": preempt_rows,
    "throughput": throughput_rows,
    "amplification": amplification_rows,
    "energy_summary": energy_rows,
}


def all_tables() -> dict[str, list[dict]]:
    return {name: fn() for name, fn in TABLES.items()}


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def emit_tables(out_dir: str | Path, as_json: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in all_tables().items():
        path = out / f"{name}.csv"
        path.write_text(rows_to_csv(rows))
        written.append(path)
        if as_json:
            jpath = out / f"{name}.json"
            jpath.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
            written.append(jpath)
    return written


def schedule_report(entries, profile: PlatformProfile = BUILTIN["i9"],
                    dram_pj_per_byte: float = 120.0) -> dict:
    """Traffic and DRAM energy for a tile schedule under both fetch granularities."""
    rows = []
    logical = page = line = 0
    for e in entries:
        need = e.tile_bytes * e.count
        p = amplification(e.tile_bytes, "page") * need
        t = math.ceil(e.tile_bytes / LINE_BYTES) * LINE_BYTES * e.count
        logical, page, line = logical + need, page + p, line + t
        rows.append({"name": e.name, "tile_bytes": e.tile_bytes, "count": e.count,
                     "page_amp": amplification(e.tile_bytes, "page"),
                     "tessera_amp": round(amplification(e.tile_bytes, "tessera"), 6)})
    page_amp = page / logical
    line_amp = line / logical
    return {
        "profile": profile.name,
        "entries": rows,
        "logical_bytes": logical,
        "page_bytes": page,
        "tessera_bytes": line,
        "page_amp": round(page_amp, 6),
        "tessera_amp": round(line_amp, 6),
        "page_dram_mj": round(page * dram_pj_per_byte * 1e-9, 6),
        "tessera_dram_mj": round(line * dram_pj_per_byte * 1e-9, 6),
        "page_gbps": round(effective_bandwidth(profile, "baseline", amp=page_amp).bytes_per_s / 1e9, 4),
        "tessera_gbps": round(effective_bandwidth(profile, "tessera", amp=line_amp).bytes_per_s / 1e9, 4),
    }
