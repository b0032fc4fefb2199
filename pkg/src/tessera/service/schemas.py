"""Request and response bodies for the HTTP API.

Binary payloads (plaintext, images, certificates) travel base64-encoded.
A profile is either a built-in name or a full profile document.
"""

from __future__ import annotations

from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


class ProfileDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    t_ks_ns: float = Field(gt=0)
    t_dram_ns: float = Field(gt=0)
    memory_type: str = "custom"
    bw_ceiling: float = Field(gt=0)
    sram_size: int = Field(gt=0)
    sram_bw: float = Field(gt=0)
    t_save_ns: float = Field(default=1500.0, ge=0)


ProfileRef = Union[str, ProfileDoc]


class ErrorBody(BaseModel):
    error: str
    exit_code: int
    detail: str


class KeygenRequest(BaseModel):
    bits: Literal[2048, 4096] = 2048
    overwrite: bool = False


class KeygenResponse(BaseModel):
    bits: int
    public_pem: str


class PackRequest(BaseModel):
    plaintext_b64: str
    device_pub_pem: str
    app_cert_b64: str
    base_addr: int = Field(default=0x8000_0000, ge=0)
    fixed_counter: bool = False
    insecure_demo: bool = False


class PackResponse(BaseModel):
    image_b64: str
    header: dict[str, Any]


class InspectRequest(BaseModel):
    image_b64: str


class JitterRequest(BaseModel):
    profile: ProfileRef = "xavier"
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    n_requests: int = Field(default=100_000, ge=1)
    sigma_ks_frac: float = Field(default=0.1, ge=0, lt=1)
    sigma_dram_frac: float = Field(default=0.2, ge=0, lt=1)


class SimStatsModel(BaseModel):
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


class JitterResponse(BaseModel):
    stats: list[SimStatsModel]
    csv: str


class StreamRequest(BaseModel):
    image_b64: str
    app_cert_b64: str
    profile: ProfileRef = "xavier"
    tile_bytes: int = Field(default=4096, ge=1)
    preempt_after_lines: Optional[int] = Field(default=None, ge=0)
    sram_size: Optional[int] = Field(default=None, gt=0)


class StreamResponse(BaseModel):
    profile: str
    tiles: int
    lines_processed: int
    bytes_fetched: int
    errors: list[dict[str, Any]]
    output_sha256: str
    preempt: Optional[dict[str, Any]] = None
    trace: list[dict[str, Any]] = Field(default_factory=list)
    line_latency_ns: dict[str, float]


class AttackRequest(BaseModel):
    scenario: str = "all"
    seed: int = 0
    profile: ProfileRef = "xavier"


class VerdictModel(BaseModel):
    scenario: str
    control: bool
    defended: bool
    evidence: dict[str, Any]


class AttackResponse(BaseModel):
    ok: bool
    verdicts: list[VerdictModel]


class ModelRequest(BaseModel):
    profile: ProfileRef = "i9"
    schedule: Optional[list[dict[str, Any]]] = None


class ModelResponse(BaseModel):
    profile: str
    direct_pct: float
    tessera_pct: float
    slack_ns: float
    preempt_us: float
    line_latency_ns: dict[str, float]
    fifo_high_water_bytes: float
    tables: dict[str, list[dict[str, Any]]]
    schedule: Optional[dict[str, Any]] = None
