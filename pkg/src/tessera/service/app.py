"""HTTP front end over the tessera core.

The service owns the simulated device: ``<device_dir>/device_pub.pem`` is
the public half anyone may read, ``<device_dir>/efuse/sk_dev.pem`` stands
in for the on-die fuses and is only ever read back into an
:class:`~tessera.keys.EnclaveState`.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__, attacks, perf
from ..errors import TesseraError
from ..fabric import MemoryFabric, configure_smmu
from ..image import fabric_dram_size, image_tiles, load_into_fabric, load_schedule, pack, parse
from ..keys import (
    AppIdentity,
    EnclaveState,
    IceRegisters,
    generate_device_identity,
    load_public_pem,
    public_pem,
    unseal_and_provision,
)
from ..pipeline import JitterParams, fifo_high_water, line_latency, simulate_jitter, stats_csv
from ..preemption import InferenceContext, preempt_latency, resume
from ..profiles import BUILTIN, PlatformProfile, profile_from_dict
from . import schemas

PUB_NAME = "device_pub.pem"
EFUSE_NAME = Path("efuse") / "sk_dev.pem"


class ServiceState:
    def __init__(self, device_dir: str | Path = "device"):
        self.device_dir = Path(device_dir)
        self._enclave: EnclaveState | None = None

    @property
    def pub_path(self) -> Path:
        return self.device_dir / PUB_NAME

    @property
    def efuse_path(self) -> Path:
        return self.device_dir / EFUSE_NAME

    def enclave(self) -> EnclaveState:
        if self._enclave is None:
            if not self.efuse_path.exists():
                raise HTTPException(409, f"no device identity in {self.device_dir}; run keygen first")
            self._enclave = EnclaveState.from_efuse(self.efuse_path.read_bytes())
        return self._enclave

    def keygen(self, bits: int, overwrite: bool) -> bytes:
        if self.efuse_path.exists() and not overwrite:
            raise HTTPException(409, f"device identity already fused in {self.device_dir}")
        dev = generate_device_identity(bits)
        self.efuse_path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(self.efuse_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(dev.enclave.export_efuse())
        pem = dev.public_pem()
        self.pub_path.write_bytes(pem)
        self._enclave = dev.enclave
        return pem


def resolve_profile(ref: schemas.ProfileRef) -> PlatformProfile:
    if isinstance(ref, schemas.ProfileDoc):
        return profile_from_dict(ref.model_dump())
    try:
        return BUILTIN[ref.lower()]
    except KeyError:
        raise HTTPException(422, f"unknown profile {ref!r}; built-ins are {sorted(BUILTIN)}") from None


def b64d(text: str, what: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(422, f"{what} is not valid base64") from None


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode()


def create_app(state: ServiceState | None = None) -> FastAPI:
    state = state or ServiceState(os.environ.get("TESSERA_DEVICE_DIR", "device"))
    app = FastAPI(title="tessera", version=__version__)
    app.state.tessera = state

    @app.exception_handler(TesseraError)
    async def _tessera_error(request: Request, exc: TesseraError):
        body = schemas.ErrorBody(error=type(exc).__name__, exit_code=exc.exit_code, detail=str(exc))
        return JSONResponse(status_code=422, content=body.model_dump())

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/profiles")
    def profiles():
        return [p.to_dict() for p in BUILTIN.values()]

    @app.post("/keygen", response_model=schemas.KeygenResponse)
    def keygen(req: schemas.KeygenRequest):
        pem = state.keygen(req.bits, req.overwrite)
        return schemas.KeygenResponse(bits=req.bits, public_pem=pem.decode())

    @app.get("/device/public", response_model=schemas.KeygenResponse)
    def device_public():
        if not state.pub_path.exists():
            raise HTTPException(404, "no device identity; run keygen first")
        pk = load_public_pem(state.pub_path.read_bytes())
        return schemas.KeygenResponse(bits=pk.key_size, public_pem=public_pem(pk).decode())

    @app.post("/pack", response_model=schemas.PackResponse)
    def pack_(req: schemas.PackRequest):
        pk = load_public_pem(req.device_pub_pem.encode())
        app_id = AppIdentity(b64d(req.app_cert_b64, "app_cert_b64"))
        img = pack(b64d(req.plaintext_b64, "plaintext_b64"), pk, app_id, req.base_addr,
                   fixed_counter=req.fixed_counter, insecure_demo=req.insecure_demo)
        return schemas.PackResponse(image_b64=b64e(img), header=parse(img).header_report())

    @app.post("/inspect")
    def inspect_(req: schemas.InspectRequest):
        return parse(b64d(req.image_b64, "image_b64")).header_report()

    @app.post("/simulate/jitter", response_model=schemas.JitterResponse)
    def jitter(req: schemas.JitterRequest):
        profile = resolve_profile(req.profile)
        stats = [
            simulate_jitter(profile, JitterParams(req.sigma_ks_frac, req.sigma_dram_frac, req.n_requests, seed))
            for seed in req.seeds
        ]
        return schemas.JitterResponse(stats=[s.to_dict() for s in stats], csv=stats_csv(stats))

    @app.post("/simulate/stream", response_model=schemas.StreamResponse)
    def stream(req: schemas.StreamRequest):
        profile = resolve_profile(req.profile)
        image = parse(b64d(req.image_b64, "image_b64"))
        if image.fixed_counter:
            raise HTTPException(422, "fixed-counter demo images cannot be streamed through the ICE")
        caller = AppIdentity(b64d(req.app_cert_b64, "app_cert_b64"))
        enclave = state.enclave()
        tiles = image_tiles(image, req.tile_bytes)
        sram = req.sram_size or max(profile.sram_size - profile.sram_size % 64, 64)
        fabric = MemoryFabric(profile, dram_size=fabric_dram_size(image), dram_base=image.base_addr, sram_size=sram)
        load_into_fabric(fabric, image)
        configure_smmu(fabric, True, fabric.standard_policy(locked=True))
        ice = IceRegisters()
        unseal_and_provision(enclave, image.blob, caller, ice)
        ctx = InferenceContext(fabric, ice, tiles)
        preempt_info = None
        if req.preempt_after_lines is not None:
            ctx.run(max_lines=req.preempt_after_lines)
            if not ctx.done:
                rep = ctx.preempt()
                preempt_info = {"duration_ns": rep.duration_ns, "sram_zeroed": rep.sram_zeroed,
                                "keys_cleared": rep.keys_cleared, "resumed_tile_index": rep.resumed_tile_index}
                resume(ctx, enclave, image.blob, caller)
        ctx.run()
        output = b"".join(ctx.delivered)
        return schemas.StreamResponse(
            profile=profile.name,
            tiles=len(tiles),
            lines_processed=ctx.report.lines_processed,
            bytes_fetched=ctx.report.bytes_fetched,
            errors=ctx.report.errors,
            output_sha256=hashlib.sha256(output).hexdigest(),
            preempt=preempt_info,
            trace=ctx.log,
            line_latency_ns={m: line_latency(profile, m) for m in ("tessera", "direct", "plaintext")},
        )

    @app.post("/attack", response_model=schemas.AttackResponse)
    def attack(req: schemas.AttackRequest):
        profile = resolve_profile(req.profile)
        if req.scenario == "all":
            verdicts = attacks.run_all(req.seed, profile)
        elif req.scenario in attacks.SCENARIOS:
            verdicts = attacks.run_scenario(req.scenario, req.seed, profile)
        else:
            raise HTTPException(422, f"unknown scenario {req.scenario!r}; choose all or {attacks.SCENARIOS}")
        return schemas.AttackResponse(ok=attacks.suite_ok(verdicts), verdicts=[v.to_dict() for v in verdicts])

    @app.post("/model", response_model=schemas.ModelResponse)
    def model(req: schemas.ModelRequest):
        profile = resolve_profile(req.profile)
        sched = None
        if req.schedule is not None:
            try:
                sched = perf.schedule_report(load_schedule(req.schedule), profile)
            except (KeyError, TypeError, ValueError) as exc:
                raise HTTPException(422, f"bad tile schedule: {exc}") from None
        return schemas.ModelResponse(
            profile=profile.name,
            direct_pct=perf.effective_bandwidth(profile, "direct").pct,
            tessera_pct=perf.effective_bandwidth(profile, "tessera").pct,
            slack_ns=round(profile.slack_ns, 4),
            preempt_us=round(preempt_latency(profile.sram_size, profile.sram_bw, profile.t_save_ns) / 1e3, 4),
            line_latency_ns={m: round(line_latency(profile, m), 4) for m in ("tessera", "direct", "plaintext")},
            fifo_high_water_bytes=round(fifo_high_water(profile, 100.0), 4),
            tables=perf.all_tables(),
            schedule=sched,
        )

    return app
