import hashlib
import random

import pytest

from tessera.errors import AppBindingMismatch, InvalidTransition, NotRunning, OaepDecodeFailure
from tessera.fabric import MemoryFabric, configure_smmu
from tessera.image import fabric_dram_size, image_tiles, load_into_fabric, pack, parse
from tessera.keys import AppIdentity, IceRegisters, unseal_and_provision
from tessera.perf import preempt_rows
from tessera.preemption import (
    InferenceContext,
    PreemptState,
    preempt,
    preempt_latency,
    resume,
    scrub_preceded_switch,
)
from tessera.profiles import BUILTIN

BASE = 0x8000_0000


@pytest.fixture
def setup(device, app_id):
    plain = random.Random(8).randbytes(20_000)
    image = parse(pack(plain, device.pk_dev, app_id, BASE))

    def fresh(tile_bytes=1024):
        fabric = MemoryFabric(BUILTIN["xavier"], dram_size=fabric_dram_size(image), dram_base=BASE,
                              sram_size=8 * 1024)
        load_into_fabric(fabric, image)
        configure_smmu(fabric, True, fabric.standard_policy())
        ice = IceRegisters()
        unseal_and_provision(device.enclave, image.blob, app_id, ice)
        return InferenceContext(fabric, ice, image_tiles(image, tile_bytes))

    return plain, image, fresh


def test_latency_per_platform():
    got = {r["platform"]: (r["t_preempt_us"], r["t_preempt_us_rounded"]) for r in preempt_rows()}
    assert got["i9"][0] == pytest.approx(5.40625, abs=1e-4) and got["i9"][1] == 5.4
    assert got["xavier"][0] == pytest.approx(9.8333, abs=1e-4) and got["xavier"][1] == 9.8
    assert got["orin"][0] == pytest.approx(5.6667, abs=1e-4) and got["orin"][1] == 5.7
    assert all(r["under_scheduler_floor"] for r in preempt_rows())


def test_latency_formula():
    assert preempt_latency(2 * 1024 * 1024, 512e9, 0) == pytest.approx(4096)
    with pytest.raises(ValueError):
        preempt_latency(1, 0, 0)


def test_uninterrupted_run_delivers_plaintext(setup):
    plain, _, fresh = setup
    ctx = fresh()
    ctx.run()
    assert ctx.done and ctx.report.errors == []
    assert b"".join(ctx.delivered) == plain


@pytest.mark.parametrize("cut", [0, 1, 5, 16, 17, 100, 312])
def test_restart_equivalence(setup, device, app_id, cut):
    plain, image, fresh = setup
    ctx = fresh()
    ctx.run(max_lines=cut)
    rep = preempt(ctx)
    assert rep.sram_zeroed and rep.keys_cleared
    assert ctx.fabric.sram.is_zero() and ctx.ice.is_zero()
    resume(ctx, device.enclave, image.blob, app_id)
    ctx.run()
    assert hashlib.sha256(b"".join(ctx.delivered)).digest() == hashlib.sha256(plain).digest()
    assert scrub_preceded_switch(ctx.log)


def test_state_sequence(setup, device, app_id):
    _, image, fresh = setup
    ctx = fresh()
    ctx.run(max_lines=10)
    ctx.preempt()
    resume(ctx, device.enclave, image.blob, app_id)
    states = [r["state"] for r in ctx.log]
    assert states == ["Running", "DmaStopped", "Drained", "Scrubbed", "KeysCleared", "Switched",
                      "Reprovisioned", "Restarted", "Running"]
    scrub = next(r for r in ctx.log if r["state"] == "Scrubbed")
    cleared = next(r for r in ctx.log if r["state"] == "KeysCleared")
    assert scrub["sram_zero"] and cleared["ice_zero"]


def test_preempt_only_while_running(setup):
    _, _, fresh = setup
    ctx = fresh()
    ctx.preempt()
    with pytest.raises(NotRunning):
        ctx.preempt()


def test_resume_without_preempt(setup, device, app_id):
    _, image, fresh = setup
    ctx = fresh()
    with pytest.raises(InvalidTransition):
        resume(ctx, device.enclave, image.blob, app_id)


def test_resume_with_bad_credentials_stays_switched(setup, device, app_id):
    _, image, fresh = setup
    ctx = fresh()
    ctx.run(max_lines=3)
    ctx.preempt()
    with pytest.raises(OaepDecodeFailure):
        resume(ctx, device.enclave, image.blob.with_byte_flipped(0), app_id)
    with pytest.raises(AppBindingMismatch):
        resume(ctx, device.enclave, image.blob, AppIdentity(b"other"))
    assert ctx.state is PreemptState.SWITCHED and ctx.ice.is_zero()
    assert ctx.run() == 0


def test_scrub_check_detects_missing_scrub():
    log = [{"state": "Running"}, {"state": "DmaStopped"}, {"state": "Switched"}]
    assert not scrub_preceded_switch(log)
    log = [{"state": "Scrubbed", "sram_zero": False}, {"state": "Switched"}]
    assert not scrub_preceded_switch(log)


def test_trace_file(setup, tmp_path):
    _, _, fresh = setup
    ctx = fresh()
    ctx.run(max_lines=2)
    ctx.preempt()
    path = tmp_path / "trace.jsonl"
    ctx.write_trace(path)
    assert len(path.read_text().splitlines()) == len(ctx.log)
