"""Attack scenarios against the simulated SoC, each with a negative control.

Every scenario returns an :class:`AttackVerdict`.  The defended run is
expected to report ``defended=True``; its control (same attack, protection
removed) must report ``defended=False``, otherwise the scenario proves
nothing.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field

from .crypto import (
    LINE_BYTES,
    NonceBase,
    SessionKey,
    ctr_region,
    fixed_counter_region,
    pad_to_lines,
    xor_bytes,
)
from .errors import AppBindingMismatch, NoZeroLine, OaepDecodeFailure, ProvisioningError
from .fabric import CPU, NPU_DMA, ROGUE, MemoryFabric, bus_read, bus_write, configure_smmu
from .image import fabric_dram_size, image_tiles, load_into_fabric, pack, parse
from .keys import (
    AppIdentity,
    DeviceIdentity,
    EnclaveState,
    IceRegisters,
    KeyBlob,
    generate_device_identity,
    unseal_and_provision,
)
from .pipeline import IceEngine, StreamReport, TileDescriptor, stream_decrypt
from .preemption import InferenceContext
from .profiles import BUILTIN, PlatformProfile

CANARY = (b"TESSERA-CANARY-" * 5)[:LINE_BYTES]
SCENARIOS = ("cold_boot", "rogue_dma", "preempt_hijack", "confused_deputy", "alias_replay", "fixed_counter_leak")


@dataclass
class AttackVerdict:
    scenario: str
    defended: bool
    control: bool = False
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "control": self.control, "defended": self.defended,
                "evidence": self.evidence}


def split_lines(data: bytes) -> list[bytes]:
    data = pad_to_lines(data)
    return [data[i : i + LINE_BYTES] for i in range(0, len(data), LINE_BYTES)]


def find_plaintext_lines(dump: bytes, known: list[bytes]) -> set[int]:
    """Indices of ``known`` lines that appear at any byte offset of ``dump``."""
    wanted: dict[bytes, list[int]] = {}
    for i, line in enumerate(known):
        wanted.setdefault(line, []).append(i)
    found: set[int] = set()
    for off in range(len(dump) - LINE_BYTES + 1):
        hit = wanted.get(dump[off : off + LINE_BYTES])
        if hit:
            found.update(hit)
    return found


# -- testbed -------------------------------------------------------------

@dataclass
class Testbed:
    """A provisioned device with one packed model resident in DRAM."""

    profile: PlatformProfile
    device: DeviceIdentity
    app: AppIdentity
    plaintext: bytes
    image_bytes: bytes
    fabric: MemoryFabric
    ice: IceRegisters
    tiles: list[TileDescriptor]
    rng: random.Random

    @property
    def image(self):
        return parse(self.image_bytes)

    @property
    def blob(self) -> KeyBlob:
        return self.image.blob

    @property
    def known_lines(self) -> list[bytes]:
        return split_lines(self.plaintext)


def random_weights(rng: random.Random, n_bytes: int, canary: bool = True) -> bytes:
    data = bytearray(rng.randbytes(n_bytes))
    if canary and n_bytes >= 2 * LINE_BYTES:
        data[LINE_BYTES : 2 * LINE_BYTES] = CANARY
    return bytes(data)


def make_testbed(seed: int = 0, profile: PlatformProfile | None = None, model_bytes: int = 8192,
                 tile_bytes: int = 1024, device: DeviceIdentity | None = None,
                 plaintext: bytes | None = None, sram_size: int = 64 * 1024,
                 base_addr: int = 0x8000_0000) -> Testbed:
    """Pack a random model, load it into a fresh locked fabric and arm the ICE.

    Free DRAM is filled with noise so that stray zero pages cannot pass for
    recovered weights.
    """
    rng = random.Random(seed)
    profile = profile or BUILTIN["xavier"]
    device = device or generate_device_identity(2048)
    app = AppIdentity(b"code-signing-cert:" + rng.randbytes(32))
    plaintext = random_weights(rng, model_bytes) if plaintext is None else plaintext
    image_bytes = pack(plaintext, device.pk_dev, app, base_addr)
    image = parse(image_bytes)
    fabric = MemoryFabric(profile, dram_size=fabric_dram_size(image), dram_base=base_addr, sram_size=sram_size)
    fabric.dram.contents[:] = rng.randbytes(len(fabric.dram.contents))
    load_into_fabric(fabric, image)
    configure_smmu(fabric, True, fabric.standard_policy(locked=True))
    ice = IceRegisters()
    unseal_and_provision(device.enclave, image.blob, app, ice)
    return Testbed(profile, device, app, plaintext, image_bytes, fabric, ice,
                   image_tiles(image, tile_bytes), rng)


def plaintext_testbed(bed: Testbed) -> MemoryFabric:
    """Same DRAM layout but with the weights stored unencrypted."""
    f = MemoryFabric(bed.profile, dram_size=len(bed.fabric.dram.contents), dram_base=bed.fabric.dram.base_addr,
                     sram_size=bed.fabric.sram.size)
    f.dram.contents[:] = bed.fabric.dram.contents
    f.load_dram(bed.image.base_addr, pad_to_lines(bed.plaintext))
    f.dram.weight_region = bed.fabric.dram.weight_region
    configure_smmu(f, True, f.standard_policy(locked=True))
    return f


# -- scenarios -------------------------------------------------------------

def attack_cold_boot(fabric: MemoryFabric, known_plaintext: list[bytes], control: bool = False) -> AttackVerdict:
    """Physical dump of all DRAM, searched for any known plaintext line."""
    dump = bytes(fabric.dram.contents)
    found = find_plaintext_lines(dump, known_plaintext)
    canary_idx = {i for i, line in enumerate(known_plaintext) if line == CANARY}
    return AttackVerdict(
        "cold_boot",
        defended=not found,
        control=control,
        evidence={
            "dump_bytes": len(dump),
            "lines_total": len(known_plaintext),
            "lines_matched": len(found),
            "fraction_recovered": len(found) / len(known_plaintext) if known_plaintext else 0.0,
            "canary_planted": bool(canary_idx),
            "canary_found": bool(canary_idx & found),
        },
    )


def attack_rogue_dma(fabric: MemoryFabric, known_plaintext: list[bytes] | None = None,
                     control: bool = False) -> AttackVerdict:
    """A non-NPU initiator sweeps the protected SRAM with reads then writes."""
    statuses: Counter[str] = Counter()
    leaked = bytearray()
    sram = fabric.sram
    for addr in range(sram.base_addr, sram.end, LINE_BYTES):
        r = bus_read(fabric, ROGUE, addr, LINE_BYTES)
        statuses["read:" + r.status.value] += 1
        if r.ok:
            leaked += r.payload
    for addr in range(sram.base_addr, sram.end, LINE_BYTES):
        w = bus_write(fabric, ROGUE, addr, b"\xa5" * LINE_BYTES)
        statuses["write:" + w.status.value] += 1
    aborted = all(k.endswith("SLVERR") or k.endswith("DECERR") for k in statuses)
    evidence = {"responses": dict(statuses), "sram_bytes_read": len(leaked)}
    if known_plaintext is not None:
        evidence["plaintext_lines_leaked"] = len(find_plaintext_lines(bytes(leaked), known_plaintext))
        lo, hi = fabric.dram.weight_region
        d = bus_read(fabric, ROGUE, lo, hi - lo)
        evidence["dram_read_status"] = d.status.value
        evidence["dram_plaintext_lines"] = len(find_plaintext_lines(d.payload or b"", known_plaintext))
    return AttackVerdict("rogue_dma", defended=aborted, control=control, evidence=evidence)


def attack_preempt_hijack(fabric: MemoryFabric, context: InferenceContext, known_plaintext: list[bytes],
                          control: bool = False) -> AttackVerdict:
    """Interrupt mid-tile, then read SRAM as the next NPU task.

    ``control=True`` switches tasks without the hardware hook.
    """
    resident_before = len(find_plaintext_lines(bytes(fabric.sram.contents), known_plaintext))
    # control: DMA just stops; nothing is drained, scrubbed or cleared
    if not control:
        context.preempt()
    sram = bus_read(fabric, NPU_DMA, fabric.sram.base_addr, fabric.sram.size).payload
    found = find_plaintext_lines(sram, known_plaintext)
    nonzero = sum(1 for b in sram if b)
    return AttackVerdict(
        "preempt_hijack",
        defended=nonzero == 0 and not found,
        control=control,
        evidence={
            "plaintext_lines_resident_before": resident_before,
            "nonzero_bytes_after": nonzero,
            "plaintext_lines_after": len(found),
            "ice_key_zero": context.ice.is_zero(),
        },
    )


def _naive_provision(enclave: EnclaveState, blob: KeyBlob, ice: IceRegisters) -> None:
    """Loader that unseals but never checks who is asking."""
    k, _ = enclave._unseal(blob)
    ice.load(k, blob.iv)


def attack_confused_deputy(enclave: EnclaveState, blob: KeyBlob, legit: AppIdentity, impostor: AppIdentity,
                           tamper_positions: list[int] | None = None, control: bool = False) -> AttackVerdict:
    """Impostor identity, per-byte blob tampering, and sibling replay."""
    if tamper_positions is None:
        tamper_positions = list(range(len(blob.ciphertext)))

    def attempt(b: KeyBlob, caller: AppIdentity) -> str:
        ice = IceRegisters()
        try:
            if control:
                _naive_provision(enclave, b, ice)
            else:
                unseal_and_provision(enclave, b, caller, ice)
        except AppBindingMismatch:
            return "AppBindingMismatch" if not ice.armed else "armed-after-abort"
        except OaepDecodeFailure:
            return "OaepDecodeFailure" if not ice.armed else "armed-after-abort"
        return "provisioned"

    impostor_result = attempt(blob, impostor)
    tamper = Counter(attempt(blob.with_byte_flipped(p), legit) for p in tamper_positions)
    # a sibling app replays the victim's blob while presenting its own identity
    sibling = AppIdentity(impostor.cert_bytes + b"|sibling")
    replay_result = attempt(blob, sibling)
    legit_result = attempt(blob, legit)
    defended = (
        impostor_result == "AppBindingMismatch"
        and set(tamper) == {"OaepDecodeFailure"}
        and replay_result == "AppBindingMismatch"
    )
    return AttackVerdict(
        "confused_deputy",
        defended=defended,
        control=control,
        evidence={
            "impostor": impostor_result,
            "tamper": dict(tamper),
            "tamper_positions": len(tamper_positions),
            "sibling_replay": replay_result,
            "legitimate": legit_result,
        },
    )


def attack_alias_replay(fabric: MemoryFabric, ice: IceRegisters, known_plaintext: list[bytes],
                        n_relocations: int = 100, rng: random.Random | None = None,
                        identity: bool = False) -> AttackVerdict:
    """Copy ciphertext lines to other physical lines and stream them through the ICE.

    ``identity=True`` is the control: the "relocation" keeps the address.
    """
    rng = rng or random.Random(0)
    lo, hi = fabric.dram.weight_region
    n_src = (hi - lo) // LINE_BYTES
    n_all = len(fabric.dram.contents) // LINE_BYTES
    engine = IceEngine(fabric, ice)
    slot = fabric.sram.base_addr
    correct = 0
    shifts = Counter()
    for _ in range(n_relocations):
        src_i = rng.randrange(min(n_src, len(known_plaintext)))
        src = lo + src_i * LINE_BYTES
        if identity:
            dst = src
        else:
            dst = fabric.dram.base_addr + rng.randrange(n_all) * LINE_BYTES
            while dst == src:
                dst = fabric.dram.base_addr + rng.randrange(n_all) * LINE_BYTES
        ct = bus_read(fabric, CPU, src, LINE_BYTES).payload
        saved = bus_read(fabric, CPU, dst, LINE_BYTES).payload
        bus_write(fabric, CPU, dst, ct)
        tile = TileDescriptor(dst, LINE_BYTES, "alias")
        engine.process_line(tile, 0, slot, engine.tile_keystream(tile), StreamReport())
        out = bus_read(fabric, NPU_DMA, slot, LINE_BYTES).payload
        correct += out == known_plaintext[src_i]
        shifts["same" if dst == src else "moved"] += 1
        bus_write(fabric, CPU, dst, saved)
    return AttackVerdict(
        "alias_replay",
        defended=correct == 0,
        control=identity,
        evidence={"relocations": n_relocations, "correct_lines": correct, "moves": dict(shifts)},
    )


@dataclass
class SparseWeightImage:
    lines: list[bytes]
    zero_lines: frozenset[int]

    @classmethod
    def random(cls, rng: random.Random, n_lines: int = 64, zero_frac: float = 0.3) -> "SparseWeightImage":
        n_zero = max(1, round(n_lines * zero_frac))
        zeros = frozenset(rng.sample(range(n_lines), n_zero))
        lines = []
        for i in range(n_lines):
            if i in zeros:
                lines.append(bytes(LINE_BYTES))
            else:
                line = rng.randbytes(LINE_BYTES)
                while not any(line):
                    line = rng.randbytes(LINE_BYTES)
                lines.append(line)
        return cls(lines, zeros)

    def __post_init__(self):
        declared = frozenset(i for i, l in enumerate(self.lines) if not any(l))
        if declared != self.zero_lines:
            raise ValueError("declared zero lines do not match the line contents")

    @property
    def data(self) -> bytes:
        return b"".join(self.lines)


def _guess_zero_line(ct_lines: list[bytes]) -> int:
    # under a reused keystream every zero line encrypts to the same block
    block, _ = Counter(ct_lines).most_common(1)[0]
    return ct_lines.index(block)


def fixed_counter_leak(sparse: SparseWeightImage, counters: str = "fixed", rng: random.Random | None = None,
                       base_addr: int = 0x8000_0000, blind: bool = False) -> AttackVerdict:
    """XOR every ciphertext line with the ciphertext of a zero line.

    With a reused keystream the keystream cancels and the plaintext falls
    out; with address-derived counters it does not.  ``blind`` makes the
    attacker guess the zero line as the most repeated ciphertext block.
    """
    if not sparse.zero_lines:
        raise NoZeroLine("leak demonstration needs at least one all-zero line")
    rng = rng or random.Random(0)
    key = SessionKey(rng.randbytes(32))
    iv = NonceBase(rng.randbytes(12))
    if counters == "fixed":
        ct = fixed_counter_region(key, iv, sparse.data)
    elif counters == "address":
        ct = ctr_region(key, iv, base_addr, sparse.data)
    else:
        raise ValueError(f"unknown counter mode {counters!r}")
    key.clear()
    ct_lines = split_lines(ct)
    z = _guess_zero_line(ct_lines) if blind else min(sparse.zero_lines)
    nonzero = [i for i in range(len(sparse.lines)) if i not in sparse.zero_lines]
    recovered = sum(xor_bytes(ct_lines[i], ct_lines[z]) == sparse.lines[i] for i in nonzero)
    frac = recovered / len(nonzero) if nonzero else 0.0
    return AttackVerdict(
        "fixed_counter_leak",
        defended=recovered == 0,
        control=counters == "fixed",
        evidence={"counters": counters, "zero_line_used": z, "blind": blind, "nonzero_lines": len(nonzero),
                  "recovered_lines": recovered, "recovered_fraction": frac},
    )


# -- orchestration -------------------------------------------------------

def run_scenario(name: str, seed: int = 0, profile: PlatformProfile | None = None,
                 device: DeviceIdentity | None = None) -> list[AttackVerdict]:
    """Defended run followed by its negative control."""
    device = device or generate_device_identity(2048)
    bed = make_testbed(seed, profile, device=device)
    known = bed.known_lines
    if name == "cold_boot":
        return [attack_cold_boot(bed.fabric, known),
                attack_cold_boot(plaintext_testbed(bed), known, control=True)]
    if name == "rogue_dma":
        stream_decrypt(bed.fabric, bed.ice, bed.tiles)
        defended = attack_rogue_dma(bed.fabric, known)
        open_fabric = plaintext_testbed(bed)
        open_fabric.policy = None  # SMMU left in bypass by faulty firmware
        open_fabric.sram.contents[:] = bed.fabric.sram.contents
        return [defended, attack_rogue_dma(open_fabric, known, control=True)]
    if name == "preempt_hijack":
        out = []
        for control in (False, True):
            b = make_testbed(seed, profile, device=device)
            ctx = InferenceContext(b.fabric, b.ice, b.tiles)
            total = sum(t.n_lines for t in b.tiles)
            ctx.run(max_lines=total // 2 + 3)
            out.append(attack_preempt_hijack(b.fabric, ctx, b.known_lines, control=control))
        return out
    if name == "confused_deputy":
        impostor = AppIdentity(b"impostor-cert:" + bed.rng.randbytes(16))
        return [attack_confused_deputy(device.enclave, bed.blob, bed.app, impostor),
                attack_confused_deputy(device.enclave, bed.blob, bed.app, impostor,
                                       tamper_positions=list(range(8)), control=True)]
    if name == "alias_replay":
        return [attack_alias_replay(bed.fabric, bed.ice, known, rng=random.Random(seed)),
                attack_alias_replay(bed.fabric, bed.ice, known, n_relocations=16, rng=random.Random(seed),
                                    identity=True)]
    if name == "fixed_counter_leak":
        sparse = SparseWeightImage.random(random.Random(seed))
        return [fixed_counter_leak(sparse, "address", random.Random(seed)),
                fixed_counter_leak(sparse, "fixed", random.Random(seed))]
    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


def run_all(seed: int = 0, profile: PlatformProfile | None = None) -> list[AttackVerdict]:
    device = generate_device_identity(2048)
    verdicts = []
    for name in SCENARIOS:
        verdicts.extend(run_scenario(name, seed, profile, device))
    return verdicts


def suite_ok(verdicts: list[AttackVerdict]) -> bool:
    """True iff every non-control run was defended."""
    return all(v.defended for v in verdicts if not v.control)
