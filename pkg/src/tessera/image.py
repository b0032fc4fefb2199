"""Encrypted weight-image file format and tile schedules.

Layout (little-endian):

    offset  size  field
    0       4     magic "TSRA"
    4       2     version (1)
    6       2     flags (bit 0: fixed-counter demo; other bits reserved, 0)
    8       8     base_addr  physical load address; counters derive from it
    16      8     plaintext_len
    24      32    h_app      SHA-256 of the bound app certificate
    56      2     blob_len
    58      n     key blob   version u16, rsa_bits u16, nonce 12 B, OAEP ciphertext
    ...           zero pad to a 64-byte boundary
    ...           ciphertext, ceil(plaintext_len / 64) lines

Counter index field is big-endian, see ``tessera.crypto``.
"""

from __future__ import annotations

import json
import math
import secrets
import struct
from dataclasses import dataclass
from pathlib import Path

from .crypto import (
    KEY_BYTES,
    LINE_BYTES,
    NONCE_BYTES,
    NonceBase,
    SessionKey,
    check_line_address,
    ctr_region,
    fixed_counter_region,
    pad_to_lines,
)
from .errors import BadMagic, BadVersion, ImageFormatError, InsecureModeRefused, Misaligned, TruncatedFile
from .fabric import MemoryFabric
from .keys import AppIdentity, KeyBlob, seal_model_key
from .pipeline import TileDescriptor

MAGIC = b"TSRA"
VERSION = 1
FLAG_FIXED_COUNTER = 0x1
HEADER = struct.Struct("<4sHHQQ32sH")


@dataclass(frozen=True)
class WeightImage:
    version: int
    flags: int
    base_addr: int
    plaintext_len: int
    h_app: bytes
    blob: KeyBlob
    ciphertext_offset: int
    ciphertext: bytes

    @property
    def n_lines(self) -> int:
        return math.ceil(self.plaintext_len / LINE_BYTES)

    @property
    def fixed_counter(self) -> bool:
        return bool(self.flags & FLAG_FIXED_COUNTER)

    def header_report(self) -> dict:
        return {
            "magic": MAGIC.decode(),
            "version": self.version,
            "flags": self.flags,
            "fixed_counter_demo": self.fixed_counter,
            "base_addr": self.base_addr,
            "plaintext_len": self.plaintext_len,
            "ciphertext_offset": self.ciphertext_offset,
            "ciphertext_lines": self.n_lines,
            "ciphertext_bytes": len(self.ciphertext),
            "file_len": self.ciphertext_offset + len(self.ciphertext),
            "h_app": self.h_app.hex(),
            "blob": {
                "version": self.blob.version,
                "rsa_bits": self.blob.rsa_bits,
                "nonce": self.blob.iv.value.hex(),
                "oaep_len": len(self.blob.ciphertext),
            },
        }


def _ciphertext_offset(blob_len: int) -> int:
    raw = HEADER.size + blob_len
    return -(-raw // LINE_BYTES) * LINE_BYTES


def serialize(h_app: bytes, blob: KeyBlob, base_addr: int, plaintext_len: int, ciphertext: bytes,
              flags: int = 0) -> bytes:
    blob_bytes = blob.to_bytes()
    head = HEADER.pack(MAGIC, VERSION, flags, base_addr, plaintext_len, h_app, len(blob_bytes)) + blob_bytes
    return head + bytes(_ciphertext_offset(len(blob_bytes)) - len(head)) + ciphertext


def pack(plaintext: bytes, pk_dev, app: AppIdentity, base_addr: int, *, fixed_counter: bool = False,
         insecure_demo: bool = False) -> bytes:
    """Encrypt ``plaintext`` under a fresh model key and seal that key to the device.

    The model key is zeroized before returning; only the sealed blob keeps it.
    """
    if fixed_counter and not insecure_demo:
        raise InsecureModeRefused("fixed-counter images need the explicit insecure demo switch")
    if base_addr % LINE_BYTES:
        raise Misaligned(f"base address {base_addr:#x} is not line aligned")
    padded = pad_to_lines(plaintext)
    if padded:
        check_line_address(base_addr + len(padded) - LINE_BYTES)
    key = SessionKey(secrets.token_bytes(KEY_BYTES))
    iv = NonceBase(secrets.token_bytes(NONCE_BYTES))
    try:
        blob = seal_model_key(pk_dev, key, app, iv)
        if fixed_counter:
            ct = fixed_counter_region(key, iv, padded)
        else:
            ct = ctr_region(key, iv, base_addr, padded)
    finally:
        key.clear()
    flags = FLAG_FIXED_COUNTER if fixed_counter else 0
    return serialize(app.h_app, blob, base_addr, len(plaintext), ct, flags)


def parse(data: bytes) -> WeightImage:
    if len(data) < 4:
        raise TruncatedFile("file shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < HEADER.size:
        raise TruncatedFile("file shorter than the fixed header")
    _, version, flags, base, plen, h_app, blob_len = HEADER.unpack_from(data)
    if version != VERSION:
        raise BadVersion(f"unsupported image version {version}")
    if flags & ~FLAG_FIXED_COUNTER:
        raise ImageFormatError(f"reserved flag bits set: {flags:#06x}")
    if len(data) < HEADER.size + blob_len:
        raise TruncatedFile("file ends inside the key blob")
    blob = KeyBlob.from_bytes(data[HEADER.size : HEADER.size + blob_len])
    off = _ciphertext_offset(blob_len)
    expect = off + math.ceil(plen / LINE_BYTES) * LINE_BYTES
    if len(data) < expect:
        raise TruncatedFile(f"file is {len(data)} bytes, header implies {expect}")
    if len(data) > expect:
        raise ImageFormatError(f"{len(data) - expect} trailing bytes after the ciphertext")
    if any(data[HEADER.size + blob_len : off]):
        raise ImageFormatError("non-zero header padding")
    return WeightImage(version, flags, base, plen, h_app, blob, off, data[off:expect])


def inspect(data: bytes) -> dict:
    return parse(data).header_report()


def image_tiles(image: WeightImage, tile_bytes: int, label: str = "tile") -> list[TileDescriptor]:
    """Split the image's logical bytes into consecutive tiles.

    Tile sizes are rounded up to whole lines so every tile starts aligned.
    """
    if tile_bytes <= 0:
        raise ValueError("tile_bytes must be positive")
    step = math.ceil(tile_bytes / LINE_BYTES) * LINE_BYTES
    tiles = []
    for i, off in enumerate(range(0, image.plaintext_len, step)):
        tiles.append(TileDescriptor(image.base_addr + off, min(step, image.plaintext_len - off), f"{label}{i}"))
    return tiles


def load_into_fabric(fabric: MemoryFabric, image: WeightImage) -> None:
    fabric.load_dram(image.base_addr, image.ciphertext)
    fabric.dram.weight_region = (image.base_addr, image.base_addr + len(image.ciphertext))
    fabric.dram.logical_len = image.plaintext_len


def fabric_dram_size(image: WeightImage, headroom: int = 64 * 1024) -> int:
    return len(image.ciphertext) * 2 + headroom


# -- tile schedules ----------------------------------------------------------

@dataclass(frozen=True)
class ScheduleEntry:
    name: str
    tile_bytes: int
    count: int

    def __post_init__(self):
        if self.tile_bytes < 1 or self.count < 1:
            raise ValueError(f"schedule entry {self.name!r}: tile_bytes and count must be >= 1")


def load_schedule(source: str | Path | list) -> list[ScheduleEntry]:
    doc = source if isinstance(source, list) else json.loads(Path(source).read_text())
    if not isinstance(doc, list):
        raise ValueError("tile schedule must be a JSON list")
    return [ScheduleEntry(str(e["name"]), int(e["tile_bytes"]), int(e["count"])) for e in doc]
