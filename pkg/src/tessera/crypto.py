"""Cache-line AES-256-CTR with counters derived from the physical address.

Every 64-byte line at physical address ``addr`` is covered by four AES
blocks.  Block ``j`` of that line uses the 128-bit counter

    nonce (12 bytes) || uint32_be(4 * (addr // 64) + j)

so the index field counts 16-byte blocks, not lines.  That keeps every
counter unique across lines at the cost of a 64 GiB addressable range.

AES itself comes from OpenSSL (via ``cryptography``), which uses AES-NI or
a bitsliced fallback; no lookup-table AES runs in this process.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import CounterOverflow, KeyCleared, Misaligned

LINE_BYTES = 64
AES_BLOCK = 16
BLOCKS_PER_LINE = LINE_BYTES // AES_BLOCK
KEY_BYTES = 32
NONCE_BYTES = 12
MAX_BLOCK_INDEX = 2**32 - 1
#: First byte address whose counters would wrap the 32-bit index.
ADDRESS_LIMIT = (MAX_BLOCK_INDEX + 1) * AES_BLOCK


class SessionKey:
    """A 32-byte AES-256 model key that can be zeroized in place."""

    __slots__ = ("_buf", "_live")

    def __init__(self, key: bytes):
        if len(key) != KEY_BYTES:
            raise ValueError(f"session key must be {KEY_BYTES} bytes, got {len(key)}")
        self._buf = bytearray(key)
        self._live = True

    @property
    def live(self) -> bool:
        return self._live

    @property
    def raw(self) -> bytes:
        if not self._live:
            raise KeyCleared("session key has been zeroized")
        return bytes(self._buf)

    def peek(self) -> bytes:
        """Current register contents, zeros after ``clear``; never raises."""
        return bytes(self._buf)

    def clear(self) -> None:
        for i in range(len(self._buf)):
            self._buf[i] = 0
        self._live = False

    def __repr__(self) -> str:
        return f"SessionKey(live={self._live})"


@dataclass(frozen=True)
class NonceBase:
    """96-bit per-model nonce placed in the high bytes of every counter."""

    value: bytes

    def __post_init__(self):
        if len(self.value) != NONCE_BYTES:
            raise ValueError(f"nonce must be {NONCE_BYTES} bytes, got {len(self.value)}")


@dataclass(frozen=True)
class CacheLine:
    addr: int
    data: bytes

    def __post_init__(self):
        check_line_address(self.addr)
        if len(self.data) != LINE_BYTES:
            raise ValueError(f"cache line carries {LINE_BYTES} bytes, got {len(self.data)}")


def check_line_address(addr: int) -> None:
    if addr < 0 or addr % LINE_BYTES:
        raise Misaligned(f"address {addr:#x} is not {LINE_BYTES}-byte aligned")
    if addr >= ADDRESS_LIMIT:
        raise CounterOverflow(
            f"address {addr:#x} exceeds the 32-bit block index range ({ADDRESS_LIMIT:#x})"
        )


def block_indices(addr: int) -> list[int]:
    check_line_address(addr)
    first = (addr // LINE_BYTES) * BLOCKS_PER_LINE
    return [first + j for j in range(BLOCKS_PER_LINE)]


def derive_counters(iv: NonceBase, addr: int) -> list[bytes]:
    """The four 16-byte counter blocks covering the line at ``addr``."""
    return [iv.value + struct.pack(">I", idx) for idx in block_indices(addr)]


def _counter_stream(iv: NonceBase, first_addr: int, n_lines: int) -> bytes:
    if n_lines <= 0:
        return b""
    check_line_address(first_addr)
    check_line_address(first_addr + (n_lines - 1) * LINE_BYTES)
    start = (first_addr // LINE_BYTES) * BLOCKS_PER_LINE
    n_blocks = n_lines * BLOCKS_PER_LINE
    idx = struct.pack(f">{n_blocks}I", *range(start, start + n_blocks))
    nonce = iv.value
    return b"".join(nonce + idx[i : i + 4] for i in range(0, len(idx), 4))


def _aes_ecb(key: SessionKey, blocks: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key.raw), modes.ECB()).encryptor()
    return enc.update(blocks) + enc.finalize()


def aes256_encrypt_block(key: bytes, block: bytes) -> bytes:
    """Single forward AES-256 block encryption (used for reference vectors)."""
    if len(block) != AES_BLOCK:
        raise ValueError("AES block must be 16 bytes")
    return _aes_ecb(SessionKey(key), block)


def line_keystream(key: SessionKey, iv: NonceBase, addr: int) -> bytes:
    return _aes_ecb(key, b"".join(derive_counters(iv, addr)))


def range_keystream(key: SessionKey, iv: NonceBase, first_addr: int, n_lines: int) -> bytes:
    """Keystream for ``n_lines`` consecutive lines starting at ``first_addr``."""
    if not key.live:
        raise KeyCleared("session key has been zeroized")
    return _aes_ecb(key, _counter_stream(iv, first_addr, n_lines))


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("xor operands differ in length")
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(len(a), "little")


def decrypt_line(key: SessionKey, iv: NonceBase, line: CacheLine) -> bytes:
    return xor_bytes(line.data, line_keystream(key, iv, line.addr))


def encrypt_line(key: SessionKey, iv: NonceBase, line: CacheLine) -> bytes:
    # CTR is an involution; kept separate so call sites read in the right direction
    return xor_bytes(line.data, line_keystream(key, iv, line.addr))


def pad_to_lines(data: bytes) -> bytes:
    rem = len(data) % LINE_BYTES
    return data if rem == 0 else data + bytes(LINE_BYTES - rem)


def ctr_region(key: SessionKey, iv: NonceBase, base_addr: int, data: bytes) -> bytes:
    """Encrypt or decrypt a line-padded region that starts at ``base_addr``."""
    if len(data) % LINE_BYTES:
        raise Misaligned("region length must be a whole number of lines")
    ks = range_keystream(key, iv, base_addr, len(data) // LINE_BYTES)
    return xor_bytes(data, ks)


def fixed_counter_region(key: SessionKey, iv: NonceBase, data: bytes) -> bytes:
    """Deliberately broken mode: every line reuses the keystream of line 0.

    Exists only to demonstrate XOR-cancellation leakage; never use it to
    protect data.
    """
    if len(data) % LINE_BYTES:
        raise Misaligned("region length must be a whole number of lines")
    ks = line_keystream(key, iv, 0) * (len(data) // LINE_BYTES)
    return xor_bytes(data, ks)
