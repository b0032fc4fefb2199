"""Device identity, model-key sealing, and the enclave that provisions the ICE.

The sealed payload is ``k_msk (32 B) || SHA-256(app certificate) (32 B)``
encrypted with RSAES-OAEP (SHA-256, MGF1-SHA-256, empty label) under the
device public key.  The model nonce rides next to the OAEP ciphertext in
the clear: it has to be unique, not secret.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .crypto import KEY_BYTES, NONCE_BYTES, NonceBase, SessionKey
from .errors import (
    AppBindingMismatch,
    OaepDecodeFailure,
    RsaEncryptFailure,
    BadVersion,
    TruncatedFile,
    UnsupportedKeySize,
)

SUPPORTED_RSA_BITS = (2048, 4096)
BLOB_VERSION = 1
BLOB_HEADER = struct.Struct("<HH12s")
PAYLOAD_BYTES = KEY_BYTES + 32


def _oaep() -> padding.OAEP:
    return padding.OAEP(mgf=padding.MGF1(hashes.SHA256()), algorithm=hashes.SHA256(), label=None)


@dataclass(frozen=True)
class AppIdentity:
    """A code-signing certificate, treated as opaque bytes."""

    cert_bytes: bytes

    @property
    def h_app(self) -> bytes:
        return hashlib.sha256(self.cert_bytes).digest()


@dataclass(frozen=True)
class KeyBlob:
    rsa_bits: int
    iv: NonceBase
    ciphertext: bytes
    version: int = BLOB_VERSION

    def to_bytes(self) -> bytes:
        return BLOB_HEADER.pack(self.version, self.rsa_bits, self.iv.value) + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyBlob":
        if len(data) < BLOB_HEADER.size:
            raise TruncatedFile("key blob shorter than its header")
        version, bits, iv = BLOB_HEADER.unpack_from(data)
        if version != BLOB_VERSION:
            raise BadVersion(f"unsupported key blob version {version}")
        if bits not in SUPPORTED_RSA_BITS:
            raise UnsupportedKeySize(f"key blob declares {bits}-bit RSA")
        body = data[BLOB_HEADER.size :]
        if len(body) != bits // 8:
            raise TruncatedFile(f"key blob carries {len(body)} ciphertext bytes, expected {bits // 8}")
        return cls(rsa_bits=bits, iv=NonceBase(iv), ciphertext=body, version=version)

    def with_byte_flipped(self, pos: int, mask: int = 0xFF) -> "KeyBlob":
        ct = bytearray(self.ciphertext)
        ct[pos] ^= mask
        return KeyBlob(self.rsa_bits, self.iv, bytes(ct), self.version)


@dataclass
class ProvisioningReceipt:
    rsa_bits: int
    h_app: bytes
    nonce: bytes


class IceRegisters:
    """Key and nonce registers inside the inline crypto engine.

    Only the enclave writes them; the preemption hook clears them.
    """

    def __init__(self):
        self.key = SessionKey(bytes(KEY_BYTES))
        self.key.clear()
        self.nonce = bytearray(NONCE_BYTES)

    @property
    def armed(self) -> bool:
        return self.key.live

    def load(self, key: bytes, nonce: NonceBase) -> None:
        self.key = SessionKey(key)
        self.nonce[:] = nonce.value

    def iv(self) -> NonceBase:
        return NonceBase(bytes(self.nonce))

    def clear(self) -> None:
        self.key.clear()
        self.nonce[:] = bytes(NONCE_BYTES)

    def is_zero(self) -> bool:
        return not any(self.key.peek()) and not any(self.nonce)


class EnclaveState:
    """Secure-world holder of the device private key.

    ``sk_dev`` never leaves this object except through ``export_efuse``,
    which models the factory fuse-programming step and writes to the
    enclave-private store, not to anything the host OS reads.
    """

    def __init__(self, private_key: rsa.RSAPrivateKey):
        self._sk = private_key
        self.secure_world = True
        self.log: list[dict] = []

    @property
    def public_key(self) -> rsa.RSAPublicKey:
        return self._sk.public_key()

    @property
    def rsa_bits(self) -> int:
        return self._sk.key_size

    def export_efuse(self) -> bytes:
        return self._sk.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    @classmethod
    def from_efuse(cls, pem: bytes) -> "EnclaveState":
        sk = serialization.load_pem_private_key(pem, password=None)
        if not isinstance(sk, rsa.RSAPrivateKey) or sk.key_size not in SUPPORTED_RSA_BITS:
            raise UnsupportedKeySize("efuse store does not hold a supported RSA key")
        return cls(sk)

    def _unseal(self, blob: KeyBlob) -> tuple[bytes, bytes]:
        if blob.rsa_bits != self.rsa_bits or len(blob.ciphertext) != self.rsa_bits // 8:
            raise OaepDecodeFailure("blob was not sealed for this device's key size")
        try:
            payload = self._sk.decrypt(blob.ciphertext, _oaep())
        except ValueError as exc:
            raise OaepDecodeFailure("OAEP decoding failed") from exc
        if len(payload) != PAYLOAD_BYTES:
            raise OaepDecodeFailure(f"unsealed payload is {len(payload)} bytes")
        return payload[:KEY_BYTES], payload[KEY_BYTES:]


@dataclass
class DeviceIdentity:
    pk_dev: rsa.RSAPublicKey
    enclave: EnclaveState = field(repr=False)

    @property
    def bits(self) -> int:
        return self.pk_dev.key_size

    def public_pem(self) -> bytes:
        return public_pem(self.pk_dev)


def public_pem(pk: rsa.RSAPublicKey) -> bytes:
    return pk.public_bytes(serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo)


def load_public_pem(pem: bytes) -> rsa.RSAPublicKey:
    pk = serialization.load_pem_public_key(pem)
    if not isinstance(pk, rsa.RSAPublicKey):
        raise UnsupportedKeySize("device public key is not RSA")
    return pk


def generate_device_identity(bits: int = 2048) -> DeviceIdentity:
    if bits not in SUPPORTED_RSA_BITS:
        raise UnsupportedKeySize(f"RSA-{bits} not supported; use one of {SUPPORTED_RSA_BITS}")
    sk = rsa.generate_private_key(public_exponent=65537, key_size=bits)
    return DeviceIdentity(pk_dev=sk.public_key(), enclave=EnclaveState(sk))


def seal_model_key(pk_dev: rsa.RSAPublicKey, k_msk: SessionKey, app: AppIdentity, iv: NonceBase) -> KeyBlob:
    payload = k_msk.raw + app.h_app
    try:
        ct = pk_dev.encrypt(payload, _oaep())
    except ValueError as exc:
        raise RsaEncryptFailure(str(exc)) from exc
    return KeyBlob(rsa_bits=pk_dev.key_size, iv=iv, ciphertext=ct)


def unseal_and_provision(
    enclave: EnclaveState, blob: KeyBlob, caller: AppIdentity, ice: IceRegisters
) -> ProvisioningReceipt:
    """Unseal ``blob`` and arm ``ice`` if ``caller`` is the bound application.

    On any failure the ICE registers are left exactly as they were.
    """
    try:
        k_msk, h_app = enclave._unseal(blob)
    except OaepDecodeFailure:
        enclave.log.append({"event": "abort", "reason": "oaep"})
        raise
    if not hmac.compare_digest(caller.h_app, h_app):
        enclave.log.append({"event": "abort", "reason": "app-binding"})
        raise AppBindingMismatch("caller certificate hash does not match the sealed application hash")
    ice.load(k_msk, blob.iv)
    enclave.log.append({"event": "provisioned", "h_app": h_app.hex()})
    return ProvisioningReceipt(rsa_bits=blob.rsa_bits, h_app=h_app, nonce=blob.iv.value)


def find_key_material(key: bytes, *artifacts: bytes) -> list[tuple[int, int]]:
    """(artifact index, offset) of every occurrence of ``key`` in ``artifacts``."""
    hits = []
    for i, art in enumerate(artifacts):
        start = art.find(key)
        while start != -1:
            hits.append((i, start))
            start = art.find(key, start + 1)
    return hits
