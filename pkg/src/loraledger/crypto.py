"""Cryptographic primitives for the ledger and the LoRa frame layer.

Every operation is deterministic given its inputs; randomness is always
supplied by the caller as a seeded ``random.Random`` so that simulation runs
replay byte-identically.  Key pairs bundle a signing key and an encryption
key; both public/private halves travel as opaque byte strings.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from random import Random

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.cmac import CMAC
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

DIGEST_LEN = 32
SYM_KEY_LEN = 16
MIC_LEN = 4
SIGNATURE_LEN = 64

# public_key = ed25519 verify key (32) || x25519 public key (32)
# private_key = ed25519 seed (32) || x25519 private scalar (32)
_KEY_HALF = 32
KEY_LEN = 2 * _KEY_HALF

_ENVELOPE_NONCE_LEN = 12
_ENVELOPE_TAG_LEN = 16
ENVELOPE_OVERHEAD = _KEY_HALF + _ENVELOPE_NONCE_LEN + 2 + _ENVELOPE_TAG_LEN


class CryptoError(Exception):
    """Base class for failures raised by this module."""


class BadKeyError(CryptoError):
    """A key had the wrong length or structure."""


class DecryptionError(CryptoError):
    """An authenticated envelope failed to open (wrong key or tampering)."""


class UnknownEntityError(CryptoError):
    """An entity id has no registered public key."""


@dataclass(frozen=True)
class KeyPair:
    """Signing + encryption key material owned by one named entity."""

    entity_id: str
    public_key: bytes
    private_key: bytes

    def __post_init__(self) -> None:
        if len(self.public_key) != KEY_LEN or len(self.private_key) != KEY_LEN:
            raise BadKeyError("key halves must each be %d bytes" % KEY_LEN)

    def to_bytes(self) -> bytes:
        ident = self.entity_id.encode("utf-8")
        return b"".join(
            [
                struct.pack("<H", len(ident)),
                ident,
                struct.pack("<H", len(self.public_key)),
                self.public_key,
                struct.pack("<H", len(self.private_key)),
                self.private_key,
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyPair":
        try:
            offset = 0
            (id_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            ident = data[offset : offset + id_len].decode("utf-8")
            offset += id_len
            (pub_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            public = data[offset : offset + pub_len]
            offset += pub_len
            (priv_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            private = data[offset : offset + priv_len]
            offset += priv_len
            if offset != len(data) or len(public) != pub_len or len(private) != priv_len:
                raise BadKeyError("truncated or oversized key pair encoding")
        except struct.error as exc:
            raise BadKeyError("truncated key pair encoding") from exc
        return cls(entity_id=ident, public_key=public, private_key=private)


def hash_bytes(data: bytes) -> bytes:
    """32-byte digest used for Merkle nodes, block links, and vote subjects."""
    return hashlib.sha256(data).digest()


def generate_keypair(entity_id: str, seed: int) -> KeyPair:
    """Derive a key pair deterministically; same (entity_id, seed) -> same pair."""
    base = str(seed).encode("ascii")
    sign_seed = hashlib.sha256(b"keygen.sign\x00" + entity_id.encode("utf-8") + base).digest()
    enc_seed = hashlib.sha256(b"keygen.encrypt\x00" + entity_id.encode("utf-8") + base).digest()
    sign_key = Ed25519PrivateKey.from_private_bytes(sign_seed)
    enc_key = X25519PrivateKey.from_private_bytes(enc_seed)
    raw = serialization.Encoding.Raw
    pub = sign_key.public_key().public_bytes(raw, serialization.PublicFormat.Raw)
    pub += enc_key.public_key().public_bytes(raw, serialization.PublicFormat.Raw)
    return KeyPair(entity_id=entity_id, public_key=pub, private_key=sign_seed + enc_seed)


def _split_public(public_key: bytes) -> tuple[bytes, bytes]:
    if len(public_key) != KEY_LEN:
        raise BadKeyError("public key must be %d bytes" % KEY_LEN)
    return public_key[:_KEY_HALF], public_key[_KEY_HALF:]


def _split_private(private_key: bytes) -> tuple[bytes, bytes]:
    if len(private_key) != KEY_LEN:
        raise BadKeyError("private key must be %d bytes" % KEY_LEN)
    return private_key[:_KEY_HALF], private_key[_KEY_HALF:]


def sign(private_key: bytes, message: bytes) -> bytes:
    """Sign a message; 64-byte signature, deterministic for a fixed key."""
    seed, _ = _split_private(private_key)
    return Ed25519PrivateKey.from_private_bytes(seed).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    verify_half, _ = _split_public(public_key)
    if len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(verify_half).verify(signature, message)
    except InvalidSignature:
        return False
    return True


def _envelope_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=SYM_KEY_LEN,
        salt=None,
        info=b"envelope\x00" + eph_pub + recipient_pub,
    ).derive(shared)


def pk_encrypt(public_key: bytes, data: bytes, rng: Random, aad: bytes = b"") -> bytes:
    """Seal data to a public key (hybrid envelope).

    Layout: ephemeral_pub(32) | nonce(12) | aad_len(u16 LE) | aad | ciphertext+tag.
    The aad travels in clear but is bound by the authentication tag, so a
    holder of the envelope can read it while any modification is detected on
    decryption.  Only the matching private key opens the envelope.
    """
    if not data:
        raise ValueError("refusing to seal an empty payload")
    if len(aad) > 0xFFFF:
        raise ValueError("associated data too long")
    _, recipient_enc = _split_public(public_key)
    eph = X25519PrivateKey.from_private_bytes(rng.randbytes(_KEY_HALF))
    eph_pub = eph.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient_enc))
    key = _envelope_key(shared, eph_pub, recipient_enc)
    nonce = rng.randbytes(_ENVELOPE_NONCE_LEN)
    sealed = AESGCM(key).encrypt(nonce, data, aad)
    return eph_pub + nonce + struct.pack("<H", len(aad)) + aad + sealed


def envelope_aad(envelope: bytes) -> bytes:
    """Read the clear associated data of an envelope without decrypting it."""
    header = _KEY_HALF + _ENVELOPE_NONCE_LEN
    if len(envelope) < header + 2:
        raise DecryptionError("envelope too short")
    (aad_len,) = struct.unpack_from("<H", envelope, header)
    aad = envelope[header + 2 : header + 2 + aad_len]
    if len(aad) != aad_len:
        raise DecryptionError("envelope truncated inside associated data")
    return aad


def pk_decrypt(private_key: bytes, envelope: bytes) -> bytes:
    """Open an envelope; raises DecryptionError on wrong key or any tampering."""
    _, enc_scalar = _split_private(private_key)
    header = _KEY_HALF + _ENVELOPE_NONCE_LEN
    aad = envelope_aad(envelope)
    eph_pub = envelope[:_KEY_HALF]
    nonce = envelope[_KEY_HALF:header]
    sealed = envelope[header + 2 + len(aad) :]
    if len(sealed) < _ENVELOPE_TAG_LEN:
        raise DecryptionError("envelope truncated before tag")
    own = X25519PrivateKey.from_private_bytes(enc_scalar)
    recipient_pub = own.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    try:
        shared = own.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    except ValueError as exc:
        raise DecryptionError("malformed ephemeral key") from exc
    key = _envelope_key(shared, eph_pub, recipient_pub)
    try:
        return AESGCM(key).decrypt(nonce, sealed, aad)
    except InvalidTag as exc:
        raise DecryptionError("envelope failed authentication") from exc


def mac32(key: bytes, message: bytes) -> bytes:
    """4-byte message integrity code (CMAC truncated), as used by LoRa frames."""
    if len(key) != SYM_KEY_LEN:
        raise BadKeyError("MIC key must be %d bytes" % SYM_KEY_LEN)
    mac = CMAC(algorithms.AES(key))
    mac.update(message)
    return mac.finalize()[:MIC_LEN]


def aes128_encrypt_block(key: bytes, block: bytes) -> bytes:
    """Encrypt exactly one 16-byte block (building block for key derivation)."""
    if len(key) != SYM_KEY_LEN:
        raise BadKeyError("block cipher key must be %d bytes" % SYM_KEY_LEN)
    if len(block) != 16:
        raise ValueError("block must be 16 bytes")
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def aes128_decrypt_block(key: bytes, block: bytes) -> bytes:
    if len(key) != SYM_KEY_LEN:
        raise BadKeyError("block cipher key must be %d bytes" % SYM_KEY_LEN)
    if len(block) != 16:
        raise ValueError("block must be 16 bytes")
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    return dec.update(block) + dec.finalize()


def derive_session_keys(
    app_key: bytes, app_nonce: bytes, net_id: bytes, dev_nonce: bytes
) -> tuple[bytes, bytes]:
    """Derive (network session key, application session key) after a join.

    Each key is one AES block over a type byte (0x01 network / 0x02
    application) followed by app_nonce(3) | net_id(3) | dev_nonce(2) and zero
    padding to 16 bytes, keyed by the device's root key.
    """
    if len(app_key) != SYM_KEY_LEN:
        raise ValueError("root key must be %d bytes" % SYM_KEY_LEN)
    if len(app_nonce) != 3 or len(net_id) != 3 or len(dev_nonce) != 2:
        raise ValueError("nonce/net id field lengths must be 3/3/2 bytes")
    tail = app_nonce + net_id + dev_nonce + b"\x00" * 7
    nwk_s_key = aes128_encrypt_block(app_key, b"\x01" + tail)
    app_s_key = aes128_encrypt_block(app_key, b"\x02" + tail)
    return nwk_s_key, app_s_key


#: roles an entity can hold in the key directory
ROLE_GATEWAY = "gateway"
ROLE_SERVER = "server"


class KeyDirectory:
    """Registry of entity public keys and roles, shared by all honest nodes."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[bytes, str]] = {}

    def add(self, entity_id: str, public_key: bytes, role: str) -> None:
        if len(public_key) != KEY_LEN:
            raise BadKeyError("public key must be %d bytes" % KEY_LEN)
        if role not in (ROLE_GATEWAY, ROLE_SERVER):
            raise ValueError("unknown role: %r" % role)
        if entity_id in self._entries:
            raise ValueError("entity %r already registered" % entity_id)
        self._entries[entity_id] = (public_key, role)

    def public_key(self, entity_id: str) -> bytes:
        try:
            return self._entries[entity_id][0]
        except KeyError:
            raise UnknownEntityError("no public key registered for %r" % entity_id) from None

    def role(self, entity_id: str) -> str:
        try:
            return self._entries[entity_id][1]
        except KeyError:
            raise UnknownEntityError("no role registered for %r" % entity_id) from None

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entries

    def entities(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> list[tuple[str, bytes, str]]:
        return [(eid, pub, role) for eid, (pub, role) in sorted(self._entries.items())]
