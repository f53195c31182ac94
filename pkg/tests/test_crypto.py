"""Primitive layer: keys, signatures, envelopes, MACs, key derivation."""

import random

import pytest

from loraledger.crypto import (
    DecryptionError,
    ENVELOPE_OVERHEAD,
    KeyDirectory,
    KeyPair,
    ROLE_GATEWAY,
    ROLE_SERVER,
    UnknownEntityError,
    derive_session_keys,
    envelope_aad,
    generate_keypair,
    hash_bytes,
    mac32,
    pk_decrypt,
    pk_encrypt,
    sign,
    verify,
)

# Frozen expected values, computed with a standalone oracle: raw AES-ECB plus
# a hand-written RFC 4493 CMAC, itself checked against the published RFC
# vectors before these bytes were recorded.
MAC32_ABC = "0a54a6a4"
NWK_S_KEY = "698a830d6878f2fdf66edc2c4267cd63"
APP_S_KEY = "126403df5b4aa4d4f81124fa61514690"


def test_hash_is_sha256():
    """Empty-input SHA-256 is a published constant."""
    assert (
        hash_bytes(b"").hex()
        == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


def test_keypair_deterministic_per_seed():
    a = generate_keypair("gw0", 7)
    b = generate_keypair("gw0", 7)
    c = generate_keypair("gw0", 8)
    d = generate_keypair("gw1", 7)
    assert a.public_key == b.public_key and a.private_key == b.private_key
    assert a.public_key != c.public_key
    assert a.public_key != d.public_key


def test_keypair_roundtrip():
    kp = generate_keypair("srv0", 3)
    again = KeyPair.from_bytes(kp.to_bytes())
    assert again == kp


def test_sign_verify():
    kp = generate_keypair("gw0", 1)
    sig = sign(kp.private_key, b"hello")
    assert len(sig) == 64
    assert verify(kp.public_key, b"hello", sig)
    assert not verify(kp.public_key, b"hellO", sig)
    assert not verify(kp.public_key, b"hello", sig[:-1] + bytes([sig[-1] ^ 1]))
    other = generate_keypair("gw1", 1)
    assert not verify(other.public_key, b"hello", sig)


def test_signature_deterministic():
    kp = generate_keypair("gw0", 1)
    assert sign(kp.private_key, b"x") == sign(kp.private_key, b"x")


def test_envelope_roundtrip_and_overhead():
    kp = generate_keypair("srv0", 5)
    rng = random.Random(0)
    for size in (1, 16, 49, 200):
        data = bytes(rng.randrange(256) for _ in range(size))
        env = pk_encrypt(kp.public_key, data, rng)
        assert len(env) == size + ENVELOPE_OVERHEAD
        assert pk_decrypt(kp.private_key, env) == data


def test_envelope_rejects_empty_plaintext():
    kp = generate_keypair("srv0", 5)
    with pytest.raises(ValueError):
        pk_encrypt(kp.public_key, b"", random.Random(0))


def test_envelope_aad_readable_without_key_but_authenticated():
    kp = generate_keypair("gw2", 9)
    rng = random.Random(1)
    env = pk_encrypt(kp.public_key, b"secret-context", rng, aad=b"addr+eui")
    assert envelope_aad(env) == b"addr+eui"
    # flipping an AAD byte must break decryption even though AAD is cleartext
    idx = 32 + 12 + 2  # first AAD byte
    bad = env[:idx] + bytes([env[idx] ^ 1]) + env[idx + 1 :]
    assert envelope_aad(bad) != b"addr+eui"
    with pytest.raises(DecryptionError):
        pk_decrypt(kp.private_key, bad)


def test_envelope_tamper_detected_everywhere():
    """Any single-byte flip anywhere in the envelope fails decryption."""
    kp = generate_keypair("gw0", 2)
    env = pk_encrypt(kp.public_key, b"0123456789", random.Random(2), aad=b"a")
    rng = random.Random(3)
    for _ in range(40):
        idx = rng.randrange(len(env))
        bad = bytearray(env)
        bad[idx] ^= 1 + rng.randrange(255)
        with pytest.raises(DecryptionError):
            pk_decrypt(kp.private_key, bytes(bad))


def test_envelope_wrong_recipient():
    alice = generate_keypair("gw0", 4)
    bob = generate_keypair("gw1", 4)
    env = pk_encrypt(alice.public_key, b"for alice", random.Random(0))
    with pytest.raises(DecryptionError):
        pk_decrypt(bob.private_key, env)


def test_mac32_frozen_vector():
    assert mac32(bytes(range(16)), b"abc").hex() == MAC32_ABC


def test_mac32_key_and_message_sensitivity():
    key = bytes(range(16))
    base = mac32(key, b"abc")
    assert mac32(key, b"abd") != base
    assert mac32(bytes(16), b"abc") != base
    assert len(base) == 4


def test_derive_session_keys_frozen_vectors():
    nwk, app = derive_session_keys(
        bytes(range(16)),
        bytes.fromhex("010203"),
        bytes.fromhex("aabbcc"),
        bytes.fromhex("0102"),
    )
    assert nwk.hex() == NWK_S_KEY
    assert app.hex() == APP_S_KEY


def test_derive_session_keys_distinct_and_sensitive():
    args = (bytes(range(16)), b"\x01\x02\x03", b"\xaa\xbb\xcc", b"\x01\x02")
    nwk, app = derive_session_keys(*args)
    assert nwk != app
    nwk2, app2 = derive_session_keys(args[0], b"\x01\x02\x04", args[2], args[3])
    assert (nwk2, app2) != (nwk, app)
    nwk3, _ = derive_session_keys(args[0], args[1], args[2], b"\x01\x03")
    assert nwk3 != nwk


def test_key_directory():
    directory = KeyDirectory()
    gw = generate_keypair("gw0", 1)
    srv = generate_keypair("srv0", 1)
    directory.add("gw0", gw.public_key, ROLE_GATEWAY)
    directory.add("srv0", srv.public_key, ROLE_SERVER)
    assert "gw0" in directory and "nope" not in directory
    assert directory.public_key("srv0") == srv.public_key
    assert directory.role("gw0") == ROLE_GATEWAY
    assert directory.entities() == ["gw0", "srv0"]
    with pytest.raises(UnknownEntityError):
        directory.public_key("ghost")
    with pytest.raises(ValueError):
        directory.add("gw0", gw.public_key, ROLE_GATEWAY)
