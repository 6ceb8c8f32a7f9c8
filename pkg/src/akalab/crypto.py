"""Cryptographic primitives shared by every protocol variant.

All hash-like operations (the f-family, the ECIES KDF and tag, the anchor-key
derivation, and the plain tagged digests used for response hashing and key
confirmation) are realized as a single keyed-hash construction: HMAC-SHA-512
over length-prefixed fields with an ASCII purpose label, truncated to the
output length each purpose needs.  One invocation is one counted hash
operation, which keeps the per-party operation accounting unambiguous.

Curve arithmetic is delegated to the `cryptography` package (OpenSSL); the
suite never implements group operations itself.  secp256r1 is the default
curve; curve25519 is accepted as an alternative curve id.

Every suite instance owns an OpCounters and an RNG, so counters stay confined
to one session context and seeded runs reproduce byte-identical traffic.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from contextlib import contextmanager
from dataclasses import dataclass, fields

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

CHALLENGE_LEN = 32
TAG_LEN = 32
KEY_LEN = 32
SQN_LEN = 6  # 48-bit sequence counter

# f5/f5* produce the anonymity key that masks the 48-bit sequence number;
# every other purpose emits a full 32-byte value.
_F_OUT_LEN = {"5": SQN_LEN, "5*": SQN_LEN}
_F_TAGS = ("1", "2", "3", "4", "5", "1*", "5*")


class CryptoError(Exception):
    """Base class for failures raised by the crypto suite."""


class MacFailure(CryptoError):
    """Tag verification failed: tampering or a wrong key."""


class GroupElementError(CryptoError):
    """Byte string does not decode to a usable curve point."""


class UnsupportedCurve(CryptoError):
    """Curve id outside the supported set."""


@dataclass
class OpCounters:
    """Per-session operation tally, one field per cost category.

    ``rng_draws`` counts the draws a protocol charges to its random-generation
    budget (the per-session challenge draws).  The ephemeral draw inside the
    ECIES encapsulation is tracked separately in ``kem_rng_draws`` and stays
    outside the budget model; the baseline attach step charges its single KEM
    draw to ``rng_draws`` explicitly since that protocol's subscriber performs
    no other draw.
    """

    hash_ops: int = 0
    scalar_mults: int = 0
    sym_encs: int = 0
    sym_decs: int = 0
    xors: int = 0
    adds: int = 0
    rng_draws: int = 0
    kem_rng_draws: int = 0

    _paused: int = 0

    def bump(self, name: str, amount: int = 1) -> None:
        if self._paused:
            return
        setattr(self, name, getattr(self, name) + amount)

    @contextmanager
    def paused(self):
        """Suspend counting, e.g. for exchanges excluded from cost budgets."""
        self._paused += 1
        try:
            yield self
        finally:
            self._paused -= 1

    def snapshot(self) -> dict[str, int]:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if not f.name.startswith("_")
        }

    def reset(self) -> None:
        for f in fields(self):
            if not f.name.startswith("_"):
                setattr(self, f.name, 0)


@dataclass(frozen=True)
class SharedSecret:
    """Encapsulated secret, split into the cipher half and the tag half."""

    s1: bytes
    s2: bytes

    def __post_init__(self):
        if len(self.s1) != len(self.s2) or not self.s1:
            raise CryptoError("shared secret halves must be equal and nonzero")

    @property
    def raw(self) -> bytes:
        return self.s1 + self.s2


def _lp(data: bytes) -> bytes:
    """2-byte big-endian length prefix; disambiguates variable-width fields."""
    if len(data) > 0xFFFF:
        raise CryptoError("field too long for length-prefixed hashing")
    return len(data).to_bytes(2, "big") + data


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise CryptoError("xor operands must have equal length")
    return bytes(x ^ y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# curve backends


class _P256:
    """secp256r1 via the cryptography package, compressed 33-byte points."""

    name = "secp256r1"
    point_len = 33
    order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
    _curve = ec.SECP256R1()

    @classmethod
    def draw_scalar(cls, rng) -> int:
        while True:
            v = int.from_bytes(rng.randbytes(32), "big")
            if 1 <= v < cls.order:
                return v

    @classmethod
    def pub(cls, scalar: int) -> bytes:
        if not 1 <= scalar < cls.order:
            raise CryptoError("scalar outside [1, q)")
        priv = ec.derive_private_key(scalar, cls._curve)
        return priv.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint
        )

    @classmethod
    def load_point(cls, data: bytes) -> ec.EllipticCurvePublicKey:
        # X9.62 compressed form never encodes the identity, so a successful
        # decode is both the on-curve and the non-identity check.
        if len(data) != cls.point_len or data[0] not in (2, 3):
            raise GroupElementError("not a 33-byte compressed point")
        try:
            return ec.EllipticCurvePublicKey.from_encoded_point(cls._curve, data)
        except ValueError as exc:
            raise GroupElementError(f"point decode failed: {exc}") from exc

    @classmethod
    def shared(cls, scalar: int, point: bytes) -> bytes:
        peer = cls.load_point(point)
        priv = ec.derive_private_key(scalar, cls._curve)
        return priv.exchange(ec.ECDH(), peer)

    @classmethod
    def point_ok(cls, data: bytes) -> bool:
        try:
            cls.load_point(data)
            return True
        except GroupElementError:
            return False


class _X25519:
    """curve25519 alternative: raw 32-byte points, clamped scalars."""

    name = "curve25519"
    point_len = 32
    order = 2**252 + 27742317777372353535851937790883648493

    @classmethod
    def draw_scalar(cls, rng) -> int:
        return int.from_bytes(rng.randbytes(32), "little")

    @classmethod
    def _priv(cls, scalar: int) -> X25519PrivateKey:
        return X25519PrivateKey.from_private_bytes(scalar.to_bytes(32, "little"))

    @classmethod
    def pub(cls, scalar: int) -> bytes:
        return cls._priv(scalar).public_key().public_bytes_raw()

    @classmethod
    def shared(cls, scalar: int, point: bytes) -> bytes:
        if len(point) != cls.point_len:
            raise GroupElementError("not a 32-byte curve25519 point")
        try:
            # the library rejects all-zero shared output (small-order input)
            return cls._priv(scalar).exchange(X25519PublicKey.from_public_bytes(point))
        except ValueError as exc:
            raise GroupElementError(f"exchange rejected point: {exc}") from exc

    @classmethod
    def point_ok(cls, data: bytes) -> bool:
        return len(data) == cls.point_len

    @classmethod
    def load_point(cls, data: bytes):
        if len(data) != cls.point_len:
            raise GroupElementError("not a 32-byte curve25519 point")
        return X25519PublicKey.from_public_bytes(data)


_BACKENDS = {"secp256r1": _P256, "curve25519": _X25519}
DEFAULT_CURVE = "secp256r1"


def point_is_valid(data: bytes, curve: str = DEFAULT_CURVE) -> bool:
    """On-curve, non-identity check for an encoded group element."""
    backend = _BACKENDS.get(curve)
    if backend is None:
        raise UnsupportedCurve(curve)
    return backend.point_ok(data)


def point_len(curve: str = DEFAULT_CURVE) -> int:
    backend = _BACKENDS.get(curve)
    if backend is None:
        raise UnsupportedCurve(curve)
    return backend.point_len


class CryptoSuite:
    """Instrumented primitive set bound to one session's counters and RNG."""

    def __init__(self, curve: str = DEFAULT_CURVE, rng=None, counters=None):
        backend = _BACKENDS.get(curve)
        if backend is None:
            raise UnsupportedCurve(curve)
        self.curve = curve
        self._backend = backend
        self.rng = rng if rng is not None else random.SystemRandom()
        self.counters = counters if counters is not None else OpCounters()

    # -- hashing core ------------------------------------------------------

    def _keyed(self, purpose: bytes, key: bytes, fields_: tuple, out_len: int) -> bytes:
        self.counters.bump("hash_ops")
        mac = hmac.new(key, digestmod=hashlib.sha512)
        mac.update(_lp(purpose))
        for field in fields_:
            mac.update(_lp(field))
        return mac.digest()[:out_len]

    def f(self, tag: str, key: bytes, *fields_: bytes) -> bytes:
        """Keyed derivation family; per-tag prefix gives domain separation."""
        if tag not in _F_TAGS:
            raise CryptoError(f"unknown f tag {tag!r}")
        out = _F_OUT_LEN.get(tag, KEY_LEN)
        return self._keyed(b"f" + tag.encode(), key, fields_, out)

    def kdf_anchor(self, *fields_: bytes) -> bytes:
        """Anchor-key derivation: a single counted keyed-hash invocation."""
        return self._keyed(b"anchor", b"", fields_, KEY_LEN)

    def digest(self, purpose: str, *fields_: bytes) -> bytes:
        """Tagged unkeyed hash for response hashing and confirmation tags."""
        return self._keyed(purpose.encode(), b"", fields_, TAG_LEN)

    # -- randomness ----------------------------------------------------------

    def draw_challenge(self) -> bytes:
        """Fresh 32-byte protocol challenge; charged to the rng budget."""
        self.counters.bump("rng_draws")
        return self.rng.randbytes(CHALLENGE_LEN)

    def scalar_from_bytes(self, seed: bytes) -> int:
        """Map a uniform byte string to an exponent in [1, q).

        Deterministic encoding conversion, deliberately outside the operation
        counts: the protocols charge the draw of ``seed`` itself.
        """
        h = hashlib.sha512(b"exponent" + seed).digest()
        return int.from_bytes(h, "big") % (self._backend.order - 1) + 1

    # -- KEM -----------------------------------------------------------------

    def keygen(self) -> tuple[int, bytes]:
        """Static key pair (setup-time; the draw is not session-charged)."""
        sk = self._backend.draw_scalar(self.rng)
        self.counters.bump("scalar_mults")
        return sk, self._backend.pub(sk)

    def encap(self, pk: bytes) -> tuple[bytes, SharedSecret, int]:
        """Encapsulate to ``pk``: returns (C0, shared secret, ephemeral).

        The ephemeral exponent is returned so the PFS variant can reuse it as
        its DH secret; callers must discard it once done.
        """
        eph = self._backend.draw_scalar(self.rng)
        self.counters.bump("kem_rng_draws")
        c0 = self._backend.pub(eph)
        self.counters.bump("scalar_mults", 2)
        raw = self._backend.shared(eph, pk)
        ks = self._kdf_kem(raw)
        return c0, ks, eph

    def decap(self, sk: int, c0: bytes) -> SharedSecret:
        raw = self._backend.shared(sk, c0)
        self.counters.bump("scalar_mults")
        return self._kdf_kem(raw)

    def _kdf_kem(self, shared_point: bytes) -> SharedSecret:
        okm = self._keyed(b"kem kdf", b"", (shared_point,), 2 * KEY_LEN)
        return SharedSecret(okm[:KEY_LEN], okm[KEY_LEN:])

    # -- DEM -----------------------------------------------------------------

    def _stream(self, key: bytes, data: bytes) -> bytes:
        # stream cipher with no internal tag: authenticity is the DEM tag's
        # job, so encryption and decryption each count exactly once
        cipher = Cipher(algorithms.AES(key), modes.CTR(b"\x00" * 16))
        return cipher.encryptor().update(data)

    def senc(self, ks: SharedSecret, m: bytes) -> tuple[bytes, bytes]:
        if not m:
            raise CryptoError("refusing to encrypt an empty message")
        self.counters.bump("sym_encs")
        c1 = self._stream(ks.s1, m)
        tag = self._keyed(b"kem tag", ks.s2, (c1,), TAG_LEN)
        return c1, tag

    def sdec(self, ks: SharedSecret, c1: bytes, tag: bytes) -> bytes:
        # verify-then-decrypt: a bad tag costs one hash and nothing else
        expect = self._keyed(b"kem tag", ks.s2, (c1,), TAG_LEN)
        if not hmac.compare_digest(expect, tag):
            raise MacFailure("ciphertext tag mismatch")
        self.counters.bump("sym_decs")
        return self._stream(ks.s1, c1)

    # -- DH ------------------------------------------------------------------

    def dh_pub(self, x: int) -> bytes:
        self.counters.bump("scalar_mults")
        return self._backend.pub(x)

    def dh_shared(self, x: int, y_point: bytes) -> bytes:
        shared = self._backend.shared(x, y_point)
        self.counters.bump("scalar_mults")
        return shared

    # -- misc ------------------------------------------------------------------

    def xor(self, a: bytes, b: bytes) -> bytes:
        self.counters.bump("xors")
        return xor_bytes(a, b)


def encode_sqn(value: int) -> bytes:
    if not 0 <= value < 1 << 48:
        raise CryptoError("sequence number outside 48-bit range")
    return value.to_bytes(SQN_LEN, "big")


def decode_sqn(data: bytes) -> int:
    if len(data) != SQN_LEN:
        raise CryptoError("sequence number encoding must be 6 bytes")
    return int.from_bytes(data, "big")


def derive_rng(seed: int | None, *labels) -> random.Random:
    """Deterministic child RNG for a (seed, role, ...) path; fresh entropy
    when no seed is given."""
    if seed is None:
        return random.SystemRandom()
    h = hashlib.sha256(repr((seed,) + labels).encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


def child_seed(seed: int | None, *labels) -> int | None:
    """Derived integer seed for an independent sub-experiment."""
    if seed is None:
        return None
    h = hashlib.sha256(repr((seed,) + labels).encode()).digest()
    return int.from_bytes(h[8:16], "big")


def fingerprint(key: bytes) -> str:
    """Loggable 8-byte digest of an anchor key; never the key itself."""
    return hashlib.sha256(b"fingerprint" + key).hexdigest()[:16]
