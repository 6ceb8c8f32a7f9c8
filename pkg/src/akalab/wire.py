"""On-wire message types, serialization, and framing for all protocols.

Frame layout (big-endian throughout)::

    length   4 bytes   covers version through body
    version  1 byte    currently 1
    msg_type 1 byte    see the registry below
    proto    1 byte    0 = baseline, 1 = stateless variant, 2 = PFS variant
    session  16 bytes  constant within one run; binds the SN<->HN leg
    body     N bytes   fields in declaration order, fixed-width fields raw,
                       variable-width fields behind a 2-byte length prefix

Encoding is deterministic and strict both ways: invariant violations refuse
to encode, and decode rejects truncation, trailing bytes, unknown types, and
malformed points with an offset-carrying DecodeError.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields

from . import PROTOCOL_BASELINE, PROTOCOL_P1, PROTOCOL_P2
from .crypto import SQN_LEN, TAG_LEN, point_is_valid

VERSION = 1
SESSION_ID_LEN = 16
MAX_IDENTITY_LEN = 64
POINT_LEN = 33

RES_KIND = 0
MAC_FAILURE_KIND = 1
SYNC_FAILURE_KIND = 2


class EncodeError(Exception):
    """Message violates a field invariant and cannot be serialized."""


class DecodeError(Exception):
    """Byte string is not a well-formed frame."""

    def __init__(self, offset: int, reason: str):
        self.offset = offset
        self.reason = reason
        super().__init__(f"offset {offset}: {reason}")


# ---------------------------------------------------------------------------
# composite field types


@dataclass(frozen=True)
class Suci:
    """Concealed subscriber identity: KEM share, ciphertext, and tag."""

    c0: bytes
    c1: bytes
    mac: bytes


@dataclass(frozen=True)
class Autn:
    """Authentication token: concealed sequence number plus its MAC."""

    conc: bytes
    mac: bytes


# ---------------------------------------------------------------------------
# message kinds


@dataclass(frozen=True)
class AttachRequest:
    suci: Suci
    id_hn: str


@dataclass(frozen=True)
class SnToHnAttach:
    suci: Suci
    id_hn: str
    id_sn: str


@dataclass(frozen=True)
class HnChallenge:
    r: bytes
    autn: Autn
    hxres: bytes
    k_seaf: bytes


@dataclass(frozen=True)
class SnChallenge:
    r: bytes
    autn: Autn


@dataclass(frozen=True)
class UeResponse:
    """Subscriber reaction to a challenge: response, MAC failure, or sync
    failure carrying the resync token."""

    kind: int
    res: bytes = b""
    autn_resync: Autn | None = None


@dataclass(frozen=True)
class SnResult:
    res: bytes


@dataclass(frozen=True)
class HnResult:
    supi: str


@dataclass(frozen=True)
class ResyncForward:
    autn_resync: Autn
    r: bytes
    suci: Suci


@dataclass(frozen=True)
class KeyConfirmRequest:
    mac: bytes


@dataclass(frozen=True)
class KeyConfirmResponse:
    mac: bytes


@dataclass(frozen=True)
class M1:
    suci: Suci
    mac: bytes
    id_hn: str


@dataclass(frozen=True)
class M2:
    suci: Suci
    mac: bytes
    id_hn: str
    id_sn: str


@dataclass(frozen=True)
class M3:
    hxres_star: bytes
    mac_star: bytes
    xr: bytes
    share: bytes
    k_seaf: bytes


@dataclass(frozen=True)
class M4:
    mac_star: bytes
    share: bytes
    id_sn: str


@dataclass(frozen=True)
class M5:
    kcmac: bytes
    res_star: bytes
    id_sn: str


@dataclass(frozen=True)
class M6:
    kcmac: bytes
    res_star: bytes
    share: bytes


@dataclass(frozen=True)
class M7:
    supi: str
    suci: Suci


@dataclass(frozen=True)
class SessionResult:
    """Service-level completion notice toward the subscriber; carries the
    relay's count of protocol frames for the whole session."""

    outcome: str
    frames: int = 0


@dataclass(frozen=True)
class TransientFailure:
    reason: str


@dataclass(frozen=True)
class ProtocolError:
    reason: str


@dataclass(frozen=True)
class Abort:
    """In-band teardown on the secure leg; carries no protocol data."""

    reason: str


# message registry: type code, allowed protocol ids, field layout
_BASE = frozenset({PROTOCOL_BASELINE})
_P12 = frozenset({PROTOCOL_P1, PROTOCOL_P2})
_ANY = frozenset({PROTOCOL_BASELINE, PROTOCOL_P1, PROTOCOL_P2})

_REGISTRY = {
    AttachRequest: (0x01, _BASE, (("suci", "suci"), ("id_hn", "str"))),
    SnToHnAttach: (0x02, _BASE, (("suci", "suci"), ("id_hn", "str"), ("id_sn", "str"))),
    HnChallenge: (
        0x03,
        _BASE,
        (("r", "b32"), ("autn", "autn"), ("hxres", "b32"), ("k_seaf", "b32")),
    ),
    SnChallenge: (0x04, _BASE, (("r", "b32"), ("autn", "autn"))),
    UeResponse: (0x05, _BASE, (("kind", "resp"),)),
    SnResult: (0x06, _BASE, (("res", "b32"),)),
    HnResult: (0x07, _BASE, (("supi", "str"),)),
    ResyncForward: (
        0x08,
        _BASE,
        (("autn_resync", "autn"), ("r", "b32"), ("suci", "suci")),
    ),
    KeyConfirmRequest: (0x09, _BASE, (("mac", "b32"),)),
    KeyConfirmResponse: (0x0A, _BASE, (("mac", "b32"),)),
    M1: (0x11, _P12, (("suci", "suci"), ("mac", "b32"), ("id_hn", "str"))),
    M2: (
        0x12,
        _P12,
        (("suci", "suci"), ("mac", "b32"), ("id_hn", "str"), ("id_sn", "str")),
    ),
    M3: (
        0x13,
        _P12,
        (
            ("hxres_star", "b32"),
            ("mac_star", "b32"),
            ("xr", "b32"),
            ("share", "share"),
            ("k_seaf", "b32"),
        ),
    ),
    M4: (0x14, _P12, (("mac_star", "b32"), ("share", "share"), ("id_sn", "str"))),
    M5: (0x15, _P12, (("kcmac", "b32"), ("res_star", "b32"), ("id_sn", "str"))),
    M6: (0x16, _P12, (("kcmac", "b32"), ("res_star", "b32"), ("share", "share"))),
    M7: (0x17, _P12, (("supi", "str"), ("suci", "suci"))),
    SessionResult: (0x41, _ANY, (("outcome", "str"), ("frames", "u16"))),
    TransientFailure: (0x42, _ANY, (("reason", "str"),)),
    ProtocolError: (0x43, _ANY, (("reason", "str"),)),
    Abort: (0x44, _ANY, (("reason", "str"),)),
}

_BY_CODE = {code: (cls, allowed, layout) for cls, (code, allowed, layout) in _REGISTRY.items()}

PROTOCOL_IDS_VALID = (PROTOCOL_BASELINE, PROTOCOL_P1, PROTOCOL_P2)

ProtocolMessage = tuple(_REGISTRY)  # for isinstance checks

CONTROL_KINDS = (SessionResult, TransientFailure, ProtocolError, Abort)


def is_protocol_frame(msg) -> bool:
    """Protocol messages count toward transcripts' frame budgets; service
    control frames do not."""
    return not isinstance(msg, CONTROL_KINDS)


def carries_anchor_key(msg) -> bool:
    """Kinds that must never traverse an open channel."""
    return isinstance(msg, (HnChallenge, M3))


@dataclass(frozen=True)
class FrameMeta:
    protocol_id: int
    session_id: bytes
    version: int = VERSION


# ---------------------------------------------------------------------------
# encoding


def _need(cond: bool, why: str) -> None:
    if not cond:
        raise EncodeError(why)


def _enc_str(value: str) -> bytes:
    _need(isinstance(value, str) and value != "", "identity must be a nonempty string")
    raw = value.encode("utf-8")
    _need(len(raw) <= MAX_IDENTITY_LEN, "identity exceeds 64 bytes")
    return len(raw).to_bytes(2, "big") + raw

def _enc_b32(value: bytes) -> bytes:
    _need(isinstance(value, (bytes, bytearray)) and len(value) == TAG_LEN, "field must be 32 bytes")
    return bytes(value)


def _enc_suci(value: Suci) -> bytes:
    _need(isinstance(value, Suci), "expected a Suci")
    _need(point_is_valid(value.c0), "SUCI share must decode to a curve point")
    _need(0 < len(value.c1) <= 0xFFFF, "SUCI ciphertext empty or oversized")
    _need(len(value.mac) == TAG_LEN, "SUCI tag must be 32 bytes")
    return value.c0 + len(value.c1).to_bytes(2, "big") + value.c1 + value.mac


def _enc_autn(value: Autn) -> bytes:
    _need(isinstance(value, Autn), "expected an Autn")
    _need(len(value.conc) == SQN_LEN, "concealed counter must be 6 bytes")
    _need(len(value.mac) == TAG_LEN, "token MAC must be 32 bytes")
    return value.conc + value.mac


def _enc_share(value: bytes, protocol_id: int) -> bytes:
    # the challenge share is a 32-byte nonce on protocol 1 and a group
    # element on protocol 2; a raw scalar must never ride this field
    if protocol_id == PROTOCOL_P2:
        _need(len(value) == POINT_LEN and point_is_valid(value),
              "protocol 2 share must be an encoded curve point")
    else:
        _need(len(value) == TAG_LEN, "protocol 1 share must be a 32-byte nonce")
    return len(value).to_bytes(2, "big") + value


def _enc_resp(msg: UeResponse) -> bytes:
    if msg.kind == RES_KIND:
        _need(len(msg.res) == TAG_LEN, "challenge response must be 32 bytes")
        _need(msg.autn_resync is None, "response variant carries no resync token")
        return bytes([RES_KIND]) + msg.res
    if msg.kind == MAC_FAILURE_KIND:
        _need(msg.res == b"" and msg.autn_resync is None,
              "MAC-failure variant carries no payload")
        return bytes([MAC_FAILURE_KIND])
    if msg.kind == SYNC_FAILURE_KIND:
        _need(msg.res == b"", "sync-failure variant carries no response")
        _need(msg.autn_resync is not None, "sync-failure variant needs a resync token")
        return bytes([SYNC_FAILURE_KIND]) + _enc_autn(msg.autn_resync)
    raise EncodeError(f"unknown response variant {msg.kind}")


def encode(msg, meta: FrameMeta) -> bytes:
    """Serialize one message into a framed byte string."""
    entry = _REGISTRY.get(type(msg))
    if entry is None:
        raise EncodeError(f"unregistered message type {type(msg).__name__}")
    code, allowed, layout = entry
    if meta.protocol_id not in PROTOCOL_IDS_VALID:
        raise EncodeError(f"unknown protocol id {meta.protocol_id}")
    if meta.protocol_id not in allowed:
        raise EncodeError(
            f"{type(msg).__name__} not valid under protocol {meta.protocol_id}")
    if len(meta.session_id) != SESSION_ID_LEN:
        raise EncodeError("session id must be 16 bytes")
    if meta.version != VERSION:
        raise EncodeError(f"unsupported version {meta.version}")

    parts = []
    for name, kind in layout:
        if kind == "resp":
            parts.append(_enc_resp(msg))
        elif kind == "str":
            parts.append(_enc_str(getattr(msg, name)))
        elif kind == "b32":
            parts.append(_enc_b32(getattr(msg, name)))
        elif kind == "u16":
            value = getattr(msg, name)
            _need(isinstance(value, int) and 0 <= value <= 0xFFFF,
                  "field must fit in 16 bits")
            parts.append(value.to_bytes(2, "big"))
        elif kind == "suci":
            parts.append(_enc_suci(getattr(msg, name)))
        elif kind == "autn":
            parts.append(_enc_autn(getattr(msg, name)))
        elif kind == "share":
            parts.append(_enc_share(getattr(msg, name), meta.protocol_id))
        else:  # pragma: no cover - registry is static
            raise EncodeError(f"unknown field kind {kind}")
    body = b"".join(parts)

    payload = bytes([meta.version, code, meta.protocol_id]) + meta.session_id + body
    return len(payload).to_bytes(4, "big") + payload


# ---------------------------------------------------------------------------
# decoding


class _Reader:
    def __init__(self, data: bytes, base: int):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data[0] within the whole frame

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(self.offset, f"truncated {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def take_var(self, what: str, max_len: int = 0xFFFF) -> bytes:
        raw = self.take(2, f"{what} length")
        n = int.from_bytes(raw, "big")
        if n > max_len:
            raise DecodeError(self.offset - 2, f"{what} exceeds {max_len} bytes")
        return self.take(n, what)


def _dec_str(r: _Reader, what: str) -> str:
    raw = r.take_var(what, MAX_IDENTITY_LEN)
    if not raw:
        raise DecodeError(r.offset, f"empty {what}")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(r.offset - len(raw), f"{what} is not UTF-8") from exc


def _dec_suci(r: _Reader) -> Suci:
    start = r.offset
    c0 = r.take(POINT_LEN, "SUCI share")
    if not point_is_valid(c0):
        raise DecodeError(start, "SUCI share is not a curve point")
    c1 = r.take_var("SUCI ciphertext")
    if not c1:
        raise DecodeError(r.offset, "empty SUCI ciphertext")
    mac = r.take(TAG_LEN, "SUCI tag")
    return Suci(c0, c1, mac)


def _dec_autn(r: _Reader) -> Autn:
    conc = r.take(SQN_LEN, "concealed counter")
    mac = r.take(TAG_LEN, "token MAC")
    return Autn(conc, mac)


def _dec_share(r: _Reader, protocol_id: int) -> bytes:
    start = r.offset
    share = r.take_var("challenge share")
    if protocol_id == PROTOCOL_P2:
        if len(share) != POINT_LEN or not point_is_valid(share):
            raise DecodeError(start, "protocol 2 share is not a curve point")
    elif len(share) != TAG_LEN:
        raise DecodeError(start, "protocol 1 share must be 32 bytes")
    return share


def _dec_resp(r: _Reader) -> dict:
    start = r.offset
    kind = r.take(1, "response variant")[0]
    if kind == RES_KIND:
        return {"kind": kind, "res": r.take(TAG_LEN, "challenge response")}
    if kind == MAC_FAILURE_KIND:
        return {"kind": kind}
    if kind == SYNC_FAILURE_KIND:
        return {"kind": kind, "autn_resync": _dec_autn(r)}
    raise DecodeError(start, f"unknown response variant {kind}")


def decode(data: bytes) -> tuple[object, FrameMeta]:
    """Parse one framed message; strict about every byte."""
    if len(data) < 4:
        raise DecodeError(0, "truncated length prefix")
    length = int.from_bytes(data[:4], "big")
    if length < 3 + SESSION_ID_LEN:
        raise DecodeError(0, "declared length shorter than header")
    if len(data) < 4 + length:
        raise DecodeError(len(data), "frame shorter than declared length")
    if len(data) > 4 + length:
        raise DecodeError(4 + length, "trailing bytes after frame")

    version, code, protocol_id = data[4], data[5], data[6]
    if version != VERSION:
        raise DecodeError(4, f"unsupported version {version}")
    entry = _BY_CODE.get(code)
    if entry is None:
        raise DecodeError(5, f"unknown message type {code}")
    cls, allowed, layout = entry
    if protocol_id not in PROTOCOL_IDS_VALID:
        raise DecodeError(6, f"unknown protocol id {protocol_id}")
    if protocol_id not in allowed:
        raise DecodeError(6, f"{cls.__name__} not valid under protocol {protocol_id}")
    session_id = data[7 : 7 + SESSION_ID_LEN]

    r = _Reader(data[7 + SESSION_ID_LEN :], 7 + SESSION_ID_LEN)
    kwargs = {}
    for name, kind in layout:
        if kind == "resp":
            kwargs.update(_dec_resp(r))
        elif kind == "str":
            kwargs[name] = _dec_str(r, name)
        elif kind == "b32":
            kwargs[name] = r.take(TAG_LEN, name)
        elif kind == "u16":
            kwargs[name] = int.from_bytes(r.take(2, name), "big")
        elif kind == "suci":
            kwargs[name] = _dec_suci(r)
        elif kind == "autn":
            kwargs[name] = _dec_autn(r)
        elif kind == "share":
            kwargs[name] = _dec_share(r, protocol_id)
    if r.pos != len(r.data):
        raise DecodeError(r.offset, "trailing bytes inside body")

    return cls(**kwargs), FrameMeta(protocol_id, session_id, version)


def read_frame(recv) -> bytes | None:
    """Read one length-prefixed frame from a ``recv(n) -> bytes`` callable;
    None on clean EOF before a frame starts."""
    head = _read_exact(recv, 4, allow_eof=True)
    if head is None:
        return None
    length = int.from_bytes(head, "big")
    if length < 3 + SESSION_ID_LEN or length > 1 << 20:
        raise DecodeError(0, f"implausible frame length {length}")
    rest = _read_exact(recv, length, allow_eof=False)
    return head + rest


def _read_exact(recv, n: int, allow_eof: bool) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = recv(n - len(buf))
        if not chunk:
            if allow_eof and not buf:
                return None
            raise DecodeError(len(buf), "connection closed mid-frame")
        buf += chunk
    return buf


def message_name(msg) -> str:
    return type(msg).__name__


def equal_messages(a, b) -> bool:
    if type(a) is not type(b):
        return False
    return all(getattr(a, f.name) == getattr(b, f.name) for f in dc_fields(a))
