"""Stateless mutual challenge-response protocol ("p1").

The subscriber's initiation carries its own 32-byte challenge inside the
concealed identity, MAC-bound to the KEM share, so the home network's reply
is cryptographically tied to this session: no sequence numbers exist, replay
gains nothing, and every subscriber-side failure is a silent abort with no
distinguishing failure message.

Happy path is seven frames: M1..M7.  Key confirmation is in-band (the
challenge-response tags double as confirmation), not an extra round.
"""

from __future__ import annotations

import hmac as hmac_mod

from .crypto import CHALLENGE_LEN, CryptoSuite, GroupElementError, MacFailure, SharedSecret
from .session import DecryptFailure, Outcome, Party, SubscriberDb, Usim
from .wire import M1, M2, M3, M4, M5, M6, M7, Abort, Suci

MAC_STAR = "mac star"
RES_STAR = "res star"
HXRES_STAR = "hxres star"
KC_MAC = "kc mac"


def pack_initiation(supi: str, challenge: bytes) -> bytes:
    """Concealed payload: identity and subscriber challenge, length-prefixed
    so the split is unambiguous for any identity length."""
    raw = supi.encode("utf-8")
    return (len(raw).to_bytes(2, "big") + raw
            + len(challenge).to_bytes(2, "big") + challenge)


def unpack_initiation(payload: bytes) -> tuple[str, bytes]:
    if len(payload) < 2:
        raise DecryptFailure("payload too short")
    n = int.from_bytes(payload[:2], "big")
    rest = payload[2:]
    if len(rest) < n + 2:
        raise DecryptFailure("identity field truncated")
    supi_raw, rest = rest[:n], rest[n:]
    m = int.from_bytes(rest[:2], "big")
    challenge = rest[2 : 2 + m]
    if len(challenge) != m or rest[2 + m :]:
        raise DecryptFailure("challenge field malformed")
    if m != CHALLENGE_LEN:
        raise DecryptFailure("challenge must be 32 bytes")
    try:
        return supi_raw.decode("utf-8"), challenge
    except UnicodeDecodeError as exc:
        raise DecryptFailure("identity is not UTF-8") from exc


class UeP1(Party):
    role = "ue"
    retain_ephemeral = False  # the PFS variant keeps the KEM exponent

    def __init__(self, usim: Usim, id_hn: str, suite: CryptoSuite):
        super().__init__(suite)
        self.usim = usim
        self.id_hn = id_hn
        self._r: bytes | None = None
        self._k_ue: SharedSecret | None = None
        self._eph: int | None = None
        self._dispatch = {M4: self.on_m4}

    def start(self):
        return [("sn", self.initiate())]

    def initiate(self) -> M1:
        suite = self.suite
        self._r = suite.draw_challenge()
        c0, k_ue, eph = suite.encap(self.usim.pk_hn)
        self._k_ue = k_ue
        if self.retain_ephemeral:
            self._eph = eph
        c1, tag = suite.senc(k_ue, pack_initiation(self.usim.supi, self._r))
        mac = suite.f("1", self.usim.k, self._r, c0)
        return M1(Suci(c0, c1, tag), mac, self.id_hn)

    def on_m4(self, msg: M4):
        # every failure here is the same silent abort: no reply, no
        # distinguishing failure message
        if self._r is None or self._k_ue is None:
            return self._abort()
        if not self._accept_share(msg.share):
            return self._abort()

        suite, k = self.suite, self.usim.k
        id_sn_b = msg.id_sn.encode()
        res = suite.f("2", k, self._k_ue.raw, self._r)
        ck = suite.f("3", k, self._k_ue.raw, self._r)
        ik = suite.f("4", k, self._k_ue.raw, self._r)
        self.k_seaf = suite.kdf_anchor(*self._anchor_fields(ck, ik, id_sn_b))
        self._after_anchor()

        expect = suite.digest(MAC_STAR, self.k_seaf, msg.share, id_sn_b, self._r)
        if not hmac_mod.compare_digest(expect, msg.mac_star):
            self.k_seaf = None
            return self._abort()

        res_star = suite.digest(RES_STAR, res, self._r, msg.share)
        kcmac = suite.digest(KC_MAC, self.k_seaf, res_star, msg.share, id_sn_b)
        self.outcome = Outcome.COMPLETE
        return [("sn", M5(kcmac, res_star, msg.id_sn))]

    def _accept_share(self, share: bytes) -> bool:
        return len(share) == CHALLENGE_LEN

    def _anchor_fields(self, ck: bytes, ik: bytes, id_sn_b: bytes) -> tuple:
        return (ck + ik, self._r, id_sn_b)

    def _after_anchor(self) -> None:
        pass

    def persistent_view(self) -> bytes:
        return self.usim.persistent_bytes()


class SnP1(Party):
    role = "sn"

    def __init__(self, id_sn: str, suite: CryptoSuite):
        super().__init__(suite)
        self.id_sn = id_sn
        self.learned_supi: str | None = None
        self._suci: Suci | None = None
        self._xr: bytes | None = None
        self._share: bytes | None = None
        self._hxres_star: bytes | None = None
        self._dispatch = {
            M1: self.on_m1,
            M3: self.on_m3,
            M5: self.on_m5,
            M7: self.on_m7,
        }

    def on_m1(self, msg: M1):
        self._suci = msg.suci
        return [("hn", M2(msg.suci, msg.mac, msg.id_hn, self.id_sn))]

    def on_m3(self, msg: M3):
        self._hxres_star = msg.hxres_star
        self._xr = msg.xr
        self._share = msg.share
        self.k_seaf = msg.k_seaf
        return [("ue", M4(msg.mac_star, msg.share, self.id_sn))]

    def on_m5(self, msg: M5):
        if self._hxres_star is None:
            return []
        candidate = self.suite.digest(HXRES_STAR, msg.res_star, self._xr, self._share)
        if not hmac_mod.compare_digest(candidate, self._hxres_star):
            return self._abort()
        expect = self.suite.digest(KC_MAC, self.k_seaf, msg.res_star,
                                   self._share, self.id_sn.encode())
        if not hmac_mod.compare_digest(expect, msg.kcmac):
            return self._abort()
        return [("hn", M6(msg.kcmac, msg.res_star, self._share))]

    def on_m7(self, msg: M7):
        if self._suci is None or msg.suci != self._suci:
            return self._abort()
        self.learned_supi = msg.supi
        self.outcome = Outcome.COMPLETE
        return []


class HnP1(Party):
    role = "hn"

    def __init__(self, sk_hn: int, db: SubscriberDb, suite: CryptoSuite):
        super().__init__(suite)
        self.sk_hn = sk_hn
        self.db = db
        self.supi: str | None = None
        self._suci: Suci | None = None
        self._share: bytes | None = None
        self._xres_star: bytes | None = None
        self._id_sn: str | None = None
        self._dispatch = {M2: self.on_m2, M6: self.on_m6, Abort: self.on_abort}

    def on_m2(self, msg: M2):
        suite = self.suite
        try:
            xk_ue = suite.decap(self.sk_hn, msg.suci.c0)
            payload = suite.sdec(xk_ue, msg.suci.c1, msg.suci.mac)
            supi, xr = unpack_initiation(payload)
        except (GroupElementError, MacFailure, DecryptFailure):
            return self._abort_to_sn("conceal failure")
        record = self.db.get(supi)
        if record is None:
            return self._abort_to_sn("unknown subscriber")

        xmac = suite.f("1", record.k, xr, msg.suci.c0)
        if not hmac_mod.compare_digest(xmac, msg.mac):
            self.outcome = Outcome.MAC_FAILURE
            return [("sn", Abort("subscriber mac failure"))]

        id_sn_b = msg.id_sn.encode()
        share = self._make_share(msg.suci.c0)
        xres = suite.f("2", record.k, xk_ue.raw, xr)
        ck = suite.f("3", record.k, xk_ue.raw, xr)
        ik = suite.f("4", record.k, xk_ue.raw, xr)
        self.k_seaf = suite.kdf_anchor(*self._anchor_fields(ck, ik, xk_ue, xr, id_sn_b))
        xres_star = suite.digest(RES_STAR, xres, xr, share)
        hxres_star = suite.digest(HXRES_STAR, xres_star, xr, share)
        mac_star = suite.digest(MAC_STAR, self.k_seaf, share, id_sn_b, xr)

        self.supi, self._suci = supi, msg.suci
        self._share, self._xres_star, self._id_sn = share, xres_star, msg.id_sn
        return [("sn", M3(hxres_star, mac_star, xr, share, self.k_seaf))]

    def on_m6(self, msg: M6):
        if self._xres_star is None:
            return []
        if msg.share != self._share:
            return self._abort()  # binding to this session's challenge share
        expect = self.suite.digest(KC_MAC, self.k_seaf, msg.res_star,
                                   self._share, self._id_sn.encode())
        if (hmac_mod.compare_digest(msg.res_star, self._xres_star)
                and hmac_mod.compare_digest(expect, msg.kcmac)):
            self.outcome = Outcome.COMPLETE
            return [("sn", M7(self.supi, self._suci))]
        return self._abort()

    def on_abort(self, msg: Abort):
        return self._abort()

    def _make_share(self, c0: bytes) -> bytes:
        return self.suite.draw_challenge()

    def _anchor_fields(self, ck, ik, xk_ue, xr, id_sn_b) -> tuple:
        return (ck + ik, xr, id_sn_b)

    def _abort_to_sn(self, reason: str):
        self.outcome = Outcome.SILENT_ABORT
        return [("sn", Abort(reason))]

    def persistent_view(self) -> bytes:
        return repr(self.sk_hn).encode() + self.db.persistent_bytes()
