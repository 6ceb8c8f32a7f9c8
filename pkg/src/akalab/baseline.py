"""The sequence-number 5G-AKA protocol as three deterministic state machines.

This is the reference design the attack harness breaks: challenge freshness
rides a synchronized counter, and the subscriber's two verification steps
(token MAC, then counter freshness) emit distinguishable failure messages.

Success path is nine frames: seven for mutual authentication plus the
two-frame anchor-key confirmation between subscriber and serving network.
The confirmation round postdates the operation-cost model, so its MACs run
with counters paused.
"""

from __future__ import annotations

import hmac as hmac_mod

from .crypto import CryptoSuite, GroupElementError, MacFailure, decode_sqn, encode_sqn
from .session import DecryptFailure, Outcome, Party, SubscriberDb, Usim
from .wire import (
    Abort,
    AttachRequest,
    Autn,
    HnChallenge,
    HnResult,
    KeyConfirmRequest,
    KeyConfirmResponse,
    MAC_FAILURE_KIND,
    RES_KIND,
    ResyncForward,
    SYNC_FAILURE_KIND,
    SnChallenge,
    SnResult,
    SnToHnAttach,
    Suci,
    UeResponse,
)

_HASH_RESPONSE = "response hash"
_CONFIRM_SN = "confirm sn"
_CONFIRM_UE = "confirm ue"


def _response_core(msg: UeResponse) -> bytes:
    """Byte view of a subscriber response for the serving network's hash
    check; only the genuine-response variant can ever match."""
    if msg.kind == RES_KIND:
        return msg.res
    if msg.kind == SYNC_FAILURE_KIND:
        return bytes([msg.kind]) + msg.autn_resync.conc + msg.autn_resync.mac
    return bytes([msg.kind])


class UeBaseline(Party):
    role = "ue"

    def __init__(self, usim: Usim, id_sn: str, id_hn: str, suite: CryptoSuite,
                 confirm_keys: bool = True):
        super().__init__(suite)
        self.usim = usim
        self.id_sn = id_sn
        self.id_hn = id_hn
        self.confirm_keys = confirm_keys
        self._r: bytes | None = None
        self._dispatch = {
            SnChallenge: self.on_challenge,
            KeyConfirmRequest: self.on_confirm_request,
        }

    def start(self):
        return [("sn", self.attach())]

    def attach(self) -> AttachRequest:
        # the KEM ephemeral is this role's only per-session draw; the cost
        # model charges it as the random-generation slot
        self.counters.bump("rng_draws")
        c0, ks, _ = self.suite.encap(self.usim.pk_hn)
        c1, tag = self.suite.senc(ks, self.usim.supi.encode())
        return AttachRequest(Suci(c0, c1, tag), self.id_hn)

    def on_challenge(self, msg: SnChallenge):
        suite, k = self.suite, self.usim.k
        ak = suite.f("5", k, msg.r)
        xsqn_b = suite.xor(msg.autn.conc, ak)
        xmac = suite.f("1", k, xsqn_b, msg.r)
        if not hmac_mod.compare_digest(xmac, msg.autn.mac):
            self.outcome = Outcome.MAC_FAILURE
            return [("sn", UeResponse(MAC_FAILURE_KIND))]

        xsqn = decode_sqn(xsqn_b)
        if xsqn <= self.usim.sqn:
            own = encode_sqn(self.usim.sqn)
            ak_star = suite.f("5*", k, msg.r)
            conc_star = suite.xor(own, ak_star)
            mac_star = suite.f("1*", k, own, msg.r)
            self.outcome = Outcome.SYNC_FAILURE
            return [("sn", UeResponse(SYNC_FAILURE_KIND,
                                      autn_resync=Autn(conc_star, mac_star)))]

        self.usim.sqn = xsqn
        self.counters.bump("adds")  # counter adoption is the addition slot
        res = suite.f("2", k, msg.r)
        ck = suite.f("3", k, msg.r)
        ik = suite.f("4", k, msg.r)
        self.k_seaf = suite.kdf_anchor(ck + ik, msg.r, xsqn_b,
                                       self.id_sn.encode())
        self._r = msg.r
        if not self.confirm_keys:
            self.outcome = Outcome.COMPLETE
        return [("sn", UeResponse(RES_KIND, res=res))]

    def on_confirm_request(self, msg: KeyConfirmRequest):
        if self.k_seaf is None or self._r is None:
            return self._abort()
        with self.counters.paused():
            expect = self.suite.digest(_CONFIRM_SN, self.k_seaf, self._r)
            if not hmac_mod.compare_digest(expect, msg.mac):
                return self._abort()
            reply = self.suite.digest(_CONFIRM_UE, self.k_seaf, self._r)
        self.outcome = Outcome.COMPLETE
        return [("sn", KeyConfirmResponse(reply))]


class SnBaseline(Party):
    role = "sn"

    def __init__(self, id_sn: str, suite: CryptoSuite, confirm_keys: bool = True):
        super().__init__(suite)
        self.id_sn = id_sn
        self.confirm_keys = confirm_keys
        self.learned_supi: str | None = None
        self._suci: Suci | None = None
        self._r: bytes | None = None
        self._hxres: bytes | None = None
        self._dispatch = {
            AttachRequest: self.on_attach,
            HnChallenge: self.on_hn_challenge,
            UeResponse: self.on_ue_response,
            HnResult: self.on_hn_result,
            KeyConfirmResponse: self.on_confirm_response,
        }

    def on_attach(self, msg: AttachRequest):
        self._suci = msg.suci
        return [("hn", SnToHnAttach(msg.suci, msg.id_hn, self.id_sn))]

    def on_hn_challenge(self, msg: HnChallenge):
        self._r = msg.r
        self._hxres = msg.hxres
        self.k_seaf = msg.k_seaf
        return [("ue", SnChallenge(msg.r, msg.autn))]

    def on_ue_response(self, msg: UeResponse):
        if self._r is None or self._hxres is None:
            return []
        # the hash check runs on every response payload, failure variants
        # included, so this role's per-session hash count is case-independent
        candidate = self.suite.digest(_HASH_RESPONSE, self._r, _response_core(msg))
        matches = hmac_mod.compare_digest(candidate, self._hxres)
        if msg.kind == RES_KIND and matches:
            return [("hn", SnResult(msg.res))]
        if msg.kind == SYNC_FAILURE_KIND:
            self.outcome = Outcome.SYNC_FAILURE
            return [("hn", ResyncForward(msg.autn_resync, self._r, self._suci))]
        self.outcome = Outcome.SILENT_ABORT
        return [("hn", Abort("response rejected"))]

    def on_hn_result(self, msg: HnResult):
        self.learned_supi = msg.supi
        if not self.confirm_keys:
            self.outcome = Outcome.COMPLETE
            return []
        with self.counters.paused():
            mac = self.suite.digest(_CONFIRM_SN, self.k_seaf, self._r)
        return [("ue", KeyConfirmRequest(mac))]

    def on_confirm_response(self, msg: KeyConfirmResponse):
        with self.counters.paused():
            expect = self.suite.digest(_CONFIRM_UE, self.k_seaf, self._r)
        if hmac_mod.compare_digest(expect, msg.mac):
            self.outcome = Outcome.COMPLETE
        else:
            self.outcome = Outcome.SILENT_ABORT
        return []


class HnBaseline(Party):
    role = "hn"

    def __init__(self, sk_hn: int, db: SubscriberDb, suite: CryptoSuite):
        super().__init__(suite)
        self.sk_hn = sk_hn
        self.db = db
        self.supi: str | None = None
        self._xres: bytes | None = None
        self._suci: Suci | None = None
        self._r: bytes | None = None
        self._k: bytes | None = None
        self._dispatch = {
            SnToHnAttach: self.on_attach,
            SnResult: self.on_result,
            ResyncForward: self.on_resync,
            Abort: self.on_abort,
        }

    def _conceal_open(self, suci: Suci) -> str:
        try:
            ks = self.suite.decap(self.sk_hn, suci.c0)
            plaintext = self.suite.sdec(ks, suci.c1, suci.mac)
            return plaintext.decode("utf-8")
        except (GroupElementError, MacFailure, UnicodeDecodeError) as exc:
            raise DecryptFailure(str(exc)) from exc

    def on_attach(self, msg: SnToHnAttach):
        suite = self.suite
        try:
            supi = self._conceal_open(msg.suci)
        except DecryptFailure:
            return self._abort_to_sn("conceal failure")
        record = self.db.get(supi)
        if record is None:
            return self._abort_to_sn("unknown subscriber")
        self.supi, self._k, self._suci = supi, record.k, msg.suci

        r = suite.draw_challenge()
        sqn = self.db.next_sqn(supi)
        self.counters.bump("adds")  # counter advance
        sqn_b = encode_sqn(sqn)
        ak = suite.f("5", record.k, r)
        conc = suite.xor(sqn_b, ak)
        mac = suite.f("1", record.k, sqn_b, r)
        xres = suite.f("2", record.k, r)
        hxres = suite.digest(_HASH_RESPONSE, r, xres)
        ck = suite.f("3", record.k, r)
        ik = suite.f("4", record.k, r)
        k_seaf = suite.kdf_anchor(ck + ik, r, sqn_b, msg.id_sn.encode())

        self._xres, self._r, self.k_seaf = xres, r, k_seaf
        return [("sn", HnChallenge(r, Autn(conc, mac), hxres, k_seaf))]

    def on_result(self, msg: SnResult):
        if self._xres is None:
            return []
        if hmac_mod.compare_digest(msg.res, self._xres):
            self.outcome = Outcome.COMPLETE
            return [("sn", HnResult(self.supi))]
        return self._abort()

    def on_resync(self, msg: ResyncForward):
        if self._r is None or self._suci is None:
            return []
        if msg.suci != self._suci or msg.r != self._r:
            return self._abort(Outcome.SYNC_FAILURE)  # binding mismatch
        suite = self.suite
        ak_star = suite.f("5*", self._k, msg.r)
        recovered = suite.xor(msg.autn_resync.conc, ak_star)
        mac_star = suite.f("1*", self._k, recovered, msg.r)
        if hmac_mod.compare_digest(mac_star, msg.autn_resync.mac):
            if self.db.resync_sqn(self.supi, decode_sqn(recovered)):
                self.counters.bump("adds")
        self.outcome = Outcome.SYNC_FAILURE
        return []

    def on_abort(self, msg: Abort):
        return self._abort()

    def _abort_to_sn(self, reason: str):
        self.outcome = Outcome.SILENT_ABORT
        return [("sn", Abort(reason))]
