"""PFS extension of the stateless protocol ("p2").

The KEM ephemeral share C0 doubles as the subscriber's DH share; the home
network turns its random challenge into a DH exponent and publishes only the
derived group element, never the exponent.  Both sides feed the resulting DH
secret into the anchor derivation, so anchor keys stay out of reach of an
attacker who later learns every long-term secret: the required exponents are
erased when the session ends and never appear on the wire.

Also provides the compromise-recomputation oracle that demonstrates exactly
that: given a recorded session plus both long-term secrets it recovers the
anchor key for the baseline and the stateless variant, and provably lacks
the material to do so here.
"""

from __future__ import annotations

from .crypto import CryptoSuite, GroupElementError, MacFailure, point_is_valid
from .session import DecryptFailure
from .protocol1 import HnP1, UeP1, unpack_initiation
from .wire import (
    M1,
    M4,
    AttachRequest,
    SnChallenge,
    message_name,
)
from . import PROTOCOL_BASELINE, PROTOCOL_P1, PROTOCOL_P2

ERASED = None  # sentinel the lifecycle hooks report for wiped secrets


class InsufficientInformation(Exception):
    """The recorded traffic plus long-term secrets do not determine the
    session's anchor key."""


class UeP2(UeP1):
    retain_ephemeral = True

    def __init__(self, usim, id_hn, suite: CryptoSuite):
        super().__init__(usim, id_hn, suite)
        self._dh_key: bytes | None = None

    def _accept_share(self, share: bytes) -> bool:
        # reject anything that is not a usable group element before touching
        # any derivation; identity/off-curve inputs never reach the exchange
        if not point_is_valid(share, self.suite.curve):
            return False
        try:
            self._dh_key = self.suite.dh_shared(self._eph, share)
        except GroupElementError:
            return False
        finally:
            self._eph = ERASED  # exponent needed only for this one exchange
        return True

    def _anchor_fields(self, ck, ik, id_sn_b) -> tuple:
        return (self._dh_key, self._k_ue.raw, id_sn_b)

    def _after_anchor(self) -> None:
        self._dh_key = ERASED

    def ephemeral_view(self) -> dict:
        """Lifecycle hook: session secrets that must read as erased."""
        return {"ephemeral": self._eph, "dh_key": self._dh_key}

    def finish(self) -> None:
        self._eph = ERASED
        self._dh_key = ERASED
        super().finish()


class HnP2(HnP1):
    def __init__(self, sk_hn, db, suite: CryptoSuite):
        super().__init__(sk_hn, db, suite)
        self._rhn_scalar: int | None = None
        self._dh_key: bytes | None = None

    def _make_share(self, c0: bytes) -> bytes:
        seed = self.suite.draw_challenge()
        # uncounted encoding conversion; the draw above is the charged op
        self._rhn_scalar = self.suite.scalar_from_bytes(seed)
        self._dh_key = self.suite.dh_shared(self._rhn_scalar, c0)
        return self.suite.dh_pub(self._rhn_scalar)

    def _anchor_fields(self, ck, ik, xk_ue, xr, id_sn_b) -> tuple:
        return (self._dh_key, xk_ue.raw, id_sn_b)

    def _zeroize(self) -> None:
        self._rhn_scalar = ERASED
        self._dh_key = ERASED

    def on_m6(self, msg):
        out = super().on_m6(msg)
        self._zeroize()
        return out

    def on_abort(self, msg):
        self._zeroize()
        return super().on_abort(msg)

    def ephemeral_view(self) -> dict:
        return {"rhn_scalar": self._rhn_scalar, "dh_key": self._dh_key}

    def finish(self) -> None:
        self._zeroize()
        super().finish()


def recompute_from_compromise(transcript, k: bytes, sk_hn: int) -> bytes:
    """Best-effort anchor-key recovery from a recorded session plus both
    long-term secrets — the key-compromise experiment.

    Only openly transmitted frames are used: the attacker of this game taps
    the radio leg and later obtains ``k`` and ``sk_hn``; the protected
    SN<->HN leg is out of reach.  Succeeds for the baseline and the stateless
    variant, raises InsufficientInformation for the PFS variant (the anchor
    key needs a DH exponent that exists nowhere in the inputs).
    """
    suite = CryptoSuite()  # the attacker's own toolbox; counters irrelevant
    open_msgs = [ev.message for ev in transcript.events
                 if ev.channel.value == "open" and ev.delivered]
    id_sn_b = transcript.id_sn.encode()

    def first(kind):
        for msg in open_msgs:
            if isinstance(msg, kind):
                return msg
        raise InsufficientInformation(f"no {kind.__name__} on the open channel")

    if transcript.protocol_id == PROTOCOL_BASELINE:
        attach = first(AttachRequest)
        chall = first(SnChallenge)
        try:
            ks = suite.decap(sk_hn, attach.suci.c0)
            suite.sdec(ks, attach.suci.c1, attach.suci.mac)
        except (GroupElementError, MacFailure) as exc:
            raise InsufficientInformation(f"malformed record: {exc}") from exc
        ak = suite.f("5", k, chall.r)
        sqn_b = suite.xor(chall.autn.conc, ak)
        ck = suite.f("3", k, chall.r)
        ik = suite.f("4", k, chall.r)
        return suite.kdf_anchor(ck + ik, chall.r, sqn_b, id_sn_b)

    if transcript.protocol_id == PROTOCOL_P1:
        m1 = first(M1)
        m4 = first(M4)
        try:
            xk_ue = suite.decap(sk_hn, m1.suci.c0)
            payload = suite.sdec(xk_ue, m1.suci.c1, m1.suci.mac)
            _, xr = unpack_initiation(payload)
        except (GroupElementError, MacFailure, DecryptFailure) as exc:
            raise InsufficientInformation(f"malformed record: {exc}") from exc
        ck = suite.f("3", k, xk_ue.raw, xr)
        ik = suite.f("4", k, xk_ue.raw, xr)
        return suite.kdf_anchor(ck + ik, xr, m4.id_sn.encode())

    if transcript.protocol_id == PROTOCOL_P2:
        # the anchor key is KDF(dh_key, ...); dh_key needs the subscriber's
        # KEM exponent or the network's challenge exponent, and the recorded
        # frames carry only the two public shares
        raise InsufficientInformation(
            "anchor key requires a DH exponent; neither appears in the "
            "transcript or in the long-term secrets")

    raise InsufficientInformation(
        f"unknown protocol id {transcript.protocol_id}")
