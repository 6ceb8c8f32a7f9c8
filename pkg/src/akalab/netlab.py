"""Deterministic in-process network simulator with an active-adversary API.

Topology is the three-party one every protocol here uses: subscriber and
serving network talk over an *open* channel (capture, replay, inject, drop,
reorder all allowed); serving and home network talk over a *secure* channel
(adversary may at most drop).  A seeded scheduler drives the state machines
to quiescence and records an append-only transcript: every frame, every
disposition, final outcome labels, and - as a test oracle only - each
party's final anchor key and operation counters.

On top of the simulator sit the scripted privacy attacks (failure-message
linkability, concealed-identity replay, sequence-number inference) and the
key-compromise game; each runs as a distinguisher experiment returning exact
trial counts.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from . import PROTOCOL_BASELINE, PROTOCOL_NAMES, PROTOCOL_P1, PROTOCOL_P2
from .baseline import HnBaseline, SnBaseline, UeBaseline
from .crypto import (
    CryptoSuite,
    child_seed,
    derive_rng,
    encode_sqn,
    fingerprint,
    xor_bytes,
)
from .protocol1 import HnP1, SnP1, UeP1
from .protocol2 import HnP2, InsufficientInformation, UeP2, recompute_from_compromise
from .session import Outcome, SubscriberDb, SubscriberRecord, Usim
from .wire import (
    M1,
    M4,
    M5,
    AttachRequest,
    FrameMeta,
    SnChallenge,
    UeResponse,
    MAC_FAILURE_KIND,
    RES_KIND,
    SYNC_FAILURE_KIND,
    carries_anchor_key,
    encode,
    is_protocol_frame,
    message_name,
)


class ChannelKind(Enum):
    OPEN = "open"
    SECURE = "secure"


_LINKS = {
    ("ue", "sn"): ChannelKind.OPEN,
    ("sn", "ue"): ChannelKind.OPEN,
    ("sn", "hn"): ChannelKind.SECURE,
    ("hn", "sn"): ChannelKind.SECURE,
}


class SimDeadlock(Exception):
    """Scheduler exceeded its step budget; carries the pending queue."""


class ChannelTypingViolation(Exception):
    """An anchor-key-bearing frame was about to traverse an open channel."""


class StructurallyInapplicable(Exception):
    """The attack targets a message field this protocol does not have."""


@dataclass
class TranscriptEvent:
    index: int
    channel: ChannelKind
    sender: str
    receiver: str
    message: object
    frame: bytes
    delivered: bool
    injected: bool = False


@dataclass
class Transcript:
    protocol_id: int
    seed: int | None
    id_sn: str
    id_hn: str
    session_id: bytes
    events: list[TranscriptEvent] = field(default_factory=list)
    outcomes: dict[str, Outcome] = field(default_factory=dict)
    final_keys: dict[str, bytes | None] = field(default_factory=dict)
    counters: dict[str, dict[str, int]] = field(default_factory=dict)
    learned_supi: dict[str, str | None] = field(default_factory=dict)
    party_ns: dict[str, int] = field(default_factory=dict)

    def protocol_frames(self) -> list[TranscriptEvent]:
        return [ev for ev in self.events
                if ev.delivered and is_protocol_frame(ev.message)]

    def frame_count(self) -> int:
        return len(self.protocol_frames())

    def frames_bytes(self) -> bytes:
        """Canonical wire form of every delivered frame, concatenated."""
        return b"".join(ev.frame for ev in self.events if ev.delivered)

    def render_log(self) -> str:
        lines = [
            f"protocol={PROTOCOL_NAMES[self.protocol_id]} seed={self.seed} "
            f"session={self.session_id.hex()}"
        ]
        for ev in self.events:
            state = "ok" if ev.delivered else "dropped"
            if ev.injected:
                state += ",injected"
            lines.append(
                f"[{ev.index:03d}] {ev.channel.value:6s} "
                f"{ev.sender}->{ev.receiver} {message_name(ev.message):17s} "
                f"{state} ({len(ev.frame)} bytes)"
            )
        for role in sorted(self.outcomes):
            out = self.outcomes[role]
            key = self.final_keys.get(role)
            fp = fingerprint(key) if key else "-"
            lines.append(f"outcome {role}: {out.value} kseaf_fp={fp}")
        return "\n".join(lines) + "\n"

    @classmethod
    def concat(cls, first: "Transcript", second: "Transcript") -> "Transcript":
        """One logical run recorded across two drive phases (e.g. the resync
        restart); outcome labels come from the final phase."""
        events = list(first.events)
        base = len(events)
        for ev in second.events:
            events.append(TranscriptEvent(base + ev.index, ev.channel, ev.sender,
                                          ev.receiver, ev.message, ev.frame,
                                          ev.delivered, ev.injected))
        return cls(first.protocol_id, first.seed, first.id_sn, first.id_hn,
                   first.session_id, events, dict(second.outcomes),
                   dict(second.final_keys), dict(second.counters),
                   dict(second.learned_supi))


# ---------------------------------------------------------------------------
# adversary API


class Adversary:
    """Passive default; subclasses override the two taps.

    ``on_open_send`` sees every honest open-channel emission (1-based index)
    and returns the deliveries that actually happen: keep, drop (empty list),
    modify, redirect, or add injections.  Secure-channel traffic can only be
    dropped.
    """

    def __init__(self):
        self.captured: list[tuple[int, str, str, object, bytes]] = []

    def on_open_send(self, idx: int, sender: str, receiver: str, msg, frame: bytes):
        return [(receiver, msg)]

    def drop_secure(self, sender: str, receiver: str, msg) -> bool:
        return False


class ScriptedAdversary(Adversary):
    """Declarative single-run adversary; also the scenario-file semantics.

    Actions (1-based open-send indices):
      ``capture <n>``            remember open send #n
      ``drop <pred>``            swallow sends matching ``all`` /
                                 ``index=<n>`` / ``mtype=<Name>``
      ``replay <n> to <role>``   after send #n is captured, deliver a copy
                                 to ``ue`` or ``sn``
      ``replace <n> with <m>``   deliver captured #m instead of send #n
    """

    def __init__(self, script: str = ""):
        super().__init__()
        self.capture_at: set[int] = set()
        self.drop_all = False
        self.drop_indices: set[int] = set()
        self.drop_mtypes: set[str] = set()
        self.replays: dict[int, list[str]] = {}
        self.replaces: dict[int, int] = {}
        self._slots: dict[int, tuple[object, bytes]] = {}
        for lineno, raw in enumerate(script.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                self._parse(line, lineno)

    def _parse(self, line: str, lineno: int) -> None:
        words = line.split()
        try:
            if words[0] == "capture" and len(words) == 2:
                self.capture_at.add(int(words[1]))
            elif words[0] == "drop" and len(words) == 2:
                pred = words[1]
                if pred == "all":
                    self.drop_all = True
                elif pred.startswith("index="):
                    self.drop_indices.add(int(pred[6:]))
                elif pred.startswith("mtype="):
                    self.drop_mtypes.add(pred[6:])
                else:
                    raise ValueError(f"unknown drop predicate {pred!r}")
            elif words[0] == "replay" and len(words) == 4 and words[2] == "to":
                if words[3] not in ("ue", "sn"):
                    raise ValueError("replay target must be ue or sn")
                self.capture_at.add(int(words[1]))
                self.replays.setdefault(int(words[1]), []).append(words[3])
            elif words[0] == "replace" and len(words) == 4 and words[2] == "with":
                self.capture_at.add(int(words[3]))
                self.replaces[int(words[1])] = int(words[3])
            else:
                raise ValueError(f"unknown action {words[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"scenario line {lineno}: {exc}") from exc

    def on_open_send(self, idx, sender, receiver, msg, frame):
        if idx in self.capture_at:
            self._slots[idx] = (msg, frame)
            self.captured.append((idx, sender, receiver, msg, frame))
        out = [(receiver, msg)]
        if idx in self.replaces:
            slot = self.replaces[idx]
            out = []
            if slot in self._slots:
                out = [(receiver, self._slots[slot][0])]
        elif (self.drop_all or idx in self.drop_indices
              or message_name(msg) in self.drop_mtypes):
            out = []
        for target in self.replays.get(idx, []):
            if idx in self._slots:
                out.append((target, self._slots[idx][0]))
        return out


def load_scenario(path) -> ScriptedAdversary:
    with open(path, "r", encoding="utf-8") as fh:
        return ScriptedAdversary(fh.read())


# ---------------------------------------------------------------------------
# provisioning fixture


@dataclass
class Lab:
    """One provisioned world: home-network key pair, subscriber database,
    and the matching subscriber-side credential cards."""

    sk_hn: int
    pk_hn: bytes
    db: SubscriberDb
    usims: dict[str, Usim]
    id_sn: str = "sn.lab"
    id_hn: str = "hn.lab"

    @classmethod
    def provision(cls, supis, seed: int | None = 0, **ids) -> "Lab":
        rng = derive_rng(seed, "provision")
        suite = CryptoSuite(rng=rng)
        sk_hn, pk_hn = suite.keygen()
        db = SubscriberDb()
        usims = {}
        for supi in supis:
            k = rng.randbytes(32)
            # the database counter is the next value to issue; the card
            # holds the last accepted one
            db.add(SubscriberRecord(supi, k, sqn=1))
            usims[supi] = Usim(supi, k, pk_hn, sqn=0)
        return cls(sk_hn, pk_hn, db, usims, **ids)


_PARTY_BUILDERS = {
    PROTOCOL_BASELINE: lambda lab, supi, suites, confirm: {
        "ue": UeBaseline(lab.usims[supi], lab.id_sn, lab.id_hn, suites["ue"],
                         confirm_keys=confirm),
        "sn": SnBaseline(lab.id_sn, suites["sn"], confirm_keys=confirm),
        "hn": HnBaseline(lab.sk_hn, lab.db, suites["hn"]),
    },
    PROTOCOL_P1: lambda lab, supi, suites, confirm: {
        "ue": UeP1(lab.usims[supi], lab.id_hn, suites["ue"]),
        "sn": SnP1(lab.id_sn, suites["sn"]),
        "hn": HnP1(lab.sk_hn, lab.db, suites["hn"]),
    },
    PROTOCOL_P2: lambda lab, supi, suites, confirm: {
        "ue": UeP2(lab.usims[supi], lab.id_hn, suites["ue"]),
        "sn": SnP1(lab.id_sn, suites["sn"]),
        "hn": HnP2(lab.sk_hn, lab.db, suites["hn"]),
    },
}


def build_parties(protocol_id: int, lab: Lab, supi: str,
                  seed: int | None = None, confirm_keys: bool = True) -> dict:
    suites = {role: CryptoSuite(rng=derive_rng(seed, "rng", role))
              for role in ("ue", "sn", "hn")}
    return _PARTY_BUILDERS[protocol_id](lab, supi, suites, confirm_keys)


def run_session(protocol_id: int, lab: Lab, supi: str, *,
                adversary: Adversary | None = None, seed: int | None = 0,
                confirm_keys: bool = True, max_steps: int = 64,
                measure_time: bool = False,
                session_id: bytes | None = None,
                parties: dict | None = None) -> Transcript:
    """Drive one session to quiescence under a deterministic scheduler."""
    if parties is None:
        parties = build_parties(protocol_id, lab, supi, seed, confirm_keys)
    if session_id is None:
        session_id = derive_rng(seed, "session").randbytes(16)
    meta = FrameMeta(protocol_id, session_id)
    transcript = Transcript(protocol_id, seed, lab.id_sn, lab.id_hn, session_id)
    party_ns = dict.fromkeys(parties, 0)

    def timed(role, call, *args):
        if not measure_time:
            return call(*args)
        t0 = time.perf_counter_ns()
        out = call(*args)
        party_ns[role] += time.perf_counter_ns() - t0
        return out

    queue: deque = deque()
    for dest, msg in timed("ue", parties["ue"].start):
        queue.append(("ue", dest, msg))

    steps = 0
    open_idx = 0
    while queue:
        steps += 1
        if steps > max_steps:
            pending = [f"{s}->{d} {message_name(m)}" for s, d, m in queue]
            raise SimDeadlock(f"step budget exhausted; pending: {pending}")
        sender, receiver, msg = queue.popleft()
        channel = _LINKS.get((sender, receiver))
        if channel is None:
            raise SimDeadlock(f"no link {sender}->{receiver}")
        frame = encode(msg, meta)
        if channel is ChannelKind.OPEN and carries_anchor_key(msg):
            raise ChannelTypingViolation(
                f"{message_name(msg)} on the open channel")

        deliveries = [(receiver, msg)]
        if adversary is not None:
            if channel is ChannelKind.OPEN:
                open_idx += 1
                deliveries = adversary.on_open_send(
                    open_idx, sender, receiver, msg, frame)
            elif adversary.drop_secure(sender, receiver, msg):
                deliveries = []

        if not deliveries:
            transcript.events.append(TranscriptEvent(
                len(transcript.events), channel, sender, receiver, msg, frame,
                delivered=False))
            continue
        for dest, carried in deliveries:
            tampered = dest != receiver or carried is not msg
            link = _LINKS.get((sender, dest), channel)
            carried_frame = frame if not tampered else encode(carried, meta)
            if link is ChannelKind.OPEN and carries_anchor_key(carried):
                raise ChannelTypingViolation(
                    f"{message_name(carried)} on the open channel")
            transcript.events.append(TranscriptEvent(
                len(transcript.events), link, sender, dest, carried,
                carried_frame, delivered=True, injected=tampered))
            for nxt_dest, nxt_msg in timed(dest, parties[dest].handle, sender, carried):
                queue.append((dest, nxt_dest, nxt_msg))

    for role, party in parties.items():
        party.finish()
        transcript.outcomes[role] = party.outcome
        transcript.final_keys[role] = (
            party.k_seaf if party.outcome is Outcome.COMPLETE else None)
        transcript.counters[role] = party.counters.snapshot()
        transcript.learned_supi[role] = getattr(party, "learned_supi",
                                                getattr(party, "supi", None))
    if measure_time:
        transcript.party_ns = party_ns
    return transcript


def run_resync_scenario(lab: Lab, supi: str, seed: int | None = 0,
                        rollback: int = 2) -> Transcript:
    """Genuine counter desynchronization and recovery, recorded as one run.

    One completed session leaves the card's counter positive; a home-network
    state restore (modeled by the rollback) then puts the database behind it.
    The next attempt fails freshness, resynchronizes, and the restarted
    attempt succeeds.  13 protocol frames follow the rollback.
    """
    warm = run_session(PROTOCOL_BASELINE, lab, supi,
                       seed=child_seed(seed, "warm"))
    if warm.outcomes["ue"] is not Outcome.COMPLETE:
        raise RuntimeError("warm-up session did not complete")
    lab.db.rollback_sqn(supi, rollback)

    sid = derive_rng(seed, "session").randbytes(16)
    failed = run_session(PROTOCOL_BASELINE, lab, supi, session_id=sid,
                         seed=child_seed(seed, "desync"))
    if failed.outcomes["ue"] is not Outcome.SYNC_FAILURE:
        raise RuntimeError("rollback did not trigger a sync failure")
    # the subscriber restarts from initiation; the restarted run covers
    # mutual authentication only (no confirmation round)
    retry = run_session(PROTOCOL_BASELINE, lab, supi, session_id=sid,
                        seed=child_seed(seed, "retry"), confirm_keys=False)
    if retry.outcomes["ue"] is not Outcome.COMPLETE:
        raise RuntimeError("post-resync session did not complete")
    return Transcript.concat(failed, retry)


# ---------------------------------------------------------------------------
# distinguisher experiments


@dataclass
class DistinguisherResult:
    trials: int
    correct_guesses: int

    @property
    def advantage(self) -> float:
        return max(0.0, 2.0 * (self.correct_guesses / self.trials - 0.5))


@dataclass
class SqnInferenceResult:
    recovered_xors: list[bytes]
    true_xors: list[bytes]

    @property
    def all_match(self) -> bool:
        return self.recovered_xors == self.true_xors and bool(self.recovered_xors)


class _ReplayChallengeToUe(Adversary):
    """Swallow the subscriber's initiation and feed it a recorded challenge."""

    def __init__(self, recorded_msg):
        super().__init__()
        self.recorded_msg = recorded_msg

    def on_open_send(self, idx, sender, receiver, msg, frame):
        if idx == 1:
            return [("ue", self.recorded_msg)]
        return [(receiver, msg)]


class _ReplaceInitiation(Adversary):
    """Substitute a recorded initiation for the live subscriber's own."""

    def __init__(self, recorded_msg):
        super().__init__()
        self.recorded_msg = recorded_msg

    def on_open_send(self, idx, sender, receiver, msg, frame):
        if idx == 1:
            return [("sn", self.recorded_msg)]
        return [(receiver, msg)]


def _record_open_message(protocol_id, lab, supi, seed, kind):
    t = run_session(protocol_id, lab, supi, seed=seed)
    if t.outcomes["ue"] is not Outcome.COMPLETE:
        raise RuntimeError("recording session did not complete")
    for ev in t.events:
        if ev.delivered and isinstance(ev.message, kind):
            return ev.message
    raise RuntimeError(f"no {kind.__name__} observed")


def _balanced_deck(trials: int, seed) -> list[bool]:
    deck = [True] * (trials // 2) + [False] * (trials - trials // 2)
    derive_rng(seed, "deck").shuffle(deck)
    return deck


def _ue_reaction(transcript: Transcript) -> str:
    """What the open channel shows of the subscriber's reaction."""
    for ev in transcript.events:
        if ev.sender != "ue":
            continue
        msg = ev.message
        if isinstance(msg, UeResponse):
            return {RES_KIND: "accepted",
                    MAC_FAILURE_KIND: "mac_failure",
                    SYNC_FAILURE_KIND: "sync_failure"}[msg.kind]
        if isinstance(msg, M5):
            return "accepted"
    return "silence"


def _guess_is_target(reaction: str) -> bool:
    # the replayed material belonged to the target, so acceptance or a
    # freshness complaint points at it; a MAC failure or silence does not
    return reaction in ("accepted", "sync_failure")


def _distinguish(protocol_id, lab, target, other, trials, seed,
                 adv_factory) -> DistinguisherResult:
    correct = 0
    deck = _balanced_deck(trials, seed)
    for i, is_target in enumerate(deck):
        supi = target if is_target else other
        t = run_session(protocol_id, lab, supi, adversary=adv_factory(),
                        seed=child_seed(seed, "trial", i))
        if _guess_is_target(_ue_reaction(t)) == is_target:
            correct += 1
    return DistinguisherResult(trials, correct)


def attack_failure_linkability(protocol_id: int, lab: Lab, target: str,
                               other: str, trials: int = 200,
                               seed: int | None = 0) -> DistinguisherResult:
    """Replay a recorded challenge to a coin-flipped subscriber and guess
    the identity from the visible reaction."""
    kind = SnChallenge if protocol_id == PROTOCOL_BASELINE else M4
    recorded = _record_open_message(protocol_id, lab, target,
                                    child_seed(seed, "record"), kind)
    return _distinguish(protocol_id, lab, target, other, trials, seed,
                        lambda: _ReplayChallengeToUe(recorded))


def attack_suci_replay(protocol_id: int, lab: Lab, target: str, other: str,
                       trials: int = 200, seed: int | None = 0) -> DistinguisherResult:
    """Replay a recorded initiation into a live session of a coin-flipped
    subscriber and guess from its reaction to the ensuing challenge."""
    kind = AttachRequest if protocol_id == PROTOCOL_BASELINE else M1
    recorded = _record_open_message(protocol_id, lab, target,
                                    child_seed(seed, "record"), kind)
    return _distinguish(protocol_id, lab, target, other, trials, seed,
                        lambda: _ReplaceInitiation(recorded))


def attack_sqn_inference(protocol_id: int, lab: Lab, target: str,
                         replays: int = 4, seed: int | None = 0) -> SqnInferenceResult:
    """Replay one recorded challenge between honest sessions and XOR the
    concealed counters out of the freshness complaints."""
    if protocol_id != PROTOCOL_BASELINE:
        raise StructurallyInapplicable(
            "no concealed counter field exists in protocol "
            f"{PROTOCOL_NAMES[protocol_id]}")
    recorded = _record_open_message(protocol_id, lab, target,
                                    child_seed(seed, "record"), SnChallenge)
    usim = lab.usims[target]
    concs: list[bytes] = []
    true_sqns: list[int] = []
    for i in range(replays):
        honest = run_session(PROTOCOL_BASELINE, lab, target,
                             seed=child_seed(seed, "honest", i))
        if honest.outcomes["ue"] is not Outcome.COMPLETE:
            raise RuntimeError("interleaved honest session failed")
        true_sqns.append(usim.sqn)
        t = run_session(PROTOCOL_BASELINE, lab, target,
                        adversary=_ReplayChallengeToUe(recorded),
                        seed=child_seed(seed, "replay", i))
        reply = next(ev.message for ev in t.events
                     if ev.sender == "ue" and isinstance(ev.message, UeResponse))
        if reply.kind != SYNC_FAILURE_KIND:
            raise RuntimeError("replay did not elicit a sync failure")
        concs.append(reply.autn_resync.conc)

    recovered = [xor_bytes(a, b) for a, b in zip(concs, concs[1:])]
    truth = [xor_bytes(encode_sqn(a), encode_sqn(b))
             for a, b in zip(true_sqns, true_sqns[1:])]
    return SqnInferenceResult(recovered, truth)


def pfs_game(protocol_id: int, lab: Lab, sessions: int = 50,
             seed: int | None = 0, supi: str | None = None) -> list[bool]:
    """Record honest sessions, then hand the attacker both long-term secrets
    and ask for each session's anchor key; flags are per-session success."""
    if supi is None:
        supi = sorted(lab.usims)[0]
    k = lab.usims[supi].k
    flags = []
    for i in range(sessions):
        t = run_session(protocol_id, lab, supi, seed=child_seed(seed, "pfs", i))
        if t.outcomes["hn"] is not Outcome.COMPLETE:
            raise RuntimeError("recorded session did not complete")
        truth = t.final_keys["hn"]
        try:
            flags.append(recompute_from_compromise(t, k, lab.sk_hn) == truth)
        except InsufficientInformation:
            flags.append(False)
    return flags
