import random
from dataclasses import replace

from akalab import PROTOCOL_BASELINE
from akalab.baseline import HnBaseline, SnBaseline, UeBaseline
from akalab.crypto import CryptoSuite, decode_sqn, encode_sqn, xor_bytes
from akalab.netlab import (
    Adversary,
    Lab,
    Outcome,
    build_parties,
    run_resync_scenario,
    run_session,
)
from akalab.wire import (
    MAC_FAILURE_KIND,
    RES_KIND,
    SYNC_FAILURE_KIND,
    Autn,
    ResyncForward,
    SnChallenge,
    SnResult,
    UeResponse,
)


def fresh_suite(seed=0):
    return CryptoSuite(rng=random.Random(seed))


def test_honest_session_agrees_on_keys(lab):
    t = run_session(PROTOCOL_BASELINE, lab, "alice", seed=1)
    assert all(o is Outcome.COMPLETE for o in t.outcomes.values())
    keys = set(t.final_keys.values())
    assert len(keys) == 1 and None not in keys
    assert t.frame_count() == 9
    assert t.learned_supi["sn"] == "alice"
    assert t.learned_supi["hn"] == "alice"


def test_case1_counter_budgets(lab):
    t = run_session(PROTOCOL_BASELINE, lab, "alice", seed=2)

    def core(c):
        return {k: v for k, v in c.items() if v and k != "kem_rng_draws"}

    assert core(t.counters["ue"]) == {
        "hash_ops": 8, "scalar_mults": 2, "sym_encs": 1,
        "xors": 1, "adds": 1, "rng_draws": 1}
    assert core(t.counters["sn"]) == {"hash_ops": 1}
    assert core(t.counters["hn"]) == {
        "hash_ops": 9, "scalar_mults": 1, "sym_decs": 1,
        "xors": 1, "adds": 1, "rng_draws": 1}


def test_sqn_advances_once_per_challenge(lab):
    before = lab.db.get("alice").sqn
    for i in range(3):
        run_session(PROTOCOL_BASELINE, lab, "alice", seed=10 + i)
    assert lab.db.get("alice").sqn == before + 3
    assert lab.usims["alice"].sqn == before + 2  # card holds last accepted


def test_conc_conceals_pre_increment_counter(lab):
    sqn_before = lab.db.get("alice").sqn
    t = run_session(PROTOCOL_BASELINE, lab, "alice", seed=3)
    chall = next(ev.message for ev in t.events
                 if isinstance(ev.message, SnChallenge))
    ak = fresh_suite().f("5", lab.usims["alice"].k, chall.r)
    assert decode_sqn(xor_bytes(chall.autn.conc, ak)) == sqn_before


def test_replayed_challenge_distinguishes_subscribers(lab):
    t = run_session(PROTOCOL_BASELINE, lab, "alice", seed=4)
    chall = next(ev.message for ev in t.events
                 if isinstance(ev.message, SnChallenge))

    target = UeBaseline(lab.usims["alice"], lab.id_sn, lab.id_hn, fresh_suite(1))
    [(dest, reply)] = target.handle("sn", chall)
    assert reply.kind == SYNC_FAILURE_KIND
    assert target.outcome is Outcome.SYNC_FAILURE

    other = UeBaseline(lab.usims["bob"], lab.id_sn, lab.id_hn, fresh_suite(2))
    [(dest, reply)] = other.handle("sn", chall)
    assert reply.kind == MAC_FAILURE_KIND
    assert other.outcome is Outcome.MAC_FAILURE


def test_resync_scenario_recovers(lab):
    alice = lab.usims["alice"]
    t = run_resync_scenario(lab, "alice", seed=5)
    assert t.frame_count() == 13
    assert t.outcomes["ue"] is Outcome.COMPLETE
    # afterwards the pair is consistent again: next ordinary run succeeds
    t2 = run_session(PROTOCOL_BASELINE, lab, "alice", seed=6)
    assert t2.outcomes["ue"] is Outcome.COMPLETE
    assert lab.db.get("alice").sqn == alice.sqn + 1


def test_hn_counter_never_decreases(lab):
    observed = [lab.db.get("alice").sqn]
    run_session(PROTOCOL_BASELINE, lab, "alice", seed=7)
    observed.append(lab.db.get("alice").sqn)
    run_resync_scenario(lab, "alice", seed=8)
    observed.append(lab.db.get("alice").sqn)
    run_session(PROTOCOL_BASELINE, lab, "alice", seed=9)
    observed.append(lab.db.get("alice").sqn)
    assert observed == sorted(observed)


def test_forged_resync_ignored(lab):
    parties = build_parties(PROTOCOL_BASELINE, lab, "alice", seed=11)
    hn, sn = parties["hn"], parties["sn"]
    [(_, m2)] = sn.handle("ue", parties["ue"].start()[0][1])
    [(_, chall)] = hn.handle("sn", m2)
    sqn_after_challenge = lab.db.get("alice").sqn

    wrong = fresh_suite(12)
    bad_sqn = encode_sqn(999)
    forged = Autn(wrong.xor(bad_sqn, wrong.f("5*", b"\x99" * 32, chall.r)),
                  wrong.f("1*", b"\x99" * 32, bad_sqn, chall.r))
    hn.handle("sn", ResyncForward(forged, chall.r, m2.suci))
    assert lab.db.get("alice").sqn == sqn_after_challenge


def test_sn_blocks_tampered_response(lab):
    class FlipRes(Adversary):
        def on_open_send(self, idx, sender, receiver, msg, frame):
            if isinstance(msg, UeResponse) and msg.kind == RES_KIND:
                msg = replace(msg, res=bytes([msg.res[0] ^ 1]) + msg.res[1:])
            return [(receiver, msg)]

    t = run_session(PROTOCOL_BASELINE, lab, "alice", adversary=FlipRes(), seed=13)
    assert not any(isinstance(ev.message, SnResult) for ev in t.events)
    assert t.outcomes["hn"] is not Outcome.COMPLETE
    assert t.final_keys["hn"] is None


def test_hn_rejects_wrong_res(lab):
    parties = build_parties(PROTOCOL_BASELINE, lab, "alice", seed=14)
    hn, sn, ue = parties["hn"], parties["sn"], parties["ue"]
    [(_, m2)] = sn.handle("ue", ue.start()[0][1])
    [(_, chall)] = hn.handle("sn", m2)
    assert hn.handle("sn", SnResult(b"\x00" * 32)) == []
    assert hn.outcome is not Outcome.COMPLETE


def test_attach_counter_trace(lab):
    ue = UeBaseline(lab.usims["alice"], lab.id_sn, lab.id_hn, fresh_suite(15))
    ue.attach()
    assert ue.counters.snapshot() == {
        "hash_ops": 2, "scalar_mults": 2, "sym_encs": 1, "sym_decs": 0,
        "xors": 0, "adds": 0, "rng_draws": 1, "kem_rng_draws": 1}


def test_unknown_subscriber_aborts(lab):
    from akalab.session import Usim
    ghost = Usim("ghost", b"\x01" * 32, lab.pk_hn)
    ghost_lab = Lab(lab.sk_hn, lab.pk_hn, lab.db, dict(lab.usims, ghost=ghost),
                    id_sn=lab.id_sn, id_hn=lab.id_hn)
    t = run_session(PROTOCOL_BASELINE, ghost_lab, "ghost", seed=16)
    assert t.outcomes["hn"] is Outcome.SILENT_ABORT
    assert t.final_keys["ue"] is None
