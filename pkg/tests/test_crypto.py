import random

import pytest

from akalab.crypto import (
    CryptoSuite,
    GroupElementError,
    MacFailure,
    OpCounters,
    CryptoError,
    UnsupportedCurve,
    decode_sqn,
    derive_rng,
    encode_sqn,
    point_is_valid,
    xor_bytes,
)
from akalab.crypto import _P256


def suite(seed=1, curve="secp256r1"):
    return CryptoSuite(curve=curve, rng=random.Random(seed))


def delta(counters, before):
    after = counters.snapshot()
    return {k: after[k] - before[k] for k in after if after[k] != before.get(k, 0)}


# -- KEM / DEM ---------------------------------------------------------------

def test_keygen_shape_and_freshness():
    s = suite()
    sk1, pk1 = s.keygen()
    sk2, pk2 = s.keygen()
    assert sk1 != sk2
    assert 1 <= sk1 < _P256.order
    assert len(pk1) == 33 and point_is_valid(pk1)
    assert _P256.pub(sk1) == pk1  # pk really is sk*g


def test_kem_round_trip():
    s = suite(2)
    sk, pk = s.keygen()
    for _ in range(50):
        c0, ks, _ = s.encap(pk)
        assert s.decap(sk, c0) == ks


def test_encap_freshness_and_counters():
    s = suite(3)
    _, pk = s.keygen()
    before = s.counters.snapshot()
    c0a, _, _ = s.encap(pk)
    assert delta(s.counters, before) == {
        "scalar_mults": 2, "hash_ops": 1, "kem_rng_draws": 1}
    c0b, _, _ = s.encap(pk)
    assert c0a != c0b


def test_decap_counters_and_wrong_key():
    s = suite(4)
    sk, pk = s.keygen()
    sk2, _ = s.keygen()
    c0, ks, _ = s.encap(pk)
    before = s.counters.snapshot()
    assert s.decap(sk, c0) == ks
    assert delta(s.counters, before) == {"scalar_mults": 1, "hash_ops": 1}
    wrong = s.decap(sk2, c0)
    assert wrong != ks
    c1, tag = s.senc(ks, b"payload")
    with pytest.raises(MacFailure):
        s.sdec(wrong, c1, tag)  # mismatched secret fails the tag check


def test_decap_rejects_malformed_share():
    s = suite(5)
    sk, _ = s.keygen()
    for bad in (b"", b"\x00", b"\x04" + b"\x01" * 32, b"\x02" + b"\xff" * 32):
        with pytest.raises(GroupElementError):
            s.decap(sk, bad)


def test_dem_round_trip_and_counters():
    s = suite(6)
    _, pk = s.keygen()
    _, ks, _ = s.encap(pk)
    before = s.counters.snapshot()
    c1, tag = s.senc(ks, b"hello subscriber")
    assert delta(s.counters, before) == {"sym_encs": 1, "hash_ops": 1}
    assert len(tag) == 32
    before = s.counters.snapshot()
    assert s.sdec(ks, c1, tag) == b"hello subscriber"
    assert delta(s.counters, before) == {"sym_decs": 1, "hash_ops": 1}


def test_dem_verify_before_decrypt():
    s = suite(7)
    _, pk = s.keygen()
    _, ks, _ = s.encap(pk)
    c1, tag = s.senc(ks, b"message")
    before = s.counters.snapshot()
    with pytest.raises(MacFailure):
        s.sdec(ks, c1, tag[:-1])
    # a failed check costs the one hash and never touches the cipher
    assert delta(s.counters, before) == {"hash_ops": 1}


def test_dem_single_bit_tamper_rejected():
    s = suite(8)
    _, pk = s.keygen()
    _, ks, _ = s.encap(pk)
    m = bytes(s.rng.randbytes(24))
    c1, tag = s.senc(ks, m)
    rng = random.Random(9)
    for _ in range(64):
        which, blob = rng.choice([("c1", c1), ("tag", tag)])
        i = rng.randrange(len(blob) * 8)
        flipped = bytearray(blob)
        flipped[i // 8] ^= 1 << (i % 8)
        bad_c1 = bytes(flipped) if which == "c1" else c1
        bad_tag = bytes(flipped) if which == "tag" else tag
        with pytest.raises(MacFailure):
            s.sdec(ks, bad_c1, bad_tag)


def test_senc_refuses_empty_message():
    s = suite(10)
    _, pk = s.keygen()
    _, ks, _ = s.encap(pk)
    with pytest.raises(CryptoError):
        s.senc(ks, b"")


def test_shared_secret_split():
    s = suite(11)
    sk, pk = s.keygen()
    c0, ks, _ = s.encap(pk)
    assert len(ks.s1) == len(ks.s2) == 32
    assert ks.raw == ks.s1 + ks.s2
    assert ks.s1 != ks.s2
    assert s.decap(sk, c0).raw == ks.raw


# -- derivation family -------------------------------------------------------

def test_f_determinism_and_lengths():
    s = suite(12)
    k = b"\x01" * 32
    for tag in ("1", "2", "3", "4", "1*"):
        out = s.f(tag, k, b"data")
        assert out == s.f(tag, k, b"data")
        assert len(out) == 32
    assert len(s.f("5", k, b"data")) == 6
    assert len(s.f("5*", k, b"data")) == 6


def test_f_domain_separation():
    s = suite(13)
    k = b"\x02" * 32
    rng = random.Random(14)
    for _ in range(200):
        x = rng.randbytes(16)
        outs = [s.f(t, k, x)[:6] for t in ("1", "2", "3", "4", "5", "1*", "5*")]
        assert len(set(outs)) == len(outs)


def test_f_unknown_tag():
    with pytest.raises(CryptoError):
        suite().f("6", b"k" * 32, b"x")


def test_f_field_framing_not_ambiguous():
    s = suite(15)
    k = b"\x03" * 32
    assert s.f("1", k, b"ab", b"c") != s.f("1", k, b"a", b"bc")


def test_hash_accounting_one_per_call():
    s = suite(16)
    before = s.counters.snapshot()
    s.f("1", b"k" * 32, b"x")
    s.kdf_anchor(b"a", b"b")
    s.digest("anything", b"c")
    assert delta(s.counters, before) == {"hash_ops": 3}


def test_kdf_anchor_input_sensitivity():
    s = suite(17)
    base = (b"ckik", b"r" * 32, b"sqn000")
    k1 = s.kdf_anchor(*base, b"sn-one")
    k2 = s.kdf_anchor(*base, b"sn-two")
    assert k1 != k2 and len(k1) == 32


# -- DH ------------------------------------------------------------------

def test_dh_symmetry():
    s = suite(18)
    for _ in range(20):
        a = _P256.draw_scalar(s.rng)
        b = _P256.draw_scalar(s.rng)
        assert s.dh_shared(a, s.dh_pub(b)) == s.dh_shared(b, s.dh_pub(a))


def test_dh_counters():
    s = suite(19)
    a = _P256.draw_scalar(s.rng)
    before = s.counters.snapshot()
    pub = s.dh_pub(a)
    assert delta(s.counters, before) == {"scalar_mults": 1}
    before = s.counters.snapshot()
    s.dh_shared(a, pub)
    assert delta(s.counters, before) == {"scalar_mults": 1}


def test_dh_rejects_non_points():
    s = suite(20)
    a = _P256.draw_scalar(s.rng)
    with pytest.raises(GroupElementError):
        s.dh_shared(a, b"\x00")  # the point-at-infinity encoding
    with pytest.raises(GroupElementError):
        s.dh_shared(a, b"\x02" + b"\xff" * 32)


def test_scalar_from_bytes_range_and_determinism():
    s = suite(21)
    seen = set()
    for i in range(50):
        v = s.scalar_from_bytes(bytes([i]) * 32)
        assert 1 <= v < _P256.order
        seen.add(v)
    assert len(seen) == 50
    assert s.scalar_from_bytes(b"x" * 32) == s.scalar_from_bytes(b"x" * 32)


def test_draw_challenge_counted():
    s = suite(22)
    before = s.counters.snapshot()
    r = s.draw_challenge()
    assert len(r) == 32
    assert delta(s.counters, before) == {"rng_draws": 1}


# -- counters / helpers -------------------------------------------------------

def test_counters_pause_and_reset():
    c = OpCounters()
    c.bump("hash_ops")
    with c.paused():
        c.bump("hash_ops", 5)
    assert c.hash_ops == 1
    c.reset()
    assert c.snapshot()["hash_ops"] == 0


def test_xor_helper():
    s = suite(23)
    assert s.xor(b"\x0f\x00", b"\x01\x01") == b"\x0e\x01"
    assert s.counters.xors == 1
    with pytest.raises(CryptoError):
        xor_bytes(b"\x00", b"\x00\x00")


def test_sqn_encoding():
    assert encode_sqn(0) == b"\x00" * 6
    assert decode_sqn(encode_sqn(123456789)) == 123456789
    with pytest.raises(CryptoError):
        encode_sqn(1 << 48)
    with pytest.raises(CryptoError):
        decode_sqn(b"\x00" * 5)


def test_unsupported_curve():
    with pytest.raises(UnsupportedCurve):
        CryptoSuite(curve="secp521r1")


def test_curve25519_backend():
    s = suite(24, curve="curve25519")
    sk, pk = s.keygen()
    assert len(pk) == 32
    c0, ks, _ = s.encap(pk)
    assert s.decap(sk, c0) == ks
    a, b = 9, 10  # deterministic exponents are fine for the alt backend
    do = s.dh_shared
    assert do(a, s.dh_pub(b)) == do(b, s.dh_pub(a))


def test_derive_rng_reproducible():
    assert derive_rng(5, "x").randbytes(8) == derive_rng(5, "x").randbytes(8)
    assert derive_rng(5, "x").randbytes(8) != derive_rng(5, "y").randbytes(8)
