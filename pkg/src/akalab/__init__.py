"""akalab: an executable laboratory for 5G authentication and key agreement.

Three protocol variants run as UE/SN/HN state machines over a common wire
format: the sequence-number 5G-AKA baseline, a stateless mutual
challenge-response protocol ("p1"), and its ephemeral-DH extension with
perfect forward secrecy ("p2").  A deterministic network simulator hosts
replay/linkability attacks and key-compromise experiments against all three,
a socket testbed runs them between real processes, and an instrumented
benchmark audits per-party operation and message budgets.
"""

__version__ = "0.1.0"

PROTOCOL_BASELINE = 0
PROTOCOL_P1 = 1
PROTOCOL_P2 = 2

PROTOCOL_NAMES = {
    PROTOCOL_BASELINE: "baseline",
    PROTOCOL_P1: "p1",
    PROTOCOL_P2: "p2",
}

PROTOCOL_IDS = {name: pid for pid, name in PROTOCOL_NAMES.items()}
