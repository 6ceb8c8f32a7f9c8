"""Networked deployment: a home-network daemon, a serving-network daemon,
and a subscriber client, speaking the canonical frame format over TCP.

The state machines are the exact same transition classes the simulator
drives; this module only adds transports, provisioning, and teardown.  The
SN<->HN leg runs inside a pre-shared-key, mutually authenticated, encrypted
record tunnel; the subscriber-facing socket is plain frames, and the serving
daemon refuses to ever put an anchor-key-bearing frame on it.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import logging
import os
import socket
import socketserver
import threading
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import PROTOCOL_BASELINE, PROTOCOL_IDS, PROTOCOL_NAMES
from .baseline import SnBaseline, UeBaseline
from .crypto import CryptoSuite, child_seed, derive_rng, fingerprint
from .netlab import Lab
from .protocol1 import SnP1
from .session import Outcome, SubscriberDb, SubscriberRecord, Usim
from .wire import (
    Abort,
    DecodeError,
    FrameMeta,
    KeyConfirmRequest,
    M4,
    ProtocolError,
    SessionResult,
    SnChallenge,
    TransientFailure,
    carries_anchor_key,
    decode,
    encode,
    is_protocol_frame,
    read_frame,
)

log = logging.getLogger("akalab")

PROVISION_HEADER = "#akalab-subscribers v1"

# only these kinds may appear on the subscriber-facing socket
_UE_SOCKET_KINDS = (SnChallenge, KeyConfirmRequest, M4, SessionResult,
                    TransientFailure, ProtocolError)

EXIT_OK = 0
EXIT_LOCAL_ABORT = 2
EXIT_REMOTE_ABORT = 3
EXIT_TRANSIENT = 4
EXIT_TIMEOUT = 5
EXIT_USAGE = 6


class ProvisioningError(Exception):
    pass


class TunnelError(Exception):
    pass


def setup_logging() -> None:
    level = os.environ.get("AKALAB_LOG", "info").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


# ---------------------------------------------------------------------------
# provisioning and key files


def load_subscribers(path: str) -> dict[str, bytes]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != PROVISION_HEADER:
        raise ProvisioningError(f"missing header line {PROVISION_HEADER!r}")
    out: dict[str, bytes] = {}
    for lineno, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ProvisioningError(f"line {lineno}: expected SUPI,k_hex")
        supi, k_hex = parts[0].strip(), parts[1].strip()
        if len(k_hex) != 64:
            raise ProvisioningError(f"line {lineno}: key must be 64 hex chars")
        try:
            k = bytes.fromhex(k_hex)
        except ValueError as exc:
            raise ProvisioningError(f"line {lineno}: bad hex") from exc
        if supi in out:
            raise ProvisioningError(f"line {lineno}: duplicate SUPI {supi!r}")
        out[supi] = k
    if not out:
        raise ProvisioningError("no subscribers provisioned")
    return out


def write_subscribers(path: str, records: dict[str, bytes]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(PROVISION_HEADER + "\n")
        for supi in sorted(records):
            fh.write(f"{supi},{records[supi].hex()}\n")


def build_db(records: dict[str, bytes]) -> SubscriberDb:
    db = SubscriberDb()
    for supi, k in records.items():
        # database counter is the next value to issue; cards start at 0
        db.add(SubscriberRecord(supi, k, sqn=1))
    return db


def read_hex_file(path: str) -> bytes:
    with open(path, "r", encoding="utf-8") as fh:
        return bytes.fromhex(fh.read().strip())


def write_hex_file(path: str, data: bytes) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(data.hex() + "\n")


# ---------------------------------------------------------------------------
# secure SN<->HN tunnel


class SecureTunnel:
    """PSK-authenticated, encrypted, replay-ordered record layer.

    Three-pass handshake (nonce exchange with keyed tags both ways), then
    AES-GCM records under direction-separated keys with strict counter
    nonces.  Models the standards' assumption of an authenticated secure
    channel without dragging in a certificate stack.
    """

    def __init__(self, sock: socket.socket, psk: bytes, initiator: bool):
        self._sock = sock
        na, nb = self._handshake(psk, initiator)
        okm = hashlib.sha512(b"tunnel keys" + psk + na + nb).digest()
        k_init, k_resp = okm[:32], okm[32:]
        self._send_key = AESGCM(k_init if initiator else k_resp)
        self._recv_key = AESGCM(k_resp if initiator else k_init)
        self._send_ctr = 0
        self._recv_ctr = 0

    def _handshake(self, psk: bytes, initiator: bool) -> tuple[bytes, bytes]:
        def tag(label: bytes, na: bytes, nb: bytes) -> bytes:
            return hmac_mod.new(psk, label + na + nb, hashlib.sha256).digest()

        if initiator:
            na = os.urandom(16)
            self._sock.sendall(na)
            blob = self._read(48)
            nb, tb = blob[:16], blob[16:]
            if not hmac_mod.compare_digest(tb, tag(b"responder", na, nb)):
                raise TunnelError("peer failed authentication")
            self._sock.sendall(tag(b"initiator", na, nb))
        else:
            na = self._read(16)
            nb = os.urandom(16)
            self._sock.sendall(nb + tag(b"responder", na, nb))
            ta = self._read(32)
            if not hmac_mod.compare_digest(ta, tag(b"initiator", na, nb)):
                raise TunnelError("peer failed authentication")
        return na, nb

    def _read(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise TunnelError("peer closed during handshake")
            buf += chunk
        return buf

    def send(self, frame: bytes) -> None:
        nonce = self._send_ctr.to_bytes(12, "big")
        self._send_ctr += 1
        ct = self._send_key.encrypt(nonce, frame, b"akalab record")
        self._sock.sendall(len(ct).to_bytes(4, "big") + ct)

    def recv(self) -> bytes | None:
        head = b""
        while len(head) < 4:
            chunk = self._sock.recv(4 - len(head))
            if not chunk:
                if head:
                    raise TunnelError("peer closed mid-record")
                return None
            head += chunk
        length = int.from_bytes(head, "big")
        if length > 1 << 20:
            raise TunnelError("implausible record length")
        ct = self._read(length)
        nonce = self._recv_ctr.to_bytes(12, "big")
        self._recv_ctr += 1
        try:
            return self._recv_key.decrypt(nonce, ct, b"akalab record")
        except Exception as exc:
            raise TunnelError(f"record rejected: {exc}") from exc


# ---------------------------------------------------------------------------
# home-network daemon


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class HnDaemon:
    """Terminates SN tunnels; one authentication session per connection."""

    def __init__(self, host: str, port: int, sk_hn: int, db: SubscriberDb,
                 psk: bytes, seed: int | None = None, timeout: float = 5.0):
        self.sk_hn, self.db, self.psk = sk_hn, db, psk
        self.seed, self.timeout = seed, timeout
        self._conn_counter = 0
        self._lock = threading.Lock()
        daemon = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                daemon._serve(self.request)

        self.server = _ThreadingServer((host, port), Handler)
        self.address = self.server.server_address

    def _session_rng(self):
        with self._lock:
            n = self._conn_counter
            self._conn_counter += 1
        seed = self.seed if n == 0 else child_seed(self.seed, "conn", n)
        return derive_rng(seed, "rng", "hn")

    def _serve(self, sock: socket.socket) -> None:
        sock.settimeout(self.timeout)
        try:
            tunnel = SecureTunnel(sock, self.psk, initiator=False)
        except (TunnelError, OSError) as exc:
            log.warning("hn: tunnel handshake failed: %s", exc)
            return
        machine = None
        meta = None
        try:
            while machine is None or machine.outcome is None:
                raw = tunnel.recv()
                if raw is None:
                    break
                try:
                    msg, got_meta = decode(raw)
                except DecodeError as exc:
                    if meta is not None:
                        tunnel.send(encode(ProtocolError(str(exc)), meta))
                    log.warning("hn: malformed frame: %s", exc)
                    return
                if machine is None:
                    meta = got_meta
                    machine = self._build(got_meta.protocol_id)
                elif got_meta.session_id != meta.session_id:
                    tunnel.send(encode(ProtocolError("session id mismatch"), meta))
                    return
                for _, out in machine.handle("sn", msg):
                    tunnel.send(encode(out, meta))
            if machine is not None and machine.k_seaf is not None \
                    and machine.outcome is Outcome.COMPLETE:
                log.info("hn session %s complete supi=%s kseaf_fp=%s",
                         meta.session_id.hex()[:8], machine.supi,
                         fingerprint(machine.k_seaf))
        except (TunnelError, OSError, socket.timeout) as exc:
            log.warning("hn: session dropped: %s", exc)
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def _build(self, protocol_id: int):
        from .baseline import HnBaseline
        from .protocol1 import HnP1
        from .protocol2 import HnP2
        suite = CryptoSuite(rng=self._session_rng())
        cls = {0: HnBaseline, 1: HnP1, 2: HnP2}[protocol_id]
        return cls(self.sk_hn, self.db, suite)

    def serve_forever(self):
        self.server.serve_forever(poll_interval=0.1)

    def shutdown(self):
        self.server.shutdown()
        self.server.server_close()


# ---------------------------------------------------------------------------
# serving-network daemon


class SnDaemon:
    """Terminates subscriber connections and relays to the home network.

    Anchor-key-bearing frames stay on the tunnel by construction: every
    frame headed for the subscriber socket passes an allowlist check.
    """

    def __init__(self, host: str, port: int, hn_addr: tuple[str, int],
                 psk: bytes, id_sn: str = "sn.lab", seed: int | None = None,
                 timeout: float = 5.0):
        self.hn_addr, self.psk, self.id_sn = hn_addr, psk, id_sn
        self.seed, self.timeout = seed, timeout
        self._conn_counter = 0
        self._lock = threading.Lock()
        daemon = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                daemon._serve(self.request)

        self.server = _ThreadingServer((host, port), Handler)
        self.address = self.server.server_address

    def _next_conn(self) -> int:
        with self._lock:
            n = self._conn_counter
            self._conn_counter += 1
            return n

    def _serve(self, ue_sock: socket.socket) -> None:
        ue_sock.settimeout(self.timeout)
        n = self._next_conn()
        seed = self.seed if n == 0 else child_seed(self.seed, "conn", n)
        session_id = derive_rng(seed, "session").randbytes(16)
        frames = 0
        meta = None
        machine = None
        try:
            raw = read_frame(ue_sock.recv)
            if raw is None:
                return
            first, got_meta = decode(raw)
            meta = FrameMeta(got_meta.protocol_id, session_id)
            suite = CryptoSuite(rng=derive_rng(seed, "rng", "sn"))
            if got_meta.protocol_id == PROTOCOL_BASELINE:
                machine = SnBaseline(self.id_sn, suite)
            else:
                machine = SnP1(self.id_sn, suite)
        except (DecodeError, OSError, socket.timeout) as exc:
            self._close_with(ue_sock, meta, ProtocolError(str(exc)))
            return

        try:
            hn_sock = socket.create_connection(self.hn_addr, timeout=self.timeout)
            hn_sock.settimeout(self.timeout)
            tunnel = SecureTunnel(hn_sock, self.psk, initiator=True)
        except (OSError, TunnelError) as exc:
            log.warning("sn: home network unreachable: %s", exc)
            self._close_with(ue_sock, meta, TransientFailure("home network unreachable"))
            return

        outcome = "silent_abort"
        try:
            pending = first
            src = "ue"
            while True:
                if is_protocol_frame(pending):
                    frames += 1
                emissions = machine.handle(src, pending)
                for dest, out in emissions:
                    if is_protocol_frame(out):
                        frames += 1
                    if dest == "ue":
                        self._send_ue(ue_sock, out, meta)
                    else:
                        tunnel.send(encode(out, meta))
                if machine.outcome is not None:
                    outcome = machine.outcome.value
                    break
                if not emissions:
                    break
                wait_hn = emissions[-1][0] == "hn"
                if wait_hn:
                    raw = tunnel.recv()
                    if raw is None:
                        break
                    msg, _ = decode(raw)
                    if isinstance(msg, (Abort, ProtocolError)):
                        break
                    pending, src = msg, "hn"
                else:
                    raw = read_frame(ue_sock.recv)
                    if raw is None:
                        break
                    msg, got = decode(raw)
                    if got.protocol_id != meta.protocol_id:
                        break
                    pending, src = msg, "ue"
        except (DecodeError, TunnelError, OSError, socket.timeout) as exc:
            log.warning("sn session %s dropped: %s", session_id.hex()[:8], exc)
        finally:
            try:
                hn_sock.close()
            except OSError:
                pass

        if outcome == "complete" and machine.k_seaf is not None:
            log.info("sn session %s complete supi=%s kseaf_fp=%s frames=%d",
                     session_id.hex()[:8], machine.learned_supi,
                     fingerprint(machine.k_seaf), frames)
        self._close_with(ue_sock, meta, SessionResult(outcome, frames))

    def _send_ue(self, sock: socket.socket, msg, meta: FrameMeta) -> None:
        if carries_anchor_key(msg) or not isinstance(msg, _UE_SOCKET_KINDS):
            raise RuntimeError(
                f"refusing to put {type(msg).__name__} on the subscriber socket")
        sock.sendall(encode(msg, meta))

    def _close_with(self, sock: socket.socket, meta, msg) -> None:
        try:
            if meta is not None:
                self._send_ue(sock, msg, meta)
        except OSError:
            pass
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def serve_forever(self):
        self.server.serve_forever(poll_interval=0.1)

    def shutdown(self):
        self.server.shutdown()
        self.server.server_close()


# ---------------------------------------------------------------------------
# subscriber client


@dataclass
class ClientReport:
    protocol: str
    outcome: str
    exit_code: int
    session_id: str = ""
    ue_socket_frames: int = 0
    session_frames: int | None = None
    kseaf_fp: str | None = None
    counters: dict = field(default_factory=dict)

    def render(self) -> str:
        lines = [
            f"protocol: {self.protocol}",
            f"outcome: {self.outcome}",
            f"session: {self.session_id}",
            f"frames on subscriber socket: {self.ue_socket_frames}",
            f"protocol frames (whole session): {self.session_frames}",
            f"kseaf_fp: {self.kseaf_fp or '-'}",
            "counters: " + " ".join(f"{k}={v}" for k, v in self.counters.items()),
        ]
        kv = [f"report.outcome={self.outcome}",
              f"report.exit={self.exit_code}",
              f"report.frames={self.session_frames}",
              f"report.kseaf_fp={self.kseaf_fp or '-'}"]
        return "\n".join(lines + kv)


def run_ue_client(sn_addr: tuple[str, int], protocol: str, usim: Usim,
                  id_hn: str = "hn.lab", id_sn: str = "sn.lab",
                  seed: int | None = None, timeout: float = 5.0) -> ClientReport:
    """One full authentication against live daemons."""
    pid = PROTOCOL_IDS[protocol]
    suite = CryptoSuite(rng=derive_rng(seed, "rng", "ue"))
    if pid == PROTOCOL_BASELINE:
        machine = UeBaseline(usim, id_sn, id_hn, suite)
    else:
        from .protocol1 import UeP1
        from .protocol2 import UeP2
        machine = (UeP1 if pid == 1 else UeP2)(usim, id_hn, suite)

    report = ClientReport(protocol=protocol, outcome="transport_error",
                          exit_code=EXIT_TRANSIENT)
    try:
        sock = socket.create_connection(sn_addr, timeout=timeout)
    except OSError:
        report.outcome = "connect_failed"
        return report
    sock.settimeout(timeout)
    # the client does not know the SN-chosen session id yet; it stamps its
    # frames with zeros and adopts whatever the SN echoes back
    meta = FrameMeta(pid, bytes(16))
    notice: SessionResult | None = None
    try:
        for _, msg in machine.start():
            sock.sendall(encode(msg, meta))
            report.ue_socket_frames += 1
        while True:
            raw = read_frame(sock.recv)
            if raw is None:
                break
            msg, got = decode(raw)
            report.ue_socket_frames += 1
            report.session_id = got.session_id.hex()
            meta = FrameMeta(pid, got.session_id)
            if isinstance(msg, SessionResult):
                notice = msg
                break
            if isinstance(msg, TransientFailure):
                report.outcome = "transient_failure"
                report.exit_code = EXIT_TRANSIENT
                machine.finish()
                report.counters = machine.counters.snapshot()
                return report
            if isinstance(msg, ProtocolError):
                break
            for _, out in machine.handle("sn", msg):
                sock.sendall(encode(out, meta))
                report.ue_socket_frames += 1
    except socket.timeout:
        machine.finish()
        report.outcome = "timeout"
        report.exit_code = EXIT_TIMEOUT
        report.counters = machine.counters.snapshot()
        return report
    except (DecodeError, OSError) as exc:
        log.warning("ue: transport failure: %s", exc)
    finally:
        try:
            sock.close()
        except OSError:
            pass

    # an outcome set before finish() means the machine itself decided;
    # None means the far side went away while this side was still fine
    local_decided = machine.outcome
    machine.finish()
    report.counters = machine.counters.snapshot()
    remote = notice.outcome if notice is not None else None
    report.session_frames = notice.frames if notice is not None else None

    if local_decided is Outcome.COMPLETE and remote == "complete":
        report.outcome = "complete"
        report.exit_code = EXIT_OK
        report.kseaf_fp = fingerprint(machine.k_seaf)
        log.info("ue session %s complete kseaf_fp=%s",
                 report.session_id[:8], report.kseaf_fp)
    elif local_decided is not None and local_decided is not Outcome.COMPLETE:
        report.outcome = local_decided.value
        report.exit_code = EXIT_LOCAL_ABORT
    else:
        report.outcome = remote or "remote_abort"
        report.exit_code = EXIT_REMOTE_ABORT
    return report


# ---------------------------------------------------------------------------
# configuration


@dataclass
class EndpointConfig:
    """Merged view of a config file section and command-line flags."""

    role: str = ""
    listen: str = "127.0.0.1:0"
    hn: str = ""
    sn: str = ""
    protocol: str = "p1"
    supi: str = ""
    subscribers: str = ""
    sk_hn: str = ""
    pk_hn: str = ""
    psk: str = ""
    id_sn: str = "sn.lab"
    id_hn: str = "hn.lab"
    timeout: float = 5.0
    seed: int | None = None

    @staticmethod
    def parse_addr(text: str) -> tuple[str, int]:
        host, _, port = text.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad address {text!r}; expected host:port")
        return host, int(port)


def make_lab_from_files(subscribers_path: str, sk_path: str, pk_path: str,
                        id_sn: str, id_hn: str) -> Lab:
    records = load_subscribers(subscribers_path)
    sk = int.from_bytes(read_hex_file(sk_path), "big")
    pk = read_hex_file(pk_path)
    usims = {supi: Usim(supi, k, pk) for supi, k in records.items()}
    return Lab(sk, pk, build_db(records), usims, id_sn=id_sn, id_hn=id_hn)
