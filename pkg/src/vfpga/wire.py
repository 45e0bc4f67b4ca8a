"""Wire protocol: guests talking to a broker over a local stream socket.

Frame layout (little-endian):

    u32 length      bytes that follow (kind through payload)
    u16 kind        request kind; responses set bit 0x8000
    u32 request_id  echoed in the response
    u32 token       session token; 0 for sessionless operations
    payload         kind-specific

Response payload: u8 status (0 ok, 1 error), f64 completion time, four f64
cost parts (software, transfer, kernel, reconfiguration), then the value
blob on success or {u16 error code, utf-8 message} on failure.

The server is single-threaded and owns the broker and its event queue.
Two scheduling modes:

* eager (default): requests run on arrival and the queue drains fully.
  Fine for one caller at a time; virtual-time interleaving across talkers
  depends on arrival order.
* gated (between BEGIN and the end of the participating sessions): the
  queue advances one event at a time and never moves while any
  participating session has been answered but has not yet sent its next
  request. Parked requests are admitted in vm-id order once nobody is
  owed one. This reproduces, event for event, the trajectory the same
  scenario takes on an in-process event loop, which is what makes wire
  and in-process runs byte-identical.
"""

from __future__ import annotations

import os
import selectors
import socket
import struct
import threading

from .errors import (ERROR_CODES, DeadlockDetected, ProtocolError, VfpgaError,
                     error_from_code)
from .mmu import MemHandle
from .vmm import Broker, OpResult

RESP = 0x8000

ATTACH = 1
DETACH = 2
ALLOC = 3
FREE = 4
WRITE_BUF = 5
READ_BUF = 6
REPROGRAM = 7
GET_INFO = 8
REG_WRITE = 9
REG_READ = 10
WAIT_IRQ = 11
SLEEP = 12
BEGIN = 20
FINISH = 21
EXPORT_TRACE = 22
STATE_DIGEST = 23
SHUTDOWN = 24

_HEAD = struct.Struct("<HII")          # kind, request_id, token
_RESP_COMMON = struct.Struct("<Bddddd")  # status, t_complete, 4 cost parts
_COST_KEYS = ("software", "transfer", "kernel", "reconfig")

IFACE_CODES = {"kernel-cra": 0, "memory": 1, "reprogram": 2}
IFACE_NAMES_BY_CODE = {v: k for k, v in IFACE_CODES.items()}

MAX_FRAME = 1 << 30


def _pack_frame(kind: int, request_id: int, token: int, payload: bytes) -> bytes:
    body = _HEAD.pack(kind, request_id, token) + payload
    return struct.pack("<I", len(body)) + body


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        s = struct.Struct("<" + fmt)
        if self.pos + s.size > len(self.data):
            raise ProtocolError("truncated payload")
        out = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return out if len(out) > 1 else out[0]

    def rest(self) -> bytes:
        out = self.data[self.pos:]
        self.pos = len(self.data)
        return out


def _encode_result(kind: int, result: OpResult) -> bytes:
    costs = [result.costs.get(k, 0.0) for k in _COST_KEYS]
    head = _RESP_COMMON.pack(0 if result.ok else 1, result.t_complete, *costs)
    if not result.ok:
        code = ERROR_CODES.get(type(result.error), 0)
        msg = str(result.error).encode()
        return head + struct.pack("<H", code) + msg
    return head + _encode_value(kind, result.value)


def _encode_value(kind: int, value) -> bytes:
    if kind == ALLOC:
        return struct.pack("<IQQIII", value.handle_id, value.base_addr,
                           value.size, value.first_segment,
                           value.segment_count, value.owner)
    if kind == READ_BUF:
        return value
    if kind == GET_INFO:
        return struct.pack("<BBBQ", IFACE_CODES[value["kind"]], value["prr"],
                           value["reg_count"], value["segment_size"])
    if kind == REG_WRITE:
        return struct.pack("<B", 0 if value == "ok" else 1)
    if kind == REG_READ:
        return struct.pack("<QB", value[0], 0 if value[1] == "ok" else 1)
    if kind == WAIT_IRQ:
        return struct.pack("<BQBd", value["prr"], value["done"],
                           int(value["error"]), value["kernel_seconds"])
    if kind == EXPORT_TRACE:
        return value.encode()
    return b""  # detach/free/write_buf/reprogram/sleep carry no value


def _decode_value(kind: int, reader: _Reader):
    if kind == ALLOC:
        handle_id, base, size, first, count, owner = reader.take("IQQIII")
        return MemHandle(handle_id=handle_id, base_addr=base, size=size,
                         first_segment=first, segment_count=count, owner=owner)
    if kind == READ_BUF:
        return reader.rest()
    if kind == GET_INFO:
        code, prr, regs, seg = reader.take("BBBQ")
        return {"kind": IFACE_NAMES_BY_CODE[code], "prr": prr,
                "reg_count": regs, "segment_size": seg}
    if kind == REG_WRITE:
        return "ok" if reader.take("B") == 0 else "frozen"
    if kind == REG_READ:
        value, frozen = reader.take("QB")
        return (value, "ok" if frozen == 0 else "frozen")
    if kind == WAIT_IRQ:
        prr, done, error, seconds = reader.take("BQBd")
        return {"prr": prr, "done": done, "error": bool(error),
                "kernel_seconds": seconds}
    if kind == EXPORT_TRACE:
        return reader.rest().decode()
    return None


# ---------------------------------------------------------------------------
# server

_WAITING = "waiting"
_PENDING = "pending"
_INFLIGHT = "inflight"
_DONE = "done"


class _Conn:
    def __init__(self, sock):
        self.sock = sock
        self.buf = bytearray()
        self.tokens: set = set()


class WireServer(threading.Thread):
    def __init__(self, broker: Broker, path: str):
        super().__init__(daemon=True)
        self.broker = broker
        self.path = path
        if os.path.exists(path):
            os.unlink(path)
        self._listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._listener.bind(path)
        self._listener.listen()
        self._listener.setblocking(False)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._listener, selectors.EVENT_READ, None)
        self._tokens = iter(range(1, 1 << 31))
        self._sessions: dict = {}     # token -> broker Session
        self._conn_of: dict = {}      # token -> _Conn
        self._state: dict = {}        # token -> gating state
        self._parked: dict = {}       # token -> (conn, kind, req_id, payload)
        self._gated: set = set()
        self._stopping = False

    # -- main loop -------------------------------------------------------

    def run(self) -> None:
        queue = self.broker.queue
        while not self._stopping:
            gating = bool(self._gated)
            owed = gating and any(self._state[t] == _WAITING for t in self._gated)
            busy = gating and not owed and (self._parked or len(queue))
            self._poll(0.0 if busy else 0.05)
            if self._stopping:
                break
            if not self._gated:
                queue.run_until_idle()
                continue
            if any(self._state[t] == _WAITING for t in self._gated):
                continue  # somebody still owes us their next request
            self._admit()
            if len(queue):
                queue.step()
            elif any(self._state[t] == _INFLIGHT for t in self._gated):
                # nothing scheduled but sessions are blocked in waits
                self.broker.fail_parked(
                    DeadlockDetected(self.broker.parked_vms()))
        self._sel.close()
        self._listener.close()
        if os.path.exists(self.path):
            os.unlink(self.path)

    def stop(self) -> None:
        self._stopping = True

    def _poll(self, timeout: float) -> None:
        for key, _ in self._sel.select(timeout):
            if key.data is None:
                sock, _ = self._listener.accept()
                sock.setblocking(False)
                self._sel.register(sock, selectors.EVENT_READ, _Conn(sock))
            else:
                self._service(key.data)

    def _service(self, conn: _Conn) -> None:
        try:
            chunk = conn.sock.recv(1 << 16)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            chunk = b""
        if not chunk:
            self._drop(conn)
            return
        conn.buf += chunk
        while True:
            if len(conn.buf) < 4:
                return
            (length,) = struct.unpack_from("<I", conn.buf, 0)
            if length > MAX_FRAME:
                self._drop(conn)
                return
            if len(conn.buf) < 4 + length:
                return
            body = bytes(conn.buf[4:4 + length])
            del conn.buf[:4 + length]
            kind, req_id, token = _HEAD.unpack_from(body, 0)
            self._handle(conn, kind, req_id, token, body[_HEAD.size:])

    def _drop(self, conn: _Conn) -> None:
        try:
            self._sel.unregister(conn.sock)
        except (KeyError, ValueError):
            pass
        conn.sock.close()
        for token in list(conn.tokens):
            session = self._sessions.pop(token, None)
            self._conn_of.pop(token, None)
            self._gated.discard(token)
            self._state.pop(token, None)
            self._parked.pop(token, None)
            if session is not None and session.attached:
                self.broker.detach_vm(session, None)
        conn.tokens.clear()

    # -- request handling ---------------------------------------------------

    def _handle(self, conn, kind, req_id, token, payload) -> None:
        if kind == SHUTDOWN:
            self._respond(conn, kind, req_id, token,
                          OpResult(ok=True, t_complete=self.broker.now))
            self._stopping = True
            return
        if kind == BEGIN:
            self._gated = set(self._sessions)
            for t in self._gated:
                self._state[t] = _WAITING
            self._respond(conn, kind, req_id, token,
                          OpResult(ok=True, t_complete=self.broker.now))
            return
        if kind == FINISH:
            for t in conn.tokens:
                if t in self._gated:
                    self._state[t] = _DONE
            self._respond(conn, kind, req_id, token,
                          OpResult(ok=True, t_complete=self.broker.now))
            return
        if kind == EXPORT_TRACE:
            self._respond(conn, kind, req_id, token,
                          OpResult(ok=True, value=self.broker.export_trace(),
                                   t_complete=self.broker.now))
            return
        if kind == STATE_DIGEST:
            blob = struct.pack("<d", self.broker.now) + \
                self.broker.memory_digest().encode()
            self._respond_raw(conn, kind, req_id, token, blob)
            return
        if token in self._gated and self._state.get(token) == _WAITING:
            self._state[token] = _PENDING
            self._parked[token] = (conn, kind, req_id, payload)
            return
        self._start(conn, kind, req_id, token, payload)

    def _admit(self) -> None:
        if not self._parked:
            return
        order = sorted(self._parked,
                       key=lambda t: self._sessions[t].vm_id)
        for token in order:
            conn, kind, req_id, payload = self._parked.pop(token)
            self._state[token] = _INFLIGHT
            self._start(conn, kind, req_id, token, payload)

    def _start(self, conn, kind, req_id, token, payload) -> None:
        broker = self.broker
        reply = lambda result: self._finish(conn, kind, req_id, token, result)
        try:
            r = _Reader(payload)
            if kind == ATTACH:
                vm_id = r.take("I")
                self._start_attach(conn, req_id, vm_id)
                return
            session = self._sessions.get(token)
            if session is None:
                raise ProtocolError(f"unknown session token {token}")
            if token in self._gated:
                self._state[token] = _INFLIGHT
            if kind == DETACH:
                broker.detach_vm(session, reply)
            elif kind == ALLOC:
                broker.handle_alloc(session, r.take("Q"), reply)
            elif kind == FREE:
                broker.handle_free(session, r.take("I"), reply)
            elif kind == WRITE_BUF:
                handle_id, offset = r.take("IQ")
                broker.handle_write_buffer(session, handle_id, offset,
                                           r.rest(), reply)
            elif kind == READ_BUF:
                handle_id, offset, length = r.take("IQQ")
                broker.handle_read_buffer(session, handle_id, offset,
                                          length, reply)
            elif kind == REPROGRAM:
                broker.handle_reprogram(session, r.rest(), reply)
            elif kind == GET_INFO:
                broker.handle_get_info(
                    session, IFACE_NAMES_BY_CODE[r.take("B")], reply)
            elif kind == REG_WRITE:
                reg, value = r.take("BQ")
                broker.handle_reg_write(session, reg, value, reply)
            elif kind == REG_READ:
                broker.handle_reg_read(session, r.take("B"), reply)
            elif kind == WAIT_IRQ:
                broker.handle_wait_irq(session, reply)
            elif kind == SLEEP:
                broker.handle_sleep(session, r.take("d"), reply)
            else:
                raise ProtocolError(f"unknown message kind {kind}")
        except (ProtocolError, KeyError, struct.error) as exc:
            err = exc if isinstance(exc, VfpgaError) else \
                ProtocolError(f"malformed {kind} request")
            self._respond(conn, kind, req_id, token,
                          OpResult(ok=False, error=err,
                                   t_complete=broker.now))

    def _start_attach(self, conn, req_id, vm_id) -> None:
        def reply(result: OpResult):
            if not result.ok:
                self._respond(conn, ATTACH, req_id, 0, result)
                return
            session = result.value
            token = next(self._tokens)
            self._sessions[token] = session
            self._conn_of[token] = conn
            conn.tokens.add(token)
            blob = struct.pack("<IB", token, session.prr)
            self._respond_raw(conn, ATTACH, req_id, token, blob,
                              result=result)

        self.broker.attach_vm(vm_id, reply)

    def _finish(self, conn, kind, req_id, token, result: OpResult) -> None:
        if token in self._gated:
            if kind == DETACH and result.ok:
                self._gated.discard(token)
                self._state.pop(token, None)
            else:
                self._state[token] = _WAITING
        if kind == DETACH and result.ok:
            self._sessions.pop(token, None)
            self._conn_of.pop(token, None)
            conn.tokens.discard(token)
        self._respond(conn, kind, req_id, token, result)

    def _respond(self, conn, kind, req_id, token, result: OpResult) -> None:
        frame = _pack_frame(kind | RESP, req_id, token,
                            _encode_result(kind, result))
        self._send(conn, frame)

    def _respond_raw(self, conn, kind, req_id, token, blob,
                     result: OpResult | None = None) -> None:
        result = result or OpResult(ok=True, t_complete=self.broker.now)
        costs = [result.costs.get(k, 0.0) for k in _COST_KEYS]
        head = _RESP_COMMON.pack(0, result.t_complete, *costs)
        self._send(conn, _pack_frame(kind | RESP, req_id, token, head + blob))

    @staticmethod
    def _send(conn, frame: bytes) -> None:
        # Clients are synchronous (always draining while a response is
        # due), so blocking here for one frame cannot deadlock. sendall
        # on the non-blocking socket would truncate large responses.
        try:
            conn.sock.setblocking(True)
            try:
                conn.sock.sendall(frame)
            finally:
                conn.sock.setblocking(False)
        except OSError:
            pass  # peer vanished; its state unwinds on the read side


# ---------------------------------------------------------------------------
# client

class WireClient:
    def __init__(self, path: str):
        self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self.sock.connect(path)
        self._req_ids = iter(range(1, 1 << 31))

    def close(self) -> None:
        self.sock.close()

    def _recv_exact(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            chunk = self.sock.recv(n - len(out))
            if not chunk:
                raise ProtocolError("connection closed mid-frame")
            out += chunk
        return bytes(out)

    def call(self, kind: int, payload: bytes = b"", token: int = 0) -> tuple:
        """Returns (OpResult, token_from_response)."""
        req_id = next(self._req_ids)
        self.sock.sendall(_pack_frame(kind, req_id, token, payload))
        while True:
            (length,) = struct.unpack("<I", self._recv_exact(4))
            body = self._recv_exact(length)
            rkind, rreq, rtoken = _HEAD.unpack_from(body, 0)
            if rkind != (kind | RESP) or rreq != req_id:
                raise ProtocolError(
                    f"unexpected frame kind={rkind:#x} req={rreq}")
            reader = _Reader(body[_HEAD.size:])
            status, t_complete, *costs = reader.take("Bddddd")
            if status:
                code = reader.take("H")
                message = reader.rest().decode()
                result = OpResult(ok=False, error=error_from_code(code, message),
                                  t_complete=t_complete,
                                  costs=dict(zip(_COST_KEYS, costs)))
                return result, rtoken
            if kind == ATTACH:
                atoken, prr = reader.take("IB")
                result = OpResult(ok=True, value={"prr": prr},
                                  t_complete=t_complete,
                                  costs=dict(zip(_COST_KEYS, costs)))
                return result, atoken
            if kind == STATE_DIGEST:
                now = reader.take("d")
                value = {"now": now, "digest": reader.rest().decode()}
            else:
                value = _decode_value(kind, reader)
            result = OpResult(ok=True, value=value, t_complete=t_complete,
                              costs=dict(zip(_COST_KEYS, costs)))
            return result, rtoken


class WireTransport:
    """Drop-in for guest.InProcTransport, speaking the wire protocol."""

    def __init__(self, path: str):
        self.client = WireClient(path)
        self.token = 0
        self.prr = None

    def close(self) -> None:
        self.client.close()

    def attach(self, vm_id: int) -> OpResult:
        payload = struct.pack("<I", vm_id)
        result, token = self.client.call(ATTACH, payload)
        if result.ok:
            self.token = token
            self.prr = result.value["prr"]
        return result

    def _call(self, kind: int, payload: bytes = b"") -> OpResult:
        result, _ = self.client.call(kind, payload, self.token)
        return result

    def detach(self) -> OpResult:
        result = self._call(DETACH)
        if result.ok:
            self.token = 0
        return result

    def alloc(self, size: int) -> OpResult:
        return self._call(ALLOC, struct.pack("<Q", size))

    def free(self, handle_id: int) -> OpResult:
        return self._call(FREE, struct.pack("<I", handle_id))

    def write_buf(self, handle_id: int, offset: int, data: bytes) -> OpResult:
        return self._call(WRITE_BUF, struct.pack("<IQ", handle_id, offset) + data)

    def read_buf(self, handle_id: int, offset: int, length: int) -> OpResult:
        return self._call(READ_BUF, struct.pack("<IQQ", handle_id, offset, length))

    def reprogram(self, bitfile_bytes: bytes) -> OpResult:
        return self._call(REPROGRAM, bitfile_bytes)

    def get_info(self, iface_name: str) -> OpResult:
        return self._call(GET_INFO, struct.pack("<B", IFACE_CODES[iface_name]))

    def reg_write(self, reg_index: int, value: int) -> OpResult:
        return self._call(REG_WRITE, struct.pack("<BQ", reg_index, value))

    def reg_read(self, reg_index: int) -> OpResult:
        return self._call(REG_READ, struct.pack("<B", reg_index))

    def wait_irq(self) -> OpResult:
        return self._call(WAIT_IRQ)

    def sleep(self, seconds: float) -> OpResult:
        return self._call(SLEEP, struct.pack("<d", seconds))

    # sessionless extras
    def begin(self) -> OpResult:
        return self._call(BEGIN)

    def finish(self) -> OpResult:
        return self._call(FINISH)

    def export_trace(self) -> str:
        return self._call(EXPORT_TRACE).unwrap()

    def state_digest(self) -> dict:
        return self._call(STATE_DIGEST).unwrap()

    def shutdown(self) -> None:
        self._call(SHUTDOWN)
