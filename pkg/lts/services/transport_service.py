"""
Rank-to-rank message transports

Both transports deliver into a per-rank mailbox keyed by the envelope, so
send and receive can be posted in any order. `LoopbackTransport` connects
ranks living in one process; `SocketTransport` runs an asyncio event loop
on a progress thread and speaks the framed wire format over TCP.
Sends and receives take completion callbacks and never block the caller;
the blocking helpers are for host code only.
"""
import asyncio
import logging
import threading
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np

from lts.config import settings
from lts.errors import TransportError
from lts.schemas.envelope import FIELD_GATHER, FIELD_REDUCE, HEADER_SIZE, Envelope, MessageKey

logger = logging.getLogger(__name__)

OnMessage = Callable[[Envelope, bytes], None]
OnError = Callable[[BaseException], None]


def encode_payload(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def decode_payload(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<f8").copy()


def parse_address(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must be host:port, got '{text}'")
    return host, int(port)


@dataclass(eq=False)
class Receive:
    """A posted receive; exactly one of its callbacks fires"""
    key: MessageKey
    on_message: OnMessage
    on_error: Optional[OnError] = None
    cancel_timer: Optional[Callable[[], None]] = None

    def arrive(self, envelope: Envelope, payload: bytes) -> None:
        if self.cancel_timer is not None:
            self.cancel_timer()
        self.on_message(envelope, payload)

    def fail(self, error: BaseException) -> None:
        if self.cancel_timer is not None:
            self.cancel_timer()
        if self.on_error is None:
            logger.error(f"[Transport] receive {self.key} dropped: {error}")
            return
        self.on_error(error)


class Mailbox:
    """
    Messages that arrived before their receive, and receives posted before
    their message. Empty queues are dropped so keys do not pile up.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._messages: Dict[MessageKey, Deque[Tuple[Envelope, bytes]]] = {}
        self._waiters: Dict[MessageKey, Deque[Receive]] = {}
        self._lost: Dict[int, BaseException] = {}

    @staticmethod
    def _pop(table: Dict[MessageKey, Deque], key: MessageKey):
        queue = table.get(key)
        if not queue:
            return None
        item = queue.popleft()
        if not queue:
            del table[key]
        return item

    def deliver(self, envelope: Envelope, payload: bytes) -> None:
        key = envelope.key
        with self._lock:
            receive = self._pop(self._waiters, key)
            if receive is None:
                self._messages.setdefault(key, deque()).append((envelope, payload))
        if receive is not None:
            receive.arrive(envelope, payload)

    def expect(self, receive: Receive) -> None:
        """Match a queued message, fail at once if its source is lost, or wait"""
        with self._lock:
            message = self._pop(self._messages, receive.key)
            lost = self._lost.get(receive.key[0]) if message is None else None
            if message is None and lost is None:
                self._waiters.setdefault(receive.key, deque()).append(receive)
        if message is not None:
            receive.arrive(*message)
        elif lost is not None:
            receive.fail(lost)

    def cancel(self, receive: Receive, error: BaseException) -> bool:
        """Fail a receive that is still waiting; False when it was already matched"""
        with self._lock:
            waiters = self._waiters.get(receive.key)
            if not waiters or receive not in waiters:
                return False
            waiters.remove(receive)
            if not waiters:
                del self._waiters[receive.key]
        receive.fail(error)
        return True

    def fail_all(self, error: BaseException, source: Optional[int] = None) -> int:
        """Fail every waiting receive (or those from `source`, which is then marked lost)"""
        with self._lock:
            if source is not None:
                self._lost[source] = error
            keys = [k for k in self._waiters if source is None or k[0] == source]
            failed = [r for k in keys for r in self._waiters.pop(k)]
        for receive in failed:
            receive.fail(error)
        return len(failed)

    def pending(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._messages.values())

    def waiting(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._waiters.values())

    def __len__(self) -> int:
        """Keys with queued messages or receives"""
        with self._lock:
            return len(self._messages) + len(self._waiters)


class Transport(ABC):
    def __init__(self, rank: int, n_ranks: int, recv_timeout: Optional[float] = None):
        if not 0 <= rank < n_ranks:
            raise ValueError(f"rank {rank} outside [0, {n_ranks})")
        self.rank = rank
        self.n_ranks = n_ranks
        self.recv_timeout = settings.RECV_TIMEOUT if recv_timeout is None else recv_timeout
        self.mailbox = Mailbox()
        self.failure: Optional[BaseException] = None
        self._collective = 0
        self.bytes_sent = 0
        self.messages_sent = 0

    def start(self) -> None:
        pass

    def close(self) -> None:
        pass

    def __enter__(self) -> "Transport":
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    @abstractmethod
    def send(self, dest: int, envelope: Envelope, payload: bytes,
             on_done: Optional[Callable[..., None]] = None) -> None:
        """
        Post a send; `on_done()` fires once the payload buffer may be reused,
        `on_done(error)` when the send failed.
        """

    def recv(self, key: MessageKey, on_message: OnMessage, on_error: Optional[OnError] = None,
             timeout: Optional[float] = None) -> Receive:
        """
        Post a receive for the message with this key (source rank first).

        `on_error(TransportError)` fires instead of `on_message` when the
        transport fails, the source's stream closes, or nothing arrives
        within `timeout` (default `recv_timeout`, 0 waits forever).
        """
        receive = Receive(key, on_message, on_error)
        if self.failure is not None:
            receive.fail(TransportError(self.rank, f"transport failed earlier: {self.failure}"))
            return receive
        limit = self.recv_timeout if timeout is None else timeout
        if limit and limit > 0:
            self._arm_timeout(receive, limit)
        self.mailbox.expect(receive)
        return receive

    def _arm_timeout(self, receive: Receive, seconds: float) -> None:
        timer = threading.Timer(seconds, self._expire, args=(receive, seconds))
        timer.daemon = True
        receive.cancel_timer = timer.cancel
        timer.start()

    def _expire(self, receive: Receive, seconds: float) -> None:
        if self.mailbox.cancel(receive, TransportError(self.rank, f"no message {receive.key} within {seconds:.1f}s")):
            logger.error(f"[Transport] rank {self.rank} gave up on {receive.key} after {seconds:.1f}s")

    def peer_lost(self, source: int, reason: str) -> None:
        """Nothing more will arrive from `source`"""
        self._fail(TransportError(self.rank, f"rank {source} is gone: {reason}"), source=source)

    def _fail(self, error: BaseException, source: Optional[int] = None) -> None:
        """Fail waiting receives: all of them, or only those from a lost peer"""
        if source is None and self.failure is None:
            self.failure = error
        wrapped = error if isinstance(error, TransportError) else TransportError(self.rank, str(error))
        failed = self.mailbox.fail_all(wrapped, source)
        if failed:
            logger.error(f"[Transport] rank {self.rank} failed {failed} pending receive(s): {error}")

    def recv_blocking(self, key: MessageKey, timeout: Optional[float] = None) -> Tuple[Envelope, bytes]:
        arrived = threading.Event()
        box: List[Tuple[Envelope, bytes]] = []
        errors: List[BaseException] = []

        def on_message(envelope: Envelope, payload: bytes) -> None:
            box.append((envelope, payload))
            arrived.set()

        def on_error(error: BaseException) -> None:
            errors.append(error)
            arrived.set()

        limit = self.recv_timeout if timeout is None else timeout
        receive = self.recv(key, on_message, on_error, timeout=0)
        if not arrived.wait(limit if limit and limit > 0 else None):
            self.mailbox.cancel(receive, TransportError(self.rank, f"no message {key} within {limit:.1f}s"))
        arrived.wait()
        if errors:
            raise errors[0]
        return box[0]

    # --- collectives (host code) ---------------------------------------------

    def allreduce(self, value: float, op: str = "min") -> float:
        """Every rank contributes one float; all get the same result, combined in rank order"""
        self._collective += 1
        tag = self._collective
        for dest in range(self.n_ranks):
            if dest != self.rank:
                envelope = Envelope(source_rank=self.rank, iteration=tag, field=FIELD_REDUCE, payload_length=8)
                self.send(dest, envelope, encode_payload(np.array([value])))
        values = []
        for source in range(self.n_ranks):
            if source == self.rank:
                values.append(float(value))
                continue
            _, payload = self.recv_blocking((source, -1, -1, tag, 0, 0, FIELD_REDUCE))
            values.append(float(decode_payload(payload)[0]))
        if op == "min":
            return min(values)
        if op == "max":
            return max(values)
        if op == "sum":
            total = 0.0
            for v in values:
                total += v
            return total
        raise ValueError(f"unknown reduction '{op}'")

    def allreduce_min(self, value: float) -> float:
        return self.allreduce(value, "min")

    def gather(self, values: np.ndarray, root: int = 0) -> Optional[List[np.ndarray]]:
        """Per-rank float arrays collected on `root` (None elsewhere)"""
        self._collective += 1
        tag = self._collective
        if self.rank != root:
            envelope = Envelope(source_rank=self.rank, iteration=tag, field=FIELD_GATHER,
                                payload_length=8 * int(np.size(values)))
            self.send(root, envelope, encode_payload(values))
            return None
        out = []
        for source in range(self.n_ranks):
            if source == root:
                out.append(np.asarray(values, dtype=np.float64).copy())
            else:
                _, payload = self.recv_blocking((source, -1, -1, tag, 0, 0, FIELD_GATHER))
                out.append(decode_payload(payload))
        return out

    def _count(self, payload: bytes) -> None:
        self.messages_sent += 1
        self.bytes_sent += len(payload)


# ----------------------------------------------------------------------------
# In-process
# ----------------------------------------------------------------------------

class LoopbackHub:
    """Shared mailboxes of the ranks of one process"""

    def __init__(self, n_ranks: int, recv_timeout: Optional[float] = None):
        self.n_ranks = n_ranks
        self.recv_timeout = recv_timeout
        self.transports: Dict[int, "LoopbackTransport"] = {}

    def transport(self, rank: int) -> "LoopbackTransport":
        if rank not in self.transports:
            self.transports[rank] = LoopbackTransport(self, rank, self.recv_timeout)
        return self.transports[rank]


class LoopbackTransport(Transport):
    def __init__(self, hub: LoopbackHub, rank: int, recv_timeout: Optional[float] = None):
        super().__init__(rank, hub.n_ranks, recv_timeout)
        self.hub = hub

    def send(self, dest, envelope, payload, on_done=None):
        if dest not in self.hub.transports:
            raise TransportError(self.rank, f"rank {dest} is not attached to the hub")
        self._count(payload)
        self.hub.transports[dest].mailbox.deliver(envelope, bytes(payload))
        if on_done is not None:
            on_done()


# ----------------------------------------------------------------------------
# TCP
# ----------------------------------------------------------------------------

async def read_frame(reader: asyncio.StreamReader) -> Tuple[Envelope, bytes]:
    header = await reader.readexactly(HEADER_SIZE)
    envelope = Envelope.unpack(header)
    payload = await reader.readexactly(envelope.payload_length) if envelope.payload_length else b""
    return envelope, payload


async def write_frame(writer: asyncio.StreamWriter, envelope: Envelope, payload: bytes) -> None:
    if envelope.payload_length != len(payload):
        raise ValueError(f"payload is {len(payload)} bytes, envelope says {envelope.payload_length}")
    writer.write(envelope.pack() + payload)
    await writer.drain()


class SocketTransport(Transport):
    """
    One listening socket per rank and one outgoing stream per peer,
    driven by an asyncio loop on a background progress thread.
    """

    def __init__(self, rank: int, addresses: List[str], listen: Optional[str] = None,
                 connect_timeout: Optional[float] = None, recv_timeout: Optional[float] = None):
        super().__init__(rank, len(addresses), recv_timeout)
        self.addresses = [parse_address(a) for a in addresses]
        self.listen = parse_address(listen) if listen else self.addresses[rank]
        self.connect_timeout = settings.SOCKET_CONNECT_TIMEOUT if connect_timeout is None else connect_timeout
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._thread: Optional[threading.Thread] = None
        self._server: Optional[asyncio.AbstractServer] = None
        self._writers: Dict[int, asyncio.StreamWriter] = {}
        self._locks: Dict[int, asyncio.Lock] = {}
        self._readers: List[asyncio.Task] = []

    @classmethod
    def local(cls, rank: int, n_ranks: int, base_port: Optional[int] = None,
              recv_timeout: Optional[float] = None) -> "SocketTransport":
        port = settings.SOCKET_BASE_PORT if base_port is None else base_port
        return cls(rank, [f"{settings.SOCKET_HOST}:{port + r}" for r in range(n_ranks)], recv_timeout=recv_timeout)

    def start(self) -> None:
        ready = threading.Event()
        self._loop = asyncio.new_event_loop()

        def progress() -> None:
            asyncio.set_event_loop(self._loop)
            self._loop.call_soon(ready.set)
            self._loop.run_forever()

        self._thread = threading.Thread(target=progress, name=f"lts-progress-{self.rank}", daemon=True)
        self._thread.start()
        ready.wait()
        future = asyncio.run_coroutine_threadsafe(self._serve(), self._loop)
        future.result(timeout=self.connect_timeout)
        logger.info(f"[Transport] rank {self.rank} listening on {self.listen[0]}:{self.listen[1]}")

    async def _serve(self) -> None:
        host, port = self.listen
        self._server = await asyncio.start_server(self._accept, host, port)

    async def _accept(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._readers.append(asyncio.current_task())
        peer: Optional[int] = None
        try:
            while True:
                envelope, payload = await read_frame(reader)
                peer = envelope.source_rank
                self.mailbox.deliver(envelope, payload)
        except asyncio.IncompleteReadError:
            # nothing more can arrive from this peer
            if peer is not None:
                self.peer_lost(peer, "stream closed")
        except asyncio.CancelledError:
            raise
        except Exception as exc:  # noqa: BLE001
            logger.error(f"[Transport] rank {self.rank} dropped a peer stream: {exc}")
            self._fail(exc)
        finally:
            writer.close()

    def _arm_timeout(self, receive: Receive, seconds: float) -> None:
        loop = self._loop
        if loop is None:
            super()._arm_timeout(receive, seconds)
            return
        handles: List[asyncio.TimerHandle] = []

        def arm() -> None:
            handles.append(loop.call_later(seconds, self._expire, receive, seconds))

        def cancel() -> None:
            if not loop.is_closed():
                loop.call_soon_threadsafe(lambda: [h.cancel() for h in handles])

        receive.cancel_timer = cancel
        loop.call_soon_threadsafe(arm)

    async def _writer(self, dest: int) -> asyncio.StreamWriter:
        writer = self._writers.get(dest)
        if writer is not None:
            return writer
        host, port = self.addresses[dest]
        deadline = self._loop.time() + self.connect_timeout
        while True:
            try:
                _, writer = await asyncio.wait_for(asyncio.open_connection(host, port), timeout=self.connect_timeout)
                break
            except (OSError, asyncio.TimeoutError) as exc:
                if self._loop.time() > deadline:
                    raise TransportError(self.rank, f"cannot reach rank {dest} at {host}:{port}: {exc}") from exc
                await asyncio.sleep(0.05)
        self._writers[dest] = writer
        return writer

    async def _send(self, dest: int, envelope: Envelope, payload: bytes) -> None:
        lock = self._locks.setdefault(dest, asyncio.Lock())
        async with lock:
            writer = await self._writer(dest)
            await write_frame(writer, envelope, payload)

    def send(self, dest, envelope, payload, on_done=None):
        if self._loop is None:
            raise TransportError(self.rank, "transport not started")
        if self.failure is not None:
            raise TransportError(self.rank, f"transport failed earlier: {self.failure}")
        self._count(payload)
        if dest == self.rank:
            self.mailbox.deliver(envelope, bytes(payload))
            if on_done is not None:
                on_done()
            return
        future = asyncio.run_coroutine_threadsafe(self._send(dest, envelope, bytes(payload)), self._loop)

        def finished(fut) -> None:
            error = TransportError(self.rank, "send cancelled") if fut.cancelled() else fut.exception()
            if error is None:
                if on_done is not None:
                    on_done()
                return
            logger.error(f"[Transport] rank {self.rank} send to {dest} failed: {error}")
            self._fail(error)
            if on_done is not None:
                on_done(error if isinstance(error, TransportError) else TransportError(self.rank, str(error)))

        future.add_done_callback(finished)

    def close(self) -> None:
        if self._loop is None:
            return

        async def shutdown() -> None:
            for writer in self._writers.values():
                writer.close()
            if self._server is not None:
                self._server.close()
                await self._server.wait_closed()
            for task in self._readers:
                task.cancel()

        try:
            asyncio.run_coroutine_threadsafe(shutdown(), self._loop).result(timeout=self.connect_timeout)
        finally:
            self._loop.call_soon_threadsafe(self._loop.stop)
            if self._thread is not None:
                self._thread.join()
            self._loop.close()
            self._loop = None
        logger.debug(f"[Transport] rank {self.rank} closed ({self.messages_sent} messages sent)")


def make_transports(kind: str, n_ranks: int, base_port: Optional[int] = None,
                    recv_timeout: Optional[float] = None) -> List[Transport]:
    """All ranks of an in-process distributed run"""
    if kind == "loopback":
        hub = LoopbackHub(n_ranks, recv_timeout)
        return [hub.transport(r) for r in range(n_ranks)]
    if kind == "socket":
        return [SocketTransport.local(r, n_ranks, base_port, recv_timeout) for r in range(n_ranks)]
    raise ValueError(f"unknown transport '{kind}'")
