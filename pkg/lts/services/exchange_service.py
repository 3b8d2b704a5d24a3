"""
Ghost exchange between ranks

Every rank holds the global arrays but advances only its own CEs. Cells of
foreign CEs adjacent to a local CE are ghosts: their evaluation values and
limited gradients are copied from the owning rank before each stage reads
them. An exchange is four tasks per ghost component: pack the owner's
border values into a buffer, a detached send, a detached receive into a
staging buffer and an unpack into the ghost slots.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from lts.schemas.envelope import FIELD_CODES, FIELD_LEVELS, Envelope
from lts.services.adaptive_service import SolverState, smooth_levels
from lts.services.ce_service import BORDER, ComputationElement
from lts.services.partition_service import Partition
from lts.services.runtime_service import READ, WRITE
from lts.services.transport_service import Transport, decode_payload, encode_payload

logger = logging.getLogger(__name__)


@dataclass
class GhostLink:
    """One ghost component: cells of `foreign_ce` mirrored for `local_ce`"""
    local_ce: int
    foreign_ce: int
    peer_rank: int
    cells: np.ndarray

    def select(self, levels: np.ndarray, mask: int) -> np.ndarray:
        """Cells whose level bit is set in `mask`, ascending ids"""
        lv = levels[self.cells]
        return self.cells[(np.left_shift(1, lv) & mask) != 0]


@dataclass
class ExchangePlan:
    rank: int
    sends: List[GhostLink] = field(default_factory=list)  # local_ce is the remote reader
    recvs: List[GhostLink] = field(default_factory=list)


def build_exchange_plan(ces: Sequence[ComputationElement], partition: Partition, rank: int) -> ExchangePlan:
    """Ghost components this rank receives and the ones it must feed"""
    plan = ExchangePlan(rank=rank)
    for ce in ces:
        for foreign, cells in ce.ghost_components.items():
            owner = partition.rank_of_ce(foreign)
            if ce.rank == rank:
                plan.recvs.append(GhostLink(ce.id, foreign, owner, cells))
            elif owner == rank:
                plan.sends.append(GhostLink(ce.id, foreign, ce.rank, cells))
    plan.sends.sort(key=lambda l: (l.peer_rank, l.local_ce, l.foreign_ce))
    plan.recvs.sort(key=lambda l: (l.peer_rank, l.local_ce, l.foreign_ce))
    logger.info(
        f"[Exchange] rank {rank}: {len(plan.recvs)} ghost component(s) in, {len(plan.sends)} out"
    )
    return plan


class GhostExchange:
    """Inserts communication tasks and runs the host-side collectives of one rank"""

    def __init__(self, plan: ExchangePlan, transport: Transport, state: SolverState):
        self.plan = plan
        self.transport = transport
        self.state = state
        self._level_calls = 0

    def _array(self, fld: str) -> np.ndarray:
        return self.state.u if fld == "u" else self.state.grad

    # --- host collectives ----------------------------------------------------

    def allreduce_min(self, value: float) -> float:
        return self.transport.allreduce_min(value)

    def exchange_levels(self, levels: np.ndarray, round_id: int) -> None:
        rank = self.transport.rank
        for link in self.plan.sends:
            payload = encode_payload(levels[link.cells].astype(np.float64))
            envelope = Envelope(source_rank=rank, local_ce=link.local_ce, foreign_ce=link.foreign_ce,
                                iteration=self._level_calls, subiteration=round_id, field=FIELD_LEVELS,
                                payload_length=len(payload))
            self.transport.send(link.peer_rank, envelope, payload)
        for link in self.plan.recvs:
            key = (link.peer_rank, link.local_ce, link.foreign_ce, self._level_calls, round_id, 0, FIELD_LEVELS)
            _, payload = self.transport.recv_blocking(key)
            levels[link.cells] = decode_payload(payload).astype(np.int64)

    def smooth_levels(self, levels: np.ndarray, local_mask: np.ndarray, theta_max: int) -> Tuple[np.ndarray, int]:
        """
        Level smoothing across rank boundaries.

        Rounds of (exchange ghost levels, smooth local cells) until no rank
        lowers any level. Levels only decrease, so this terminates.
        """
        self._level_calls += 1
        levels = np.array(levels, dtype=np.int64)
        levels[~local_mask] = theta_max
        frozen = ~local_mask
        rounds = 0
        while True:
            self.exchange_levels(levels, rounds)
            smoothed, _ = smooth_levels(levels, self.state.mesh, frozen=frozen)
            changed = not np.array_equal(smoothed[local_mask], levels[local_mask])
            levels = smoothed
            rounds += 1
            if self.transport.allreduce_min(0.0 if changed else 1.0) == 1.0:
                break
        local_max = float(levels[local_mask].max()) if np.any(local_mask) else 0.0
        theta = int(self.transport.allreduce(local_max, "max"))
        levels = np.minimum(levels, theta)
        logger.debug(f"[Exchange] rank {self.transport.rank}: levels smoothed in {rounds} round(s), theta={theta}")
        return levels, theta

    # --- communication tasks -------------------------------------------------

    def insert_exchange(self, gen, fld: str, subiteration: int, stage: int, mask: int) -> None:
        """
        Pack/send tasks for the ghost components this rank feeds and
        receive/unpack tasks for the ones it reads, restricted to the cells
        whose level is in `mask`.
        """
        if gen.symbolic:
            return
        rank = self.transport.rank
        code = FIELD_CODES[fld]
        array = self._array(fld)
        levels = self.state.level
        priority = gen.p_max
        handles = gen.handles
        packer = gen.packer

        for link in self.plan.sends:
            cells = link.select(levels, mask)
            if cells.size == 0:
                continue
            holder: Dict[str, bytes] = {}
            envelope = Envelope(source_rank=rank, local_ce=link.local_ce, foreign_ce=link.foreign_ce,
                                iteration=gen.iteration, subiteration=subiteration, stage=stage, field=code,
                                level_mask=mask, payload_length=8 * cells.size * (1 if fld == "u" else array.shape[1]))
            send_buffer = handles.buffer("send", link.local_ce, link.foreign_ce)
            tags = {"kind": "comm", "ce": link.foreign_ce, "iteration": gen.iteration, "subiteration": subiteration}

            def pack(part, n_parts, cells=cells, holder=holder):
                if part == 0:
                    holder["payload"] = encode_payload(array[cells])

            def send(done, link=link, envelope=envelope, holder=holder):
                self.transport.send(link.peer_rank, envelope, holder["payload"], on_done=done)

            packer.insert_direct([pack], [(handles.cell(link.foreign_ce, BORDER, fld), READ), (send_buffer, WRITE)],
                                 priority, f"pack-{fld}:{link.foreign_ce}->{link.local_ce}", tags)
            packer.insert_direct([], [(send_buffer, READ)], priority,
                                 f"send-{fld}:{link.foreign_ce}->{link.local_ce}", tags, detached=send)

        for link in self.plan.recvs:
            cells = link.select(levels, mask)
            if cells.size == 0:
                continue
            holder = {}
            key = (link.peer_rank, link.local_ce, link.foreign_ce, gen.iteration, subiteration, stage, code)
            recv_buffer = handles.buffer("recv", link.local_ce, link.foreign_ce)
            tags = {"kind": "comm", "ce": link.local_ce, "iteration": gen.iteration, "subiteration": subiteration}

            def recv(done, key=key, holder=holder):
                def arrived(envelope, payload):
                    holder["payload"] = payload
                    done()
                self.transport.recv(key, arrived, on_error=done)

            def unpack(part, n_parts, cells=cells, holder=holder):
                if part == 0 and "payload" in holder:
                    values = decode_payload(holder["payload"])
                    array[cells] = values if array.ndim == 1 else values.reshape(cells.size, array.shape[1])

            packer.insert_direct([], [(recv_buffer, WRITE)], priority,
                                 f"recv-{fld}:{link.foreign_ce}->{link.local_ce}", tags, detached=recv)
            packer.insert_direct([unpack], [(recv_buffer, READ), (handles.ghost(link.foreign_ce, fld), WRITE)],
                                 priority, f"unpack-{fld}:{link.foreign_ce}->{link.local_ce}", tags)
