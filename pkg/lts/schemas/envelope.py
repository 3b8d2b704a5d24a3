"""
Message envelope of the rank transports

Wire layout (little-endian, 40 bytes): source rank, local CE, foreign CE,
iteration, subiteration, stage, field (int32 each), level mask (uint32),
payload length in bytes (uint64). The payload follows the header.
"""
import struct
from typing import Tuple

from pydantic import BaseModel, Field

HEADER = struct.Struct("<iiiiiiiIQ")
HEADER_SIZE = HEADER.size  # 40

FIELD_U = 0
FIELD_GRAD = 1
FIELD_LEVELS = 2
FIELD_REDUCE = 3
FIELD_GATHER = 4

FIELD_CODES = {"u": FIELD_U, "grad": FIELD_GRAD, "levels": FIELD_LEVELS}

MessageKey = Tuple[int, int, int, int, int, int, int]


class Envelope(BaseModel):
    """Header of one message; `local_ce` is the receiving CE, `foreign_ce` the owner of the data"""
    source_rank: int
    local_ce: int = -1
    foreign_ce: int = -1
    iteration: int = 0
    subiteration: int = 0
    stage: int = 0
    field: int = FIELD_U
    level_mask: int = Field(default=0, ge=0, lt=2 ** 32)
    payload_length: int = Field(default=0, ge=0)

    @property
    def key(self) -> MessageKey:
        return (self.source_rank, self.local_ce, self.foreign_ce, self.iteration,
                self.subiteration, self.stage, self.field)

    def pack(self) -> bytes:
        return HEADER.pack(self.source_rank, self.local_ce, self.foreign_ce, self.iteration,
                           self.subiteration, self.stage, self.field, self.level_mask, self.payload_length)

    @classmethod
    def unpack(cls, data: bytes) -> "Envelope":
        if len(data) != HEADER_SIZE:
            raise ValueError(f"envelope header must be {HEADER_SIZE} bytes, got {len(data)}")
        (source_rank, local_ce, foreign_ce, iteration, subiteration,
         stage, fld, level_mask, payload_length) = HEADER.unpack(data)
        return cls(source_rank=source_rank, local_ce=local_ce, foreign_ce=foreign_ce,
                   iteration=iteration, subiteration=subiteration, stage=stage, field=fld,
                   level_mask=level_mask, payload_length=payload_length)
