"""IR containers shared by the CFG, SSA and dependence passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

from ..bytecode import Instruction, InstructionStream

# Terminator kinds.
JUMP = "JUMP"
JUMPI = "JUMPI"
FALLTHROUGH = "fallthrough"
HALT = "halt"
INVALID = "invalid"

PHI = "PHI"
OPAQUE = "OPAQUE"


@dataclass(frozen=True)
class BasicBlock:
    id: int
    instructions: tuple[Instruction, ...]
    terminator: str
    successors: tuple[int, ...] = ()

    @property
    def entry_offset(self) -> int:
        return self.id

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]

    @property
    def end_offset(self) -> int:
        return self.last.next_offset


@dataclass(frozen=True)
class SsaValue:
    """One SSA operation. Operations without a stack result (SSTORE, JUMPI,
    LOG...) are still nodes so dependence graphs can refer to them."""

    id: int
    op: str
    operands: tuple[int, ...]
    block: int
    offset: int | None = None
    constant: int | None = None
    has_output: bool = True

    @property
    def is_phi(self) -> bool:
        return self.op == PHI


@dataclass(frozen=True)
class SsaProgram:
    stream: InstructionStream
    blocks: Mapping[int, BasicBlock]
    entry: int | None
    unresolved_jumps: frozenset[int] = frozenset()
    values: Mapping[int, SsaValue] = field(default_factory=dict)
    block_ops: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    flags: frozenset[str] = frozenset()

    @property
    def jumpdests(self) -> frozenset[int]:
        return self.stream.jumpdests

    @property
    def lowered(self) -> bool:
        return bool(self.values) or not self.blocks

    @cached_property
    def predecessors(self) -> dict[int, tuple[int, ...]]:
        preds: dict[int, list[int]] = {b: [] for b in self.blocks}
        for b, blk in self.blocks.items():
            for s in blk.successors:
                if b not in preds[s]:
                    preds[s].append(b)
        return {b: tuple(p) for b, p in preds.items()}

    @cached_property
    def reachable(self) -> frozenset[int]:
        if self.entry is None:
            return frozenset()
        seen = {self.entry}
        todo = [self.entry]
        while todo:
            b = todo.pop()
            for s in self.blocks[b].successors:
                if s not in seen:
                    seen.add(s)
                    todo.append(s)
        return frozenset(seen)

    @cached_property
    def op_by_offset(self) -> dict[int, int]:
        return {v.offset: v.id for v in self.values.values() if v.offset is not None}

    @cached_property
    def users(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {v: [] for v in self.values}
        for v in self.values.values():
            for o in v.operands:
                out[o].append(v.id)
        return {k: tuple(v) for k, v in out.items()}

    def block_of(self, offset: int) -> int:
        for b, blk in self.blocks.items():
            if blk.id <= offset < blk.end_offset:
                return b
        raise KeyError(offset)

    def terminator_op(self, block: int) -> SsaValue | None:
        ops = self.block_ops.get(block, ())
        if not ops:
            return None
        last = self.values[ops[-1]]
        return last if last.offset == self.blocks[block].last.offset else None

    def ops_in(self, blocks) -> list[int]:
        return [o for b in sorted(blocks) for o in self.block_ops.get(b, ())]
