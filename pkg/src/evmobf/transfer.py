"""Locating funds-transfer operations and splitting them into addr/value/context/log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import opcodes
from .ir.functions import FunctionUnit
from .ir.pdg import Slice, backward_slice, controlling_jumpis
from .ir.program import SsaProgram


@dataclass(frozen=True)
class LogInfo:
    op: int
    offset: int
    topics: tuple[int, ...]
    topic0: int | None
    data_offset: int | None
    data_size: int | None


@dataclass(frozen=True)
class TransferSite:
    call_op: int
    opcode: str
    offset: int
    addr_value: int
    wei_value: int | None
    unit: FunctionUnit
    units: tuple[FunctionUnit, ...]
    logs: tuple[int, ...]
    guard_chain: tuple[int, ...]
    flags: frozenset[str] = frozenset()

    @property
    def is_sweep(self) -> bool:
        return "sweep" in self.flags

    @property
    def scope(self) -> frozenset[int]:
        out: set[int] = set()
        for u in self.units:
            out |= u.blocks
        return frozenset(out)

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "opcode": self.opcode,
            "function": self.unit.name,
            "selector": None if self.unit.selector is None else f"0x{self.unit.selector:08x}",
            "guards": len(self.guard_chain),
            "logs": len(self.logs),
            "flags": sorted(self.flags),
        }


@dataclass(frozen=True)
class Decomposition:
    site: TransferSite
    addr: Slice
    value: Slice
    unit: FunctionUnit
    guard_chain: tuple[int, ...]
    logs: tuple[LogInfo, ...] = field(default=())


def guard_chain(program: SsaProgram, block: int, scope, exclude=frozenset()) -> tuple[int, ...]:
    """Transitive controlling JUMPI ops of ``block`` inside ``scope``, by offset."""
    seen_blocks: set[int] = set()
    ops: set[int] = set()
    todo = [block]
    while todo:
        b = todo.pop()
        for j in controlling_jumpis(program, b, scope, exclude):
            ops.add(j)
            jb = program.values[j].block
            if jb not in seen_blocks:
                seen_blocks.add(jb)
                todo.append(jb)
    return tuple(sorted(ops, key=lambda j: program.values[j].offset))


def _unit_logs(program: SsaProgram, units) -> tuple[int, ...]:
    blocks: set[int] = set()
    for u in units:
        blocks |= u.blocks
    return tuple(v for v in program.ops_in(blocks) if program.values[v].op in opcodes.LOG_OPS)


def find_transfer_sites(program: SsaProgram, units: list[FunctionUnit],
                        include_sweeps: bool = True) -> list[TransferSite]:
    """One site per CALL/CALLCODE whose value is not the constant 0.

    Non-constant values are kept and flagged ``value-unknown``; SELFDESTRUCT
    is reported as a ``sweep`` site unless ``include_sweeps`` is off. Only code
    inside some function unit is scanned.
    """
    owners: dict[int, list[FunctionUnit]] = {}
    for u in units:
        for b in u.blocks:
            owners.setdefault(b, []).append(u)
    sites = []
    for vid in program.ops_in(owners):
        v = program.values[vid]
        flags: set[str] = set()
        if v.op in opcodes.VALUE_CALLS:
            wei = v.operands[2]
            const = program.values[wei].constant
            if const == 0:
                continue
            if const is None:
                flags.add("value-unknown")
            addr = v.operands[1]
        elif v.op == "SELFDESTRUCT" and include_sweeps:
            addr, wei = v.operands[0], None
            flags.add("sweep")
        else:
            continue
        us = tuple(owners[v.block])
        if len(us) > 1:
            flags.add("shared")
        scope = frozenset().union(*(u.blocks for u in us))
        chain = guard_chain(program, v.block, scope, us[0].dispatcher_blocks)
        sites.append(TransferSite(vid, v.op, v.offset, addr, wei, us[0], us,
                                  _unit_logs(program, us), chain, frozenset(flags)))
    return sites


def _log_info(program: SsaProgram, vid: int) -> LogInfo:
    v = program.values[vid]
    topics = v.operands[2:]
    c = lambda o: program.values[o].constant  # noqa: E731
    return LogInfo(vid, v.offset, tuple(topics), c(topics[0]) if topics else None,
                   c(v.operands[0]), c(v.operands[1]))


def decompose(program: SsaProgram, site: TransferSite) -> Decomposition:
    addr = backward_slice(program, site.addr_value)
    if site.wei_value is None:
        value = Slice(-1, frozenset())
    else:
        value = backward_slice(program, site.wei_value)
    logs = tuple(_log_info(program, op) for op in site.logs)
    return Decomposition(site, addr, value, site.unit, site.guard_chain, logs)


def sites_json(sites: list[TransferSite]) -> str:
    return json.dumps([s.to_dict() for s in sites], sort_keys=True)
