"""Slice-based obfuscation counts: address steps, string ops, external calls,
branch height and transfer-instruction ratio."""

from __future__ import annotations

import networkx as nx

from .. import opcodes
from ..ir.pdg import Pdg, Slice, controlling_jumpis, memory_feeders, through_memory
from ..ir.program import OPAQUE, PHI, SsaProgram
from ..transfer import Decomposition
from .keys import slice_keys, value_keys

LINEAR_OPS = frozenset({"ADD", "SUB", "MUL", "DIV", "SDIV", "MOD"})
BYTE_OPS = frozenset({"BYTE", "SHL", "SHR", "SAR"})
COPY_OPS = frozenset({"CALLDATACOPY", "CODECOPY", "EXTCODECOPY"})
_WORD_MASK = (1 << 256) - 1


class DegenerateUnit(ValueError):
    pass


def _category(op: str) -> str | None:
    code = opcodes.BY_NAME.get(op)
    return None if code is None else opcodes.opcode_info(code).category


def is_linear(program: SsaProgram, vid: int) -> bool:
    v = program.values[vid]
    if v.op in LINEAR_OPS:
        return True
    return v.op == "EXP" and program.values[v.operands[1]].constant is not None


def is_byte_mask(c: int | None) -> bool:
    """Nonzero constant made of one contiguous run of 0xff bytes."""
    if c is None or c <= 0 or c > _WORD_MASK:
        return False
    while c & 0xFF == 0:
        c >>= 8
    return c & (c + 1) == 0 and c.bit_length() % 8 == 0


def _linear_runs(program: SsaProgram, linear: set[int]) -> int:
    """Connected groups of linear ops joined by operand edges inside one block."""
    g = nx.Graph()
    g.add_nodes_from(linear)
    for vid in linear:
        v = program.values[vid]
        for o in v.operands:
            if o in linear and program.values[o].block == v.block:
                g.add_edge(vid, o)
    return nx.number_connected_components(g)


def f1_address_steps(program: SsaProgram, addr: Slice, sload_steps: bool = True) -> int:
    """Step operations deriving the recipient.

    Hash, bitwise, non-linear arithmetic and call ops count one each; linear
    arithmetic chained within a basic block counts once per chain. Calls
    whose return data feeds the slice through memory count as well. Values
    stored to memory and read back by the slice are part of the derivation.
    """
    addr = through_memory(program, addr)
    steps = 0
    linear: set[int] = set()
    for m in addr.members:
        v = program.values[m]
        cat = _category(v.op)
        if cat == opcodes.ARITHMETIC and is_linear(program, m):
            linear.add(m)
        elif cat in (opcodes.ARITHMETIC, opcodes.BITWISE, opcodes.HASH) or v.op in opcodes.CALL_FAMILY:
            steps += 1
        elif v.op == "SLOAD" and sload_steps:
            steps += 1
    steps += _linear_runs(program, linear) if linear else 0
    steps += sum(1 for f in addr.memory_feeders
                 if program.values[f].op in opcodes.CALL_FAMILY and f not in addr.members)
    return steps


def f2_string_ops(program: SsaProgram, addr: Slice) -> int:
    """Hashing, byte extraction and memory reassembly in the recipient's derivation."""
    addr = through_memory(program, addr)
    count = 0
    writes: set[int] = set()
    for m in addr.members:
        v = program.values[m]
        if v.op == "KECCAK256" or v.op in BYTE_OPS:
            count += 1
        elif v.op in ("AND", "OR"):
            if any(is_byte_mask(program.values[o].constant) for o in v.operands):
                count += 1
        elif v.op == "MLOAD":
            fed = {f for f in memory_feeders(program, m, program.values[v.operands[0]].constant, 32)
                   if program.values[f].op in ("MSTORE", "MSTORE8")}
            if fed:
                count += 1
                writes |= fed
    count += len(writes)
    count += sum(1 for f in addr.memory_feeders if program.values[f].op in COPY_OPS)
    return count


def f3_external_call(program: SsaProgram, addr: Slice, value: Slice) -> int:
    for sl in (addr, value):
        sl = through_memory(program, sl)
        for m in sl.frontier | sl.memory_feeders:
            if program.values[m].op in opcodes.CALL_FAMILY:
                return 1
    return 0


def f4_branch_height(program: SsaProgram, dec: Decomposition) -> tuple[int, bool]:
    """Deepest chain of conditionals governing the transfer.

    Chains start at the call and at every op deriving its recipient or
    amount, so a recipient chosen inside nested branches counts even when
    the call itself is unconditional. Conditionals that control each other
    in a cycle (loops) form one level per distinct conditional in the
    cycle. Returns the height and whether unresolved jumps in scope make it
    a lower bound.
    """
    site = dec.site
    scope = site.scope
    exclude = site.unit.dispatcher_blocks
    values = program.values
    sources = {values[site.call_op].block}
    sources |= {values[m].block for m in dec.addr.members | dec.value.members}
    roots = set()
    for b in sources:
        roots |= {values[j].block for j in controlling_jumpis(program, b, scope, exclude)}
    g = nx.DiGraph()
    seen: set[int] = set()
    todo = list(roots)
    while todo:
        b = todo.pop()
        if b in seen:
            continue
        seen.add(b)
        g.add_node(b)
        for j in controlling_jumpis(program, b, scope, exclude):
            p = values[j].block
            g.add_edge(b, p)
            todo.append(p)
    floor = any(b in program.unresolved_jumps for b in scope)
    if not roots:
        return 0, floor
    cond = nx.condensation(g)
    depth: dict[int, int] = {}
    for c in reversed(list(nx.topological_sort(cond))):
        depth[c] = len(cond.nodes[c]["members"]) + max((depth[s] for s in cond.successors(c)), default=0)
    mapping = cond.graph["mapping"]
    return max(depth[mapping[b]] for b in roots), floor


def _counted(program: SsaProgram, vid: int) -> bool:
    return program.values[vid].op not in (PHI, OPAQUE)


def f5_tir(program: SsaProgram, pdg: Pdg, decompositions: list[Decomposition]) -> float:
    """Share of a unit's instructions that belong to its transfers.

    Transfer instructions are everything the transfer calls depend on, plus
    storage writes whose key or value shares dataflow with a recipient or
    amount.
    """
    total = {n for n in pdg.nodes if _counted(program, n)}
    if not total:
        raise DegenerateUnit(f"unit {pdg.unit.name} has no instructions")
    crit = pdg.closure(d.site.call_op for d in decompositions)
    transfer_keys: set = set()
    for d in decompositions:
        transfer_keys |= slice_keys(program, d.addr) | slice_keys(program, d.value)
    state = set()
    for n in total:
        v = program.values[n]
        if v.op == "SSTORE" and (value_keys(program, v.operands[0]) & transfer_keys
                                 or value_keys(program, v.operands[1]) & transfer_keys):
            state.add(n)
    used = (crit | state) & total
    return len(used) / len(total)
