"""Control dependence, program dependence graphs and backward slices."""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx

from .. import opcodes
from .functions import FunctionUnit
from .program import JUMPI, SsaProgram

DATA = "data"
CONTROL = "control"
_EXIT = -1

# Results whose content comes from outside the function's dataflow.
EXTERNAL_OPS = frozenset({"SLOAD", "MLOAD", "CREATE", "CREATE2"}) | opcodes.CALL_FAMILY


def is_external(op: str) -> bool:
    if op in EXTERNAL_OPS:
        return True
    code = opcodes.BY_NAME.get(op)
    return code is not None and opcodes.opcode_info(code).category == opcodes.ENVIRONMENT


def control_dependence(program: SsaProgram) -> dict[int, frozenset[int]]:
    """Map each reachable block to the JUMPI blocks it is directly control dependent on.

    Post-dominators are computed on the recovered CFG with a virtual exit;
    halting blocks and blocks ending in an unresolved jump are exits.
    """
    reach = program.reachable
    g = nx.DiGraph()
    g.add_node(_EXIT)
    for b in reach:
        g.add_node(b)
        succ = program.blocks[b].successors
        for s in succ:
            g.add_edge(b, s)
        if not succ or b in program.unresolved_jumps:
            g.add_edge(b, _EXIT)
    ipdom = nx.immediate_dominators(g.reverse(copy=False), _EXIT)
    cd: dict[int, set[int]] = {b: set() for b in reach}
    for a in reach:
        blk = program.blocks[a]
        if blk.terminator != JUMPI or len(set(blk.successors)) < 2:
            continue
        stop = ipdom.get(a, _EXIT)
        for s in set(blk.successors):
            runner = s
            while runner != stop and runner != _EXIT:
                cd[runner].add(a)
                nxt = ipdom.get(runner, _EXIT)
                if nxt == runner:
                    break
                runner = nxt
    return {b: frozenset(v) for b, v in cd.items()}


def _cd(program: SsaProgram) -> dict[int, frozenset[int]]:
    cache = program.__dict__.get("_control_deps")
    if cache is None:
        cache = control_dependence(program)
        program.__dict__["_control_deps"] = cache
    return cache


def controlling_jumpis(program: SsaProgram, block: int, scope=None, exclude=frozenset()) -> list[int]:
    """JUMPI op ids the block is directly control dependent on."""
    out = []
    for a in sorted(_cd(program).get(block, ())):
        if a in exclude or (scope is not None and a not in scope):
            continue
        term = program.terminator_op(a)
        if term is not None:
            out.append(term.id)
    return out


@dataclass(frozen=True)
class Pdg:
    unit: FunctionUnit
    graph: nx.MultiDiGraph

    @property
    def nodes(self) -> list[int]:
        return list(self.graph.nodes)

    def edges(self, kind: str) -> list[tuple[int, int]]:
        return [(u, v) for u, v, k in self.graph.edges(data="kind") if k == kind]

    def closure(self, roots) -> set[int]:
        """Everything reachable backward (over data and control) from ``roots``."""
        out = set()
        for r in roots:
            if r in self.graph and r not in out:
                out.add(r)
                out |= nx.descendants(self.graph, r)
        return out


def build_pdg(program: SsaProgram, unit: FunctionUnit) -> Pdg:
    """Dependence graph over the unit's SSA ops.

    Edges point from a dependent op to what it depends on: data edges to each
    operand (one per operand reference), control edges to the JUMPI of each
    controlling block. Dispatcher JUMPIs are never control sources.
    """
    g = nx.MultiDiGraph()
    ops = program.ops_in(unit.blocks)
    for vid in ops:
        v = program.values[vid]
        g.add_node(vid, op=v.op, category=_category(v.op))
    for vid in ops:
        v = program.values[vid]
        for o in v.operands:
            if o in g:
                g.add_edge(vid, o, kind=DATA)
        for j in controlling_jumpis(program, v.block, unit.blocks, unit.dispatcher_blocks):
            if j != vid:
                g.add_edge(vid, j, kind=CONTROL)
    return Pdg(unit, g)


def _category(op: str) -> str:
    code = opcodes.BY_NAME.get(op)
    if code is None:
        return op.lower()
    return opcodes.opcode_info(code).category


@dataclass(frozen=True)
class Slice:
    root: int
    members: frozenset[int]
    frontier: frozenset[int] = frozenset()
    memory_feeders: frozenset[int] = frozenset()
    controls: frozenset[int] = field(default=frozenset())

    def __contains__(self, vid: int) -> bool:
        return vid in self.members

    def __len__(self) -> int:
        return len(self.members)


def backward_slice(program: SsaProgram, root: int, include_control: bool = False,
                   scope=None, exclude_guards=frozenset()) -> Slice:
    """Operand closure of ``root``.

    Externally sourced values (storage, memory, calldata, call results,
    environment) are kept as frontier leaves; their own stack operands are
    still followed, but their content is not. Memory writers that feed a
    frontier MLOAD/KECCAK256 at constant offsets are reported separately and
    not traversed. With ``include_control`` the controlling JUMPIs of every
    member (and their operands) are pulled in as well.
    """
    values = program.values
    members: set[int] = set()
    controls: set[int] = set()
    todo = [root]
    while todo:
        vid = todo.pop()
        if vid in members:
            continue
        members.add(vid)
        v = values[vid]
        todo.extend(v.operands)
        if include_control:
            for j in controlling_jumpis(program, v.block, scope, exclude_guards):
                controls.add(j)
                todo.append(j)
    frontier = frozenset(m for m in members if is_external(values[m].op))
    feeders: set[int] = set()
    for m in members:
        v = values[m]
        if v.op == "MLOAD":
            feeders |= memory_feeders(program, m, values[v.operands[0]].constant, 32)
        elif v.op == "KECCAK256":
            feeders |= memory_feeders(program, m, values[v.operands[0]].constant,
                                      values[v.operands[1]].constant)
    return Slice(root, frozenset(members), frontier, frozenset(feeders), frozenset(controls))


def through_memory(program: SsaProgram, sl: Slice) -> Slice:
    """``sl`` extended with the slices of values its memory feeders stored.

    Followed transitively, so a derivation that passes through memory (a
    hashed mapping key, a reassembled word) stays one derivation.
    """
    members = set(sl.members)
    frontier = set(sl.frontier)
    feeders = set(sl.memory_feeders)
    done: set[int] = set()
    todo = list(sl.memory_feeders)
    while todo:
        f = todo.pop()
        if f in done:
            continue
        done.add(f)
        v = program.values[f]
        if v.op not in ("MSTORE", "MSTORE8"):
            continue
        sub = backward_slice(program, v.operands[1])
        members |= sub.members
        frontier |= sub.frontier
        new = sub.memory_feeders - feeders
        feeders |= new
        todo.extend(new)
    return Slice(sl.root, frozenset(members), frozenset(frontier), frozenset(feeders), sl.controls)


_MAX_RANGE = 4096
_MAX_BLOCKS = 32


def _write_range(program: SsaProgram, vid: int):
    """(dest, size) constants for memory writers (None where unknown); None for non-writers."""
    v = program.values[vid]
    c = [program.values[o].constant for o in v.operands]
    if v.op == "MSTORE":
        return c[0], 32
    if v.op == "MSTORE8":
        return c[0], 1
    if v.op in ("CALLDATACOPY", "CODECOPY", "RETURNDATACOPY"):
        return c[0], c[2]
    if v.op == "EXTCODECOPY":
        return c[1], c[3]
    if v.op in ("CALL", "CALLCODE"):
        return c[5], c[6]
    if v.op in ("DELEGATECALL", "STATICCALL"):
        return c[4], c[5]
    return None


def memory_feeders(program: SsaProgram, reader: int, off: int | None, n: int | None) -> set[int]:
    """Memory writers whose constant-range output overlaps the reader's input.

    Scans backward from the reader through its block and the chain of unique
    predecessors, stopping once the range is covered or at a write to an
    unknown address. A RETURNDATACOPY also pulls in the call preceding it.
    """
    if off is None or n is None or n <= 0 or n > _MAX_RANGE:
        return set()
    wanted = set(range(off, off + n))
    out: set[int] = set()
    want_call = False
    block = program.values[reader].block
    ops = list(program.block_ops[block])
    idx = ops.index(reader)
    seq = ops[:idx]
    visited = {block}
    for _ in range(_MAX_BLOCKS):
        for vid in reversed(seq):
            v = program.values[vid]
            if want_call and v.op in opcodes.CALL_FAMILY:
                out.add(vid)
                want_call = False
            rng = _write_range(program, vid)
            if rng is None or not wanted:
                continue
            d, s = rng
            if d is None or s is None:
                if v.op in opcodes.CALL_FAMILY and s == 0:
                    continue
                return out
            hit = wanted & set(range(d, d + min(s, _MAX_RANGE)))
            if hit:
                out.add(vid)
                wanted -= hit
                if v.op == "RETURNDATACOPY":
                    want_call = True
        if not wanted and not want_call:
            break
        preds = [p for p in program.predecessors.get(block, ()) if p in program.reachable]
        if len(preds) != 1 or preds[0] in visited:
            break
        block = preds[0]
        visited.add(block)
        seq = list(program.block_ops[block])
    return out
