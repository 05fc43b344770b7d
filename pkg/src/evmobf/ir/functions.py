"""Function boundaries recovered from the selector dispatcher."""

from __future__ import annotations

from dataclasses import dataclass

from .program import JUMP, JUMPI, PHI, SsaProgram

_SELECTOR_SHIFT = 224
_SELECTOR_MASK = 0xFFFFFFFF


@dataclass(frozen=True)
class FunctionUnit:
    selector: int | None
    entry: int
    blocks: frozenset[int]
    shared: frozenset[int] = frozenset()
    contains_transfer: bool = False
    flags: frozenset[str] = frozenset()
    dispatcher_blocks: frozenset[int] = frozenset()

    @property
    def name(self) -> str:
        return "fallback" if self.selector is None else f"0x{self.selector:08x}"


def _const(program: SsaProgram, vid: int) -> int | None:
    return program.values[vid].constant


def _is_calldata_head(program: SsaProgram, vid: int) -> bool:
    v = program.values[vid]
    return v.op == "CALLDATALOAD" and _const(program, v.operands[0]) == 0


def is_selector_value(program: SsaProgram, vid: int, _seen=None) -> bool:
    """True for the canonical ``calldata[0:4]`` selector computation."""
    seen = _seen if _seen is not None else set()
    if vid in seen:
        return False
    seen.add(vid)
    v = program.values[vid]
    if v.op == "SHR":
        return _const(program, v.operands[0]) == _SELECTOR_SHIFT and _is_calldata_head(program, v.operands[1])
    if v.op == "DIV":
        return _is_calldata_head(program, v.operands[0]) and _const(program, v.operands[1]) == 1 << _SELECTOR_SHIFT
    if v.op == "AND":
        a, b = v.operands
        if _const(program, a) == _SELECTOR_MASK:
            return is_selector_value(program, b, seen)
        if _const(program, b) == _SELECTOR_MASK:
            return is_selector_value(program, a, seen)
        return False
    if v.op == PHI:
        return all(is_selector_value(program, o, seen) for o in v.operands)
    return False


def _reads_calldata(program: SsaProgram, vid: int, depth: int = 6) -> bool:
    todo = [(vid, 0)]
    seen = set()
    while todo:
        cur, d = todo.pop()
        if cur in seen or d > depth:
            continue
        seen.add(cur)
        v = program.values[cur]
        if v.op == "CALLDATALOAD":
            return True
        todo.extend((o, d + 1) for o in v.operands)
    return False


def _jump_target(program: SsaProgram, block: int) -> int | None:
    term = program.terminator_op(block)
    if term is None or term.op != "JUMPI":
        return None
    return _const(program, term.operands[0])


def _dispatch_checks(program: SsaProgram):
    """Selector-comparing JUMPIs: returns ({selector: entry block}, check blocks, atypical)."""
    entries: dict[int, int] = {}
    checks: set[int] = set()
    atypical = False
    for b in sorted(program.reachable):
        term = program.terminator_op(b)
        if term is None or term.op != "JUMPI":
            continue
        cond = program.values[term.operands[1]]
        if cond.op not in ("EQ", "GT", "LT"):
            continue
        a, c = cond.operands
        if is_selector_value(program, c):
            sel_side, const_side = c, a
        elif is_selector_value(program, a):
            sel_side, const_side = a, c
        else:
            if cond.op == "EQ":
                for x, y in ((a, c), (c, a)):
                    if _const(program, y) is not None and _const(program, x) is None and _reads_calldata(program, x):
                        atypical = True
            continue
        checks.add(b)
        sel = _const(program, const_side)
        target = _jump_target(program, b)
        if cond.op == "EQ" and sel is not None and sel <= _SELECTOR_MASK and target in program.blocks:
            entries.setdefault(sel, target)
    return entries, checks, atypical


def _push_constants(program: SsaProgram, block: int) -> set[int]:
    return {ins.value for ins in program.blocks[block].instructions if ins.value is not None}


def _closure(program: SsaProgram, starts, stop: frozenset[int]) -> frozenset[int]:
    """Blocks reachable from ``starts`` without entering ``stop``.

    A jump with several resolved targets (typically an internal-function
    return merged across callers) is only followed to targets whose address
    was pushed somewhere inside the region, which keeps one caller's
    continuation out of another caller's unit.
    """
    members: set[int] = set()
    pushed: set[int] = set()
    multi: dict[int, list[int]] = {}
    todo = [s for s in starts if s not in stop]
    while True:
        while todo:
            b = todo.pop()
            if b in members or b in stop:
                continue
            members.add(b)
            pushed |= _push_constants(program, b)
            blk = program.blocks[b]
            succ = list(blk.successors)
            if blk.terminator in (JUMP, JUMPI):
                fall = blk.end_offset if blk.terminator == JUMPI else None
                targets = [s for s in succ if s != fall]
                if len(targets) >= 2:
                    multi[b] = targets
                    succ = [s for s in succ if s == fall]
            todo.extend(succ)
        for targets in multi.values():
            todo.extend(t for t in targets if t in pushed and t not in members and t not in stop)
        if not todo:
            break
    return frozenset(members)


def _has_transfer(program: SsaProgram, blocks) -> bool:
    for vid in program.ops_in(blocks):
        v = program.values[vid]
        if v.op in ("CALL", "CALLCODE") and program.values[v.operands[2]].constant != 0:
            return True
        if v.op == "SELFDESTRUCT":
            return True
    return False


def identify_functions(program: SsaProgram) -> list[FunctionUnit]:
    """Split reachable code into selector-dispatched units plus a fallback unit.

    Contracts without the canonical dispatcher become one fallback unit over
    every reachable block, flagged ``fallback-only`` (and ``dispatch-atypical``
    when calldata is compared against constants in a non-standard way).
    """
    if program.entry is None or not program.blocks:
        return []
    entries, checks, atypical = _dispatch_checks(program)
    if not entries:
        flags = {"fallback-only"}
        if atypical:
            flags.add("dispatch-atypical")
        blocks = _closure(program, [program.entry], frozenset())
        return [FunctionUnit(None, program.entry, blocks, frozenset(),
                             _has_transfer(program, blocks), frozenset(flags))]

    selector_entries = frozenset(entries.values())
    region = _closure(program, [program.entry], selector_entries)
    # Dispatcher = region blocks that can still reach a selector check.
    preds = program.predecessors
    dispatcher = set()
    todo = [b for b in checks if b in region]
    while todo:
        b = todo.pop()
        if b in dispatcher:
            continue
        dispatcher.add(b)
        todo.extend(p for p in preds[b] if p in region)
    dispatcher = frozenset(dispatcher)

    raw: list[tuple[int | None, int, frozenset[int]]] = []
    for sel, entry in sorted(entries.items(), key=lambda kv: (kv[1], kv[0])):
        raw.append((sel, entry, _closure(program, [entry], dispatcher)))
    fb_starts = sorted({s for d in dispatcher for s in program.blocks[d].successors}
                       - dispatcher - selector_entries)
    if fb_starts:
        stop = dispatcher | selector_entries
        raw.append((None, fb_starts[0], _closure(program, fb_starts, stop)))

    counts: dict[int, int] = {}
    for _, _, blocks in raw:
        for b in blocks:
            counts[b] = counts.get(b, 0) + 1
    units = []
    for sel, entry, blocks in raw:
        shared = frozenset(b for b in blocks if counts[b] > 1)
        flags = frozenset({"shared"}) if shared else frozenset()
        units.append(FunctionUnit(sel, entry, blocks, shared, _has_transfer(program, blocks),
                                  flags, dispatcher))
    return units
