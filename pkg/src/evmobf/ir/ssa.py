"""Lowering of the stack machine to SSA form."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .. import opcodes
from . import fold
from .program import OPAQUE, PHI, SsaProgram, SsaValue


@dataclass
class _LocalBlock:
    # operand refs are ("v", op id) or ("e", entry slot index, 0 = top)
    ops: list[tuple]
    exit: list[tuple]
    consumed: int


def _simulate_block(block, next_id: int) -> tuple[_LocalBlock, int]:
    stack: list[tuple] = []
    consumed = 0
    ops: list[tuple] = []

    def reach(depth: int) -> None:
        nonlocal consumed
        while len(stack) <= depth:
            stack.insert(0, ("e", consumed))
            consumed += 1

    for ins in block.instructions:
        op = ins.opcode
        if op == opcodes.JUMPDEST:
            continue
        if opcodes.is_dup(op):
            n = op - 0x7F
            reach(n - 1)
            stack.append(stack[-n])
            continue
        if opcodes.is_swap(op):
            n = op - 0x8F
            reach(n)
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
            continue
        meta = ins.meta
        if ins.mnemonic == "POP":
            reach(0)
            stack.pop()
            continue
        operands = []
        for _ in range(meta.stack_inputs):
            reach(0)
            operands.append(stack.pop())
        vid = next_id
        next_id += 1
        ops.append((vid, ins, operands, bool(meta.stack_outputs)))
        if meta.stack_outputs:
            stack.append(("v", vid))
    return _LocalBlock(ops, stack, consumed), next_id


def _stack_heights(program: SsaProgram, local: dict[int, _LocalBlock]) -> tuple[dict, dict]:
    """Minimum known stack height at each reachable block entry, plus every
    distinct height observed from predecessors (to spot mismatches)."""
    avail: dict[int, int] = {}
    seen: dict[int, set[int]] = {}
    if program.entry is None:
        return avail, seen
    avail[program.entry] = 0
    todo = [program.entry]
    while todo:
        b = todo.pop()
        lb = local[b]
        out = max(0, avail[b] - lb.consumed) + len(lb.exit)
        out = min(out, 1024)
        for s in program.blocks[b].successors:
            seen.setdefault(s, set()).add(out)
            if s not in avail or out < avail[s]:
                avail[s] = out
                todo.append(s)
    return avail, seen


def lower_to_ssa(program: SsaProgram) -> SsaProgram:
    """Symbolically execute each block; stack slots live across blocks become phis.

    Entry slots deeper than the smallest stack height any path can deliver
    become OPAQUE values; when predecessors disagree on height the program is
    flagged ``stack-mismatch``.
    """
    blocks = program.blocks
    order = sorted(blocks)
    local: dict[int, _LocalBlock] = {}
    next_id = 0
    for b in order:
        local[b], next_id = _simulate_block(blocks[b], next_id)

    reachable = program.reachable
    avail, seen = _stack_heights(program, local)
    preds = {b: tuple(p for p in program.predecessors[b] if p in reachable) for b in order}
    flags = set(program.flags)

    extra: dict[int, SsaValue] = {}
    extra_order: dict[int, list[int]] = {b: [] for b in order}
    entry_memo: dict[tuple[int, int], int] = {}
    pending_phis: list[tuple[int, int, int]] = []

    def new_extra(kind: str, block: int) -> int:
        nonlocal next_id
        vid = next_id
        next_id += 1
        extra[vid] = SsaValue(vid, kind, (), block)
        extra_order[block].append(vid)
        return vid

    def exit_slot(p: int, depth: int) -> tuple[int, int] | int:
        lb = local[p]
        if depth < len(lb.exit):
            ref = lb.exit[-1 - depth]
            return ref[1] if ref[0] == "v" else (p, ref[1])
        return (p, lb.consumed + depth - len(lb.exit))

    def entry_value(block: int, slot: int) -> int:
        chain: list[tuple[int, int]] = []
        key = (block, slot)
        while True:
            if key in entry_memo:
                result = entry_memo[key]
                break
            b, k = key
            if key in chain:
                result = new_extra(OPAQUE, b)
                break
            if b not in reachable or k >= avail.get(b, 0):
                if b in reachable and len(seen.get(b, ())) > 1:
                    flags.add("stack-mismatch")
                result = new_extra(OPAQUE, b)
                break
            if len(preds[b]) >= 2:
                result = new_extra(PHI, b)
                pending_phis.append((result, b, k))
                break
            chain.append(key)
            nxt = exit_slot(preds[b][0], k)
            if isinstance(nxt, int):
                result = nxt
                break
            key = nxt
        entry_memo[key] = result
        for c in chain:
            entry_memo[c] = result
        return result

    def resolve(ref: tuple, block: int) -> int:
        return ref[1] if ref[0] == "v" else entry_value(block, ref[1])

    raw_ops: dict[int, SsaValue] = {}
    for b in order:
        for vid, ins, operands, has_out in local[b].ops:
            ids = tuple(resolve(r, b) for r in operands)
            raw_ops[vid] = SsaValue(vid, ins.mnemonic, ids, b, ins.offset, ins.value, has_out)

    phi_operands: dict[int, tuple[int, ...]] = {}
    while pending_phis:
        vid, b, k = pending_phis.pop()
        ops = []
        for p in preds[b]:
            nxt = exit_slot(p, k)
            ops.append(nxt if isinstance(nxt, int) else entry_value(*nxt))
        phi_operands[vid] = tuple(ops)

    # Trivial phi removal: phi(x, x, self...) -> x.
    subst: dict[int, int] = {}

    def find(v: int) -> int:
        while v in subst:
            v = subst[v]
        return v

    changed = True
    while changed:
        changed = False
        for vid in sorted(phi_operands):
            if vid in subst:
                continue
            distinct = {find(o) for o in phi_operands[vid]} - {vid}
            if len(distinct) == 1:
                subst[vid] = distinct.pop()
                changed = True

    values: dict[int, SsaValue] = {}
    for vid, v in raw_ops.items():
        values[vid] = replace(v, operands=tuple(find(o) for o in v.operands))
    for vid, v in extra.items():
        if vid in subst:
            continue
        if v.op == PHI:
            v = replace(v, operands=tuple(find(o) for o in phi_operands[vid]))
        values[vid] = v

    _fold_constants(values)

    block_ops = {}
    for b in order:
        head = [v for v in extra_order[b] if v in values]
        block_ops[b] = tuple(head) + tuple(vid for vid, *_ in local[b].ops)
    return replace(program, values=values, block_ops=block_ops, flags=frozenset(flags))


def _fold_constants(values: dict[int, SsaValue]) -> None:
    changed = True
    while changed:
        changed = False
        for vid in sorted(values):
            v = values[vid]
            if v.constant is not None:
                continue
            if v.op == PHI:
                consts = {values[o].constant for o in v.operands}
                if len(consts) == 1 and None not in consts:
                    values[vid] = replace(v, constant=consts.pop())
                    changed = True
            elif v.op in fold.FOLDABLE:
                args = [values[o].constant for o in v.operands]
                if None not in args:
                    values[vid] = replace(v, constant=fold.evaluate(v.op, args))
                    changed = True
