"""Basic-block partition and jump-target recovery."""

from __future__ import annotations

import itertools
from dataclasses import replace

from .. import opcodes
from ..bytecode import InstructionStream
from . import fold
from .program import FALLTHROUGH, HALT, INVALID, JUMP, JUMPI, BasicBlock, SsaProgram

# Abstract values: None is "opaque", otherwise a frozenset of possible constants.
MAX_CONSTANTS = 8
MAX_STACK = 1024
WIDEN_AFTER = 3
_MAX_PRODUCT = 64


def _terminator(ins) -> str | None:
    name = ins.mnemonic
    if name == "JUMP":
        return JUMP
    if name == "JUMPI":
        return JUMPI
    meta = ins.meta
    if meta.category == opcodes.INVALID:
        return INVALID
    if meta.halts:
        return HALT
    return None


def _static_target(instrs) -> int | None:
    if len(instrs) >= 2:
        return instrs[-2].value
    return None


def build_cfg(stream: InstructionStream) -> SsaProgram:
    """Partition into basic blocks with fallthrough edges.

    Only jumps whose target is pushed by the immediately preceding instruction
    get an edge here; every other JUMP/JUMPI is recorded as unresolved.
    """
    instrs = stream.instructions
    blocks: dict[int, BasicBlock] = {}
    if not instrs:
        return SsaProgram(stream, blocks, None)

    groups: list[list] = []
    current: list = []
    for ins in instrs:
        if ins.opcode == opcodes.JUMPDEST and current:
            groups.append(current)
            current = []
        current.append(ins)
        if _terminator(ins) is not None:
            groups.append(current)
            current = []
    if current:
        groups.append(current)

    unresolved: set[int] = set()
    for i, group in enumerate(groups):
        bid = group[0].offset
        kind = _terminator(group[-1])
        has_next = i + 1 < len(groups)
        succ: list[int] = []
        if kind is None:
            # Falling off the end of code is an implicit STOP.
            kind = FALLTHROUGH if has_next else HALT
            if has_next:
                succ.append(groups[i + 1][0].offset)
        elif kind in (JUMP, JUMPI):
            target = _static_target(group)
            if target is not None:
                if target in stream.jumpdests:
                    succ.append(target)
            else:
                unresolved.add(bid)
            if kind == JUMPI and has_next:
                nxt = groups[i + 1][0].offset
                if nxt not in succ:
                    succ.append(nxt)
        blocks[bid] = BasicBlock(bid, tuple(group), kind, tuple(succ))
    return SsaProgram(stream, blocks, groups[0][0].offset, frozenset(unresolved))


def _join(a, b):
    if a is None or b is None:
        return None
    u = a | b
    return u if len(u) <= MAX_CONSTANTS else None


def _merge(old: tuple | None, new: tuple, widen: bool = False) -> tuple:
    if old is None:
        return new
    n = min(len(old), len(new))
    if n == 0:
        return ()
    out = []
    for x, y in zip(old[-n:], new[-n:]):
        j = _join(x, y)
        out.append(None if widen and j != x else j)
    return tuple(out)


def _apply(mnemonic: str, args: list):
    if any(a is None for a in args):
        return None
    combos = 1
    for a in args:
        combos *= len(a)
    if combos > _MAX_PRODUCT:
        return None
    out = frozenset(fold.evaluate(mnemonic, c) for c in itertools.product(*args))
    return out if len(out) <= MAX_CONSTANTS else None


def _simulate(block: BasicBlock, entry: tuple):
    """Run the abstract stack over a block; returns (exit stack, jump target value)."""
    stack = list(entry)

    def pop():
        return stack.pop() if stack else None

    target = None
    for ins in block.instructions:
        op = ins.opcode
        if ins.value is not None:
            stack.append(frozenset({ins.value}))
        elif opcodes.is_dup(op):
            n = op - 0x7F
            stack.append(stack[-n] if len(stack) >= n else None)
        elif opcodes.is_swap(op):
            n = op - 0x8F
            while len(stack) < n + 1:
                stack.insert(0, None)
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        else:
            meta = ins.meta
            name = meta.mnemonic
            args = [pop() for _ in range(meta.stack_inputs)]
            if name in ("JUMP", "JUMPI"):
                target = args[0]
            if meta.stack_outputs:
                stack.append(_apply(name, args) if name in fold.FOLDABLE else None)
        if len(stack) > MAX_STACK:
            del stack[: len(stack) - MAX_STACK]
    return tuple(stack), target


def resolve_jumps(program: SsaProgram, budget: int | None = None) -> SsaProgram:
    """Constant-propagate an abstract stack to a fixpoint and add jump edges.

    Merge is path-insensitive; each stack slot holds up to ``MAX_CONSTANTS``
    possible constants before becoming opaque, and slots still changing after
    ``WIDEN_AFTER`` updates of a block's entry state are widened to opaque
    (loop counters). Iteration stops after
    ``max(4, 2 * |blocks|)`` passes, flagging the program ``incomplete``.
    """
    blocks = program.blocks
    if program.entry is None:
        return program
    order = sorted(blocks)
    if budget is None:
        budget = max(4, 2 * len(blocks))
    states: dict[int, tuple] = {program.entry: ()}
    targets: dict[int, object] = {}
    updates: dict[int, int] = {}

    def successors(bid: int, target) -> list[int]:
        blk = blocks[bid]
        succ: list[int] = []
        if blk.terminator in (JUMP, JUMPI):
            if target is not None:
                succ.extend(t for t in sorted(target) if t in program.jumpdests)
            if blk.terminator == JUMPI:
                fall = blk.end_offset
                if fall in blocks and fall not in succ:
                    succ.append(fall)
        else:
            succ.extend(blk.successors)
        return succ

    # Each pass sweeps blocks in offset order; a block dirtied by an earlier
    # block in the same sweep is processed in that sweep.
    dirty = {program.entry}
    passes = 0
    incomplete = False
    while dirty:
        if passes >= budget:
            incomplete = True
            break
        passes += 1
        for bid in order:
            if bid not in dirty:
                continue
            dirty.discard(bid)
            out, target = _simulate(blocks[bid], states[bid])
            targets[bid] = target
            for s in successors(bid, target):
                merged = _merge(states.get(s), out, updates.get(s, 0) >= WIDEN_AFTER)
                if merged != states.get(s):
                    states[s] = merged
                    updates[s] = updates.get(s, 0) + 1
                    dirty.add(s)

    new_blocks: dict[int, BasicBlock] = {}
    unresolved: set[int] = set()
    for bid in order:
        blk = blocks[bid]
        if bid in states and blk.terminator in (JUMP, JUMPI):
            _, target = _simulate(blk, states[bid])
            if target is None:
                unresolved.add(bid)
            new_blocks[bid] = replace(blk, successors=tuple(successors(bid, target)))
        else:
            if bid not in states and bid in program.unresolved_jumps:
                unresolved.add(bid)
            new_blocks[bid] = blk
    flags = set(program.flags)
    if incomplete:
        flags.add("incomplete")
    return replace(program, blocks=new_blocks, unresolved_jumps=frozenset(unresolved),
                   flags=frozenset(flags))
