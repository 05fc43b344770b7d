from __future__ import annotations

import random
import time

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evmobf import opcodes
from evmobf.asm import assemble
from evmobf.bytecode import decode
from evmobf.ir import (backward_slice, build_cfg, build_pdg, identify_functions, lift, lower_to_ssa,
                       resolve_jumps)
from evmobf.ir.dump import cfg_dot, pdg_dot, ssa_listing
from evmobf.ir.pdg import CONTROL, DATA
from evmobf.ir.program import FALLTHROUGH, HALT, INVALID, JUMP, JUMPI, OPAQUE, PHI

from helpers import load_fixtures, random_bytecode

FIXTURES = load_fixtures()


def ops_named(prog, name):
    return [v for v in prog.values.values() if v.op == name]


def check_invariants(prog) -> None:
    stream = prog.stream
    # CFG partition
    assert sum(len(b.instructions) for b in prog.blocks.values()) == len(stream.instructions)
    owner = {}
    for b, blk in prog.blocks.items():
        assert blk.id == blk.instructions[0].offset
        for k, ins in enumerate(blk.instructions):
            assert ins.offset not in owner
            owner[ins.offset] = b
            last = k == len(blk.instructions) - 1
            if not last:
                assert ins.meta.mnemonic not in ("JUMP", "JUMPI") and not ins.meta.halts
            if k > 0:
                assert ins.opcode != opcodes.JUMPDEST
        if blk.terminator in (HALT, INVALID):
            assert blk.successors == ()
        if blk.terminator == JUMPI:
            assert len(set(blk.successors)) <= 2
        if blk.terminator in (JUMP, JUMPI):
            fall = blk.end_offset if blk.terminator == JUMPI else None
            # jump soundness
            assert all(s in stream.jumpdests for s in blk.successors if s != fall)
        if blk.terminator == FALLTHROUGH:
            assert blk.successors == (blk.end_offset,)
    assert set(owner) == {i.offset for i in stream.instructions}

    # SSA single assignment
    seen = []
    for b in prog.blocks:
        seen.extend(prog.block_ops.get(b, ()))
    assert len(seen) == len(set(seen))
    assert set(seen) == set(prog.values)
    for vid, v in prog.values.items():
        assert v.id == vid
        assert all(o in prog.values for o in v.operands)

    # operands defined in a dominating block (or along the matching phi edge)
    reach = prog.reachable
    if not reach:
        return
    g = nx.DiGraph()
    g.add_node(prog.entry)
    for b in reach:
        for s in prog.blocks[b].successors:
            g.add_edge(b, s)
    idom = nx.immediate_dominators(g, prog.entry)

    def dominates(a, b):
        while True:
            if a == b:
                return True
            if b == idom[b]:
                return False
            b = idom[b]

    for b in reach:
        order = {vid: i for i, vid in enumerate(prog.block_ops[b])}
        preds = [p for p in prog.predecessors[b] if p in reach]
        for vid in prog.block_ops[b]:
            v = prog.values[vid]
            if v.op == PHI:
                assert len(v.operands) == len(preds)
                for o, p in zip(v.operands, preds):
                    assert dominates(prog.values[o].block, p)
                continue
            for o in v.operands:
                d = prog.values[o].block
                if d == b:
                    assert order[o] < order[vid]
                else:
                    assert dominates(d, b)


# build_cfg

def test_straight_line_one_block():
    prog = build_cfg(decode(assemble("PUSH1 0x01\nPUSH1 0x02\nADD\nSTOP")))
    assert list(prog.blocks) == [0]
    assert prog.blocks[0].successors == ()
    assert prog.blocks[0].terminator == HALT


def test_jumpi_branch_block():
    # 0: PUSH1 1, 2: PUSH1 8, 4: JUMPI, 5: PUSH1 0, 7: STOP, 8: JUMPDEST, 9: STOP
    code = bytes.fromhex("6001600857600000" "5b00")
    assert len(code) == 10
    prog = resolve_jumps(build_cfg(decode(code)))
    assert sorted(prog.blocks) == [0, 5, 8]
    assert prog.blocks[0].terminator == JUMPI
    assert set(prog.blocks[0].successors) == {5, 8}
    assert prog.blocks[5].successors == () and prog.blocks[8].successors == ()


def test_calldata_jump_unresolved():
    prog = lift(assemble("PUSH1 0x00\nCALLDATALOAD\nJUMP\nfoo:\nSTOP"))
    assert 0 in prog.unresolved_jumps
    assert prog.blocks[0].successors == ()


def test_empty_code():
    prog = lift(b"")
    assert prog.blocks == {} and prog.values == {}
    assert identify_functions(prog) == []


# resolve_jumps

def test_pushed_target_edge():
    prog = lift(assemble("PUSH @dest\nJUMP\nINVALID\ndest:\nSTOP"))
    dest = max(prog.blocks)
    assert prog.blocks[0].successors == (dest,)
    assert not prog.unresolved_jumps


@pytest.mark.parametrize("a", [1, 3, 6])
def test_folded_target_edge(a):
    # PUSH1 a (0), PUSH1 b (2), ADD (4), JUMP (5), INVALID (6), JUMPDEST (7)
    b = 7 - a
    prog = lift(bytes([0x60, a, 0x60, b, 0x01, 0x56, 0xFE, 0x5B, 0x00]))
    assert prog.blocks[0].successors == (7,)
    assert not prog.unresolved_jumps


def test_jump_through_stack_shuffle_resolves():
    src = "PUSH @dest\nPUSH1 0x05\nSWAP1\nJUMP\ndest:\nPOP\nSTOP"
    prog = lift(assemble(src))
    assert not prog.unresolved_jumps


def test_loop_converges_without_budget_flag():
    src = "PUSH1 0x00\nloop:\nPUSH1 0x01\nADD\nDUP1\nPUSH1 0x0a\nGT\nPUSH @loop\nJUMPI\nPOP\nSTOP"
    prog = lift(assemble(src))
    assert "incomplete" not in prog.flags
    head = min(b for b in prog.blocks if b > 0)
    assert head in prog.blocks[head].successors
    assert any(v.op == PHI and v.block == head for v in prog.values.values())
    check_invariants(prog)


def test_internal_call_return_resolves():
    src = """
    PUSH @ret1
    PUSH @sub
    JUMP
    ret1:
    PUSH @ret2
    PUSH @sub
    JUMP
    ret2:
    STOP
    sub:
    JUMP
    """
    prog = lift(assemble(src))
    sub = max(prog.blocks)
    assert len(prog.blocks[sub].successors) == 2
    assert sub not in prog.unresolved_jumps


# lower_to_ssa

def test_constant_fold():
    prog = lift(assemble("PUSH1 0x02\nPUSH1 0x03\nADD\nSTOP"))
    add = ops_named(prog, "ADD")[0]
    assert add.constant == 5
    assert [prog.values[o].constant for o in add.operands] == [3, 2]


def test_diamond_phi():
    src = """
    PUSH1 0x00
    CALLDATALOAD
    PUSH @left
    JUMPI
    PUSH1 0x01
    PUSH @join
    JUMP
    left:
    PUSH1 0x02
    join:
    PUSH1 0x00
    SSTORE
    STOP
    """
    prog = lift(assemble(src))
    phis = ops_named(prog, PHI)
    assert len(phis) == 1
    assert sorted(prog.values[o].constant for o in phis[0].operands) == [1, 2]
    sstore = ops_named(prog, "SSTORE")[0]
    assert sstore.operands[1] == phis[0].id
    check_invariants(prog)


def test_stack_mismatch_flagged():
    src = """
    PUSH1 0x00
    CALLDATALOAD
    PUSH @a
    JUMPI
    PUSH1 0x01
    PUSH1 0x02
    PUSH @j
    JUMP
    a:
    PUSH1 0x03
    PUSH @j
    JUMP
    j:
    ADD
    PUSH1 0x00
    SSTORE
    STOP
    """
    prog = lift(assemble(src))
    assert "stack-mismatch" in prog.flags
    add = ops_named(prog, "ADD")[0]
    assert any(prog.values[o].op == OPAQUE for o in add.operands)
    check_invariants(prog)


def test_empty_chain_no_values():
    prog = lower_to_ssa(resolve_jumps(build_cfg(decode(assemble("JUMPDEST\nJUMPDEST\nSTOP")))))
    assert [v.op for v in prog.values.values()] == ["STOP"]


# identify_functions

DISPATCHER = """
PUSH1 0x00
CALLDATALOAD
PUSH1 0xe0
SHR
DUP1
PUSH4 0x2e1a7d4d
EQ
PUSH @f_withdraw
JUMPI
DUP1
PUSH4 0x95805dad
EQ
PUSH @f_start
JUMPI
PUSH1 0x00
DUP1
REVERT
f_withdraw:
CALLER
PUSH1 0x00
SSTORE
STOP
f_start:
PUSH1 0x01
PUSH1 0x00
SSTORE
STOP
"""


def test_two_selector_dispatcher():
    prog = lift(assemble(DISPATCHER))
    units = identify_functions(prog)
    assert sorted(u.name for u in units) == ["0x2e1a7d4d", "0x95805dad", "fallback"]
    by = {u.name: u for u in units}
    assert len(by["0x2e1a7d4d"].blocks) == 1 and len(by["0x95805dad"].blocks) == 1
    assert not any("shared" in u.flags for u in units)


def test_fallback_only_flagged():
    prog = lift(FIXTURES["t1_keccak_seed"]["code"])
    (unit,) = identify_functions(prog)
    assert unit.selector is None and "fallback-only" in unit.flags
    assert unit.blocks == prog.reachable


def test_atypical_dispatch_flagged():
    src = DISPATCHER.replace("PUSH1 0xe0\nSHR", "PUSH1 0xe8\nSHR")
    (unit,) = identify_functions(lift(assemble(src)))
    assert {"fallback-only", "dispatch-atypical"} <= unit.flags


def test_shared_internal_flagged():
    units = identify_functions(lift(FIXTURES["t6_shared_internal"]["code"]))
    shared = [u for u in units if "shared" in u.flags]
    assert len(shared) >= 2
    common = frozenset.intersection(*(u.blocks for u in shared))
    assert common and all(common <= u.shared for u in shared)


# build_pdg

def test_straight_line_no_control_edges():
    prog = lift(FIXTURES["t1_keccak_seed"]["code"])
    (unit,) = identify_functions(prog)
    pdg = build_pdg(prog, unit)
    assert pdg.edges(CONTROL) == []


def test_guarded_sstore_control_edge():
    prog = lift(assemble("PUSH1 0x00\nCALLDATALOAD\nPUSH @t\nJUMPI\nSTOP\nt:\nPUSH1 0x01\nPUSH1 0x00\nSSTORE\nSTOP"))
    (unit,) = identify_functions(prog)
    pdg = build_pdg(prog, unit)
    sstore = ops_named(prog, "SSTORE")[0].id
    jumpi = ops_named(prog, "JUMPI")[0].id
    assert (sstore, jumpi) in pdg.edges(CONTROL)
    for u, v in pdg.edges(CONTROL):
        assert prog.values[v].op == "JUMPI"


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_data_edges_mirror_operands(name):
    prog = lift(FIXTURES[name]["code"])
    for unit in identify_functions(prog):
        pdg = build_pdg(prog, unit)
        nodes = set(pdg.graph.nodes)
        refs = sum(1 for n in nodes for o in prog.values[n].operands if o in nodes)
        assert len(pdg.edges(DATA)) == refs


def test_dispatcher_jumpis_not_control_sources():
    prog = lift(assemble(DISPATCHER))
    for unit in identify_functions(prog):
        pdg = build_pdg(prog, unit)
        for _, j in pdg.edges(CONTROL):
            assert prog.values[j].block not in unit.dispatcher_blocks


# backward_slice

def test_slice_of_constant():
    prog = lift(assemble("PUSH1 0x2a\nPUSH1 0x00\nSSTORE\nSTOP"))
    push = [v for v in prog.values.values() if v.constant == 0x2A][0]
    assert backward_slice(prog, push.id).members == {push.id}


def test_slice_and_mask_sload():
    prog = lift(assemble("PUSH1 0x07\nSLOAD\nPUSH20 0xffffffffffffffffffffffffffffffffffffffff\nAND\n"
                         "PUSH1 0x00\nSSTORE\nSTOP"))
    and_op = ops_named(prog, "AND")[0]
    sload = ops_named(prog, "SLOAD")[0]
    key = sload.operands[0]
    mask = [o for o in and_op.operands if o != sload.id][0]
    sl = backward_slice(prog, and_op.id)
    assert sl.members == {and_op.id, mask, sload.id, key}
    assert sl.frontier == {sload.id}


def test_slice_with_control():
    prog = lift(assemble("PUSH1 0x00\nCALLDATALOAD\nPUSH @t\nJUMPI\nSTOP\nt:\nCALLER\nPUSH1 0x00\nSSTORE\nSTOP"))
    sstore = ops_named(prog, "SSTORE")[0]
    plain = backward_slice(prog, sstore.id)
    ctl = backward_slice(prog, sstore.id, include_control=True)
    jumpi = ops_named(prog, "JUMPI")[0].id
    assert jumpi not in plain.members
    assert jumpi in ctl.members and ops_named(prog, "CALLDATALOAD")[0].id in ctl.members
    assert plain.members < ctl.members


def _slice_monotone(prog, include_control=False):
    for vid, v in prog.values.items():
        sl = backward_slice(prog, vid, include_control)
        assert vid in sl.members
        assert set(v.operands) <= sl.members
        for o in v.operands:
            assert backward_slice(prog, o, include_control).members <= sl.members


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_slice_monotone_on_fixtures(name):
    prog = lift(FIXTURES[name]["code"])
    _slice_monotone(prog)
    _slice_monotone(prog, include_control=True)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_slice_monotone_random(seed):
    _slice_monotone(lift(random_bytecode(random.Random(seed), 120)))


# invariants

@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_invariants_on_fixtures(name):
    check_invariants(lift(FIXTURES[name]["code"]))


def test_invariants_on_1000_random_inputs():
    rng = random.Random(99)
    start = time.perf_counter()
    for _ in range(1000):
        prog = lift(random_bytecode(rng))
        check_invariants(prog)
        identify_functions(prog)
    assert time.perf_counter() - start < 30


def _backward_chain(n: int) -> str:
    # entry -> l{n} -> l{n-1} -> ... -> l1: every edge points to a lower offset,
    # so each sweep discovers exactly one more target.
    lines = [f"PUSH @l{n}", "JUMP"]
    for i in range(1, n + 1):
        lines += [f"l{i}:", "STOP" if i == 1 else f"PUSH @l{i - 1}", *([] if i == 1 else ["JUMP"])]
    return "\n".join(lines)


def test_resolution_budget_flag():
    prog = build_cfg(decode(assemble(_backward_chain(6))))
    full = resolve_jumps(prog)
    assert "incomplete" not in full.flags and not full.unresolved_jumps
    short = resolve_jumps(prog, budget=2)
    assert "incomplete" in short.flags
    # partial, not aborted: the first targets are still recovered
    assert full.blocks[0].successors == short.blocks[0].successors


def test_dumps():
    prog = lift(FIXTURES["t4_nested_if"]["code"])
    assert cfg_dot(prog).startswith("digraph cfg {")
    listing = ssa_listing(prog)
    assert "CALL" in listing and listing.count("block ") == len(prog.blocks)
    unit = identify_functions(prog)[0]
    dot = pdg_dot(prog, build_pdg(prog, unit))
    assert "control" in dot and "data" in dot
