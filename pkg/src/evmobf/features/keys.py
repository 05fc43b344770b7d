from __future__ import annotations

from .. import opcodes
from ..ir.pdg import Slice, backward_slice, through_memory
from ..ir.program import SsaProgram

# Environment reads whose result changes within one execution.
_VARYING = frozenset({"GAS", "RETURNDATASIZE", "PC", "MSIZE"})


def op_key(program: SsaProgram, vid: int):
    """Identity used when comparing dataflow between slices.

    Operand-free environment reads (CALLER, CALLVALUE, ...) return the same
    value wherever they appear, so they are keyed by mnemonic.
    """
    v = program.values[vid]
    code = opcodes.BY_NAME.get(v.op)
    if not v.operands and v.op not in _VARYING and code is not None \
            and opcodes.opcode_info(code).category == opcodes.ENVIRONMENT:
        return ("env", v.op)
    return vid


def slice_keys(program: SsaProgram, sl: Slice) -> set:
    """Keys of the slice members, its memory writers and what they stored.

    Mapping lookups hash their key through memory, so the key's derivation
    counts as part of the slice.
    """
    full = through_memory(program, sl)
    return {op_key(program, m) for m in full.members | full.memory_feeders}


def value_keys(program: SsaProgram, vid: int) -> set:
    return slice_keys(program, backward_slice(program, vid))
