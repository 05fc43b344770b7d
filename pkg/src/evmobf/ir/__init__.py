"""Control-flow recovery, SSA lowering and dependence analysis."""

from __future__ import annotations

from ..bytecode import InstructionStream, decode
from .cfg import build_cfg, resolve_jumps
from .functions import FunctionUnit, identify_functions
from .pdg import Pdg, Slice, backward_slice, build_pdg, control_dependence
from .program import BasicBlock, SsaProgram, SsaValue
from .ssa import lower_to_ssa

__all__ = [
    "BasicBlock", "FunctionUnit", "Pdg", "Slice", "SsaProgram", "SsaValue",
    "backward_slice", "build_cfg", "build_pdg", "control_dependence",
    "identify_functions", "lower_to_ssa", "lift", "resolve_jumps",
]


def lift(code: bytes | str | InstructionStream) -> SsaProgram:
    """Decode, recover the CFG, resolve jumps and lower to SSA."""
    stream = code if isinstance(code, InstructionStream) else decode(code)
    return lower_to_ssa(resolve_jumps(build_cfg(stream)))
