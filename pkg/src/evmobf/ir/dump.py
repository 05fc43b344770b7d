"""Text dumps for fixture authoring and audits."""

from __future__ import annotations

from .pdg import Pdg
from .program import SsaProgram


def _fmt_value(program: SsaProgram, vid: int) -> str:
    v = program.values[vid]
    args = ", ".join(f"v{o}" for o in v.operands)
    text = f"{v.op}({args})" if v.operands or v.op not in ("PHI", "OPAQUE") else v.op
    if v.op.startswith("PUSH"):
        text = f"{v.op} {v.constant:#x}"
    lhs = f"v{vid} = " if v.has_output else ""
    tail = f"  ; const {v.constant:#x}" if v.constant is not None and not v.op.startswith("PUSH") else ""
    return f"{lhs}{text}{tail}"


def ssa_listing(program: SsaProgram) -> str:
    lines = []
    for b in sorted(program.blocks):
        blk = program.blocks[b]
        succ = ", ".join(f"{s:#x}" for s in blk.successors)
        mark = "" if b in program.reachable else "  ; unreachable"
        lines.append(f"block {b:#x} [{blk.terminator}] -> [{succ}]{mark}")
        for vid in program.block_ops.get(b, ()):
            lines.append(f"  {_fmt_value(program, vid)}")
    return "\n".join(lines) + "\n"


def cfg_dot(program: SsaProgram) -> str:
    lines = ["digraph cfg {", "  node [shape=box, fontname=monospace];"]
    for b in sorted(program.blocks):
        blk = program.blocks[b]
        body = "\\l".join(str(i) for i in blk.instructions) + "\\l"
        style = "" if b in program.reachable else ", style=dashed"
        if b in program.unresolved_jumps:
            style += ", color=red"
        lines.append(f'  b{b} [label="{body}"{style}];')
        for s in blk.successors:
            lines.append(f"  b{b} -> b{s};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def pdg_dot(program: SsaProgram, pdg: Pdg) -> str:
    lines = [f'digraph "pdg_{pdg.unit.name}" {{', "  node [shape=box, fontname=monospace];"]
    for n in sorted(pdg.graph.nodes):
        label = _fmt_value(program, n).replace('"', "'")
        lines.append(f'  v{n} [label="{label}"];')
    for u, v, kind in sorted(pdg.graph.edges(data="kind")):
        style = "solid" if kind == "data" else "dashed"
        lines.append(f'  v{u} -> v{v} [label="{kind}", style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
