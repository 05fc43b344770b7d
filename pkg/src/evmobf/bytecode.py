"""Decoding raw runtime bytecode into an instruction stream."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import opcodes
from .opcodes import OpcodeMeta, opcode_info

log = logging.getLogger(__name__)

_HEXDIGITS = frozenset("0123456789abcdefABCDEF")


class DecodeError(ValueError):
    """Malformed hex input; ``position`` is the index of the first bad character."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: int
    immediate: bytes = b""
    # Number of zero bytes appended to a push cut off by the end of code.
    truncated: int = 0

    @property
    def meta(self) -> OpcodeMeta:
        return opcode_info(self.opcode)

    @property
    def mnemonic(self) -> str:
        return self.meta.mnemonic

    @property
    def size(self) -> int:
        """Bytes this instruction occupies in the original code."""
        return 1 + len(self.immediate) - self.truncated

    @property
    def next_offset(self) -> int:
        return self.offset + self.size

    @property
    def value(self) -> int | None:
        """The pushed constant for PUSH0..PUSH32, else None."""
        if self.opcode == opcodes.PUSH0:
            return 0
        if opcodes.is_push(self.opcode):
            return int.from_bytes(self.immediate, "big")
        return None

    def __str__(self) -> str:
        text = f"{self.offset:#06x}: {self.mnemonic}"
        if self.immediate:
            text += f" 0x{self.immediate.hex()}"
        return text


@dataclass(frozen=True)
class InstructionStream:
    instructions: tuple[Instruction, ...]
    code_length: int
    jumpdests: frozenset[int]
    warnings: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    @property
    def truncated(self) -> bool:
        return any(i.truncated for i in self.instructions)


def parse_hex(text: str) -> bytes:
    """Parse hex text with or without a 0x prefix; surrounding whitespace is ignored."""
    stripped = text.strip()
    lead = len(text) - len(text.lstrip())
    body = stripped
    if body[:2] in ("0x", "0X"):
        body = body[2:]
        lead += 2
    for i, ch in enumerate(body):
        if ch not in _HEXDIGITS:
            raise DecodeError(f"non-hex character {ch!r}", lead + i)
    if len(body) % 2:
        raise DecodeError("odd-length hex string", lead + len(body) - 1)
    return bytes.fromhex(body)


def as_bytes(code: bytes | bytearray | str) -> bytes:
    if isinstance(code, str):
        return parse_hex(code)
    return bytes(code)


def decode(code: bytes | bytearray | str) -> InstructionStream:
    """Decode runtime bytecode (raw bytes, or hex text with optional 0x prefix).

    Undefined opcodes decode as INVALID instructions and a push cut short by
    the end of the code is zero-padded and flagged, so decoding never fails on
    bytes the chain accepted.
    """
    raw = as_bytes(code)
    out: list[Instruction] = []
    jumpdests: set[int] = set()
    warnings: list[str] = []
    pc = 0
    n = len(raw)
    while pc < n:
        op = raw[pc]
        size = opcodes.push_size(op)
        if size:
            imm = raw[pc + 1: pc + 1 + size]
            missing = size - len(imm)
            out.append(Instruction(pc, op, imm + bytes(missing), missing))
        else:
            if op == opcodes.JUMPDEST:
                jumpdests.add(pc)
            elif op in opcodes.POST_SHANGHAI:
                warnings.append(f"opcode {op:#04x} at {pc:#x} postdates {opcodes.FORK}; decoded as INVALID")
            out.append(Instruction(pc, op))
        pc += 1 + size
    for w in warnings:
        log.debug(w)
    return InstructionStream(tuple(out), n, frozenset(jumpdests), tuple(warnings))


def reencode(stream: InstructionStream) -> bytes:
    buf = bytearray()
    for ins in stream.instructions:
        buf.append(ins.opcode)
        buf += ins.immediate[: len(ins.immediate) - ins.truncated]
    return bytes(buf)


def disassemble(stream: InstructionStream) -> str:
    """Canonical text listing: ``<hex offset>: <MNEMONIC> [<hex immediate>]`` per line."""
    return "".join(f"{ins}\n" for ins in stream.instructions)
