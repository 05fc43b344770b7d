"""Tiny two-pass EVM assembler for hand-written fixtures.

Syntax, one item per line (``;`` starts a comment)::

    start:              ; JUMPDEST, label = its offset
    PUSH1 0x2a
    PUSH2 @start        ; label reference, fixed width
    PUSH @start         ; label reference, PUSH2
    PUSH 0x1234         ; smallest push that fits
    .mark blob          ; label without emitting a JUMPDEST
    .data 0xdeadbeef    ; raw bytes
"""

from __future__ import annotations

from .opcodes import BY_NAME


class AsmError(ValueError):
    pass


def _int(tok: str) -> int:
    return int(tok, 0)


def _min_width(value: int) -> int:
    return max(1, (value.bit_length() + 7) // 8)


def assemble(source: str) -> bytes:
    # pass 1: sizes and labels; pass 2: emit
    items: list[tuple] = []
    labels: dict[str, int] = {}
    pc = 0
    for lineno, line in enumerate(source.splitlines(), 1):
        text = line.split(";", 1)[0].strip()
        if not text:
            continue
        if text.endswith(":"):
            name = text[:-1].strip()
            if name in labels:
                raise AsmError(f"line {lineno}: duplicate label {name}")
            labels[name] = pc
            items.append(("op", BY_NAME["JUMPDEST"], None, 0))
            pc += 1
            continue
        parts = text.split()
        head = parts[0]
        if head == ".mark":
            labels[parts[1]] = pc
            continue
        if head == ".data":
            blob = bytes.fromhex(parts[1].removeprefix("0x"))
            items.append(("data", blob))
            pc += len(blob)
            continue
        head = head.upper()
        if head == "PUSH":
            if len(parts) != 2:
                raise AsmError(f"line {lineno}: PUSH needs one argument")
            arg = parts[1]
            width = 2 if arg.startswith("@") else _min_width(_int(arg))
            items.append(("op", 0x5F + width, arg, width))
            pc += 1 + width
            continue
        if head not in BY_NAME:
            raise AsmError(f"line {lineno}: unknown mnemonic {head}")
        code = BY_NAME[head]
        if 0x60 <= code <= 0x7F:
            if len(parts) != 2:
                raise AsmError(f"line {lineno}: {head} needs one argument")
            width = code - 0x5F
            items.append(("op", code, parts[1], width))
            pc += 1 + width
        else:
            if len(parts) != 1:
                raise AsmError(f"line {lineno}: {head} takes no argument")
            items.append(("op", code, None, 0))
            pc += 1

    out = bytearray()
    for item in items:
        if item[0] == "data":
            out += item[1]
            continue
        _, code, arg, width = item
        out.append(code)
        if arg is None:
            continue
        if arg.startswith("@"):
            name = arg[1:]
            if name not in labels:
                raise AsmError(f"undefined label {name}")
            value = labels[name]
        else:
            value = _int(arg)
        if value.bit_length() > 8 * width:
            raise AsmError(f"value {arg} does not fit in {width} bytes")
        out += value.to_bytes(width, "big")
    return bytes(out)
