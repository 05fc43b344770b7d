"""256-bit constant evaluation of pure EVM operations."""

from __future__ import annotations

WORD = 1 << 256
MASK = WORD - 1
SIGN = 1 << 255


def _signed(x: int) -> int:
    return x - WORD if x & SIGN else x


def _unsigned(x: int) -> int:
    return x & MASK


def _sdiv(a: int, b: int) -> int:
    if b == 0:
        return 0
    sa, sb = _signed(a), _signed(b)
    q = abs(sa) // abs(sb)
    return _unsigned(-q if (sa < 0) != (sb < 0) else q)


def _smod(a: int, b: int) -> int:
    if b == 0:
        return 0
    sa, sb = _signed(a), _signed(b)
    r = abs(sa) % abs(sb)
    return _unsigned(-r if sa < 0 else r)


def _signextend(b: int, x: int) -> int:
    if b >= 31:
        return x
    bit = b * 8 + 7
    mask = (1 << bit) - 1
    return _unsigned(x | ~mask) if x & (1 << bit) else x & mask


def _byte(i: int, x: int) -> int:
    return (x >> (8 * (31 - i))) & 0xFF if i < 32 else 0


def _sar(shift: int, x: int) -> int:
    if shift >= 256:
        return MASK if x & SIGN else 0
    return _unsigned(_signed(x) >> shift)


# Operand order is stack order: the first argument is the top of stack.
_FOLD = {
    "ADD": lambda a, b: (a + b) & MASK,
    "MUL": lambda a, b: (a * b) & MASK,
    "SUB": lambda a, b: (a - b) & MASK,
    "DIV": lambda a, b: a // b if b else 0,
    "SDIV": _sdiv,
    "MOD": lambda a, b: a % b if b else 0,
    "SMOD": _smod,
    "ADDMOD": lambda a, b, n: (a + b) % n if n else 0,
    "MULMOD": lambda a, b, n: (a * b) % n if n else 0,
    "EXP": lambda a, b: pow(a, b, WORD),
    "SIGNEXTEND": _signextend,
    "LT": lambda a, b: int(a < b),
    "GT": lambda a, b: int(a > b),
    "SLT": lambda a, b: int(_signed(a) < _signed(b)),
    "SGT": lambda a, b: int(_signed(a) > _signed(b)),
    "EQ": lambda a, b: int(a == b),
    "ISZERO": lambda a: int(a == 0),
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "NOT": lambda a: MASK ^ a,
    "BYTE": _byte,
    "SHL": lambda s, x: (x << s) & MASK if s < 256 else 0,
    "SHR": lambda s, x: x >> s if s < 256 else 0,
    "SAR": _sar,
}

FOLDABLE = frozenset(_FOLD)


def evaluate(mnemonic: str, args: tuple[int, ...] | list[int]) -> int:
    return _FOLD[mnemonic](*args)
