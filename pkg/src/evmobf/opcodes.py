"""EVM opcode table through the Shanghai fork.

Arity follows the yellow paper: ``inputs`` items are popped, ``outputs``
items are pushed. Bytes that are not defined up to Shanghai map to an
INVALID entry that halts.
"""

from __future__ import annotations

from dataclasses import dataclass

ARITHMETIC = "arithmetic"
BITWISE = "bitwise"
HASH = "hash"
MEMORY = "memory"
STORAGE = "storage"
CONTROL = "control"
CALL = "call"
LOG = "log"
ENVIRONMENT = "environment"
STACK = "stack"
INVALID = "invalid"

CATEGORIES = (
    ARITHMETIC, BITWISE, HASH, MEMORY, STORAGE, CONTROL,
    CALL, LOG, ENVIRONMENT, STACK, INVALID,
)

FORK = "shanghai"


@dataclass(frozen=True)
class OpcodeMeta:
    mnemonic: str
    stack_inputs: int
    stack_outputs: int
    category: str
    halts: bool = False
    defined: bool = True


_TABLE: dict[int, OpcodeMeta] = {}


def _op(code: int, name: str, ins: int, outs: int, cat: str, halts: bool = False) -> None:
    _TABLE[code] = OpcodeMeta(name, ins, outs, cat, halts)


_op(0x00, "STOP", 0, 0, CONTROL, True)
_op(0x01, "ADD", 2, 1, ARITHMETIC)
_op(0x02, "MUL", 2, 1, ARITHMETIC)
_op(0x03, "SUB", 2, 1, ARITHMETIC)
_op(0x04, "DIV", 2, 1, ARITHMETIC)
_op(0x05, "SDIV", 2, 1, ARITHMETIC)
_op(0x06, "MOD", 2, 1, ARITHMETIC)
_op(0x07, "SMOD", 2, 1, ARITHMETIC)
_op(0x08, "ADDMOD", 3, 1, ARITHMETIC)
_op(0x09, "MULMOD", 3, 1, ARITHMETIC)
_op(0x0A, "EXP", 2, 1, ARITHMETIC)
_op(0x0B, "SIGNEXTEND", 2, 1, ARITHMETIC)

_op(0x10, "LT", 2, 1, BITWISE)
_op(0x11, "GT", 2, 1, BITWISE)
_op(0x12, "SLT", 2, 1, BITWISE)
_op(0x13, "SGT", 2, 1, BITWISE)
_op(0x14, "EQ", 2, 1, BITWISE)
_op(0x15, "ISZERO", 1, 1, BITWISE)
_op(0x16, "AND", 2, 1, BITWISE)
_op(0x17, "OR", 2, 1, BITWISE)
_op(0x18, "XOR", 2, 1, BITWISE)
_op(0x19, "NOT", 1, 1, BITWISE)
_op(0x1A, "BYTE", 2, 1, BITWISE)
_op(0x1B, "SHL", 2, 1, BITWISE)
_op(0x1C, "SHR", 2, 1, BITWISE)
_op(0x1D, "SAR", 2, 1, BITWISE)

_op(0x20, "KECCAK256", 2, 1, HASH)

_op(0x30, "ADDRESS", 0, 1, ENVIRONMENT)
_op(0x31, "BALANCE", 1, 1, ENVIRONMENT)
_op(0x32, "ORIGIN", 0, 1, ENVIRONMENT)
_op(0x33, "CALLER", 0, 1, ENVIRONMENT)
_op(0x34, "CALLVALUE", 0, 1, ENVIRONMENT)
_op(0x35, "CALLDATALOAD", 1, 1, ENVIRONMENT)
_op(0x36, "CALLDATASIZE", 0, 1, ENVIRONMENT)
_op(0x37, "CALLDATACOPY", 3, 0, MEMORY)
_op(0x38, "CODESIZE", 0, 1, ENVIRONMENT)
_op(0x39, "CODECOPY", 3, 0, MEMORY)
_op(0x3A, "GASPRICE", 0, 1, ENVIRONMENT)
_op(0x3B, "EXTCODESIZE", 1, 1, ENVIRONMENT)
_op(0x3C, "EXTCODECOPY", 4, 0, MEMORY)
_op(0x3D, "RETURNDATASIZE", 0, 1, ENVIRONMENT)
_op(0x3E, "RETURNDATACOPY", 3, 0, MEMORY)
_op(0x3F, "EXTCODEHASH", 1, 1, ENVIRONMENT)
_op(0x40, "BLOCKHASH", 1, 1, ENVIRONMENT)
_op(0x41, "COINBASE", 0, 1, ENVIRONMENT)
_op(0x42, "TIMESTAMP", 0, 1, ENVIRONMENT)
_op(0x43, "NUMBER", 0, 1, ENVIRONMENT)
_op(0x44, "PREVRANDAO", 0, 1, ENVIRONMENT)
_op(0x45, "GASLIMIT", 0, 1, ENVIRONMENT)
_op(0x46, "CHAINID", 0, 1, ENVIRONMENT)
_op(0x47, "SELFBALANCE", 0, 1, ENVIRONMENT)
_op(0x48, "BASEFEE", 0, 1, ENVIRONMENT)

_op(0x50, "POP", 1, 0, STACK)
_op(0x51, "MLOAD", 1, 1, MEMORY)
_op(0x52, "MSTORE", 2, 0, MEMORY)
_op(0x53, "MSTORE8", 2, 0, MEMORY)
_op(0x54, "SLOAD", 1, 1, STORAGE)
_op(0x55, "SSTORE", 2, 0, STORAGE)
_op(0x56, "JUMP", 1, 0, CONTROL)
_op(0x57, "JUMPI", 2, 0, CONTROL)
_op(0x58, "PC", 0, 1, ENVIRONMENT)
_op(0x59, "MSIZE", 0, 1, MEMORY)
_op(0x5A, "GAS", 0, 1, ENVIRONMENT)
_op(0x5B, "JUMPDEST", 0, 0, CONTROL)
_op(0x5F, "PUSH0", 0, 1, STACK)

for _n in range(1, 33):
    _op(0x5F + _n, f"PUSH{_n}", 0, 1, STACK)
for _n in range(1, 17):
    _op(0x7F + _n, f"DUP{_n}", _n, _n + 1, STACK)
    _op(0x8F + _n, f"SWAP{_n}", _n + 1, _n + 1, STACK)
for _n in range(5):
    _op(0xA0 + _n, f"LOG{_n}", 2 + _n, 0, LOG)

_op(0xF0, "CREATE", 3, 1, CALL)
_op(0xF1, "CALL", 7, 1, CALL)
_op(0xF2, "CALLCODE", 7, 1, CALL)
_op(0xF3, "RETURN", 2, 0, CONTROL, True)
_op(0xF4, "DELEGATECALL", 6, 1, CALL)
_op(0xF5, "CREATE2", 4, 1, CALL)
_op(0xFA, "STATICCALL", 6, 1, CALL)
_op(0xFD, "REVERT", 2, 0, CONTROL, True)
_op(0xFE, "INVALID", 0, 0, INVALID, True)
_op(0xFF, "SELFDESTRUCT", 1, 0, CONTROL, True)

_UNDEFINED = OpcodeMeta("INVALID", 0, 0, INVALID, True, defined=False)

# Defined by later forks (Cancun); decoded as INVALID here.
POST_SHANGHAI = frozenset({0x49, 0x4A, 0x5C, 0x5D, 0x5E})

BY_NAME: dict[str, int] = {m.mnemonic: code for code, m in _TABLE.items()}

PUSH0 = 0x5F
PUSH1 = 0x60
PUSH32 = 0x7F
JUMPDEST = 0x5B

# External call family: ops whose result comes from another contract.
CALL_FAMILY = frozenset({"CALL", "CALLCODE", "DELEGATECALL", "STATICCALL"})
VALUE_CALLS = frozenset({"CALL", "CALLCODE"})
LOG_OPS = frozenset(f"LOG{n}" for n in range(5))


def opcode_info(opcode: int) -> OpcodeMeta:
    """Metadata for any byte value; undefined bytes are INVALID and halt."""
    return _TABLE.get(opcode, _UNDEFINED)


def is_push(opcode: int) -> bool:
    return PUSH1 <= opcode <= PUSH32


def push_size(opcode: int) -> int:
    return opcode - PUSH1 + 1 if is_push(opcode) else 0


def is_dup(opcode: int) -> bool:
    return 0x80 <= opcode <= 0x8F


def is_swap(opcode: int) -> bool:
    return 0x90 <= opcode <= 0x9F
