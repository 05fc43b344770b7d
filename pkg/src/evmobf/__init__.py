"""Static measurement of funds-transfer obfuscation in EVM bytecode."""

from .bytecode import DecodeError, Instruction, InstructionStream, decode, disassemble, reencode
from .features import AnalysisConfig, FeatureVector, analyze, extract_features
from .ir import lift

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "DecodeError", "FeatureVector", "Instruction", "InstructionStream",
    "analyze", "decode", "disassemble", "extract_features", "lift", "reencode",
]
