"""Relevance of emitted events to a transfer."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol

import requests

from ..ir.pdg import memory_feeders
from ..ir.program import SsaProgram
from ..transfer import Decomposition, LogInfo
from .keys import slice_keys, value_keys

log = logging.getLogger(__name__)

RELATED = "related"
UNRELATED = "unrelated"
AMBIGUOUS = "ambiguous"
RELATIONS = (RELATED, UNRELATED, AMBIGUOUS)
HEURISTIC_ONLY = "f7-heuristic-only"


@dataclass(frozen=True)
class Classification:
    relation: str
    confidence: float
    reason: str


class LogClassifier(Protocol):
    def classify(self, program: SsaProgram, log_info: LogInfo,
                 decomposition: Decomposition) -> Classification: ...


def load_signatures(path: str | Path | None = None) -> dict[int, str]:
    """Parse ``0x<topic0>: relation  # comment`` lines."""
    if path is None:
        text = resources.files(__package__).joinpath("data/event_signatures.txt").read_text()
    else:
        text = Path(path).read_text()
    out: dict[int, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, rel = (p.strip() for p in line.split(":", 1))
            topic = int(key, 16)
        except ValueError:
            raise ValueError(f"bad signature line {lineno}: {raw!r}") from None
        if rel not in RELATIONS:
            raise ValueError(f"bad relation on line {lineno}: {rel!r}")
        out[topic] = rel
    return out


def log_data_keys(program: SsaProgram, info: LogInfo) -> set:
    """Dataflow keys of a log's topics and of the values written into its data range."""
    keys: set = set()
    for t in info.topics[1:]:
        keys |= value_keys(program, t)
    for w in memory_feeders(program, info.op, info.data_offset, info.data_size):
        v = program.values[w]
        keys.add(w)
        if v.op in ("MSTORE", "MSTORE8"):
            keys |= value_keys(program, v.operands[1])
    return keys


class HeuristicClassifier:
    """Known topic0 signatures first, then dataflow overlap with the transfer."""

    def __init__(self, signatures: dict[int, str] | None = None):
        self.signatures = load_signatures() if signatures is None else signatures

    def classify(self, program, log_info, decomposition):
        if log_info.topic0 is not None and log_info.topic0 in self.signatures:
            return Classification(self.signatures[log_info.topic0], 1.0, "signature")
        transfer = slice_keys(program, decomposition.addr) | slice_keys(program, decomposition.value)
        if log_data_keys(program, log_info) & transfer:
            return Classification(RELATED, 0.8, "dataflow")
        if log_info.topic0 is None:
            return Classification(AMBIGUOUS, 0.0, "dynamic-topic" if log_info.topics else "anonymous")
        return Classification(UNRELATED, 0.6, "unknown-signature")


class HttpClassifier:
    """Delegates to an external service, falling back to the heuristic.

    The service receives one JSON object per log and answers with
    ``{"relation": ..., "confidence": ...}``. Answers below
    ``min_confidence`` are treated as ambiguous.
    """

    def __init__(self, url: str, fallback: HeuristicClassifier | None = None,
                 timeout: float = 5.0, min_confidence: float = 0.5):
        self.url = url
        self.fallback = fallback or HeuristicClassifier()
        self.timeout = timeout
        self.min_confidence = min_confidence
        self.degraded = False

    def _request(self, program, info: LogInfo, dec: Decomposition) -> dict:
        site = dec.site
        return {
            "log": {
                "offset": info.offset,
                "topics": len(info.topics),
                "topic0": None if info.topic0 is None else f"0x{info.topic0:064x}",
                "data_size": info.data_size,
            },
            "site": {
                "offset": site.offset,
                "opcode": site.opcode,
                "function": site.unit.name,
                "addr_ops": sorted(program.values[m].op for m in dec.addr.members),
                "value_ops": sorted(program.values[m].op for m in dec.value.members),
            },
        }

    def classify(self, program, log_info, decomposition):
        if not self.degraded:
            try:
                resp = requests.post(self.url, json=self._request(program, log_info, decomposition),
                                     timeout=self.timeout)
                resp.raise_for_status()
                body = resp.json()
                rel = body["relation"]
                conf = float(body.get("confidence", 1.0))
                if rel not in RELATIONS:
                    raise ValueError(f"unknown relation {rel!r}")
                if conf < self.min_confidence:
                    return Classification(AMBIGUOUS, conf, "low-confidence")
                return Classification(rel, conf, "external")
            except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
                log.warning("log classifier unavailable, using heuristic: %s", exc)
                self.degraded = True
        return self.fallback.classify(program, log_info, decomposition)
