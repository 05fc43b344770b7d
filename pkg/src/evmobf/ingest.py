"""Corpus loading, bytecode fetching, batch analysis and report files."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import signal
import tempfile
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

import requests
from Crypto.Hash import keccak

from .bytecode import as_bytes
from .features import AnalysisConfig, FeatureVector, analyze
from .features.vector import FEATURES

log = logging.getLogger(__name__)

PIPELINE_VERSION = "0.1.0"
RPC_ENV = "EVM_RPC_URL"
DEFAULT_BUDGET = 20.0
TIMEOUT = "timeout"
ERROR = "error"
CSV_HEADER = ["id", *FEATURES, "z", "flags"]

_ADDRESS = re.compile(r"^0x[0-9a-fA-F]{40}$")


def code_digest(code: bytes) -> str:
    h = keccak.new(digest_bits=256)
    h.update(code)
    return "0x" + h.hexdigest()


def parse_timestamp(value) -> datetime | None:
    if value is None or value == "":
        return None
    if isinstance(value, (int, float)):
        return datetime.fromtimestamp(value, tz=timezone.utc)
    ts = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    bytecode: bytes
    created_at: datetime | None = None
    source: str = "file"


@dataclass
class LoadStats:
    loaded: int = 0
    duplicates: int = 0
    malformed: int = 0
    unreadable: int = 0


def _entry_id(raw_id, code: bytes) -> str:
    if raw_id:
        s = str(raw_id).strip()
        return s.lower() if _ADDRESS.match(s) else s
    return code_digest(code)


def load_corpus(path, fmt: str | None = None, stats: LoadStats | None = None) -> Iterator[CorpusEntry]:
    """Stream entries from a directory of ``<id>.hex`` files or a jsonl file.

    Later entries repeating an id are skipped; malformed lines and
    unreadable files are counted in ``stats`` and skipped.
    """
    stats = stats if stats is not None else LoadStats()
    path = Path(path)
    fmt = fmt or ("hex-dir" if path.is_dir() else "jsonl")
    seen: set[str] = set()

    def emit(entry: CorpusEntry):
        if entry.id in seen:
            stats.duplicates += 1
            log.warning("duplicate id %s skipped", entry.id)
            return None
        seen.add(entry.id)
        stats.loaded += 1
        return entry

    if fmt == "hex-dir":
        for f in sorted(path.glob("*.hex")):
            try:
                code = as_bytes(f.read_text().strip())
            except (OSError, ValueError) as exc:
                stats.unreadable += 1
                log.warning("cannot read %s: %s", f, exc)
                continue
            e = emit(CorpusEntry(_entry_id(f.stem, code), code, None, "file"))
            if e is not None:
                yield e
    elif fmt == "jsonl":
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    code = as_bytes(obj["bytecode"])
                    entry = CorpusEntry(_entry_id(obj.get("id"), code), code,
                                        parse_timestamp(obj.get("created_at")), obj.get("source", "file"))
                except (ValueError, KeyError, TypeError) as exc:
                    stats.malformed += 1
                    log.warning("%s:%d malformed entry: %s", path, lineno, exc)
                    continue
                e = emit(entry)
                if e is not None:
                    yield e
    else:
        raise ValueError(f"unknown corpus format {fmt!r}")


class RpcError(RuntimeError):
    def __init__(self, code, message):
        super().__init__(f"rpc error {code}: {message}")
        self.code = code
        self.message = message


class TransportError(RuntimeError):
    pass


def validate_address(address: str) -> str:
    if not isinstance(address, str) or not _ADDRESS.match(address):
        raise ValueError(f"invalid address {address!r}")
    return address.lower()


def fetch_code(endpoint: str | None, address: str, block_tag: str = "latest", *,
               attempts: int = 3, backoff: float = 0.5, timeout: float = 10.0,
               session: requests.Session | None = None) -> bytes:
    """Runtime code at ``address``; empty bytes for accounts without code."""
    address = validate_address(address)
    endpoint = endpoint or os.environ.get(RPC_ENV)
    if not endpoint:
        raise ValueError(f"no endpoint given and {RPC_ENV} is unset")
    http = session or requests
    payload = {"jsonrpc": "2.0", "id": 1, "method": "eth_getCode", "params": [address, block_tag]}
    last: Exception | None = None
    for attempt in range(attempts):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = http.post(endpoint, json=payload, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = exc
            continue
        if resp.status_code >= 500 or resp.status_code == 429:
            last = TransportError(f"HTTP {resp.status_code}")
            continue
        resp.raise_for_status()
        body = resp.json()
        if body.get("error"):
            err = body["error"]
            raise RpcError(err.get("code"), err.get("message"))
        return as_bytes(body.get("result") or "0x")
    raise TransportError(f"{endpoint}: giving up after {attempts} attempts: {last}")


@dataclass
class AnalysisRecord:
    id: str
    vector: FeatureVector | None
    z: float | None = None
    flags: frozenset[str] = frozenset()
    duration: float = 0.0
    version: str = PIPELINE_VERSION
    error: str | None = None
    sites: list[dict] = field(default_factory=list)
    review: list[dict] = field(default_factory=list)
    created_at: datetime | None = None

    @property
    def all_flags(self) -> frozenset[str]:
        vf = self.vector.flags if self.vector is not None else frozenset()
        return self.flags | vf

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "features": None if self.vector is None else self.vector.to_dict(),
            "z": self.z,
            "flags": sorted(self.flags),
            "duration": self.duration,
            "version": self.version,
            "error": self.error,
            "sites": self.sites,
            "review": self.review,
            "created_at": None if self.created_at is None else self.created_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisRecord":
        feats = d.get("features")
        return cls(d["id"], None if feats is None else FeatureVector.from_dict(feats), d.get("z"),
                   frozenset(d.get("flags", ())), float(d.get("duration", 0.0)),
                   d.get("version", PIPELINE_VERSION), d.get("error"), list(d.get("sites", [])),
                   list(d.get("review", [])), parse_timestamp(d.get("created_at")))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def csv_row(rec: AnalysisRecord) -> list[str]:
    vals = ["" for _ in FEATURES] if rec.vector is None else [_fmt(v) for v in rec.vector.values()]
    return [rec.id, *vals, "" if rec.z is None else repr(float(rec.z)), ";".join(sorted(rec.all_flags))]


def write_reports(records: Iterable[AnalysisRecord], path, fmt: str = "jsonl") -> int:
    """Write records atomically; returns the number written."""
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    count = 0
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_HEADER)
                for rec in records:
                    w.writerow(csv_row(rec))
                    count += 1
            else:
                for rec in records:
                    fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
                    count += 1
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return count


def _parse_flags(s: str) -> frozenset[str]:
    return frozenset(f for f in s.split(";") if f)


def read_reports(path, fmt: str | None = None) -> Iterator[AnalysisRecord]:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "jsonl")
    with open(path, newline="") as fh:
        if fmt == "jsonl":
            for line in fh:
                if line.strip():
                    yield AnalysisRecord.from_dict(json.loads(line))
            return
        for row in csv.DictReader(fh):
            flags = _parse_flags(row.get("flags", ""))
            vec = None
            if all(row.get(f, "") != "" for f in FEATURES):
                vec = FeatureVector.from_values([float(row[f]) for f in FEATURES], flags=flags)
            z = row.get("z", "")
            yield AnalysisRecord(row["id"], vec, float(z) if z != "" else None, flags)


class BudgetExceeded(Exception):
    pass


def _on_alarm(signum, frame):
    raise BudgetExceeded()


def analyze_entry(entry: CorpusEntry, config: AnalysisConfig | None = None,
                  budget: float | None = DEFAULT_BUDGET) -> AnalysisRecord:
    """Analyze one contract, never raising; failures become flagged records.

    The budget is enforced with an interval timer, so it only applies when
    running on a process's main thread.
    """
    timed = bool(budget) and threading.current_thread() is threading.main_thread()
    start = time.perf_counter()
    old = None
    if timed:
        old = signal.signal(signal.SIGALRM, _on_alarm)
        # Keep re-firing: a raise landing in a gc callback or __del__ is swallowed.
        signal.setitimer(signal.ITIMER_REAL, budget, min(budget, 0.05))
    try:
        res = analyze(entry.bytecode, config)
        sites = [sf.to_dict() for sf in res.site_features]
        return AnalysisRecord(entry.id, res.vector, None, frozenset(), time.perf_counter() - start,
                              PIPELINE_VERSION, None, sites, res.review, entry.created_at)
    except BudgetExceeded:
        return AnalysisRecord(entry.id, None, None, frozenset({TIMEOUT}), time.perf_counter() - start,
                              PIPELINE_VERSION, f"budget of {budget}s exceeded", created_at=entry.created_at)
    except Exception as exc:  # noqa: BLE001
        return AnalysisRecord(entry.id, None, None, frozenset({ERROR}), time.perf_counter() - start,
                              PIPELINE_VERSION, f"{type(exc).__name__}: {exc}", created_at=entry.created_at)
    finally:
        if timed:
            signal.setitimer(signal.ITIMER_REAL, 0)
            signal.signal(signal.SIGALRM, old)


@dataclass
class BatchSummary:
    total: int = 0
    ok: int = 0
    timed_out: int = 0
    rerun_ok: int = 0
    failed: int = 0
    seconds: float = 0.0

    @property
    def throughput(self) -> float:
        return self.total / self.seconds if self.seconds > 0 else 0.0


def _windows(it: Iterable, size: int):
    buf = []
    for x in it:
        buf.append(x)
        if len(buf) == size:
            yield buf
            buf = []
    if buf:
        yield buf


def run_batch(entries: Iterable[CorpusEntry], config: AnalysisConfig | None = None,
              workers: int = 1, budget: float | None = DEFAULT_BUDGET,
              summary: BatchSummary | None = None, window: int | None = None) -> Iterator[AnalysisRecord]:
    """Analyze entries in input order with a bounded number in flight.

    Contracts that exceed the budget are rerun without it before their
    window is released, so every record reaches the output exactly once.
    """
    summary = summary if summary is not None else BatchSummary()
    start = time.perf_counter()
    window = window or max(1, workers) * 8
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for chunk in _windows(entries, window):
            if pool is None:
                first = [analyze_entry(e, config, budget) for e in chunk]
            else:
                first = list(pool.map(analyze_entry, chunk, [config] * len(chunk), [budget] * len(chunk)))
            redo = [i for i, r in enumerate(first) if TIMEOUT in r.flags]
            summary.timed_out += len(redo)
            if redo:
                again = [chunk[i] for i in redo]
                if pool is None:
                    second = [analyze_entry(e, config, None) for e in again]
                else:
                    second = list(pool.map(analyze_entry, again, [config] * len(again), [None] * len(again)))
                for i, rec in zip(redo, second):
                    rec.flags = rec.flags | {"rerun"}
                    rec.duration += first[i].duration
                    first[i] = rec
                    if rec.error is None:
                        summary.rerun_ok += 1
            for rec in first:
                summary.total += 1
                if rec.error is None:
                    summary.ok += 1
                else:
                    summary.failed += 1
                summary.seconds = time.perf_counter() - start
                yield rec
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
        summary.seconds = time.perf_counter() - start


def write_corpus_entry(out: Path, entry: CorpusEntry, fmt: str, fh: io.TextIOBase | None = None) -> None:
    """Append one entry to a hex dir (one file each) or an open jsonl handle."""
    if fmt == "hex-dir":
        (out / f"{entry.id}.hex").write_text("0x" + entry.bytecode.hex() + "\n")
    else:
        assert fh is not None
        obj = {"id": entry.id, "bytecode": "0x" + entry.bytecode.hex(), "source": entry.source}
        if entry.created_at is not None:
            obj["created_at"] = entry.created_at.isoformat()
        fh.write(json.dumps(obj, sort_keys=True) + "\n")
