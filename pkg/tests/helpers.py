"""Shared test utilities: fixture loading, synthetic contracts, a mock JSON-RPC node."""

from __future__ import annotations

import json
import random
import threading
from contextlib import contextmanager
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import yaml

from evmobf.asm import assemble

FIXTURE_DIR = Path(__file__).parent / "fixtures"

IDIOM_TAIL = """
PUSH1 0x00
PUSH1 0x00
PUSH1 0x00
PUSH1 0x00
{value}
{addr}
PUSH2 0x08fc
CALL
POP
STOP
"""


def load_fixtures() -> dict:
    out = {}
    for f in sorted(FIXTURE_DIR.glob("*.yaml")):
        doc = yaml.safe_load(f.read_text())
        doc["code"] = assemble(doc["asm"])
        out[doc["name"]] = doc
    return out


def expected_tir(text) -> Fraction:
    return Fraction(str(text))


def guarded(body: str, depth: int, tag: str = "g") -> str:
    """Wrap ``body`` in ``depth`` nested ifs on calldata words."""
    head = [f"PUSH 0x{4 + 32 * i:x}\nCALLDATALOAD\nPUSH @{tag}{i}\nJUMPI\nSTOP\n{tag}{i}:"
            for i in range(depth)]
    return "\n".join(head) + "\n" + body


def synthetic_contract(rng: random.Random) -> bytes:
    """A random fallback-only transfer contract mixing the taxonomy shapes."""
    kind = rng.randrange(6)
    if kind == 0:
        addr = f"PUSH20 0x{rng.getrandbits(160):040x}"
    elif kind == 1:
        addr = (f"PUSH1 0x{rng.randrange(256):02x}\nSLOAD\n"
                "PUSH20 0xffffffffffffffffffffffffffffffffffffffff\nAND")
    elif kind == 2:
        addr = (f"PUSH4 0x{rng.getrandbits(32):08x}\nPUSH1 0x00\nMSTORE\nPUSH1 0x20\nPUSH1 0x00\n"
                "KECCAK256\nPUSH1 0x60\nSHR")
    elif kind == 3:
        addr = (f"PUSH1 0x{rng.randrange(1, 256):02x}\nPUSH1 0x{rng.randrange(1, 256):02x}\nADD\n"
                f"PUSH1 0x{rng.randrange(1, 256):02x}\nMUL\nCALLER\nXOR")
    elif kind == 4:
        addr = ("PUSH1 0x20\nPUSH1 0x00\nPUSH1 0x00\nPUSH1 0x00\n"
                f"PUSH20 0x{rng.getrandbits(160):040x}\nGAS\nSTATICCALL\nPOP\nPUSH1 0x00\nMLOAD")
    else:
        addr = "CALLER"
    value = f"PUSH2 0x{rng.randrange(1, 1 << 16):04x}" if rng.random() < 0.8 else "CALLVALUE"
    junk = "\n".join(f"PUSH1 0x{rng.randrange(256):02x}\nPUSH1 0x{rng.randrange(256):02x}\nADD\nPOP"
                     for _ in range(rng.randrange(4)))
    log = ""
    if rng.random() < 0.3:
        log = f"PUSH32 0x{rng.getrandbits(256):064x}\nPUSH1 0x00\nPUSH1 0x00\nLOG1"
    # addr is computed first, so it sits below the four zero pushes and the value.
    body = "\n".join(x for x in (junk, log, addr) if x) + IDIOM_TAIL.format(value=value, addr="DUP6")
    return assemble(guarded(body, rng.randrange(4)))


def synthetic_corpus(n: int, seed: int = 7) -> list[tuple[str, bytes]]:
    rng = random.Random(seed)
    out = []
    seen = set()
    while len(out) < n:
        code = synthetic_contract(rng)
        if code in seen:
            continue
        seen.add(code)
        out.append((f"c{len(out):05d}", code))
    return out


def slow_contract(blocks: int = 1500) -> bytes:
    """Many chained branches: cheap to build, slow to analyze."""
    body = IDIOM_TAIL.format(value="PUSH1 0x01", addr="CALLER")
    return assemble(guarded(body, blocks))


class RpcState:
    def __init__(self, codes: dict[str, str] | None = None, fail_first: int = 0,
                 fail_status: int = 503, error: dict | None = None):
        self.codes = {k.lower(): v for k, v in (codes or {}).items()}
        self.fail_first = fail_first
        self.fail_status = fail_status
        self.error = error
        self.requests: list[dict] = []
        self.lock = threading.Lock()


def _handler(state: RpcState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            with state.lock:
                state.requests.append(body)
                failing = state.fail_first > 0
                if failing:
                    state.fail_first -= 1
            if failing:
                self.send_response(state.fail_status)
                self.end_headers()
                return
            if state.error is not None:
                reply = {"jsonrpc": "2.0", "id": body["id"], "error": state.error}
            else:
                addr = body["params"][0].lower()
                reply = {"jsonrpc": "2.0", "id": body["id"], "result": state.codes.get(addr, "0x")}
            data = json.dumps(reply).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler


@contextmanager
def rpc_server(state: RpcState):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _handler(state))
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()


@contextmanager
def json_server(responder):
    """Serve POSTs with ``responder(body) -> (status, dict)``."""
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            status, reply = responder(body)
            data = json.dumps(reply).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()


_BIASED = [0x5B, 0x56, 0x57, 0x60, 0x61, 0x80, 0x81, 0x90, 0x91, 0x01, 0x14, 0x15, 0x35, 0xF1,
           0x55, 0x54, 0x52, 0x51, 0xA1, 0x00, 0x5F, 0x50, 0x20, 0x16]


def random_bytecode(rng: random.Random, max_len: int = 300) -> bytes:
    """Uniform bytes or a jump/stack-heavy mix, alternating by coin flip."""
    n = rng.randrange(max_len + 1)
    if rng.random() < 0.5:
        return bytes(rng.randrange(256) for _ in range(n))
    return bytes(rng.choice(_BIASED) if rng.random() < 0.85 else rng.randrange(256) for _ in range(n))
