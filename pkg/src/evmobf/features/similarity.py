"""Function similarity from Weisfeiler-Lehman fingerprints of dependence graphs."""

from __future__ import annotations

import hashlib
import itertools
import math
from collections import Counter
from typing import Mapping, Protocol

from ..ir.pdg import Pdg


class Embedder(Protocol):
    def embed(self, pdg: Pdg) -> Mapping[str, float]: ...


def _compress(text: str) -> str:
    return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()


def wl_fingerprint(pdg: Pdg, iterations: int = 3) -> Counter:
    """Histogram of WL labels over all refinement rounds.

    Round-0 labels are opcode categories; each round folds the sorted
    multiset of (direction, edge kind, neighbour label) into the node label.
    Constants, offsets and selectors never enter a label.
    """
    g = pdg.graph
    labels = {n: g.nodes[n]["category"] for n in g.nodes}
    hist: Counter = Counter(f"0:{lab}" for lab in labels.values())
    for rnd in range(1, iterations + 1):
        new = {}
        for n in g.nodes:
            neigh = [f">{k}:{labels[v]}" for _, v, k in g.out_edges(n, data="kind")]
            neigh += [f"<{k}:{labels[u]}" for u, _, k in g.in_edges(n, data="kind")]
            new[n] = _compress(labels[n] + "|" + ",".join(sorted(neigh)))
        labels = new
        hist.update(f"{rnd}:{lab}" for lab in labels.values())
    return hist


class WLEmbedder:
    def __init__(self, iterations: int = 3):
        self.iterations = iterations

    def embed(self, pdg: Pdg) -> Mapping[str, float]:
        return wl_fingerprint(pdg, self.iterations)


def cosine(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    if len(a) > len(b):
        a, b = b, a
    dot = sum(w * b.get(k, 0.0) for k, w in a.items())
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return min(1.0, dot / (na * nb))


def f6_similarity(pdgs: list[Pdg], embedder: Embedder | None = None) -> float:
    """Max pairwise cosine similarity of the functions' embeddings, in percent.

    Fewer than two functions give 0.
    """
    embedder = embedder or WLEmbedder()
    vecs = [embedder.embed(p) for p in pdgs]
    best = 0.0
    for a, b in itertools.combinations(vecs, 2):
        best = max(best, cosine(a, b))
    return round(100.0 * best, 9)
