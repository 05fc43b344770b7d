from __future__ import annotations

from dataclasses import dataclass, field

from ..ir import identify_functions, lift
from ..ir.functions import FunctionUnit
from ..ir.pdg import Pdg, build_pdg
from ..ir.program import SsaProgram
from ..transfer import Decomposition, TransferSite, decompose, find_transfer_sites
from .counting import (f1_address_steps, f2_string_ops, f3_external_call, f4_branch_height,
                       f5_tir)
from .logs import AMBIGUOUS, HEURISTIC_ONLY, UNRELATED, Classification, HeuristicClassifier, LogClassifier
from .similarity import Embedder, WLEmbedder, f6_similarity
from .vector import FeatureVector


@dataclass
class AnalysisConfig:
    sload_steps: bool = True
    selfdestruct_sites: bool = True
    wl_iterations: int = 3
    embedder: Embedder | None = None
    classifier: LogClassifier | None = None


@dataclass(frozen=True)
class SiteFeatures:
    site: TransferSite
    f1: int
    f2: int
    f3: int
    f4: int
    f7: int
    logs: tuple[tuple[int, Classification], ...]
    flags: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        d = self.site.to_dict()
        d.update(f1=self.f1, f2=self.f2, f3=self.f3, f4=self.f4, f7=self.f7)
        d["flags"] = sorted(set(d["flags"]) | self.flags)
        return d


@dataclass(frozen=True)
class ContractAnalysis:
    program: SsaProgram
    units: list[FunctionUnit]
    sites: list[TransferSite]
    decompositions: list[Decomposition]
    site_features: list[SiteFeatures]
    unit_tir: dict[str, float]
    vector: FeatureVector
    review: list[dict] = field(default_factory=list)


def _site_features(program, dec: Decomposition, config: AnalysisConfig,
                   classifier: LogClassifier, review: list[dict]) -> SiteFeatures:
    site = dec.site
    flags: set[str] = set()
    f4, floor = f4_branch_height(program, dec)
    if floor:
        flags.add("f4-floor")
    results = []
    f7 = 0
    for info in dec.logs:
        c = classifier.classify(program, info, dec)
        results.append((info.offset, c))
        if c.relation == UNRELATED:
            f7 = 1
        elif c.relation == AMBIGUOUS:
            review.append({
                "site_offset": site.offset,
                "log_offset": info.offset,
                "topic0": None if info.topic0 is None else f"0x{info.topic0:064x}",
                "reason": c.reason,
                "confidence": c.confidence,
            })
    return SiteFeatures(
        site,
        f1_address_steps(program, dec.addr, config.sload_steps),
        f2_string_ops(program, dec.addr),
        f3_external_call(program, dec.addr, dec.value),
        f4, f7, tuple(results), frozenset(flags))


def analyze_program(program: SsaProgram, config: AnalysisConfig | None = None) -> ContractAnalysis:
    """Run site discovery and every feature over an already lifted program.

    Per-site counts aggregate by max, the instruction ratio by min over the
    transfer-bearing units; a contract without sites yields the flagged zero
    vector.
    """
    config = config or AnalysisConfig()
    classifier = config.classifier or HeuristicClassifier()
    embedder = config.embedder or WLEmbedder(config.wl_iterations)
    units = identify_functions(program)
    sites = find_transfer_sites(program, units, config.selfdestruct_sites)
    flags = set(program.flags)
    for u in units:
        flags |= u.flags
    if not sites:
        vec = FeatureVector.no_transfer(flags)
        return ContractAnalysis(program, units, [], [], [], {}, vec)

    decs = [decompose(program, s) for s in sites]
    review: list[dict] = []
    per_site = [_site_features(program, d, config, classifier, review) for d in decs]
    for sf in per_site:
        flags |= sf.flags | sf.site.flags
    if getattr(classifier, "degraded", False):
        flags.add(HEURISTIC_ONLY)

    pdgs: dict[FunctionUnit, Pdg] = {}
    tir: dict[str, float] = {}
    for u in units:
        mine = [d for d in decs if u in d.site.units]
        if not mine:
            continue
        pdgs[u] = build_pdg(program, u)
        tir[u.name] = f5_tir(program, pdgs[u], mine)
    f6 = f6_similarity(list(pdgs.values()), embedder) if len(pdgs) > 1 else 0.0

    vec = FeatureVector(
        max(s.f1 for s in per_site),
        max(s.f2 for s in per_site),
        max(s.f3 for s in per_site),
        max(s.f4 for s in per_site),
        min(tir.values()),
        f6,
        max(s.f7 for s in per_site),
        len(sites),
        frozenset(flags),
    )
    return ContractAnalysis(program, units, sites, decs, per_site, tir, vec, review)


def analyze(code, config: AnalysisConfig | None = None) -> ContractAnalysis:
    """Lift raw bytecode (hex or bytes) and analyze it."""
    return analyze_program(lift(code), config)


def extract_features(program: SsaProgram, config: AnalysisConfig | None = None) -> FeatureVector:
    return analyze_program(program, config).vector
