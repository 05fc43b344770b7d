"""Command-line entry point."""

from __future__ import annotations

import argparse
import heapq
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import eval as ev
from . import scoring
from .bytecode import DecodeError, as_bytes, decode, disassemble
from .features import AnalysisConfig, HeuristicClassifier, HttpClassifier, analyze
from .features.vector import FEATURES
from .ingest import (DEFAULT_BUDGET, AnalysisRecord, BatchSummary, CorpusEntry, LoadStats,
                     TransportError, fetch_code, load_corpus, read_reports, run_batch,
                     validate_address, write_corpus_entry, write_reports)

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
DEFAULT_CUTOFF = 4.637
PARTIAL_FLAGS = frozenset({"incomplete"})

log = logging.getLogger("evmobf")


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    args: argparse.Namespace

    def analysis(self) -> AnalysisConfig:
        a = self.args
        spec = getattr(a, "f7_classifier", "heuristic")
        if spec == "heuristic":
            classifier = HeuristicClassifier()
        elif spec.startswith("external:"):
            classifier = HttpClassifier(spec.split(":", 1)[1])
        else:
            raise CliError(f"unknown classifier {spec!r}")
        return AnalysisConfig(sload_steps=getattr(a, "sload_steps", "on") == "on",
                              selfdestruct_sites=getattr(a, "selfdestruct_sites", "on") == "on",
                              classifier=classifier)


def _read_code(a) -> bytes:
    if a.hex:
        return as_bytes(a.hex)
    if a.input in (None, "-"):
        return as_bytes(sys.stdin.read().strip())
    try:
        text = Path(a.input).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {a.input}: {exc}") from exc
    return as_bytes(text.strip())


def _load_stats(path) -> scoring.CorpusStats:
    if not path:
        raise CliError("a stats snapshot is required (--stats)")
    try:
        return scoring.CorpusStats.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load stats snapshot {path}: {exc}") from exc


def cmd_analyze(cfg: RunConfig) -> int:
    a = cfg.args
    code = _read_code(a)
    res = analyze(code, cfg.analysis())
    vec = res.vector
    scored = None
    if a.stats:
        scored = scoring.score("input", vec, _load_stats(a.stats)) if vec.has_transfer else None
    if a.review and res.review:
        with open(a.review, "a") as fh:
            for item in res.review:
                fh.write(json.dumps({"id": "input", **item}, sort_keys=True) + "\n")
    if a.format == "json":
        doc = {"features": vec.to_dict(), "sites": [s.to_dict() for s in res.site_features],
               "functions": [{"name": u.name, "blocks": len(u.blocks), "flags": sorted(u.flags)}
                             for u in res.units],
               "tir": res.unit_tir, "review": res.review}
        if scored is not None:
            doc["z"] = scored.z
            doc["terms"] = dict(zip(FEATURES, scored.terms))
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"code: {len(code)} bytes, {len(res.program.blocks)} blocks, "
              f"{len(res.units)} function(s), {len(res.sites)} transfer site(s)")
        for sf in res.site_features:
            s = sf.site
            d = res.decompositions[res.sites.index(s)]
            print(f"site @0x{s.offset:04x} {s.opcode} in {s.unit.name}: addr ops={len(d.addr)} "
                  f"value ops={len(d.value)} guards={len(s.guard_chain)} logs={len(d.logs)} "
                  f"f1={sf.f1} f2={sf.f2} f3={sf.f3} f4={sf.f4} f7={sf.f7}"
                  + (f" [{','.join(sorted(s.flags | sf.flags))}]" if s.flags | sf.flags else ""))
        for name, v in zip(FEATURES, vec.values()):
            line = f"{name}={v:g}"
            if scored is not None:
                line += f"  z_{name[1:]}={scored.terms[FEATURES.index(name)]:+.3f}"
            print(line)
        if scored is not None:
            print(f"z={scored.z:.4f}")
        print(f"flags: {','.join(sorted(vec.flags)) or '-'}")
    return EXIT_PARTIAL if vec.flags & PARTIAL_FLAGS else EXIT_OK


def cmd_disasm(cfg: RunConfig) -> int:
    print(disassemble(decode(_read_code(cfg.args))))
    return EXIT_OK


def cmd_ir(cfg: RunConfig) -> int:
    from .ir import build_pdg, identify_functions, lift
    from .ir.dump import cfg_dot, pdg_dot, ssa_listing
    prog = lift(_read_code(cfg.args))
    kind = cfg.args.dump
    if kind == "ssa":
        print(ssa_listing(prog))
    elif kind == "cfg":
        print(cfg_dot(prog))
    else:
        for u in identify_functions(prog):
            print(pdg_dot(prog, build_pdg(prog, u)))
    return EXIT_OK


def cmd_batch(cfg: RunConfig) -> int:
    a = cfg.args
    load = LoadStats()
    summary = BatchSummary()
    entries = load_corpus(a.corpus, a.corpus_format, load)
    stats = _load_stats(a.stats) if a.stats else None
    review_fh = open(a.review, "w") if a.review else None

    def records():
        for rec in run_batch(entries, cfg.analysis(), a.workers, a.budget_secs or None, summary):
            if stats is not None and rec.vector is not None and rec.vector.has_transfer:
                rec.z = scoring.z_score(rec.vector, stats)
            if review_fh is not None:
                for item in rec.review:
                    review_fh.write(json.dumps({"id": rec.id, **item}, sort_keys=True) + "\n")
            yield rec

    try:
        n = write_reports(records(), a.out, a.format if a.format != "text" else "jsonl")
    finally:
        if review_fh is not None:
            review_fh.close()
    print(f"records={n} ok={summary.ok} failed={summary.failed} timed_out={summary.timed_out} "
          f"rerun_ok={summary.rerun_ok} duplicates={load.duplicates} malformed={load.malformed} "
          f"unreadable={load.unreadable}", file=sys.stderr)
    print(f"throughput={summary.throughput:.2f} contracts/s elapsed={summary.seconds:.2f}s",
          file=sys.stderr)
    return EXIT_PARTIAL if summary.failed or load.malformed or load.unreadable else EXIT_OK


def _records(paths) -> list[AnalysisRecord]:
    out = []
    for p in paths:
        try:
            out.extend(read_reports(p))
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot read records {p}: {exc}") from exc
    return out


def _usable(rec: AnalysisRecord) -> bool:
    return rec.vector is not None and rec.vector.has_transfer


def cmd_stats(cfg: RunConfig) -> int:
    a = cfg.args
    total = scoring.CorpusStats()
    skipped = 0
    for path in a.corpus:
        shard = scoring.CorpusStats()
        for rec in _records([path]):
            if _usable(rec):
                shard.add(rec.vector)
            else:
                skipped += 1
        total = total.merge(shard)
    if total.n < 2:
        raise CliError(f"need at least 2 contracts with transfers, have {total.n}")
    doc = total.to_json()
    if a.out:
        Path(a.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(f"n={total.n} excluded={skipped} snapshot={doc['snapshot_id']}")
    for name, mu, sd in zip(FEATURES, doc["mu"], doc["sigma"]):
        print(f"{name} mu={mu:.6g} sigma={sd:.6g}")
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    a = cfg.args
    stats = _load_stats(a.stats)
    degenerate = 0

    def scored():
        nonlocal degenerate
        for rec in _records(a.corpus):
            if _usable(rec):
                terms, deg = scoring.z_terms(rec.vector, stats)
                rec.z = float(sum(terms))
                if deg:
                    rec.flags = rec.flags | {scoring.DEGENERATE_SIGMA}
                    degenerate += 1
            else:
                rec.z = None
            yield rec

    fmt = a.format if a.format in ("csv", "jsonl") else "csv"
    n = write_reports(scored(), a.out, fmt)
    print(f"scored={n} degenerate={degenerate} snapshot={stats.snapshot_id}", file=sys.stderr)
    return EXIT_OK


def _cutoff(a) -> float:
    if a.cutoff is not None:
        return a.cutoff
    if a.confidence is not None:
        if not a.baseline:
            raise CliError("--confidence needs --baseline scores to derive the cutoff from")
        base = [r.z for r in _records([a.baseline]) if r.z is not None]
        if len(base) < 2:
            raise CliError("baseline needs at least 2 scored contracts")
        return scoring.threshold(float(np.mean(base)), float(np.std(base, ddof=1)), len(base), a.confidence)
    return DEFAULT_CUTOFF


def cmd_rank(cfg: RunConfig) -> int:
    a = cfg.args
    cutoff = _cutoff(a)
    stats = _load_stats(a.stats) if a.stats else None
    ids: list[str] = []
    zs: list[float] = []
    rows: list[np.ndarray] = []
    no_transfer = 0
    for rec in _records(a.corpus):
        if rec.vector is not None and not rec.vector.has_transfer or "no-transfer" in rec.flags:
            no_transfer += 1
            continue
        z = rec.z
        if z is None and stats is not None and rec.vector is not None:
            z = scoring.z_score(rec.vector, stats)
        if z is None:
            continue
        ids.append(rec.id)
        zs.append(z)
        if rec.vector is not None:
            rows.append(np.asarray(rec.vector.values(), dtype=float))
    if not zs:
        raise CliError("no scored contracts in input")
    order = heapq.nsmallest(a.k, range(len(zs)), key=lambda i: (-zs[i], ids[i]))
    prev = scoring.prevalence(zs, cutoff)
    z_arr = np.asarray(zs)
    out = {
        "cutoff": cutoff,
        "contracts": len(zs),
        "no_transfer": no_transfer,
        "z": {"min": float(z_arr.min()), "median": float(np.median(z_arr)), "max": float(z_arr.max())},
        "prevalence": {"above": prev.above, "below": prev.below, "pct": prev.percent},
        "top": [{"rank": r + 1, "id": ids[i], "z": zs[i]} for r, i in enumerate(order)],
    }
    matrix = np.vstack(rows) if len(rows) == len(zs) else None
    if matrix is not None:
        top = matrix[order]
        nz = (top > 0).sum(axis=1) if len(top) else np.zeros(0)
        top_z = z_arr[order]
        edges = [cutoff, 10.0, 20.0, 30.0, np.inf]
        out["top_summary"] = {
            "k": len(order),
            "z_min": float(top_z.min()) if len(top_z) else None,
            "z_median": float(np.median(top_z)) if len(top_z) else None,
            "z_max": float(top_z.max()) if len(top_z) else None,
            "ge2_features_pct": float(100 * np.mean(nz >= 2)) if len(nz) else 0.0,
            "ge3_features_pct": float(100 * np.mean(nz >= 3)) if len(nz) else 0.0,
            "bins": [{"lo": lo, "hi": None if hi == np.inf else hi,
                      "count": int(np.sum((top_z >= lo) & (top_z < hi)))}
                     for lo, hi in zip(edges, edges[1:]) if lo < hi],
        }
        out["quantiles"] = [q.__dict__ for q in scoring.feature_quantiles(matrix)]
        share_stats = stats or (scoring.CorpusStats.from_matrix(matrix) if len(matrix) > 1 else None)
        if share_stats is not None:
            out["shares"] = dict(zip(FEATURES, (float(s) for s in
                                                scoring.contribution_shares(matrix, share_stats))))
    if a.figures:
        from . import plotting
        plotting.z_histogram(z_arr, cutoff, Path(a.figures) / "z_histogram.png")
        if a.timestamps:
            _monthly_figure(a, Path(a.figures) / "monthly_trend.png", stats)
    if a.out:
        Path(a.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    if a.format == "json":
        print(json.dumps(out, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"contracts={len(zs)} no_transfer={no_transfer} cutoff={cutoff:.4f}")
    print(f"z min={out['z']['min']:.4f} median={out['z']['median']:.4f} max={out['z']['max']:.4f}")
    print(f"above={prev.above} below={prev.below} pct={prev.percent:.2f}")
    print(f"prevalence: {prev.percent:.2f}% above cutoff")
    if "top_summary" in out:
        t = out["top_summary"]
        if t["k"]:
            print(f"top{t['k']}: z min={t['z_min']:.4f} median={t['z_median']:.4f} max={t['z_max']:.4f} "
                  f">=2 features={t['ge2_features_pct']:.2f}% >=3 features={t['ge3_features_pct']:.2f}%")
            for b in t["bins"]:
                hi = "inf" if b["hi"] is None else f"{b['hi']:g}"
                print(f"  z in [{b['lo']:g}, {hi}): {b['count']}")
        for q in out["quantiles"]:
            print(f"{q['feature']} P>0={q['nonzero_pct']:.2f}% median={q['median']:g} "
                  f"p90={q['p90']:g} p99={q['p99']:g}")
        if "shares" in out:
            print("shares: " + " ".join(f"{k}={v:.2f}%" for k, v in out["shares"].items()))
    for item in out["top"]:
        print(f"{item['rank']:>6} {item['id']} {item['z']:.4f}")
    return EXIT_OK


def _monthly_figure(a, path, stats):
    from . import plotting
    ts = {}
    for e in load_corpus(a.timestamps):
        if e.created_at is not None:
            ts[e.id] = e.created_at
    recs = [r for r in _records(a.corpus) if r.id in ts and _usable(r)]
    if stats is None and len(recs) > 1:
        stats = scoring.corpus_stats(r.vector for r in recs)
    rows = []
    for r in recs:
        z = r.z if r.z is not None else scoring.z_score(r.vector, stats)
        rows.append((scoring.ScoredContract(r.id, r.vector, z, ()), ts[r.id]))
    if rows:
        plotting.monthly_trend(scoring.monthly_aggregate(rows), path)


def cmd_eval(cfg: RunConfig) -> int:
    a = cfg.args
    try:
        data = ev.LabeledSet.load_csv(a.corpus[0])
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read labeled set: {exc}") from exc
    if len(np.unique(data.y)) != 2:
        raise CliError("labeled set must contain both classes")
    stats = _load_stats(a.stats) if a.stats else scoring.CorpusStats.from_matrix(data.x)
    z = np.array([scoring.z_score(row, stats) for row in data.x])
    neg, pos = z[data.y == 0], z[data.y == 1]
    if a.cutoff is not None:
        cutoff = a.cutoff
    else:
        if len(neg) < 2:
            raise CliError("need at least 2 negatives to derive the cutoff")
        cutoff = scoring.threshold(float(neg.mean()), float(neg.std(ddof=1)), len(neg), a.confidence or 0.95)
    det = ev.detection_report(data.y, z, cutoff)
    cv = ev.logistic_cv(data, a.folds, a.seed)
    drops = ev.drop_column(data, a.folds, a.seed)
    k = min(a.k, len(z))
    overlap = {name: ev.ranking_overlap(ev.column_z(data.x), ev.ablated_scores(data.x, i), k, list(data.ids))
               for i, name in enumerate(FEATURES)}
    doc = {
        "seed": a.seed,
        "experiments": {
            "z_cutoff": {"cutoff": cutoff, "negatives": {"n": int(len(neg)), "mean": float(neg.mean()),
                                                          "std": float(neg.std(ddof=1)) if len(neg) > 1 else 0.0},
                         **det.to_dict()},
            "welch": scoring.welch_t(neg, pos).__dict__ if len(neg) > 1 and len(pos) > 1 else None,
            "logistic_cv": {"folds": a.folds, **cv.report.to_dict()},
            "drop_column": [r.__dict__ for r in drops],
            "ranking_overlap": {"k": k, "overlap": overlap},
        },
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    if a.figures:
        from . import plotting
        plotting.roc_pr_curves(data.y, z, Path(a.figures) / "z_cutoff_curves.png", "Z-score")
        plotting.roc_pr_curves(data.y, cv.probabilities, Path(a.figures) / "logistic_curves.png", "logistic")
        plotting.drop_column_bars(drops, Path(a.figures) / "drop_column.png")
    if a.format == "json" or not a.out:
        sys.stdout.write(text)
    else:
        print(f"cutoff={cutoff:.4f} precision={det.precision:.4f} recall={det.recall:.4f} f1={det.f1:.4f} "
              f"roc_auc={det.roc_auc:.4f} pr_auc={det.pr_auc:.4f}")
        r = cv.report
        print(f"logistic precision={r.precision:.4f} recall={r.recall:.4f} f1={r.f1:.4f} "
              f"roc_auc={r.roc_auc:.4f} pr_auc={r.pr_auc:.4f}")
    return EXIT_OK


def cmd_fetch(cfg: RunConfig) -> int:
    a = cfg.args
    try:
        raw = [ln.split("#", 1)[0].strip() for ln in Path(a.addresses).read_text().splitlines()]
    except OSError as exc:
        raise CliError(f"cannot read address list: {exc}") from exc
    addresses = []
    seen = set()
    for s in raw:
        if not s:
            continue
        addr = validate_address(s)
        if addr not in seen:
            seen.add(addr)
            addresses.append(addr)
    out = Path(a.out)
    fmt = a.format if a.format in ("hex-dir", "jsonl") else ("hex-dir" if out.suffix != ".jsonl" else "jsonl")
    if fmt == "hex-dir":
        out.mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    fh = open(out, "a") if fmt == "jsonl" else None
    status = EXIT_OK
    try:
        for addr in addresses:
            try:
                code = fetch_code(a.endpoint, addr, a.block)
            except TransportError as exc:
                print(f"error: {exc}", file=sys.stderr)
                status = EXIT_ERROR
                break
            if not code:
                skipped += 1
                continue
            write_corpus_entry(out, CorpusEntry(addr, code, None, "rpc"), fmt, fh)
            written += 1
            if fh is not None:
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    print(f"entries={written} skipped_empty={skipped} duplicates={len([s for s in raw if s]) - len(addresses)}")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evmobf", description="Measure funds-transfer obfuscation in EVM bytecode.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def analysis_flags(sp):
        sp.add_argument("--f7-classifier", default="heuristic", metavar="{heuristic,external:<url>}")
        sp.add_argument("--selfdestruct-sites", choices=("on", "off"), default="on")
        sp.add_argument("--sload-steps", choices=("on", "off"), default="on")

    def code_input(sp):
        sp.add_argument("input", nargs="?", help="bytecode file (hex); '-' or omitted reads stdin")
        sp.add_argument("--hex", help="bytecode given inline")

    sp = sub.add_parser("analyze", help="analyze one contract")
    code_input(sp)
    analysis_flags(sp)
    sp.add_argument("--stats", help="stats snapshot for per-feature z terms")
    sp.add_argument("--review", help="append ambiguous logs to this jsonl file")
    sp.add_argument("--format", choices=("text", "json"), default="text")

    sp = sub.add_parser("disasm", help="print the instruction listing")
    code_input(sp)

    sp = sub.add_parser("ir", help="dump the recovered IR")
    code_input(sp)
    sp.add_argument("--dump", choices=("ssa", "cfg", "pdg"), default="ssa")

    sp = sub.add_parser("batch", help="analyze a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--corpus-format", choices=("hex-dir", "jsonl"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--budget-secs", type=float, default=DEFAULT_BUDGET, help="0 disables the budget")
    sp.add_argument("--stats", help="pinned snapshot; fills in z")
    sp.add_argument("--review", help="write ambiguous logs to this jsonl file")
    analysis_flags(sp)

    sp = sub.add_parser("stats", help="estimate a stats snapshot from analysis records")
    sp.add_argument("--corpus", required=True, nargs="+", help="record files (shards are merged)")
    sp.add_argument("--out")

    sp = sub.add_parser("score", help="score records against a snapshot")
    sp.add_argument("--corpus", required=True, nargs="+")
    sp.add_argument("--stats")
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    sp = sub.add_parser("rank", help="prevalence, quantiles, shares and the top-K listing")
    sp.add_argument("--corpus", required=True, nargs="+", help="scored records (csv with id,z at minimum)")
    sp.add_argument("--stats")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--cutoff", type=float)
    g.add_argument("--confidence", type=float)
    sp.add_argument("--baseline", help="scored baseline records for --confidence")
    sp.add_argument("-k", "--k", type=int, default=3000)
    sp.add_argument("--out", help="write the summary as JSON")
    sp.add_argument("--figures", help="directory for rendered figures")
    sp.add_argument("--timestamps", help="corpus jsonl with created_at, for the monthly trend")
    sp.add_argument("--format", choices=("text", "json"), default="text")

    sp = sub.add_parser("eval", help="detection metrics and ablations on a labeled set")
    sp.add_argument("--corpus", required=True, nargs=1, help="CSV with id, label, f1..f7 columns")
    sp.add_argument("--stats")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--cutoff", type=float)
    g.add_argument("--confidence", type=float)
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-k", "--k", type=int, default=3000)
    sp.add_argument("--out")
    sp.add_argument("--figures")
    sp.add_argument("--format", choices=("text", "json"), default="text")

    sp = sub.add_parser("fetch", help="download runtime code for a list of addresses")
    sp.add_argument("--addresses", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--endpoint", help="JSON-RPC URL (default: $EVM_RPC_URL)")
    sp.add_argument("--block", default="latest")
    sp.add_argument("--format", choices=("hex-dir", "jsonl"))
    return p


COMMANDS = {
    "analyze": cmd_analyze, "disasm": cmd_disasm, "ir": cmd_ir, "batch": cmd_batch,
    "stats": cmd_stats, "score": cmd_score, "rank": cmd_rank, "eval": cmd_eval, "fetch": cmd_fetch,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = RunConfig(args.command, args)
    try:
        return COMMANDS[args.command](cfg)
    except (CliError, DecodeError, ValueError, scoring.InsufficientCorpus, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
