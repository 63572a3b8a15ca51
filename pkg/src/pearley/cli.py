"""Command-line interface.

Subcommands: ``check`` (grammar diagnostics), ``tables`` (closure table
dump), ``parse`` (acceptance, sentence and prefix probabilities),
``prefix`` (next-word distribution), ``viterbi`` (best parse), ``robust``
(partial parses), ``train`` (EM).  Sentences come from positional
arguments or one per line via --input; bracket tokens ``(`` ``)`` are
allowed everywhere.

Exit status: 0 on success, 1 when a parse was rejected, 2 on usage or
grammar errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import closures, estimation, oracle
from .chart import dump_chart
from .grammar import GrammarError, parse_grammar, renormalize, eliminate_null, \
    serialize, validate
from .parser import (EarleyParser, ParseError, ParseOptions, parse_robust,
                     viterbi_parse)

log = logging.getLogger("pearley")


def main(argv=None) -> int:
    return run(argv if argv is not None else sys.argv[1:])


def run(argv, out=None, err=None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    parser = _build_argparser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    logging.basicConfig(stream=err, level=logging.WARNING, format="%(message)s")
    try:
        return args.func(args, out, err)
    except (GrammarError, ParseError, OSError, estimation.EstimationError,
            closures.ClosureError) as e:
        print(f"error: {e}", file=err)
        return 2


def _build_argparser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="pearley",
        description="probabilistic Earley parsing for stochastic "
                    "context-free grammars")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, sentences=True):
        p.add_argument("-g", "--grammar", required=True, help="grammar file")
        p.add_argument("--strict", action="store_true",
                       help="treat grammar warnings as errors")
        p.add_argument("--eliminate-null", action="store_true",
                       help="remove null productions before parsing")
        p.add_argument("--renormalize", action="store_true",
                       help="rescale rule weights to probabilities")
        if sentences:
            p.add_argument("sentences", nargs="*", help="whitespace-separated tokens")
            p.add_argument("--input", help="file with one sentence per line")
            p.add_argument("--no-filter", action="store_true",
                           help="disable bottom-up filtering of predictions")
            p.add_argument("--prune", type=int, metavar="N",
                           help="beam: keep the N highest-alpha states per set")
            p.add_argument("--prune-rel", type=float, metavar="R",
                           help="drop states below R times the best alpha")
            p.add_argument("--verify", action="store_true",
                           help="cross-check against the brute-force oracle")
            p.add_argument("--dump-chart", action="store_true")
        p.add_argument("--format", choices=("text", "structured"),
                       default="text")

    p = sub.add_parser("check", help="grammar diagnostics")
    common(p, sentences=False)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("tables", help="dump closure tables")
    common(p, sentences=False)
    p.set_defaults(func=_cmd_tables)

    for name, fn in (("parse", _cmd_parse), ("viterbi", _cmd_parse),
                     ("robust", _cmd_parse)):
        p = sub.add_parser(name)
        common(p)
        if name == "robust":
            p.add_argument("--maximal", action="store_true",
                           help="only maximal partial parses")
        p.set_defaults(func=fn, mode=name)

    p = sub.add_parser("prefix", help="next-word distribution after a prefix")
    common(p)
    p.set_defaults(func=_cmd_prefix)

    p = sub.add_parser("train", help="EM estimation of rule probabilities")
    common(p)
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=_cmd_train)
    return top


def _load_grammar(args):
    with open(args.grammar, encoding="utf-8") as f:
        text = f.read()
    g = parse_grammar(text, merge=True, strict=args.strict,
                      strict_probs=not args.renormalize)
    if args.renormalize:
        g = renormalize(g)
    if getattr(args, "eliminate_null", False):
        g = eliminate_null(g)
    return g


def _sentences(args):
    out = [s.split() for s in args.sentences]
    if getattr(args, "input", None):
        with open(args.input, encoding="utf-8") as f:
            out.extend(line.split() for line in f if line.split())
    return out


def _options(args) -> ParseOptions:
    return ParseOptions(
        compute_viterbi=True,
        terminal_filter=not getattr(args, "no_filter", False),
        prune_beam=getattr(args, "prune", None),
        prune_ratio=getattr(args, "prune_rel", None),
    )


def _cmd_check(args, out, err) -> int:
    g = _load_grammar(args)
    d = validate(g)
    record = {
        "proper": d.proper,
        "improper_lhs": [[nt.name, s] for nt, s in d.improper_lhs],
        "useless": sorted(nt.name for nt in d.useless),
        "null_start": d.null_start,
        "consistency_estimate": d.consistency_estimate,
    }
    if args.format == "structured":
        print(json.dumps(record, sort_keys=True), file=out)
    else:
        print(f"productions: {len(g.productions)}  nonterminals: {g.n_nt}  "
              f"terminals: {len(g.terminals)}  start: {g.start.name}", file=out)
        if d.improper_lhs:
            for nt, s in d.improper_lhs:
                print(f"improper: {nt.name} sums to {s!r}", file=out)
        else:
            print("proper: yes", file=out)
        print(f"useless nonterminals: "
              f"{', '.join(sorted(nt.name for nt in d.useless)) or 'none'}", file=out)
        print(f"null start: {'yes' if d.null_start else 'no'}", file=out)
        print(f"consistency estimate (spectral radius): "
              f"{d.consistency_estimate:.6g}", file=out)
    if args.strict and not d.proper:
        return 2
    return 0


def _cmd_tables(args, out, err) -> int:
    g = _load_grammar(args)
    t = closures.build_closure_tables(g)
    nts = g.nonterminals
    print("# epsilon expansion probabilities", file=out)
    for nt in nts:
        if t.eps[nt.index] > 0:
            print(f"e {nt.name} {t.eps[nt.index]!r}", file=out)
    for label, matrix in (("P_L", t.pl), ("R_L", t.rl), ("P_U", t.pu),
                          ("R_U", t.ru)):
        print(f"# {label}", file=out)
        for x in range(g.n_nt):
            for y in sorted(matrix.rows[x]):
                print(f"{label} {nts[x].name} {nts[y].name} "
                      f"{matrix.rows[x][y]!r}", file=out)
    print("# R_LT (nonterminal -> possible first terminals)", file=out)
    for x in range(g.n_nt):
        row = sorted(g.terminals[tj].name for tj in t.rlt.rows[x])
        if row:
            print(f"R_LT {nts[x].name} {' '.join(row)}", file=out)
    return 0


def _cmd_parse(args, out, err) -> int:
    g = _load_grammar(args)
    tables = closures.build_closure_tables(g)
    sentences = _sentences(args)
    if not sentences:
        print("error: no sentences given", file=err)
        return 2
    opts = _options(args)
    engine = EarleyParser(g, tables, opts)
    status = 0
    records = []
    for tokens in sentences:
        if args.mode == "robust":
            chart, partials = parse_robust(g, tables, tokens, opts)
            if getattr(args, "maximal", False):
                partials = [p for p in partials if p.maximal]
            records.append(_robust_record(tokens, partials))
            continue
        result = engine.parse(tokens)
        rec = _parse_record(tokens, result)
        if args.verify:
            rec["verify_max_deviation"] = _verify(g, tokens, result)
        records.append(rec)
        if not result.accepted:
            status = 1
        if args.dump_chart:
            out.write(dump_chart(result.chart))

    if args.format == "structured":
        print(json.dumps({"sentences": records}, sort_keys=True), file=out)
        return status
    for rec in records:
        _print_text(rec, args.mode, out)
    return status


def _parse_record(tokens, result) -> dict:
    return {
        "tokens": tokens,
        "accepted": result.accepted,
        "sentence_prob": result.sentence_prob,
        "prefix_probs": result.prefix_probs,
        "viterbi_prob": result.viterbi_prob,
        "viterbi_tree": str(result.viterbi_tree) if result.viterbi_tree else None,
        "pruned": result.pruned,
    }


def _robust_record(tokens, partials) -> dict:
    return {
        "tokens": tokens,
        "partial_parses": [
            {"labels": list(p.labels), "inner_prob": p.inner_prob,
             "viterbi_prob": p.viterbi_prob, "maximal": p.maximal}
            for p in partials],
    }


def _print_text(rec, mode, out) -> None:
    toks = " ".join(rec["tokens"])
    if "partial_parses" in rec:
        print(f"input: {toks}", file=out)
        for p in rec["partial_parses"]:
            flag = " (maximal)" if p["maximal"] else ""
            print(f"  {' '.join(p['labels'])}  inner={p['inner_prob']!r} "
                  f"viterbi={p['viterbi_prob']!r}{flag}", file=out)
        return
    print(f"input: {toks}", file=out)
    print(f"  accepted: {rec['accepted']}", file=out)
    print(f"  sentence_prob: {rec['sentence_prob']!r}", file=out)
    print(f"  prefix_probs: {' '.join(repr(p) for p in rec['prefix_probs'])}",
          file=out)
    if mode == "viterbi" and rec["viterbi_tree"] is not None:
        print(f"  viterbi_prob: {rec['viterbi_prob']!r}", file=out)
        print(f"  viterbi_tree: {rec['viterbi_tree']}", file=out)
    if "verify_max_deviation" in rec:
        print(f"  verify_max_deviation: {rec['verify_max_deviation']:.3g}",
              file=out)
    if rec.get("pruned"):
        print("  note: pruning active; probabilities are lower bounds", file=out)


def _verify(g, tokens, result) -> float:
    plain = [t for t in tokens if t not in ("(", ")")]
    cfg = oracle.OracleConfig(max_len=max(len(plain) + 6, 8))
    enum = oracle.enumerate_derivations(g, cfg)
    dev = abs(result.sentence_prob - oracle.string_prob(g, plain, enum=enum)) \
        if "(" not in tokens else 0.0
    for k in range(1, len(plain) + 1):
        if k - 1 < len(result.prefix_probs):
            lo, bar = oracle.prefix_prob(g, plain[:k], enum=enum)
            d = abs(result.prefix_probs[k - 1] - lo)
            dev = max(dev, max(0.0, d - bar))
    if result.viterbi_prob is not None and "(" not in tokens:
        _, best = oracle.viterbi(g, plain, enum=enum)
        dev = max(dev, abs(result.viterbi_prob - best))
    return dev


def _cmd_prefix(args, out, err) -> int:
    g = _load_grammar(args)
    tables = closures.build_closure_tables(g)
    engine = EarleyParser(g, tables, _options(args))
    for tokens in _sentences(args):
        dist = engine.next_word_distribution(tokens)
        if args.format == "structured":
            print(json.dumps({"prefix": tokens, "next": dist}, sort_keys=True),
                  file=out)
        else:
            print(f"prefix: {' '.join(tokens)}", file=out)
            for term in sorted(dist):
                print(f"  {term}: {dist[term]!r}", file=out)
    return 0


def _cmd_train(args, out, err) -> int:
    g = _load_grammar(args)
    corpus = _sentences(args)
    if not corpus:
        print("error: no training sentences", file=err)
        return 2
    report = estimation.train(g, corpus, max_iters=args.iterations,
                              tol=args.tol,
                              skip_unparseable=not args.strict)
    for it, ll in enumerate(report.log_likelihoods, start=1):
        print(f"iteration {it}: log-likelihood {ll!r}", file=err)
    out.write(serialize(report.final_grammar))
    return 0


if __name__ == "__main__":
    sys.exit(main())
