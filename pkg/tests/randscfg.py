"""Random proper, strongly contracting SCFGs for the cross-check suites.

Grammars are resampled until they are proper, have no useless symbols, all
closures exist, and the brute-force enumeration converges fast enough to
give honest error bars.
"""

from __future__ import annotations

import random

from pearley import Grammar, build_closure_tables, oracle
from pearley.closures import ClosureError, spectral_radius_estimate

NT_NAMES = ["S", "A", "B", "C", "D"]
T_NAMES = ["a", "b", "c", "d"]


def random_scfg(rng: random.Random, *, max_nt=5, max_t=4, allow_null=False,
                allow_unit=True, require_null=False, require_unit=False,
                max_rules_per_nt=3, max_rhs=3):
    """One random grammar satisfying the health checks, with its tables and
    a converged enumeration (the caller reuses all three)."""
    while True:
        g = _draw(rng, max_nt, max_t, allow_null, allow_unit, max_rules_per_nt,
                  max_rhs)
        if g is None:
            continue
        if require_null and not any(p.is_null for p in g.productions):
            continue
        if require_unit and not any(p.is_unit for p in g.productions):
            continue
        try:
            tables = build_closure_tables(g)
        except ClosureError:
            continue
        if max(spectral_radius_estimate(tables.pl),
               spectral_radius_estimate(tables.pu)) > 0.9:
            continue
        if tables.eps[g.start.index] > 0.9:
            continue
        try:
            enum = oracle.enumerate_derivations(
                g, oracle.OracleConfig(max_len=16, mass_tol=1e-9,
                                       max_expansions=30_000))
        except oracle.OracleBudgetError:
            continue
        if enum.residual > 1e-9:
            continue
        if not any(y for y in enum.by_yield if y):
            continue
        return g, tables, enum


def _draw(rng, max_nt, max_t, allow_null, allow_unit, max_rules_per_nt, max_rhs):
    n_nt = rng.randint(2, max_nt)
    n_t = rng.randint(2, max_t)
    nts = NT_NAMES[:n_nt]
    ts = T_NAMES[:n_t]
    rules = []
    for nt in nts:
        k = rng.randint(1, max_rules_per_nt)
        seen = set()
        bodies = []
        for _ in range(k):
            body = _draw_rhs(rng, nts, ts, allow_null, allow_unit, max_rhs)
            if body in seen:
                continue
            seen.add(body)
            bodies.append(body)
        if not bodies:
            return None
        weights = [0.2 + rng.random() for _ in bodies]
        # bias weight toward non-recursive bodies to keep things contracting
        for i, body in enumerate(bodies):
            if all(s in ts for s in body) and body:
                weights[i] *= 3.0
        z = sum(weights)
        for body, w in zip(bodies, weights):
            rules.append((nt, body, w / z))
    try:
        g = Grammar(rules, start="S")
    except Exception:
        return None
    from pearley.grammar import _productive_set, _reachable_set
    productive = _productive_set(g)
    reachable = _reachable_set(g, productive)
    useful = {nt for nt in g.nonterminals if nt in productive and nt in reachable}
    if g.start not in useful:
        return None
    if len(useful) < g.n_nt:
        # trim useless symbols and renormalize the survivors
        kept = []
        for p in g.productions:
            if p.lhs not in useful:
                continue
            if any(s.is_nonterminal and s not in useful for s in p.rhs):
                continue
            kept.append((p.lhs.name, tuple(s.name for s in p.rhs), p.prob))
        if not kept:
            return None
        try:
            g = Grammar(kept, start="S")
        except Exception:
            return None
        sums = g.lhs_sums()
        if any(s <= 0 for s in sums.values()):
            return None
        g = Grammar([(l, r, pr / sums[g.symbols[l]])
                     for l, r, pr in g.rule_triples()], start="S")
    return g


def _draw_rhs(rng, nts, ts, allow_null, allow_unit, max_rhs):
    r = rng.random()
    if allow_null and r < 0.18:
        return ()
    if allow_unit and r < 0.36:
        return (rng.choice(nts),)
    length = rng.randint(1, max_rhs)
    body = []
    for _ in range(length):
        if rng.random() < 0.62:
            body.append(rng.choice(ts))
        else:
            body.append(rng.choice(nts))
    return tuple(body)


def all_strings(terminals, max_len):
    names = [t.name for t in terminals]
    yield ()
    frontier = [()]
    for _ in range(max_len):
        nxt = []
        for s in frontier:
            for t in names:
                w = s + (t,)
                nxt.append(w)
                yield w
        frontier = nxt


def sample_corpus(g, rng, n_sentences, max_len=6, max_tries=500):
    out = []
    tries = 0
    while len(out) < n_sentences and tries < max_tries:
        tries += 1
        d = oracle.sample_derivation(g, rng, max_steps=200)
        if d is not None and 0 < len(d.tokens) <= max_len:
            out.append(list(d.tokens))
    return out
