"""Outer probabilities, expected production counts, and EM training.

The backward pass walks the chart right to left, mirroring scanning and
transitive completion.  Reverse scanning copies outer values unchanged.
Reverse completion has two updates per completed result: each predecessor
receives gamma'' * beta(result) once per matching complete source (a
source's full inner probability already embodies collapsed unit cycles),
while each source reachable through the unit-production closure receives
gamma' * R_U(Z, Y) * beta(result).  The source update must not flow through
results that themselves realize an effective unit production, because the
closure factor already accounts for those chains end to end; with null
productions that exclusion is per contribution (the predecessor spans
nothing and the rest of its rule can vanish) and is implemented by
subtracting the fully-nullable continuation's share.  For plain unit rules
the subtraction cancels the update exactly.

States sharing a position and start index can depend on each other through
reverse spontaneous dot shifts and through same-bucket completion
deliveries, so each such bucket is settled as one small linear system
(triangular, hence a sweep, in the common cases).

Expected counts sum beta * gamma over predicted states.  Rules used inside
collapsed ε-subderivations have no chart states at all; their counts are
recovered from the posterior mass flowing through each spontaneous dot
shift times the expected rule uses per ε-expansion of the shifted
nonterminal, a small per-grammar linear system.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .chart import Chart, DummyRule, EarleyState
from .closures import ClosureTables, build_closure_tables
from .grammar import Grammar, Production
from .parser import EarleyParser, ParseOptions, ParseResult, _key_at

log = logging.getLogger(__name__)

#: slack on the EM monotonicity guarantee (floating point only)
EM_MONOTONICITY_TOL = 1e-10


class EstimationError(ValueError):
    pass


@dataclass
class OuterAnnotations:
    """Outer probabilities as a parallel annotation map, keyed by state
    identity; charts stay untouched by the backward pass."""

    beta: dict
    sentence_prob: float

    def of(self, state) -> float:
        return self.beta.get(id(state), 0.0)


@dataclass
class ExpectedCounts:
    counts: dict                     # Production -> expected uses
    log_likelihood: float

    def of(self, production) -> float:
        return self.counts.get(production, 0.0)


@dataclass
class TrainingReport:
    log_likelihoods: list
    final_grammar: Grammar
    converged: bool
    iterations: int


# -- backward pass -------------------------------------------------------------


def backward_pass(chart: Chart, tables: ClosureTables | None = None) -> OuterAnnotations:
    """Outer probabilities for every state of an accepted standard chart."""
    if chart.mode == "robust":
        raise EstimationError("outer probabilities are defined for standard "
                              "parses only, not robust charts")
    tables = tables if tables is not None else chart.tables
    final = chart.final_dummy()
    if final is None:
        raise EstimationError("chart is not from an accepted parse")

    sets = chart.sets
    beta: dict[int, float] = {id(final): 1.0}

    for i in range(len(sets) - 1, -1, -1):
        _pull_transition(chart, i, beta)
        st = sets[i]
        scope = chart.scope_base[i]
        tr = chart.transitions[i] if i < len(chart.transitions) else None
        suppress_shifts = tr is not None and tr[0] == "open"
        buckets: dict[int, list[EarleyState]] = {}
        for s in st.states.values():
            buckets.setdefault(s.start, []).append(s)
        for start in sorted(buckets):
            _settle_bucket(chart, i, buckets[start], beta, tables, scope,
                           suppress_shifts)
        _push_pred_updates(chart, i, beta, scope)

    return OuterAnnotations(beta, final.gamma)


def _pull_transition(chart: Chart, i: int, beta) -> None:
    """Reverse the edge that produced set i+1 from set i."""
    if i >= len(chart.transitions):
        return
    tr = chart.transitions[i]
    sets = chart.sets
    if tr[0] == "scan":
        nxt_states = sets[i + 1].states
        for s in chart.sets[i].by_next.get(tr[1], ()):
            target = nxt_states.get(_key_at(s.rule, s.dot + 1, s.start))
            if target is not None:
                v = beta.get(id(target), 0.0)
                if v != 0.0:
                    beta[id(s)] = beta.get(id(s), 0.0) + v
    else:
        for orig, copy in tr[1]:
            v = beta.get(id(copy), 0.0)
            if v != 0.0:
                beta[id(orig)] = beta.get(id(orig), 0.0) + v


def _nullable_tail(tables: ClosureTables, rule, dot: int) -> float:
    """Product of ε-expansion probabilities over rhs[dot:]; 0 if any symbol
    cannot vanish."""
    prod = 1.0
    n_nt = tables.grammar.n_nt
    eps = tables.eps
    for c in rule.rhs_codes[dot:]:
        if not (0 <= c < n_nt) or eps[c] == 0.0:
            return 0.0
        prod *= eps[c]
    return prod


def _settle_bucket(chart, i, bucket, beta, tables, scope, suppress_shifts) -> None:
    """Resolve the outer values of one (position, start-index) bucket.

    Pulls the settled cross-bucket completion deliveries into the base
    vector, then solves the intra-bucket system of reverse shifts and
    same-bucket deliveries.  When no same-bucket deliveries exist the
    system is triangular in descending dot order and a sweep suffices.
    """
    sets = chart.sets
    st = sets[i]
    eps = tables.eps
    n_nt = chart.grammar.n_nt
    ru_cols = tables.ru_cols

    order = sorted(bucket, key=lambda s: (-s.dot, s.seq))
    idx = {id(s): k for k, s in enumerate(order)}
    n = len(order)
    base = np.array([beta.get(id(s), 0.0) for s in order])

    shift_edges = []      # (u_idx, sib_idx, e)
    same_edges = []       # (src_idx, r_idx, coeff, cr_idx or None, tail)

    if not suppress_shifts:
        for s in order:
            nxt = s.next_code
            if nxt is not None and isinstance(nxt, int) and 0 <= nxt < n_nt \
                    and eps[nxt] > 0.0:
                sib = st.states.get(_key_at(s.rule, s.dot + 1, s.start))
                if sib is not None:
                    shift_edges.append((idx[id(s)], idx[id(sib)], float(eps[nxt])))

    for src in order:
        if not (src.is_complete and src.is_rule_state):
            continue
        j = src.start
        if j < scope:
            continue
        src_idx = idx[id(src)]
        for z, w in ru_cols[src.rule.lhs.index]:
            for p in sets[j].by_next.get(z, ()):
                r = st.states.get(_key_at(p.rule, p.dot + 1, p.start))
                if r is None:
                    continue
                coeff = p.gamma * w
                if coeff == 0.0:
                    continue
                if p.start < j:
                    # settled lower bucket: a constant inflow, full share
                    base[src_idx] += coeff * beta.get(id(r), 0.0)
                    continue
                # same-bucket delivery; exclude the share in which the
                # predecessor's production realizes an effective unit
                if isinstance(p.rule, DummyRule):
                    same_edges.append((src_idx, idx[id(r)], coeff, None, 0.0))
                    continue
                tail = _nullable_tail(tables, p.rule, p.dot + 1)
                if tail == 0.0:
                    same_edges.append((src_idx, idx[id(r)], coeff, None, 0.0))
                else:
                    cr = st.states.get(
                        _key_at(p.rule, len(p.rule.rhs_codes), p.start))
                    cr_idx = idx.get(id(cr)) if cr is not None else None
                    same_edges.append((src_idx, idx[id(r)], coeff, cr_idx, tail))

    if not same_edges:
        values = base
        for k, s in enumerate(order):
            acc = values[k]
            for u, sib, e in shift_edges:
                if u == k:
                    acc += e * values[sib]
            values[k] = acc
    else:
        m = np.zeros((n, n))
        for u, sib, e in shift_edges:
            m[u, sib] += e
        for src_idx, r_idx, coeff, cr_idx, tail in same_edges:
            m[src_idx, r_idx] += coeff
            if cr_idx is not None:
                m[src_idx, cr_idx] -= coeff * tail
        try:
            values = np.linalg.solve(np.eye(n) - m, base)
        except np.linalg.LinAlgError as exc:
            raise EstimationError(
                f"outer-probability system is singular: {exc}") from None

    for k, s in enumerate(order):
        v = float(values[k])
        if v != 0.0:
            beta[id(s)] = v
        else:
            beta.pop(id(s), None)


def _push_pred_updates(chart: Chart, i: int, beta, scope) -> None:
    """Predecessor updates of reverse completion: once per complete source,
    with the source's full inner probability (collapsed cycles included)."""
    sets = chart.sets
    st = sets[i]
    n_nt = chart.grammar.n_nt
    for r in st.states.values():
        if r.dot == 0:
            continue
        code = r.rule.rhs_codes[r.dot - 1]
        if not (isinstance(code, int) and 0 <= code < n_nt):
            continue
        b_r = beta.get(id(r), 0.0)
        if b_r == 0.0:
            continue
        for src in st.completes_by_lhs.get(code, ()):
            if src.start < scope:
                continue
            p = sets[src.start].states.get(_key_at(r.rule, r.dot - 1, r.start))
            if p is not None:
                v = src.gamma * b_r
                if v != 0.0:
                    beta[id(p)] = beta.get(id(p), 0.0) + v


# -- expected counts -----------------------------------------------------------


def expected_counts(chart: Chart, outer: OuterAnnotations,
                    tables: ClosureTables | None = None) -> ExpectedCounts:
    """Expected production uses: beta * gamma over predicted states, plus
    ε-expansion corrections for rules that never surface as chart states."""
    tables = tables if tables is not None else chart.tables
    total = outer.sentence_prob
    if total <= 0.0:
        raise EstimationError("sentence probability is zero; counts undefined")
    g = chart.grammar
    n_nt = g.n_nt
    eps = tables.eps
    beta = outer.beta
    counts: dict[Production, float] = {}
    null_counts = _null_internal_counts(g, tables)
    any_null = any(null_counts)

    for i, st in enumerate(chart.sets):
        tr = chart.transitions[i] if i < len(chart.transitions) else None
        open_source = tr is not None and tr[0] == "open"
        for s in st.states.values():
            if s.is_rule_state and s.dot == 0:
                b = beta.get(id(s), 0.0)
                if b != 0.0:
                    counts[s.rule] = counts.get(s.rule, 0.0) + b * s.gamma
            if not any_null or open_source:
                continue
            nxt = s.next_code
            if nxt is not None and isinstance(nxt, int) and 0 <= nxt < n_nt \
                    and eps[nxt] > 0.0:
                sib = st.states.get(_key_at(s.rule, s.dot + 1, s.start))
                if sib is None:
                    continue
                mass = beta.get(id(sib), 0.0) * s.gamma
                if mass == 0.0:
                    continue
                for rule, inner_uses in null_counts[nxt].items():
                    counts[rule] = counts.get(rule, 0.0) + mass * inner_uses
    return ExpectedCounts({r: c / total for r, c in counts.items()},
                          math.log(total))


def _null_internal_counts(g: Grammar, tables: ClosureTables):
    """m[Y][rule]: expected uses of rule inside an ε-expansion of Y, weighted
    by the expansion probabilities (the values integrate against an outer
    mass that does not yet include the e factor).

    Satisfies m = b + A m over the nullable nonterminals, where b holds the
    fully-nullable rules' direct contributions and A their child links.
    """
    cached = getattr(tables, "_null_internal_counts", None)
    if cached is not None:
        return cached
    n = g.n_nt
    eps = tables.eps
    nullable = [x for x in range(n) if eps[x] > 0.0]
    result: list[dict[Production, float]] = [{} for _ in range(n)]
    if nullable:
        pos = {x: k for k, x in enumerate(nullable)}
        k = len(nullable)
        a = np.zeros((k, k))
        b: list[dict[Production, float]] = [{} for _ in range(k)]
        for p in g.productions:
            if not all(s.is_nonterminal and eps[s.index] > 0.0 for s in p.rhs):
                continue
            row = pos[p.lhs.index]
            full = p.prob
            for s in p.rhs:
                full *= eps[s.index]
            b[row][p] = b[row].get(p, 0.0) + full
            for s in p.rhs:
                a[row, pos[s.index]] += full / eps[s.index]
        try:
            inv = np.linalg.inv(np.eye(k) - a)
        except np.linalg.LinAlgError:
            raise EstimationError(
                "ε-expansion count system is singular; expected counts are "
                "unavailable for this grammar") from None
        rules = sorted({r for row in b for r in row}, key=lambda p: p.index)
        for rule in rules:
            vec = np.array([row.get(rule, 0.0) for row in b])
            solved = inv @ vec
            for x, kx in pos.items():
                v = float(solved[kx])
                if v != 0.0:
                    result[x][rule] = v
    tables._null_internal_counts = result
    return result


# -- EM ------------------------------------------------------------------------


def em_step(g: Grammar, corpus, tables: ClosureTables | None = None, *,
            skip_unparseable: bool = True):
    """One expectation-maximization step.

    Returns (new grammar, corpus log-likelihood under the input grammar).
    Sentences that fail to parse are skipped with a warning (or abort with
    ``skip_unparseable=False``); an LHS whose rules all get zero expected
    count keeps its old probabilities.
    """
    tables = tables if tables is not None else build_closure_tables(g)
    parser = EarleyParser(g, tables, ParseOptions(compute_viterbi=False))
    totals: dict[Production, float] = {p: 0.0 for p in g.productions}
    ll = 0.0
    used_any = False
    for sentence in corpus:
        tokens = sentence.split() if isinstance(sentence, str) else list(sentence)
        result = parser.parse(tokens)
        if not result.accepted or result.sentence_prob <= 0.0:
            if skip_unparseable:
                log.warning("skipping unparseable sentence: %s", " ".join(tokens))
                continue
            raise EstimationError(f"unparseable sentence: {' '.join(tokens)}")
        outer = backward_pass(result.chart, tables)
        ec = expected_counts(result.chart, outer, tables)
        for rule, c in ec.counts.items():
            totals[rule] += c
        ll += ec.log_likelihood
        used_any = True
    if not used_any:
        raise EstimationError("no parseable sentences in corpus")

    rules = []
    for nt in g.nonterminals:
        prods = g.productions_by_lhs[nt.index]
        z = sum(totals[p] for p in prods)
        if z <= 0.0:
            log.warning("no expected uses of %s; keeping its probabilities",
                        nt.name)
            for p in prods:
                rules.append((p.lhs.name, tuple(s.name for s in p.rhs), p.prob))
        else:
            for p in prods:
                rules.append((p.lhs.name, tuple(s.name for s in p.rhs),
                              totals[p] / z))
    return Grammar(rules, start=g.start.name), ll


def train(g: Grammar, corpus, max_iters: int = 50, tol: float = 1e-6, *,
          skip_unparseable: bool = True) -> TrainingReport:
    """Iterate em_step until the log-likelihood change drops below tol.

    Closure tables are rebuilt every iteration because the probabilities
    change.  The log-likelihood sequence is nondecreasing up to
    floating-point slack (EM_MONOTONICITY_TOL).
    """
    corpus = list(corpus)
    lls: list[float] = []
    current = g
    converged = False
    iterations = 0
    for it in range(max_iters):
        new_grammar, ll = em_step(current, corpus,
                                  skip_unparseable=skip_unparseable)
        lls.append(ll)
        iterations = it + 1
        current = new_grammar
        if len(lls) >= 2 and abs(lls[-1] - lls[-2]) < tol:
            converged = True
            break
    return TrainingReport(lls, current, converged, iterations)
