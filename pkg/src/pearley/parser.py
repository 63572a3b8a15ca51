"""The probabilistic Earley engine.

Per input position the engine runs completion (of the states the previous
scan produced), then prediction, then the scan into the next set.  Left
recursion in prediction and unit-production cycles in completion are
collapsed through the precomputed closure matrices, so both steps are
single passes; null productions are handled by spontaneous dot shifting
with ε-expansion factors rather than by chart states spanning nothing.

Prefix probabilities fall out of the scanned forward-probability sums, the
sentence probability is read off the final dummy state, and the chart kept
for the whole input supports Viterbi extraction, the outer-probability
backward pass, bracketed inputs, and robust partial parsing.

A grammar and its closure tables are shared read-only; every parse owns its
chart exclusively, so parses may run concurrently over the same tables.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

from .chart import (Chart, CompletionQueue, DummyRule, EarleyState, StateSet,
                    WILDCARD, EPS_LINK, SCAN_LINK, drain)
from .closures import ClosureTables, best_null_tree, build_closure_tables
from .grammar import Grammar, Symbol

log = logging.getLogger(__name__)

OPEN_BRACKET = "("
CLOSE_BRACKET = ")"


class ParseError(ValueError):
    """Malformed parse request (input rejection is a result, not an error)."""


@dataclass(frozen=True)
class ParseOptions:
    compute_viterbi: bool = True
    terminal_filter: bool = True      # bottom-up filtering of predictions
    prune_beam: int | None = None     # keep the prune_beam highest-alpha states
    prune_ratio: float | None = None  # drop states below prune_ratio * max alpha


@dataclass
class ParseRequest:
    tokens: list
    mode: str = "standard"            # "standard" | "robust"
    options: ParseOptions = field(default_factory=ParseOptions)


@dataclass
class ParseTree:
    label: object                     # Symbol; leaves carry terminal Symbols
    children: list = field(default_factory=list)
    production: object = None

    def probability(self) -> float:
        p = self.production.prob if self.production is not None else 1.0
        for c in self.children:
            p *= c.probability()
        return p

    def __str__(self) -> str:
        name = self.label.name if isinstance(self.label, Symbol) else str(self.label)
        if self.production is None:
            return name                      # terminal leaf
        if not self.children:
            return f"({name})"               # nonterminal expanded to ε
        return f"({name} " + " ".join(str(c) for c in self.children) + ")"


@dataclass
class PartialParse:
    labels: tuple                     # nonterminal names covering the input
    split_points: tuple               # input positions between the labels
    inner_prob: float
    viterbi_prob: float
    maximal: bool


@dataclass
class ParseResult:
    chart: Chart
    accepted: bool
    sentence_prob: float
    prefix_probs: list
    viterbi_prob: float | None = None
    viterbi_tree: ParseTree | None = None
    partial_parses: list | None = None
    pruned: bool = False              # probabilities are lower bounds if set
    rejected_at: int | None = None

    @property
    def grammar(self):
        return self.chart.grammar


class _Run:
    """Mutable state of one incremental parse."""

    __slots__ = ("chart", "mode", "options", "prefix_probs", "scope_stack",
                 "prepared", "pruned", "rejected_at", "terminals_seen")

    def __init__(self, chart, mode, options):
        self.chart = chart
        self.mode = mode
        self.options = options
        self.prefix_probs = []
        self.scope_stack = [0]
        self.prepared = {}            # set index -> filter token used (None = all)
        self.pruned = False
        self.rejected_at = None
        self.terminals_seen = 0


class EarleyParser:
    """Shared, reusable parsing engine for one grammar."""

    def __init__(self, grammar: Grammar, tables: ClosureTables | None = None,
                 options: ParseOptions | None = None):
        self.grammar = grammar
        self.tables = tables if tables is not None else build_closure_tables(grammar)
        self.options = options if options is not None else ParseOptions()

    # -- public API ----------------------------------------------------------

    def parse(self, tokens, mode: str = "standard",
              options: ParseOptions | None = None) -> ParseResult:
        opts = options if options is not None else self.options
        tokens = list(tokens)
        if OPEN_BRACKET in tokens or CLOSE_BRACKET in tokens:
            return self._parse_bracketed(tokens, mode, opts)
        if not tokens:
            return self._empty_input_result(mode, opts)
        run = self.begin(mode, opts)
        for token in tokens:
            if not self.extend(run, token):
                break
        return self.result(run)

    def parse_request(self, request: ParseRequest) -> ParseResult:
        return self.parse(request.tokens, mode=request.mode, options=request.options)

    # -- incremental interface -------------------------------------------------

    def begin(self, mode: str = "standard",
              options: ParseOptions | None = None) -> _Run:
        opts = options if options is not None else self.options
        chart = Chart(self.tables, mode=mode)
        run = _Run(chart, mode, opts)
        start = DummyRule("start", (self.grammar.start.index,))
        chart.insert(0, start, 0, 0, 1.0, 1.0, 1.0, None, True)
        return run

    def extend(self, run: _Run, token) -> bool:
        """Predict the current set against ``token``, scan it, and complete
        the new set.  Returns False on rejection; the failed set is removed
        so the run remains usable."""
        if run.rejected_at is not None:
            return False
        chart = run.chart
        i = chart.n_sets - 1
        code = self.grammar.terminal_code(token)
        if code is None:
            run.rejected_at = run.terminals_seen
            return False
        self._prepare_set(run, i, token)
        self._maybe_prune(run, i)

        new_set = chart.new_set()
        chart.transitions.append(("scan", code))
        seeds = self._scan(chart, i, code, new_set)
        if not new_set.states:
            chart.pop_set()
            run.rejected_at = run.terminals_seen
            return False
        run.terminals_seen += 1
        chart.terminal_positions.append(i + 1)
        run.prefix_probs.append(new_set.scanned_alpha_sum)
        self._complete(run, i + 1, seeds)
        if run.options.compute_viterbi:
            self._viterbi_pass(chart, i + 1)
        if run.mode == "robust":
            self._wildcard_pass(chart, i + 1)
        return True

    def retract(self, run: _Run) -> None:
        """Drop the most recent input position (undo one extend)."""
        chart = run.chart
        if chart.n_sets <= 1 or run.rejected_at is not None:
            raise ParseError("nothing to retract")
        run.prepared.pop(chart.n_sets - 1, None)
        chart.pop_set()
        run.prefix_probs.pop()
        run.terminals_seen -= 1

    def result(self, run: _Run) -> ParseResult:
        chart = run.chart
        final = chart.final_dummy()
        accepted = final is not None and run.rejected_at is None
        res = ParseResult(
            chart=chart,
            accepted=accepted,
            sentence_prob=final.gamma if accepted else 0.0,
            prefix_probs=list(run.prefix_probs),
            pruned=run.pruned,
            rejected_at=run.rejected_at,
        )
        if accepted and run.options.compute_viterbi:
            res.viterbi_prob = final.viterbi
            res.viterbi_tree = self._viterbi_tree(chart, final)
        if run.mode == "robust" and run.rejected_at is None:
            res.partial_parses = self._partial_parses(run)
        return res

    def sentence_prob_now(self, run: _Run) -> float:
        """Sentence probability of the tokens consumed so far."""
        final = run.chart.final_dummy()
        return final.gamma if final is not None else 0.0

    def next_word_distribution(self, prefix_tokens) -> dict:
        """P(a | prefix) for every terminal with nonzero continuation mass."""
        run = self.begin("standard", self.options)
        for token in prefix_tokens:
            if not self.extend(run, token):
                raise ParseError(f"prefix rejected at token {token!r}")
        chart = run.chart
        i = chart.n_sets - 1
        denom = run.prefix_probs[-1] if run.prefix_probs else 1.0
        self._prepare_set(run, i, None)   # unfiltered: keep all candidates live
        current = chart.sets[i]
        n_nt = self.grammar.n_nt
        dotted_nts = [c for c in current.by_next
                      if isinstance(c, int) and 0 <= c < n_nt]
        out = {}
        for term in self.grammar.terminals:
            code = term.code
            if code not in current.by_next and not any(
                    self.tables.rlt_ok(z, term.index) for z in dotted_nts):
                continue
            new_set = chart.new_set()
            chart.transitions.append(("scan", code))
            self._scan(chart, i, code, new_set)
            mass = new_set.scanned_alpha_sum
            chart.pop_set()
            if mass > 0.0:
                out[term.name] = mass / denom
        return out

    # -- engine internals -------------------------------------------------------

    def _prepare_set(self, run: _Run, i: int, next_token) -> None:
        """Seed (robust mode) and predict set i, exactly once."""
        if i in run.prepared:
            used = run.prepared[i]
            if used is not None and used != next_token and run.options.terminal_filter:
                raise ParseError(
                    "set was predicted under a different filter token; "
                    "disable terminal_filter for incremental exploration")
            return
        run.prepared[i] = next_token if run.options.terminal_filter else None
        if run.mode == "robust":
            self._seed_robust(run, i, next_token)
        self._predict(run, i, next_token)

    def _seed_robust(self, run: _Run, i: int, token) -> None:
        chart = run.chart
        g = self.grammar
        if i == 0:
            chart.insert(0, DummyRule("wild", (WILDCARD,)), 0, 0,
                         0.0, 1.0, 1.0, None, True)
        code = g.terminal_code(token) if token is not None else None
        for nt in g.nonterminals:
            if (run.options.terminal_filter and code is not None
                    and not self.tables.rlt_ok(nt.index, code - g.n_nt)):
                continue
            chart.insert(i, DummyRule("seed", (nt.index,)), 0, i,
                         0.0, 1.0, 1.0, None, True)

    def _predict(self, run: _Run, i: int, next_token) -> None:
        chart = run.chart
        tables = self.tables
        g = self.grammar
        n_nt = g.n_nt
        st = chart.sets[i]

        allowed = None
        if run.options.terminal_filter and next_token is not None:
            code = g.terminal_code(next_token)
            if code is not None:
                allowed = tables.corner_nts[code - n_nt]

        sums: dict[int, float] = {}
        wanted: set[int] = set()
        for code, states in st.by_next.items():
            if code == WILDCARD:
                wanted.update(allowed if allowed is not None else range(n_nt))
                continue
            if not (isinstance(code, int) and 0 <= code < n_nt):
                continue
            if allowed is not None and code not in allowed:
                continue
            wanted.add(code)
            total = 0.0
            for s in states:
                total += s.alpha
            if total != 0.0:
                sums[code] = sums.get(code, 0.0) + total

        rl_rows = tables.rl_rows
        y_alpha: dict[int, float] = {}
        targets: set[int] = set()
        for z in wanted:
            base = sums.get(z, 0.0)
            for y, w in rl_rows[z]:
                targets.add(y)
                if base != 0.0:
                    y_alpha[y] = y_alpha.get(y, 0.0) + base * w

        insert = chart.insert
        for y in sorted(targets):
            if allowed is not None and y not in allowed:
                continue
            base = y_alpha.get(y, 0.0)
            for prod in g.productions_by_lhs[y]:
                if not prod.rhs_codes:
                    continue  # null productions never become states
                insert(i, prod, 0, i, base * prod.prob, prod.prob,
                       prod.prob, None, True)

    def _scan(self, chart: Chart, i: int, code: int, new_set: StateSet):
        seeds = []
        insert = chart.insert
        for s in chart.sets[i].by_next.get(code, ()):
            _, completed, gained, _ = insert(
                i + 1, s.rule, s.dot + 1, s.start,
                s.alpha, s.gamma, s.viterbi, SCAN_LINK, True)
            new_set.scanned_alpha_sum += s.alpha
            if completed is not None and gained and not completed.queued \
                    and completed.is_rule_state:
                completed.queued = True
                seeds.append(completed)
        return seeds

    def _complete(self, run: _Run, i: int, seeds) -> None:
        """Transitive completion over set i.

        Sources propagate only their genuine inner mass (``gamma_source``):
        contributions in which their own production acted as an effective
        unit link are already embodied in the unit-closure factors applied
        here, and re-propagating them would double count.  A contribution is
        an effective-unit realization exactly when the predecessor starts at
        the source's start index (its expanded prefix spans nothing).
        """
        chart = run.chart
        ru_cols = self.tables.ru_cols
        scope = run.scope_stack[-1]
        chart.scope_base[i] = scope
        sets = chart.sets
        insert = chart.insert
        queue = CompletionQueue()
        for s in seeds:
            if s.start >= scope:
                queue.push(s)

        def visit(src: EarleyState):
            j = src.start
            g_src = src.gamma_source
            if g_src == 0.0:
                return
            pred_by_next = sets[j].by_next
            for z, w in ru_cols[src.rule.lhs.index]:
                preds = pred_by_next.get(z)
                if not preds:
                    continue
                f = g_src * w
                for p in preds:
                    _, completed, gained, _ = insert(
                        i, p.rule, p.dot + 1, p.start,
                        p.alpha * f, p.gamma * f, 0.0, None, p.start < j)
                    if completed is not None and gained \
                            and not completed.queued and completed.is_rule_state \
                            and completed.start >= scope:
                        completed.queued = True
                        queue.push(completed)

        drain(queue, visit)

    def _viterbi_pass(self, chart: Chart, i: int) -> None:
        """Direct (uncollapsed) max-product completion over set i.

        Unit-production loops terminate because the viterbi value is updated
        on strict improvement only; a loop multiplies by at most 1.
        """
        sets = chart.sets
        work = [s for s in sets[i].states.values()
                if s.is_complete and s.is_rule_state and s.viterbi > 0.0]
        work.sort(key=lambda s: (-s.start, s.seq))
        dq = deque(work)
        insert = chart.insert
        while dq:
            src = dq.popleft()
            v = src.viterbi
            if v <= 0.0:
                continue
            y_code = src.rule.lhs.code
            for p in sets[src.start].by_next.get(y_code, ()):
                if p.viterbi <= 0.0:
                    continue
                _, completed, _, improved = insert(
                    i, p.rule, p.dot + 1, p.start, 0.0, 0.0,
                    p.viterbi * v, ("comp", src), False)
                if completed is not None and improved and completed.is_rule_state:
                    dq.append(completed)

    def _wildcard_pass(self, chart: Chart, i: int) -> None:
        sets = chart.sets
        srcs = [s for s in sets[i].states.values()
                if s.is_complete and s.is_rule_state and not s.copied]
        srcs.sort(key=lambda s: s.seq)
        for src in srcs:
            lhs_code = src.rule.lhs.code
            for w in list(sets[src.start].wilds):
                seen = w.rule.rhs_codes[:-1] + (lhs_code,)
                chart.insert(i, DummyRule("wild", seen + (WILDCARD,)),
                             len(seen), 0, 0.0, w.gamma * src.gamma,
                             w.viterbi * src.viterbi, ("wcomp", src, w), True)

    def _maybe_prune(self, run: _Run, i: int) -> None:
        """Drop low-forward-probability states (never from the final set:
        pruning runs only when a set is about to be extended past)."""
        opts = run.options
        if opts.prune_beam is None and opts.prune_ratio is None:
            return
        st = run.chart.sets[i]
        if len(st.states) <= 1:
            return
        ranked = sorted(st.states.items(), key=lambda kv: -kv[1].alpha)
        if opts.prune_beam is not None:
            keep = {k for k, _ in ranked[:opts.prune_beam]}
        else:
            top = ranked[0][1].alpha
            keep = {k for k, s in ranked if s.alpha >= opts.prune_ratio * top}
        if len(keep) == len(st.states):
            return
        run.pruned = True
        st.states = {k: s for k, s in st.states.items() if k in keep}
        st.by_next = {}
        st.completes_by_lhs = {}
        st.wilds = [w for w in st.wilds if ("w", w.rule.rhs_codes[:-1]) in st.states]
        for s in st.states.values():
            codes = s.rule.rhs_codes
            if s.dot < len(codes):
                st.by_next.setdefault(codes[s.dot], []).append(s)
            elif s.rule.lhs is not None:
                st.completes_by_lhs.setdefault(s.rule.lhs.index, []).append(s)

    # -- empty input -------------------------------------------------------------

    def _empty_input_result(self, mode, opts) -> ParseResult:
        tables = self.tables
        e_s = float(tables.eps[self.grammar.start.index])
        chart = Chart(tables, mode=mode)
        chart.insert(0, DummyRule("start", (self.grammar.start.index,)),
                     0, 0, 1.0, 1.0, 1.0, None, True)
        accepted = e_s > 0.0
        res = ParseResult(chart=chart, accepted=accepted,
                          sentence_prob=e_s if accepted else 0.0,
                          prefix_probs=[])
        if accepted and opts.compute_viterbi:
            res.viterbi_prob = float(tables.eps_best[self.grammar.start.index])
            res.viterbi_tree = _tree_from_null(
                self.grammar, tables, self.grammar.start.index)
        if mode == "robust":
            res.partial_parses = []
        return res

    # -- bracketed inputs ----------------------------------------------------------

    def _parse_bracketed(self, tokens, mode, opts) -> ParseResult:
        """Shared-chart version of the recursive bracketed protocol.

        An opening bracket copies the current set's incomplete states into a
        fresh set that acts as the child's initial set (the parent performs
        no prediction of its own at that position); a closing bracket copies
        the child's final complete states forward and lets the parent
        complete with them.  Completion never uses sources that start before
        the current bracket scope, which bars constituents from crossing the
        left phrase boundary; the copy-on-close rule bars the right one.
        """
        _check_brackets(tokens)
        run = self.begin(mode, opts)
        chart = run.chart
        for tok in tokens:
            if run.rejected_at is not None:
                break
            i = chart.n_sets - 1
            if tok == OPEN_BRACKET:
                chart.new_set()
                pairs = []
                for s in list(chart.sets[i].states.values()):
                    if s.is_complete:
                        continue
                    pairs.append((s, _copy_state(chart, i + 1, s)))
                chart.transitions.append(("open", pairs))
                run.scope_stack.append(i + 1)
            elif tok == CLOSE_BRACKET:
                chart.new_set()
                child_base = run.scope_stack[-1]
                pairs = []
                seeds = []
                # Complete returns that start before the child's initial set
                # still owe their completion work at the parent level (the
                # child's scope barred it); ones starting inside finished all
                # their work in the child, and carrying them forward would
                # redo it.  Incomplete states survive iff they start at or
                # before the child's initial set: anything later would become
                # a constituent crossing the right phrase boundary.
                for s in list(chart.sets[i].states.values()):
                    if s.is_complete:
                        if s.start >= child_base:
                            continue
                        copy = _copy_state(chart, i + 1, s)
                        pairs.append((s, copy))
                        if copy.is_rule_state and not copy.queued \
                                and copy.gamma_source > 0.0:
                            copy.queued = True
                            seeds.append(copy)
                    elif s.start <= child_base:
                        pairs.append((s, _copy_state(chart, i + 1, s)))
                chart.transitions.append(("close", pairs))
                run.scope_stack.pop()
                self._complete(run, i + 1, seeds)
                if opts.compute_viterbi:
                    self._viterbi_pass(chart, i + 1)
                if mode == "robust":
                    self._wildcard_pass(chart, i + 1)
            else:
                self.extend(run, tok)
        return self.result(run)

    # -- result extraction -----------------------------------------------------------

    def _viterbi_tree(self, chart: Chart, final: EarleyState) -> ParseTree:
        link = final.vlink
        if link is None or link[0] != "comp":
            raise ParseError("viterbi links missing; parse ran without viterbi")
        return self._build_tree(chart, link[1], chart.n_sets - 1)

    def _build_tree(self, chart: Chart, state: EarleyState, i: int) -> ParseTree:
        """Back-trace one complete state into its parse tree."""
        g = chart.grammar
        rule = state.rule
        symbols = g.nonterminals + g.terminals
        children = []
        cur, pos = state, i
        while cur.dot > 0:
            link = cur.vlink
            code = rule.rhs_codes[cur.dot - 1]
            if link is None:
                raise ParseError("viterbi links missing; parse ran without viterbi")
            kind = link[0]
            if kind == "comp":
                src = link[1]
                children.append(self._build_tree(chart, src, pos))
                pos = src.start
            elif kind == "eps":
                children.append(_tree_from_null(g, chart.tables, code))
            elif kind == "scan":
                children.append(ParseTree(symbols[code]))
                pos -= 1
            else:
                raise ParseError(f"unexpected viterbi link {kind!r}")
            prev = chart.sets[pos].states.get(_key_at(rule, cur.dot - 1, cur.start))
            if prev is None:
                raise ParseError("viterbi back-trace fell off the chart")
            cur = prev
        children.reverse()
        return ParseTree(rule.lhs, children, rule)

    def _partial_parses(self, run: _Run) -> list:
        chart = run.chart
        if chart.n_sets == 1:
            return []
        consumed = _consumed_states(chart, self.tables)
        maximal_seqs = _maximal_sequences(chart, consumed)
        out = []
        for w in sorted(chart.sets[-1].wilds, key=lambda s: s.seq):
            labels = tuple(_nt_name(chart.grammar, c)
                           for c in w.rule.rhs_codes[:-1])
            if not labels:
                continue
            out.append(PartialParse(
                labels=labels, split_points=tuple(_wildcard_splits(w)),
                inner_prob=w.gamma, viterbi_prob=w.viterbi,
                maximal=labels in maximal_seqs))
        return out


# -- helpers ------------------------------------------------------------------


def _check_brackets(tokens) -> None:
    depth = 0
    for t, tok in enumerate(tokens):
        if tok == OPEN_BRACKET:
            depth += 1
            if t + 1 < len(tokens) and tokens[t + 1] == CLOSE_BRACKET:
                raise ParseError("empty bracketed span")
        elif tok == CLOSE_BRACKET:
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced brackets")
    if depth != 0:
        raise ParseError("unbalanced brackets")
    if all(tok in (OPEN_BRACKET, CLOSE_BRACKET) for tok in tokens):
        raise ParseError("no terminals in bracketed input")


def _key_at(rule, dot, start):
    if isinstance(rule, DummyRule):
        if rule.kind == "wild":
            return ("w", rule.rhs_codes[:-1])
        return (rule.kind[0], rule.rhs_codes, dot, start)
    return (rule.index, dot, start)


def _copy_state(chart: Chart, i: int, s: EarleyState) -> EarleyState:
    copy, was_new, _ = chart.sets[i].insert_or_accumulate(
        s.rule, s.dot, s.start, s.alpha, s.gamma, s.viterbi, s.vlink, False)
    copy.copied = True
    if copy.is_complete:
        copy.gamma_source += s.gamma_source
    return copy


def _nt_name(g: Grammar, code: int) -> str:
    return g.nonterminals[code].name if 0 <= code < g.n_nt \
        else g.terminals[code - g.n_nt].name


def _tree_from_null(g: Grammar, tables: ClosureTables, code: int) -> ParseTree:
    def build(node):
        label, kids, prod = node
        return ParseTree(label, [build(k) for k in kids], prod)

    return build(best_null_tree(g, tables.eps_best_rule, code))


def _wildcard_splits(w: EarleyState):
    splits = []
    cur = w
    while cur is not None and cur.vlink is not None and cur.vlink[0] == "wcomp":
        src, prev = cur.vlink[1], cur.vlink[2]
        splits.append(src.start)
        cur = prev
    splits.reverse()
    return splits[1:] if splits else []


def _consumed_states(chart: Chart, tables: ClosureTables):
    """id() set of complete rule states that take part in some larger
    completed rule constituent.

    A state is "alive" if following its pending work (scans, spontaneous
    shifts, completions of its expected nonterminal) can end in a completed
    rule constituent.  A complete state is consumed if some predecessor
    reachable through the unit-production closure advances over it into an
    alive or completed rule state.
    """
    sets = chart.sets
    n_nt = chart.grammar.n_nt
    alive: set[int] = set()

    for i in range(len(sets) - 1, -1, -1):
        st = sets[i]
        tr = chart.transitions[i] if i < len(chart.transitions) else None
        open_source = tr is not None and tr[0] == "open"
        for s in sorted(st.states.values(), key=lambda s: -s.dot):
            if s.is_complete:
                if s.is_rule_state:
                    alive.add(id(s))
                continue
            key_next = _key_at(s.rule, s.dot + 1, s.start)
            nxt = s.next_code
            if tr is not None and tr[0] == "scan" and nxt == tr[1]:
                target = sets[i + 1].states.get(key_next)
                if target is not None and id(target) in alive:
                    alive.add(id(s))
                    continue
            sib = st.states.get(key_next)
            if sib is not None and not open_source and id(sib) in alive:
                alive.add(id(s))
                continue
            if isinstance(nxt, int) and 0 <= nxt < n_nt:
                for m in range(i + 1, len(sets)):
                    target = sets[m].states.get(key_next)
                    if target is not None and id(target) in alive:
                        alive.add(id(s))
                        break
        if tr is not None and tr[0] in ("open", "close"):
            for orig, copy in tr[1]:
                if id(copy) in alive:
                    alive.add(id(orig))

    consumed: set[int] = set()
    ru_cols = tables.ru_cols
    for i, st in enumerate(sets):
        for s in st.states.values():
            if not (s.is_complete and s.is_rule_state):
                continue
            hit = False
            for z, _w in ru_cols[s.rule.lhs.index]:
                for p in sets[s.start].by_next.get(z, ()):
                    if not p.is_rule_state:
                        continue
                    r = st.states.get(_key_at(p.rule, p.dot + 1, p.start))
                    if r is not None and ((r.is_complete and r.is_rule_state)
                                          or id(r) in alive):
                        hit = True
                        break
                if hit:
                    break
            if hit:
                consumed.add(id(s))
    return consumed


def _maximal_sequences(chart: Chart, consumed) -> set:
    """Label sequences assembled from unconsumed complete rule states."""
    sets = chart.sets
    seqs: list[set[tuple]] = [set() for _ in range(len(sets))]
    seqs[0].add(())
    for i in range(1, len(sets)):
        for s in sets[i].states.values():
            if not (s.is_complete and s.is_rule_state) or id(s) in consumed:
                continue
            name = s.rule.lhs.name
            for prefix in seqs[s.start]:
                seqs[i].add(prefix + (name,))
    return seqs[-1]


# -- module-level convenience functions ------------------------------------------


def parse(grammar: Grammar, tables: ClosureTables, request: ParseRequest) -> ParseResult:
    return EarleyParser(grammar, tables).parse_request(request)


def parse_bracketed(grammar: Grammar, tables: ClosureTables, tokens,
                    options: ParseOptions | None = None) -> ParseResult:
    return EarleyParser(grammar, tables, options).parse(list(tokens))


def parse_robust(grammar: Grammar, tables: ClosureTables, tokens,
                 options: ParseOptions | None = None):
    """Robust parse.  Unknown tokens are covered by implicit fresh
    preterminals with probability 1.  Returns (chart, partial parses)."""
    tokens = list(tokens)
    unknown = [t for t in dict.fromkeys(tokens)
               if grammar.terminal_code(t) is None
               and t not in (OPEN_BRACKET, CLOSE_BRACKET)]
    if unknown:
        rules = grammar.rule_triples()
        for t in unknown:
            name = f"UNK_{t}"
            while name in grammar.symbols:
                name += "_"
            rules.append((name, (t,), 1.0))
        grammar = Grammar(rules, start=grammar.start.name)
        tables = build_closure_tables(grammar)
    result = EarleyParser(grammar, tables, options).parse(tokens, mode="robust")
    return result.chart, result.partial_parses


def next_word_distribution(grammar: Grammar, tables: ClosureTables,
                           prefix_tokens) -> dict:
    return EarleyParser(grammar, tables).next_word_distribution(prefix_tokens)


def substring_probability(result: ParseResult, nonterminal: str,
                          k: int, i: int) -> float:
    """Sum of inner probabilities over complete states of the nonterminal
    spanning positions k..i.  Returns 0 when no derivation places the
    nonterminal there; the value is then not computed rather than known to
    be zero."""
    chart = result.chart
    if not (0 <= k <= i < chart.n_sets):
        raise IndexError("substring indices out of range")
    sym = chart.grammar.symbols.get(nonterminal)
    if sym is None or not sym.is_nonterminal:
        raise ParseError(f"{nonterminal!r} is not a nonterminal")
    total = 0.0
    for s in chart.sets[i].completes_by_lhs.get(sym.index, ()):
        if s.start == k:
            total += s.gamma
    return total


def viterbi_parse(result: ParseResult):
    """(tree, probability) of the most likely derivation; the tree's rule
    probabilities multiply back to the probability."""
    if not result.accepted:
        raise ParseError("no viterbi parse: input was not accepted")
    if result.viterbi_tree is None:
        raise ParseError("viterbi links missing; parse ran without viterbi")
    return result.viterbi_tree, result.viterbi_prob
