"""Earley chart: state sets with accumulate-on-insert probability semantics
and the start-index-prioritized completion queue.

Each state carries three probabilities:

* ``alpha`` – forward probability: expected occurrences of the state over
  all parser paths generating the input so far,
* ``gamma`` – inner probability: probability mass of the substring spanned
  by the state's expanded prefix, given its production choice,
* ``viterbi`` – the max-probability counterpart of gamma, with a back link.

alpha and gamma only ever grow (contributions are summed); viterbi is
updated on strict improvement only, so ties keep the first-established
link under the deterministic processing order.

A chart is owned by a single parse and must not be mutated concurrently;
finished charts are safe to share read-only.
"""

from __future__ import annotations

from collections import deque

#: sentinel rhs code for the "any completed nonterminal" slot of wildcard states
WILDCARD = -1

SCAN_LINK = ("scan",)
EPS_LINK = ("eps",)


class DummyRule:
    """Pseudo-production with an empty left-hand side.

    ``kind`` is ``"start"`` for the sentence dummy, ``"seed"`` for robust
    per-position seeds, and ``"wild"`` for wildcard states whose rhs is the
    sequence of collected nonterminals followed by the wildcard slot.
    """

    __slots__ = ("kind", "rhs_codes", "prob")

    def __init__(self, kind: str, rhs_codes: tuple):
        self.kind = kind
        self.rhs_codes = rhs_codes
        self.prob = 1.0

    @property
    def lhs(self):
        return None

    def __repr__(self) -> str:
        return f"DummyRule({self.kind}, {self.rhs_codes})"


class EarleyState:
    __slots__ = ("rule", "dot", "start", "alpha", "gamma", "viterbi", "vlink",
                 "gamma_source", "queued", "copied", "seq")

    def __init__(self, rule, dot: int, start: int, seq: int):
        self.rule = rule
        self.dot = dot
        self.start = start
        self.alpha = 0.0
        self.gamma = 0.0
        self.viterbi = 0.0
        self.vlink = None
        # part of gamma a complete state may pass on when used as a
        # completion source; flows already embodied in the unit-production
        # closure factors are excluded to avoid double counting
        self.gamma_source = 0.0
        self.queued = False
        self.copied = False
        self.seq = seq

    @property
    def is_complete(self) -> bool:
        # wildcard states never complete: their dot never passes the slot
        return self.dot == len(self.rule.rhs_codes)

    @property
    def next_code(self):
        codes = self.rule.rhs_codes
        return codes[self.dot] if self.dot < len(codes) else None

    @property
    def is_rule_state(self) -> bool:
        return not isinstance(self.rule, DummyRule)

    @property
    def lhs_code(self):
        lhs = self.rule.lhs
        return lhs.index if lhs is not None else None

    def key(self):
        r = self.rule
        if isinstance(r, DummyRule):
            if r.kind == "wild":
                return ("w", r.rhs_codes[:-1])
            return (r.kind[0], r.rhs_codes, self.dot, self.start)
        return (r.index, self.dot, self.start)

    def __repr__(self) -> str:
        return f"State({self.key()}, a={self.alpha:.6g}, g={self.gamma:.6g})"


class StateSet:
    """All states at one input position, keyed for accumulate-on-insert."""

    __slots__ = ("position", "states", "by_next", "completes_by_lhs", "wilds",
                 "scanned_alpha_sum", "_seq")

    def __init__(self, position: int):
        self.position = position
        self.states: dict = {}
        self.by_next: dict = {}            # next-symbol code -> [states]
        self.completes_by_lhs: dict = {}   # lhs nonterminal index -> [states]
        self.wilds: list = []
        self.scanned_alpha_sum = 0.0
        self._seq = 0

    def insert_or_accumulate(self, rule, dot: int, start: int,
                             d_alpha: float, d_gamma: float, d_viterbi: float,
                             vlink, genuine: bool):
        """Create or update the state for (rule, dot, start).

        Returns ``(state, was_new, viterbi_improved)``.  alpha and gamma are
        summed; viterbi is maximized with the link replaced only on strict
        improvement.  ``genuine`` marks gamma contributions a complete state
        may later propagate as a completion source.
        """
        if isinstance(rule, DummyRule):
            key = (rule.kind[0], rule.rhs_codes, dot, start) \
                if rule.kind != "wild" else ("w", rule.rhs_codes[:-1])
        else:
            key = (rule.index, dot, start)
        st = self.states.get(key)
        improved = False
        if st is None:
            st = EarleyState(rule, dot, start, self._seq)
            self._seq += 1
            st.alpha = d_alpha
            st.gamma = d_gamma
            st.viterbi = d_viterbi
            st.vlink = vlink
            improved = d_viterbi > 0.0
            self.states[key] = st
            codes = rule.rhs_codes
            if dot < len(codes):
                self.by_next.setdefault(codes[dot], []).append(st)
            elif rule.lhs is not None:
                self.completes_by_lhs.setdefault(rule.lhs.index, []).append(st)
            if isinstance(rule, DummyRule) and rule.kind == "wild":
                self.wilds.append(st)
            if genuine and st.is_complete:
                st.gamma_source = d_gamma
            return st, True, improved
        st.alpha += d_alpha
        st.gamma += d_gamma
        if genuine and st.is_complete:
            st.gamma_source += d_gamma
        if d_viterbi > st.viterbi:
            st.viterbi = d_viterbi
            st.vlink = vlink
            improved = True
        return st, False, improved

    def rule_states(self):
        for st in self.states.values():
            if st.is_rule_state:
                yield st

    def complete_states(self):
        for st in self.states.values():
            if st.is_complete:
                yield st


class CompletionQueue:
    """Buckets of complete states, drained highest start index first,
    first-in-first-out within a bucket.

    A state is enqueued only once; by the bucket discipline, every
    contribution to its source gamma from states with strictly higher start
    index has been applied before it is dequeued.
    """

    def __init__(self):
        self.buckets: dict[int, deque] = {}
        self._starts: list[int] = []   # kept sorted ascending

    def push(self, state: EarleyState) -> None:
        b = self.buckets.get(state.start)
        if b is None:
            b = deque()
            self.buckets[state.start] = b
            # insertion sort; bucket counts are tiny
            self._starts.append(state.start)
            self._starts.sort()
        b.append(state)

    def pop(self) -> EarleyState:
        while self._starts:
            start = self._starts[-1]
            b = self.buckets[start]
            if b:
                return b.popleft()
            self._starts.pop()
            del self.buckets[start]
        raise IndexError("pop from empty completion queue")

    def __bool__(self) -> bool:
        return any(self.buckets.get(s) for s in self._starts)


def drain(queue: CompletionQueue, visit) -> None:
    """Visit states highest-start-first, FIFO within a start index.

    ``visit`` may push further states; they land in their own buckets and
    are drained in order.
    """
    while queue:
        visit(queue.pop())


class Chart:
    """State sets for positions 0..n plus per-position transition records.

    ``transitions[i]`` describes how set i+1 was obtained from set i:
    ``("scan", terminal_code)`` for ordinary input symbols, or
    ``("open"|"close", [(source_state, copy_state), ...])`` for bracket
    markers, which copy states across instead of scanning.  ``scope_base[i]``
    records the bracket scope floor in force when completion ran at set i;
    the backward pass must respect the same floor.
    """

    def __init__(self, tables, mode: str = "standard"):
        self.tables = tables
        self.grammar = tables.grammar
        self.mode = mode
        self.sets: list[StateSet] = [StateSet(0)]
        self.transitions: list = []
        self.scope_base: list[int] = [0]
        self.terminal_positions: list[int] = []   # set index after each terminal

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    def new_set(self) -> StateSet:
        s = StateSet(len(self.sets))
        self.sets.append(s)
        self.scope_base.append(self.scope_base[-1])
        return s

    def pop_set(self) -> None:
        self.sets.pop()
        self.scope_base.pop()
        self.transitions.pop()
        if self.terminal_positions and self.terminal_positions[-1] >= len(self.sets):
            self.terminal_positions.pop()

    def insert(self, i: int, rule, dot: int, start: int,
               d_alpha: float, d_gamma: float, d_viterbi: float,
               vlink, genuine: bool):
        """Accumulating insert with spontaneous dot shifting.

        After the requested insertion the dot is pushed over any following
        nullable nonterminals, multiplying the summed probabilities by their
        ε-expansion probability and the viterbi value by the max-probability
        ε expansion.  The shift stops rather than create a complete state
        spanning the empty string (start == position), whose content is
        already carried by the ε-expansion tables.

        Returns (state at the requested dot, completed state or None,
        whether the completed state gained source gamma, whether its
        viterbi improved).
        """
        st_set = self.sets[i]
        tables = self.tables
        eps = tables.eps
        eps_best = tables.eps_best
        n_nt = self.grammar.n_nt
        codes = rule.rhs_codes
        length = len(codes)

        first = None
        completed = None
        gained_source = False
        completed_improved = False
        while True:
            state, was_new, improved = st_set.insert_or_accumulate(
                rule, dot, start, d_alpha, d_gamma, d_viterbi, vlink, genuine)
            if first is None:
                first = state
            if state.is_complete:
                completed = state
                gained_source = genuine and d_gamma != 0.0
                completed_improved = improved
                break
            if dot >= length:
                break
            nxt = codes[dot]
            if not (0 <= nxt < n_nt) or eps[nxt] == 0.0:
                break
            if start == i and dot + 1 == length:
                break  # no empty-span complete states
            d_alpha *= eps[nxt]
            d_gamma *= eps[nxt]
            d_viterbi *= eps_best[nxt]
            dot += 1
            vlink = EPS_LINK
        return first, completed, gained_source, completed_improved

    def final_dummy(self):
        """The complete sentence dummy in the last set, if present."""
        last = self.sets[-1]
        for st in last.states.values():
            if (isinstance(st.rule, DummyRule) and st.rule.kind == "start"
                    and st.is_complete):
                return st
        return None


def dump_chart(chart: Chart, out=None) -> str:
    """Debug rendering, one line per state per set."""
    g = chart.grammar
    names = [s.name for s in g.nonterminals] + [s.name for s in g.terminals]

    def code_name(c):
        return "?" if c == WILDCARD else names[c]

    lines = []
    for i, st_set in enumerate(chart.sets):
        lines.append(f"set {i}:")
        for st in sorted(st_set.states.values(),
                         key=lambda s: (s.start, _rule_order(s), s.dot)):
            r = st.rule
            lhs = r.lhs.name if r.lhs is not None else ""
            rhs = [code_name(c) for c in r.rhs_codes]
            dotted = " ".join(rhs[:st.dot] + ["."] + rhs[st.dot:])
            lines.append(
                f"{i}: {st.start} {lhs} -> {dotted}  "
                f"alpha={st.alpha!r} gamma={st.gamma!r} v={st.viterbi!r}")
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.write(text)
    return text


def _rule_order(st: EarleyState):
    r = st.rule
    if isinstance(r, DummyRule):
        return (-1, r.rhs_codes)
    return (r.index, ())
