"""Stochastic context-free grammars: representation, file format, diagnostics,
and probability-preserving transformations.

A grammar file is UTF-8 text with one production per line::

    # comment
    %start S
    S  -> NP VP [1.0]
    NP -> eps   [0.25]     # empty right-hand side ("eps" is reserved)
    NP -> a     [0.75]

Tokens are whitespace-separated.  A symbol is a nonterminal iff it occurs on
the left-hand side of at least one production; everything else is a terminal.
``( ) ? -> [ ]`` and ``eps`` are reserved and may not be used as symbol names.
The start symbol defaults to the first LHS and can be overridden with
``%start``.

Grammar objects are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

RESERVED_TOKENS = frozenset({"(", ")", "?", "->", "[", "]", "eps"})

#: per-LHS probability sums may drift this far from 1 before a grammar is
#: reported improper (EM intermediates accumulate rounding).
PROPERNESS_TOL = 1e-6

_PROB_RE = re.compile(r"^(.*?)\[([^\[\]]+)\]\s*$")


class GrammarError(ValueError):
    """Malformed grammar text or an ill-formed grammar."""


@dataclass(frozen=True)
class Symbol:
    """A grammar symbol with a dense integer handle.

    ``index`` is contiguous from 0 within each kind; ``code`` is a single
    dense handle over all symbols (nonterminals first, then terminals), which
    the parser uses for fast dispatch.
    """

    index: int
    name: str
    is_nonterminal: bool
    code: int

    def __repr__(self) -> str:
        return f"{self.name}"


class Production:
    """One rule ``lhs -> rhs`` with probability ``prob`` (linear space).

    Productions hash by identity; a grammar never contains two productions
    with the same (lhs, rhs).
    """

    __slots__ = ("index", "lhs", "rhs", "prob", "rhs_codes")

    def __init__(self, index: int, lhs: Symbol, rhs: tuple, prob: float):
        self.index = index
        self.lhs = lhs
        self.rhs = rhs
        self.prob = prob
        self.rhs_codes = tuple(s.code for s in rhs)

    @property
    def is_null(self) -> bool:
        return not self.rhs

    @property
    def is_unit(self) -> bool:
        return len(self.rhs) == 1 and self.rhs[0].is_nonterminal

    def __repr__(self) -> str:
        rhs = " ".join(s.name for s in self.rhs) if self.rhs else "eps"
        return f"{self.lhs.name} -> {rhs} [{self.prob!r}]"


class Grammar:
    """An immutable SCFG: symbol tables, productions, start symbol.

    Build one from ``(lhs, rhs, prob)`` name triples or via
    :func:`parse_grammar`.  Symbol codes: nonterminals get 0..n_nt-1 in order
    of first appearance, terminals follow.
    """

    def __init__(self, rules, start: str | None = None, *, merge: bool = False):
        rules = [(lhs, tuple(rhs), float(prob)) for lhs, rhs, prob in rules]
        if not rules:
            raise GrammarError("grammar has no productions")
        lhs_names = {lhs for lhs, _, _ in rules}

        names: list[str] = []
        seen = set()
        for lhs, rhs, _ in rules:
            for name in (lhs, *rhs):
                if name not in seen:
                    seen.add(name)
                    names.append(name)
        nt_names = [n for n in names if n in lhs_names]
        t_names = [n for n in names if n not in lhs_names]

        self.nonterminals = tuple(
            Symbol(i, n, True, i) for i, n in enumerate(nt_names)
        )
        self.terminals = tuple(
            Symbol(i, n, False, len(nt_names) + i) for i, n in enumerate(t_names)
        )
        self.n_nt = len(self.nonterminals)
        self.symbols = {s.name: s for s in self.nonterminals + self.terminals}

        prods: list[Production] = []
        by_key: dict[tuple, Production] = {}
        for lhs, rhs, prob in rules:
            if prob < 0:
                raise GrammarError(f"negative probability on {lhs} -> {' '.join(rhs)}")
            if prob == 0:
                log.warning("dropping zero-probability production %s -> %s",
                            lhs, " ".join(rhs) or "eps")
                continue
            key = (lhs, rhs)
            if key in by_key:
                if not merge:
                    raise GrammarError(
                        f"duplicate production {lhs} -> {' '.join(rhs) or 'eps'}")
                log.warning("merging duplicate production %s -> %s",
                            lhs, " ".join(rhs) or "eps")
                by_key[key].prob += prob
                continue
            p = Production(len(prods), self.symbols[lhs],
                           tuple(self.symbols[n] for n in rhs), prob)
            by_key[key] = p
            prods.append(p)
        if not prods:
            raise GrammarError("grammar has no productions with positive probability")
        self.productions = tuple(prods)

        start_name = start if start is not None else prods[0].lhs.name
        if start_name not in self.symbols or not self.symbols[start_name].is_nonterminal:
            raise GrammarError(f"start symbol {start_name!r} is not a nonterminal")
        self.start = self.symbols[start_name]

        by_lhs: list[list[Production]] = [[] for _ in range(self.n_nt)]
        for p in self.productions:
            by_lhs[p.lhs.index].append(p)
        self.productions_by_lhs = tuple(tuple(ps) for ps in by_lhs)

    # -- queries ----------------------------------------------------------

    def lhs_sums(self) -> dict[Symbol, float]:
        return {nt: sum(p.prob for p in self.productions_by_lhs[nt.index])
                for nt in self.nonterminals}

    def has_null_productions(self) -> bool:
        return any(p.is_null for p in self.productions)

    def rule_triples(self):
        """Value view of the rule set, for comparisons and rebuilding."""
        return [(p.lhs.name, tuple(s.name for s in p.rhs), p.prob)
                for p in self.productions]

    def terminal_code(self, token: str) -> int | None:
        s = self.symbols.get(token)
        if s is None or s.is_nonterminal:
            return None
        return s.code

    def __repr__(self) -> str:
        return (f"Grammar({len(self.productions)} productions, "
                f"{self.n_nt} nonterminals, start={self.start.name})")


@dataclass
class GrammarDiagnostics:
    """Health report from :func:`validate`; diagnostics, never failures."""

    improper_lhs: list = field(default_factory=list)   # (Symbol, probability sum)
    useless: set = field(default_factory=set)          # unreachable/unproductive NTs
    null_start: bool = False
    consistency_estimate: float = 0.0                  # max spectral radius of P_L, P_U

    @property
    def proper(self) -> bool:
        return not self.improper_lhs


# -- file format -----------------------------------------------------------


def parse_grammar(text: str, *, merge: bool = False, strict: bool = False,
                  strict_probs: bool = True) -> Grammar:
    """Parse grammar-file text into a :class:`Grammar`.

    ``merge`` sums probabilities of duplicate (lhs, rhs) lines instead of
    raising.  ``strict`` turns the improperness warning into an error.
    ``strict_probs=False`` admits weights outside (0, 1], for grammars meant
    to go through :func:`renormalize`.
    """
    rules = []
    start = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%start"):
            parts = line.split()
            if len(parts) != 2:
                raise GrammarError(f"line {lineno}: malformed %start directive")
            start = parts[1]
            continue
        m = _PROB_RE.match(line)
        if not m:
            raise GrammarError(f"line {lineno}: missing [probability]")
        head, prob_text = m.group(1), m.group(2)
        try:
            prob = float(prob_text)
        except ValueError:
            raise GrammarError(f"line {lineno}: bad probability {prob_text!r}") from None
        toks = head.split()
        if len(toks) < 2 or toks[1] != "->":
            raise GrammarError(f"line {lineno}: expected 'LHS -> ...'")
        lhs, rhs = toks[0], toks[2:]
        if rhs == ["eps"]:
            rhs = []
        for t in (lhs, *rhs):
            if t in RESERVED_TOKENS:
                raise GrammarError(f"line {lineno}: {t!r} is reserved")
        if strict_probs and prob > 1.0:
            raise GrammarError(f"line {lineno}: probability {prob} outside (0, 1]")
        rules.append((lhs, rhs, prob))
    try:
        g = Grammar(rules, start=start, merge=merge)
    except GrammarError:
        raise
    _check_properness(g, strict=strict)
    return g


def serialize(g: Grammar) -> str:
    """Emit grammar-file text; parse_grammar round-trips it bit-exactly."""
    lines = [f"%start {g.start.name}"]
    for p in g.productions:
        rhs = " ".join(s.name for s in p.rhs) if p.rhs else "eps"
        lines.append(f"{p.lhs.name} -> {rhs} [{p.prob!r}]")
    return "\n".join(lines) + "\n"


def _check_properness(g: Grammar, *, strict: bool) -> None:
    bad = [(nt, s) for nt, s in g.lhs_sums().items()
           if abs(s - 1.0) > PROPERNESS_TOL]
    if bad:
        msg = ", ".join(f"{nt.name}={s:.6g}" for nt, s in bad)
        if strict:
            raise GrammarError(f"improper grammar (per-LHS sums differ from 1): {msg}")
        log.warning("grammar is improper: %s", msg)


# -- diagnostics -----------------------------------------------------------


def validate(g: Grammar) -> GrammarDiagnostics:
    """Compute properness, uselessness, and consistency diagnostics.

    The consistency estimate is the larger of the spectral-radius estimates
    of the left-corner and unit-production matrices; values approaching or
    exceeding 1 indicate the closure may diverge.
    """
    from . import closures  # local import: closures builds on grammar

    d = GrammarDiagnostics()
    d.improper_lhs = [(nt, s) for nt, s in g.lhs_sums().items()
                      if abs(s - 1.0) > PROPERNESS_TOL]

    productive = _productive_set(g)
    reachable = _reachable_set(g, productive)
    d.useless = {nt for nt in g.nonterminals
                 if nt not in reachable or nt not in productive}

    eps = closures.epsilon_probs(g)
    d.null_start = eps.e[g.start.index] > 0.0
    pl = closures.left_corner_matrix(g, eps)
    pu = closures.unit_matrix(g, eps)
    d.consistency_estimate = max(closures.spectral_radius_estimate(pl),
                                 closures.spectral_radius_estimate(pu))
    return d


def _productive_set(g: Grammar) -> set:
    """Nonterminals that derive some terminal string (ε counts)."""
    productive = set()
    changed = True
    while changed:
        changed = False
        for p in g.productions:
            if p.lhs in productive:
                continue
            if all((not s.is_nonterminal) or s in productive for s in p.rhs):
                productive.add(p.lhs)
                changed = True
    return productive


def _reachable_set(g: Grammar, productive: set) -> set:
    """Nonterminals reachable from the start through all-productive rules."""
    reach = set()
    if g.start in productive:
        reach.add(g.start)
    frontier = [g.start]
    while frontier:
        x = frontier.pop()
        for p in g.productions_by_lhs[x.index] if x in productive else ():
            if any(s.is_nonterminal and s not in productive for s in p.rhs):
                continue
            for s in p.rhs:
                if s.is_nonterminal and s not in reach:
                    reach.add(s)
                    frontier.append(s)
    return reach


# -- transformations -------------------------------------------------------


def renormalize(g: Grammar) -> Grammar:
    """Divide each production's probability by its LHS total."""
    sums = g.lhs_sums()
    for nt, s in sums.items():
        if s <= 0:
            raise GrammarError(f"cannot renormalize: {nt.name} has zero total weight")
    rules = [(p.lhs.name, tuple(s.name for s in p.rhs), p.prob / sums[p.lhs])
             for p in g.productions]
    return Grammar(rules, start=g.start.name)


def eliminate_null(g: Grammar) -> Grammar:
    """Return an equivalent grammar without null productions.

    For every rule, variants are added with each subset of nullable RHS
    nonterminals deleted; a deleted occurrence contributes its ε-expansion
    probability, a kept nullable occurrence the complement.  Each LHS is then
    rescaled by 1/(1 - e_X), which makes every nonterminal a distribution
    over nonempty strings while preserving all sentence probabilities
    exactly.  When the start can derive ε a fresh start symbol carries the
    residual ε probability.

    Raises if the start symbol derives only ε.
    """
    from . import closures

    eps = closures.epsilon_probs(g).e
    e_start = eps[g.start.index]
    if e_start >= 1.0 - 1e-12:
        raise GrammarError("start symbol derives only the empty string")
    if not g.has_null_productions():
        return Grammar(g.rule_triples(), start=g.start.name)

    merged: dict[tuple, float] = {}
    for p in g.productions:
        lhs = p.lhs
        if eps[lhs.index] >= 1.0 - 1e-12:
            continue  # the nonterminal only derives ε; it disappears
        nullable_pos = [i for i, s in enumerate(p.rhs)
                        if s.is_nonterminal and eps[s.index] > 0.0]
        for drop in _subsets(nullable_pos):
            weight = p.prob
            rhs = []
            for i, s in enumerate(p.rhs):
                if i in drop:
                    weight *= eps[s.index]
                else:
                    if s.is_nonterminal and eps[s.index] > 0.0:
                        weight *= 1.0 - eps[s.index]
                    rhs.append(s.name)
            if not rhs:
                continue  # ε variants are deleted
            key = (lhs.name, tuple(rhs))
            merged[key] = merged.get(key, 0.0) + weight

    rules = [(lhs, rhs, w / (1.0 - eps[g.symbols[lhs].index]))
             for (lhs, rhs), w in merged.items()]

    start_name = g.start.name
    if e_start > 0.0:
        fresh = start_name + "'"
        while fresh in g.symbols:
            fresh += "'"
        rules.append((fresh, (start_name,), 1.0 - e_start))
        rules.append((fresh, (), e_start))
        start_name = fresh
    return Grammar(rules, start=start_name, merge=True)


def _subsets(items):
    for r in range(len(items) + 1):
        for combo in itertools.combinations(items, r):
            yield frozenset(combo)
