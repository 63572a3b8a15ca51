"""Brute-force reference over small grammars.

Enumerates leftmost derivations outright (highest probability first) and
answers string, prefix, Viterbi, and expected-count queries by summing over
the enumeration.  Prefix probabilities come with an explicit residual bound
covering whatever mass the enumeration had to leave behind, instead of
pretending exactness.  Meant for tests and the CLI --verify flag only;
efficiency is a non-goal.
"""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field

from .grammar import Grammar, Production


class OracleBudgetError(RuntimeError):
    """Enumeration hit its expansion cap with too much mass outstanding."""


@dataclass(frozen=True)
class OracleConfig:
    max_len: int = 8                 # yield-length cap
    mass_tol: float = 1e-9          # acceptable unaccounted probability mass
    max_expansions: int = 200_000   # safety cap on frontier expansions


@dataclass
class Derivation:
    rules: tuple                    # productions in leftmost-application order
    prob: float
    tokens: tuple                   # terminal yield (names)


@dataclass
class Enumeration:
    derivations: list
    pruned_len_mass: float          # mass discarded for exceeding max_len
    pruned_prob_mass: float         # mass discarded below the probability floor
    by_yield: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.pruned_len_mass + self.pruned_prob_mass

    def yield_probs(self) -> dict:
        out: dict[tuple, float] = defaultdict(float)
        for d in self.derivations:
            out[d.tokens] += d.prob
        return dict(out)


def enumerate_derivations(g: Grammar, cfg: OracleConfig | None = None,
                          start: str | None = None) -> Enumeration:
    """All leftmost derivations with yield length <= cfg.max_len.

    Sentential forms are expanded highest-probability-first; forms whose
    guaranteed yield already exceeds the cap, or whose probability falls
    below mass_tol/1000, are pruned with their mass recorded.  Raises
    OracleBudgetError when the expansion cap is hit while the outstanding
    frontier mass still exceeds mass_tol.
    """
    cfg = cfg or OracleConfig()
    start_sym = g.symbols[start] if start is not None else g.start
    floor = cfg.mass_tol * 1e-3

    done: list[Derivation] = []
    pruned_len = 0.0
    pruned_prob = 0.0
    counter = 0
    # heap entries: (-prob, counter, form tuple of Symbols, rules tuple)
    heap = [(-1.0, 0, (start_sym,), ())]
    expansions = 0
    while heap:
        negp, _, form, rules = heapq.heappop(heap)
        prob = -negp
        expansions += 1
        if expansions > cfg.max_expansions:
            outstanding = prob + sum(-e[0] for e in heap)
            if outstanding > cfg.mass_tol:
                raise OracleBudgetError(
                    f"enumeration cap {cfg.max_expansions} hit with "
                    f"{outstanding:.3e} probability mass outstanding")
            pruned_prob += outstanding
            break
        nt_pos = next((k for k, s in enumerate(form) if s.is_nonterminal), None)
        if nt_pos is None:
            done.append(Derivation(rules, prob, tuple(s.name for s in form)))
            continue
        n_terminals = sum(1 for s in form if not s.is_nonterminal)
        for p in g.productions_by_lhs[form[nt_pos].index]:
            np_ = prob * p.prob
            new_form = form[:nt_pos] + p.rhs + form[nt_pos + 1:]
            added_terminals = sum(1 for s in p.rhs if not s.is_nonterminal)
            if n_terminals + added_terminals > cfg.max_len:
                pruned_len += np_
                continue
            if np_ < floor:
                pruned_prob += np_
                continue
            counter += 1
            heapq.heappush(heap, (-np_, counter, new_form, rules + (p,)))

    enum = Enumeration(done, pruned_len, pruned_prob)
    enum.by_yield = enum.yield_probs()
    return enum


def string_prob(g: Grammar, tokens, cfg: OracleConfig | None = None,
                enum: Enumeration | None = None) -> float:
    tokens = tuple(tokens)
    if enum is None:
        cfg = cfg or OracleConfig(max_len=max(len(tokens), 1))
        enum = enumerate_derivations(g, cfg)
    return enum.by_yield.get(tokens, 0.0)


def prefix_prob(g: Grammar, tokens, cfg: OracleConfig | None = None,
                enum: Enumeration | None = None):
    """(lower bound, error bar): sums enumerated sentences extending the
    prefix; the true value lies within [lower, lower + error]."""
    tokens = tuple(tokens)
    if enum is None:
        enum = enumerate_derivations(g, cfg or OracleConfig())
    lower = 0.0
    for y, p in enum.by_yield.items():
        if y[:len(tokens)] == tokens:
            lower += p
    return lower, enum.residual


def viterbi(g: Grammar, tokens, cfg: OracleConfig | None = None,
            enum: Enumeration | None = None):
    """(best derivation, probability) among derivations of the string."""
    tokens = tuple(tokens)
    if enum is None:
        cfg = cfg or OracleConfig(max_len=max(len(tokens), 1))
        enum = enumerate_derivations(g, cfg)
    best = None
    for d in enum.derivations:
        if d.tokens == tokens and (best is None or d.prob > best.prob):
            best = d
    return best, (best.prob if best is not None else 0.0)


def expected_counts(g: Grammar, tokens, cfg: OracleConfig | None = None,
                    enum: Enumeration | None = None) -> dict:
    """Posterior-weighted rule use counts for one string."""
    tokens = tuple(tokens)
    if enum is None:
        cfg = cfg or OracleConfig(max_len=max(len(tokens), 1))
        enum = enumerate_derivations(g, cfg)
    total = 0.0
    counts: dict[Production, float] = defaultdict(float)
    for d in enum.derivations:
        if d.tokens != tokens:
            continue
        total += d.prob
        for r in d.rules:
            counts[r] += d.prob
    if total == 0.0:
        raise ValueError("string has zero probability; counts undefined")
    return {r: c / total for r, c in counts.items()}


# -- derivations as trees -----------------------------------------------------


def derivation_tree(d: Derivation):
    """Nested (production, children) tree of a leftmost derivation."""
    rules = list(d.rules)

    def build():
        p = rules.pop(0)
        children = []
        for s in p.rhs:
            if s.is_nonterminal:
                children.append(build())
            else:
                children.append(s.name)
        return (p, children)

    tree = build()
    if rules:
        raise ValueError("derivation has trailing rule applications")
    return tree


def constituent_spans(d: Derivation):
    """All (start, end) spans of nonterminal constituents, root included."""
    spans = []
    pos = [0]

    def walk(node):
        p, children = node
        begin = pos[0]
        for c in children:
            if isinstance(c, str):
                pos[0] += 1
            else:
                walk(c)
        spans.append((begin, pos[0]))

    walk(derivation_tree(d))
    return spans


def consistent_with_brackets(d: Derivation, brackets) -> bool:
    """True when no constituent crosses any of the (start, end) spans."""
    for begin, end in constituent_spans(d):
        for b, e in brackets:
            if begin < b < end < e or b < begin < e < end:
                return False
    return True


def bracket_spans(tokens):
    """(start, end) terminal spans of the bracket markers in a token list."""
    spans = []
    stack = []
    pos = 0
    for t in tokens:
        if t == "(":
            stack.append(pos)
        elif t == ")":
            spans.append((stack.pop(), pos))
        else:
            pos += 1
    return spans


def fully_bracketed(g: Grammar, d: Derivation):
    """Token list with every constituent of the derivation bracketed."""
    def walk(node):
        p, children = node
        out = ["("]
        for c in children:
            if isinstance(c, str):
                out.append(c)
            else:
                out.extend(walk(c))
        out.append(")")
        return out

    return walk(derivation_tree(d))


def sample_derivation(g: Grammar, rng, max_steps: int = 500):
    """One random leftmost derivation, or None if the cap is hit."""
    form = [g.start]
    rules = []
    tokens = []
    steps = 0
    while form:
        s = form.pop(0)
        if not s.is_nonterminal:
            tokens.append(s.name)
            continue
        steps += 1
        if steps > max_steps:
            return None
        prods = g.productions_by_lhs[s.index]
        r = rng.random() * sum(p.prob for p in prods)
        acc = 0.0
        chosen = prods[-1]
        for p in prods:
            acc += p.prob
            if r <= acc:
                chosen = p
                break
        rules.append(chosen)
        form = list(chosen.rhs) + form
    prob = 1.0
    for p in rules:
        prob *= p.prob
    return Derivation(tuple(rules), prob, tuple(tokens))
