"""Per-grammar precomputations for collapsed prediction and completion.

Three kinds of tables are built once per grammar and shared by all parses:

* ε-expansion probabilities ``e[X]``: the probability that nonterminal X
  derives the empty string, the least fixpoint of a polynomial system.
* the probabilistic left-corner and unit-production relations and their
  reflexive transitive closures ``R = (I - P)^{-1}``, which replace the
  otherwise unbounded prediction and completion recursions with single
  matrix-weighted steps.
* a boolean nonterminal-by-terminal relation saying which terminals can
  start an expansion of which nonterminal, used for bottom-up filtering of
  predictions against the next input symbol.

All tables are immutable after construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grammar import Grammar, GrammarError, Production

log = logging.getLogger(__name__)

EPS_FIXPOINT_TOL = 1e-15
EPS_ITERATION_CAP = 10 ** 6
INVERSION_RESIDUAL_TOL = 1e-9
PIVOT_TOL = 1e-12


class ClosureError(GrammarError):
    """A closure computation failed (likely a divergent grammar)."""


@dataclass
class EpsilonProbs:
    """Least-fixpoint ε-expansion probabilities, indexed by nonterminal."""

    e: np.ndarray
    iterations: int


class NonterminalMatrix:
    """Sparse square matrix over nonterminals (row-major nonzeros)."""

    def __init__(self, dim: int, rows=None):
        self.dim = dim
        self.rows: list[dict[int, float]] = rows if rows is not None else [
            {} for _ in range(dim)]

    def add(self, i: int, j: int, value: float) -> None:
        if value != 0.0:
            self.rows[i][j] = self.rows[i].get(j, 0.0) + value

    def get(self, i: int, j: int) -> float:
        return self.rows[i].get(j, 0.0)

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        for i, row in enumerate(self.rows):
            for j, v in row.items():
                m[i, j] = v
        return m

    @classmethod
    def from_dense(cls, m: np.ndarray, tol: float = 0.0) -> "NonterminalMatrix":
        out = cls(m.shape[0])
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                if abs(m[i, j]) > tol:
                    out.rows[i][j] = float(m[i, j])
        return out

    def row_sums(self) -> list[float]:
        return [sum(r.values()) for r in self.rows]


class LeftCornerTerminalMatrix:
    """Boolean relation: (nonterminal, terminal) -> terminal can be the
    first symbol generated from the nonterminal."""

    def __init__(self, n_nt: int, n_t: int):
        self.n_nt = n_nt
        self.n_t = n_t
        self.rows: list[set[int]] = [set() for _ in range(n_nt)]  # terminal indices

    def set(self, nt: int, t: int) -> None:
        self.rows[nt].add(t)

    def get(self, nt: int, t: int) -> bool:
        return t in self.rows[nt]


def epsilon_probs(g: Grammar) -> EpsilonProbs:
    """Iterate the ε-expansion system to its least fixpoint.

    Starts from the direct null-production probabilities and substitutes
    until the largest change falls below ``EPS_FIXPOINT_TOL``; iterates are
    monotonically nondecreasing and bounded by 1.
    """
    n = g.n_nt
    e = np.zeros(n)
    # productions whose RHS is all nonterminals are the only contributors
    candidates: list[tuple[int, float, tuple[int, ...]]] = []
    for p in g.productions:
        if all(s.is_nonterminal for s in p.rhs):
            candidates.append((p.lhs.index, p.prob, tuple(s.index for s in p.rhs)))
            if not p.rhs:
                e[p.lhs.index] += p.prob
    if not any(not p.rhs for p in g.productions):
        return EpsilonProbs(e, 0)

    for it in range(1, EPS_ITERATION_CAP + 1):
        new = np.zeros(n)
        for lhs, prob, rhs in candidates:
            term = prob
            for r in rhs:
                term *= e[r]
                if term == 0.0:
                    break
            new[lhs] += term
        delta = float(np.max(np.abs(new - e)))
        e = new
        if delta <= EPS_FIXPOINT_TOL:
            return EpsilonProbs(e, it)
    raise ClosureError(
        f"epsilon fixpoint did not converge in {EPS_ITERATION_CAP} iterations "
        f"(residual {delta:.3e})")


def epsilon_viterbi(g: Grammar, eps: EpsilonProbs):
    """Max-probability ε-expansion per nonterminal, with the argmax rule.

    The summed probabilities in ``eps`` are the wrong quantity for Viterbi
    scoring of spontaneous dot shifts; this computes the max-product
    fixpoint instead and remembers which rule achieves it, so the best
    ε-subtree can be reconstructed.
    """
    n = g.n_nt
    best = np.zeros(n)
    best_rule: list[Production | None] = [None] * n
    candidates = [p for p in g.productions
                  if all(s.is_nonterminal and eps.e[s.index] > 0.0 for s in p.rhs)]
    for _ in range(10 ** 5):
        changed = False
        for p in candidates:
            v = p.prob
            for s in p.rhs:
                v *= best[s.index]
            if v > best[p.lhs.index]:
                best[p.lhs.index] = v
                best_rule[p.lhs.index] = p
                changed = True
        if not changed:
            break
    return best, best_rule


def best_null_tree(g: Grammar, best_rule, nt_index: int):
    """(label, children, production) nesting for the argmax ε-expansion."""
    p = best_rule[nt_index]
    if p is None:
        raise ClosureError(
            f"{g.nonterminals[nt_index].name} has no ε expansion")
    children = [best_null_tree(g, best_rule, s.index) for s in p.rhs]
    return (g.nonterminals[nt_index], children, p)


def left_corner_matrix(g: Grammar, eps: EpsilonProbs) -> NonterminalMatrix:
    """P_L: probability that an expansion of X starts (modulo ε prefixes)
    with nonterminal Y."""
    m = NonterminalMatrix(g.n_nt)
    e = eps.e
    for p in g.productions:
        weight = p.prob
        for s in p.rhs:
            if not s.is_nonterminal:
                break
            m.add(p.lhs.index, s.index, weight)
            if e[s.index] == 0.0:
                break
            weight *= e[s.index]
    return m


def unit_matrix(g: Grammar, eps: EpsilonProbs) -> NonterminalMatrix:
    """P_U: probability that a rule of X acts as a unit production to Y
    (all other RHS nonterminals expanding to ε)."""
    m = NonterminalMatrix(g.n_nt)
    e = eps.e
    for p in g.productions:
        if not p.rhs or not all(s.is_nonterminal for s in p.rhs):
            continue
        # product of e over all positions; a position with e == 0 can only
        # serve as the surviving symbol itself
        zero_pos = [i for i, s in enumerate(p.rhs) if e[s.index] == 0.0]
        if len(zero_pos) > 1:
            continue
        if len(zero_pos) == 1:
            i = zero_pos[0]
            w = p.prob
            for k, s in enumerate(p.rhs):
                if k != i:
                    w *= e[s.index]
            m.add(p.lhs.index, p.rhs[i].index, w)
        else:
            full = p.prob
            for s in p.rhs:
                full *= e[s.index]
            for i, s in enumerate(p.rhs):
                m.add(p.lhs.index, s.index, full / e[s.index])
    return m


def closure(m: NonterminalMatrix) -> NonterminalMatrix:
    """R = (I - m)^{-1}, via inversion of the reduced matrix.

    Only rows with any nonzero entry participate in higher powers of ``m``,
    so the inversion is restricted to those nonterminals and the result is
    recovered as R = I + R' * m (R' zero-padded).  Gaussian elimination with
    partial pivoting; a pivot below ``PIVOT_TOL`` or a closure residual
    above ``INVERSION_RESIDUAL_TOL`` reports a likely divergent grammar.
    """
    n = m.dim
    active = [i for i in range(n) if m.rows[i]]
    out = NonterminalMatrix(n)
    for i in range(n):
        out.rows[i][i] = 1.0
    if not active:
        return out

    k = len(active)
    pos = {nt: a for a, nt in enumerate(active)}
    reduced = np.eye(k)
    for a, i in enumerate(active):
        for j, v in m.rows[i].items():
            if j in pos:
                reduced[a, pos[j]] -= v
    rprime = _invert_with_pivoting(reduced)

    # R = I + (R' zero-padded) * m ; row i of the product needs R' row i.
    for a, i in enumerate(active):
        row = out.rows[i]
        for b, j in enumerate(active):
            coeff = float(rprime[a, b])
            if coeff == 0.0:
                continue
            for col, v in m.rows[j].items():
                row[col] = row.get(col, 0.0) + coeff * v
    for i in range(n):
        out.rows[i] = {j: v for j, v in out.rows[i].items() if v != 0.0}

    _check_closure_residual(m, out)
    return out


def _invert_with_pivoting(a: np.ndarray) -> np.ndarray:
    """Gauss-Jordan with partial pivoting; raises on tiny pivots."""
    k = a.shape[0]
    work = np.hstack([a.copy(), np.eye(k)])
    for col in range(k):
        pivot_row = col + int(np.argmax(np.abs(work[col:, col])))
        pivot = work[pivot_row, col]
        if abs(pivot) < PIVOT_TOL:
            raise ClosureError(
                "singular or near-singular closure matrix "
                f"(pivot {pivot:.3e}); the grammar's recursion likely diverges")
        if pivot_row != col:
            work[[col, pivot_row]] = work[[pivot_row, col]]
        work[col] /= work[col, col]
        for r in range(k):
            if r != col and work[r, col] != 0.0:
                work[r] -= work[r, col] * work[col]
    return work[:, k:]


def _check_closure_residual(m: NonterminalMatrix, r: NonterminalMatrix) -> None:
    """max-norm of (I - m) r - I must be small."""
    n = m.dim
    worst = 0.0
    for i in range(n):
        # row i of m*r
        mr: dict[int, float] = {}
        for j, v in m.rows[i].items():
            for col, rv in r.rows[j].items():
                mr[col] = mr.get(col, 0.0) + v * rv
        for col in set(r.rows[i]) | set(mr) | {i}:
            val = r.rows[i].get(col, 0.0) - mr.get(col, 0.0) - (1.0 if col == i else 0.0)
            worst = max(worst, abs(val))
    if worst > INVERSION_RESIDUAL_TOL:
        raise ClosureError(
            f"closure residual {worst:.3e} exceeds {INVERSION_RESIDUAL_TOL}; "
            "the grammar's recursion likely diverges")


def extended_left_corner(g: Grammar, rl: NonterminalMatrix,
                         eps: EpsilonProbs) -> LeftCornerTerminalMatrix:
    """Boolean product of the left-corner closure with the direct
    nonterminal-to-terminal corner relation."""
    plt = direct_terminal_corners(g, eps)
    out = LeftCornerTerminalMatrix(g.n_nt, len(g.terminals))
    for x in range(g.n_nt):
        row = out.rows[x]
        for y, v in rl.rows[x].items():
            if v != 0.0:
                row |= plt.rows[y]
    return out


def direct_terminal_corners(g: Grammar, eps: EpsilonProbs) -> LeftCornerTerminalMatrix:
    """(X, a) holds iff some X-production has terminal a after a nullable
    prefix."""
    out = LeftCornerTerminalMatrix(g.n_nt, len(g.terminals))
    e = eps.e
    for p in g.productions:
        for s in p.rhs:
            if not s.is_nonterminal:
                out.set(p.lhs.index, s.index)
                break
            if e[s.index] == 0.0:
                break
    return out


def spectral_radius_estimate(m: NonterminalMatrix, iterations: int = 200) -> float:
    """Power-iteration estimate of the spectral radius (diagnostic only)."""
    n = m.dim
    if n == 0 or all(not r for r in m.rows):
        return 0.0
    v = np.full(n, 1.0 / max(n, 1))
    radius = 0.0
    for _ in range(iterations):
        nv = np.zeros(n)
        for i, row in enumerate(m.rows):
            acc = 0.0
            for j, val in row.items():
                acc += val * v[j]
            nv[i] = acc
        norm = float(np.max(np.abs(nv)))
        if norm == 0.0:
            return 0.0
        radius = norm
        v = nv / norm
    return radius


class ClosureTables:
    """Everything a parse needs, computed once per grammar.

    Besides the public tables this carries flattened sparse views tuned for
    the parser's hot loops: per-row left-corner lists, per-column
    unit-closure lists, and per-terminal admissible-nonterminal sets.
    """

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.eps_info = epsilon_probs(grammar)
        self.eps = self.eps_info.e
        self.pl = left_corner_matrix(grammar, self.eps_info)
        self.rl = closure(self.pl)
        self.pu = unit_matrix(grammar, self.eps_info)
        self.ru = closure(self.pu)
        self.plt = direct_terminal_corners(grammar, self.eps_info)
        self.rlt = extended_left_corner(grammar, self.rl, self.eps_info)
        self.eps_best, self.eps_best_rule = epsilon_viterbi(grammar, self.eps_info)

        n = grammar.n_nt
        self.rl_rows = [sorted(self.rl.rows[z].items()) for z in range(n)]
        ru_cols: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for z in range(n):
            for y, v in self.ru.rows[z].items():
                ru_cols[y].append((z, v))
        self.ru_cols = [sorted(c) for c in ru_cols]
        # terminal index -> set of nonterminal indices that can start with it
        self.corner_nts: list[frozenset[int]] = []
        for t in range(len(grammar.terminals)):
            self.corner_nts.append(
                frozenset(x for x in range(n) if t in self.rlt.rows[x]))
        self.nullable = self.eps > 0.0

    def rlt_ok(self, nt_index: int, terminal_index: int) -> bool:
        return terminal_index in self.rlt.rows[nt_index]


def build_closure_tables(g: Grammar) -> ClosureTables:
    return ClosureTables(g)
