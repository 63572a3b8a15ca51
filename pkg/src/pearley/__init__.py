"""Probabilistic Earley parsing for stochastic context-free grammars.

Incremental prefix and sentence probabilities, Viterbi parses, rule
probability estimation by EM, bracketed-input parsing, and robust partial
parsing, with a brute-force oracle for verification.
"""

from .grammar import (Grammar, GrammarDiagnostics, GrammarError, Production,
                      Symbol, eliminate_null, parse_grammar, renormalize,
                      serialize, validate)
from .closures import (ClosureTables, build_closure_tables, closure,
                       epsilon_probs, extended_left_corner,
                       left_corner_matrix, unit_matrix)
from .chart import Chart, CompletionQueue, EarleyState, StateSet, dump_chart
from .parser import (EarleyParser, ParseError, ParseOptions, ParseRequest,
                     ParseResult, ParseTree, PartialParse,
                     next_word_distribution, parse, parse_bracketed,
                     parse_robust, substring_probability, viterbi_parse)
from .estimation import (ExpectedCounts, OuterAnnotations, TrainingReport,
                         backward_pass, em_step, expected_counts, train)
from . import oracle

__all__ = [
    "Grammar", "GrammarDiagnostics", "GrammarError", "Production", "Symbol",
    "parse_grammar", "serialize", "validate", "renormalize", "eliminate_null",
    "ClosureTables", "build_closure_tables", "epsilon_probs",
    "left_corner_matrix", "unit_matrix", "closure", "extended_left_corner",
    "Chart", "StateSet", "EarleyState", "CompletionQueue", "dump_chart",
    "EarleyParser", "ParseOptions", "ParseRequest", "ParseResult",
    "ParseTree", "PartialParse", "ParseError", "parse", "parse_bracketed",
    "parse_robust", "next_word_distribution", "substring_probability",
    "viterbi_parse", "OuterAnnotations", "ExpectedCounts", "TrainingReport",
    "backward_pass", "expected_counts", "em_step", "train", "oracle",
]
