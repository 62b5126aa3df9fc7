"""Neurlog: a neural probabilistic logic programming engine.

Pipeline: parse -> ground (query-directed SLD) -> complete -> compile to a
decision circuit -> evaluate under the probability or gradient semiring ->
train probabilistic and neural parameters jointly.
"""

from .terms import (
    AnnotatedDisjunction,
    Atom,
    Compound,
    Constant,
    Fixed,
    Learnable,
    Literal,
    NeuralAnnotation,
    NeurlogError,
    ProbabilisticFact,
    Program,
    Rule,
    Term,
    Variable,
    print_atom,
    print_literal,
    print_program,
    print_term,
)
from .parser import Diagnostic, parse_program, parse_query, parse_term_text

__all__ = [
    "AnnotatedDisjunction",
    "Atom",
    "Compound",
    "Constant",
    "Diagnostic",
    "Fixed",
    "Learnable",
    "Literal",
    "NeuralAnnotation",
    "NeurlogError",
    "ProbabilisticFact",
    "Program",
    "Rule",
    "Term",
    "Variable",
    "parse_program",
    "parse_query",
    "parse_term_text",
    "print_atom",
    "print_literal",
    "print_program",
    "print_term",
]

__version__ = "0.1.0"
