"""Propositional formulas over six variables and the seven natural-logic relations.

Surface form: a binary formula is written ``X ( op Y )``; a negation is
``( not X )``; a binary formula used as an operand is wrapped, ``( X ( op Y ) )``,
so ``c ( and ( not ( a ( or b ) ) ) )`` is the canonical rendering.
The parser also accepts plain parenthesised infix such as ``( a or b )``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from ..errors import ContractError, ParseError

VARIABLES = ("a", "b", "c", "d", "e", "f")
BINARY_OPS = ("and", "or")
RELATIONS = ("equivalence", "forward-entailment", "reverse-entailment", "negation",
             "alternation", "cover", "independence")

# formulas as nested tuples: "a" | ("not", f) | ("and" | "or", left, right)
Formula = object

_ASSIGNMENTS = np.array(list(product([False, True], repeat=len(VARIABLES))))   # (64, 6)


@dataclass
class LogicExample:
    left: list[str]
    right: list[str]
    label: str
    ops_left: int
    ops_right: int

    @property
    def ops(self) -> int:
        return max(self.ops_left, self.ops_right)

    def to_record(self) -> dict:
        return {"tokens": self.left, "tokens2": self.right, "label": self.label,
                "ops": [self.ops_left, self.ops_right]}


# ---------------------------------------------------------------------------
# parsing and rendering
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[str]):
        self.toks = tokens
        self.i = 0

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def take(self, expected: str | None = None) -> str:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of formula", position=self.i)
        if expected is not None and tok != expected:
            raise ParseError(f"expected {expected!r}, found {tok!r}", position=self.i)
        self.i += 1
        return tok

    def expr(self):
        f = self.term()
        while self.peek() == "(" and self.peek(1) in BINARY_OPS:
            self.take("(")
            op = self.take()
            right = self.expr()
            self.take(")")
            f = (op, f, right)
        return f

    def term(self):
        tok = self.peek()
        if tok in VARIABLES:
            self.i += 1
            return tok
        if tok != "(":
            raise ParseError(f"unexpected token {tok!r}", position=self.i)
        self.take("(")
        if self.peek() == "not":
            self.take()
            f = ("not", self.expr())
        else:
            f = self.expr()
            if self.peek() in BINARY_OPS:
                op = self.take()
                f = (op, f, self.expr())
        self.take(")")
        return f


def parse_formula(text) -> Formula:
    tokens = text.split() if isinstance(text, str) else list(text)
    if not tokens:
        raise ParseError("empty formula", position=0)
    p = _Parser(tokens)
    f = p.expr()
    if p.i != len(tokens):
        raise ParseError(f"trailing tokens from position {p.i}", position=p.i)
    return f


def _term(f) -> list[str]:
    if isinstance(f, str):
        return [f]
    if f[0] == "not":
        return ["(", "not", *_term(f[1]), ")"]
    return ["(", *render(f), ")"]


def render(f) -> list[str]:
    if isinstance(f, tuple) and f[0] in BINARY_OPS:
        return [*_term(f[1]), "(", f[0], *_term(f[2]), ")"]
    return _term(f)


def count_ops(f) -> int:
    if isinstance(f, str):
        return 0
    return 1 + sum(count_ops(x) for x in f[1:])


# ---------------------------------------------------------------------------
# semantics
# ---------------------------------------------------------------------------

def truth_table(f) -> np.ndarray:
    """Boolean vector over all 2^6 assignments."""
    if isinstance(f, str):
        if f not in VARIABLES:
            raise ParseError(f"unknown variable {f!r}")
        return _ASSIGNMENTS[:, VARIABLES.index(f)]
    if f[0] == "not":
        return ~truth_table(f[1])
    left, right = truth_table(f[1]), truth_table(f[2])
    return (left & right) if f[0] == "and" else (left | right)


def relation_from_counts(both: int, only1: int, only2: int, neither: int) -> str:
    if only1 == 0 and only2 == 0:
        return "equivalence"
    if only1 == 0:
        return "forward-entailment"
    if only2 == 0:
        return "reverse-entailment"
    if both == 0 and neither == 0:
        return "negation"
    if both == 0:
        return "alternation"
    if neither == 0:
        return "cover"
    return "independence"


def _as_formula(x):
    return x if isinstance(x, tuple) else parse_formula(x)


def logic_relation_oracle(f1, f2) -> str:
    """Relation from the four truth-set overlap counts over all assignments."""
    t1, t2 = truth_table(_as_formula(f1)), truth_table(_as_formula(f2))
    return relation_from_counts(int(np.sum(t1 & t2)), int(np.sum(t1 & ~t2)),
                                int(np.sum(~t1 & t2)), int(np.sum(~t1 & ~t2)))


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def random_formula(rng: np.random.Generator, ops: int):
    """Uniformly shaped random formula with exactly ``ops`` operators."""
    if ops == 0:
        return VARIABLES[rng.integers(len(VARIABLES))]
    if rng.random() < 0.25:
        return ("not", random_formula(rng, ops - 1))
    k = int(rng.integers(0, ops))
    return (BINARY_OPS[rng.integers(2)], random_formula(rng, k), random_formula(rng, ops - 1 - k))


def gen_logic(rng: np.random.Generator, count: int, max_ops: int = 6, min_ops: int = 0) -> list[LogicExample]:
    """Pairs whose larger side has between ``min_ops`` and ``max_ops`` operators."""
    if not 0 <= min_ops <= max_ops <= 12:
        raise ContractError("need 0 <= min_ops <= max_ops <= 12")
    out = []
    while len(out) < count:
        n = int(rng.integers(min_ops, max_ops + 1))
        m = int(rng.integers(0, n + 1))
        pair = [random_formula(rng, n), random_formula(rng, m)]
        if rng.random() < 0.5:
            pair.reverse()
        f1, f2 = pair
        out.append(LogicExample(render(f1), render(f2), logic_relation_oracle(f1, f2),
                                count_ops(f1), count_ops(f2)))
    return out


# ---------------------------------------------------------------------------
# systematic-generalisation splits
# ---------------------------------------------------------------------------

def _subformulas(f):
    yield f
    if isinstance(f, tuple):
        for x in f[1:]:
            yield from _subformulas(x)


def matches_split(f, split: str) -> bool:
    """Whether any subformula is ``X ( op ( not Y ) )`` under the split's restrictions.

    A: op = and, Y = the variable a.  B: op = and, any Y.  C: op in {and, or}, any Y.
    """
    if split not in ("A", "B", "C"):
        raise ContractError(f"unknown split {split!r}")
    ops = BINARY_OPS if split == "C" else ("and",)
    for g in _subformulas(f):
        if isinstance(g, tuple) and g[0] in ops:
            right = g[2]
            if isinstance(right, tuple) and right[0] == "not":
                if split != "A" or right[1] == "a":
                    return True
    return False


def filter_systematic_split(examples: list[LogicExample], split: str):
    """(train, test): an example goes to test when either formula matches the split pattern."""
    train, test = [], []
    for ex in examples:
        hit = matches_split(parse_formula(ex.left), split) or matches_split(parse_formula(ex.right), split)
        (test if hit else train).append(ex)
    return train, test
