"""Nested list arithmetic in prefix notation, e.g. ``[MAX 2 9 [MIN 4 7 ] 0 ]`` -> 9."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, ParseError
from ..trees import Tree

OPERATORS = ("MAX", "MIN", "MED", "SM")
CLOSE = "]"


@dataclass
class ListopsExample:
    tokens: list[str]
    label: int
    tree: Tree = field(repr=False, default=None)

    def to_record(self) -> dict:
        return {"tokens": self.tokens, "label": self.label}


def _apply(op: str, args: list[int]) -> int:
    if op == "MAX":
        return max(args)
    if op == "MIN":
        return min(args)
    if op == "MED":
        return sorted(args)[(len(args) - 1) // 2]
    return sum(args) % 10


def _parse(tokens: list[str], pos: int):
    """Parse one operand at ``pos``; returns (value, tree, next position)."""
    if pos >= len(tokens):
        raise ParseError("unexpected end of expression", position=pos)
    tok = tokens[pos]
    if tok.isdigit() and len(tok) == 1:
        return int(tok), pos, pos + 1
    if not tok.startswith("[") or tok[1:] not in OPERATORS:
        raise ParseError(f"unexpected token {tok!r}", position=pos)
    tree: Tree = pos
    args = []
    i = pos + 1
    while True:
        if i >= len(tokens):
            raise ParseError("unclosed list", position=pos)
        if tokens[i] == CLOSE:
            break
        val, sub, i = _parse(tokens, i)
        args.append(val)
        tree = (tree, sub)
    if not args:
        raise ParseError("operator without arguments", position=pos)
    return _apply(tok[1:], args), (tree, i), i + 1


def _tokens(expr) -> list[str]:
    return expr.split() if isinstance(expr, str) else list(expr)


def listops_oracle(expr) -> int:
    """Evaluate a well-formed expression; MED of an even-length list takes the lower median."""
    tokens = _tokens(expr)
    val, _, end = _parse(tokens, 0)
    if end != len(tokens):
        raise ParseError(f"trailing tokens after position {end}", position=end)
    return val


def listops_tree(expr) -> Tree:
    """Gold binary tree: each list is left-branching, ``(((([OP a1) a2) ...) ])``."""
    tokens = _tokens(expr)
    _, tree, end = _parse(tokens, 0)
    if end != len(tokens):
        raise ParseError(f"trailing tokens after position {end}", position=end)
    return tree


def _gen_list(rng: np.random.Generator, depth: int, max_depth: int, max_args: int,
              values: tuple[int, int], nest_prob: float) -> list[str]:
    op = OPERATORS[rng.integers(len(OPERATORS))]
    out = ["[" + op]
    for _ in range(int(rng.integers(2, max_args + 1))):
        if depth < max_depth and rng.random() < nest_prob:
            out.extend(_gen_list(rng, depth + 1, max_depth, max_args, values, nest_prob))
        else:
            out.append(str(int(rng.integers(values[0], values[1] + 1))))
    out.append(CLOSE)
    return out


def gen_listops(rng: np.random.Generator, count: int, max_depth: int = 4, max_args: int = 5,
                value_range: tuple[int, int] = (0, 9), nest_prob: float = 0.3,
                max_length: int | None = None) -> list[ListopsExample]:
    """Random expressions of nesting depth at most ``max_depth`` (the outer list is depth 1)."""
    if max_depth < 1:
        raise ContractError("max_depth must be >= 1")
    if max_args < 2:
        raise ContractError("max_args must be >= 2")
    lo, hi = value_range
    if not 0 <= lo <= hi <= 9:
        raise ContractError("value_range must lie within 0..9")
    out = []
    while len(out) < count:
        toks = _gen_list(rng, 1, max_depth, max_args, (lo, hi), nest_prob)
        if max_length is not None and len(toks) > max_length:
            continue
        out.append(ListopsExample(toks, listops_oracle(toks), listops_tree(toks)))
    return out


def depth(expr) -> int:
    d = best = 0
    for tok in _tokens(expr):
        if tok.startswith("["):
            d += 1
            best = max(best, d)
        elif tok == CLOSE:
            d -= 1
    return best
