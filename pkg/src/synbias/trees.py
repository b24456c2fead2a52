"""Unlabeled binary constituency trees over token positions.

A tree is either a leaf (an ``int`` token index) or a pair ``(left, right)``.
"""

from __future__ import annotations

from typing import Sequence, Union

from .errors import ContractError, ParseError

Tree = Union[int, tuple]


def is_leaf(t: Tree) -> bool:
    return isinstance(t, int)


def leaves(t: Tree) -> list[int]:
    if is_leaf(t):
        return [t]
    return leaves(t[0]) + leaves(t[1])


def num_leaves(t: Tree) -> int:
    return 1 if is_leaf(t) else num_leaves(t[0]) + num_leaves(t[1])


def is_valid(t: Tree, n: int) -> bool:
    """True iff ``t`` is a binary tree whose leaves are exactly 0..n-1 in order."""
    def ok(x):
        if is_leaf(x):
            return True
        return isinstance(x, tuple) and len(x) == 2 and ok(x[0]) and ok(x[1])
    return ok(t) and leaves(t) == list(range(n))


def spans(t: Tree) -> list[tuple[int, int]]:
    """Half-open spans of every internal node (length >= 2), root included."""
    out: list[tuple[int, int]] = []

    def walk(x, start):
        if is_leaf(x):
            return start + 1
        mid = walk(x[0], start)
        end = walk(x[1], mid)
        out.append((start, end))
        return end

    walk(t, 0)
    return out


def boundary_heights(t: Tree) -> list[int]:
    """Height of the lowest common ancestor of each adjacent leaf pair (leaves have height 0)."""
    n = num_leaves(t)
    heights = [0] * max(n - 1, 0)

    def walk(x, start):
        if is_leaf(x):
            return start + 1, 0
        mid, hl = walk(x[0], start)
        end, hr = walk(x[1], mid)
        h = max(hl, hr) + 1
        heights[mid - 1] = h
        return end, h

    walk(t, 0)
    return heights


def distance_to_tree(distances: Sequence[float], n: int) -> Tree:
    """Top-down greedy split at the largest distance (ties go to the leftmost boundary)."""
    if n < 1 or len(distances) != n - 1:
        raise ContractError(f"need n-1={n - 1} distances for n={n} tokens, got {len(distances)}")
    d = list(distances)

    def build(lo, hi):
        # tokens lo..hi inclusive, boundaries lo..hi-1
        if lo == hi:
            return lo
        best = lo
        for k in range(lo + 1, hi):
            if d[k] > d[best]:
                best = k
        return (build(lo, best), build(best + 1, hi))

    return build(0, n - 1)


def left_branching(n: int) -> Tree:
    t: Tree = 0
    for i in range(1, n):
        t = (t, i)
    return t


def right_branching(n: int) -> Tree:
    t: Tree = n - 1
    for i in range(n - 2, -1, -1):
        t = (i, t)
    return t


def to_bracket(t: Tree, tokens: Sequence[str] | None = None) -> str:
    if is_leaf(t):
        return str(tokens[t]) if tokens is not None else f"w{t}"
    return f"( {to_bracket(t[0], tokens)} {to_bracket(t[1], tokens)} )"


def from_bracket(s: str) -> tuple[Tree, list[str]]:
    """Inverse of :func:`to_bracket`; returns the tree and its leaf tokens."""
    toks = s.split()
    words: list[str] = []
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(toks):
            raise ParseError("unexpected end of bracketed tree", pos)
        tok = toks[pos]
        if tok == "(":
            pos += 1
            left = parse()
            right = parse()
            if pos >= len(toks) or toks[pos] != ")":
                raise ParseError("expected ')'", pos)
            pos += 1
            return (left, right)
        if tok == ")":
            raise ParseError("unexpected ')'", pos)
        pos += 1
        words.append(tok)
        return len(words) - 1

    tree = parse()
    if pos != len(toks):
        raise ParseError("trailing tokens after tree", pos)
    return tree, words
