"""3SAT as watermark forgery.

Each clause becomes a tree of depth at most three that outputs +1 exactly on
assignments satisfying it; a formula becomes one tree per clause. The formula
is satisfiable iff some instance makes every tree output +1, i.e. iff forgery
succeeds for label +1 and the all-zero signature.

Variables live in [0, 1] here: a value above 0.5 means true, 0.5 or below
means false (the boundary goes left, like every split).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .attacks import DEFAULT_NODE_BUDGET, ForgeryTimeout, forge_instance
from .forest import Ensemble, Internal, Leaf, Node
from .watermark import Signature

TRUE_THRESHOLD = 0.5
MAX_BRUTE_FORCE_VARS = 24


class DimacsError(ValueError):
    pass


class WidthError(DimacsError):
    pass


class RefusedTooLarge(ValueError):
    pass


class Literal(NamedTuple):
    var: int  # 1-based
    negated: bool = False

    def __str__(self) -> str:
        return f"{'-' if self.negated else ''}{self.var}"


Clause = tuple[Literal, ...]
Assignment = tuple[bool, ...]


@dataclass(frozen=True)
class Cnf3:
    n_vars: int
    clauses: tuple[Clause, ...]

    def __post_init__(self):
        clauses = tuple(tuple(Literal(int(v), bool(neg)) for v, neg in c) for c in self.clauses)
        for c in clauses:
            if not c:
                raise DimacsError("empty clause")
            if len(c) > 3:
                raise WidthError(f"clause with {len(c)} literals; only 3CNF is supported")
            for lit in c:
                if not 1 <= lit.var <= self.n_vars:
                    raise DimacsError(f"variable {lit.var} outside 1..{self.n_vars}")
        object.__setattr__(self, "clauses", clauses)

    @classmethod
    def from_ints(cls, n_vars: int, clauses: Sequence[Sequence[int]]) -> "Cnf3":
        return cls(n_vars, tuple(tuple(Literal(abs(l), l < 0) for l in c) for c in clauses))


def satisfies(phi: Cnf3, a: Assignment) -> bool:
    if len(a) != phi.n_vars:
        raise ValueError("assignment does not cover every variable")
    return all(any(a[l.var - 1] != l.negated for l in c) for c in phi.clauses)


# ---------------------------------------------------------------------------
# DIMACS


def parse_dimacs_text(text: str) -> Cnf3:
    header = None
    tokens: list[int] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            parts = line.split()
            if header is not None or len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"line {lineno}: malformed header {line!r}")
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise DimacsError(f"line {lineno}: malformed header {line!r}") from None
            continue
        if header is None:
            raise DimacsError(f"line {lineno}: clause before the 'p cnf' header")
        try:
            tokens.extend(int(t) for t in line.split())
        except ValueError:
            raise DimacsError(f"line {lineno}: non-integer literal") from None
    if header is None:
        raise DimacsError("missing 'p cnf' header")
    clauses, cur = [], []
    for t in tokens:
        if t == 0:
            if not cur:
                raise DimacsError("empty clause")
            clauses.append(cur)
            cur = []
        else:
            cur.append(t)
    if cur:
        raise DimacsError("last clause is not terminated by 0")
    n_vars, n_clauses = header
    if len(clauses) != n_clauses:
        raise DimacsError(f"header announces {n_clauses} clauses, found {len(clauses)}")
    return Cnf3.from_ints(n_vars, clauses)


def parse_dimacs(path) -> Cnf3:
    return parse_dimacs_text(Path(path).read_text(encoding="utf-8"))


def format_dimacs(phi: Cnf3) -> str:
    lines = [f"p cnf {phi.n_vars} {len(phi.clauses)}"]
    lines += [" ".join(map(str, c)) + " 0" for c in phi.clauses]
    return "\n".join(lines) + "\n"


def format_solution(a: Assignment | None) -> str:
    if a is None:
        return "s UNSATISFIABLE\n"
    lits = [str(j + 1) if v else str(-(j + 1)) for j, v in enumerate(a)]
    return "s SATISFIABLE\nv " + " ".join(lits + ["0"]) + "\n"


# ---------------------------------------------------------------------------
# conversion


def convert_literal(l: Literal, threshold: float = TRUE_THRESHOLD) -> Node:
    f = l.var - 1
    if l.negated:
        return Internal(f, threshold, Leaf(1), Leaf(-1))
    return Internal(f, threshold, Leaf(-1), Leaf(1))


def convert_clause(psi: Sequence[Literal], threshold: float = TRUE_THRESHOLD) -> Node:
    """Tree that outputs +1 exactly on the points satisfying the clause."""
    if not psi:
        raise ValueError("empty clause")
    head, rest = Literal(*psi[0]), psi[1:]
    if not rest:
        return convert_literal(head, threshold)
    sub = convert_clause(rest, threshold)
    if head.negated:
        return Internal(head.var - 1, threshold, Leaf(1), sub)
    return Internal(head.var - 1, threshold, sub, Leaf(1))


def convert_formula(phi: Cnf3, threshold: float = TRUE_THRESHOLD) -> Ensemble:
    if not phi.clauses:
        raise ValueError("a formula needs at least one clause to become an ensemble")
    trees = tuple(convert_clause(c, threshold) for c in phi.clauses)
    subsets = tuple(tuple(sorted({l.var - 1 for l in c})) for c in phi.clauses)
    return Ensemble(trees, subsets, phi.n_vars)


def encode(a: Assignment) -> np.ndarray:
    """Assignment as a point in [0, 1]^n: true -> 1, false -> 0."""
    return np.array([1.0 if v else 0.0 for v in a])


def decode(x: np.ndarray) -> Assignment:
    return tuple(bool(v > TRUE_THRESHOLD) for v in x)


# ---------------------------------------------------------------------------
# deciding satisfiability


def sat_via_forgery(phi: Cnf3, budget: int = DEFAULT_NODE_BUDGET) -> Assignment | None:
    """Decide ``phi`` by forging a +1 instance for the all-zero signature.

    Raises :class:`ForgeryTimeout` if the node budget runs out.
    """
    if not phi.clauses:
        return (False,) * phi.n_vars
    T = convert_formula(phi)
    z = np.full(phi.n_vars, 0.5)
    x = forge_instance(T, Signature((0,) * T.m), 1, z, 1.0, budget)
    if x is None:
        return None
    a = decode(x)
    if not satisfies(phi, a):
        raise AssertionError("forged instance decodes to a non-satisfying assignment")
    return a


def brute_force_sat(phi: Cnf3) -> Assignment | None:
    """First satisfying assignment in lexicographic order (x1 most significant, False < True)."""
    if phi.n_vars > MAX_BRUTE_FORCE_VARS:
        raise RefusedTooLarge(f"{phi.n_vars} variables exceeds the limit of {MAX_BRUTE_FORCE_VARS}")
    for a in itertools.product((False, True), repeat=phi.n_vars):
        if satisfies(phi, a):
            return a
    return None


def random_3cnf(n_vars: int, n_clauses: int, gen: np.random.Generator) -> Cnf3:
    """Clauses of 1-3 literals over distinct variables, widths uniform."""
    clauses = []
    for _ in range(n_clauses):
        width = int(gen.integers(1, min(3, n_vars) + 1))
        vs = gen.choice(n_vars, size=width, replace=False) + 1
        clauses.append(tuple(Literal(int(v), bool(gen.integers(2))) for v in vs))
    return Cnf3(n_vars, tuple(clauses))


__all__ = [
    "Cnf3", "Literal", "Assignment", "DimacsError", "WidthError", "RefusedTooLarge", "ForgeryTimeout",
    "parse_dimacs", "parse_dimacs_text", "format_dimacs", "format_solution", "satisfies",
    "convert_literal", "convert_clause", "convert_formula", "encode", "decode",
    "sat_via_forgery", "brute_force_sat", "random_3cnf",
]
