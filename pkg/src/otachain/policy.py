"""Boolean attribute policies and their compilation to linear secret sharing.

A policy is a monotone formula over namespaced attributes
(``manufacturer:attribute``).  Grammar, with AND binding tighter than OR:

    expr   := term (OR term)*
    term   := factor (AND factor)*
    factor := ATTR | '(' expr ')'
    ATTR   := [A-Za-z0-9_]+ ':' [A-Za-z0-9_.-]+

Compilation follows the classic monotone-span-program construction: the
root carries vector (1); an OR node copies its vector to both children;
an AND node extends the sharing dimension by one, handing the left child
(vector ‖ 1) and the right child (0…0 ‖ -1).  A set of attributes
satisfies the policy exactly when the rows it labels span (1, 0, …, 0),
and the spanning coefficients rebuild the shared secret.

Everything here is pure; matrices are tuples of tuples of ints reduced
modulo the pairing scalar order.
"""

import re
from dataclasses import dataclass
from itertools import combinations

from .bn254 import R

DEFAULT_MODULUS = int(R)

# exhaustive subset search is meant for desk-scale policies
_MAX_SEARCH_ROWS = 16

_ATTRIBUTE_RE = re.compile(r"[A-Za-z0-9_]+:[A-Za-z0-9_.\-]+\Z")
_TOKEN_RE = re.compile(r"\s*(\(|\)|[A-Za-z0-9_.:\-]+)")


class PolicySyntaxError(ValueError):
    """Malformed policy text; message carries the 1-based token position."""


@dataclass(frozen=True)
class Leaf:
    attribute: str


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            remainder = text[pos:].strip()
            if not remainder:
                break
            raise PolicySyntaxError(
                f"unexpected character {remainder[0]!r} at token {len(tokens) + 1}"
            )
        tokens.append(match.group(1))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.index = 0

    def _fail(self, expected):
        raise PolicySyntaxError(f"expected {expected} at token {self.index + 1}")

    def peek(self):
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def take(self):
        token = self.peek()
        self.index += 1
        return token

    def parse_expr(self):
        node = self.parse_term()
        while self.peek() == "OR":
            self.take()
            node = Or(node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.peek() == "AND":
            self.take()
            node = And(node, self.parse_factor())
        return node

    def parse_factor(self):
        token = self.peek()
        if token == "(":
            self.take()
            node = self.parse_expr()
            if self.peek() != ")":
                self._fail("')'")
            self.take()
            return node
        if token is None or token in ("AND", "OR", ")"):
            self._fail("an attribute or '('")
        self.take()
        if not _ATTRIBUTE_RE.match(token):
            raise PolicySyntaxError(
                f"attribute {token!r} at token {self.index} must be namespaced "
                "as manufacturer:name"
            )
        return Leaf(token)


def parse_policy(text):
    """Parse policy text into a formula tree; raises PolicySyntaxError."""
    parser = _Parser(_tokenize(text))
    node = parser.parse_expr()
    if parser.peek() is not None:
        parser._fail("end of input")
    return node


def canonical_policy_text(node):
    """Whitespace-normalized fully parenthesized form; the byte encoding
    of a policy (via UTF-8) everywhere a hash covers it."""
    if isinstance(node, Leaf):
        return node.attribute
    op = "AND" if isinstance(node, And) else "OR"
    return f"({canonical_policy_text(node.left)} {op} {canonical_policy_text(node.right)})"


def policy_attributes(node):
    """Set of attributes appearing in the formula."""
    if isinstance(node, Leaf):
        return {node.attribute}
    return policy_attributes(node.left) | policy_attributes(node.right)


def satisfies(node, attrs):
    """Boolean evaluation of the formula against a set of held attributes."""
    if isinstance(node, Leaf):
        return node.attribute in attrs
    if isinstance(node, And):
        return satisfies(node.left, attrs) and satisfies(node.right, attrs)
    return satisfies(node.left, attrs) or satisfies(node.right, attrs)


@dataclass(frozen=True)
class LsssMatrix:
    """Share-generating matrix with per-row attribute labels."""

    rows: tuple
    row_labels: tuple
    width: int
    modulus: int

    @property
    def row_authorities(self):
        return tuple(label.split(":", 1)[0] for label in self.row_labels)


def compile_lsss(node, modulus=DEFAULT_MODULUS):
    """Compile a formula into its LSSS matrix."""
    vectors = []
    labels = []
    counter = 1

    def descend(n, vec):
        nonlocal counter
        if isinstance(n, Leaf):
            vectors.append(vec)
            labels.append(n.attribute)
            return
        if isinstance(n, Or):
            descend(n.left, vec)
            descend(n.right, vec)
            return
        width = counter
        counter += 1
        left = vec + [0] * (width - len(vec)) + [1]
        right = [0] * width + [-1]
        descend(n.left, left)
        descend(n.right, right)

    descend(node, [1])
    width = counter
    rows = tuple(
        tuple(v % modulus for v in vec + [0] * (width - len(vec))) for vec in vectors
    )
    return LsssMatrix(rows=rows, row_labels=tuple(labels), width=width, modulus=modulus)


@dataclass(frozen=True)
class Reconstruction:
    """Rows and coefficients with sum c_x * A_x = (1, 0, …, 0)."""

    rows: tuple


def _solve_combination(rows, width, modulus):
    """Coefficients combining the given rows into (1,0,…,0), else None."""
    # eliminate on the transpose: unknowns are per-row coefficients
    k = len(rows)
    m = [[rows[j][i] for j in range(k)] + [1 if i == 0 else 0] for i in range(width)]
    pivots = []
    rank = 0
    for col in range(k):
        pivot = next((r for r in range(rank, width) if m[r][col] % modulus), None)
        if pivot is None:
            continue
        m[rank], m[pivot] = m[pivot], m[rank]
        inv = pow(m[rank][col], -1, modulus)
        m[rank] = [v * inv % modulus for v in m[rank]]
        for r in range(width):
            if r != rank and m[r][col]:
                factor = m[r][col]
                m[r] = [(a - factor * b) % modulus for a, b in zip(m[r], m[rank])]
        pivots.append(col)
        rank += 1
    for r in range(width):
        if not any(v % modulus for v in m[r][:k]) and m[r][k] % modulus:
            return None
    coeffs = [0] * k
    for r, col in enumerate(pivots):
        coeffs[col] = m[r][k]
    return coeffs


def find_reconstruction(matrix, attrs):
    """Smallest, earliest set of held rows spanning the target, or None.

    Subsets are tried in order of (size, lexicographic row indices), so
    the result is deterministic.  Returns None when the attribute set
    does not satisfy the policy.
    """
    usable = [i for i, label in enumerate(matrix.row_labels) if label in attrs]
    if not usable:
        return None
    if len(usable) > _MAX_SEARCH_ROWS:
        raise ValueError(
            f"reconstruction search supports at most {_MAX_SEARCH_ROWS} candidate rows"
        )
    # cheap rejection: no solution over all usable rows means none over subsets
    all_rows = [matrix.rows[i] for i in usable]
    if _solve_combination(all_rows, matrix.width, matrix.modulus) is None:
        return None
    for size in range(1, len(usable) + 1):
        for subset in combinations(usable, size):
            coeffs = _solve_combination(
                [matrix.rows[i] for i in subset], matrix.width, matrix.modulus
            )
            if coeffs is not None:
                return Reconstruction(rows=tuple(zip(subset, coeffs)))
    return None


def reconstruction_is_minimal(rec):
    """True when every coefficient is nonzero (no row is dead weight)."""
    return all(c for _, c in rec.rows)
