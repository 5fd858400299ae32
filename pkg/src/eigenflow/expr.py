"""A small closed expression language for coefficient fields.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?            # right associative
    atom   := NUMBER | 'pi' | var | FUNC '(' expr (',' expr)* ')' | '(' expr ')'
    var    := 'x' INT | 'u' INT | 'x' '[' INT ']' | 'u' '[' INT ']'

so ``-x0^2`` is ``-(x0^2)`` and ``2^-1`` is ``0.5``.

Expressions evaluate vectorised over points: ``x`` has shape ``(n, d)``
(or ``(d,)``) and ``u`` has shape ``(n, m)`` or ``(m,)``.  ``Expr.jet``
propagates value, gradient and Hessian with respect to ``x`` by
forward-mode differentiation, which the analytic certificates use.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ExprSyntaxError, UnknownIdentifier

FUNCTIONS: dict[str, int] = {
    "exp": 1, "log": 1, "sin": 1, "cos": 1, "sqrt": 1, "abs": 1, "tanh": 1,
    "min": -2, "max": -2,  # variadic, at least two arguments
}
CONSTANTS = {"pi": math.pi}


# --------------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "u"
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Node = Union[Num, Var, Neg, Bin, Call]


# --------------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),\[\]]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            if source[pos:].strip() == "":
                break
            # skip leading whitespace to point at the offending char
            bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", source,
                                  _byte_offset(source, bad))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


def _byte_offset(source: str, char_index: int) -> int:
    return len(source[:char_index].encode("utf-8"))


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, self.source, _byte_offset(self.source, tok[2]))

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] == "end":
            self.error(f"expected {value!r}", tok)
        return tok

    def parse(self) -> Node:
        if self.peek()[0] == "end":
            self.error("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            m = re.fullmatch(r"([xu])(\d+)", text)
            if m:
                return Var(m.group(1), int(m.group(2)))
            if text in ("x", "u") and self.peek()[1] == "[":
                self.take()
                idx = self.take()
                if idx[0] != "num" or not idx[1].isdigit():
                    self.error("expected integer index", idx)
                self.expect("]")
                return Var(text, int(idx[1]))
            if text in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text]
                if (arity > 0 and len(args) != arity) or (arity < 0 and len(args) < -arity):
                    self.error(f"wrong number of arguments to {text}", tok)
                return Call(text, tuple(args))
            raise UnknownIdentifier(text, _byte_offset(self.source, tok[2]))
        if kind == "end":
            self.error("unexpected end of expression", tok)
        self.error(f"unexpected token {text!r}", tok)


# ---------------------------------------------------------------------- printing

def _fmt(node: Node) -> str:
    if isinstance(node, Num):
        if node.value < 0 or math.copysign(1.0, node.value) < 0:
            return f"(-{repr(-node.value)})"
        return repr(node.value)
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Neg):
        return f"(-{_fmt(node.arg)})"
    if isinstance(node, Bin):
        return f"({_fmt(node.left)} {node.op} {_fmt(node.right)})"
    return f"{node.fn}({', '.join(_fmt(a) for a in node.args)})"


# -------------------------------------------------------------------- evaluation

_UNARY: dict[str, Callable] = {
    "exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh,
}


def _eval(node: Node, x: np.ndarray, u: np.ndarray | None):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        src = x if node.kind == "x" else u
        if src is None or node.index >= src.shape[-1]:
            raise UnknownIdentifier(f"{node.kind}{node.index}")
        return src[..., node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, x, u)
    if isinstance(node, Bin):
        a = _eval(node.left, x, u)
        b = _eval(node.right, x, u)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return np.divide(a, b)
        return np.power(np.asarray(a, dtype=float), b)
    args = [_eval(a, x, u) for a in node.args]
    if node.fn == "min":
        out = args[0]
        for a in args[1:]:
            out = np.minimum(out, a)
        return out
    if node.fn == "max":
        out = args[0]
        for a in args[1:]:
            out = np.maximum(out, a)
        return out
    return _UNARY[node.fn](args[0])


class Jet:
    """Value, gradient and Hessian of a scalar field at ``n`` points."""

    __slots__ = ("v", "g", "H")

    def __init__(self, v, g, H):
        self.v, self.g, self.H = v, g, H

    @classmethod
    def const(cls, value, n, d):
        return cls(np.full(n, float(value)), np.zeros((n, d)), np.zeros((n, d, d)))

    def chain(self, f0, f1, f2):
        """Compose with a scalar function given f, f', f'' evaluated at self.v."""
        g = f1[:, None] * self.g
        H = f1[:, None, None] * self.H + f2[:, None, None] * np.einsum("ni,nj->nij", self.g, self.g)
        return Jet(f0, g, H)

    def __add__(self, o):
        return Jet(self.v + o.v, self.g + o.g, self.H + o.H)

    def __sub__(self, o):
        return Jet(self.v - o.v, self.g - o.g, self.H - o.H)

    def __neg__(self):
        return Jet(-self.v, -self.g, -self.H)

    def __mul__(self, o):
        gg = np.einsum("ni,nj->nij", self.g, o.g)
        return Jet(self.v * o.v,
                   self.v[:, None] * o.g + o.v[:, None] * self.g,
                   self.v[:, None, None] * o.H + o.v[:, None, None] * self.H + gg + gg.transpose(0, 2, 1))

    def reciprocal(self):
        r = 1.0 / self.v
        return self.chain(r, -r**2, 2 * r**3)

    def select(self, mask, other):
        m1, m2 = mask[:, None], mask[:, None, None]
        return Jet(np.where(mask, self.v, other.v), np.where(m1, self.g, other.g),
                   np.where(m2, self.H, other.H))


def _jet(node: Node, x: np.ndarray, u: np.ndarray | None) -> Jet:
    n, d = x.shape
    if isinstance(node, Num):
        return Jet.const(node.value, n, d)
    if isinstance(node, Var):
        if node.kind == "u":
            if u is None or node.index >= u.shape[-1]:
                raise UnknownIdentifier(f"u{node.index}")
            return Jet(np.broadcast_to(u[..., node.index], (n,)).astype(float),
                       np.zeros((n, d)), np.zeros((n, d, d)))
        if node.index >= d:
            raise UnknownIdentifier(f"x{node.index}")
        g = np.zeros((n, d))
        g[:, node.index] = 1.0
        return Jet(x[:, node.index].astype(float), g, np.zeros((n, d, d)))
    if isinstance(node, Neg):
        return -_jet(node.arg, x, u)
    if isinstance(node, Bin):
        a = _jet(node.left, x, u)
        if node.op == "^" and isinstance(node.right, Num):
            p = node.right.value
            v = a.v
            return a.chain(np.power(v, p), p * np.power(v, p - 1), p * (p - 1) * np.power(v, p - 2))
        b = _jet(node.right, x, u)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a * b.reciprocal()
        # a^b = exp(b log a) for a field-valued exponent
        la = a.chain(np.log(a.v), 1.0 / a.v, -1.0 / a.v**2)
        e = b * la
        ev = np.exp(e.v)
        return e.chain(ev, ev, ev)
    args = [_jet(a, x, u) for a in node.args]
    if node.fn in ("min", "max"):
        out = args[0]
        for a in args[1:]:
            mask = out.v <= a.v if node.fn == "min" else out.v >= a.v
            out = out.select(mask, a)
        return out
    a = args[0]
    v = a.v
    if node.fn == "exp":
        ev = np.exp(v)
        return a.chain(ev, ev, ev)
    if node.fn == "log":
        return a.chain(np.log(v), 1.0 / v, -1.0 / v**2)
    if node.fn == "sin":
        s, c = np.sin(v), np.cos(v)
        return a.chain(s, c, -s)
    if node.fn == "cos":
        s, c = np.sin(v), np.cos(v)
        return a.chain(c, -s, -c)
    if node.fn == "sqrt":
        r = np.sqrt(v)
        return a.chain(r, 0.5 / r, -0.25 / (r * v))
    if node.fn == "abs":
        s = np.sign(v)
        return a.chain(np.abs(v), s, np.zeros_like(v))
    t = np.tanh(v)
    return a.chain(t, 1 - t**2, -2 * t * (1 - t**2))


def _vars(node: Node, acc: set):
    if isinstance(node, Var):
        acc.add((node.kind, node.index))
    elif isinstance(node, Neg):
        _vars(node.arg, acc)
    elif isinstance(node, Bin):
        _vars(node.left, acc)
        _vars(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _vars(a, acc)
    return acc


class Expr:
    """Parsed coefficient expression."""

    __slots__ = ("root", "_vars")

    def __init__(self, root: Node):
        self.root = root
        self._vars = frozenset(_vars(root, set()))

    @classmethod
    def parse(cls, source) -> "Expr":
        return parse_expr(source)

    @classmethod
    def const(cls, value: float) -> "Expr":
        return cls(Num(float(value)))

    def __str__(self) -> str:
        return _fmt(self.root)

    def __repr__(self) -> str:
        return f"Expr({str(self)!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and self.root == other.root

    def __hash__(self):
        return hash(self.root)

    @property
    def variables(self) -> frozenset:
        return self._vars

    def max_index(self, kind: str) -> int:
        """Largest referenced index of ``x`` or ``u`` (-1 if none)."""
        return max((i for k, i in self._vars if k == kind), default=-1)

    def depends_on(self, kind: str) -> bool:
        return self.max_index(kind) >= 0

    @property
    def is_constant(self) -> bool:
        return not self._vars

    def evaluate(self, x, u=None):
        """Evaluate at points ``x`` (shape ``(n, d)`` or ``(d,)``); returns shape ``(n,)`` or scalar."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        xx = x[None, :] if scalar else x
        uu = None if u is None else np.asarray(u, dtype=float)
        if uu is not None and uu.ndim == 1:
            uu = np.broadcast_to(uu, (xx.shape[0], uu.shape[0]))
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(_eval(self.root, xx, uu), dtype=float),
                                  (xx.shape[0],)).copy()
        return float(out[0]) if scalar else out

    __call__ = evaluate

    def jet(self, x, u=None) -> Jet:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        uu = None if u is None else np.asarray(u, dtype=float)
        with np.errstate(all="ignore"):
            return _jet(self.root, x, uu)

    # combinators used to build derived coefficient fields
    def __add__(self, other):
        return Expr(Bin("+", self.root, _as_node(other)))

    def __radd__(self, other):
        return Expr(Bin("+", _as_node(other), self.root))

    def __sub__(self, other):
        return Expr(Bin("-", self.root, _as_node(other)))

    def __rsub__(self, other):
        return Expr(Bin("-", _as_node(other), self.root))

    def __mul__(self, other):
        return Expr(Bin("*", self.root, _as_node(other)))

    def __rmul__(self, other):
        return Expr(Bin("*", _as_node(other), self.root))


def _as_node(v) -> Node:
    if isinstance(v, Expr):
        return v.root
    return Num(float(v))


def parse_expr(source) -> Expr:
    """Parse ``source`` into an :class:`Expr`.  Numbers are accepted as constants."""
    if isinstance(source, Expr):
        return source
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        return Expr.const(source)
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", str(source), 0)
    return Expr(_Parser(source).parse())
