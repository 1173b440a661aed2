"""Real-valued expression trees over position variables ``x1..xn``, fiber
variables ``t1..ts`` and optional covector parameters ``k1..kn``.

Nodes are hash-consed: structurally equal expressions are the same Python
object, so ``a is b`` is structural equality and derivative caches are shared
across every tree that contains a sub-expression. All constructors return
normalized trees (flattened sums/products, folded rational constants,
collected like terms, commutative operands in a fixed order).

Besides the user-facing primitives (``sqrt``, ``exp``, ``sin``, ``cos``)
there is one internal primitive, ``_gK(u)`` = ``exp(-1/u) * u**-K`` for
``u > 0`` and ``0`` otherwise.  It is C-infinity, closed under
differentiation, and is what smooth cutoffs are built from.
"""

from __future__ import annotations

import hashlib
import math
import re
import sys
import weakref
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownVariable

sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))

FUNCTIONS = ("sqrt", "exp", "sin", "cos")
_KIND_RANK = {"x": 0, "t": 1, "k": 2}
_OP_RANK = {"const": 0, "var": 1, "pow": 2, "sqrt": 3, "exp": 3, "sin": 3,
            "cos": 3, "g": 3, "mul": 4, "add": 5}


@dataclass(frozen=True)
class Dims:
    """Position dimension ``n``, fiber dimension ``s``, covector slots ``p``."""

    n: int
    s: int
    p: int = 0

    def __post_init__(self):
        if self.n < 1 or self.s < 1 or self.p < 0:
            raise ValueError(f"invalid dims n={self.n}, s={self.s}, p={self.p}")

    def count(self, kind: str) -> int:
        return {"x": self.n, "t": self.s, "k": self.p}[kind]


@dataclass(frozen=True)
class MultiIndex:
    """Derivative multiindex: ``alpha`` over x-axes, ``beta`` over theta-axes."""

    alpha: tuple[int, ...]
    beta: tuple[int, ...]

    def __post_init__(self):
        if any(a < 0 for a in self.alpha) or any(b < 0 for b in self.beta):
            raise ValueError("multiindex components must be non-negative")

    @property
    def order(self) -> int:
        return sum(self.alpha) + sum(self.beta)


class Expr:
    __slots__ = ("op", "args", "value", "_key", "_digest", "_free", "_dcache",
                 "_compiled", "__weakref__")

    op: str
    args: tuple["Expr", ...]

    # identity semantics: nodes are interned
    __eq__ = object.__eq__
    __hash__ = object.__hash__

    def __repr__(self):
        return f"Expr({format_expr(self)!r})"

    def __str__(self):
        return format_expr(self)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, e):
        if not isinstance(e, int):
            raise TypeError("only integer exponents are supported")
        return power(self, e)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def free_vars(self) -> frozenset:
        return self._free

    def depends_on(self, v: "Expr") -> bool:
        return v.value in self._free


_TABLE: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


def _intern(op: str, args: tuple, value) -> Expr:
    key = (op, args, value)
    node = _TABLE.get(key)
    if node is not None:
        return node
    node = object.__new__(Expr)
    node.op = op
    node.args = args
    node.value = value
    h = hashlib.blake2b(digest_size=8)
    h.update(op.encode())
    h.update(repr(value).encode())
    for a in args:
        h.update(a._digest)
    node._digest = h.digest()
    if op == "var":
        node._key = (1, _KIND_RANK[value[0]], value[1])
    elif op == "pow":
        node._key = args[0]._key + (value,)
    else:
        node._key = (_OP_RANK[op], node._digest)
    if op == "var":
        node._free = frozenset([value])
    elif args:
        free = args[0]._free
        for a in args[1:]:
            if a._free is not free:
                free = free | a._free
        node._free = free
    else:
        node._free = frozenset()
    node._dcache = None
    node._compiled = None
    _TABLE[key] = node
    return node


# ---------------------------------------------------------------- constructors

def const(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, float):
        if not math.isfinite(v):
            raise DomainError(f"non-finite constant {v}", {"value": repr(v)})
    return _intern("const", (), Fraction(v))


ZERO = const(0)
ONE = const(1)


def as_expr(v) -> Expr:
    return v if isinstance(v, Expr) else const(v)


def var(kind: str, index: int) -> Expr:
    """Variable by kind ``'x' | 't' | 'k'`` and zero-based index."""
    if kind not in _KIND_RANK or index < 0:
        raise ValueError(f"bad variable {kind}{index}")
    return _intern("var", (), (kind, int(index)))


def X(i: int) -> Expr:
    """Position variable ``x_i`` (one-based, matching the printed name)."""
    return var("x", i - 1)


def Theta(j: int) -> Expr:
    """Fiber variable ``t_j`` (one-based)."""
    return var("t", j - 1)


def K(j: int) -> Expr:
    """Covector parameter ``k_j`` (one-based)."""
    return var("k", j - 1)


def xs(n: int) -> list[Expr]:
    return [var("x", i) for i in range(n)]


def ts(s: int) -> list[Expr]:
    return [var("t", j) for j in range(s)]


def _split_coef(e: Expr) -> tuple[Fraction, Expr]:
    if e.op == "mul" and e.args[0].op == "const":
        rest = e.args[1:]
        return e.args[0].value, rest[0] if len(rest) == 1 else _intern("mul", rest, None)
    if e.op == "const":
        return e.value, ONE
    return Fraction(1), e


def add(*args) -> Expr:
    flat: list[Expr] = []
    for a in args:
        a = as_expr(a)
        if a.op == "add":
            flat.extend(a.args)
        else:
            flat.append(a)
    c = Fraction(0)
    coefs: dict[Expr, Fraction] = {}
    for a in flat:
        if a.op == "const":
            c += a.value
            continue
        k, rest = _split_coef(a)
        coefs[rest] = coefs.get(rest, Fraction(0)) + k
    terms = []
    for rest, k in coefs.items():
        if k == 0:
            continue
        terms.append(rest if k == 1 else mul(const(k), rest))
    # collecting may expose nested sums only if mul returned an add (never)
    terms.sort(key=lambda e: e._key)
    if c != 0:
        terms.insert(0, const(c))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return _intern("add", tuple(terms), None)


def mul(*args) -> Expr:
    coef = Fraction(1)
    powers: dict[Expr, int] = {}
    stack = [as_expr(a) for a in args]
    while stack:
        a = stack.pop()
        if a.op == "mul":
            stack.extend(a.args)
        elif a.op == "const":
            coef *= a.value
        elif a.op == "pow":
            powers[a.args[0]] = powers.get(a.args[0], 0) + a.value
        else:
            powers[a] = powers.get(a, 0) + 1
    if coef == 0:
        return ZERO
    factors = []
    again = False
    for base, e in powers.items():
        if e == 0:
            continue
        f = power(base, e)
        if f.op in ("mul", "const"):
            again = True
        else:
            b = f.args[0] if f.op == "pow" else f
            if b is not base:
                again = True
        factors.append(f)
    if again:
        return mul(const(coef), *factors)
    factors.sort(key=lambda e: e._key)
    if coef != 1:
        factors.insert(0, const(coef))
    if not factors:
        return const(coef)
    if len(factors) == 1:
        return factors[0]
    return _intern("mul", tuple(factors), None)


def power(b, e: int) -> Expr:
    b = as_expr(b)
    e = int(e)
    if e == 0:
        return ONE
    if e == 1:
        return b
    if b.op == "const":
        if b.value == 0 and e < 0:
            raise DomainError("division by zero constant", {"node": "0", "exponent": e})
        return const(b.value ** e)
    if b.op == "pow":
        return power(b.args[0], b.value * e)
    if b.op == "mul":
        return mul(*[power(a, e) for a in b.args])
    if b.op == "sqrt":
        u = b.args[0]
        if e % 2 == 0:
            return power(u, e // 2)
        return mul(power(u, (e - 1) // 2), b)
    return _intern("pow", (b,), e)


def neg(a) -> Expr:
    return mul(const(-1), a)


def sub(a, b) -> Expr:
    return add(a, neg(b))


def div(a, b) -> Expr:
    return mul(a, power(b, -1))


def _exact_sqrt(q: Fraction) -> Fraction | None:
    if q < 0:
        return None
    n, d = q.numerator, q.denominator
    rn, rd = math.isqrt(n), math.isqrt(d)
    if rn * rn == n and rd * rd == d:
        return Fraction(rn, rd)
    return None


def sqrt(a) -> Expr:
    a = as_expr(a)
    if a.op == "const":
        if a.value < 0:
            raise DomainError("sqrt of negative constant", {"node": format_expr(a)})
        r = _exact_sqrt(a.value)
        if r is not None:
            return const(r)
    return _intern("sqrt", (a,), None)


def exp(a) -> Expr:
    a = as_expr(a)
    if a is ZERO:
        return ONE
    return _intern("exp", (a,), None)


def sin(a) -> Expr:
    a = as_expr(a)
    if a is ZERO:
        return ZERO
    return _intern("sin", (a,), None)


def cos(a) -> Expr:
    a = as_expr(a)
    if a is ZERO:
        return ONE
    return _intern("cos", (a,), None)


def gfun(a, k: int = 0) -> Expr:
    """Internal smooth atom ``exp(-1/u) u^-k`` (zero for ``u <= 0``)."""
    a = as_expr(a)
    if a.op == "const" and a.value <= 0:
        return ZERO
    return _intern("g", (a,), int(k))


def smoothstep(u) -> Expr:
    """``h(u) = g(u) / (g(u) + g(1-u))``: 0 for u <= 0, 1 for u >= 1, C-infinity."""
    u = as_expr(u)
    gu = gfun(u)
    return div(gu, add(gu, gfun(sub(ONE, u))))


_UNARY = {"sqrt": sqrt, "exp": exp, "sin": sin, "cos": cos}


def _rebuild(op: str, args: Sequence[Expr], value) -> Expr:
    if op == "add":
        return add(*args)
    if op == "mul":
        return mul(*args)
    if op == "pow":
        return power(args[0], value)
    if op == "g":
        return gfun(args[0], value)
    return _UNARY[op](args[0])


# ------------------------------------------------------------------- traversal

def postorder(roots: Iterable[Expr]) -> list[Expr]:
    """Unique nodes of the DAG(s), children before parents."""
    order: list[Expr] = []
    seen: set[int] = set()
    stack = [(r, False) for r in reversed(list(roots))]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for a in reversed(node.args):
            if id(a) not in seen:
                stack.append((a, False))
    return order


def node_count(*roots: Expr) -> int:
    """Number of distinct nodes (shared sub-trees counted once)."""
    return len(postorder(roots))


def substitute(e: Expr, mapping: Mapping[Expr, Expr]) -> Expr:
    """Replace variables (or any sub-expressions) and renormalize."""
    memo: dict[int, Expr] = {id(k): as_expr(v) for k, v in mapping.items()}
    for node in postorder([e]):
        if id(node) in memo:
            continue
        if not node.args:
            memo[id(node)] = node
            continue
        new_args = [memo[id(a)] for a in node.args]
        if all(n is a for n, a in zip(new_args, node.args)):
            memo[id(node)] = node
        else:
            memo[id(node)] = _rebuild(node.op, new_args, node.value)
    return memo[id(e)]


def simplify(e: Expr) -> Expr:
    """Rebuild bottom-up through the normalizing constructors.

    Trees built by this module are already normal, so this is idempotent on
    them; it matters for trees assembled with :func:`raw`.
    """
    memo: dict[int, Expr] = {}
    for node in postorder([e]):
        if not node.args:
            memo[id(node)] = node
        else:
            memo[id(node)] = _rebuild(node.op, [memo[id(a)] for a in node.args], node.value)
    return memo[id(e)]


normalize = simplify


def raw(op: str, *args: Expr, value=None) -> Expr:
    """Construct a node without normalization (tests and diagnostics)."""
    if op in ("sub", "div"):
        a, b = args
        return _intern("add" if op == "sub" else "mul",
                       (a, _intern("mul", (const(-1), b), None)) if op == "sub"
                       else (a, _intern("pow", (b,), -1)), None)
    if op == "neg":
        return _intern("mul", (const(-1), args[0]), None)
    return _intern(op, tuple(args), value)


# -------------------------------------------------------------- differentiation

def _d(e: Expr, v: Expr) -> Expr:
    if v.value not in e._free:
        return ZERO
    cache = e._dcache
    if cache is None:
        cache = e._dcache = {}
    hit = cache.get(v.value)
    if hit is not None:
        return hit
    op = e.op
    if op == "var":
        r = ONE
    elif op == "add":
        r = add(*[_d(a, v) for a in e.args])
    elif op == "mul":
        terms = []
        for i, f in enumerate(e.args):
            df = _d(f, v)
            if df is ZERO:
                continue
            terms.append(mul(df, *e.args[:i], *e.args[i + 1:]))
        r = add(*terms)
    elif op == "pow":
        b = e.args[0]
        r = mul(const(e.value), power(b, e.value - 1), _d(b, v))
    elif op == "sqrt":
        r = mul(const(Fraction(1, 2)), _d(e.args[0], v), power(e, -1))
    elif op == "exp":
        r = mul(e, _d(e.args[0], v))
    elif op == "sin":
        r = mul(cos(e.args[0]), _d(e.args[0], v))
    elif op == "cos":
        r = mul(const(-1), sin(e.args[0]), _d(e.args[0], v))
    elif op == "g":
        u, k = e.args[0], e.value
        r = mul(add(gfun(u, k + 2), mul(const(-k), gfun(u, k + 1))), _d(u, v))
    else:  # pragma: no cover - const handled by free-var check
        r = ZERO
    cache[v.value] = r
    return r


def diff(e: Expr, axis: Expr | None = None, index: MultiIndex | None = None) -> Expr:
    """Exact derivative along ``axis`` (a variable node) or mixed partial ``index``."""
    if index is not None:
        r = e
        for i, a in enumerate(index.alpha):
            for _ in range(a):
                r = _d(r, var("x", i))
        for j, b in enumerate(index.beta):
            for _ in range(b):
                r = _d(r, var("t", j))
        if axis is not None:
            r = _d(r, axis)
        return r
    if axis is None or axis.op != "var":
        raise ValueError("diff needs a variable axis or a multiindex")
    return _d(e, axis)


def gradient(e: Expr, variables: Sequence[Expr]) -> list[Expr]:
    return [_d(e, v) for v in variables]


# --------------------------------------------------------------------- printing

def _fmt_const(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def _var_name(value) -> str:
    kind, i = value
    return f"{kind}{i + 1}"


def _is_negative(e: Expr) -> bool:
    if e.op == "const":
        return e.value < 0
    return e.op == "mul" and e.args[0].op == "const" and e.args[0].value < 0


def _fmt_atom(e: Expr, memo) -> str:
    s = _fmt(e, memo)
    if e.op in ("var", "sqrt", "exp", "sin", "cos", "g"):
        return s
    if e.op == "const" and e.value >= 0 and e.value.denominator == 1:
        return s
    return f"({s})"


def _fmt_factor(e: Expr, memo) -> str:
    if e.op == "pow" and e.value > 0:
        return f"{_fmt_atom(e.args[0], memo)}^{e.value}"
    return _fmt_atom(e, memo)


def _fmt_mul(e: Expr, memo) -> str:
    args = list(e.args) if e.op == "mul" else [e]
    coef = Fraction(1)
    if args[0].op == "const":
        coef = args[0].value
        args = args[1:]
    num, den = [], []
    for f in args:
        if f.op == "pow" and f.value < 0:
            den.append(power(f.args[0], -f.value))
        else:
            num.append(f)
    sign = "-" if coef < 0 else ""
    coef = abs(coef)
    parts = []
    if coef != 1 or not num:
        parts.append(_fmt_const(coef))
    parts.extend(_fmt_factor(f, memo) for f in num)
    s = "*".join(parts)
    if den:
        if len(den) == 1:
            s += "/" + _fmt_factor(den[0], memo)
        else:
            s += "/(" + "*".join(_fmt_factor(f, memo) for f in den) + ")"
    return sign + s


def _fmt(e: Expr, memo: dict) -> str:
    hit = memo.get(id(e))
    if hit is not None:
        return hit
    op = e.op
    if op == "const":
        s = _fmt_const(e.value)
    elif op == "var":
        s = _var_name(e.value)
    elif op in _UNARY:
        s = f"{op}({_fmt(e.args[0], memo)})"
    elif op == "g":
        s = f"_g{e.value}({_fmt(e.args[0], memo)})"
    elif op in ("mul", "pow"):
        s = _fmt_mul(e, memo)
    elif op == "add":
        pieces = []
        for i, t in enumerate(e.args):
            if i and _is_negative(t):
                pieces.append(" - " + _fmt(neg(t), memo))
            elif i:
                pieces.append(" + " + _fmt(t, memo))
            else:
                pieces.append(_fmt(t, memo))
        s = "".join(pieces)
    else:  # pragma: no cover
        raise ValueError(op)
    memo[id(e)] = s
    return s


def format_expr(e: Expr) -> str:
    """Print in the input grammar; ``parse(format_expr(e), dims) is e``."""
    return _fmt(e, {})


# ---------------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, text: str, dims: Dims):
        self.text = text
        self.dims = dims
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise ExprSyntaxError("unexpected character", pos, ["number", "name", "operator"])
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, v, pos = self.take()
        if v != value:
            raise ExprSyntaxError(f"unexpected {v or 'end of input'!r}", pos, [value])

    def parse(self) -> Expr:
        e = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {v!r}", pos, ["+", "-", "*", "/", "end of input"])
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self) -> Expr:
        negate = False
        if self.peek()[:2] == ("op", "-"):
            self.take()
            negate = True
        e = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1
            kind, v, pos = self.take()
            if kind != "num" or not v.isdigit():
                raise ExprSyntaxError("exponent must be an integer", pos, ["integer"])
            e = power(e, sign * int(v))
        return neg(e) if negate else e

    def atom(self) -> Expr:
        kind, v, pos = self.take()
        if kind == "num":
            return const(Fraction(v))
        if kind == "op" and v == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            gm = re.fullmatch(r"_g(\d+)", v)
            if v in _UNARY or gm:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return gfun(arg, int(gm.group(1))) if gm else _UNARY[v](arg)
            vm = re.fullmatch(r"([xtk])(\d+)", v)
            if vm:
                kind_, idx = vm.group(1), int(vm.group(2))
                if 1 <= idx <= self.dims.count(kind_):
                    return var(kind_, idx - 1)
            raise UnknownVariable(
                f"unknown variable {v!r} for dims n={self.dims.n}, s={self.dims.s}",
                {"name": v, "dims": [self.dims.n, self.dims.s, self.dims.p], "position": pos},
            )
        raise ExprSyntaxError(f"unexpected {v or 'end of input'!r}", pos,
                              ["number", "variable", "function", "("])


def parse(text: str, dims: Dims) -> Expr:
    """Parse ``text`` in the expression grammar into a normalized tree."""
    return _Parser(text, dims).parse()


def check_dims(e: Expr, dims: Dims) -> None:
    for kind, i in e.free_vars:
        if i >= dims.count(kind):
            raise UnknownVariable(f"variable {kind}{i + 1} outside dims",
                                  {"name": f"{kind}{i + 1}", "dims": [dims.n, dims.s, dims.p]})


# ------------------------------------------------------------------- evaluation

def _g_np(u, k):
    u = np.asarray(u, dtype=float)
    pos = u > 0
    safe = np.where(pos, u, 1.0)
    with np.errstate(over="ignore", under="ignore"):
        val = np.exp(-1.0 / safe - k * np.log(safe))
    return np.where(pos, val, 0.0)


_NS = {"_sqrt": np.sqrt, "_exp": np.exp, "_sin": np.sin, "_cos": np.cos, "_g": _g_np}


class Compiled:
    """Vectorized evaluator for one or more expressions sharing a DAG.

    Calling with ``X`` of shape ``(n, N)``, ``T`` of shape ``(s, N)`` (and
    ``Kp`` of shape ``(p, N)``) returns a list of length-N float arrays. The
    DAG is emitted as straight-line numpy code; intermediates are released
    after their last use and long inputs are processed in chunks so that the
    peak memory stays bounded.
    """

    def __init__(self, exprs: Sequence[Expr], mem_budget: float = 4e8):
        self.exprs = list(exprs)
        order = postorder(self.exprs)
        self.size = len(order)
        names: dict[int, str] = {}
        last_use: dict[int, int] = {}
        lines = []
        idx = 0
        body_nodes = []
        for node in order:
            if node.op == "const":
                names[id(node)] = repr(float(node.value))
            elif node.op == "var":
                kind, i = node.value
                names[id(node)] = {"x": "X", "t": "T", "k": "Kp"}[kind] + f"[{i}]"
            else:
                names[id(node)] = f"v{idx}"
                idx += 1
                body_nodes.append(node)
        for pos, node in enumerate(body_nodes):
            for a in node.args:
                last_use[id(a)] = pos
        outputs = {id(e) for e in self.exprs}
        live = 0
        max_live = 1
        for pos, node in enumerate(body_nodes):
            a = [names[id(c)] for c in node.args]
            op = node.op
            if op == "add":
                rhs = " + ".join(a)
            elif op == "mul":
                rhs = " * ".join(a)
            elif op == "pow":
                e = node.value
                if e == 2:
                    rhs = f"{a[0]} * {a[0]}"
                elif e == -1:
                    rhs = f"1.0 / {a[0]}"
                elif e == -2:
                    rhs = f"1.0 / ({a[0]} * {a[0]})"
                else:
                    rhs = f"{a[0]} ** {float(e)!r}"
            elif op == "g":
                rhs = f"_g({a[0]}, {node.value})"
            else:
                rhs = f"_{op}({a[0]})"
            lines.append(f"    {names[id(node)]} = {rhs}")
            live += 1
            dead = [names[id(c)] for c in set(node.args)
                    if c.op not in ("const", "var") and last_use.get(id(c)) == pos
                    and id(c) not in outputs]
            if dead:
                lines.append("    del " + ", ".join(dead))
                live -= len(dead)
            max_live = max(max_live, live)
        outs = ", ".join(names[id(e)] for e in self.exprs)
        src = "def _f(X, T, Kp):\n" + ("\n".join(lines) + "\n" if lines else "") \
            + f"    return [{outs}{',' if len(self.exprs) == 1 else ''}]\n"
        ns = dict(_NS)
        exec(compile(src, "<oscint-compiled>", "exec"), ns)
        self._f = ns["_f"]
        self.max_live = max_live
        self.chunk = int(max(256, mem_budget // (8 * (max_live + len(self.exprs) + 4))))

    def __call__(self, X, T, Kp=None) -> list[np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        T = np.atleast_2d(np.asarray(T, dtype=float))
        if Kp is None:
            Kp = np.zeros((0, 1))
        Kp = np.atleast_2d(np.asarray(Kp, dtype=float))
        N = max(X.shape[1], T.shape[1], Kp.shape[1])
        X = np.broadcast_to(X, (X.shape[0], N)) if X.shape[1] != N else X
        T = np.broadcast_to(T, (T.shape[0], N)) if T.shape[1] != N else T
        Kp = np.broadcast_to(Kp, (Kp.shape[0], N)) if Kp.shape[1] != N else Kp
        outs = [np.empty(N) for _ in self.exprs]
        with np.errstate(all="ignore"):
            for lo in range(0, N, self.chunk):
                hi = min(N, lo + self.chunk)
                res = self._f(X[:, lo:hi], T[:, lo:hi], Kp[:, lo:hi])
                for o, r in zip(outs, res):
                    o[lo:hi] = r
        return outs


def compile_exprs(exprs: Sequence[Expr]) -> Compiled:
    return Compiled(exprs)


def _compiled_single(e: Expr) -> Compiled:
    if e._compiled is None:
        e._compiled = Compiled([e])
    return e._compiled


def _locate_domain_error(e: Expr, X, T, Kp) -> DomainError:
    vals: dict[int, np.ndarray] = {}
    with np.errstate(all="ignore"):
        for node in postorder([e]):
            op = node.op
            if op == "const":
                v = np.full(X.shape[1], float(node.value))
            elif op == "var":
                kind, i = node.value
                v = {"x": X, "t": T, "k": Kp}[kind][i]
            else:
                a = [vals[id(c)] for c in node.args]
                if op == "add":
                    v = sum(a[1:], a[0])
                elif op == "mul":
                    v = a[0]
                    for b in a[1:]:
                        v = v * b
                elif op == "pow":
                    v = a[0] ** float(node.value)
                elif op == "g":
                    v = _g_np(a[0], node.value)
                else:
                    v = _NS["_" + op](a[0])
                bad = ~np.isfinite(v)
                if bad.any():
                    j = int(np.argmax(bad))
                    return DomainError(
                        f"expression undefined at node {format_expr(node)[:120]!r}",
                        {"node": format_expr(node)[:200], "value": repr(float(v[j])),
                         "arguments": [float(vals[id(c)][j]) for c in node.args],
                         "x": X[:, j].tolist(), "theta": T[:, j].tolist()},
                    )
            vals[id(node)] = v
    return DomainError("expression undefined", {"node": format_expr(e)[:200]})


def evaluate(e: Expr, x, theta, k=None):
    """Evaluate at a point (vectors) or at many points (``(n, N)`` arrays).

    Raises :class:`DomainError` naming the offending node when the value is
    not finite (sqrt of a negative number, division by zero, ...).
    """
    x_arr = np.asarray(x, dtype=float)
    t_arr = np.asarray(theta, dtype=float)
    scalar = x_arr.ndim <= 1 and t_arr.ndim <= 1
    X = x_arr.reshape(-1, 1) if x_arr.ndim <= 1 else x_arr
    T = t_arr.reshape(-1, 1) if t_arr.ndim <= 1 else t_arr
    Kp = None
    if k is not None:
        k_arr = np.asarray(k, dtype=float)
        Kp = k_arr.reshape(-1, 1) if k_arr.ndim <= 1 else k_arr
    out = _compiled_single(e)(X, T, Kp)[0]
    if not np.all(np.isfinite(out)):
        N = out.shape[0]
        Xb = np.broadcast_to(X, (X.shape[0], N))
        Tb = np.broadcast_to(T, (T.shape[0], N))
        Kb = np.broadcast_to(Kp, (Kp.shape[0], N)) if Kp is not None else np.zeros((0, N))
        raise _locate_domain_error(e, Xb, Tb, Kb)
    return float(out[0]) if scalar else out


def lambdify(e: Expr) -> Callable:
    """``f(X, T, Kp=None) -> array`` without the finiteness check."""
    c = _compiled_single(e)
    return lambda X, T, Kp=None: c(X, T, Kp)[0]


def dot(u: Sequence[Expr], v: Sequence[Expr]) -> Expr:
    return add(*[mul(a, b) for a, b in zip(u, v)])


def sum_squares(u: Sequence[Expr]) -> Expr:
    return add(*[power(a, 2) for a in u])
