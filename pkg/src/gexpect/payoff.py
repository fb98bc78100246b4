"""Cylinder payoffs: expression trees over monitored coordinates and a parser.

A payoff phi(w_1, ..., w_n) of the monitored values is a small expression
tree with the built-ins const, coord (x1..x3), +, -, *, neg, abs, sq, min,
max, clamp, call, put.  Trees evaluate vectorized over numpy arrays, report
their own Lipschitz constant and value range on a box (interval arithmetic),
and round-trip through a text form:

    sq(x1)          (x2 - x1) * (x2 - x1)        min(abs(x1), 1)
    call(x1, 0)     0.5 * x1 + const(1)          clamp(x2, -1, 2)
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_UNARY = {"neg", "abs", "sq"}
_BINARY = {"add", "sub", "mul", "min", "max"}
_FUNCS = {"const", "abs", "min", "max", "call", "put", "sq", "neg", "clamp"}


class Expr:
    """Immutable payoff expression node."""

    __slots__ = ("op", "args")

    def __init__(self, op, *args):
        self.op = op
        self.args = args

    # -- construction sugar ------------------------------------------------
    def __add__(self, other):
        return Expr("add", self, _wrap(other))

    def __radd__(self, other):
        return Expr("add", _wrap(other), self)

    def __sub__(self, other):
        return Expr("sub", self, _wrap(other))

    def __rsub__(self, other):
        return Expr("sub", _wrap(other), self)

    def __mul__(self, other):
        return Expr("mul", self, _wrap(other))

    def __rmul__(self, other):
        return Expr("mul", _wrap(other), self)

    def __neg__(self):
        return Expr("neg", self)

    def __eq__(self, other):
        return (isinstance(other, Expr) and self.op == other.op
                and self.args == other.args)

    def __hash__(self):
        return hash((self.op, self.args))

    def __repr__(self):
        return f"Expr({self.to_source()!r})"

    # -- evaluation --------------------------------------------------------
    def __call__(self, *coords):
        op, a = self.op, self.args
        if op == "const":
            return float(a[0])
        if op == "coord":
            return np.asarray(coords[a[0] - 1], dtype=float)
        if op == "add":
            return a[0](*coords) + a[1](*coords)
        if op == "sub":
            return a[0](*coords) - a[1](*coords)
        if op == "mul":
            return a[0](*coords) * a[1](*coords)
        if op == "neg":
            return -a[0](*coords)
        if op == "abs":
            return np.abs(a[0](*coords))
        if op == "sq":
            v = a[0](*coords)
            return v * v
        if op == "min":
            return np.minimum(a[0](*coords), a[1](*coords))
        if op == "max":
            return np.maximum(a[0](*coords), a[1](*coords))
        if op == "clamp":
            return np.clip(a[0](*coords), a[1], a[2])
        if op == "call":
            return np.maximum(a[0](*coords) - a[1], 0.0)
        if op == "put":
            return np.maximum(a[1] - a[0](*coords), 0.0)
        raise ValueError(f"unknown op {op!r}")

    # -- static analysis ---------------------------------------------------
    @property
    def arity(self) -> int:
        """Highest coordinate index referenced (0 for constants)."""
        if self.op == "coord":
            return self.args[0]
        return max((c.arity for c in self.args if isinstance(c, Expr)), default=0)

    def value_range(self, half_width=math.inf):
        """Interval bounds (lo, hi) of the value on |w_i| <= half_width."""
        op, a = self.op, self.args
        if op == "const":
            return (a[0], a[0])
        if op == "coord":
            return (-half_width, half_width)
        if op in ("add", "sub", "mul", "min", "max"):
            l1, h1 = a[0].value_range(half_width)
            l2, h2 = a[1].value_range(half_width)
            if op == "add":
                return (l1 + l2, h1 + h2)
            if op == "sub":
                return (l1 - h2, h1 - l2)
            if op == "min":
                return (min(l1, l2), min(h1, h2))
            if op == "max":
                return (max(l1, l2), max(h1, h2))
            cands = [_iv_mul(p, q) for p in (l1, h1) for q in (l2, h2)]
            return (min(cands), max(cands))
        lo, hi = a[0].value_range(half_width)
        if op == "neg":
            return (-hi, -lo)
        if op == "abs":
            m = max(abs(lo), abs(hi))
            return (0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi)), m)
        if op == "sq":
            m = max(_iv_mul(lo, lo), _iv_mul(hi, hi))
            return (0.0 if lo <= 0.0 <= hi else min(_iv_mul(lo, lo), _iv_mul(hi, hi)), m)
        if op == "clamp":
            return (max(lo, a[1]), min(hi, a[2]))
        if op == "call":
            return (max(lo - a[1], 0.0), max(hi - a[1], 0.0))
        if op == "put":
            return (max(a[1] - hi, 0.0), max(a[1] - lo, 0.0))
        raise ValueError(f"unknown op {op!r}")

    def lipschitz(self, half_width=math.inf) -> float:
        """Lipschitz constant bound wrt the coordinates, on the box."""
        op, a = self.op, self.args
        if op == "const":
            return 0.0
        if op == "coord":
            return 1.0
        if op in ("add", "sub"):
            return a[0].lipschitz(half_width) + a[1].lipschitz(half_width)
        if op in ("min", "max"):
            return max(a[0].lipschitz(half_width), a[1].lipschitz(half_width))
        if op == "mul":
            s1 = _abs_sup(a[0].value_range(half_width))
            s2 = _abs_sup(a[1].value_range(half_width))
            return (_iv_mul(a[0].lipschitz(half_width), s2)
                    + _iv_mul(a[1].lipschitz(half_width), s1))
        if op == "sq":
            s = _abs_sup(a[0].value_range(half_width))
            return _iv_mul(2.0 * a[0].lipschitz(half_width), s)
        # neg, abs, clamp, call, put are 1-Lipschitz wrappers
        return a[0].lipschitz(half_width)

    def sup_bound(self):
        """Sup-norm bound over the whole space, or None when unbounded."""
        lo, hi = self.value_range(math.inf)
        m = max(abs(lo), abs(hi))
        return m if math.isfinite(m) else None

    # -- emission ----------------------------------------------------------
    def to_source(self) -> str:
        op, a = self.op, self.args
        if op == "const":
            return _fmt(a[0])
        if op == "coord":
            return f"x{a[0]}"
        if op in ("add", "sub", "mul"):
            sym = {"add": "+", "sub": "-", "mul": "*"}[op]
            return f"({a[0].to_source()} {sym} {a[1].to_source()})"
        if op in ("min", "max"):
            return f"{op}({a[0].to_source()}, {a[1].to_source()})"
        if op in ("neg", "abs", "sq"):
            return f"{op}({a[0].to_source()})"
        if op == "clamp":
            return f"clamp({a[0].to_source()}, {_fmt(a[1])}, {_fmt(a[2])})"
        if op in ("call", "put"):
            return f"{op}({a[0].to_source()}, {_fmt(a[1])})"
        raise ValueError(f"unknown op {op!r}")


def _wrap(v):
    return v if isinstance(v, Expr) else Expr("const", float(v))


def _fmt(v: float) -> str:
    return repr(float(v))


def _iv_mul(p, q):
    # interval-endpoint product with 0*inf treated as 0
    if p == 0.0 or q == 0.0:
        return 0.0
    return p * q


def _abs_sup(rng):
    return max(abs(rng[0]), abs(rng[1]))


# convenience node builders
def const(v) -> Expr:
    return Expr("const", float(v))


def coord(k: int) -> Expr:
    if not 1 <= k <= 3:
        raise ValueError("coordinates x1..x3 supported")
    return Expr("coord", int(k))


x1, x2, x3 = coord(1), coord(2), coord(3)


# ---------------------------------------------------------------------------
# parser: expr := term (('+'|'-') term)*; term := factor ('*' factor)*;
# factor := '-' factor | primary; primary := number | coord | func(...) | (expr)
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
                    r"|\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(.))")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"bad payoff expression near {text[pos:pos+10]!r}")
        num, name, sym = m.groups()
        if num is not None:
            tokens.append(("num", float(num)))
        elif name is not None:
            tokens.append(("name", name))
        elif sym.strip():
            if sym not in "+-*(),":
                raise ConfigError(f"unexpected character {sym!r} in payoff expression")
            tokens.append((sym, sym))
        pos = m.end()
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i][0]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise ConfigError(f"expected {kind!r} in payoff expression, got {tok[1]!r}")
        return tok

    def parse(self):
        e = self.expr()
        if self.peek() != "end":
            raise ConfigError("trailing input in payoff expression")
        return e

    def expr(self):
        e = self.term()
        while self.peek() in ("+", "-"):
            op = self.next()[0]
            rhs = self.term()
            e = Expr("add" if op == "+" else "sub", e, rhs)
        return e

    def term(self):
        e = self.factor()
        while self.peek() == "*":
            self.next()
            e = Expr("mul", e, self.factor())
        return e

    def factor(self):
        if self.peek() == "-":
            self.next()
            return Expr("neg", self.factor())
        return self.primary()

    def primary(self):
        kind, val = self.next()
        if kind == "num":
            return Expr("const", val)
        if kind == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind != "name":
            raise ConfigError(f"unexpected token {val!r} in payoff expression")
        if re.fullmatch(r"x[123]", val):
            return coord(int(val[1]))
        if val not in _FUNCS:
            raise ConfigError(f"unknown payoff function {val!r}")
        self.expect("(")
        args = [self.expr()]
        while self.peek() == ",":
            self.next()
            args.append(self.expr())
        self.expect(")")
        return self.build(val, args)

    def build(self, name, args):
        def need(n):
            if len(args) != n:
                raise ConfigError(f"{name} takes {n} argument(s), got {len(args)}")

        if name == "const":
            need(1)
            return Expr("const", _const_value(args[0]))
        if name in ("neg", "abs", "sq"):
            need(1)
            return Expr(name, args[0])
        if name in ("min", "max"):
            need(2)
            return Expr(name, args[0], args[1])
        if name in ("call", "put"):
            need(2)
            return Expr(name, args[0], _const_value(args[1]))
        if name == "clamp":
            need(3)
            lo, hi = _const_value(args[1]), _const_value(args[2])
            if lo > hi:
                raise ConfigError("clamp bounds out of order")
            return Expr(name, args[0], lo, hi)
        raise ConfigError(f"unknown payoff function {name!r}")


def _const_value(e: Expr) -> float:
    if e.arity > 0:
        raise ConfigError("expected a constant sub-expression")
    return float(e())


def parse_expr(text: str) -> Expr:
    """Parse the payoff mini-language into an expression tree."""
    return _Parser(_tokenize(text)).parse()


@dataclass(frozen=True)
class PayoffSpec:
    """A cylinder payoff phi(W_{t_1}, ..., W_{t_n}) with monitoring dates.

    times must be strictly increasing with last equal to 1.  lipschitz and
    sup_bound may be declared; when omitted they are derived from the tree
    (sup_bound stays None for unbounded payoffs, in which case sup-norm
    invariants are skipped downstream).
    """

    expr: Expr
    times: tuple
    lipschitz: float | None = None
    sup_bound: float | None = None

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not times:
            raise ValueError("need at least one monitoring time")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("monitoring times must be strictly increasing")
        if times[0] <= 0.0:
            raise ValueError("monitoring times must be positive")
        if abs(times[-1] - 1.0) > 1e-12:
            raise ValueError("last monitoring time must equal 1")
        if self.expr.arity > len(times):
            raise ValueError("expression references more coordinates than "
                             "monitoring times")
        if self.lipschitz is not None and self.lipschitz < 0:
            raise ValueError("declared Lipschitz bound must be >= 0")
        object.__setattr__(self, "times", times)
        if self.sup_bound is None:
            object.__setattr__(self, "sup_bound", self.expr.sup_bound())

    @classmethod
    def parse(cls, text: str, times=(1.0,), lipschitz=None, sup_bound=None):
        return cls(parse_expr(text), tuple(times), lipschitz, sup_bound)

    @property
    def n(self) -> int:
        return len(self.times)

    def lipschitz_on(self, half_width: float) -> float:
        if self.lipschitz is not None:
            return self.lipschitz
        return self.expr.lipschitz(half_width)

    def evaluate(self, samples):
        """Evaluate on samples with monitored values along the last axis."""
        arr = np.asarray(samples, dtype=float)
        if arr.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} monitored values per sample")
        out = np.asarray(self.expr(*(arr[..., j] for j in range(self.n))),
                         dtype=float)
        return np.broadcast_to(out, arr.shape[:-1]).copy()

    def absolute(self) -> "PayoffSpec":
        bound = self.sup_bound
        return PayoffSpec(Expr("abs", self.expr), self.times,
                          self.lipschitz, bound)

    def negated(self) -> "PayoffSpec":
        return PayoffSpec(Expr("neg", self.expr), self.times,
                          self.lipschitz, self.sup_bound)

    def shifted(self, c: float) -> "PayoffSpec":
        bound = None if self.sup_bound is None else self.sup_bound + abs(c)
        return PayoffSpec(self.expr + const(c), self.times,
                          self.lipschitz, bound)

    def with_prepended_time(self, t: float) -> "PayoffSpec":
        """Insert an extra (ignored) monitoring date before the others.

        The value is unchanged; coordinates shift up by one.  Used to make an
        interior time a genuine monitoring date of the nested solve.
        """
        if not 0.0 < t < self.times[0]:
            raise ValueError("prepended time must precede the first date")
        return PayoffSpec(_shift_coords(self.expr, 1), (t,) + self.times,
                          self.lipschitz, self.sup_bound)

    def source(self) -> str:
        return self.expr.to_source()


def _shift_coords(e: Expr, offset: int) -> Expr:
    if e.op == "coord":
        return coord(e.args[0] + offset)
    args = tuple(_shift_coords(a, offset) if isinstance(a, Expr) else a
                 for a in e.args)
    return Expr(e.op, *args)
