"""Symbolic scalar expressions over named real variables.

The expression language is deliberately small: real constants, named
variables, the arithmetic operators ``+ - * / ^`` (exponents are numeric
literals, so differentiation stays total), unary negation and the
functions sin, cos, exp, log, sqrt.  Trees are immutable; evaluation
accepts floats or numpy arrays, differentiation is exact and symbolic,
and :func:`simplify` performs constant folding, zero/one identities and
collection of identical additive terms.

Text grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' ('-')? number)?
    base   := number | ident | ident '(' expr (',' expr)* ')'
            | '(' expr ')' | '-' base

Identifiers must be declared variables or known function names.  The
optional sign in exponents is an extension so that printed expressions
always re-parse.
"""

from __future__ import annotations

import math
import re

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Func",
    "ParseError", "EvaluationError", "UnknownVariableError",
    "parse", "to_string", "evaluate", "differentiate", "gradient",
    "substitute", "simplify", "free_vars", "compile_expr", "count_nodes",
    "KNOWN_FUNCTIONS",
]

KNOWN_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

_FUNC_ARRAY = {"sin": np.sin, "cos": np.cos, "exp": np.exp,
               "log": np.log, "sqrt": np.sqrt}
_FUNC_SCALAR = {"sin": math.sin, "cos": math.cos, "exp": math.exp,
                "log": math.log, "sqrt": math.sqrt}


class ParseError(ValueError):
    """Malformed expression text; carries the offending position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(ArithmeticError):
    """The expression has no finite real value at the given point."""


class UnknownVariableError(ValueError):
    """A substitution refers to a variable outside the declared set."""


class Expr:
    """Immutable expression tree node; safe to share between threads."""

    __slots__ = ("_key", "_size")

    def __init__(self):
        self._key = None
        self._size = None

    # -- structural identity ------------------------------------------------

    def key(self):
        """Hashable structural key; equal keys mean identical trees."""
        if self._key is None:
            self._key = self._make_key()
        return self._key

    def __eq__(self, other):
        return isinstance(other, Expr) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __str__(self):
        return to_string(self)

    __repr__ = __str__

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return Add(self, _coerce(other))

    def __radd__(self, other):
        return Add(_coerce(other), self)

    def __sub__(self, other):
        return Sub(self, _coerce(other))

    def __rsub__(self, other):
        return Sub(_coerce(other), self)

    def __mul__(self, other):
        return Mul(self, _coerce(other))

    def __rmul__(self, other):
        return Mul(_coerce(other), self)

    def __truediv__(self, other):
        return Div(self, _coerce(other))

    def __rtruediv__(self, other):
        return Div(_coerce(other), self)

    def __pow__(self, exponent):
        return Pow(self, exponent)

    def __neg__(self):
        return Neg(self)

    def children(self):
        return ()


def _coerce(value):
    if isinstance(value, Expr):
        return value
    return Const(value)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        super().__init__()
        v = float(value)
        self.value = 0.0 if v == 0.0 else v  # normalize -0.0

    def _make_key(self):
        return ("num", self.value)

    def eval(self, env):
        return self.value

    def diff(self, var):
        return _ZERO

    def subs(self, bindings):
        return self


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        super().__init__()
        self.name = name

    def _make_key(self):
        return ("var", self.name)

    def eval(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise EvaluationError(f"unbound variable {self.name!r}") from None

    def diff(self, var):
        return _ONE if self.name == var else _ZERO

    def subs(self, bindings):
        return bindings.get(self.name, self)


class Neg(Expr):
    __slots__ = ("a",)

    def __init__(self, a):
        super().__init__()
        self.a = _coerce(a)

    def _make_key(self):
        return ("neg", self.a.key())

    def children(self):
        return (self.a,)

    def eval(self, env):
        return -self.a.eval(env)

    def diff(self, var):
        return Neg(self.a.diff(var))

    def subs(self, bindings):
        a = self.a.subs(bindings)
        return self if a is self.a else Neg(a)


class _Binary(Expr):
    __slots__ = ("a", "b")

    def __init__(self, a, b):
        super().__init__()
        self.a = _coerce(a)
        self.b = _coerce(b)

    def _make_key(self):
        return (self._tag, self.a.key(), self.b.key())

    def children(self):
        return (self.a, self.b)

    def subs(self, bindings):
        a = self.a.subs(bindings)
        b = self.b.subs(bindings)
        if a is self.a and b is self.b:
            return self
        return type(self)(a, b)


class Add(_Binary):
    __slots__ = ()
    _tag = "add"

    def eval(self, env):
        return self.a.eval(env) + self.b.eval(env)

    def diff(self, var):
        return Add(self.a.diff(var), self.b.diff(var))


class Sub(_Binary):
    __slots__ = ()
    _tag = "sub"

    def eval(self, env):
        return self.a.eval(env) - self.b.eval(env)

    def diff(self, var):
        return Sub(self.a.diff(var), self.b.diff(var))


class Mul(_Binary):
    __slots__ = ()
    _tag = "mul"

    def eval(self, env):
        return self.a.eval(env) * self.b.eval(env)

    def diff(self, var):
        return Add(Mul(self.a.diff(var), self.b), Mul(self.a, self.b.diff(var)))


class Div(_Binary):
    __slots__ = ()
    _tag = "div"

    def eval(self, env):
        return self.a.eval(env) / self.b.eval(env)

    def diff(self, var):
        num = Sub(Mul(self.a.diff(var), self.b), Mul(self.a, self.b.diff(var)))
        return Div(num, Pow(self.b, 2))


class Pow(Expr):
    """Power with a constant real exponent."""

    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        super().__init__()
        self.base = _coerce(base)
        self.exponent = float(exponent)

    def _make_key(self):
        return ("pow", self.base.key(), self.exponent)

    def children(self):
        return (self.base,)

    def eval(self, env):
        # np.power keeps negative-base / fractional-exponent cases as nan
        # instead of drifting into complex arithmetic.
        return np.power(self.base.eval(env), self.exponent)

    def diff(self, var):
        c = self.exponent
        return Mul(Mul(Const(c), Pow(self.base, c - 1.0)), self.base.diff(var))

    def subs(self, bindings):
        base = self.base.subs(bindings)
        return self if base is self.base else Pow(base, self.exponent)


class Func(Expr):
    """Named function application (sin, cos, exp, log, sqrt)."""

    __slots__ = ("name", "args")

    def __init__(self, name, *args):
        super().__init__()
        if name not in KNOWN_FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")
        if len(args) != 1:
            raise ValueError(f"{name} expects 1 argument, got {len(args)}")
        self.name = name
        self.args = tuple(_coerce(a) for a in args)

    @property
    def arg(self):
        return self.args[0]

    def _make_key(self):
        return ("fn", self.name) + tuple(a.key() for a in self.args)

    def children(self):
        return self.args

    def eval(self, env):
        return _FUNC_ARRAY[self.name](self.arg.eval(env))

    def diff(self, var):
        u = self.arg
        du = u.diff(var)
        if self.name == "sin":
            return Mul(Func("cos", u), du)
        if self.name == "cos":
            return Neg(Mul(Func("sin", u), du))
        if self.name == "exp":
            return Mul(self, du)
        if self.name == "log":
            return Div(du, u)
        # sqrt
        return Div(du, Mul(Const(2), Func("sqrt", u)))

    def subs(self, bindings):
        arg = self.arg.subs(bindings)
        return self if arg is self.arg else Func(self.name, arg)


_ZERO = Const(0.0)
_ONE = Const(1.0)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def evaluate(e, point):
    """Evaluate ``e`` at a point (name -> float); raise on singularities."""
    try:
        with np.errstate(all="ignore"):
            v = float(e.eval(point))
    except ZeroDivisionError:
        raise EvaluationError("division by zero") from None
    except (ValueError, OverflowError) as exc:
        raise EvaluationError(str(exc)) from None
    if not math.isfinite(v):
        raise EvaluationError("expression is singular at the given point")
    return v


def differentiate(e, var):
    """Exact partial derivative of ``e`` with respect to variable ``var``."""
    return simplify(e.diff(var))


def gradient(e, variables):
    """Component-wise derivatives of ``e`` along ``variables``."""
    return [differentiate(e, v) for v in variables]


def substitute(e, bindings, variables=None):
    """Simultaneous substitution of variables by expressions.

    ``bindings`` maps variable names to replacement expressions (numbers
    are coerced to constants).  When ``variables`` is given, every free
    variable of the replacement expressions must belong to it.
    """
    coerced = {name: _coerce(v) for name, v in bindings.items()}
    if variables is not None:
        declared = set(variables)
        for name, repl in coerced.items():
            undeclared = free_vars(repl) - declared
            if undeclared:
                raise UnknownVariableError(
                    f"replacement for {name!r} uses undeclared variable(s) "
                    f"{sorted(undeclared)}")
    return e.subs(coerced)


def free_vars(e):
    """Set of variable names appearing in ``e``."""
    out = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if type(node) is Var:
            out.add(node.name)
        else:
            stack.extend(node.children())
    return out


def count_nodes(e):
    """Number of nodes in the tree (constant-exponent counts as one node)."""
    if e._size is None:
        e._size = 1 + sum(count_nodes(c) for c in e.children())
    return e._size


def compile_expr(e, variables):
    """Compile to a fast scalar callable ``f(values)``.

    ``values`` is indexed positionally following ``variables``.  Math-domain
    errors (division by zero, log of a negative, overflow) surface as the
    usual arithmetic exceptions.
    """
    index = {name: i for i, name in enumerate(variables)}
    missing = free_vars(e) - set(variables)
    if missing:
        raise UnknownVariableError(f"unbound variable(s) {sorted(missing)}")
    return _compile(e, index)


def _compile(e, index):
    t = type(e)
    if t is Const:
        v = e.value
        return lambda x: v
    if t is Var:
        i = index[e.name]
        return lambda x: x[i]
    if t is Neg:
        f = _compile(e.a, index)
        return lambda x: -f(x)
    if t is Add:
        fa, fb = _compile(e.a, index), _compile(e.b, index)
        return lambda x: fa(x) + fb(x)
    if t is Sub:
        fa, fb = _compile(e.a, index), _compile(e.b, index)
        return lambda x: fa(x) - fb(x)
    if t is Mul:
        fa, fb = _compile(e.a, index), _compile(e.b, index)
        return lambda x: fa(x) * fb(x)
    if t is Div:
        fa, fb = _compile(e.a, index), _compile(e.b, index)
        return lambda x: fa(x) / fb(x)
    if t is Pow:
        f = _compile(e.base, index)
        c = e.exponent
        if c == int(c):
            ci = int(c)
            return lambda x: f(x) ** ci
        return lambda x: math.pow(f(x), c)
    if t is Func:
        g = _FUNC_SCALAR[e.name]
        f = _compile(e.arg, index)
        return lambda x: g(f(x))
    raise TypeError(f"cannot compile {type(e).__name__}")


# ---------------------------------------------------------------------------
# simplification
# ---------------------------------------------------------------------------

def simplify(e):
    """Value-preserving normalization.

    Guarantees constant folding, the zero/one identities, ``x - x -> 0``
    and collection of identical additive terms; products are flattened
    and their factors put in a canonical order so that equal-valued terms
    built in different orders actually collect.
    """
    t = type(e)
    if t is Const or t is Var:
        return e
    if t is Neg:
        return _negate(simplify(e.a))
    if t is Add or t is Sub:
        return _simplify_sum(e)
    if t is Mul:
        return _simplify_product(e)
    if t is Div:
        return _simplify_div(e)
    if t is Pow:
        return _simplify_pow(e)
    if t is Func:
        return _simplify_func(e)
    raise TypeError(f"cannot simplify {type(e).__name__}")


def _is_zero(e):
    return type(e) is Const and e.value == 0.0


def _negate(u):
    """Negate an already-simplified expression."""
    t = type(u)
    if t is Const:
        return Const(-u.value)
    if t is Neg:
        return u.a
    c, core = _split_coeff(u)
    return _rebuild_term(-c, core)


def _split_coeff(u):
    """Split a canonical non-sum term into (constant coefficient, core)."""
    if type(u) is Mul and type(u.a) is Const:
        return u.a.value, u.b
    return 1.0, u


def _rebuild_term(c, core):
    if c == 1.0:
        return core
    if c == -1.0:
        return Neg(core)
    return Mul(Const(c), core)


def _simplify_sum(e):
    const = 0.0
    terms = {}  # core key -> [coefficient, core expr]
    stack = [(e, 1.0, False)]  # (node, multiplier, already canonical)
    while stack:
        node, mult, done = stack.pop()
        t = type(node)
        if t is Add:
            stack.append((node.a, mult, done))
            stack.append((node.b, mult, done))
        elif t is Sub:
            stack.append((node.a, mult, done))
            stack.append((node.b, -mult, done))
        elif t is Neg:
            stack.append((node.a, -mult, done))
        elif t is Const:
            const += mult * node.value
        else:
            u = node if done else simplify(node)
            if type(u) in (Add, Sub, Neg, Const):
                stack.append((u, mult, True))
                continue
            c, core = _split_coeff(u)
            c *= mult
            if type(core) in (Add, Sub):
                # constant times a sum: distribute so identical terms collect
                stack.append((core, c, True))
                continue
            k = core.key()
            if k in terms:
                terms[k][0] += c
            else:
                terms[k] = [c, core]

    items = sorted(((core.key(), c, core) for c, core in terms.values()))
    out = None
    for _, c, core in items:
        if c == 0.0:
            continue
        if out is None:
            out = _rebuild_term(c, core)
        elif c < 0.0:
            out = Sub(out, _rebuild_term(-c, core))
        else:
            out = Add(out, _rebuild_term(c, core))
    if out is None:
        return Const(const)
    if const != 0.0:
        out = Sub(out, Const(-const)) if const < 0.0 else Add(out, Const(const))
    return out


def _simplify_product(e):
    coeff = 1.0
    factors = []
    stack = [(e, False)]
    while stack:
        node, done = stack.pop()
        t = type(node)
        if t is Mul:
            stack.append((node.a, done))
            stack.append((node.b, done))
        elif t is Neg:
            coeff = -coeff
            stack.append((node.a, done))
        elif t is Const:
            coeff *= node.value
        else:
            u = node if done else simplify(node)
            if type(u) in (Mul, Neg, Const):
                stack.append((u, True))
                continue
            factors.append(u)
    if coeff == 0.0:
        return _ZERO
    factors.sort(key=lambda f: f.key())
    core = None
    for f in factors:
        core = f if core is None else Mul(core, f)
    if core is None:
        return Const(coeff)
    return _rebuild_term(coeff, core)


def _strip_sign(u):
    if type(u) is Neg:
        return u.a, -1.0
    if type(u) is Const and u.value < 0.0:
        return Const(-u.value), -1.0
    return u, 1.0


def _simplify_div(e):
    num = simplify(e.a)
    den = simplify(e.b)
    num, s1 = _strip_sign(num)
    den, s2 = _strip_sign(den)
    sign = s1 * s2
    if _is_zero(num) and not _is_zero(den):
        return _ZERO
    if type(den) is Const and den.value != 0.0:
        if den.value == 1.0:
            return num if sign > 0 else _negate(num)
        return simplify(Mul(Const(sign / den.value), num))
    if num.key() == den.key():
        return Const(sign)
    out = Div(num, den)
    return Neg(out) if sign < 0 else out


def _simplify_pow(e):
    base = simplify(e.base)
    c = e.exponent
    if c == 0.0:
        return _ONE
    if c == 1.0:
        return base
    if type(base) is Const:
        try:
            v = math.pow(base.value, c)
        except (ValueError, OverflowError, ZeroDivisionError):
            v = None
        if v is not None and math.isfinite(v):
            return Const(v)
    if type(base) is Neg and c == int(c):
        inner = Pow(base.a, c)
        return inner if int(c) % 2 == 0 else Neg(inner)
    return Pow(base, c)


def _simplify_func(e):
    arg = simplify(e.arg)
    if type(arg) is Const:
        try:
            v = _FUNC_SCALAR[e.name](arg.value)
        except (ValueError, OverflowError):
            v = None
        if v is not None and math.isfinite(v):
            return Const(v)
    return Func(e.name, arg)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def to_string(e):
    """Render as text that re-parses to a value-equal expression."""
    return _fmt(e, 0)


def _prec(e):
    t = type(e)
    if t is Add or t is Sub:
        return 1
    if t is Mul or t is Div or t is Neg:
        return 2
    if t is Pow:
        return 3
    if t is Const and e.value < 0.0:
        return 2
    return 4


def _fmt(e, min_prec):
    t = type(e)
    if t is Const:
        s = _fmt_number(e.value)
    elif t is Var:
        s = e.name
    elif t is Add:
        s = f"{_fmt(e.a, 1)} + {_fmt(e.b, 1)}"
    elif t is Sub:
        s = f"{_fmt(e.a, 1)} - {_fmt(e.b, 2)}"
    elif t is Mul:
        s = f"{_fmt(e.a, 2)}*{_fmt(e.b, 2)}"
    elif t is Div:
        s = f"{_fmt(e.a, 2)}/{_fmt(e.b, 3)}"
    elif t is Neg:
        s = f"-{_fmt(e.a, 4)}"
    elif t is Pow:
        s = f"{_fmt(e.base, 4)}^{_fmt_number(e.exponent)}"
    elif t is Func:
        s = f"{e.name}({_fmt(e.arg, 0)})"
    else:
        raise TypeError(f"cannot print {type(e).__name__}")
    if _prec(e) < min_prec:
        return f"({s})"
    return s


def _fmt_number(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""(?P<ws>\s+)
      | (?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op>[+\-*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, variables):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = frozenset(variables)

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept_op(self, *ops):
        kind, text, _ = self.peek()
        if kind == "op" and text in ops:
            self.advance()
            return text
        return None

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected {op!r}", pos)
        self.advance()

    def parse(self):
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {text!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while True:
            op = self.accept_op("+", "-")
            if op is None:
                return e
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)

    def term(self):
        e = self.factor()
        while True:
            op = self.accept_op("*", "/")
            if op is None:
                return e
            rhs = self.factor()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)

    def factor(self):
        base = self.base()
        if self.accept_op("^"):
            sign = -1.0 if self.accept_op("-") else 1.0
            kind, text, pos = self.peek()
            if kind != "num":
                raise ParseError("exponent must be a numeric literal", pos)
            self.advance()
            return Pow(base, sign * float(text))
        return base

    def base(self):
        kind, text, pos = self.peek()
        if kind == "num":
            self.advance()
            return Const(float(text))
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.base())
        if kind == "op" and text == "(":
            self.advance()
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "ident":
            self.advance()
            if self.accept_op("("):
                if text not in KNOWN_FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", pos)
                args = [self.expr()]
                while self.accept_op(","):
                    args.append(self.expr())
                self.expect_op(")")
                if len(args) != 1:
                    raise ParseError(f"{text} expects 1 argument", pos)
                return Func(text, args[0])
            if text in self.variables:
                return Var(text)
            if text in KNOWN_FUNCTIONS:
                raise ParseError(f"function {text!r} must be applied", pos)
            raise ParseError(f"unknown identifier {text!r}", pos)
        raise ParseError("expected an expression", pos)


def parse(text, variables):
    """Parse ``text`` into an expression over the declared ``variables``."""
    clash = set(variables) & set(KNOWN_FUNCTIONS)
    if clash:
        raise ValueError(f"variable name(s) {sorted(clash)} shadow functions")
    return _Parser(text, variables).parse()
