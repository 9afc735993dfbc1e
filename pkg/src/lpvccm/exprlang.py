"""Small math-expression language: parser, evaluator, symbolic derivative.

Grammar (loosest binding first)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``; it is
right associative (``a^b^c`` is ``a^(b^c)``).  Supported functions are
``exp``, ``ln``, ``sin``, ``cos`` and ``sqrt``.

Expressions are immutable trees.  They can be evaluated point-wise with
:func:`evaluate` (which reports domain errors with the offending
subexpression) or compiled to vectorised numpy callables with
:func:`compile_exprs`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt")
UNARY_OPS = ("neg",) + FUNCTIONS
BINARY_OPS = ("+", "-", "*", "/", "^")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at offset {position} in {text!r}")


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str, text: str, position: int):
        self.name = name
        self.text = text
        self.position = position
        super().__init__(f"undeclared variable {name!r} at offset {position} in {text!r}")


class ArityError(ExprError):
    def __init__(self, func: str, nargs: int, text: str, position: int):
        self.func = func
        self.nargs = nargs
        self.position = position
        super().__init__(
            f"{func}() takes exactly 1 argument ({nargs} given) at offset {position} in {text!r}"
        )


class ExprDomainError(ExprError, ArithmeticError):
    """Evaluation left the real domain (ln of non-positive, division by zero, ...)."""

    def __init__(self, message: str, subexpr: "Expr | str | None" = None):
        self.subexpr = subexpr
        self.overflow = "overflow" in message
        where = f" in {to_string(subexpr)}" if isinstance(subexpr, Expr) else (
            f" in {subexpr}" if subexpr else "")
        super().__init__(f"{message}{where}")


# ---------------------------------------------------------------------------
# AST


class Expr:
    __slots__ = ()

    def variables(self) -> frozenset[str]:
        raise NotImplementedError

    def __str__(self) -> str:
        return to_string(self)

    # operator sugar for building expressions in code
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __pow__(self, other):
        return power(self, _lift(other))

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, eq=True, slots=True)
class Const(Expr):
    value: float

    def variables(self):
        return frozenset()


@dataclass(frozen=True, eq=True, slots=True)
class Var(Expr):
    name: str

    def variables(self):
        return frozenset((self.name,))


@dataclass(frozen=True, eq=True, slots=True)
class Unary(Expr):
    op: str
    arg: Expr

    def variables(self):
        return self.arg.variables()


@dataclass(frozen=True, eq=True, slots=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def variables(self):
        return self.left.variables() | self.right.variables()


ZERO = Const(0.0)
ONE = Const(1.0)


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


def _is(e: Expr, value: float) -> bool:
    return isinstance(e, Const) and e.value == value


# Smart constructors: fold identity/annihilator patterns and constant arithmetic.

def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Binary("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            folded = _pow(a.value, b.value)
        except (ArithmeticError, ValueError):
            folded = None
        if folded is not None and math.isfinite(folded):
            return Const(folded)
    return Binary("^", a, b)


def func(name: str, a: Expr) -> Expr:
    if name == "neg":
        return neg(a)
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    return Unary(name, a)


# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            pos += len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: frozenset[str] | None):
        self.text = text
        self.variables = variables
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.peek()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", self.text, pos)
        self.take()

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", self.text, pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Binary(op, e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Binary(op, e, rhs)
        return e

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Unary("neg", self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ExprSyntaxError(f"function {val!r} requires '('", self.text, self.peek()[2])
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ArityError(val, len(args), self.text, pos)
                return Unary(val, args[0])
            if self.variables is not None and val not in self.variables:
                raise UndeclaredVariableError(val, self.text, pos)
            return Var(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", self.text, pos)


def parse(text: str | float | int, variables: Iterable[str] | None = None) -> Expr:
    """Parse ``text`` into an expression over the declared ``variables``.

    Numbers are accepted as-is.  With ``variables=None`` any identifier is
    accepted; otherwise unknown identifiers raise
    :class:`UndeclaredVariableError`.
    """
    if isinstance(text, Expr):
        return text
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return Const(float(text))
    if not isinstance(text, str):
        raise ExprError(f"cannot parse {type(text).__name__} as expression")
    declared = None if variables is None else frozenset(variables)
    return _Parser(text, declared).parse()


# ---------------------------------------------------------------------------
# Printing

def _fmt_const(v: float) -> str:
    if v < 0 or (v == 0 and math.copysign(1.0, v) < 0):
        return f"(-{repr(-v)})"
    return repr(v)


def to_string(e: Expr) -> str:
    """Fully parenthesised text form; ``parse(to_string(e))`` evaluates like ``e``."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{to_string(e.arg)})"
        return f"{e.op}({to_string(e.arg)})"
    if isinstance(e, Binary):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# Evaluation

def _pow(a: float, b: float) -> float:
    if a < 0 and not float(b).is_integer():
        raise ExprDomainError("negative base with non-integer exponent")
    if a == 0 and b < 0:
        raise ExprDomainError("zero raised to a negative power")
    return math.pow(a, b)


def evaluate(e: Expr, binding: Mapping[str, float]) -> float:
    """Evaluate ``e`` at a point; all variables must be bound."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(binding[e.name])
        except KeyError:
            raise ExprError(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Unary):
        a = evaluate(e.arg, binding)
        try:
            if e.op == "neg":
                return -a
            if e.op == "exp":
                return math.exp(a)
            if e.op == "ln":
                if a <= 0:
                    raise ExprDomainError(f"ln of non-positive value {a!r}", e)
                return math.log(a)
            if e.op == "sin":
                return math.sin(a)
            if e.op == "cos":
                return math.cos(a)
            if e.op == "sqrt":
                if a < 0:
                    raise ExprDomainError(f"sqrt of negative value {a!r}", e)
                return math.sqrt(a)
        except OverflowError:
            raise ExprDomainError("overflow", e) from None
        raise ExprError(f"unknown unary op {e.op!r}")
    if isinstance(e, Binary):
        a = evaluate(e.left, binding)
        b = evaluate(e.right, binding)
        try:
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                if b == 0:
                    raise ExprDomainError("division by zero", e)
                return a / b
            if e.op == "^":
                return _pow(a, b)
        except ExprDomainError as exc:
            if exc.subexpr is None:
                raise ExprDomainError(str(exc), e) from None
            raise
        except OverflowError:
            raise ExprDomainError("overflow", e) from None
        raise ExprError(f"unknown binary op {e.op!r}")
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# Differentiation

def diff(e: Expr, v: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``v``."""
    if v not in e.variables():
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Unary):
        a = e.arg
        da = diff(a, v)
        if e.op == "neg":
            return neg(da)
        if e.op == "exp":
            return mul(e, da)
        if e.op == "ln":
            return div(da, a)
        if e.op == "sin":
            return mul(Unary("cos", a), da)
        if e.op == "cos":
            return neg(mul(Unary("sin", a), da))
        if e.op == "sqrt":
            return div(da, mul(Const(2.0), e))
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = diff(a, v), diff(b, v)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        if e.op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
        if e.op == "^":
            if v not in b.variables():
                return mul(mul(b, power(a, sub(b, ONE))), da)
            if v not in a.variables():
                return mul(mul(e, Unary("ln", a)), db)
            # d(a^b) = a^b (b' ln a + b a'/a)
            return mul(e, add(mul(db, Unary("ln", a)), div(mul(b, da), a)))
    raise TypeError(type(e))


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (rebuilt through the folding constructors)."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Unary):
        return func(e.op, substitute(e.arg, mapping))
    if isinstance(e, Binary):
        a = substitute(e.left, mapping)
        b = substitute(e.right, mapping)
        return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](a, b)
    raise TypeError(type(e))


def _linear_terms(e: Expr, scale: float, acc: dict) -> None:
    """Accumulate ``scale * e`` as ``{term: coefficient}``; constants under ``None``."""
    if isinstance(e, Const):
        acc[None] = acc.get(None, 0.0) + scale * e.value
    elif isinstance(e, Unary) and e.op == "neg":
        _linear_terms(e.arg, -scale, acc)
    elif isinstance(e, Binary) and e.op in "+-":
        _linear_terms(e.left, scale, acc)
        _linear_terms(e.right, scale if e.op == "+" else -scale, acc)
    elif isinstance(e, Binary) and e.op == "*" and isinstance(e.left, Const):
        _linear_terms(e.right, scale * e.left.value, acc)
    else:
        acc[e] = acc.get(e, 0.0) + scale


def simplify(e: Expr) -> Expr:
    """Cancel like terms in sums and fold ``exp(ln a)``, ``ln(exp a)``.

    ``exp(ln a) -> a`` assumes ``a > 0``, the domain on which the original
    expression is defined.
    """
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Unary):
        a = simplify(e.arg)
        if e.op in ("exp", "ln") and isinstance(a, Unary) and a.op == {"exp": "ln", "ln": "exp"}[e.op]:
            return a.arg
        if e.op == "exp" and isinstance(a, Unary) and a.op == "neg" \
                and isinstance(a.arg, Unary) and a.arg.op == "ln":
            return div(ONE, a.arg.arg)
        return func(e.op, a)
    a, b = simplify(e.left), simplify(e.right)
    if e.op not in "+-":
        return {"*": mul, "/": div, "^": power}[e.op](a, b)
    acc: dict = {}
    _linear_terms(Binary(e.op, a, b), 1.0, acc)
    const = acc.pop(None, 0.0)
    out: Expr = ZERO
    for term, c in acc.items():
        if c == 0.0:
            continue
        if c < 0:
            out = sub(out, mul(Const(-c), term))
        else:
            out = add(out, mul(Const(c), term))
    if const < 0:
        return sub(out, Const(-const))
    return add(out, Const(const))


# ---------------------------------------------------------------------------
# Compilation to numpy

_NP_FUNCS = {"exp": "_np.exp", "ln": "_np.log", "sin": "_np.sin", "cos": "_np.cos",
             "sqrt": "_np.sqrt"}


def _codegen(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return repr(e.value) if e.value >= 0 else f"({e.value!r})"
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, Unary):
        inner = _codegen(e.arg, names)
        if e.op == "neg":
            return f"(-{inner})"
        return f"{_NP_FUNCS[e.op]}({inner})"
    if isinstance(e, Binary):
        a = _codegen(e.left, names)
        b = _codegen(e.right, names)
        if e.op == "^":
            if isinstance(e.right, Const) and e.right.value == 2.0:
                return f"({a} * {a})"
            return f"_np.power({a}, {b})"
        if e.op == "/":
            return f"_np.divide({a}, {b})"
        return f"({a} {e.op} {b})"
    raise TypeError(type(e))


class _ScalarMath:
    """Stand-in for numpy inside compiled code when every argument is a float."""

    exp = staticmethod(math.exp)
    log = staticmethod(math.log)
    sin = staticmethod(math.sin)
    cos = staticmethod(math.cos)
    sqrt = staticmethod(math.sqrt)
    power = staticmethod(math.pow)

    @staticmethod
    def divide(a, b):
        return a / b


def compile_exprs(exprs: Sequence[Expr], variables: Sequence[str], scalar: bool = False) -> Callable:
    """Compile expressions into ``fn(*values) -> tuple`` using numpy ufuncs.

    Arguments may be scalars or broadcast-compatible arrays.  Floating point
    faults are *not* trapped here; see :class:`ExprArray` for checked calls.
    With ``scalar=True`` the function works on Python floats through
    :mod:`math`, raising on domain faults.
    """
    names = {v: f"_a{i}" for i, v in enumerate(variables)}
    missing = set().union(*(e.variables() for e in exprs)) - set(variables) if exprs else set()
    if missing:
        raise ExprError(f"expressions reference undeclared variables {sorted(missing)}")
    args = ", ".join(names[v] for v in variables)
    body = ", ".join(_codegen(e, names) for e in exprs)
    src = f"def _f({args}):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns: dict = {"_np": _ScalarMath if scalar else np}
    exec(compile(src, "<exprlang>", "exec"), ns)
    return ns["_f"]


_SCALAR_TYPES = (float, int, np.float64)


class ExprArray:
    """Rectangular array of expressions over an ordered list of variables.

    Calling the array evaluates every entry; scalar arguments give an array of
    ``shape``, array arguments of common shape ``b`` give ``shape + b``.
    """

    def __init__(self, entries, variables: Sequence[str], shape: Sequence[int] | None = None):
        variables = tuple(variables)
        if len(set(variables)) != len(variables):
            raise ExprError(f"duplicate variables in {variables}")
        if _is_ragged(entries):
            raise ExprError("expression array rows have unequal lengths")
        flat = [parse(x, variables) for x in _flatten(entries)]
        shape = _nested_shape(entries) if shape is None else tuple(shape)
        if int(np.prod(shape)) != len(flat):
            raise ExprError(f"{len(flat)} entries do not fill shape {shape}")
        _init_from_flat(self, flat, shape, variables)

    # -- construction helpers
    @classmethod
    def from_array(cls, arr, variables: Sequence[str]) -> "ExprArray":
        a = np.asarray(arr, dtype=float)
        return cls(a.ravel().tolist(), variables, shape=a.shape)

    @property
    def is_constant(self) -> bool:
        return self._constant

    def free_variables(self) -> frozenset[str]:
        return frozenset().union(*(e.variables() for e in self._flat)) if self._flat else frozenset()

    def depends_on(self, names: Iterable[str]) -> bool:
        return bool(self.free_variables() & set(names))

    def __repr__(self):
        return f"ExprArray(shape={self.shape}, variables={self.variables})"

    def __iter__(self):
        return iter(self.entries)

    def to_strings(self):
        return np.vectorize(to_string, otypes=[object])(self.entries).tolist() if self._flat else (
            np.empty(self.shape).tolist())

    # -- evaluation
    def at(self, points) -> np.ndarray:
        """Evaluate at packed points whose last axis runs over ``variables``."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1:] != (len(self.variables),):
            raise ExprError(f"points must have trailing axis {len(self.variables)}, got {pts.shape}")
        return self(*np.moveaxis(pts, -1, 0))

    def __call__(self, *values) -> np.ndarray:
        if len(values) != len(self.variables):
            raise ExprError(f"expected {len(self.variables)} values, got {len(values)}")
        if self._fn is None:
            batch = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
            return np.zeros(self.shape + batch)
        if all(type(v) in _SCALAR_TYPES for v in values):
            try:
                out = self._scalar_fn(*values)
            except (ArithmeticError, ValueError):
                out = None
            # a non-finite entry makes the sum non-finite
            if out is not None and math.isfinite(sum(out)):
                return np.array(out).reshape(self.shape)
        batch = np.broadcast_shapes(*(np.shape(v) for v in values)) if values else ()
        if self._fn is None:
            return np.zeros(self.shape + batch)
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                out = self._fn(*values)
        except (FloatingPointError, ZeroDivisionError, OverflowError) as exc:
            raise self._locate_error(values, exc) from None
        return _assemble(out, self.shape, batch)

    def evaluate_at(self, binding: Mapping[str, float]) -> np.ndarray:
        return self(*(binding[v] for v in self.variables))

    def _locate_error(self, values, exc) -> ExprDomainError:
        if all(np.ndim(v) == 0 for v in values):
            binding = {k: float(v) for k, v in zip(self.variables, values)}
            for e in self._flat:
                try:
                    evaluate(e, binding)
                except ExprDomainError as err:
                    return err
        return ExprDomainError(f"floating point error ({exc})")

    # -- calculus
    def diff(self, var: str) -> "ExprArray":
        if var not in self._diff_cache:
            if var not in self.variables:
                raise ExprError(f"cannot differentiate with respect to undeclared {var!r}")
            d = [diff(e, var) for e in self._flat]
            self._diff_cache[var] = _from_flat(d, self.shape, self.variables)
        return self._diff_cache[var]

    def jacobian(self, wrt: Sequence[str]) -> "ExprArray":
        """Jacobian of a vector-valued array: shape ``(len(self), len(wrt))``."""
        if len(self.shape) != 1:
            raise ExprError("jacobian requires a vector-valued expression array")
        for v in wrt:
            if v not in self.variables:
                raise ExprError(f"cannot differentiate with respect to undeclared {v!r}")
        rows = [[diff(e, v) for v in wrt] for e in self._flat]
        return _from_flat([x for r in rows for x in r], (self.shape[0], len(wrt)), self.variables)

    def substitute(self, mapping: Mapping[str, Expr], variables: Sequence[str]) -> "ExprArray":
        return _from_flat([substitute(e, mapping) for e in self._flat], self.shape, variables)

    def simplified(self) -> "ExprArray":
        return _from_flat([simplify(e) for e in self._flat], self.shape, self.variables)


def _init_from_flat(arr: ExprArray, flat, shape, variables) -> None:
    arr.variables = tuple(variables)
    arr.shape = tuple(shape)
    arr._flat = tuple(flat)
    obj = np.empty(len(flat), dtype=object)
    obj[:] = flat
    arr.entries = obj.reshape(arr.shape)
    arr._fn = compile_exprs(arr._flat, arr.variables) if flat else None
    arr._scalar_fn = compile_exprs(arr._flat, arr.variables, scalar=True) if flat else None
    arr._constant = all(not e.variables() for e in flat)
    arr._diff_cache = {}


def _from_flat(flat, shape, variables) -> ExprArray:
    arr = ExprArray.__new__(ExprArray)
    _init_from_flat(arr, flat, shape, variables)
    return arr


def _assemble(out: tuple, shape: tuple, batch: tuple) -> np.ndarray:
    if not batch:
        return np.array(out, dtype=float).reshape(shape)
    res = np.empty((len(out),) + batch)
    for i, v in enumerate(out):
        res[i] = v
    return res.reshape(shape + batch)


def _is_ragged(entries) -> bool:
    if isinstance(entries, (list, tuple)) and entries and isinstance(entries[0], (list, tuple)):
        n = len(entries[0])
        return any(not isinstance(r, (list, tuple)) or len(r) != n for r in entries)
    return False


def _flatten(entries):
    if isinstance(entries, np.ndarray):
        entries = entries.tolist()
    if isinstance(entries, (list, tuple)):
        for x in entries:
            yield from _flatten(x)
    else:
        yield entries


def _nested_shape(entries) -> tuple:
    if isinstance(entries, np.ndarray):
        return entries.shape
    shape = []
    while isinstance(entries, (list, tuple)):
        shape.append(len(entries))
        if not entries:
            break
        entries = entries[0]
    return tuple(shape)
