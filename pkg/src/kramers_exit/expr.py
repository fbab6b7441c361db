"""Small arithmetic expression language with exact symbolic differentiation.

Grammar (EBNF)::

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = ("-" | "+") , unary | power ;
    power   = atom , [ "^" , unary ] ;
    atom    = number | variable | func , "(" , expr , ")" | "(" , expr , ")" ;
    variable = "x" , digit , { digit } ;           (* x1 .. xd *)
    func    = "exp" | "ln" | "sin" | "cos" | "sqrt" | "tanh" ;

``^`` binds tighter than unary minus (``-x1^2 == -(x1^2)``) and is right
associative. An exponent that folds to an integer constant is kept as a power
node; any other exponent ``p`` is rewritten as ``exp(p*ln(base))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt", "tanh")
BINARY_OPS = ("+", "-", "*", "/", "^")


class ExpressionError(ValueError):
    """Base class for parse and evaluation problems."""


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} (at byte offset {offset})")


class UnknownIdentifierError(ParseError):
    pass


class ArityError(ParseError):
    pass


class EvaluationError(ExpressionError):
    """Raised on division by zero, domain errors or NaN results; carries the point."""

    def __init__(self, message: str, x):
        self.x = np.array(x, dtype=float, copy=True)
        super().__init__(f"{message} at x={self.x.tolist()}")


# ---------------------------------------------------------------------------
# AST nodes. All nodes are frozen dataclasses, so equality is structural and
# trees can be shared freely between threads.


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Func:
    name: str
    arg: "Expression"


Expression = Union[Const, Var, Neg, BinOp, Func]

ZERO = Const(0.0)
ONE = Const(1.0)


def is_const(e: Expression, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def variables(e: Expression) -> set[int]:
    """Indices of the variables appearing in ``e``."""
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Const):
        return set()
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    return variables(e.arg)


# ---------------------------------------------------------------------------
# Folding constructors


def _fold_binary(op, a, b):
    try:
        if op == "+":
            v = a + b
        elif op == "-":
            v = a - b
        elif op == "*":
            v = a * b
        elif op == "/":
            v = a / b
        else:
            v = float(a) ** int(b)
    except (ZeroDivisionError, OverflowError):
        return None
    if not math.isfinite(v):
        return None
    return Const(float(v))


def add(a: Expression, b: Expression) -> Expression:
    if is_const(a, 0.0):
        return b
    if is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("+", a.value, b.value) or BinOp("+", a, b)
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if is_const(b, 0.0):
        return a
    if is_const(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("-", a.value, b.value) or BinOp("-", a, b)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if is_const(a, 0.0) or is_const(b, 0.0):
        return ZERO
    if is_const(a, 1.0):
        return b
    if is_const(b, 1.0):
        return a
    if is_const(a, -1.0):
        return neg(b)
    if is_const(b, -1.0):
        return neg(a)
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("*", a.value, b.value) or BinOp("*", a, b)
    if isinstance(b, Const):
        a, b = b, a
    # c1 * (c2 * u) -> (c1*c2) * u
    if isinstance(a, Const) and isinstance(b, BinOp) and b.op == "*" and isinstance(b.left, Const):
        folded = _fold_binary("*", a.value, b.left.value)
        if folded is not None:
            return mul(folded, b.right)
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if is_const(b, 1.0):
        return a
    if is_const(a, 0.0) and not is_const(b, 0.0):
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold_binary("/", a.value, b.value) or BinOp("/", a, b)
    return BinOp("/", a, b)


def power(base: Expression, n: int) -> Expression:
    """``base ^ n`` for an integer ``n``."""
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        folded = _fold_binary("^", base.value, n)
        if folded is not None:
            return folded
    return BinOp("^", base, Const(float(n)))


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value) if a.value != 0.0 else ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def func(name: str, a: Expression) -> Expression:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    # only the exact identities are folded
    if name == "exp" and is_const(a, 0.0):
        return ONE
    if name == "ln" and is_const(a, 1.0):
        return ZERO
    return Func(name, a)


def var(i: int) -> Var:
    return Var(int(i))


def const(v: float) -> Const:
    return Const(float(v))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)
_VAR_RE = re.compile(r"x([1-9]\d*)\Z")


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    raw = source.encode("utf-8")
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            offset = len(source[:pos].encode("utf-8"))
            raise ParseError(f"unexpected character {source[pos]!r}", offset, source)
        kind = m.lastgroup
        if kind != "ws":
            offset = len(source[:pos].encode("utf-8"))
            tokens.append(_Token(kind, m.group(), offset))
        pos = m.end()
    tokens.append(_Token("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, source: str, dimension: int):
        self.source = source
        self.dimension = dimension
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> _Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def error(self, message: str, tok: _Token | None = None, cls=ParseError):
        tok = tok or self.tok
        return cls(message, tok.offset, self.source)

    def expect(self, text: str) -> _Token:
        if self.tok.text != text or self.tok.kind not in ("op",):
            got = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, got {got!r}")
        return self.advance()

    def parse(self) -> Expression:
        if self.tok.kind == "end":
            raise self.error("empty expression")
        e = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected token {self.tok.text!r}")
        return e

    def expr(self) -> Expression:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expression:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expression:
        if self.tok.kind == "op" and self.tok.text in "+-":
            sign = self.advance().text
            # "-2" is a negative literal unless it is the base of a power
            if self.tok.kind == "number" and not (
                self.peek().kind == "op" and self.peek().text == "^"
            ):
                v = float(self.advance().text)
                return Const(-v if sign == "-" else v)
            inner = self.unary()
            return Neg(inner) if sign == "-" else inner
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            caret = self.advance()
            exponent = self.unary()
            p = _constant_value(exponent)
            if p is not None and p == int(p) and abs(p) < 2**31:
                return BinOp("^", base, Const(float(int(p))))
            if p is not None and not math.isfinite(p):
                raise self.error("non-finite exponent", caret)
            return Func("exp", BinOp("*", exponent, Func("ln", base)))
        return base

    def atom(self) -> Expression:
        t = self.tok
        if t.kind == "number":
            self.advance()
            return Const(float(t.text))
        if t.kind == "ident":
            self.advance()
            if t.text in FUNCTIONS:
                self.expect("(")
                if self.tok.kind == "op" and self.tok.text == ")":
                    raise self.error(f"function {t.text!r} takes 1 argument, got 0", self.tok, ArityError)
                args = [self.expr()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise self.error(
                        f"function {t.text!r} takes 1 argument, got {len(args)}", t, ArityError
                    )
                return Func(t.text, args[0])
            m = _VAR_RE.match(t.text)
            if m is not None and 1 <= int(m.group(1)) <= self.dimension:
                if self.tok.kind == "op" and self.tok.text == "(":
                    raise self.error(f"{t.text!r} is not a function", self.tok, ArityError)
                return Var(int(m.group(1)) - 1)
            raise self.error(f"unknown identifier {t.text!r}", t, UnknownIdentifierError)
        if t.kind == "op" and t.text == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        got = t.text or "end of input"
        raise self.error(f"unexpected token {got!r}")


def _constant_value(e: Expression) -> float | None:
    """Value of a variable-free expression, or None."""
    if variables(e):
        return None
    try:
        return float(_eval(e, ()))
    except (ZeroDivisionError, ValueError, OverflowError):
        return None


def parse(source: str, dimension: int) -> Expression:
    """Parse ``source`` into an expression over variables ``x1..x{dimension}``.

    Raises
    ------
    ParseError
        Syntax errors; ``offset`` is the byte offset of the offending token.
    UnknownIdentifierError
        Identifiers that are neither a known function nor one of ``x1..xd``.
    ArityError
        Functions called with the wrong number of arguments.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    return _Parser(source, dimension).parse()


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_string(e: Expression) -> str:
    """Render ``e`` so that ``parse(to_string(e))`` rebuilds the same tree."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Neg):
        return f"-({to_string(e.arg)})"
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    if e.op == "^":
        base = e.left
        bs = to_string(base)
        if not isinstance(base, (Var, Func)) and not (isinstance(base, Const) and base.value >= 0):
            bs = f"({bs})"
        n = int(e.right.value)
        return f"{bs}^{n}" if n >= 0 else f"{bs}^({n})"
    prec = _PREC[e.op]
    ls = _operand(e.left, prec, left=True)
    rs = _operand(e.right, prec, left=False)
    return f"{ls} {e.op} {rs}"


def _operand(child: Expression, prec: int, left: bool) -> str:
    s = to_string(child)
    if isinstance(child, BinOp) and child.op != "^":
        cp = _PREC[child.op]
        if cp < prec or (cp == prec and not left):
            return f"({s})"
        return s
    if isinstance(child, Neg) or (isinstance(child, Const) and child.value < 0):
        return f"({s})"
    return s


# ---------------------------------------------------------------------------
# Evaluation

_MATH = {
    "exp": math.exp,
    "ln": math.log,
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": math.sqrt,
    "tanh": math.tanh,
}


def _eval(e: Expression, x) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x[e.index]
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, Func):
        a = _eval(e.arg, x)
        if e.name == "ln" and a <= 0.0:
            raise ValueError("ln of nonpositive argument")
        if e.name == "sqrt" and a < 0.0:
            raise ValueError("sqrt of negative argument")
        return _MATH[e.name](a)
    a = _eval(e.left, x)
    b = _eval(e.right, x)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if b == 0.0:
            raise ZeroDivisionError("division by zero")
        return a / b
    n = int(b)
    if a == 0.0 and n < 0:
        raise ZeroDivisionError("zero to a negative power")
    return a**n


def evaluate(e: Expression, x: Sequence[float]) -> float:
    """Evaluate ``e`` at the point ``x``.

    Raises :class:`EvaluationError` on division by zero, domain errors,
    overflow or a NaN result.
    """
    x = [float(v) for v in x]
    try:
        v = float(_eval(e, x))
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise EvaluationError(str(exc), x) from None
    if math.isnan(v):
        raise EvaluationError("NaN result", x)
    return v


# ---------------------------------------------------------------------------
# Differentiation


def differentiate(e: Expression, i: int) -> Expression:
    """Exact partial derivative of ``e`` with respect to variable index ``i``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, i))
    if isinstance(e, Func):
        a = e.arg
        da = differentiate(a, i)
        if is_const(da, 0.0):
            return ZERO
        if e.name == "exp":
            outer = e
        elif e.name == "ln":
            return div(da, a)
        elif e.name == "sin":
            outer = Func("cos", a)
        elif e.name == "cos":
            outer = neg(Func("sin", a))
        elif e.name == "sqrt":
            return div(da, mul(Const(2.0), e))
        else:  # tanh
            outer = sub(ONE, power(e, 2))
        return mul(outer, da)
    a, b = e.left, e.right
    if e.op == "^":
        n = int(b.value)
        da = differentiate(a, i)
        return mul(mul(Const(float(n)), power(a, n - 1)), da)
    da = differentiate(a, i)
    db = differentiate(b, i)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    # quotient rule
    if is_const(db, 0.0):
        return div(da, b)
    return div(sub(mul(da, b), mul(a, db)), power(b, 2))


def gradient(e: Expression, dimension: int) -> list[Expression]:
    return [differentiate(e, i) for i in range(dimension)]


def hessian(e: Expression, dimension: int) -> list[list[Expression]]:
    g = gradient(e, dimension)
    return [[differentiate(g[i], j) for j in range(dimension)] for i in range(dimension)]


def jacobian(components: Sequence[Expression], dimension: int) -> list[list[Expression]]:
    return [[differentiate(c, j) for j in range(dimension)] for c in components]


def divergence(components: Sequence[Expression]) -> Expression:
    """Sum of ``d v_i / d x_i``."""
    out: Expression = ZERO
    for i, c in enumerate(components):
        out = add(out, differentiate(c, i))
    return out


# ---------------------------------------------------------------------------
# Source generation for fast evaluation paths (numpy vectorised and numba)


def to_source(e: Expression, module: str = "np", arg: str = "x") -> str:
    """Python source for ``e``; functions are looked up in ``module``."""
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return f"{arg}[{e.index}]"
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg, module, arg)})"
    if isinstance(e, Func):
        name = "log" if e.name == "ln" else e.name
        return f"{module}.{name}({to_source(e.arg, module, arg)})"
    a = to_source(e.left, module, arg)
    if e.op == "^":
        n = int(e.right.value)
        if n == 2:
            return f"(({a})*({a}))"
        return f"(({a})**{float(n)!r})" if n < 0 else f"(({a})**{n})"
    b = to_source(e.right, module, arg)
    return f"({a} {e.op} {b})"


def compile_numpy(exprs: Sequence[Expression]):
    """Compile a list of expressions into ``fn(x) -> ndarray``.

    ``x`` may be a single point of shape ``(d,)`` or a batch of shape
    ``(d, n)``; the output stacks the components along the first axis.
    Floating point faults raise :class:`EvaluationError`.
    """
    body = ", ".join(f"({to_source(e)}) + 0.0*x[0]" if not variables(e) else to_source(e) for e in exprs)
    code = compile(f"lambda x: ({body},)", "<expression>", "eval")
    raw = eval(code, {"np": np})

    def fn(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="raise"):
            try:
                out = np.array(raw(x), dtype=float)
            except (FloatingPointError, ZeroDivisionError) as exc:
                raise EvaluationError(str(exc), x) from None
        if np.isnan(out).any():
            raise EvaluationError("NaN result", x)
        return out

    return fn


class VectorExpression(tuple):
    """A fixed-length tuple of expressions (a vector field)."""

    def __new__(cls, components):
        return super().__new__(cls, components)

    @property
    def dimension(self) -> int:
        return len(self)

    def evaluate(self, x) -> np.ndarray:
        return np.array([evaluate(c, x) for c in self])

    def divergence(self) -> Expression:
        return divergence(self)

    def jacobian(self) -> list[list[Expression]]:
        return jacobian(self, len(self))


def parse_vector(sources: Sequence[str], dimension: int) -> VectorExpression:
    if len(sources) != dimension:
        raise ValueError(f"expected {dimension} components, got {len(sources)}")
    return VectorExpression(parse(s, dimension) for s in sources)


class ScalarField:
    """An expression bundled with its compiled value, gradient and Hessian.

    All evaluators accept a point ``(d,)`` or a batch ``(d, n)``.
    """

    def __init__(self, expression: Expression, dimension: int):
        self.expression = expression
        self.dimension = int(dimension)
        bad = [i for i in variables(expression) if i >= self.dimension]
        if bad:
            raise ValueError(f"variable x{bad[0] + 1} outside dimension {self.dimension}")
        self.grad_exprs = gradient(expression, self.dimension)
        self.hess_exprs = [
            [differentiate(gi, j) for j in range(self.dimension)] for gi in self.grad_exprs
        ]
        self._value = compile_numpy([expression])
        self._grad = compile_numpy(self.grad_exprs)
        self._hess = compile_numpy([h for row in self.hess_exprs for h in row])

    @classmethod
    def parse(cls, source: str, dimension: int) -> "ScalarField":
        return cls(parse(source, dimension), dimension)

    def __call__(self, x):
        return self._value(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self._grad(x)

    def hessian(self, x) -> np.ndarray:
        h = self._hess(x)
        d = self.dimension
        return h.reshape((d, d) + h.shape[1:])

    def __str__(self):
        return to_string(self.expression)


class VectorField:
    """Compiled vector field with its divergence as a :class:`ScalarField`."""

    def __init__(self, components: Sequence[Expression], dimension: int):
        self.components = VectorExpression(components)
        self.dimension = int(dimension)
        if len(self.components) != self.dimension:
            raise ValueError(f"expected {self.dimension} components, got {len(self.components)}")
        self._value = compile_numpy(self.components)
        self.div = ScalarField(divergence(self.components), self.dimension)
        self.jac_exprs = jacobian(self.components, self.dimension)
        self._jac = compile_numpy([j for row in self.jac_exprs for j in row])

    @classmethod
    def parse(cls, sources: Sequence[str], dimension: int) -> "VectorField":
        return cls(parse_vector(sources, dimension), dimension)

    @classmethod
    def zeros(cls, dimension: int) -> "VectorField":
        return cls([ZERO] * dimension, dimension)

    def __call__(self, x) -> np.ndarray:
        return self._value(x)

    def jacobian(self, x) -> np.ndarray:
        j = self._jac(x)
        d = self.dimension
        return j.reshape((d, d) + j.shape[1:])

    @property
    def is_zero(self) -> bool:
        return all(is_const(c, 0.0) for c in self.components)

    def __str__(self):
        return "(" + ", ".join(to_string(c) for c in self.components) + ")"
