"""Parsing, printing and differentiation of plant nonlinearities.

Expressions are written over state symbols ``x1..xn``, input symbols
``u1..um``, numeric literals, the operators ``+ - * / ^`` (with ``^``
restricted to integer exponents), unary minus, parentheses, and the
functions ``sin``, ``cos``, ``exp``, ``tanh``.

Grammar, in decreasing precedence::

    power   :=  atom ('^' ['-'] INTEGER)*
    unary   :=  '-' unary | power
    term    :=  unary (('*' | '/') unary)*     (left associative)
    sum     :=  term (('+' | '-') term)*       (left associative)

There is no implicit multiplication: ``2x1`` is a syntax error.

Trees are plain nested tuples and are immutable after parsing; evaluation
and differentiation are pure functions and safe to call concurrently.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import kernels

FUNCTIONS = ("sin", "cos", "exp", "tanh")

# bytecode opcodes shared with the kernel backends
OP_CONST, OP_X, OP_U, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POWI = range(9)
OP_SIN, OP_COS, OP_EXP, OP_TANH = 9, 10, 11, 12


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownSymbolError(ExprError):
    def __init__(self, token, position):
        super().__init__(f"unknown symbol '{token}' (at position {position})")
        self.token = token
        self.position = position


class EvalDomainError(ExprError):
    """Raised when evaluation hits a domain problem (division by zero,
    negative power of zero, or a non-finite intermediate)."""

    def __init__(self, component, reason, point_index=None):
        at = "" if point_index is None else f" at point {point_index}"
        super().__init__(f"component {component + 1}: {reason}{at}")
        self.component = component
        self.reason = reason
        self.point_index = point_index


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = len(text) - len(stripped)
            raise ExprSyntaxError(f"unexpected character '{text[bad_at]}'", bad_at)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


_SYMBOL_RE = re.compile(r"^([xu])([1-9][0-9]*)$")


class _Parser:
    def __init__(self, text, state_dim, input_dim):
        self.tokens = _tokenize(text)
        self.i = 0
        self.state_dim = state_dim
        self.input_dim = input_dim

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, value, pos = self.peek()
        if kind != "op" or value != op:
            raise ExprSyntaxError(f"expected '{op}'", pos)
        self.advance()

    def parse(self):
        node = self.sum()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token '{value}'", pos)
        return node

    def sum(self):
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                node = ("add" if value == "+" else "sub", node, rhs)
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.unary()
                node = ("mul" if value == "*" else "div", node, rhs)
            else:
                return node

    def unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return ("neg", self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value == "^":
                self.advance()
                node = ("pow", node, self.exponent())
            else:
                return node

    def exponent(self):
        sign = 1
        kind, value, pos = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            sign = -1
            kind, value, pos = self.peek()
        if kind != "num":
            raise ExprSyntaxError("expected integer exponent", pos)
        if "." in value or "e" in value or "E" in value:
            raise ExprSyntaxError("integer exponent required", pos)
        self.advance()
        return sign * int(value)

    def atom(self):
        kind, value, pos = self.advance()
        if kind == "num":
            return ("const", float(value))
        if kind == "op" and value == "(":
            node = self.sum()
            self.expect_op(")")
            return node
        if kind == "name":
            if value in FUNCTIONS:
                self.expect_op("(")
                arg = self.sum()
                self.expect_op(")")
                return ("call", value, arg)
            m = _SYMBOL_RE.match(value)
            if m:
                index = int(m.group(2))
                if m.group(1) == "x" and index <= self.state_dim:
                    return ("x", index - 1)
                if m.group(1) == "u" and index <= self.input_dim:
                    return ("u", index - 1)
            raise UnknownSymbolError(value, pos)
        raise ExprSyntaxError(f"unexpected token '{value}'" if value else "unexpected end of expression", pos)


_FUNC_OP = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "tanh": OP_TANH}


def _compile(node, code, consts):
    """Emit (op, arg) pairs in postorder; return stack depth required."""
    tag = node[0]
    if tag == "const":
        consts.append(node[1])
        code.extend((OP_CONST, len(consts) - 1))
        return 1
    if tag == "x":
        code.extend((OP_X, node[1]))
        return 1
    if tag == "u":
        code.extend((OP_U, node[1]))
        return 1
    if tag == "neg":
        d = _compile(node[1], code, consts)
        code.extend((OP_NEG, 0))
        return d
    if tag == "pow":
        d = _compile(node[1], code, consts)
        code.extend((OP_POWI, node[2]))
        return d
    if tag == "call":
        d = _compile(node[2], code, consts)
        code.extend((_FUNC_OP[node[1]], 0))
        return d
    # binary
    da = _compile(node[1], code, consts)
    db = _compile(node[2], code, consts)
    op = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV}[tag]
    code.extend((op, 0))
    return max(da, db + 1)


@dataclass(frozen=True)
class Program:
    code: np.ndarray  # int64, pairs (op, arg) flattened
    consts: np.ndarray  # float64 pool
    stack_depth: int


def compile_tree(node) -> Program:
    code: list = []
    consts: list = []
    depth = _compile(node, code, consts)
    return Program(
        code=np.asarray(code, dtype=np.int64),
        consts=np.asarray(consts if consts else [0.0], dtype=np.float64),
        stack_depth=max(depth, 1),
    )


@dataclass(frozen=True)
class ExprVector:
    """A vector of expression trees over x1..xn and u1..um."""

    components: tuple
    state_dim: int
    input_dim: int
    programs: tuple = field(compare=False, repr=False, default=())

    def __post_init__(self):
        if not self.programs:
            object.__setattr__(
                self, "programs", tuple(compile_tree(c) for c in self.components)
            )

    def __len__(self):
        return len(self.components)


def parse(text_components, state_dim, input_dim) -> ExprVector:
    """Parse a list of expression strings into an ExprVector.

    Raises ExprSyntaxError (with position) for malformed input and
    UnknownSymbolError for identifiers that are neither functions nor
    in-range x/u symbols.
    """
    if state_dim < 1:
        raise ExprError("state_dim must be positive")
    if input_dim < 0:
        raise ExprError("input_dim must be nonnegative")
    trees = tuple(_Parser(t, state_dim, input_dim).parse() for t in text_components)
    return ExprVector(components=trees, state_dim=state_dim, input_dim=input_dim)


# printing -------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _render(node, parent_prec):
    tag = node[0]
    if tag == "const":
        text = repr(node[1])
        if node[1] < 0 and parent_prec > 0:
            text = "(" + text + ")"
        return text
    if tag == "x":
        return f"x{node[1] + 1}"
    if tag == "u":
        return f"u{node[1] + 1}"
    if tag == "call":
        return f"{node[1]}({_render(node[2], 0)})"
    if tag == "neg":
        inner = _render(node[1], 3)
        text = "-" + inner
        return "(" + text + ")" if parent_prec > 3 else text
    if tag == "pow":
        base = _render(node[1], 5)
        text = f"{base}^{node[2]}"
        return "(" + text + ")" if parent_prec > 4 else text
    prec = _PREC[tag]
    sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[tag]
    left = _render(node[1], prec)
    right = _render(node[2], prec + 1)
    text = left + sym + right
    return "(" + text + ")" if parent_prec > prec else text


def render(f: ExprVector):
    """Print each component back to text; re-parsing gives a tree with
    identical evaluation everywhere."""
    return [_render(c, 0) for c in f.components]


# evaluation -----------------------------------------------------------


def _check_args(f, x, u):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != f.state_dim:
        raise ExprError(f"expected state of length {f.state_dim}, got {x.shape[0]}")
    if u is None:
        u = np.zeros(f.input_dim)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != f.input_dim:
        raise ExprError(f"expected input of length {f.input_dim}, got {u.shape[0]}")
    return x, u


def evaluate(f: ExprVector, x, u=None) -> np.ndarray:
    """Evaluate the vector at one point. Domain problems raise
    EvalDomainError naming the component."""
    x, u = _check_args(f, x, u)
    out = np.empty(len(f.components))
    for i, prog in enumerate(f.programs):
        status, value = kernels.eval_single(prog.code, prog.consts, prog.stack_depth, x, u)
        if status != 0:
            raise EvalDomainError(i, kernels.STATUS_REASONS[status])
        out[i] = value
    return out


def jacobian(f: ExprVector, x, u=None) -> np.ndarray:
    """Partial derivatives with respect to the state, computed by
    forward-mode differentiation of the expression program (exact to
    machine precision, no finite differencing)."""
    x, u = _check_args(f, x, u)
    n = f.state_dim
    out = np.empty((len(f.components), n))
    for i, prog in enumerate(f.programs):
        status, _, grad = kernels.jac_single(prog.code, prog.consts, prog.stack_depth, x, u)
        if status != 0:
            raise EvalDomainError(i, kernels.STATUS_REASONS[status])
        out[i, :] = grad
    return out


def evaluate_batch(f: ExprVector, X, U=None) -> np.ndarray:
    """Evaluate at N stacked points (N x state_dim). Returns N x len(f)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != f.state_dim:
        raise ExprError("X must be N x state_dim")
    if U is None:
        U = np.zeros((X.shape[0], f.input_dim))
    U = np.ascontiguousarray(U, dtype=np.float64)
    out = np.empty((X.shape[0], len(f.components)))
    for i, prog in enumerate(f.programs):
        status, idx, col = kernels.eval_batch(prog.code, prog.consts, prog.stack_depth, X, U)
        if status != 0:
            raise EvalDomainError(i, kernels.STATUS_REASONS[status], point_index=idx)
        out[:, i] = col
    return out


def jacobian_batch(f: ExprVector, X, U=None) -> np.ndarray:
    """State Jacobians at N stacked points. Returns N x len(f) x state_dim."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != f.state_dim:
        raise ExprError("X must be N x state_dim")
    if U is None:
        U = np.zeros((X.shape[0], f.input_dim))
    U = np.ascontiguousarray(U, dtype=np.float64)
    out = np.empty((X.shape[0], len(f.components), f.state_dim))
    for i, prog in enumerate(f.programs):
        status, idx, block = kernels.jac_batch(prog.code, prog.consts, prog.stack_depth, X, U)
        if status != 0:
            raise EvalDomainError(i, kernels.STATUS_REASONS[status], point_index=idx)
        out[:, i, :] = block
    return out
