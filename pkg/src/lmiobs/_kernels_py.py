"""Pure-python fallback for the expression program interpreter.

Single-point paths run a small stack machine over python floats; the
batch paths vectorize the same machine over numpy arrays so grid scans
stay fast without the compiled extension.
"""

import math

import numpy as np

BACKEND = "pure"

STATUS_OK = 0
STATUS_DIV_ZERO = 1
STATUS_POW_ZERO = 2
STATUS_NONFINITE = 3

STATUS_REASONS = {
    STATUS_DIV_ZERO: "division by zero",
    STATUS_POW_ZERO: "zero raised to a negative power",
    STATUS_NONFINITE: "non-finite result",
}

(
    OP_CONST,
    OP_X,
    OP_U,
    OP_NEG,
    OP_ADD,
    OP_SUB,
    OP_MUL,
    OP_DIV,
    OP_POWI,
    OP_SIN,
    OP_COS,
    OP_EXP,
    OP_TANH,
) = range(13)


def _powi(v, k):
    if k == 0:
        return 1.0
    if k < 0:
        if v == 0.0:
            return None
        return 1.0 / _powi(v, -k)
    out = v
    for _ in range(k - 1):
        out *= v
    return out


def _powi_arr(v, k):
    # sequential products, matching the compiled kernel's rounding exactly
    out = np.ones_like(v)
    for _ in range(abs(k)):
        out = out * v
    if k < 0:
        out = 1.0 / out
    return out


def eval_single(code, consts, depth, x, u):
    stack = [0.0] * depth
    top = -1
    n_ops = len(code) // 2
    for ip in range(n_ops):
        op = code[2 * ip]
        arg = code[2 * ip + 1]
        if op == OP_CONST:
            top += 1
            stack[top] = consts[arg]
        elif op == OP_X:
            top += 1
            stack[top] = x[arg]
        elif op == OP_U:
            top += 1
            stack[top] = u[arg]
        elif op == OP_NEG:
            stack[top] = -stack[top]
        elif op == OP_ADD:
            top -= 1
            stack[top] = stack[top] + stack[top + 1]
        elif op == OP_SUB:
            top -= 1
            stack[top] = stack[top] - stack[top + 1]
        elif op == OP_MUL:
            top -= 1
            stack[top] = stack[top] * stack[top + 1]
        elif op == OP_DIV:
            top -= 1
            if stack[top + 1] == 0.0:
                return STATUS_DIV_ZERO, 0.0
            stack[top] = stack[top] / stack[top + 1]
        elif op == OP_POWI:
            v = _powi(stack[top], arg)
            if v is None:
                return STATUS_POW_ZERO, 0.0
            stack[top] = v
        elif op == OP_SIN:
            stack[top] = math.sin(stack[top])
        elif op == OP_COS:
            stack[top] = math.cos(stack[top])
        elif op == OP_EXP:
            try:
                stack[top] = math.exp(stack[top])
            except OverflowError:
                return STATUS_NONFINITE, 0.0
        elif op == OP_TANH:
            stack[top] = math.tanh(stack[top])
    value = stack[0]
    if not math.isfinite(value):
        return STATUS_NONFINITE, 0.0
    return STATUS_OK, value


def jac_single(code, consts, depth, x, u):
    n = len(x)
    vals = [0.0] * depth
    grads = [None] * depth
    zero = (0.0,) * n
    top = -1
    n_ops = len(code) // 2
    for ip in range(n_ops):
        op = code[2 * ip]
        arg = code[2 * ip + 1]
        if op == OP_CONST:
            top += 1
            vals[top] = consts[arg]
            grads[top] = zero
        elif op == OP_X:
            top += 1
            vals[top] = x[arg]
            g = [0.0] * n
            g[arg] = 1.0
            grads[top] = tuple(g)
        elif op == OP_U:
            top += 1
            vals[top] = u[arg]
            grads[top] = zero
        elif op == OP_NEG:
            vals[top] = -vals[top]
            grads[top] = tuple(-g for g in grads[top])
        elif op == OP_ADD:
            top -= 1
            vals[top] = vals[top] + vals[top + 1]
            grads[top] = tuple(a + b for a, b in zip(grads[top], grads[top + 1]))
        elif op == OP_SUB:
            top -= 1
            vals[top] = vals[top] - vals[top + 1]
            grads[top] = tuple(a - b for a, b in zip(grads[top], grads[top + 1]))
        elif op == OP_MUL:
            top -= 1
            a, b = vals[top], vals[top + 1]
            grads[top] = tuple(ga * b + gb * a for ga, gb in zip(grads[top], grads[top + 1]))
            vals[top] = a * b
        elif op == OP_DIV:
            top -= 1
            b = vals[top + 1]
            if b == 0.0:
                return STATUS_DIV_ZERO, 0.0, None
            q = vals[top] / b
            grads[top] = tuple((ga - q * gb) / b for ga, gb in zip(grads[top], grads[top + 1]))
            vals[top] = q
        elif op == OP_POWI:
            v = vals[top]
            k = arg
            if k == 0:
                vals[top] = 1.0
                grads[top] = zero
            elif k < 0:
                if v == 0.0:
                    return STATUS_POW_ZERO, 0.0, None
                p = _powi(v, k)
                c = k * p / v
                vals[top] = p
                grads[top] = tuple(c * g for g in grads[top])
            else:
                p = _powi(v, k - 1)
                c = k * p
                vals[top] = p * v
                grads[top] = tuple(c * g for g in grads[top])
        elif op == OP_SIN:
            c = math.cos(vals[top])
            vals[top] = math.sin(vals[top])
            grads[top] = tuple(c * g for g in grads[top])
        elif op == OP_COS:
            c = -math.sin(vals[top])
            vals[top] = math.cos(vals[top])
            grads[top] = tuple(c * g for g in grads[top])
        elif op == OP_EXP:
            try:
                e = math.exp(vals[top])
            except OverflowError:
                return STATUS_NONFINITE, 0.0, None
            vals[top] = e
            grads[top] = tuple(e * g for g in grads[top])
        elif op == OP_TANH:
            t = math.tanh(vals[top])
            c = 1.0 - t * t
            vals[top] = t
            grads[top] = tuple(c * g for g in grads[top])
    value = vals[0]
    grad = grads[0]
    if not math.isfinite(value) or not all(math.isfinite(g) for g in grad):
        return STATUS_NONFINITE, 0.0, None
    return STATUS_OK, value, np.asarray(grad)


def _first_bad(mask):
    return int(np.argmax(mask))


def eval_batch(code, consts, depth, X, U):
    N = X.shape[0]
    stack = [None] * depth
    top = -1
    n_ops = len(code) // 2
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for ip in range(n_ops):
            op = code[2 * ip]
            arg = code[2 * ip + 1]
            if op == OP_CONST:
                top += 1
                stack[top] = np.full(N, consts[arg])
            elif op == OP_X:
                top += 1
                stack[top] = X[:, arg].copy()
            elif op == OP_U:
                top += 1
                stack[top] = U[:, arg].copy()
            elif op == OP_NEG:
                stack[top] = -stack[top]
            elif op == OP_ADD:
                top -= 1
                stack[top] = stack[top] + stack[top + 1]
            elif op == OP_SUB:
                top -= 1
                stack[top] = stack[top] - stack[top + 1]
            elif op == OP_MUL:
                top -= 1
                stack[top] = stack[top] * stack[top + 1]
            elif op == OP_DIV:
                top -= 1
                zero = stack[top + 1] == 0.0
                if zero.any():
                    return STATUS_DIV_ZERO, _first_bad(zero), None
                stack[top] = stack[top] / stack[top + 1]
            elif op == OP_POWI:
                k = arg
                if k == 0:
                    stack[top] = np.ones(N)
                elif k < 0:
                    zero = stack[top] == 0.0
                    if zero.any():
                        return STATUS_POW_ZERO, _first_bad(zero), None
                    stack[top] = _powi_arr(stack[top], k)
                else:
                    stack[top] = _powi_arr(stack[top], k)
            elif op == OP_SIN:
                stack[top] = np.sin(stack[top])
            elif op == OP_COS:
                stack[top] = np.cos(stack[top])
            elif op == OP_EXP:
                stack[top] = np.exp(stack[top])
            elif op == OP_TANH:
                stack[top] = np.tanh(stack[top])
    out = stack[0]
    bad = ~np.isfinite(out)
    if bad.any():
        return STATUS_NONFINITE, _first_bad(bad), None
    return STATUS_OK, -1, out


def jac_batch(code, consts, depth, X, U):
    N, n = X.shape
    vals = [None] * depth
    grads = [None] * depth
    top = -1
    n_ops = len(code) // 2
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for ip in range(n_ops):
            op = code[2 * ip]
            arg = code[2 * ip + 1]
            if op == OP_CONST:
                top += 1
                vals[top] = np.full(N, consts[arg])
                grads[top] = np.zeros((N, n))
            elif op == OP_X:
                top += 1
                vals[top] = X[:, arg].copy()
                g = np.zeros((N, n))
                g[:, arg] = 1.0
                grads[top] = g
            elif op == OP_U:
                top += 1
                vals[top] = U[:, arg].copy()
                grads[top] = np.zeros((N, n))
            elif op == OP_NEG:
                vals[top] = -vals[top]
                grads[top] = -grads[top]
            elif op == OP_ADD:
                top -= 1
                vals[top] = vals[top] + vals[top + 1]
                grads[top] = grads[top] + grads[top + 1]
            elif op == OP_SUB:
                top -= 1
                vals[top] = vals[top] - vals[top + 1]
                grads[top] = grads[top] - grads[top + 1]
            elif op == OP_MUL:
                top -= 1
                a, b = vals[top], vals[top + 1]
                grads[top] = grads[top] * b[:, None] + grads[top + 1] * a[:, None]
                vals[top] = a * b
            elif op == OP_DIV:
                top -= 1
                b = vals[top + 1]
                zero = b == 0.0
                if zero.any():
                    return STATUS_DIV_ZERO, _first_bad(zero), None
                q = vals[top] / b
                grads[top] = (grads[top] - grads[top + 1] * q[:, None]) / b[:, None]
                vals[top] = q
            elif op == OP_POWI:
                k = arg
                v = vals[top]
                if k == 0:
                    vals[top] = np.ones(N)
                    grads[top] = np.zeros((N, n))
                elif k < 0:
                    zero = v == 0.0
                    if zero.any():
                        return STATUS_POW_ZERO, _first_bad(zero), None
                    p = _powi_arr(v, k)
                    vals[top] = p
                    grads[top] = grads[top] * (k * p / v)[:, None]
                else:
                    p = _powi_arr(v, k - 1)
                    vals[top] = p * v
                    grads[top] = grads[top] * (k * p)[:, None]
            elif op == OP_SIN:
                grads[top] = grads[top] * np.cos(vals[top])[:, None]
                vals[top] = np.sin(vals[top])
            elif op == OP_COS:
                grads[top] = grads[top] * (-np.sin(vals[top]))[:, None]
                vals[top] = np.cos(vals[top])
            elif op == OP_EXP:
                e = np.exp(vals[top])
                vals[top] = e
                grads[top] = grads[top] * e[:, None]
            elif op == OP_TANH:
                t = np.tanh(vals[top])
                vals[top] = t
                grads[top] = grads[top] * (1.0 - t * t)[:, None]
    bad = ~(np.isfinite(vals[0]) & np.isfinite(grads[0]).all(axis=1))
    if bad.any():
        return STATUS_NONFINITE, _first_bad(bad), None
    return STATUS_OK, -1, grads[0]
