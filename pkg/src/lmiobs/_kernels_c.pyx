# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled expression-program interpreter.

Same contract as _kernels_py: a stack machine over (op, arg) pairs with
float64 constants, plus a forward-mode variant that carries gradient
rows with respect to the state symbols.
"""

from libc.math cimport sin, cos, exp, tanh, isfinite
from libc.stdlib cimport malloc, free

import numpy as np

BACKEND = "compiled"

cdef enum:
    S_OK = 0
    S_DIV_ZERO = 1
    S_POW_ZERO = 2
    S_NONFINITE = 3

STATUS_OK = S_OK
STATUS_DIV_ZERO = S_DIV_ZERO
STATUS_POW_ZERO = S_POW_ZERO
STATUS_NONFINITE = S_NONFINITE

STATUS_REASONS = {
    STATUS_DIV_ZERO: "division by zero",
    STATUS_POW_ZERO: "zero raised to a negative power",
    STATUS_NONFINITE: "non-finite result",
}

cdef enum:
    OP_CONST = 0
    OP_X = 1
    OP_U = 2
    OP_NEG = 3
    OP_ADD = 4
    OP_SUB = 5
    OP_MUL = 6
    OP_DIV = 7
    OP_POWI = 8
    OP_SIN = 9
    OP_COS = 10
    OP_EXP = 11
    OP_TANH = 12


cdef inline double _powi(double v, long long k) noexcept nogil:
    cdef double out = 1.0
    cdef long long i, m = k if k >= 0 else -k
    for i in range(m):
        out *= v
    if k < 0:
        out = 1.0 / out
    return out


cdef int _eval_point(const long long* code, Py_ssize_t n_ops,
                     const double* consts, double* stack,
                     const double* x, const double* u,
                     double* result) noexcept nogil:
    cdef Py_ssize_t ip
    cdef long long op, arg
    cdef int top = -1
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
                return S_DIV_ZERO
            stack[top] = stack[top] / stack[top + 1]
        elif op == OP_POWI:
            if arg < 0 and stack[top] == 0.0:
                return S_POW_ZERO
            stack[top] = _powi(stack[top], arg)
        elif op == OP_SIN:
            stack[top] = sin(stack[top])
        elif op == OP_COS:
            stack[top] = cos(stack[top])
        elif op == OP_EXP:
            stack[top] = exp(stack[top])
        elif op == OP_TANH:
            stack[top] = tanh(stack[top])
    if not isfinite(stack[0]):
        return S_NONFINITE
    result[0] = stack[0]
    return S_OK


cdef int _jac_point(const long long* code, Py_ssize_t n_ops,
                    const double* consts, double* vals, double* grads,
                    const double* x, const double* u, Py_ssize_t n,
                    double* value, double* grad_out) noexcept nogil:
    cdef Py_ssize_t ip, j
    cdef long long op, arg, k
    cdef int top = -1
    cdef double a, b, q, c, t
    for ip in range(n_ops):
        op = code[2 * ip]
        arg = code[2 * ip + 1]
        if op == OP_CONST:
            top += 1
            vals[top] = consts[arg]
            for j in range(n):
                grads[top * n + j] = 0.0
        elif op == OP_X:
            top += 1
            vals[top] = x[arg]
            for j in range(n):
                grads[top * n + j] = 0.0
            grads[top * n + arg] = 1.0
        elif op == OP_U:
            top += 1
            vals[top] = u[arg]
            for j in range(n):
                grads[top * n + j] = 0.0
        elif op == OP_NEG:
            vals[top] = -vals[top]
            for j in range(n):
                grads[top * n + j] = -grads[top * n + j]
        elif op == OP_ADD:
            top -= 1
            vals[top] = vals[top] + vals[top + 1]
            for j in range(n):
                grads[top * n + j] += grads[(top + 1) * n + j]
        elif op == OP_SUB:
            top -= 1
            vals[top] = vals[top] - vals[top + 1]
            for j in range(n):
                grads[top * n + j] -= grads[(top + 1) * n + j]
        elif op == OP_MUL:
            top -= 1
            a = vals[top]
            b = vals[top + 1]
            for j in range(n):
                grads[top * n + j] = grads[top * n + j] * b + grads[(top + 1) * n + j] * a
            vals[top] = a * b
        elif op == OP_DIV:
            top -= 1
            b = vals[top + 1]
            if b == 0.0:
                return S_DIV_ZERO
            q = vals[top] / b
            for j in range(n):
                grads[top * n + j] = (grads[top * n + j] - q * grads[(top + 1) * n + j]) / b
            vals[top] = q
        elif op == OP_POWI:
            k = arg
            if k == 0:
                vals[top] = 1.0
                for j in range(n):
                    grads[top * n + j] = 0.0
            elif k < 0:
                if vals[top] == 0.0:
                    return S_POW_ZERO
                q = _powi(vals[top], k)
                c = k * q / vals[top]
                vals[top] = q
                for j in range(n):
                    grads[top * n + j] *= c
            else:
                q = _powi(vals[top], k - 1)
                c = k * q
                vals[top] = q * vals[top]
                for j in range(n):
                    grads[top * n + j] *= c
        elif op == OP_SIN:
            c = cos(vals[top])
            vals[top] = sin(vals[top])
            for j in range(n):
                grads[top * n + j] *= c
        elif op == OP_COS:
            c = -sin(vals[top])
            vals[top] = cos(vals[top])
            for j in range(n):
                grads[top * n + j] *= c
        elif op == OP_EXP:
            c = exp(vals[top])
            vals[top] = c
            for j in range(n):
                grads[top * n + j] *= c
        elif op == OP_TANH:
            t = tanh(vals[top])
            c = 1.0 - t * t
            vals[top] = t
            for j in range(n):
                grads[top * n + j] *= c
    if not isfinite(vals[0]):
        return S_NONFINITE
    for j in range(n):
        if not isfinite(grads[j]):
            return S_NONFINITE
        grad_out[j] = grads[j]
    value[0] = vals[0]
    return S_OK


def eval_single(code, consts, int depth, x, u):
    cdef long long[::1] code_v = np.ascontiguousarray(code, dtype=np.int64)
    cdef double[::1] consts_v = np.ascontiguousarray(consts, dtype=np.float64)
    cdef double[::1] x_v = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] u_v = np.ascontiguousarray(u, dtype=np.float64) if len(u) else np.zeros(1)
    cdef double* stack = <double*> malloc(depth * sizeof(double))
    cdef double result = 0.0
    cdef int status
    if stack == NULL:
        raise MemoryError()
    try:
        status = _eval_point(&code_v[0], code_v.shape[0] // 2, &consts_v[0],
                             stack, &x_v[0], &u_v[0], &result)
    finally:
        free(stack)
    if status != STATUS_OK:
        return status, 0.0
    return STATUS_OK, result


def jac_single(code, consts, int depth, x, u):
    cdef long long[::1] code_v = np.ascontiguousarray(code, dtype=np.int64)
    cdef double[::1] consts_v = np.ascontiguousarray(consts, dtype=np.float64)
    cdef double[::1] x_v = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] u_v = np.ascontiguousarray(u, dtype=np.float64) if len(u) else np.zeros(1)
    cdef Py_ssize_t n = x_v.shape[0]
    grad = np.empty(n)
    cdef double[::1] grad_v = grad
    cdef double* vals = <double*> malloc(depth * sizeof(double))
    cdef double* grads = <double*> malloc(depth * n * sizeof(double))
    cdef double value = 0.0
    cdef int status
    if vals == NULL or grads == NULL:
        free(vals)
        free(grads)
        raise MemoryError()
    try:
        status = _jac_point(&code_v[0], code_v.shape[0] // 2, &consts_v[0],
                            vals, grads, &x_v[0], &u_v[0], n, &value, &grad_v[0])
    finally:
        free(vals)
        free(grads)
    if status != STATUS_OK:
        return status, 0.0, None
    return STATUS_OK, value, grad


def eval_batch(code, consts, int depth, X, U):
    cdef long long[::1] code_v = np.ascontiguousarray(code, dtype=np.int64)
    cdef double[::1] consts_v = np.ascontiguousarray(consts, dtype=np.float64)
    cdef double[:, ::1] X_v = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] U_v
    cdef Py_ssize_t N = X_v.shape[0]
    if U is None or U.shape[1] == 0:
        U_v = np.zeros((N, 1))
    else:
        U_v = np.ascontiguousarray(U, dtype=np.float64)
    out = np.empty(N)
    cdef double[::1] out_v = out
    cdef double* stack = <double*> malloc(depth * sizeof(double))
    cdef Py_ssize_t i, n_ops = code_v.shape[0] // 2
    cdef int status = S_OK
    cdef Py_ssize_t bad = -1
    if stack == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(N):
                status = _eval_point(&code_v[0], n_ops, &consts_v[0], stack,
                                     &X_v[i, 0], &U_v[i, 0], &out_v[i])
                if status != S_OK:
                    bad = i
                    break
    finally:
        free(stack)
    if status != STATUS_OK:
        return status, bad, None
    return STATUS_OK, -1, out


def jac_batch(code, consts, int depth, X, U):
    cdef long long[::1] code_v = np.ascontiguousarray(code, dtype=np.int64)
    cdef double[::1] consts_v = np.ascontiguousarray(consts, dtype=np.float64)
    cdef double[:, ::1] X_v = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] U_v
    cdef Py_ssize_t N = X_v.shape[0]
    cdef Py_ssize_t n = X_v.shape[1]
    if U is None or U.shape[1] == 0:
        U_v = np.zeros((N, 1))
    else:
        U_v = np.ascontiguousarray(U, dtype=np.float64)
    out = np.empty((N, n))
    cdef double[:, ::1] out_v = out
    cdef double* vals = <double*> malloc(depth * sizeof(double))
    cdef double* grads = <double*> malloc(depth * n * sizeof(double))
    cdef double value = 0.0
    cdef Py_ssize_t i, n_ops = code_v.shape[0] // 2
    cdef int status = S_OK
    cdef Py_ssize_t bad = -1
    if vals == NULL or grads == NULL:
        free(vals)
        free(grads)
        raise MemoryError()
    try:
        with nogil:
            for i in range(N):
                status = _jac_point(&code_v[0], n_ops, &consts_v[0], vals, grads,
                                    &X_v[i, 0], &U_v[i, 0], n, &value, &out_v[i, 0])
                if status != S_OK:
                    bad = i
                    break
    finally:
        free(vals)
        free(grads)
    if status != STATUS_OK:
        return status, bad, None
    return STATUS_OK, -1, out
