"""Scalar bounds and LMI problem assembly for observer synthesis.

Problems are represented in compiled affine form: each constraint is a
constant symmetric block K plus a coefficient matrix per scalar decision
variable, so M(v) = K + sum_j v_j A_j.  Matrix variables are flattened
(upper triangle for symmetric ones).  Builders construct the blocks with
plain numpy closures; compilation probes the closure at zero and at unit
vectors, which is exact because every block is affine in the variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class SynthError(ValueError):
    pass


class H8Mode(Enum):
    """Off-diagonal reading of the gain-bound LMI's cross block.

    paper_literal: coeff12 * I, only meaningful for square disturbance maps
    faithful:      coeff12 * B_d, the shape the quadratic-form derivation produces
    tightened:     like faithful, but the constant bound on lambda_max(P) is
                   replaced by a decision variable pbar coupled via P < pbar I
    """

    PAPER_LITERAL = "paper_literal"
    FAITHFUL = "faithful"
    TIGHTENED = "tightened"


@dataclass(frozen=True)
class QSpec:
    """Symmetric positive definite design matrix with cached extreme eigenvalues."""

    Q: np.ndarray
    lambda_min: float = None
    lambda_max: float = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise SynthError("Q must be square")
        scale = max(1.0, float(np.max(np.abs(Q))))
        if np.max(np.abs(Q - Q.T)) > 1e-12 * scale:
            raise SynthError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)
        Q.flags.writeable = False
        object.__setattr__(self, "Q", Q)
        w = np.linalg.eigvalsh(Q)
        lo, hi = float(w[0]), float(w[-1])
        if lo <= 0:
            raise SynthError("Q must be positive definite")
        for name, cached, computed in (("lambda_min", self.lambda_min, lo), ("lambda_max", self.lambda_max, hi)):
            if cached is not None and abs(cached - computed) > 1e-10 * abs(computed):
                raise SynthError(f"cached {name} disagrees with eigendecomposition")
            object.__setattr__(self, name, computed)

    @property
    def n(self):
        return self.Q.shape[0]


@dataclass(frozen=True)
class VarSpec:
    name: str
    kind: str  # "symmetric" | "rectangular" | "scalar"
    shape: tuple
    lower: float | None = None  # scalar kind only
    upper: float | None = None

    @property
    def size(self):
        if self.kind == "symmetric":
            n = self.shape[0]
            return n * (n + 1) // 2
        if self.kind == "rectangular":
            return self.shape[0] * self.shape[1]
        return 1


@dataclass(frozen=True)
class Constraint:
    name: str
    sense: int  # +1 for positive definite, -1 for negative definite
    margin: float
    K: np.ndarray  # m x m constant block
    A: np.ndarray  # nv x m x m coefficients
    scale: float = 1.0  # solver normalization, set at assembly and kept by freeze

    @property
    def block_dim(self):
        return self.K.shape[0]


@dataclass(frozen=True)
class LmiProblem:
    variables: tuple
    constraints: tuple
    objective: str | None = None  # scalar variable name, minimized

    @property
    def dim(self):
        return sum(v.size for v in self.variables)

    def slices(self):
        out = {}
        at = 0
        for v in self.variables:
            out[v.name] = slice(at, at + v.size)
            at += v.size
        return out

    def variable(self, name):
        for v in self.variables:
            if v.name == name:
                return v
        raise SynthError(f"no variable named '{name}'")

    def pack(self, assignment):
        """Flatten a name->value assignment into the decision vector."""
        v = np.zeros(self.dim)
        sl = self.slices()
        for spec in self.variables:
            if spec.name not in assignment:
                raise SynthError(f"assignment missing variable '{spec.name}'")
            val = assignment[spec.name]
            if spec.kind == "symmetric":
                M = np.asarray(val, dtype=float)
                if M.shape != spec.shape:
                    raise SynthError(f"'{spec.name}' must have shape {spec.shape}")
                iu = np.triu_indices(spec.shape[0])
                v[sl[spec.name]] = M[iu]
            elif spec.kind == "rectangular":
                M = np.asarray(val, dtype=float)
                if M.shape != spec.shape:
                    raise SynthError(f"'{spec.name}' must have shape {spec.shape}")
                v[sl[spec.name]] = M.reshape(-1)
            else:
                v[sl[spec.name]] = float(val)
        return v

    def unpack(self, v):
        out = {}
        sl = self.slices()
        for spec in self.variables:
            seg = np.asarray(v)[sl[spec.name]]
            if spec.kind == "symmetric":
                n = spec.shape[0]
                M = np.zeros((n, n))
                iu = np.triu_indices(n)
                M[iu] = seg
                M.T[iu] = seg
                out[spec.name] = M
            elif spec.kind == "rectangular":
                out[spec.name] = seg.reshape(spec.shape)
            else:
                out[spec.name] = float(seg[0])
        return out

    def constraint_matrix(self, index, assignment):
        """Evaluate one constraint block at a name->value assignment."""
        return self.constraint_matrix_from_vector(index, self.pack(assignment))

    def constraint_matrix_from_vector(self, index, v):
        c = self.constraints[index]
        return c.K + np.tensordot(np.asarray(v, dtype=float), c.A, axes=1)

    def freeze(self, name, value):
        """Return the problem with a scalar variable fixed, its coefficient
        column folded into the constants. Used by the bisection driver."""
        spec = self.variable(name)
        if spec.kind != "scalar":
            raise SynthError("only scalar variables can be frozen")
        sl = self.slices()[name]
        j = sl.start
        keep = [v for v in self.variables if v.name != name]
        new_constraints = []
        for c in self.constraints:
            K = c.K + value * c.A[j]
            A = np.delete(c.A, j, axis=0)
            K.flags.writeable = False
            A.flags.writeable = False
            new_constraints.append(Constraint(c.name, c.sense, c.margin, K, A, c.scale))
        objective = None if self.objective == name else self.objective
        return LmiProblem(tuple(keep), tuple(new_constraints), objective)


def _zero_assignment(variables):
    out = {}
    for v in variables:
        if v.kind == "scalar":
            out[v.name] = 0.0
        else:
            out[v.name] = np.zeros(v.shape)
    return out


def _basis_assignments(variables):
    """Yield unit assignments in the same order pack() flattens them."""
    for v in variables:
        if v.kind == "symmetric":
            n = v.shape[0]
            for i in range(n):
                for j in range(i, n):
                    M = np.zeros((n, n))
                    M[i, j] = M[j, i] = 1.0
                    yield v.name, M
        elif v.kind == "rectangular":
            r, c = v.shape
            for i in range(r):
                for j in range(c):
                    M = np.zeros((r, c))
                    M[i, j] = 1.0
                    yield v.name, M
        else:
            yield v.name, 1.0


def _require_symmetric(M, where):
    scale = 1.0 + float(np.max(np.abs(M)))
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise SynthError(f"{where} produced an asymmetric block")
    return 0.5 * (M + M.T)


def compile_problem(variables, blocks, objective=None):
    """blocks: list of (name, sense, fn) with fn(assignment) -> symmetric
    matrix affine in the variables. Margins are set from the constant term."""
    variables = tuple(variables)
    zero = _zero_assignment(variables)
    nv = sum(v.size for v in variables)
    constraints = []
    for cname, sense, fn in blocks:
        K = _require_symmetric(np.asarray(fn(zero), dtype=float), cname)
        m = K.shape[0]
        A = np.empty((nv, m, m))
        for idx, (vname, basis) in enumerate(_basis_assignments(variables)):
            assign = dict(zero)
            assign[vname] = basis if np.isscalar(basis) else zero[vname] + basis
            Aj = np.asarray(fn(assign), dtype=float) - K
            A[idx] = _require_symmetric(Aj, f"{cname}/{vname}")
        margin = 1e-9 * (1.0 + float(np.max(np.abs(K))))
        scale = max(1.0, float(np.max(np.abs(K))))
        K.flags.writeable = False
        A.flags.writeable = False
        constraints.append(Constraint(cname, sense, margin, K, A, scale))
    return LmiProblem(variables, tuple(constraints), objective)


def psi1(q: QSpec, gamma_d: float) -> float:
    """Bound on lambda_max(P) implied by the quadratic stability argument."""
    if not gamma_d > 0:
        raise SynthError("gamma_d must be positive")
    lo, hi = q.lambda_min, q.lambda_max
    return (-hi + np.sqrt(hi * hi + lo * lo / (gamma_d * gamma_d))) / (gamma_d + 2.0)


def psi2(q: QSpec, xi: float) -> float:
    """Affine-in-xi replacement for psi1 used when maximizing the admissible
    Lipschitz constant (gamma_d = 1/xi)."""
    if not xi > 1:
        raise SynthError("xi must exceed 1")
    return (q.lambda_min * xi - q.lambda_max) / 3.0


def _check_dims(A_d, C_d, q):
    A_d = np.asarray(A_d, dtype=float)
    C_d = np.asarray(C_d, dtype=float)
    n = A_d.shape[0]
    if A_d.shape != (n, n):
        raise SynthError("A_d must be square")
    if C_d.ndim != 2 or C_d.shape[1] != n:
        raise SynthError(f"C_d must be p x {n}")
    if q.n != n:
        raise SynthError("Q dimension does not match A_d")
    return A_d, C_d, n, C_d.shape[0]


def _stability_block(A_d, C_d, q, n):
    def fn(a):
        P, G, eps = a["P"], a["G"], a["eps"]
        M11 = P - q.Q - eps * np.eye(n)
        M12 = A_d.T @ P - C_d.T @ G.T
        return np.block([[M11, M12], [M12.T, P]])

    return fn


def _eps_floor(q):
    return 1e-8 * q.lambda_min


def build_thm1(A_d, C_d, q: QSpec, gamma_d: float) -> LmiProblem:
    """Feasibility problem certifying the observer error is asymptotically
    stable for Lipschitz constant gamma_d."""
    A_d, C_d, n, p = _check_dims(A_d, C_d, q)
    bound = psi1(q, gamma_d)
    variables = [
        VarSpec("P", "symmetric", (n, n)),
        VarSpec("G", "rectangular", (n, p)),
        VarSpec("eps", "scalar", (), lower=_eps_floor(q)),
    ]

    def cap_fn(a):
        P = a["P"]
        return np.block([[bound * np.eye(n), P], [P, bound * np.eye(n)]])

    blocks = [
        ("stability", +1, _stability_block(A_d, C_d, q, n)),
        ("p_cap", +1, cap_fn),
    ]
    return compile_problem(variables, blocks)


def build_thm2(A_d, C_d, q: QSpec) -> LmiProblem:
    """Maximize the admissible Lipschitz constant: minimize xi with
    gamma_d = 1/xi, the cap block affine in xi."""
    A_d, C_d, n, p = _check_dims(A_d, C_d, q)
    variables = [
        VarSpec("P", "symmetric", (n, n)),
        VarSpec("G", "rectangular", (n, p)),
        VarSpec("eps", "scalar", (), lower=_eps_floor(q)),
        VarSpec("xi", "scalar", (), lower=1.0 + 1e-12),
    ]

    def cap_fn(a):
        P = a["P"]
        val = (q.lambda_min * a["xi"] - q.lambda_max) / 3.0
        return np.block([[val * np.eye(n), P], [P, val * np.eye(n)]])

    blocks = [
        ("stability", +1, _stability_block(A_d, C_d, q, n)),
        ("p_cap", +1, cap_fn),
    ]
    return compile_problem(variables, blocks, objective="xi")


def lambda2_terms(q: QSpec, gamma_d: float, H, mode: H8Mode, pbar: float) -> dict:
    """Numeric pieces of the gain-bound constraint for a given bound pbar on
    lambda_max(P): the (1,1) block and the off-diagonal scalar coefficient."""
    if gamma_d < 0:
        raise SynthError("gamma_d must be nonnegative")
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[1] != q.n:
        raise SynthError(f"H must be r x {q.n}")
    block11 = H.T @ H - q.Q + gamma_d * (3.0 * pbar + q.lambda_max) * np.eye(q.n)
    coeff12 = 0.5 * (2.0 * (gamma_d + 1.0) * pbar + q.lambda_max)
    return {"block11": block11, "coeff12": coeff12}


def build_thm4(A_d, C_d, B_d, H, q: QSpec, gamma_d: float, mode: H8Mode) -> LmiProblem:
    """Minimize zeta, the squared disturbance-to-error gain bound mu^2."""
    A_d, C_d, n, p = _check_dims(A_d, C_d, q)
    if not gamma_d > 0:
        raise SynthError("gamma_d must be positive")
    if B_d is None:
        raise SynthError("B_d required for gain-bound synthesis")
    B_d = np.asarray(B_d, dtype=float)
    if B_d.ndim != 2 or B_d.shape[0] != n:
        raise SynthError(f"B_d must be {n} x q")
    qn = B_d.shape[1]
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[1] != n:
        raise SynthError(f"H must be r x {n}")
    mode = H8Mode(mode)
    if mode is H8Mode.PAPER_LITERAL and qn != n:
        raise SynthError("paper_literal mode needs a square B_d (q = n)")

    bound = psi1(q, gamma_d)
    variables = [
        VarSpec("P", "symmetric", (n, n)),
        VarSpec("G", "rectangular", (n, p)),
        VarSpec("eps", "scalar", (), lower=_eps_floor(q)),
        VarSpec("zeta", "scalar", (), lower=1e-12),
    ]
    if mode is H8Mode.TIGHTENED:
        variables.append(VarSpec("pbar", "scalar", (), lower=1e-12))

    def cap_fn(a):
        P = a["P"]
        return np.block([[bound * np.eye(n), P], [P, bound * np.eye(n)]])

    def gain_fn(a):
        P, zeta = a["P"], a["zeta"]
        pb = a["pbar"] if mode is H8Mode.TIGHTENED else bound
        terms = lambda2_terms(q, gamma_d, H, mode, pb)
        off = terms["coeff12"] * (np.eye(n) if mode is H8Mode.PAPER_LITERAL else B_d)
        M22 = B_d.T @ P @ B_d - zeta * np.eye(qn)
        return np.block([[terms["block11"], off], [off.T, M22]])

    blocks = [
        ("stability", +1, _stability_block(A_d, C_d, q, n)),
        ("p_cap", +1, cap_fn),
        ("gain", -1, gain_fn),
    ]
    if mode is H8Mode.TIGHTENED:
        def pbar_fn(a):
            return a["pbar"] * np.eye(n) - a["P"]

        blocks.append(("p_below_pbar", +1, pbar_fn))
    return compile_problem(variables, blocks, objective="zeta")
