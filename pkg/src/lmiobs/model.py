"""Plant models, discretization, Lipschitz-constant estimation and a
reference integrator.

Two discretizations of ``xdot = A x + f(x, u)`` are provided:

* ``euler_discretize``:  x+ = (I + A T) x + T f(x, u)
* ``taylor2_discretize``: second-order series under a zero-order hold,
  x+ = (I + A T + (T^2/2) A^2) x + T f + (T^2/2) [(A + J_f)(A x + f) - A^2 x]

The first keeps the nonlinearity's shape scaled by T; the second needs
the Jacobian of f and is evaluated numerically through the expression
engine (its nonlinear part is not itself an expression tree).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr


class ModelError(ValueError):
    pass


class IntegrationDivergence(ModelError):
    def __init__(self, step):
        super().__init__(f"state became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class Box:
    """Axis-aligned box region, lower_i <= x_i <= upper_i."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape:
            raise ModelError("region lower/upper must have the same length")
        if not np.all(lower < upper):
            raise ModelError("region requires lower < upper componentwise")

    @property
    def dim(self):
        return self.lower.shape[0]

    def contains(self, x, slack=0.0):
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(x >= self.lower - slack) and np.all(x <= self.upper + slack))

    def grid(self, points_per_axis):
        axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def sample(self, rng, count):
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))


def _as_matrix(M, rows, cols, name):
    M = np.asarray(M, dtype=float)
    if M.shape != (rows, cols):
        raise ModelError(f"{name} must be {rows}x{cols}, got {M.shape}")
    return M


@dataclass(frozen=True)
class ContinuousModel:
    """xdot = A x + f(x, u), y = C x, disturbance map B, output map H."""

    A: np.ndarray
    C: np.ndarray
    f: expr.ExprVector
    region: Box
    B: np.ndarray | None = None
    H: np.ndarray | None = None
    gamma_c: float | None = None

    def __post_init__(self):
        n = np.asarray(self.A).shape[0]
        object.__setattr__(self, "A", _as_matrix(self.A, n, n, "A"))
        C = np.asarray(self.C, dtype=float)
        if C.ndim != 2 or C.shape[1] != n:
            raise ModelError(f"C must be p x {n}, got {C.shape}")
        object.__setattr__(self, "C", C)
        if self.B is not None:
            B = np.asarray(self.B, dtype=float)
            if B.ndim != 2 or B.shape[0] != n:
                raise ModelError(f"B must be {n} x q, got {B.shape}")
            object.__setattr__(self, "B", B)
        if self.H is not None:
            H = np.asarray(self.H, dtype=float)
            if H.ndim != 2 or H.shape[1] != n:
                raise ModelError(f"H must be r x {n}, got {H.shape}")
            object.__setattr__(self, "H", H)
        if self.f.state_dim != n:
            raise ModelError("f state dimension does not match A")
        if self.region.dim != n:
            raise ModelError("region dimension does not match A")
        if self.gamma_c is not None and not self.gamma_c > 0:
            raise ModelError("gamma_c must be positive when given")

    @property
    def n(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscreteModel:
    """x(k+1) = A_d x + F(x, u) + B_d w, y = C_d x.

    F is stored as the originating expression vector plus a scalar
    multiplier T_scale (F = T_scale * f) for native and forward-difference
    models; the second-order model dispatches to the composite formula,
    which also needs the continuous A matrix.
    """

    A_d: np.ndarray
    C_d: np.ndarray
    f: expr.ExprVector
    T_scale: float
    gamma_d: float
    T: float
    provenance: str
    B_d: np.ndarray | None = None
    H: np.ndarray | None = None
    region: Box | None = None
    A_cont: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.provenance not in ("native", "euler", "taylor2"):
            raise ModelError(f"unknown provenance '{self.provenance}'")
        if not self.gamma_d > 0:
            raise ModelError("gamma_d must be positive")
        if (self.T > 0) != (self.provenance != "native"):
            raise ModelError("T must be positive exactly when the model is discretized")
        n = np.asarray(self.A_d).shape[0]
        object.__setattr__(self, "A_d", _as_matrix(self.A_d, n, n, "A_d"))
        C_d = np.asarray(self.C_d, dtype=float)
        if C_d.ndim != 2 or C_d.shape[1] != n:
            raise ModelError(f"C_d must be p x {n}, got {C_d.shape}")
        object.__setattr__(self, "C_d", C_d)
        if self.B_d is not None:
            object.__setattr__(self, "B_d", np.asarray(self.B_d, dtype=float))
        if self.H is not None:
            object.__setattr__(self, "H", np.asarray(self.H, dtype=float))
        if self.provenance == "taylor2" and self.A_cont is None:
            raise ModelError("taylor2 model needs the continuous A matrix")

    @property
    def n(self):
        return self.A_d.shape[0]

    @property
    def p(self):
        return self.C_d.shape[0]

    def apply_F(self, x, u=None):
        """Evaluate the discrete nonlinearity at one point."""
        if self.provenance == "taylor2":
            return _taylor2_map(self.A_cont, self.f, self.T, x, u)
        return self.T_scale * expr.evaluate(self.f, x, u)

    def step(self, x, u=None, w=None):
        xn = self.A_d @ x + self.apply_F(x, u)
        if w is not None and self.B_d is not None:
            xn = xn + self.B_d @ np.atleast_1d(w)
        return xn


def euler_discretize(m: ContinuousModel, T: float) -> DiscreteModel:
    """Forward-difference model: A_d = I + A T, F = T f, gamma_d = T gamma_c."""
    if not T > 0:
        raise ModelError("T must be positive")
    if m.gamma_c is None:
        raise ModelError("gamma_c required: provide it or estimate it first")
    n = m.n
    return DiscreteModel(
        A_d=np.eye(n) + m.A * T,
        C_d=m.C.copy(),
        f=m.f,
        T_scale=T,
        gamma_d=T * m.gamma_c,
        T=T,
        provenance="euler",
        B_d=None if m.B is None else m.B.copy(),
        H=None if m.H is None else m.H.copy(),
        region=m.region,
        A_cont=m.A.copy(),
    )


def _taylor2_map(A, f, T, x, u=None):
    x = np.asarray(x, dtype=float).reshape(-1)
    fv = expr.evaluate(f, x, u)
    J = expr.jacobian(f, x, u)
    A2 = A @ A
    return T * fv + 0.5 * T * T * ((A + J) @ (A @ x + fv) - A2 @ x)


def taylor2_discretize(m: ContinuousModel, T: float, grid_points_per_axis: int = 41) -> DiscreteModel:
    """Second-order series model under a zero-order hold.

    The Lipschitz constant of the composite nonlinearity is estimated
    numerically over the model's region.
    """
    if not T > 0:
        raise ModelError("T must be positive")
    n = m.n
    A2 = m.A @ m.A
    A_d = np.eye(n) + m.A * T + 0.5 * T * T * A2

    def composite(x):
        return _taylor2_map(m.A, m.f, T, x)

    gamma_d = estimate_lipschitz(composite, m.region, grid_points_per_axis, dim=n)
    return DiscreteModel(
        A_d=A_d,
        C_d=m.C.copy(),
        f=m.f,
        T_scale=T,
        gamma_d=gamma_d,
        T=T,
        provenance="taylor2",
        B_d=None if m.B is None else m.B.copy(),
        H=None if m.H is None else m.H.copy(),
        region=m.region,
        A_cont=m.A.copy(),
    )


def _spectral_norms_expr(f, X):
    J = expr.jacobian_batch(f, X)
    return np.linalg.svd(J, compute_uv=False)[:, 0]


def _fd_jacobian_map(fn, x, dim):
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x))
    J = np.empty((f0.shape[0], dim))
    for j in range(dim):
        h = 1e-6 * (1.0 + abs(x[j]))
        e = np.zeros(dim)
        e[j] = h
        J[:, j] = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h)
    return J


def estimate_lipschitz(f, region: Box, grid_points_per_axis: int = 41, dim: int | None = None) -> float:
    """Largest spectral norm of the Jacobian over the region: a valid
    Lipschitz constant on a convex region.

    Dense grid scan followed by coordinate-wise golden-section ascent
    from the best grid point (50 line searches, derivative free).
    Accepts an ExprVector or any vector map (finite-difference Jacobian
    in the latter case, pass `dim`).
    """
    return lipschitz_argmax(f, region, grid_points_per_axis, dim)[0]


def lipschitz_argmax(f, region: Box, grid_points_per_axis: int = 41, dim: int | None = None):
    """Same search as estimate_lipschitz, also returning the point where
    the largest Jacobian norm was observed."""
    if grid_points_per_axis < 2:
        raise ModelError("grid_points_per_axis must be at least 2")
    if isinstance(f, expr.ExprVector):
        n = f.state_dim

        def objective(x):
            return float(np.linalg.svd(expr.jacobian(f, x), compute_uv=False)[0])

        X = region.grid(grid_points_per_axis)
        values = _spectral_norms_expr(f, X)
    else:
        if dim is None:
            raise ModelError("dim required for a plain vector map")
        n = dim

        def objective(x):
            return float(np.linalg.svd(_fd_jacobian_map(f, x, n), compute_uv=False)[0])

        X = region.grid(grid_points_per_axis)
        values = np.array([objective(x) for x in X])
    best_idx = int(np.argmax(values))
    best_val = float(values[best_idx])
    x = X[best_idx].copy()
    best_x = x.copy()

    # coordinate-cycling golden-section ascent, region-bounded
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0

    def along(j, t):
        x[j] = t
        return objective(x)

    for k in range(50):
        j = k % n
        a, b = region.lower[j], region.upper[j]
        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
        fc, fd = along(j, c), along(j, d)
        for _ in range(24):
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - inv_phi * (b - a)
                fc = along(j, c)
            else:
                a, c, fc = c, d, fd
                d = a + inv_phi * (b - a)
                fd = along(j, d)
        mid_val = along(j, 0.5 * (a + b))
        if mid_val > best_val:
            best_val = mid_val
            best_x = x.copy()
    return best_val, best_x


def reference_integrate(m: ContinuousModel, x0, u, T: float, substeps: int, steps: int) -> np.ndarray:
    """Classical fourth-order Runge-Kutta sampling of the continuous
    plant: returns x(kT) for k = 0..steps, integrating with step
    T/substeps and holding u constant over each sample interval."""
    if substeps < 1:
        raise ModelError("substeps must be at least 1")
    if not T > 0:
        raise ModelError("T must be positive")
    n = m.n
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    if x.shape[0] != n:
        raise ModelError(f"x0 must have length {n}")
    out = np.empty((steps + 1, n))
    out[0] = x
    h = T / substeps
    A = m.A
    f = m.f
    for k in range(steps):
        uk = None if u is None else np.asarray(u[k], dtype=float)
        try:
            for _ in range(substeps):
                k1 = A @ x + expr.evaluate(f, x, uk)
                x1 = x + 0.5 * h * k1
                k2 = A @ x1 + expr.evaluate(f, x1, uk)
                x2 = x + 0.5 * h * k2
                k3 = A @ x2 + expr.evaluate(f, x2, uk)
                x3 = x + h * k3
                k4 = A @ x3 + expr.evaluate(f, x3, uk)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except expr.EvalDomainError as err:
            raise IntegrationDivergence(k + 1) from err
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergence(k + 1)
        out[k + 1] = x
    return out
