"""Solver layer: strict feasibility of compiled LMI problems, scalar
minimization by bisection, and independent solution checking.

Feasibility is decided by maximizing a uniform slack t over the scaled
constraint blocks (matrix blocks and the 1x1 blocks coming from scalar
bounds and the solver box) with a log-det barrier and damped Newton
steps.  A positive slack certifies strict feasibility beyond the
constraint margins; the barrier's duality gap certifies infeasibility
once the gap bound pushes the attainable slack below zero.  The method
is deterministic: no randomness, no iteration-order ambiguity.

Scalar objectives (monotone by construction in the problems this
package builds) are minimized by bisection, each probe a feasibility
solve with the objective frozen.  The returned bracket is re-verified
by explicit probes at the answer and at answer - tol.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .synth import LmiProblem, SynthError


class SdpError(ValueError):
    pass


FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
OBJECTIVE_OPTIMAL = "objective_optimal"
NUMERICAL_FAILURE = "numerical_failure"

# objective name -> (bracket lo, bracket hi, tol)
DEFAULT_BRACKETS = {
    "xi": (1.0, 1e4, 1e-6),
    "zeta": (0.0, 1e4, 1e-8),
}


@dataclass(frozen=True)
class SolverSettings:
    iteration_cap: int = 200
    theta: float = 1e-11        # slack level declaring strict feasibility
    inner_tol: float = 1e-9     # Newton decrement threshold (squared/2)
    inner_cap: int = 40         # Newton steps per centering stage
    kappa0: float | None = None  # slack weight start; None picks 10 * total block dim
    kappa_growth: float = 100.0
    kappa_max: float = 1e18
    box: float = 1e8            # solver box |v_j| <= box on every component
    cond_limit: float = 1e14


@dataclass(frozen=True)
class SolveReport:
    status: str
    assignment: dict | None = None
    objective_value: float | None = None
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    wall_time: float = 0.0
    surrogate: float | None = None      # best slack found when infeasible
    bracket: tuple | None = None        # tightest (lo, hi] examined by bisection
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ResidualEntry:
    name: str
    residual: float
    margin: float
    passed: bool


@dataclass(frozen=True)
class CheckReport:
    entries: tuple
    passed: bool


def _scaled_blocks(p: LmiProblem, settings: SolverSettings):
    """Margin-shifted, sense-folded, scaled blocks plus 1x1 rows for scalar
    bounds and the solver box.  The slack column (coefficient -1 on every
    block) is appended as the last variable."""
    nv = p.dim
    nz = nv + 1
    mats = []
    for c in p.constraints:
        s = c.scale
        K = (c.sense * c.K - c.margin * np.eye(c.block_dim)) / s
        A = np.empty((nz, c.block_dim, c.block_dim))
        A[:nv] = c.sense * c.A / s
        A[nv] = -np.eye(c.block_dim)
        mats.append((K, A))
    rows_c = []
    rows_d = []
    sl = p.slices()
    for spec in p.variables:
        if spec.kind == "scalar":
            j = sl[spec.name].start
            if spec.lower is not None:
                s = max(1.0, abs(spec.lower))
                d = np.zeros(nz)
                d[j] = 1.0 / s
                d[nv] = -1.0
                rows_c.append(-spec.lower / s)
                rows_d.append(d)
            if spec.upper is not None:
                s = max(1.0, abs(spec.upper))
                d = np.zeros(nz)
                d[j] = -1.0 / s
                d[nv] = -1.0
                rows_c.append(spec.upper / s)
                rows_d.append(d)
    for j in range(nv):
        for sign in (1.0, -1.0):
            d = np.zeros(nz)
            d[j] = sign / settings.box
            d[nv] = -1.0
            rows_c.append(1.0)
            rows_d.append(d)
    C = np.array(rows_c)
    D = np.array(rows_d).reshape(len(rows_c), nz)
    m_total = sum(K.shape[0] for K, _ in mats) + len(rows_c)
    return mats, C, D, m_total


def _initial_vector(p: LmiProblem):
    v = np.zeros(p.dim)
    sl = p.slices()
    for spec in p.variables:
        if spec.kind == "scalar":
            j = sl[spec.name].start
            lo = spec.lower if spec.lower is not None else 0.0
            hi = spec.upper if spec.upper is not None else lo + 2.0
            v[j] = 0.5 * (lo + hi)
    return v


def _min_slack(mats, C, D, z):
    worst = np.inf
    for K, A in mats:
        S = K + np.tensordot(z, A, axes=1)
        worst = min(worst, float(np.linalg.eigvalsh(S)[0]))
    r = C + D @ z
    if r.size:
        worst = min(worst, float(np.min(r)))
    return worst


def _chol_all(mats, z):
    out = []
    for K, A in mats:
        S = K + np.tensordot(z, A, axes=1)
        try:
            out.append(np.linalg.cholesky(S))
        except np.linalg.LinAlgError:
            return None
    return out


def _phi(kappa, mats, C, D, z):
    chols = _chol_all(mats, z)
    if chols is None:
        return np.inf, None, None
    r = C + D @ z
    if np.any(r <= 0.0):
        return np.inf, None, None
    val = -kappa * z[-1]
    for L in chols:
        val -= 2.0 * float(np.sum(np.log(np.diag(L))))
    val -= float(np.sum(np.log(r)))
    return val, chols, r


def _grad_hess(kappa, mats, C, D, z, chols, r):
    nz = z.shape[0]
    g = np.zeros(nz)
    g[-1] = -kappa
    Hsum = np.zeros((nz, nz))
    for (K, A), L in zip(mats, chols):
        T1 = np.linalg.solve(L[None, :, :], A)
        Atil = np.linalg.solve(L[None, :, :], T1.transpose(0, 2, 1))
        g -= np.einsum("kii->k", Atil)
        Hsum += np.einsum("kij,lij->kl", Atil, Atil)
    inv_r = 1.0 / r
    g -= D.T @ inv_r
    Hsum += (D * (inv_r ** 2)[:, None]).T @ D
    return g, Hsum


def solve_feasibility(p: LmiProblem, settings: SolverSettings | None = None, warm: dict | None = None) -> SolveReport:
    """Find a strictly feasible assignment for a problem without objective,
    or certify infeasibility."""
    if p.objective is not None:
        raise SdpError("solve_feasibility expects a problem without objective")
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    mats, C, D, m_total = _scaled_blocks(p, settings)
    v0 = _initial_vector(p) if warm is None else p.pack(warm)
    if v0.size and np.max(np.abs(v0)) >= settings.box:
        v0 = _initial_vector(p)
    z = np.concatenate([v0, [0.0]])
    z[-1] = _min_slack(mats, C, D, z) - 1.0

    kappa = settings.kappa0 if settings.kappa0 is not None else 10.0 * m_total
    # beyond this weight the certified slack bound 2m/kappa sits two orders
    # below theta, so no larger weight can flip a verdict
    kappa_stop = min(settings.kappa_max, max(kappa, 100.0 * m_total / settings.theta))
    iterations = 0
    diagnostics = {}

    def report(status, assignment=None, surrogate=None):
        residuals = {}
        if assignment is not None:
            for i, c in enumerate(p.constraints):
                M = p.constraint_matrix(i, assignment)
                w = np.linalg.eigvalsh(c.sense * M)
                residuals[c.name] = float(w[0]) - c.margin
        return SolveReport(
            status=status,
            assignment=assignment,
            residuals=residuals,
            iterations=iterations,
            wall_time=time.perf_counter() - t_start,
            surrogate=surrogate,
            diagnostics=diagnostics,
        )

    if z[-1] >= settings.theta:
        diagnostics["slack"] = float(z[-1])
        return report(FEASIBLE, p.unpack(z[:-1]))

    prev_t = -np.inf
    stall = 0
    while kappa <= kappa_stop:
        # inner: damped Newton centering for the current slack weight; the
        # step budget covers any honest re-centering after a weight jump,
        # and runaway counts only ever come from grinding at the rounding
        # floor, where the next stage's certificate is the right exit
        for _ in range(settings.inner_cap):
            if iterations >= settings.iteration_cap:
                diagnostics["reason"] = "iteration cap"
                return report(NUMERICAL_FAILURE)
            val, chols, r = _phi(kappa, mats, C, D, z)
            if chols is None:
                diagnostics["reason"] = "lost interior point"
                return report(NUMERICAL_FAILURE)
            g, Hess = _grad_hess(kappa, mats, C, D, z, chols, r)
            reg = 1e-14 * (1.0 + np.trace(Hess) / Hess.shape[0])
            step = None
            for boost in (1.0, 1e4, 1e8):
                try:
                    cf = scipy.linalg.cho_factor(Hess + reg * boost * np.eye(Hess.shape[0]))
                    step = scipy.linalg.cho_solve(cf, -g)
                    break
                except np.linalg.LinAlgError:
                    continue
            if step is None:
                diagnostics["reason"] = "newton system not positive definite"
                return report(NUMERICAL_FAILURE)
            iterations += 1
            decrement = -float(g @ step)
            # an approximately centered point (Newton decrement <= 1/4)
            # certifies max slack <= t + 2*m/kappa; conclude early instead
            # of grinding the centering down to inner_tol at huge kappa
            if decrement <= 0.0625 and z[-1] + 2.0 * m_total / kappa < settings.theta:
                diagnostics["certified_gap"] = m_total / kappa
                return report(INFEASIBLE, surrogate=float(z[-1]))
            # exact distance to the cone boundary along the step
            alpha_max = np.inf
            for (K, A), L in zip(mats, chols):
                dS = np.tensordot(step, A, axes=1)
                W = np.linalg.solve(L, np.linalg.solve(L, dS).T)
                lam = float(np.linalg.eigvalsh(0.5 * (W + W.T))[0])
                if lam < 0.0:
                    alpha_max = min(alpha_max, -1.0 / lam)
            dr = D @ step
            neg = dr < 0.0
            if np.any(neg):
                alpha_max = min(alpha_max, float(np.min(-r[neg] / dr[neg])))
            alpha = min(1.0, 0.99 * alpha_max)
            gdot = float(g @ step)
            accepted = False
            cval = val
            for _ in range(40):
                cand = z + alpha * step
                cval, cch, cr = _phi(kappa, mats, C, D, cand)
                if cval < val + 0.25 * alpha * gdot:
                    z = cand
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            if z[-1] >= settings.theta:
                v = z[:-1]
                assignment = p.unpack(v)
                diagnostics["slack"] = float(z[-1])
                return report(FEASIBLE, assignment)
            if 0.5 * decrement <= settings.inner_tol:
                break
            # centering progress below floating-point resolution
            if val - cval <= 1e-13 * (1.0 + abs(val)):
                break
        gap = m_total / kappa
        if z[-1] + 2.0 * gap < settings.theta:
            diagnostics["certified_gap"] = gap
            return report(INFEASIBLE, surrogate=float(z[-1]))
        # attainable slack stagnating at the noise floor: growing the
        # weight further cannot push it past theta
        if z[-1] - prev_t < 0.1 * settings.theta:
            stall += 1
            if stall >= 2:
                break
        else:
            stall = 0
        prev_t = z[-1]
        kappa *= settings.kappa_growth
    # slack weight exhausted: the attainable slack never reached theta, so
    # no point satisfies the constraints with the required strictness
    diagnostics["reason"] = "slack weight exhausted"
    if z[-1] >= -settings.theta:
        diagnostics["borderline"] = True
    return report(INFEASIBLE, surrogate=float(z[-1]))


def minimize_scalar(p: LmiProblem, bracket: tuple | None = None, tol: float | None = None,
                    settings: SolverSettings | None = None) -> SolveReport:
    """Bisection on the scalar objective; every probe is a feasibility solve
    with the objective frozen.  Requires monotone feasibility in the
    objective, which holds for the problems this package builds."""
    if p.objective is None:
        raise SdpError("minimize_scalar expects a problem with an objective")
    name = p.objective
    if bracket is None or tol is None:
        default = DEFAULT_BRACKETS.get(name)
        if default is None:
            raise SdpError(f"no default bracket for objective '{name}'")
        lo, hi, dtol = default
        if bracket is not None:
            lo, hi = bracket
        if tol is None:
            tol = dtol
    else:
        lo, hi = bracket
    if not (lo < hi and tol > 0):
        raise SdpError("need lo < hi and tol > 0")
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    total_iter = 0
    probes = 0

    def probe(value, warm_rep=None):
        nonlocal total_iter, probes
        # a warm start only helps when the donor point sits well inside the
        # feasible set; boundary-glued points slow the centering down badly
        warm = None
        if warm_rep is not None and warm_rep.diagnostics.get("slack", 0.0) >= 1e-8:
            warm = warm_rep.assignment
        rep = solve_feasibility(p.freeze(name, value), settings, warm=warm)
        total_iter += rep.iterations
        probes += 1
        return rep

    hi_rep = probe(hi)
    if hi_rep.status == NUMERICAL_FAILURE:
        return SolveReport(NUMERICAL_FAILURE, bracket=(lo, hi), iterations=total_iter,
                           wall_time=time.perf_counter() - t_start,
                           diagnostics={"failed_at": hi, **hi_rep.diagnostics})
    if hi_rep.status != FEASIBLE:
        return SolveReport(INFEASIBLE, bracket=(lo, hi), iterations=total_iter,
                           wall_time=time.perf_counter() - t_start,
                           surrogate=hi_rep.surrogate, diagnostics={"probes": probes})
    best_value = hi
    best = hi_rep
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        rep = probe(mid, warm_rep=best)
        if rep.status == NUMERICAL_FAILURE:
            return SolveReport(NUMERICAL_FAILURE, bracket=(lo, hi), iterations=total_iter,
                               wall_time=time.perf_counter() - t_start,
                               diagnostics={"failed_at": mid, **rep.diagnostics})
        if rep.status == FEASIBLE:
            hi, best_value, best = mid, mid, rep
        else:
            lo = mid

    # bracket verification: the answer's own probe certified feasibility
    # (re-checkable via check_solution); probe answer - tol explicitly
    upper_rep = best
    lower_rep = probe(best_value - tol)
    verified = upper_rep.status == FEASIBLE and lower_rep.status == INFEASIBLE
    diagnostics = {
        "probes": probes,
        "bracket_verified": verified,
        "lower_probe_status": lower_rep.status,
    }
    if not verified:
        return SolveReport(NUMERICAL_FAILURE, bracket=(lo, hi), iterations=total_iter,
                           wall_time=time.perf_counter() - t_start, diagnostics=diagnostics)
    assignment = dict(upper_rep.assignment)
    assignment[name] = best_value
    return SolveReport(
        status=OBJECTIVE_OPTIMAL,
        assignment=assignment,
        objective_value=best_value,
        residuals=upper_rep.residuals,
        iterations=total_iter,
        wall_time=time.perf_counter() - t_start,
        bracket=(lo, hi),
        diagnostics=diagnostics,
    )


def check_solution(p: LmiProblem, assignment: dict, tolerance: float | None = None) -> CheckReport:
    """Independent residual check.  Eigenvalues come from the symmetric QR
    path (scipy driver 'ev'), not the divide-and-conquer path the solver
    uses, so agreement is a genuine cross-check."""
    entries = []
    values = dict(assignment)
    obj = p.objective
    work = p
    if obj is not None and obj in values:
        work = p.freeze(obj, float(values[obj]))
        del values[obj]
    for spec in work.variables:
        if spec.name not in values:
            raise SdpError(f"assignment missing variable '{spec.name}'")
    for i, c in enumerate(work.constraints):
        M = work.constraint_matrix(i, values)
        w = scipy.linalg.eigh(c.sense * M, eigvals_only=True, driver="ev")
        tol = tolerance if tolerance is not None else 1e-7 * (1.0 + float(np.max(np.abs(c.K))))
        residual = float(w[0]) - c.margin
        entries.append(ResidualEntry(c.name, residual, c.margin, residual >= -tol))
    for spec in work.variables:
        if spec.kind != "scalar":
            continue
        val = float(values[spec.name])
        tol = tolerance if tolerance is not None else 1e-7
        if spec.lower is not None:
            residual = val - spec.lower
            entries.append(ResidualEntry(f"bound:{spec.name}", residual, 0.0, residual >= -tol))
        if spec.upper is not None:
            residual = spec.upper - val
            entries.append(ResidualEntry(f"bound:{spec.name}:upper", residual, 0.0, residual >= -tol))
    return CheckReport(tuple(entries), all(e.passed for e in entries))
