"""Observer design and simulation.

Turns certified matrix-inequality solutions into observer gains, runs the
discrete and sampled-data error recursions exactly as written, and measures
empirical disturbance attenuation against the certified bound.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import expr, model, sdpcore, synth
from .sdpcore import CheckReport, SolveReport, SolverSettings
from .synth import H8Mode, QSpec


class ObserverError(ValueError):
    pass


class InfeasibleProblem(ObserverError):
    """The assembled inequality system admits no strictly feasible point."""

    def __init__(self, message, report: SolveReport):
        super().__init__(message)
        self.report = report


class SolverFailure(ObserverError):
    def __init__(self, message, report: SolveReport):
        super().__init__(message)
        self.report = report


class SimulationDivergence(ObserverError):
    def __init__(self, step):
        super().__init__(f"state left the finite range at step {step}")
        self.step = step


@dataclass(frozen=True)
class DesignResult:
    L: np.ndarray
    P: np.ndarray
    G: np.ndarray
    epsilon: float
    theorem: int
    Q_used: QSpec
    residuals: CheckReport
    closed_loop_radius: float
    gamma_d_star: float | None = None
    mu_star: float | None = None
    mode: H8Mode | None = None
    report: SolveReport = field(default=None, repr=False)


@dataclass(frozen=True)
class SimulationRun:
    """Trajectories plus derived metrics; e is exactly x - xhat."""

    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    e: np.ndarray
    y: np.ndarray
    z: np.ndarray | None
    w: np.ndarray
    metrics: dict


def gain_from(P, G):
    """Observer gain from the certificate pair: solves P L = G."""
    P = np.asarray(P, dtype=float)
    G = np.asarray(G, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ObserverError("P must be square")
    if np.max(np.abs(P - P.T)) > 1e-10 * (1.0 + np.max(np.abs(P))):
        raise ObserverError("P must be symmetric")
    try:
        cf = scipy.linalg.cho_factor(P)
    except np.linalg.LinAlgError as err:
        raise ObserverError("P is not positive definite") from err
    L = scipy.linalg.cho_solve(cf, G)
    residual = np.max(np.abs(P @ L - G)) / (1.0 + np.max(np.abs(G)))
    if residual > 1e-12:
        raise ObserverError(f"gain solve residual {residual:.3e} too large")
    return L


def _conflict_note(q: QSpec, gamma_d: float) -> str | None:
    # the cap block needs P below psi1 * I while the decrease block needs
    # P above Q, so psi1 <= lambda_min(Q) is an analytic dead end
    cap = synth.psi1(q, gamma_d)
    if cap <= q.lambda_min:
        return (f"cap level psi1 = {cap:.6g} does not exceed "
                f"lambda_min(Q) = {q.lambda_min:.6g}; no admissible P exists")
    return None


def design(m: model.DiscreteModel, q: QSpec, theorem: int,
           mode: H8Mode | str = H8Mode.FAITHFUL, sequential: bool = False,
           settings: SolverSettings | None = None,
           bracket: tuple | None = None, tol: float | None = None) -> DesignResult:
    """Assemble and solve the design problem for one theorem pipeline.

    theorem 1 checks feasibility at the model's own Lipschitz rate;
    theorem 2 maximizes the admissible rate (gamma_d_star = 1/xi*);
    theorem 4 minimizes the disturbance gain bound (mu_star = sqrt(zeta*)).
    With sequential=True the theorem-4 run first maximizes the rate and
    designs at that rate instead of the model's.
    """
    if theorem not in (1, 2, 4):
        raise ObserverError(f"theorem must be 1, 2, or 4, got {theorem!r}")
    if sequential and theorem != 4:
        raise ObserverError("sequential staging only applies to theorem 4")
    mode = H8Mode(mode)
    gamma_d_star = None
    mu_star = None
    used_mode = None

    if theorem == 1:
        problem = synth.build_thm1(m.A_d, m.C_d, q, m.gamma_d)
        rep = sdpcore.solve_feasibility(problem, settings)
        if rep.status == sdpcore.INFEASIBLE:
            note = _conflict_note(q, m.gamma_d)
            msg = "no certificate at the model's Lipschitz rate"
            if note:
                msg = f"{msg} ({note})"
            raise InfeasibleProblem(msg, rep)
        if rep.status != sdpcore.FEASIBLE:
            raise SolverFailure(f"solver stopped: {rep.diagnostics}", rep)
    elif theorem == 2:
        problem = synth.build_thm2(m.A_d, m.C_d, q)
        rep = sdpcore.minimize_scalar(problem, bracket=bracket, tol=tol,
                                      settings=settings)
        if rep.status == sdpcore.INFEASIBLE:
            raise InfeasibleProblem("rate maximization infeasible at the "
                                    "bracket's upper endpoint", rep)
        if rep.status != sdpcore.OBJECTIVE_OPTIMAL:
            raise SolverFailure(f"solver stopped: {rep.diagnostics}", rep)
        gamma_d_star = 1.0 / rep.objective_value
    else:
        if m.B_d is None or m.H is None:
            raise ObserverError("theorem 4 needs the disturbance map B_d "
                                "and the output weight H")
        gamma_d = m.gamma_d
        if sequential:
            stage = design(m, q, 2, settings=settings)
            gamma_d = stage.gamma_d_star
            gamma_d_star = gamma_d
        problem = synth.build_thm4(m.A_d, m.C_d, m.B_d, m.H, q, gamma_d, mode)
        rep = sdpcore.minimize_scalar(problem, bracket=bracket, tol=tol,
                                      settings=settings)
        if rep.status == sdpcore.INFEASIBLE:
            raise InfeasibleProblem(
                f"gain-bound problem infeasible over bracket {rep.bracket} "
                f"in mode '{mode.value}'", rep)
        if rep.status != sdpcore.OBJECTIVE_OPTIMAL:
            raise SolverFailure(f"solver stopped: {rep.diagnostics}", rep)
        mu_star = float(np.sqrt(rep.objective_value))
        used_mode = mode

    P = np.asarray(rep.assignment["P"])
    G = np.asarray(rep.assignment["G"])
    L = gain_from(P, G)
    radius = float(np.max(np.abs(np.linalg.eigvals(m.A_d - L @ m.C_d))))
    if radius >= 1.0:
        raise SolverFailure(
            f"certified solution yields closed-loop radius {radius:.6f}", rep)
    residuals = sdpcore.check_solution(problem, rep.assignment)
    return DesignResult(
        L=L, P=P, G=G,
        epsilon=float(rep.assignment["eps"]),
        theorem=theorem,
        Q_used=q,
        residuals=residuals,
        closed_loop_radius=radius,
        gamma_d_star=gamma_d_star,
        mu_star=mu_star,
        mode=used_mode,
        report=rep,
    )


def settling_index(e, ratio=0.01, floor=0.0):
    """First index after which the error norm stays at or below
    max(ratio * initial norm, floor); None if it never does."""
    norms = np.linalg.norm(np.asarray(e, dtype=float), axis=1)
    target = max(ratio * norms[0], floor)
    above = np.nonzero(norms > target)[0]
    if above.size == 0:
        return 0
    k = int(above[-1]) + 1
    return k if k < norms.shape[0] else None


def _finish_metrics(e, z, w):
    metrics = {
        "final_error_norm": float(np.linalg.norm(e[-1])),
        "settling_index": settling_index(e),
        "empirical_gain": None,
    }
    if z is not None and w.size and float(np.sum(w * w)) > 0.0:
        metrics["empirical_gain"] = float(
            np.sqrt(np.sum(z * z) / np.sum(w * w)))
    return metrics


def simulate_discrete(m: model.DiscreteModel, L, x0, xhat0,
                      u_seq=None, w_seq=None, steps=None) -> SimulationRun:
    """Plant and observer recursions, evaluated exactly.

    x(k+1)    = A_d x + F(x,u) + B_d w
    xhat(k+1) = A_d xhat + F(xhat,u) + L (y - C_d xhat)
    """
    L = np.asarray(L, dtype=float).reshape(m.n, m.p)
    x = np.asarray(x0, dtype=float).reshape(m.n)
    xh = np.asarray(xhat0, dtype=float).reshape(m.n)
    if steps is None:
        if w_seq is not None:
            steps = len(w_seq)
        elif u_seq is not None:
            steps = len(u_seq)
        else:
            raise ObserverError("steps required when no sequences are given")
    if steps < 1:
        raise ObserverError("steps must be at least 1")
    if w_seq is not None and len(w_seq) < steps:
        raise ObserverError("disturbance sequence shorter than the run")
    if u_seq is not None and len(u_seq) < steps:
        raise ObserverError("input sequence shorter than the run")

    qdim = m.B_d.shape[1] if m.B_d is not None else 0
    w_arr = np.zeros((steps, qdim))
    if w_seq is not None and qdim:
        w_arr = np.asarray(w_seq, dtype=float).reshape(steps, qdim).copy()

    xs = np.empty((steps + 1, m.n))
    xhs = np.empty((steps + 1, m.n))
    xs[0], xhs[0] = x, xh
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            uk = None if u_seq is None else np.asarray(u_seq[k], dtype=float)
            y = m.C_d @ x
            try:
                x = m.A_d @ x + m.apply_F(x, uk)
                xh = m.A_d @ xh + m.apply_F(xh, uk) + L @ (y - m.C_d @ xh)
            except expr.EvalDomainError as err:
                raise SimulationDivergence(k + 1) from err
            if qdim:
                x = x + m.B_d @ w_arr[k]
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xh))):
                raise SimulationDivergence(k + 1)
            xs[k + 1], xhs[k + 1] = x, xh

    e = xs - xhs
    y_traj = xs @ m.C_d.T
    z = None if m.H is None else e @ m.H.T
    dt = m.T if m.T > 0 else 1.0
    return SimulationRun(
        t=np.arange(steps + 1) * dt,
        x=xs, xhat=xhs, e=e, y=y_traj, z=z, w=w_arr,
        metrics=_finish_metrics(e, z, w_arr),
    )


def _check_derived(cont: model.ContinuousModel, disc: model.DiscreteModel):
    if disc.provenance not in ("euler", "taylor2"):
        raise ObserverError("sampled-data run needs a discretized model")
    T = disc.T
    n = cont.n
    expected = np.eye(n) + cont.A * T
    if disc.provenance == "taylor2":
        expected = expected + 0.5 * T * T * (cont.A @ cont.A)
    if not np.allclose(disc.A_d, expected, atol=1e-10):
        raise ObserverError("discrete model does not match the plant at "
                            "this sampling time")
    if not np.array_equal(disc.C_d, cont.C):
        raise ObserverError("output maps of the two models differ")


def simulate_sampled_data(cont: model.ContinuousModel,
                          disc: model.DiscreteModel, L, x0, xhat0,
                          steps: int, substeps: int = 20) -> SimulationRun:
    """Observer driven by samples of the continuously integrated plant.

    The plant evolves by high-order reference integration; the observer
    only sees y(kT) and runs the approximate discrete recursion.  The
    steady_state_error metric is the worst error norm over the last 20%
    of samples.
    """
    _check_derived(cont, disc)
    xs = model.reference_integrate(cont, x0, None, disc.T, substeps, steps)
    L = np.asarray(L, dtype=float).reshape(disc.n, disc.p)
    xh = np.asarray(xhat0, dtype=float).reshape(disc.n)
    xhs = np.empty((steps + 1, disc.n))
    xhs[0] = xh
    for k in range(steps):
        y = disc.C_d @ xs[k]
        try:
            xh = disc.A_d @ xh + disc.apply_F(xh) + L @ (y - disc.C_d @ xh)
        except expr.EvalDomainError as err:
            raise SimulationDivergence(k + 1) from err
        if not np.all(np.isfinite(xh)):
            raise SimulationDivergence(k + 1)
        xhs[k + 1] = xh

    e = xs - xhs
    z = None if disc.H is None else e @ disc.H.T
    w_arr = np.zeros((steps, 0))
    metrics = _finish_metrics(e, z, w_arr)
    tail = max(1, int(np.ceil(0.2 * (steps + 1))))
    metrics["steady_state_error"] = float(
        np.max(np.linalg.norm(e[-tail:], axis=1)))
    return SimulationRun(
        t=np.arange(steps + 1) * disc.T,
        x=xs, xhat=xhs, e=e, y=xs @ disc.C_d.T, z=z, w=w_arr,
        metrics=metrics,
    )


def empirical_l2_gain(run: SimulationRun) -> float:
    """Ratio of regulated-output energy to disturbance energy."""
    if run.z is None:
        raise ObserverError("run has no regulated output")
    w_energy = float(np.sum(run.w * run.w))
    if w_energy <= 0.0:
        raise ObserverError("disturbance energy is zero")
    return float(np.sqrt(np.sum(run.z * run.z) / w_energy))


def gaussian_disturbance(seed, sigma, length, dim):
    """Reproducible zero-mean normal samples from a counter-based
    generator, identical across platforms for a fixed seed."""
    if sigma < 0:
        raise ObserverError("sigma must be nonnegative")
    if sigma == 0:
        return np.zeros((length, dim))
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.normal(0.0, sigma, (length, dim))
