"""Independent re-verification of finished designs.

Every quantity here is recomputed from the certificate matrices with
eigenvalue/SVD routines distinct from the solver's internals, so a pass
is a genuine cross-check rather than an echo of the solve.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import expr, model, observer, synth
from .observer import DesignResult, InfeasibleProblem
from .synth import H8Mode, QSpec


class VerifyError(ValueError):
    pass


@dataclass(frozen=True)
class CertificateReport:
    """Recomputed sufficient-condition margins for one design.

    passed uses the Lyapunov decrease, the cap on lambda_max(P), and the
    spectral radius; cond17_value is the underlying scalar sufficient
    condition, logged for reference but deliberately not gating (the
    inequality chain behind it is more conservative than the solved
    conditions, so it can fail for designs that are in fact certified).
    """

    lyapunov_margin: float
    psi_margin: float
    cond17_value: float
    spectral_radius: float
    passed: bool
    robustness_margin: float | None = None


@dataclass(frozen=True)
class StressReport:
    trials: int
    successes: int
    fraction: float
    delta_lipschitz: float
    margin: float
    passed: bool


@dataclass(frozen=True)
class SweepRow:
    T: float
    gamma_d_star: float | None
    steady_state_error: float | None
    status: str


def _sym_eigs(M):
    return scipy.linalg.eigh(0.5 * (M + M.T), eigvals_only=True, driver="ev")


def _certified_rate(m: model.DiscreteModel, d: DesignResult) -> float:
    return d.gamma_d_star if d.gamma_d_star is not None else m.gamma_d


def _cap_level(m: model.DiscreteModel, d: DesignResult, rate: float) -> float:
    if d.theorem == 4 and d.mode is H8Mode.TIGHTENED:
        return float(d.report.assignment["pbar"])
    if rate <= 0.0:
        # the cap degenerates: any lambda_max(P) is admissible
        return np.inf
    if d.theorem == 2:
        return synth.psi2(d.Q_used, 1.0 / rate)
    return synth.psi1(d.Q_used, rate)


def verify_certificate(m: model.DiscreteModel, d: DesignResult,
                       gamma_d: float | None = None) -> CertificateReport:
    """Recompute the design's sufficient conditions from P, L, Q.

    gamma_d overrides the rate used in the scalar condition and the cap
    (the design's certified rate by default).
    """
    rate = gamma_d if gamma_d is not None else _certified_rate(m, d)
    M = m.A_d - d.L @ m.C_d
    Q = d.Q_used.Q
    P = d.P

    decrease = -(M.T @ P @ M - P + Q)
    lyapunov_margin = float(_sym_eigs(decrease)[0])

    lam_p_max = float(_sym_eigs(P)[-1])
    psi_margin = float(_cap_level(m, d, rate) - lam_p_max)

    sigma_bar = float(scipy.linalg.svdvals(M)[0])
    lam_q_min = float(_sym_eigs(Q)[0])
    cond17_value = -lam_q_min + lam_p_max * (2.0 * rate * sigma_bar + rate * rate)

    spectral_radius = float(np.max(np.abs(np.linalg.eigvals(M))))

    margin = None
    if d.gamma_d_star is not None and d.gamma_d_star >= m.gamma_d:
        margin = robustness_margin(d.gamma_d_star, m.gamma_d)

    passed = (lyapunov_margin > 0.0 and psi_margin > 0.0
              and spectral_radius < 1.0)
    return CertificateReport(
        lyapunov_margin=lyapunov_margin,
        psi_margin=psi_margin,
        cond17_value=cond17_value,
        spectral_radius=spectral_radius,
        passed=passed,
        robustness_margin=margin,
    )


def robustness_margin(gamma_star: float, gamma_actual: float) -> float:
    """Admissible additional Lipschitz rate: the plain difference."""
    if gamma_actual < 0:
        raise VerifyError("gamma_actual must be nonnegative")
    if gamma_star < gamma_actual:
        raise VerifyError(
            f"no guaranteed margin: gamma_star = {gamma_star:.6g} is below "
            f"gamma_actual = {gamma_actual:.6g}")
    return gamma_star - gamma_actual


def uncertainty_stress_test(m: model.DiscreteModel, d: DesignResult,
                            delta_f: expr.ExprVector, trials: int,
                            steps: int = 120, seed: int = 0) -> StressReport:
    """Simulate the design against an additive perturbation of the
    nonlinearity whose Lipschitz constant fits inside the certified
    margin.  Each trial starts from a random point of the region with
    the estimate at the origin; success means the Lyapunov form e'Pe
    decreases at every in-region step and the final error is below 1%
    of the initial one."""
    if m.region is None:
        raise VerifyError("model has no Lipschitz region")
    if trials < 1:
        raise VerifyError("trials must be at least 1")
    margin = robustness_margin(_certified_rate(m, d), m.gamma_d)
    delta_rate = model.estimate_lipschitz(delta_f, m.region)
    if delta_rate > margin * (1.0 + 1e-9):
        raise VerifyError(
            f"perturbation rate {delta_rate:.6g} exceeds the certified "
            f"margin {margin:.6g}; behaviour outside it is not guaranteed")

    rng = np.random.Generator(np.random.Philox(seed))
    P = d.P
    L = d.L
    successes = 0
    for x0 in m.region.sample(rng, trials):
        x = x0.copy()
        xh = np.zeros(m.n)
        e0 = np.linalg.norm(x - xh)
        v_prev = float((x - xh) @ P @ (x - xh))
        ok = True
        for _ in range(steps):
            y = m.C_d @ x
            fx = m.apply_F(x) + expr.evaluate(delta_f, x)
            fh = m.apply_F(xh) + expr.evaluate(delta_f, xh)
            inside = m.region.contains(x)
            x = m.A_d @ x + fx
            xh = m.A_d @ xh + fh + L @ (y - m.C_d @ xh)
            e = x - xh
            v = float(e @ P @ e)
            if inside and v_prev > 1e-24 and not v < v_prev:
                ok = False
                break
            v_prev = v
        if ok and np.linalg.norm(x - xh) < 0.01 * e0:
            successes += 1
    fraction = successes / trials
    return StressReport(
        trials=trials, successes=successes, fraction=fraction,
        delta_lipschitz=float(delta_rate), margin=float(margin),
        passed=successes == trials,
    )


def practical_convergence_sweep(cont: model.ContinuousModel, T_list,
                                design_options: dict | None = None):
    """Redesign and re-simulate across sampling times.

    For each T the plant is forward-difference discretized, the weight
    is Q = T I, the rate bound is maximized, and the sampled-data error
    against the reference integration is recorded.  Infeasible rows are
    kept (status only), the sweep continues.
    """
    T_list = tuple(float(T) for T in T_list)
    if not T_list or any(T <= 0 for T in T_list):
        raise VerifyError("T_list must contain positive sampling times")
    if any(b >= a for a, b in zip(T_list, T_list[1:])):
        raise VerifyError("T_list must be strictly decreasing")
    opts = {
        "x0": None, "xhat0": None,
        "horizon": 10.0, "substeps": 20, "settings": None,
    }
    if design_options:
        unknown = set(design_options) - set(opts)
        if unknown:
            raise VerifyError(f"unknown sweep options: {sorted(unknown)}")
        opts.update(design_options)
    n = cont.n
    x0 = np.zeros(n) if opts["x0"] is None else np.asarray(opts["x0"], float)
    xhat0 = (np.zeros(n) if opts["xhat0"] is None
             else np.asarray(opts["xhat0"], float))

    rows = []
    for T in T_list:
        disc = model.euler_discretize(cont, T)
        q = QSpec(T * np.eye(n))
        try:
            d = observer.design(disc, q, 2, settings=opts["settings"])
        except InfeasibleProblem:
            rows.append(SweepRow(T, None, None, "infeasible"))
            continue
        steps = max(1, int(round(opts["horizon"] / T)))
        run = observer.simulate_sampled_data(
            cont, disc, d.L, x0, xhat0, steps, substeps=opts["substeps"])
        rows.append(SweepRow(
            T, d.gamma_d_star, run.metrics["steady_state_error"], "ok"))
    return tuple(rows)
