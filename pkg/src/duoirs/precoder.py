"""Digital-precoder subproblem for fixed phases: per-user convex quadratics
under a shared power budget and per-user QoS caps.

    min_w  sum_l w_l (w_l^H V_l w_l + 2 Re v_l^H w_l)
    s.t.   sum_l ||w_l||^2 <= ps,
           w_l^H V_l w_l + 2 Re v_l^H w_l <= gamma_tilde_l.

Stationarity gives w_l = -(mu_l I + V_l)^{-1} v_l with mu_l =
u0/(u_l + w_l); u0 is found by bisection on the monotone power curve and
the QoS multipliers by projected subgradient ascent with a damped-Newton
polish on the active set. Every output carries duals so KKT residuals are
checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rates import PrecoderSet, SurrogateState

_TINY = 1e-300


@dataclass(frozen=True)
class QcqpProblem:
    v_mat: tuple          # per user, Hermitian PSD (n_tx*n_d) x (n_tx*n_d)
    v_vec: tuple          # per user, length n_tx*n_d
    gamma_tilde: np.ndarray
    weights: np.ndarray
    ps: float
    shapes: tuple         # per user, (n_tx, n_d)

    @property
    def n_users(self) -> int:
        return len(self.v_mat)

    def quad_terms(self, l: int, w_flat: np.ndarray):
        quad = float(np.real(w_flat.conj() @ (self.v_mat[l] @ w_flat)))
        lin = 2.0 * float(np.real(self.v_vec[l].conj() @ w_flat))
        return quad, lin

    def constraint_value(self, l: int, w_flat: np.ndarray) -> float:
        quad, lin = self.quad_terms(l, w_flat)
        return quad + lin

    def objective(self, w_flats) -> float:
        return float(sum(
            self.weights[l] * self.constraint_value(l, w_flats[l])
            for l in range(self.n_users)
        ))


@dataclass(frozen=True)
class DualState:
    u0: float
    u: np.ndarray

    def __post_init__(self):
        if self.u0 < 0 or np.any(self.u < 0):
            raise ValueError("dual variables must be nonnegative")


@dataclass(frozen=True)
class QcqpSolution:
    precoders: PrecoderSet
    duals: DualState
    status: str            # "converged" | "infeasible" | "max_iter"
    objective: float
    dual_iterations: int
    w_flats: tuple
    jitter_used: bool = False


def build_qcqp(state: SurrogateState, hbars=None, ps: float = 1.0) -> QcqpProblem:
    """Assemble V_l = I kron (Hbar^H A22 Hbar) and v_l = vec(Hbar^H A12^H)
    so that w^H V_l w + 2 Re v_l^H w reproduces the per-user trace terms.

    With no explicit hbars the state's (noise-normalized) expansion channels
    are used; raw effective channels may be passed and are normalized here.
    """
    if hbars is None:
        hbars = state.hbar_tilde
    else:
        hbars = [h / state.noise_scale for h in hbars]
    v_mats, v_vecs, shapes = [], [], []
    for l in range(state.n_users):
        hbar = hbars[l]
        n_d = state.a12[l].shape[0]
        n_tx = hbar.shape[1]
        core = hbar.conj().T @ state.a22[l] @ hbar
        core = 0.5 * (core + core.conj().T)
        v_mats.append(np.kron(np.eye(n_d), core))
        v_vecs.append((hbar.conj().T @ state.a12[l].conj().T).flatten(order="F"))
        shapes.append((n_tx, n_d))
    return QcqpProblem(
        v_mat=tuple(v_mats),
        v_vec=tuple(v_vecs),
        gamma_tilde=state.gamma_tilde.copy(),
        weights=np.asarray(state.weights, dtype=float).copy(),
        ps=float(ps),
        shapes=tuple(shapes),
    )


class _EigCache:
    """Spectral form of each V_l; all dual iterations reuse it.

    Numerical null-space leakage of v (components on eigenvalues that are
    zero up to roundoff) is zeroed so the power curve stays finite exactly
    when the true minimizer is finite.
    """

    def __init__(self, problem: QcqpProblem):
        self.lam = []
        self.qmat = []
        self.vt = []
        self.jitter_used = False
        for l in range(problem.n_users):
            lam, qm = np.linalg.eigh(problem.v_mat[l])
            scale = max(1.0, float(lam[-1]))
            if lam[0] < -1e-8 * scale:
                raise ValueError("V_l is not PSD within tolerance")
            if np.any(lam < 0):
                self.jitter_used = True
                lam = np.maximum(lam, 0.0)
            vt = qm.conj().T @ problem.v_vec[l]
            vnorm = float(np.linalg.norm(vt))
            null = lam <= 1e-13 * float(lam[-1]) if len(lam) else np.array([], bool)
            leak = null & (np.abs(vt) <= 1e-8 * vnorm)
            vt = np.where(leak, 0.0, vt)
            self.lam.append(lam)
            self.qmat.append(qm)
            self.vt.append(vt)

    def power(self, l: int, mu: float) -> float:
        denom = self.lam[l] + mu
        a2 = np.abs(self.vt[l]) ** 2
        live = a2 > 0
        if np.any(live & (denom <= np.sqrt(_TINY))):
            return np.inf
        denom = np.where(live, denom, 1.0)
        return float(np.sum(a2[live] / denom[live] ** 2))

    def qval(self, l: int, mu: float) -> float:
        denom = self.lam[l] + mu
        a2 = np.abs(self.vt[l]) ** 2
        live = a2 > 0
        if not np.any(live):
            return 0.0
        if np.any(live & (denom <= np.sqrt(_TINY))):
            return -np.inf
        d = denom[live]
        a = a2[live]
        return float(np.sum(self.lam[l][live] * a / d**2) - 2.0 * np.sum(a / d))

    def w_full(self, l: int, mu: float) -> np.ndarray:
        denom = self.lam[l] + mu
        a2 = np.abs(self.vt[l]) ** 2
        live = a2 > 0
        denom = np.where(live, denom, 1.0)
        wt = np.where(live, -self.vt[l] / denom, 0.0)
        return self.qmat[l] @ wt

    def unconstrained_finite(self, l: int) -> bool:
        """True when mu=0 gives a finite minimizer (v has no null-space part)."""
        lam = self.lam[l]
        a2 = np.abs(self.vt[l]) ** 2
        null = lam <= 1e-13 * float(lam[-1]) if len(lam) else np.array([], bool)
        return not bool(np.any(null & (a2 > 0)))


def _mus(u0: float, u: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return u0 / (u + weights)


def _total_power(cache: _EigCache, mus) -> float:
    return float(sum(cache.power(l, mus[l]) for l in range(len(mus))))


def _solve_u0(cache: _EigCache, u: np.ndarray, weights: np.ndarray, ps: float):
    """Smallest u0 >= 0 with total power <= ps (bisection on the monotone
    power curve; exact at the budget when the constraint binds)."""
    finite0 = all(cache.unconstrained_finite(l) for l in range(len(weights)))
    if finite0 and _total_power(cache, _mus(0.0, u, weights)) <= ps:
        return 0.0
    hi = 1.0
    for _ in range(300):
        if _total_power(cache, _mus(hi, u, weights)) <= ps:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _total_power(cache, _mus(mid, u, weights)) > ps:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return hi


def _slacks(cache: _EigCache, problem: QcqpProblem, u0: float, u: np.ndarray):
    mus = _mus(u0, u, problem.weights)
    return np.array([
        cache.qval(l, mus[l]) - problem.gamma_tilde[l]
        for l in range(problem.n_users)
    ])


def solve_qcqp(problem: QcqpProblem, tol: float = 1e-6,
               max_dual_iter: int = 500) -> QcqpSolution:
    cache = _EigCache(problem)
    weights = problem.weights
    n_users = problem.n_users
    qos_scale = np.maximum(1.0, np.abs(problem.gamma_tilde))

    u = np.zeros(n_users)
    u0 = _solve_u0(cache, u, weights, problem.ps)
    slack = _slacks(cache, problem, u0, u)
    iterations = 0
    status = "converged"

    if np.any(slack > tol * qos_scale):
        if u0 == 0.0:
            # Power is slack, so each w_l is the global minimizer of its own
            # quadratic; a violated cap can never be met.
            status = "infeasible"
        else:
            status = "max_iter"
            # Projected subgradient burn-in to locate the active set.
            for i in range(min(30, max_dual_iter)):
                iterations += 1
                step = 1.0 / (1.0 + i)
                u = np.maximum(0.0, u + step * slack / qos_scale)
                u0 = _solve_u0(cache, u, weights, problem.ps)
                slack = _slacks(cache, problem, u0, u)
                feasible = np.all(slack <= tol * qos_scale)
                comp = np.all(u * np.abs(slack) <= tol * qos_scale * (1.0 + u))
                if feasible and comp:
                    status = "converged"
                    break
            if status != "converged":
                u, u0, slack, ok, extra = _newton_polish(
                    cache, problem, u, tol, max_dual_iter - iterations
                )
                iterations += extra
                status = "converged" if ok else "max_iter"
            if status == "max_iter" and np.any(slack > 1e-3 * qos_scale) and \
                    not _jointly_attainable(cache, problem, tol):
                status = "infeasible"

    mus = _mus(u0, u, weights)
    w_flats = tuple(cache.w_full(l, mus[l]) for l in range(n_users))
    mats = tuple(
        w_flats[l].reshape(problem.shapes[l], order="F") for l in range(n_users)
    )
    return QcqpSolution(
        precoders=PrecoderSet(mats),
        duals=DualState(u0=u0, u=u),
        status=status,
        objective=problem.objective(w_flats),
        dual_iterations=iterations,
        w_flats=w_flats,
        jitter_used=cache.jitter_used,
    )


def _newton_polish(cache, problem, u, tol, budget):
    """Damped Newton on {slack_l = 0, l active} with u0 re-solved inside.

    The system has at most n_users unknowns; the Jacobian comes from finite
    differences. Returns (u, u0, slack, converged, iterations_used).
    """
    weights = problem.weights
    qos_scale = np.maximum(1.0, np.abs(problem.gamma_tilde))
    u = u.copy()
    used = 0

    def resolve(u_try):
        u0_try = _solve_u0(cache, u_try, weights, problem.ps)
        return u0_try, _slacks(cache, problem, u0_try, u_try)

    u0, slack = resolve(u)
    for _ in range(60):
        if used >= max(budget, 1):
            break
        used += 1
        active = np.where((u > 0) | (slack > -tol * qos_scale))[0]
        if len(active) == 0:
            break
        f = slack[active]
        if np.all(np.abs(f) <= tol * qos_scale[active]) and \
                np.all(slack <= tol * qos_scale):
            return u, u0, slack, True, used
        jac = np.empty((len(active), len(active)))
        for j, idx in enumerate(active):
            h = max(1e-7, 1e-7 * abs(u[idx]))
            u_try = u.copy()
            u_try[idx] += h
            _, s_try = resolve(u_try)
            jac[:, j] = (s_try[active] - f) / h
        try:
            delta = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            delta = -np.linalg.pinv(jac) @ f
        alpha = 1.0
        base = float(np.max(np.abs(f / qos_scale[active])))
        for _ in range(30):
            u_try = u.copy()
            u_try[active] = np.maximum(0.0, u[active] + alpha * delta)
            u0_try, s_try = resolve(u_try)
            if float(np.max(np.abs(s_try[active] / qos_scale[active]))) < base or \
                    np.all(s_try <= tol * qos_scale):
                u, u0, slack = u_try, u0_try, s_try
                break
            alpha *= 0.5
        else:
            break
    feasible = np.all(slack <= tol * qos_scale)
    comp = np.all(u * np.abs(slack) <= tol * qos_scale * (1.0 + u))
    return u, u0, slack, bool(feasible and comp), used


def _jointly_attainable(cache, problem, tol):
    """Necessary screen: can every cap be met with the full budget available
    to that user alone?"""
    for l in range(problem.n_users):
        lo, hi = 0.0, 1.0
        if cache.unconstrained_finite(l) and cache.power(l, 0.0) <= problem.ps:
            qmin = cache.qval(l, 0.0)
        else:
            for _ in range(300):
                if cache.power(l, hi) <= problem.ps:
                    break
                hi *= 2.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if cache.power(l, mid) > problem.ps:
                    lo = mid
                else:
                    hi = mid
            qmin = cache.qval(l, hi)
        if qmin > problem.gamma_tilde[l] + tol * max(1.0, abs(problem.gamma_tilde[l])):
            return False
    return True


def kkt_residuals(problem: QcqpProblem, solution: QcqpSolution) -> dict:
    """Normalized first-order residuals at the returned point."""
    u0, u = solution.duals.u0, solution.duals.u
    stat = []
    qos_feas = []
    qos_comp = []
    total_power = 0.0
    for l in range(problem.n_users):
        w = solution.w_flats[l]
        coef = u[l] + problem.weights[l]
        grad = (u0 * w + coef * (problem.v_mat[l] @ w) + coef * problem.v_vec[l])
        lam_max = float(np.linalg.norm(problem.v_mat[l], 2))
        scale = (u0 + coef * (1.0 + lam_max)) * max(1.0, float(np.linalg.norm(w))) \
            + coef * float(np.linalg.norm(problem.v_vec[l])) + 1e-30
        stat.append(float(np.linalg.norm(grad)) / scale)
        s_l = problem.constraint_value(l, w) - problem.gamma_tilde[l]
        g_scale = max(1.0, abs(problem.gamma_tilde[l]))
        qos_feas.append(max(0.0, s_l) / g_scale)
        qos_comp.append(u[l] * abs(s_l) / (g_scale * (1.0 + u[l])))
        total_power += float(np.linalg.norm(w) ** 2)
    p_scale = max(1.0, problem.ps)
    power_feas = max(0.0, total_power - problem.ps) / p_scale
    power_comp = u0 * abs(total_power - problem.ps) / (p_scale * (1.0 + u0))
    return {
        "stationarity": float(np.max(stat)),
        "power_feasibility": power_feas,
        "power_comp_slack": power_comp,
        "qos_feasibility": float(np.max(qos_feas)),
        "qos_comp_slack": float(np.max(qos_comp)),
        "max": float(max(np.max(stat), power_feas, power_comp,
                         np.max(qos_feas), np.max(qos_comp))),
    }
