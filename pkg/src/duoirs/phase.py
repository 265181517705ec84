"""Per-IRS phase optimization: quadratic forms via Hadamard/diag identities,
a smoothed penalty for the QoS caps, conjugate gradient on the unit-modulus
manifold, and price bisection on the aggregate slack.

Each builder folds the theta-independent trace terms into per-user
thresholds so that x_l(theta) <= gamma_tilde_l reproduces the full
surrogate QoS condition; x_l(theta) + const_l equals the user's variable
trace terms exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import ChannelSet
from .rates import PhaseVector, PrecoderSet, SurrogateState

ARMIJO_DECREASE = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 60


def _theta_array(theta) -> np.ndarray:
    if isinstance(theta, PhaseVector):
        return theta.theta
    return np.ascontiguousarray(theta, dtype=complex)


@dataclass(frozen=True)
class PhaseQuadratics:
    """Stacked per-user quadratics: value_l = theta^H U_l theta
    + 2 Re(theta^H q_l); U_l Hermitian-symmetrized."""

    u_mat: np.ndarray       # (L, M, M)
    q_vec: np.ndarray       # (L, M)
    gamma_tilde: np.ndarray  # (L,) thresholds for x_l
    weights: np.ndarray     # (L,)
    const: np.ndarray       # (L,) theta-independent trace offsets

    def __post_init__(self):
        for arr in (self.u_mat, self.q_vec, self.gamma_tilde, self.weights, self.const):
            arr.setflags(write=False)

    @property
    def n_users(self) -> int:
        return self.u_mat.shape[0]

    @property
    def m(self) -> int:
        return self.u_mat.shape[1]

    def values(self, theta) -> np.ndarray:
        return kernels.quad_values(self.u_mat, self.q_vec, _theta_array(theta))

    def weighted_objective(self, theta) -> float:
        """sum_l w_l (x_l + const_l): the users' variable trace terms."""
        return float(self.weights @ (self.values(theta) + self.const))


def _diag_of_product(a, b) -> np.ndarray:
    # diag(A @ B) without forming the product
    return np.einsum("mk,km->m", a, b)


def build_quadratics_irs1(channels: ChannelSet, theta2, precoders: PrecoderSet,
                          state: SurrogateState) -> PhaseQuadratics:
    """Quadratics in theta1 with theta2 and the precoders fixed.

    The user-side links are divided by the state's noise scale, matching
    the normalized A blocks; the resulting values are scale-invariant.
    """
    t2 = _theta_array(theta2)
    if len(t2) != channels.f2.shape[0]:
        raise ValueError("theta2 length does not match IRS2 element count")
    f1, f2, f3 = channels.f1, channels.f2, channels.f3
    m1 = f1.shape[0]
    sig = state.noise_scale
    xi = precoders.gram_sum()
    f1xi = f1 @ xi
    j_mat = f1xi @ f1.conj().T  # F1 Xi F1^H, shared by all users
    jt = j_mat.T

    n_users = state.n_users
    u_all = np.empty((n_users, m1, m1), dtype=complex)
    q_all = np.empty((n_users, m1), dtype=complex)
    gam = np.empty(n_users)
    const = np.empty(n_users)
    for l in range(n_users):
        a12, a22 = state.a12[l], state.a22[l]
        w_l = precoders.w[l]
        ht2 = (channels.h[l] / sig) * t2[None, :]
        p = ht2 @ f2 + channels.g[l] / sig     # (H Th2 F2 + G), N_U x M1
        t_const = ht2 @ f3                     # H Th2 F3, N_U x N_TX
        u = (p.conj().T @ a22 @ p) * jt
        u_all[l] = 0.5 * (u + u.conj().T)
        q1 = _diag_of_product(f1 @ (w_l @ a12), p)
        q23 = _diag_of_product(f1xi @ t_const.conj().T, a22 @ p)
        q_all[l] = np.conj(q1 + q23)
        const[l] = (
            np.trace(a22 @ t_const @ xi @ t_const.conj().T).real
            + 2.0 * np.trace(a12 @ t_const @ w_l).real
        )
        gam[l] = state.gamma_tilde[l] - const[l]
    return PhaseQuadratics(
        u_mat=u_all, q_vec=q_all, gamma_tilde=gam,
        weights=np.asarray(state.weights, dtype=float).copy(), const=const,
    )


def build_quadratics_irs2(channels: ChannelSet, theta1, precoders: PrecoderSet,
                          state: SurrogateState) -> PhaseQuadratics:
    """Quadratics in theta2 with theta1 and the precoders fixed."""
    t1 = _theta_array(theta1)
    if len(t1) != channels.f1.shape[0]:
        raise ValueError("theta1 length does not match IRS1 element count")
    f1, f2, f3 = channels.f1, channels.f2, channels.f3
    m2 = f2.shape[0]
    sig = state.noise_scale
    xi = precoders.gram_sum()
    p2 = (f2 * t1[None, :]) @ f1 + f3          # F2 Th1 F1 + F3, M2 x N_TX
    p2xi = p2 @ xi
    j2t = (p2xi @ p2.conj().T).T

    n_users = state.n_users
    u_all = np.empty((n_users, m2, m2), dtype=complex)
    q_all = np.empty((n_users, m2), dtype=complex)
    gam = np.empty(n_users)
    const = np.empty(n_users)
    for l in range(n_users):
        a12, a22 = state.a12[l], state.a22[l]
        w_l = precoders.w[l]
        h_l = channels.h[l] / sig
        t_const = ((channels.g[l] / sig) * t1[None, :]) @ f1  # G Th1 F1, N_U x N_TX
        u = (h_l.conj().T @ a22 @ h_l) * j2t
        u_all[l] = 0.5 * (u + u.conj().T)
        q1 = _diag_of_product(p2 @ (w_l @ a12), h_l)
        q23 = _diag_of_product(p2xi @ (t_const.conj().T @ a22), h_l)
        q_all[l] = np.conj(q1 + q23)
        const[l] = (
            np.trace(a22 @ t_const @ xi @ t_const.conj().T).real
            + 2.0 * np.trace(a12 @ t_const @ w_l).real
        )
        gam[l] = state.gamma_tilde[l] - const[l]
    return PhaseQuadratics(
        u_mat=u_all, q_vec=q_all, gamma_tilde=gam,
        weights=np.asarray(state.weights, dtype=float).copy(), const=const,
    )


def penalized_objective(theta, quad: PhaseQuadratics, rho: float, mu: float) -> float:
    """sum_l w_l x_l + rho*(sum_l exp(mu*(x_l - gamma_l)) - L)."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if mu <= 0:
        raise ValueError("mu must be > 0")
    return kernels.penalized_value(
        quad.u_mat, quad.q_vec, quad.weights, quad.gamma_tilde,
        _theta_array(theta), rho, mu,
    )


def euclidean_grad(theta, quad: PhaseQuadratics, rho: float, mu: float) -> np.ndarray:
    """Gradient in the convention df = Re(grad^H dtheta):
    2 sum_l (w_l + rho*mu*e_l) (U_l theta + q_l)."""
    _, grad = kernels.penalized_value_grad(
        quad.u_mat, quad.q_vec, quad.weights, quad.gamma_tilde,
        _theta_array(theta), rho, mu,
    )
    return grad


def riemannian_grad(theta, egrad) -> np.ndarray:
    """Project onto the tangent space: egrad - Re(egrad o theta*) o theta."""
    t = _theta_array(theta)
    return egrad - np.real(egrad * t.conj()) * t


def vector_transport(d_old, theta_new) -> np.ndarray:
    """Map a tangent vector into the tangent space at theta_new."""
    t = _theta_array(theta_new)
    return d_old - np.real(d_old * t.conj()) * t


def retract(theta, step: float, direction):
    """Elementwise (theta + t d)/|theta + t d|; raises on a degenerate entry."""
    t = _theta_array(theta)
    cand = t + step * np.asarray(direction)
    mags = np.abs(cand)
    if np.any(mags < 1e-14):
        raise ValueError("degenerate retraction: |theta + t*d| ~ 0")
    out = cand / mags
    if isinstance(theta, PhaseVector):
        return PhaseVector(out)
    return out


@dataclass
class RmoTrace:
    objective: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    n_iter: int = 0
    status: str = "converged"  # "converged" | "max_iter" | "stalled"

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def rmo_minimize(quad: PhaseQuadratics, rho: float, theta0, mu: float,
                 eps_theta: float = 1e-6, max_iter: int = 500) -> tuple:
    """Conjugate gradient with Armijo backtracking, Polak-Ribiere mixing
    (old gradient transported), and periodic restarts. The objective trace
    is non-increasing; stops when the Riemannian gradient norm falls below
    eps_theta * max(1, initial norm).
    """
    theta = _theta_array(theta0).copy()
    m = len(theta)
    u, q, w, g_th = quad.u_mat, quad.q_vec, quad.weights, quad.gamma_tilde

    val, egrad = kernels.penalized_value_grad(u, q, w, g_th, theta, rho, mu)
    grad = riemannian_grad(theta, egrad)
    gg = float(np.real(grad.conj() @ grad))
    threshold = eps_theta * max(1.0, np.sqrt(gg))

    trace = RmoTrace()
    trace.objective.append(val)
    trace.grad_norms.append(np.sqrt(gg))
    direction = -grad
    step = 0.0

    for it in range(max_iter):
        if np.sqrt(gg) <= threshold:
            trace.status = "converged"
            break
        slope = float(np.real(grad.conj() @ direction))
        if slope >= 0.0:
            direction = -grad
            slope = -gg
        norm_d = float(np.linalg.norm(direction))
        if norm_d <= 0.0:
            trace.status = "converged"
            break
        # Initial trial: one O(1) move on the manifold the first time, then
        # 4x the previously accepted step (backtracking pulls it down).
        step = 1.0 / norm_d if step == 0.0 else 4.0 * step
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            f_new, theta_new, ok = kernels.retract_value(
                u, q, w, g_th, theta, direction, step, rho, mu
            )
            if ok and f_new <= val + ARMIJO_DECREASE * step * slope:
                accepted = True
                break
            step *= ARMIJO_SHRINK
        if not accepted:
            trace.status = "stalled"
            break
        # Greedy extension: keep doubling while the value still drops and
        # the sufficient-decrease condition holds at the larger step.
        for _ in range(25):
            f_try, theta_try, ok = kernels.retract_value(
                u, q, w, g_th, theta, direction, 2.0 * step, rho, mu
            )
            if ok and f_try < f_new and \
                    f_try <= val + ARMIJO_DECREASE * 2.0 * step * slope:
                step *= 2.0
                f_new, theta_new = f_try, theta_try
            else:
                break

        theta = theta_new
        val_new, egrad_new = kernels.penalized_value_grad(u, q, w, g_th, theta, rho, mu)
        grad_new = riemannian_grad(theta, egrad_new)
        gg_new = float(np.real(grad_new.conj() @ grad_new))

        if (it + 1) % m == 0:
            beta = 0.0
        else:
            transported = vector_transport(grad, theta)
            beta = float(np.real(grad_new.conj() @ (grad_new - transported))) / max(gg, 1e-300)
            beta = max(beta, 0.0)
        direction = -grad_new + beta * vector_transport(direction, theta)
        grad, gg, val = grad_new, gg_new, val_new
        trace.objective.append(val)
        trace.grad_norms.append(np.sqrt(gg))
        trace.n_iter = it + 1
    else:
        trace.status = "max_iter"

    return PhaseVector(theta), trace


def slackness_gamma(theta, quad: PhaseQuadratics) -> float:
    """gamma = sum_l (x_l - gamma_tilde_l): aggregate QoS slack."""
    return float(np.sum(quad.values(theta) - quad.gamma_tilde))


@dataclass
class PriceTrace:
    probes: list = field(default_factory=list)  # (rho, gamma) pairs in probe order
    rho_star: float = 0.0
    status: str = "converged"  # "converged" | "infeasible" | "t_max"
    outer_iterations: int = 0
    rmo_iterations: int = 0


def optimize_phases(quad: PhaseQuadratics, theta0, mu: float,
                    eps_theta: float = 1e-6, eps_rho: float = 1e-4,
                    t_max: int = 30, max_iter: int = 500,
                    rho_hi_init: float = 1.0, max_doublings: int = 60) -> tuple:
    """Price-bisection wrapper: solve at rho=0; if the aggregate slack is
    positive, bracket by doubling rho and bisect to width eps_rho, re-solving
    warm-started at each probe. Outer passes repeat until the penalized
    objective stabilizes or t_max."""
    theta = _theta_array(theta0).copy()
    trace = PriceTrace()

    def _solve(rho, start):
        pv, rt = rmo_minimize(quad, rho, start, mu, eps_theta=eps_theta,
                              max_iter=max_iter)
        trace.rmo_iterations += rt.n_iter
        return pv.theta

    for outer in range(t_max):
        trace.outer_iterations = outer + 1
        theta_prev = theta
        theta_zero = _solve(0.0, theta)
        gamma0 = slackness_gamma(theta_zero, quad)
        trace.probes.append((0.0, gamma0))
        if gamma0 <= 0.0:
            rho_star = 0.0
            theta = theta_zero
        else:
            rho_lo, rho_hi = 0.0, rho_hi_init
            probe_theta = theta_zero
            bracketed = False
            for _ in range(max_doublings):
                probe_theta = _solve(rho_hi, probe_theta)
                gam = slackness_gamma(probe_theta, quad)
                trace.probes.append((rho_hi, gam))
                if gam < 0.0:
                    bracketed = True
                    break
                rho_lo, rho_hi = rho_hi, 2.0 * rho_hi
            if not bracketed:
                trace.status = "infeasible"
                trace.rho_star = rho_hi
                return PhaseVector(probe_theta), trace
            while abs(rho_hi - rho_lo) >= eps_rho:
                rho_mid = 0.5 * (rho_lo + rho_hi)
                probe_theta = _solve(rho_mid, probe_theta)
                gam = slackness_gamma(probe_theta, quad)
                trace.probes.append((rho_mid, gam))
                if gam >= 0.0:
                    rho_lo = rho_mid
                else:
                    rho_hi = rho_mid
            rho_star = 0.5 * (rho_lo + rho_hi)
            theta = _solve(rho_star, probe_theta)
        trace.rho_star = rho_star

        f_prev = kernels.penalized_value(
            quad.u_mat, quad.q_vec, quad.weights, quad.gamma_tilde,
            theta_prev, rho_star, mu,
        )
        f_new = kernels.penalized_value(
            quad.u_mat, quad.q_vec, quad.weights, quad.gamma_tilde,
            theta, rho_star, mu,
        )
        if abs(f_new - f_prev) <= eps_theta * max(1e-12, abs(f_prev)):
            trace.status = "converged"
            break
    else:
        trace.status = "t_max"

    return PhaseVector(theta), trace


def project_discrete(theta, q_phi: int) -> PhaseVector:
    """Nearest grid phase per element (exact ties go to the smaller index)."""
    if q_phi < 1:
        raise ValueError("q_phi must be >= 1")
    t = _theta_array(theta)
    n_levels = 1 << q_phi
    delta = 2.0 * np.pi / n_levels
    phases = np.mod(np.angle(t), 2.0 * np.pi)
    idx = np.ceil(phases / delta - 0.5).astype(int) % n_levels
    return PhaseVector(np.exp(1j * delta * idx), mode="discrete", q_phi=q_phi)
