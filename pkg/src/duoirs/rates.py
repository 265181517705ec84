"""Effective channels, MMSE rates, the weighted-sum-rate objective, and the
quadratic minorant frozen at an expansion point.

Conventions: all rates in nats. For each user the minorant is
    bound_l(W, th1, th2) = c_tilde_l - Tr(A_l B_l)  <=  R_l,
with equality when (W, th1, th2) equals the expansion point. The QoS
threshold is folded into gamma_tilde so that
    surrogate QoS holds  <=>  T_l <= gamma_tilde_l,
where T_l = 2 Re Tr(A12 Hbar W_l) + Tr(A22 Hbar Xi Hbar^H) collects the
variable trace terms and Xi sums W_j W_j^H over all users.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import ChannelSet


def _herm(a):
    return a.conj().T


@dataclass(frozen=True)
class PhaseVector:
    """Unit-modulus reflection coefficients of one IRS (diag of Theta)."""

    theta: np.ndarray
    mode: str = "continuous"  # "continuous" | "discrete"
    q_phi: int | None = None

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=complex)
        object.__setattr__(self, "theta", theta)
        if np.max(np.abs(np.abs(theta) - 1.0)) > 1e-12:
            raise ValueError("phase entries must have unit modulus")
        if self.mode == "discrete":
            if not self.q_phi or self.q_phi < 1:
                raise ValueError("discrete mode needs q_phi >= 1")
            step = 2.0 * np.pi / (1 << self.q_phi)
            phases = np.mod(np.angle(theta), 2.0 * np.pi)
            offs = np.abs(phases / step - np.round(phases / step))
            if np.max(np.minimum(offs, 1.0 - offs)) * step > 1e-12:
                raise ValueError("discrete phases must lie on the q_phi grid")
        elif self.mode != "continuous":
            raise ValueError(f"unknown mode {self.mode!r}")
        theta.setflags(write=False)

    def __len__(self):
        return len(self.theta)

    @staticmethod
    def from_phases(phases, mode="continuous", q_phi=None) -> "PhaseVector":
        return PhaseVector(np.exp(1j * np.asarray(phases, dtype=float)), mode, q_phi)

    @staticmethod
    def ones(m: int) -> "PhaseVector":
        return PhaseVector(np.ones(m, dtype=complex))

    @staticmethod
    def random(m: int, rng: np.random.Generator) -> "PhaseVector":
        return PhaseVector.from_phases(rng.uniform(0.0, 2.0 * np.pi, size=m))


@dataclass(frozen=True)
class PrecoderSet:
    """Per-user digital precoders W_l (N_TX x N_d,l)."""

    w: tuple

    def __post_init__(self):
        mats = tuple(np.ascontiguousarray(m, dtype=complex) for m in self.w)
        object.__setattr__(self, "w", mats)
        for m in mats:
            m.setflags(write=False)

    def __len__(self):
        return len(self.w)

    def __getitem__(self, l):
        return self.w[l]

    def total_power(self) -> float:
        return float(sum(np.sum(np.abs(m) ** 2) for m in self.w))

    def check_power(self, ps: float, tol: float = 1e-9) -> None:
        if self.total_power() > ps + tol:
            raise ValueError(
                f"total precoder power {self.total_power():.6e} exceeds budget {ps:.6e}"
            )

    def gram_sum(self) -> np.ndarray:
        """Xi = sum_l W_l W_l^H."""
        n_tx = self.w[0].shape[0]
        xi = np.zeros((n_tx, n_tx), dtype=complex)
        for m in self.w:
            xi += m @ _herm(m)
        return xi

    @staticmethod
    def zeros(n_tx: int, n_streams, n_users: int) -> "PrecoderSet":
        if np.isscalar(n_streams):
            n_streams = [n_streams] * n_users
        return PrecoderSet(tuple(np.zeros((n_tx, nd), dtype=complex) for nd in n_streams))


def effective_channel(channels: ChannelSet, theta1, theta2, l: int) -> np.ndarray:
    """Hbar_l = H_l Th2 F2 Th1 F1 + G_l Th1 F1 + H_l Th2 F3."""
    t1 = theta1.theta if isinstance(theta1, PhaseVector) else np.asarray(theta1)
    t2 = theta2.theta if isinstance(theta2, PhaseVector) else np.asarray(theta2)
    if len(t1) != channels.f1.shape[0] or len(t2) != channels.f2.shape[0]:
        raise ValueError("phase-vector lengths do not match IRS element counts")
    h_l, g_l = channels.h[l], channels.g[l]
    ht2 = h_l * t2[None, :]  # H_l Theta2
    cascade = (ht2 @ channels.f2) * t1[None, :]  # H Th2 F2 Th1
    return cascade @ channels.f1 + (g_l * t1[None, :]) @ channels.f1 + ht2 @ channels.f3


def interference_cov(hbar_l, precoders: PrecoderSet, sigma2: float, l: int) -> np.ndarray:
    """C_l = Hbar_l (sum_{j != l} W_j W_j^H) Hbar_l^H + sigma2 I."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0 (C_l must be invertible)")
    n_u = hbar_l.shape[0]
    c = sigma2 * np.eye(n_u, dtype=complex)
    for j, w_j in enumerate(precoders.w):
        if j == l:
            continue
        hw = hbar_l @ w_j
        c += hw @ _herm(hw)
    return 0.5 * (c + _herm(c))


def mmse_decoder(hbar_l, precoders: PrecoderSet, sigma2: float, l: int) -> np.ndarray:
    """V_l = W_l^H Hbar^H (sum_j Hbar W_j W_j^H Hbar^H + sigma2 I)^{-1}."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    n_u = hbar_l.shape[0]
    total = sigma2 * np.eye(n_u, dtype=complex)
    for w_j in precoders.w:
        hw = hbar_l @ w_j
        total += hw @ _herm(hw)
    rhs = hbar_l @ precoders.w[l]
    return _herm(np.linalg.solve(0.5 * (total + _herm(total)), rhs))


def user_rate(hbar_l, precoders: PrecoderSet, sigma2: float, l: int) -> float:
    """R_l = ln det(I + W_l^H Hbar^H C_l^{-1} Hbar W_l), in nats."""
    c = interference_cov(hbar_l, precoders, sigma2, l)
    hw = hbar_l @ precoders.w[l]
    s = cho_solve(cho_factor(c, lower=True), hw)
    m = np.eye(hw.shape[1], dtype=complex) + _herm(hw) @ s
    sign, logdet = np.linalg.slogdet(0.5 * (m + _herm(m)))
    return float(logdet)


def all_rates(channels: ChannelSet, theta1, theta2, precoders, sigma2) -> np.ndarray:
    return np.array([
        user_rate(effective_channel(channels, theta1, theta2, l), precoders, sigma2, l)
        for l in range(channels.n_users)
    ])


def wsr(rates, weights) -> float:
    rates = np.asarray(rates, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if rates.shape != weights.shape:
        raise ValueError("rates and weights must have matching lengths")
    return float(weights @ rates)


@dataclass(frozen=True)
class SurrogateState:
    """Per-user minorant blocks frozen at an expansion point.

    Internally everything is noise-normalized: hbar_tilde holds Hbar/sigma,
    the covariance is Hbar Xi Hbar^H/sigma^2 + I, a12 carries a factor
    sigma and a22 a factor sigma^2 relative to the raw-blocks convention.
    Every downstream combination (trace terms, QCQP coefficients, phase
    quadratics, c_tilde, gamma_tilde, bounds) is invariant under this
    rescaling but stays well conditioned at physical noise floors.
    a22 is PSD; at the expansion point bound_l equals the true rate.
    """

    a11: tuple
    a12: tuple
    a22: tuple
    c_tilde: np.ndarray
    gamma_tilde: np.ndarray
    x_tilde: tuple
    y_tilde: tuple
    hbar_tilde: tuple
    c_cov_tilde: tuple
    b_tilde: tuple
    precoders_tilde: PrecoderSet
    theta1_tilde: PhaseVector
    theta2_tilde: PhaseVector
    sigma2: float
    noise_scale: float
    weights: np.ndarray
    gamma_nats: float

    def __post_init__(self):
        for group in (self.a11, self.a12, self.a22, self.x_tilde, self.y_tilde,
                      self.hbar_tilde, self.c_cov_tilde, self.b_tilde):
            for arr in group:
                arr.setflags(write=False)
        self.c_tilde.setflags(write=False)
        self.gamma_tilde.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_users(self) -> int:
        return len(self.a11)

    def const_offset(self, l: int) -> float:
        """Tr(A11) + sigma2 Tr(A22) in the raw convention; a22 already
        carries the sigma^2 factor here."""
        return float(np.trace(self.a11[l]).real + np.trace(self.a22[l]).real)


def build_surrogate(channels: ChannelSet, theta1: PhaseVector, theta2: PhaseVector,
                    precoders: PrecoderSet, sigma2: float, weights,
                    gamma_nats: float = 0.0) -> SurrogateState:
    """Freeze the minorant blocks at (precoders, theta1, theta2).

    A_l is computed from the projector form B^{-1} E (E^H B^{-1} E)^{-1}
    E^H B^{-1} on the noise-normalized B; its blocks coincide with
    (X, Y, Y^H X^{-1} Y) built from the normalized covariance.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    weights = np.asarray(weights, dtype=float)
    sig = np.sqrt(sigma2)
    n_users = channels.n_users
    a11, a12, a22 = [], [], []
    x_t, y_t, hbar_t, ccov_t, b_t = [], [], [], [], []
    c_tilde = np.empty(n_users)
    gamma_tilde = np.empty(n_users)
    for l in range(n_users):
        hbar = effective_channel(channels, theta1, theta2, l) / sig
        c_cov = interference_cov(hbar, precoders, 1.0, l)
        hw = hbar @ precoders.w[l]
        n_d = hw.shape[1]
        n_u = hw.shape[0]
        b = np.zeros((n_d + n_u, n_d + n_u), dtype=complex)
        b[:n_d, :n_d] = np.eye(n_d)
        b[:n_d, n_d:] = _herm(hw)
        b[n_d:, :n_d] = hw
        b[n_d:, n_d:] = hw @ _herm(hw) + c_cov
        b = 0.5 * (b + _herm(b))

        cb = cho_factor(b, lower=True)
        e = np.zeros((n_d + n_u, n_d), dtype=complex)
        e[:n_d, :n_d] = np.eye(n_d)
        s = cho_solve(cb, e)  # B^{-1} E
        k = 0.5 * (s[:n_d, :] + _herm(s[:n_d, :]))  # E^H B^{-1} E
        a = s @ cho_solve(cho_factor(k, lower=True), _herm(s))
        a = 0.5 * (a + _herm(a))

        blk11 = a[:n_d, :n_d]
        blk12 = a[:n_d, n_d:]
        blk22 = a[n_d:, n_d:]

        cc = cho_factor(c_cov, lower=True)
        solve_hw = cho_solve(cc, hw)
        x_mat = np.eye(n_d, dtype=complex) + _herm(hw) @ solve_hw
        x_mat = 0.5 * (x_mat + _herm(x_mat))
        y_mat = -_herm(solve_hw)

        sign, logdet_k = np.linalg.slogdet(k)
        tr_ab = float(np.trace(a @ b).real)
        c_tilde[l] = logdet_k + tr_ab
        const = float(np.trace(blk11).real + np.trace(blk22).real)
        # QoS holds iff T_l <= gamma_tilde_l (T_l: variable trace terms)
        gamma_tilde[l] = c_tilde[l] - const - gamma_nats

        a11.append(blk11)
        a12.append(blk12)
        a22.append(blk22)
        x_t.append(x_mat)
        y_t.append(y_mat)
        hbar_t.append(hbar)
        ccov_t.append(c_cov)
        b_t.append(b)

    return SurrogateState(
        a11=tuple(a11), a12=tuple(a12), a22=tuple(a22),
        c_tilde=c_tilde, gamma_tilde=gamma_tilde,
        x_tilde=tuple(x_t), y_tilde=tuple(y_t),
        hbar_tilde=tuple(hbar_t), c_cov_tilde=tuple(ccov_t), b_tilde=tuple(b_t),
        precoders_tilde=precoders, theta1_tilde=theta1, theta2_tilde=theta2,
        sigma2=sigma2, noise_scale=float(sig), weights=weights,
        gamma_nats=gamma_nats,
    )


def trace_terms(state: SurrogateState, channels: ChannelSet, theta1, theta2,
                precoders: PrecoderSet) -> np.ndarray:
    """T_l = 2 Re Tr(A12 Hbar W_l) + Tr(A22 Hbar Xi Hbar^H) per user
    (evaluated in the state's noise-normalized convention)."""
    xi = precoders.gram_sum()
    out = np.empty(state.n_users)
    for l in range(state.n_users):
        hbar = effective_channel(channels, theta1, theta2, l) / state.noise_scale
        lin = 2.0 * np.trace(state.a12[l] @ hbar @ precoders.w[l]).real
        quad = np.trace(state.a22[l] @ hbar @ xi @ _herm(hbar)).real
        out[l] = lin + quad
    return out


@dataclass(frozen=True)
class SurrogateValue:
    """Evaluation of the minorant at a candidate point."""

    weighted_trace: float      # sum_l w_l Tr(A_l B_l)   (minimize this)
    weighted_bound: float      # sum_l w_l bound_l       (maximize this)
    bounds: np.ndarray         # per-user c_tilde_l - Tr(A_l B_l)
    trace_values: np.ndarray   # per-user Tr(A_l B_l)
    t_values: np.ndarray       # per-user variable trace terms T_l


def surrogate_value(state: SurrogateState, channels: ChannelSet,
                    precoders: PrecoderSet, theta1, theta2) -> SurrogateValue:
    t_vals = trace_terms(state, channels, theta1, theta2, precoders)
    consts = np.array([state.const_offset(l) for l in range(state.n_users)])
    tr_ab = consts + t_vals
    bounds = state.c_tilde - tr_ab
    return SurrogateValue(
        weighted_trace=float(state.weights @ tr_ab),
        weighted_bound=float(state.weights @ bounds),
        bounds=bounds,
        trace_values=tr_ab,
        t_values=t_vals,
    )
