"""Outer alternating loop: precoder solve, theta1 solve, theta2 solve,
surrogate refresh; with feasible-point initialization, QoS-threshold
continuation, monotonicity safeguards, and KKT certification.

Each block candidate passes through a guarded accept: the precoder step is
damped by an exact line search on the true (coupled) surrogate objective,
and a phase candidate is kept only if it does not degrade that objective or
materially worsen QoS slack. The recorded surrogate sequence is therefore
non-descending by construction whenever the subsolvers behave, and any
degrading candidate is damped or dropped rather than silently accepted.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import ChannelSet
from .config import LN2, ScenarioConfig
from .phase import (
    PhaseQuadratics,
    build_quadratics_irs1,
    build_quadratics_irs2,
    euclidean_grad,
    optimize_phases,
    riemannian_grad,
)
from .precoder import QcqpProblem, QcqpSolution, build_qcqp, kkt_residuals, solve_qcqp
from .rates import (
    PhaseVector,
    PrecoderSet,
    all_rates,
    build_surrogate,
    effective_channel,
    surrogate_value,
    wsr,
)

QOS_GUARD_TOL = 1e-6
CONTINUATION_RAMP = 5
INFEASIBLE_PATIENCE = 3


def initialize(config: ScenarioConfig, channels: ChannelSet,
               rng: np.random.Generator) -> tuple:
    """Random phases; per-user matched-filter precoders (leading right
    singular vectors of the effective channel) scaled to spend the full
    power budget."""
    theta1 = PhaseVector.random(config.m1, rng)
    theta2 = PhaseVector.random(config.m2, rng)
    n_d = config.n_streams_per_user
    scale = math.sqrt(config.ps_watt / (config.n_users * n_d))
    mats = []
    for l in range(config.n_users):
        hbar = effective_channel(channels, theta1, theta2, l)
        _, _, vh = np.linalg.svd(hbar)
        mats.append(scale * vh.conj().T[:, :n_d])
    return PrecoderSet(tuple(mats)), theta1, theta2


@dataclass
class IterationRecord:
    k: int
    surrogate: float          # weighted minorant value (maximization form)
    wsr_nats: float
    wsr_bits: float
    rates_nats: tuple
    power: float
    min_rate_slack: float     # min_l (R_l - gamma_eff)
    gamma_eff: float
    rho1: float
    rho2: float
    rmo_iters1: int
    rmo_iters2: int
    qcqp_iters: int
    qcqp_status: str
    w_step: float             # accepted damping along the precoder segment
    kkt_max: float
    wall_clock: float


@dataclass
class OptReport:
    iterations: list = field(default_factory=list)
    status: str = "converged"  # "converged" | "iteration-cap" | "infeasible"
    gamma_nats: float = 0.0
    jitter_events: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    def surrogate_sequence(self) -> np.ndarray:
        return np.array([r.surrogate for r in self.iterations])

    def wsr_sequence(self) -> np.ndarray:
        return np.array([r.wsr_nats for r in self.iterations])

    def final_wsr_bits(self) -> float:
        return self.iterations[-1].wsr_bits if self.iterations else 0.0

    def to_csv(self, path) -> None:
        """One row per iteration; per-user rates joined with '|'."""
        fields = [
            "k", "surrogate", "wsr_nats", "wsr_bits", "rates_nats", "power",
            "min_rate_slack", "gamma_eff", "rho1", "rho2", "rmo_iters1",
            "rmo_iters2", "qcqp_iters", "qcqp_status", "w_step", "kkt_max",
            "wall_clock",
        ]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for rec in self.iterations:
                row = asdict(rec)
                row["rates_nats"] = "|".join(repr(v) for v in rec.rates_nats)
                writer.writerow([row[f] for f in fields])

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.n_iterations,
            "final_wsr_bits": self.final_wsr_bits(),
            "final_kkt_max": self.iterations[-1].kkt_max if self.iterations else float("nan"),
            "jitter_events": self.jitter_events,
        }


@dataclass
class BcdResult:
    report: OptReport
    precoders: PrecoderSet
    theta1: PhaseVector
    theta2: PhaseVector
    state: object             # surrogate state of the last iteration
    problem: QcqpProblem | None
    qcqp_solution: QcqpSolution | None
    quad1: PhaseQuadratics | None
    quad2: PhaseQuadratics | None
    price1: object | None
    price2: object | None
    channels: ChannelSet
    config: ScenarioConfig

    @property
    def wsr_bits(self) -> float:
        return self.report.final_wsr_bits()

    def probe_sequences(self):
        """(rho, gamma) probe lists of the final iteration's price searches."""
        out = []
        for price in (self.price1, self.price2):
            if price is not None:
                out.append(list(price.probes))
        return out


def _damped_precoder_step(state, channels, theta1, theta2, w_old: PrecoderSet,
                          w_cand: PrecoderSet, qos_tol: float = QOS_GUARD_TOL):
    """Exact line search on the coupled surrogate objective along the segment
    w_old -> w_cand (the objective is a convex quadratic in the step), then
    backtrack until QoS slack is no worse than at w_old."""

    def blend(t):
        return PrecoderSet(tuple(
            (1.0 - t) * a + t * b for a, b in zip(w_old.w, w_cand.w)
        ))

    def evaluate(prec):
        sval = surrogate_value(state, channels, prec, theta1, theta2)
        viol = float(np.max(sval.t_values - state.gamma_tilde))
        return sval.weighted_trace, viol

    f0, viol0 = evaluate(w_old)
    f1, _ = evaluate(w_cand)
    fh, _ = evaluate(blend(0.5))
    a = 2.0 * f1 + 2.0 * f0 - 4.0 * fh
    b = 4.0 * fh - 3.0 * f0 - f1
    if a > 1e-30:
        t_star = min(1.0, max(0.0, -b / (2.0 * a)))
    else:
        t_star = 1.0 if f1 < f0 else 0.0

    t = t_star
    guard = max(viol0, qos_tol)
    for _ in range(40):
        if t <= 1e-12:
            return w_old, 0.0
        cand = blend(t)
        f_t, viol_t = evaluate(cand)
        if f_t <= f0 + 1e-12 * max(1.0, abs(f0)) and viol_t <= guard:
            return cand, t
        t *= 0.5
    return w_old, 0.0


def _guarded_phase_step(quad: PhaseQuadratics, theta_old: PhaseVector,
                        theta_cand: PhaseVector, qos_tol: float = QOS_GUARD_TOL):
    """Keep the candidate only if the weighted objective does not increase
    and QoS slack does not get materially worse."""
    x_old = quad.values(theta_old)
    x_new = quad.values(theta_cand)
    obj_old = float(quad.weights @ x_old)
    obj_new = float(quad.weights @ x_new)
    viol_old = float(np.max(x_old - quad.gamma_tilde))
    viol_new = float(np.max(x_new - quad.gamma_tilde))
    if obj_new <= obj_old + 1e-12 * max(1.0, abs(obj_old)) and \
            viol_new <= max(viol_old, qos_tol):
        return theta_cand, True
    return theta_old, False


def phase_stationarity_residual(quad: PhaseQuadratics, theta, rho: float,
                                mu: float) -> float:
    """Norm of the tangential component of (U theta + q) for the penalized
    aggregates; the unit-modulus multiplier is eliminated exactly."""
    egrad = euclidean_grad(theta, quad, rho, mu)
    return 0.5 * float(np.linalg.norm(riemannian_grad(theta, egrad)))


def kkt_residual(result: BcdResult) -> float:
    """Max first-order residual at the returned point: precoder stationarity
    and complementary slackness, both phase stationarity residuals, and the
    (exactly zero) unit-modulus slackness."""
    components = []
    if result.problem is not None and result.qcqp_solution is not None:
        res = kkt_residuals(result.problem, result.qcqp_solution)
        components.append(res["max"])
    mu = result.config.mu_smooth
    if result.quad1 is not None and result.price1 is not None:
        components.append(phase_stationarity_residual(
            result.quad1, result.theta1, result.price1.rho_star, mu))
    if result.quad2 is not None and result.price2 is not None:
        components.append(phase_stationarity_residual(
            result.quad2, result.theta2, result.price2.rho_star, mu))
    return float(max(components)) if components else float("nan")


def bcd_solve(config: ScenarioConfig, channels: ChannelSet,
              rng: np.random.Generator | None = None,
              max_iter: int = 50, rel_tol: float = 1e-5,
              qcqp_tol: float = 1e-6, eps_theta: float = 1e-6,
              eps_rho: float = 1e-4, t_max: int = 30,
              rmo_max_iter: int = 500,
              optimize_phase_shifts: bool = True,
              initial_point=None) -> BcdResult:
    """Alternate precoder / theta1 / theta2 solves with a surrogate refresh
    once per outer iteration, until the relative surrogate change falls
    below rel_tol or max_iter is hit."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    sigma2 = config.noise_watt
    weights = config.weight_array
    gamma = config.gamma_nats
    mu = config.mu_smooth

    if initial_point is None:
        precoders, theta1, theta2 = initialize(config, channels, rng)
    else:
        precoders, theta1, theta2 = initial_point

    rates = all_rates(channels, theta1, theta2, precoders, sigma2)
    continuation = gamma > 0 and float(np.min(rates)) < gamma

    report = OptReport(gamma_nats=gamma)
    state = None
    problem = None
    solution = None
    quad1 = quad2 = None
    price1 = price2 = None
    prev_surrogate = None
    infeasible_streak = 0

    for k in range(max_iter):
        tic = time.perf_counter()
        if continuation:
            gamma_eff = gamma * min(1.0, k / CONTINUATION_RAMP)
        else:
            gamma_eff = gamma
        ramp_done = gamma_eff >= gamma

        state = build_surrogate(channels, theta1, theta2, precoders,
                                sigma2, weights, gamma_eff)

        # (a) precoders
        problem = build_qcqp(state, ps=config.ps_watt)
        solution = solve_qcqp(problem, tol=qcqp_tol)
        if solution.jitter_used:
            report.jitter_events += 1
        w_step = 0.0
        if solution.status == "infeasible":
            infeasible_streak = infeasible_streak + 1 if ramp_done else 0
            if infeasible_streak >= INFEASIBLE_PATIENCE:
                report.status = "infeasible"
        else:
            infeasible_streak = 0
            precoders, w_step = _damped_precoder_step(
                state, channels, theta1, theta2, precoders, solution.precoders)

        # (b) phases, theta1 then theta2
        rho1 = rho2 = 0.0
        rmo1 = rmo2 = 0
        if optimize_phase_shifts:
            quad1 = build_quadratics_irs1(channels, theta2, precoders, state)
            cand1, price1 = optimize_phases(
                quad1, theta1, mu, eps_theta=eps_theta, eps_rho=eps_rho,
                t_max=t_max, max_iter=rmo_max_iter)
            theta1, _ = _guarded_phase_step(quad1, theta1, cand1)
            rho1, rmo1 = price1.rho_star, price1.rmo_iterations

            quad2 = build_quadratics_irs2(channels, theta1, precoders, state)
            cand2, price2 = optimize_phases(
                quad2, theta2, mu, eps_theta=eps_theta, eps_rho=eps_rho,
                t_max=t_max, max_iter=rmo_max_iter)
            theta2, _ = _guarded_phase_step(quad2, theta2, cand2)
            rho2, rmo2 = price2.rho_star, price2.rmo_iterations

        # (c) measure at the new point against the frozen blocks
        sval = surrogate_value(state, channels, precoders, theta1, theta2)
        rates = all_rates(channels, theta1, theta2, precoders, sigma2)
        wsr_nats = wsr(rates, weights)

        partial = BcdResult(report, precoders, theta1, theta2, state, problem,
                            solution, quad1, quad2, price1, price2, channels,
                            config)
        record = IterationRecord(
            k=k,
            surrogate=sval.weighted_bound,
            wsr_nats=wsr_nats,
            wsr_bits=wsr_nats / LN2,
            rates_nats=tuple(float(r) for r in rates),
            power=precoders.total_power(),
            min_rate_slack=float(np.min(rates)) - gamma_eff,
            gamma_eff=gamma_eff,
            rho1=rho1,
            rho2=rho2,
            rmo_iters1=rmo1,
            rmo_iters2=rmo2,
            qcqp_iters=solution.dual_iterations,
            qcqp_status=solution.status,
            w_step=w_step,
            kkt_max=kkt_residual(partial),
            wall_clock=time.perf_counter() - tic,
        )
        report.iterations.append(record)

        if report.status == "infeasible":
            break
        if prev_surrogate is not None and ramp_done:
            change = abs(record.surrogate - prev_surrogate)
            if change <= rel_tol * max(1.0, abs(prev_surrogate)):
                report.status = "converged"
                break
        prev_surrogate = record.surrogate if ramp_done else None
    else:
        report.status = "iteration-cap"

    return BcdResult(report, precoders, theta1, theta2, state, problem,
                     solution, quad1, quad2, price1, price2, channels, config)


def evaluate_projected(result: BcdResult, q_phi: int | None = None,
                       resolve_precoders: bool = True):
    """Quantize the converged phases to the q_phi grid.

    Returns (wsr_bits_no_resolve, wsr_bits_resolved_or_None, theta1_d,
    theta2_d, precoders): the first value keeps the continuous precoders,
    the second re-solves them once for the projected phases.
    """
    from .phase import project_discrete

    cfg = result.config
    q = q_phi if q_phi is not None else cfg.q_phi
    theta1_d = project_discrete(result.theta1, q)
    theta2_d = project_discrete(result.theta2, q)
    sigma2 = cfg.noise_watt
    weights = cfg.weight_array

    rates_raw = all_rates(result.channels, theta1_d, theta2_d,
                          result.precoders, sigma2)
    wsr_no_resolve = wsr(rates_raw, weights) / LN2

    if not resolve_precoders:
        return wsr_no_resolve, None, theta1_d, theta2_d, result.precoders

    state = build_surrogate(result.channels, theta1_d, theta2_d,
                            result.precoders, sigma2, weights,
                            cfg.gamma_nats)
    problem = build_qcqp(state, ps=cfg.ps_watt)
    solution = solve_qcqp(problem)
    if solution.status == "infeasible":
        precoders = result.precoders
    else:
        precoders, _ = _damped_precoder_step(
            state, result.channels, theta1_d, theta2_d, result.precoders,
            solution.precoders)
    rates_re = all_rates(result.channels, theta1_d, theta2_d, precoders, sigma2)
    wsr_re = wsr(rates_re, weights) / LN2
    return wsr_no_resolve, wsr_re, theta1_d, theta2_d, precoders


def save_run_summary(path, result: BcdResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.report.summary(), fh, indent=2, sort_keys=True)
