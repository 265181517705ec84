"""Config-driven sweep runner: Monte-Carlo trials over one swept variable
for the double-IRS optimizer and its baselines, with deterministic seeding
and CSV outputs.

Matched instances: every method at a given (point, trial) sees channel and
initialization streams derived from (master seed, point index, trial index)
only, so method comparisons are paired. Wall-clock goes to a sidecar
timings.csv so results.csv is bitwise reproducible.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .channel import ChannelSet, gen_channel_set
from .config import LN2, ScenarioConfig
from .driver import bcd_solve, evaluate_projected, initialize

METHODS = (
    "double_continuous",
    "double_discrete",
    "random_irs",
    "single_irs_near_tx",
    "single_irs_near_users",
)

SWEEP_VARIABLES = (
    "ps_dbm", "m_total", "m1_split", "n_tx", "n_user", "n_streams", "n_users",
)


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    trials: int = 10
    methods: tuple = ("double_continuous",)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.methods:
            raise ValueError("sweep needs at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


@dataclass(frozen=True)
class ResultRow:
    method: str
    sweep_variable: str
    sweep_value: float
    trial: int
    wsr_bits: float
    min_rate_bits: float
    iterations: int
    converged: bool
    status: str

    def validate(self):
        if self.wsr_bits < 0:
            raise ValueError("WSR must be nonnegative")


RESULT_FIELDS = [
    "method", "sweep_variable", "sweep_value", "trial", "wsr_bits",
    "min_rate_bits", "iterations", "converged", "status",
]


def parse_sweep_text(text: str) -> SweepSpec:
    """Parse `key = value` lines: variable, values (comma list), trials,
    methods (comma list)."""
    kv = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected `key = value`")
        key, value = (p.strip() for p in line.split("=", 1))
        kv[key] = value
    if "variable" not in kv or "values" not in kv:
        raise ValueError("sweep spec needs `variable` and `values`")
    values = tuple(float(tok) for tok in kv["values"].replace(",", " ").split())
    methods = tuple(
        tok.strip() for tok in kv.get("methods", "double_continuous").split(",")
    )
    return SweepSpec(
        variable=kv["variable"],
        values=values,
        trials=int(kv.get("trials", "10")),
        methods=methods,
    )


def load_sweep(path) -> SweepSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sweep_text(fh.read())


def _grid_for(m: int) -> tuple:
    h = max(1, int(np.sqrt(m)))
    while m % h:
        h -= 1
    return (m // h, h)


def config_for_value(base: ScenarioConfig, variable: str, value: float) -> ScenarioConfig:
    v = value
    if variable == "ps_dbm":
        return base.with_updates(ps_dbm=float(v))
    if variable == "m_total":
        grid = _grid_for(int(v))
        return base.with_updates(m1_grid=grid, m2_grid=grid)
    if variable == "m1_split":
        total = base.m1 + base.m2
        m1 = int(v)
        if not 1 <= m1 <= total - 1:
            raise ValueError("m1_split value outside (0, M_total)")
        return base.with_updates(m1_grid=_grid_for(m1), m2_grid=_grid_for(total - m1))
    if variable == "n_tx":
        return base.with_updates(n_tx_grid=_grid_for(int(v)))
    if variable == "n_user":
        return base.with_updates(n_user_grid=_grid_for(int(v)))
    if variable == "n_streams":
        return base.with_updates(n_streams_per_user=int(v))
    if variable == "n_users":
        return base.with_updates(n_users=int(v), weights=())
    raise ValueError(f"unknown sweep variable {variable!r}")


def single_irs_config(config: ScenarioConfig, survivor: str) -> ScenarioConfig:
    """All M1+M2 elements on one IRS; the other shrinks to a placeholder
    whose links are zeroed."""
    total = config.m1 + config.m2
    if survivor == "irs1":
        return config.with_updates(m1_grid=_grid_for(total), m2_grid=(1, 1))
    if survivor == "irs2":
        return config.with_updates(m1_grid=(1, 1), m2_grid=_grid_for(total))
    raise ValueError("survivor must be 'irs1' or 'irs2'")


def zero_other_irs(channels: ChannelSet, survivor: str) -> ChannelSet:
    zeros = np.zeros_like
    if survivor == "irs1":
        return ChannelSet(
            f1=channels.f1.copy(), f2=zeros(channels.f2), f3=zeros(channels.f3),
            g=tuple(m.copy() for m in channels.g),
            h=tuple(zeros(m) for m in channels.h),
            user_positions=channels.user_positions.copy(),
        )
    return ChannelSet(
        f1=zeros(channels.f1), f2=zeros(channels.f2), f3=channels.f3.copy(),
        g=tuple(zeros(m) for m in channels.g),
        h=tuple(m.copy() for m in channels.h),
        user_positions=channels.user_positions.copy(),
    )


def _streams(master_seed: int, point: int, trial: int):
    chan = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(point, trial, 0)))
    init = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(point, trial, 1)))
    return chan, init


def run_point_trial(base: ScenarioConfig, spec: SweepSpec, master_seed: int,
                    point: int, trial: int):
    """All requested methods for one (sweep value, trial); the continuous
    double-IRS run is shared by the discrete method."""
    value = spec.values[point]
    cfg = config_for_value(base, spec.variable, value)
    rows = []
    timings = []
    continuous_result = None

    def record(method, wsr_bits, min_rate_bits, iters, converged, status, secs):
        rows.append(ResultRow(
            method=method, sweep_variable=spec.variable, sweep_value=value,
            trial=trial, wsr_bits=max(0.0, wsr_bits),
            min_rate_bits=min_rate_bits, iterations=iters,
            converged=converged, status=status,
        ))
        timings.append((method, value, trial, secs))

    def run_double(optimize_phases: bool):
        chan_rng, init_rng = _streams(master_seed, point, trial)
        channels = gen_channel_set(cfg, chan_rng)
        init = initialize(cfg, channels, init_rng)
        return bcd_solve(cfg, channels, optimize_phase_shifts=optimize_phases,
                         initial_point=init)

    for method in spec.methods:
        tic = time.perf_counter()
        try:
            if method in ("double_continuous", "double_discrete"):
                if continuous_result is None:
                    continuous_result = run_double(True)
                res = continuous_result
                if method == "double_continuous":
                    rep = res.report
                    record(method, rep.final_wsr_bits(),
                           min(rep.iterations[-1].rates_nats) / LN2,
                           rep.n_iterations, rep.converged, rep.status,
                           time.perf_counter() - tic)
                else:
                    _, wsr_re, _, _, prec = evaluate_projected(res, cfg.q_phi)
                    from .rates import all_rates
                    rep = res.report
                    record(method, wsr_re, float("nan"),
                           rep.n_iterations, rep.converged, rep.status,
                           time.perf_counter() - tic)
            elif method == "random_irs":
                res = run_double(False)
                rep = res.report
                record(method, rep.final_wsr_bits(),
                       min(rep.iterations[-1].rates_nats) / LN2,
                       rep.n_iterations, rep.converged, rep.status,
                       time.perf_counter() - tic)
            elif method in ("single_irs_near_tx", "single_irs_near_users"):
                survivor = "irs1" if method == "single_irs_near_tx" else "irs2"
                s_cfg = single_irs_config(cfg, survivor)
                chan_rng, init_rng = _streams(master_seed, point, trial)
                channels = zero_other_irs(gen_channel_set(s_cfg, chan_rng), survivor)
                init = initialize(s_cfg, channels, init_rng)
                res = bcd_solve(s_cfg, channels, initial_point=init)
                rep = res.report
                record(method, rep.final_wsr_bits(),
                       min(rep.iterations[-1].rates_nats) / LN2,
                       rep.n_iterations, rep.converged, rep.status,
                       time.perf_counter() - tic)
        except Exception as exc:  # failure rows must never abort the sweep
            record(method, 0.0, float("nan"), 0, False,
                   f"error:{type(exc).__name__}", time.perf_counter() - tic)
    return rows, timings


def run_sweep(spec: SweepSpec, base: ScenarioConfig, master_seed: int = 0,
              workers: int = 1):
    """All (value, trial) tasks; returns (rows, timings) in deterministic
    order regardless of worker scheduling."""
    tasks = [(point, trial)
             for point in range(len(spec.values))
             for trial in range(spec.trials)]
    rows, timings = [], []
    if workers <= 1:
        for point, trial in tasks:
            r, t = run_point_trial(base, spec, master_seed, point, trial)
            rows.extend(r)
            timings.extend(t)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_point_trial, base, spec, master_seed, point, trial)
                for point, trial in tasks
            ]
            for fut in futures:
                r, t = fut.result()
                rows.extend(r)
                timings.extend(t)
    order = {m: i for i, m in enumerate(spec.methods)}
    rows.sort(key=lambda r: (r.sweep_value, r.trial, order[r.method]))
    timings.sort(key=lambda t: (t[1], t[2], order[t[0]]))
    return rows, timings


def write_results_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            d = asdict(row)
            writer.writerow([repr(d[f]) if isinstance(d[f], float) else d[f]
                             for f in RESULT_FIELDS])


def write_timings_csv(path, timings) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "sweep_value", "trial", "wall_clock_sec"])
        writer.writerows(timings)


def emit_summary(rows):
    """Per (method, value) aggregates: mean/std and a normal 95% CI of the
    WSR, plus the converged fraction."""
    if not rows:
        raise ValueError("no rows to summarize")
    groups = {}
    for row in rows:
        groups.setdefault((row.method, row.sweep_value), []).append(row)
    out = []
    for (method, value), grp in sorted(groups.items()):
        wsrs = np.array([r.wsr_bits for r in grp], dtype=float)
        n = len(wsrs)
        mean = float(np.mean(wsrs))
        std = float(np.std(wsrs, ddof=1)) if n > 1 else 0.0
        ci = 1.96 * std / np.sqrt(n) if n > 1 else 0.0
        out.append({
            "method": method,
            "sweep_variable": grp[0].sweep_variable,
            "sweep_value": value,
            "n": n,
            "wsr_mean_bits": mean,
            "wsr_std_bits": std,
            "wsr_ci95_bits": float(ci),
            "converged_fraction": float(np.mean([r.converged for r in grp])),
        })
    return out


SUMMARY_FIELDS = [
    "method", "sweep_variable", "sweep_value", "n", "wsr_mean_bits",
    "wsr_std_bits", "wsr_ci95_bits", "converged_fraction",
]


def write_summary_csv(path, summary_rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for row in summary_rows:
            writer.writerow([repr(row[f]) if isinstance(row[f], float) else row[f]
                             for f in SUMMARY_FIELDS])


def write_run_metadata(path, base: ScenarioConfig, spec, master_seed: int,
                       workers: int, profile: str) -> None:
    from . import __version__
    from .kernels import BACKEND

    payload = {
        "package_version": __version__,
        "kernel_backend": BACKEND,
        "profile": profile,
        "master_seed": master_seed,
        "workers": workers,
        "config": asdict(base),
        "sweep": asdict(spec) if spec is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
