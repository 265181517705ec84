"""Scenario configuration: geometry, array sizes, powers, and solver knobs.

All rate math downstream is in nats; the QoS threshold is entered in
bit/s/Hz (the usual reporting unit) and converted once here. Powers are
entered in dBm and converted to watts once here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


def dbm_to_watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class PathLossParams:
    """Distance-dependent path loss PL(D)[dB] = a + 10*b*log10(D) + shadowing."""

    a: float
    b: float
    varrho: float = 0.0  # shadowing std-dev in dB
    is_los: bool = True

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("path-loss exponent b must be > 0")
        if self.varrho < 0:
            raise ValueError("shadowing std-dev must be >= 0")


# 28 GHz measurement fits (LoS / NLoS).
LOS_28GHZ = PathLossParams(a=61.4, b=2.0, varrho=5.8, is_los=True)
NLOS_28GHZ = PathLossParams(a=72.0, b=2.92, varrho=8.7, is_los=False)


@dataclass(frozen=True)
class ScenarioConfig:
    tx_position: tuple = (0.0, 0.0, 10.0)
    irs1_position: tuple = (0.0, 10.0, 10.0)
    irs2_position: tuple = (50.0, 10.0, 10.0)
    user_circle_center: tuple = (50.0, 0.0, 2.0)
    user_circle_radius: float = 5.0
    n_tx_grid: tuple = (4, 2)
    n_user_grid: tuple = (2, 2)
    m1_grid: tuple = (5, 4)
    m2_grid: tuple = (5, 4)
    n_users: int = 2
    n_streams_per_user: int = 1
    ps_dbm: float = 30.0
    noise_dbm: float = -120.0
    gamma_qos: float = 0.0  # bit/s/Hz
    weights: tuple = ()  # empty -> uniform 1/L
    q_phi: int = 3
    mu_smooth: float = 10.0
    n_path: int = 8
    element_spacing_over_lambda: float = 0.5
    seed: int = 0
    los_pathloss: PathLossParams = LOS_28GHZ
    nlos_pathloss: PathLossParams = NLOS_28GHZ

    def __post_init__(self):
        for name in ("n_tx_grid", "n_user_grid", "m1_grid", "m2_grid"):
            w, h = getattr(self, name)
            if w < 1 or h < 1:
                raise ValueError(f"{name} dimensions must be >= 1, got {(w, h)}")
        if self.n_users < 1 or self.n_streams_per_user < 1:
            raise ValueError("user and stream counts must be >= 1")
        if self.user_circle_radius <= 0:
            raise ValueError("user_circle_radius must be > 0")
        if not math.isfinite(self.ps_dbm):
            raise ValueError("ps_dbm must be finite")
        if self.mu_smooth <= 0:
            raise ValueError("mu_smooth must be > 0")
        if self.n_path < 1:
            raise ValueError("n_path must be >= 1")
        if self.element_spacing_over_lambda <= 0:
            raise ValueError("element spacing must be > 0")
        if not self.weights:
            object.__setattr__(
                self, "weights", tuple([1.0 / self.n_users] * self.n_users)
            )
        w = np.asarray(self.weights, dtype=float)
        if len(w) != self.n_users:
            raise ValueError("weights length must equal n_users")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        cap = min(self.n_tx, self.n_user)
        if self.n_streams_per_user > cap:
            log.warning(
                "n_streams_per_user=%d exceeds min(n_tx, n_user)=%d; capping",
                self.n_streams_per_user,
                cap,
            )
            object.__setattr__(self, "n_streams_per_user", cap)

    # ---- derived quantities ----
    @property
    def n_tx(self) -> int:
        return self.n_tx_grid[0] * self.n_tx_grid[1]

    @property
    def n_user(self) -> int:
        return self.n_user_grid[0] * self.n_user_grid[1]

    @property
    def m1(self) -> int:
        return self.m1_grid[0] * self.m1_grid[1]

    @property
    def m2(self) -> int:
        return self.m2_grid[0] * self.m2_grid[1]

    @property
    def ps_watt(self) -> float:
        return dbm_to_watt(self.ps_dbm)

    @property
    def noise_watt(self) -> float:
        return dbm_to_watt(self.noise_dbm)

    @property
    def gamma_nats(self) -> float:
        return self.gamma_qos * LN2

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def with_updates(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


def desk_config(**overrides) -> ScenarioConfig:
    """Small instance for CI-speed runs: paper geometry, lighter arrays,
    lower noise floor so rates are O(1) bits."""
    cfg = ScenarioConfig()
    return cfg.with_updates(**overrides) if overrides else cfg


def paper_config(**overrides) -> ScenarioConfig:
    """Full-scale scenario constants (minutes-to-hours runtime)."""
    cfg = ScenarioConfig(
        m1_grid=(10, 5),
        m2_grid=(10, 5),
        n_users=5,
        n_streams_per_user=8,  # capped to min(n_tx, n_user) at validation
        ps_dbm=30.0,
        noise_dbm=-80.0,
        gamma_qos=1.0,
    )
    return cfg.with_updates(**overrides) if overrides else cfg


PROFILES = {"desk": desk_config, "paper": paper_config}

_VEC3_KEYS = {"tx_position", "irs1_position", "irs2_position", "user_circle_center"}
_GRID_KEYS = {"n_tx_grid", "n_user_grid", "m1_grid", "m2_grid"}
_INT_KEYS = {"n_users", "n_streams_per_user", "q_phi", "n_path", "seed"}
_FLOAT_KEYS = {
    "user_circle_radius",
    "ps_dbm",
    "noise_dbm",
    "gamma_qos",
    "mu_smooth",
    "element_spacing_over_lambda",
}
_PL_KEYS = {"los_pathloss", "nlos_pathloss"}


def _parse_numbers(text: str):
    return [float(tok) for tok in text.replace(",", " ").split()]


def parse_config_text(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse `key = value` lines (\"#\" comments) into a ScenarioConfig.

    Vector keys take comma/space separated numbers, grids take two integers,
    weights take one number per user, path-loss keys take `a b varrho`.
    """
    cfg = base or ScenarioConfig()
    updates = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _VEC3_KEYS:
            nums = _parse_numbers(value)
            if len(nums) != 3:
                raise ValueError(f"line {ln}: {key} needs 3 numbers")
            updates[key] = tuple(nums)
        elif key in _GRID_KEYS:
            nums = _parse_numbers(value)
            if len(nums) != 2:
                raise ValueError(f"line {ln}: {key} needs 2 integers")
            updates[key] = (int(nums[0]), int(nums[1]))
        elif key in _INT_KEYS:
            updates[key] = int(float(value))
        elif key in _FLOAT_KEYS:
            updates[key] = float(value)
        elif key == "weights":
            updates[key] = tuple(_parse_numbers(value))
        elif key in _PL_KEYS:
            nums = _parse_numbers(value)
            if len(nums) != 3:
                raise ValueError(f"line {ln}: {key} needs `a b varrho`")
            updates[key] = PathLossParams(
                a=nums[0], b=nums[1], varrho=nums[2], is_los=(key == "los_pathloss")
            )
        else:
            raise ValueError(f"line {ln}: unknown config key {key!r}")
    return cfg.with_updates(**updates) if updates else cfg


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)
