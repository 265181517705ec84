"""mmWave channel synthesis: UPA steering vectors, distance path loss, and
the finite-path geometric channel with one geometry-consistent LoS path
plus uniformly scattered NLoS paths.

All generators are pure given an explicit numpy Generator; a ChannelSet is
immutable after construction (arrays are write-protected) so realizations
can be shared across parallel sweep workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PathLossParams, ScenarioConfig


def upa_response(psi: float, beta: float, grid, spacing: float) -> np.ndarray:
    """Unit-norm uniform-planar-array response for azimuth psi / elevation beta.

    Entry (m, n), 0 <= m < W, 0 <= n < H, at flat index m*H + n equals
    (1/sqrt(WH)) * exp(j*2*pi*spacing*(m*sin(psi)*sin(beta) + n*cos(beta))).
    """
    w, h = int(grid[0]), int(grid[1])
    if w < 1 or h < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {(w, h)}")
    if spacing <= 0:
        raise ValueError("element spacing must be > 0")
    m = np.arange(w)[:, None]
    n = np.arange(h)[None, :]
    phase = 2.0 * np.pi * spacing * (
        m * np.sin(psi) * np.sin(beta) + n * np.cos(beta)
    )
    return np.exp(1j * phase).ravel() / np.sqrt(w * h)


def path_loss_db(distance: float, params: PathLossParams, shadow_db: float = 0.0) -> float:
    """PL(D)[dB] = a + 10*b*log10(D) + shadow_db for D > 0."""
    if distance <= 0:
        raise ValueError("distance must be > 0")
    return params.a + 10.0 * params.b * np.log10(distance) + shadow_db


def direction_angles(src, dst):
    """(azimuth, elevation) of the unit vector from src to dst.

    Elevation is measured from the +z axis (arccos of the z component),
    matching the elevation range [0, pi) used for scattered paths.
    """
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    r = np.linalg.norm(d)
    if r <= 0:
        raise ValueError("coincident endpoints")
    psi = np.arctan2(d[1], d[0])
    beta = np.arccos(np.clip(d[2] / r, -1.0, 1.0))
    return psi, beta


def gen_sv_channel(
    rx_grid,
    tx_grid,
    n_path: int,
    distance: float,
    los_params: PathLossParams,
    nlos_params: PathLossParams,
    spacing: float,
    rng: np.random.Generator,
    los_angles=None,
) -> np.ndarray:
    """One finite-path channel matrix (M_rx x N_tx).

    Path 1 is LoS: deterministic angles (from geometry when supplied) and
    LoS path-loss parameters. Paths 2..n_path are NLoS with azimuth uniform
    on [0, 2pi), elevation uniform on [0, pi). Gains are CN(0, kappa^2 *
    10^(-0.1 PL)) with kappa^2 = M_rx*N_tx/n_path; shadowing is drawn once
    per link for each parameter class and shared by that class's paths.
    """
    if n_path < 1:
        raise ValueError("n_path must be >= 1")
    m_rx = int(rx_grid[0]) * int(rx_grid[1])
    n_tx = int(tx_grid[0]) * int(tx_grid[1])

    shadow_los = rng.standard_normal() * los_params.varrho
    shadow_nlos = rng.standard_normal() * nlos_params.varrho

    if los_angles is None:
        los_angles = (0.0, np.pi / 2, 0.0, np.pi / 2)
    psi_r = np.empty(n_path)
    beta_r = np.empty(n_path)
    psi_t = np.empty(n_path)
    beta_t = np.empty(n_path)
    psi_r[0], beta_r[0], psi_t[0], beta_t[0] = los_angles
    if n_path > 1:
        draws = rng.uniform(size=(n_path - 1, 4))
        psi_r[1:] = 2.0 * np.pi * draws[:, 0]
        beta_r[1:] = np.pi * draws[:, 1]
        psi_t[1:] = 2.0 * np.pi * draws[:, 2]
        beta_t[1:] = np.pi * draws[:, 3]

    kappa2 = m_rx * n_tx / n_path
    pl = np.empty(n_path)
    pl[0] = path_loss_db(distance, los_params, shadow_los)
    pl[1:] = path_loss_db(distance, nlos_params, shadow_nlos)
    sigma = np.sqrt(kappa2 * 10.0 ** (-0.1 * pl))
    z = rng.standard_normal((n_path, 2))
    alpha = sigma / np.sqrt(2.0) * (z[:, 0] + 1j * z[:, 1])

    chan = np.zeros((m_rx, n_tx), dtype=complex)
    for q in range(n_path):
        a_r = upa_response(psi_r[q], beta_r[q], rx_grid, spacing)
        a_t = upa_response(psi_t[q], beta_t[q], tx_grid, spacing)
        chan += alpha[q] * np.outer(a_r, a_t.conj())
    return chan


@dataclass(frozen=True)
class ChannelSet:
    """The five channel matrices of one realization.

    f1: tx->IRS1 (M1 x N_TX), f2: IRS1->IRS2 (M2 x M1), f3: tx->IRS2
    (M2 x N_TX), g[l]: IRS1->user l (N_U x M1), h[l]: IRS2->user l (N_U x M2).
    """

    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    g: tuple
    h: tuple
    user_positions: np.ndarray

    def __post_init__(self):
        for arr in (self.f1, self.f2, self.f3, *self.g, *self.h):
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError("channel entries must be finite")
            arr.setflags(write=False)
        self.user_positions.setflags(write=False)
        m1, n_tx = self.f1.shape
        m2 = self.f2.shape[0]
        if self.f2.shape[1] != m1 or self.f3.shape != (m2, n_tx):
            raise ValueError("inconsistent channel dimensions")
        for gl, hl in zip(self.g, self.h):
            if gl.shape[1] != m1 or hl.shape[1] != m2 or gl.shape[0] != hl.shape[0]:
                raise ValueError("inconsistent per-user channel dimensions")

    @property
    def n_users(self) -> int:
        return len(self.g)


def sample_user_positions(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws in the horizontal user disk."""
    c = np.asarray(config.user_circle_center, dtype=float)
    u = rng.uniform(size=(config.n_users, 2))
    r = config.user_circle_radius * np.sqrt(u[:, 0])
    phi = 2.0 * np.pi * u[:, 1]
    pos = np.tile(c, (config.n_users, 1))
    pos[:, 0] += r * np.cos(phi)
    pos[:, 1] += r * np.sin(phi)
    return pos


def _link(config, rng, src, dst, tx_grid, rx_grid):
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    dist = float(np.linalg.norm(dst - src))
    psi_t, beta_t = direction_angles(src, dst)
    psi_r, beta_r = direction_angles(dst, src)
    return gen_sv_channel(
        rx_grid,
        tx_grid,
        config.n_path,
        dist,
        config.los_pathloss,
        config.nlos_pathloss,
        config.element_spacing_over_lambda,
        rng,
        los_angles=(psi_r, beta_r, psi_t, beta_t),
    )


def gen_channel_set(config: ScenarioConfig, rng: np.random.Generator) -> ChannelSet:
    """All links of one realization (users drawn first, then F1, F2, F3,
    then G_l and H_l per user, in a fixed order for reproducibility).

    The triple-reflection tx->IRS2->IRS1->user path is ignored (it is far
    below the retained links in power).
    """
    users = sample_user_positions(config, rng)
    f1 = _link(config, rng, config.tx_position, config.irs1_position,
               config.n_tx_grid, config.m1_grid)
    f2 = _link(config, rng, config.irs1_position, config.irs2_position,
               config.m1_grid, config.m2_grid)
    f3 = _link(config, rng, config.tx_position, config.irs2_position,
               config.n_tx_grid, config.m2_grid)
    g = []
    h = []
    for l in range(config.n_users):
        g.append(_link(config, rng, config.irs1_position, users[l],
                       config.m1_grid, config.n_user_grid))
        h.append(_link(config, rng, config.irs2_position, users[l],
                       config.m2_grid, config.n_user_grid))
    return ChannelSet(f1=f1, f2=f2, f3=f3, g=tuple(g), h=tuple(h),
                      user_positions=users)


def save_channel_set(path, channels: ChannelSet) -> None:
    """Dump a realization to .npz for replay (keys: f1, f2, f3, g0.., h0..,
    user_positions, n_users)."""
    payload = {
        "f1": channels.f1,
        "f2": channels.f2,
        "f3": channels.f3,
        "user_positions": channels.user_positions,
        "n_users": np.array(channels.n_users),
    }
    for l in range(channels.n_users):
        payload[f"g{l}"] = channels.g[l]
        payload[f"h{l}"] = channels.h[l]
    np.savez(path, **payload)


def load_channel_set(path) -> ChannelSet:
    with np.load(path) as data:
        n_users = int(data["n_users"])
        return ChannelSet(
            f1=data["f1"].copy(),
            f2=data["f2"].copy(),
            f3=data["f3"].copy(),
            g=tuple(data[f"g{l}"].copy() for l in range(n_users)),
            h=tuple(data[f"h{l}"].copy() for l in range(n_users)),
            user_positions=data["user_positions"].copy(),
        )
