"""Multicell network geometry, large-scale fading and gain profiles.

Cells are squares arranged in a grid (row-major, bottom-left cell first)
with one base station at each cell center. User positions are dropped
uniformly per cell, outside a guard disk around the serving BS. The gain
profile collects the coherent gain a[j,k] of each serving link and the
interference gain b[l,i,j,k] of every (BS l, UE i) pair towards UE k of
cell j, everything in linear milliwatt units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np


class ConfigError(ValueError):
    """Invalid network configuration or config file."""


@dataclass(frozen=True)
class NetworkConfig:
    n_cells: int = 4                    # L
    n_ues_per_cell: int = 5             # K
    n_antennas: int = 100               # M
    cell_side: float = 250.0            # meters
    noise_power: float = 10.0 ** -9.4   # mW, linear (-94 dBm)
    p_max: float = 500.0                # mW per-cell downlink budget
    pathloss_ref_db: float = 148.1      # dB at 1 km
    pathloss_exponent: float = 3.76
    min_bs_ue_distance: float = 35.0    # meters

    @property
    def sigma2(self) -> float:
        return self.noise_power

    @property
    def input_dim(self) -> int:
        """Position-vector length 2*K*L."""
        return 2 * self.n_ues_per_cell * self.n_cells

    @property
    def deployment_width(self) -> float:
        """Side of the full deployment box (cell_side times grid side)."""
        rows, cols = grid_shape(self.n_cells)
        return self.cell_side * max(rows, cols)

    def validate(self) -> None:
        if self.n_cells < 1 or self.n_ues_per_cell < 1 or self.n_antennas < 1:
            raise ConfigError("n_cells, n_ues_per_cell and n_antennas must be >= 1")
        if self.cell_side <= 0 or self.p_max <= 0 or self.noise_power <= 0:
            raise ConfigError("cell_side, p_max and noise_power must be positive")
        if not self.min_bs_ue_distance < self.cell_side / 2:
            raise ConfigError("min_bs_ue_distance must be smaller than cell_side/2")
        grid_shape(self.n_cells)  # rejects unsupported cell counts


def grid_shape(n_cells: int) -> tuple[int, int]:
    """(rows, cols) of the cell grid; n_cells must be a perfect square or 2."""
    if n_cells == 2:
        return (1, 2)
    side = math.isqrt(n_cells)
    if side * side != n_cells:
        raise ConfigError(f"n_cells={n_cells} is neither a perfect square nor 2")
    return (side, side)


def bs_positions(config: NetworkConfig) -> np.ndarray:
    """BS coordinates (L, 2), cells row-major from the bottom-left corner."""
    rows, cols = grid_shape(config.n_cells)
    side = config.cell_side
    pos = np.empty((config.n_cells, 2))
    for r in range(rows):
        for c in range(cols):
            pos[r * cols + c] = ((c + 0.5) * side, (r + 0.5) * side)
    return pos


@dataclass
class NetworkRealization:
    bs_positions: np.ndarray   # (L, 2) meters
    ue_positions: np.ndarray   # (L, K, 2) meters
    rng_seed: int


def drop_ues(config: NetworkConfig, seed: int) -> NetworkRealization:
    """Drop K users uniformly in each cell, at least min_bs_ue_distance from the serving BS.

    Deterministic given (config, seed); rejection sampling terminates because
    the guard disk is strictly inside the cell.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    bs = bs_positions(config)
    L, K, side = config.n_cells, config.n_ues_per_cell, config.cell_side
    ue = np.empty((L, K, 2))
    for j in range(L):
        origin = bs[j] - side / 2
        placed = 0
        while placed < K:
            cand = origin + rng.random((K - placed, 2)) * side
            keep = np.hypot(*(cand - bs[j]).T) >= config.min_bs_ue_distance
            kept = cand[keep]
            ue[j, placed:placed + len(kept)] = kept
            placed += len(kept)
    return NetworkRealization(bs_positions=bs, ue_positions=ue, rng_seed=seed)


def large_scale_fading(d, config: NetworkConfig):
    """Linear power gain 10^((-ref_db - 10*exponent*log10(d/1km))/10); d in meters."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    loss_db = config.pathloss_ref_db + 10.0 * config.pathloss_exponent * np.log10(d / 1000.0)
    gain = 10.0 ** (-loss_db / 10.0)
    return float(gain) if gain.ndim == 0 else gain


@dataclass
class GainProfile:
    """Coefficients of the per-user SINR: a[j,k] serving gain, b[l,i,j,k] interference gain."""

    a: np.ndarray       # (L, K) linear
    b: np.ndarray       # (L, K, L, K) linear
    sigma2: float       # mW

    @property
    def n_cells(self) -> int:
        return self.a.shape[0]

    @property
    def n_ues_per_cell(self) -> int:
        return self.a.shape[1]

    def validate(self) -> None:
        L, K = self.a.shape
        if self.b.shape != (L, K, L, K):
            raise ValueError(f"b must have shape {(L, K, L, K)}, got {self.b.shape}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("gain entries must be finite")
        # b may contain exact zeros when the self term is excluded
        if np.any(self.a <= 0) or np.any(self.b < 0):
            raise ValueError("gains must be positive (a) / nonnegative (b)")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


def mr_gain_profile(real: NetworkRealization, config: NetworkConfig,
                    include_self_term: bool = True) -> GainProfile:
    """Maximum-ratio gain profile: a = M * beta(serving), b[l,i,j,k] = beta(BS l -> UE jk).

    The interference gain does not depend on the interfering user index i.
    With include_self_term the (l,i)=(j,k) entry keeps the non-coherent part
    of the own signal; otherwise it is zeroed.
    """
    L, K = config.n_cells, config.n_ues_per_cell
    # beta_to[l, j, k]: large-scale gain from BS l to UE k of cell j
    diff = real.ue_positions[None, :, :, :] - real.bs_positions[:, None, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    beta_to = large_scale_fading(dist, config)
    a = config.n_antennas * np.array([beta_to[j, j, :] for j in range(L)])
    b = np.broadcast_to(beta_to[:, None, :, :], (L, K, L, K)).copy()
    if not include_self_term:
        jj, kk = np.arange(L)[:, None], np.arange(K)[None, :]
        b[jj, kk, jj, kk] = 0.0
    profile = GainProfile(a=a, b=b, sigma2=config.noise_power)
    profile.validate()
    return profile


@dataclass(frozen=True)
class PositionScaler:
    """Affine map [min_coord, max_coord] -> [0, 1] applied per coordinate."""

    min_coord: float
    max_coord: float

    def __post_init__(self):
        if not self.max_coord > self.min_coord:
            raise ConfigError("max_coord must exceed min_coord")

    @property
    def span(self) -> float:
        return self.max_coord - self.min_coord


def default_scaler(config: NetworkConfig) -> PositionScaler:
    """Scaler over the full deployment box, so a normalized unit spans the grid width."""
    return PositionScaler(0.0, config.deployment_width)


def normalize_positions(real: NetworkRealization, scaler: PositionScaler) -> np.ndarray:
    """Flatten UE positions to a 2KL vector in [0,1].

    Coordinate order is cell-major, UE-minor, x before y:
    [c0u0x, c0u0y, c0u1x, ..., c1u0x, ...].
    """
    pos = real.ue_positions
    if np.any(pos < scaler.min_coord) or np.any(pos > scaler.max_coord):
        raise ValueError("UE coordinate outside scaler bounds")
    return ((pos - scaler.min_coord) / scaler.span).reshape(-1)


def denormalize_positions(x: np.ndarray, scaler: PositionScaler,
                          n_cells: int, n_ues_per_cell: int) -> np.ndarray:
    """Inverse of normalize_positions; returns (L, K, 2) meters."""
    x = np.asarray(x, dtype=float)
    if x.size != 2 * n_cells * n_ues_per_cell:
        raise ValueError("position vector length does not match 2*K*L")
    return x.reshape(n_cells, n_ues_per_cell, 2) * scaler.span + scaler.min_coord


# --- config file (flat "key = value" lines, keys named after NetworkConfig fields) ---

_INT_FIELDS = {"n_cells", "n_ues_per_cell", "n_antennas"}


def load_config(path) -> NetworkConfig:
    """Read a NetworkConfig from a key=value file; '#' starts a comment."""
    known = {f.name for f in fields(NetworkConfig)}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = int(val) if key in _INT_FIELDS else float(val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    config = NetworkConfig(**values)
    config.validate()
    return config


def save_config(config: NetworkConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(NetworkConfig):
            fh.write(f"{f.name} = {getattr(config, f.name)!r}\n")
