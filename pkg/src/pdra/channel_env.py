"""Random wireless environment: path loss, user placement and small-scale fading.

All sampling is driven by explicit seeds (numpy PCG64 generators), so any
batch can be reproduced bit-for-bit from (seed, shape) alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln, roots_genlaguerre

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

FADING_KINDS = ("gamma_nt", "exponential")


@dataclass(frozen=True)
class SystemConfig:
    """Physical and protocol constants of the downlink system.

    Defaults reproduce the simulation setup: 0.1 ms slots, 1 ms delay bound,
    1e-5 loss budget, 43 dBm / -173 dBm/Hz power figures, 20-byte packets,
    0.2 packets/slot Poisson arrivals, 8 BS antennas, 35.3 + 37.6 lg(d)
    path loss on a 50..250 m road.
    """

    slot_duration_Ts: float = 1e-4          # s
    tx_duration_tau: float = 0.5e-4         # s
    dl_delay_bound_Dmax: int = 10           # slots
    tx_delay_Dt: int = 1                    # slots
    dec_delay_Dc: int = 1                   # slots
    eps_max: float = 1e-5
    packet_bits_u: float = 160.0            # bits
    arrival_rate_a: float = 0.2             # packets/slot
    P_max: float = 10 ** (43 / 10) * 1e-3   # W (43 dBm)
    W_max: float = 20e6                     # Hz (not in the parameter table; see README)
    N0: float = 10 ** (-173 / 10) * 1e-3    # W/Hz (-173 dBm/Hz)
    num_antennas_Nt: int = 8
    pathloss_offset_dB: float = 35.3
    pathloss_slope_dB: float = 37.6         # dB per decade of distance
    cell_min_dist: float = 50.0             # m
    cell_max_dist: float = 250.0            # m
    fading_kind: str = "gamma_nt"

    def __post_init__(self):
        if not self.tx_duration_tau < self.slot_duration_Ts:
            raise ValueError("tx_duration_tau must be < slot_duration_Ts")
        if not self.tx_delay_Dt + self.dec_delay_Dc < self.dl_delay_bound_Dmax:
            raise ValueError("Dt + Dc must be < Dmax (queueing budget would be empty)")
        if not 0.0 < self.eps_max < 1.0:
            raise ValueError("eps_max must be in (0, 1)")
        for name in ("slot_duration_Ts", "tx_duration_tau", "packet_bits_u",
                     "arrival_rate_a", "P_max", "W_max", "N0",
                     "cell_min_dist", "cell_max_dist"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.cell_min_dist >= self.cell_max_dist:
            raise ValueError("cell_min_dist must be < cell_max_dist")
        if self.num_antennas_Nt < 1:
            raise ValueError("num_antennas_Nt must be >= 1")
        if self.fading_kind not in FADING_KINDS:
            raise ValueError(f"fading_kind must be one of {FADING_KINDS}")

    @property
    def dq_max_slots(self) -> int:
        """Queueing-delay budget: downlink bound minus fixed tx/decoding slots."""
        return self.dl_delay_bound_Dmax - self.tx_delay_Dt - self.dec_delay_Dc

    @property
    def p0_density(self) -> float:
        """Flat transmit spectral density P_max / W_max (W/Hz)."""
        return self.P_max / self.W_max

    @property
    def fading_mean(self) -> float:
        """Mean of the small-scale gain under the configured fading law."""
        return float(self.num_antennas_Nt) if self.fading_kind == "gamma_nt" else 1.0


@dataclass(frozen=True)
class ChannelBatch:
    """A seeded batch of channel realizations: K users, n_batch slots."""

    alphas: np.ndarray        # (K,) large-scale gains, linear
    gains: np.ndarray         # (n_batch, K) small-scale gains, linear
    seed: int
    slot_index: int = 0


def as_generator(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def pathloss_gain(distance_m, cfg: SystemConfig):
    """Linear large-scale gain at the given distance: -10 lg(a) = 35.3 + 37.6 lg(d)."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    loss_db = cfg.pathloss_offset_dB + cfg.pathloss_slope_dB * np.log10(d)
    gain = 10.0 ** (-loss_db / 10.0)
    return float(gain) if np.isscalar(distance_m) else gain


def alpha_db(alpha):
    """Large-scale gain in dB (10 lg a), used for feature normalization."""
    return 10.0 * np.log10(alpha)


def sample_users(k: int, placement: str, cfg: SystemConfig, seed):
    """Draw K user distances and the matching large-scale gains.

    placement 'uniform_road' puts users i.i.d. uniform on the configured
    road segment; 'cell_edge' puts everyone at the far end of the cell.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = as_generator(seed)
    if placement == "uniform_road":
        dists = rng.uniform(cfg.cell_min_dist, cfg.cell_max_dist, size=k)
    elif placement == "cell_edge":
        dists = np.full(k, cfg.cell_max_dist)
    else:
        raise ValueError(f"unknown placement {placement!r}")
    return dists, pathloss_gain(dists, cfg)


def sample_fading(k: int, n_batch: int, cfg: SystemConfig, seed) -> np.ndarray:
    """(n_batch, k) matrix of i.i.d. small-scale power gains.

    'exponential' is unit-mean Rayleigh power fading; 'gamma_nt' is the
    Gamma(N_t, 1) gain of coherent combining over N_t antennas (mean N_t).
    """
    if k < 1 or n_batch < 1:
        raise ValueError("counts must be >= 1")
    rng = as_generator(seed)
    if cfg.fading_kind == "exponential":
        return rng.exponential(1.0, size=(n_batch, k))
    return rng.gamma(shape=float(cfg.num_antennas_Nt), scale=1.0, size=(n_batch, k))


def sample_channel_batch(alphas, cfg: SystemConfig, n_batch: int, seed: int,
                         slot_index: int = 0) -> ChannelBatch:
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    gains = sample_fading(alphas.size, n_batch, cfg, seed)
    return ChannelBatch(alphas=alphas, gains=gains, seed=int(seed), slot_index=slot_index)


def fading_quadrature(cfg: SystemConfig, n_nodes: int = 160):
    """Gauss-Laguerre nodes/weights for expectations over the fading law.

    Returns (g_nodes, probs) with probs summing to 1, such that
    E{f(g)} ~= sum(probs * f(g_nodes)) for smooth f.
    """
    shape = float(cfg.num_antennas_Nt) if cfg.fading_kind == "gamma_nt" else 1.0
    nodes, weights = roots_genlaguerre(n_nodes, shape - 1.0)
    probs = weights / math.exp(gammaln(shape))
    probs = probs / probs.sum()  # remove residual quadrature normalization error
    return nodes, probs


# ---------------------------------------------------------------------------
# Config file I/O: a flat TOML document whose keys mirror SystemConfig fields.
# ---------------------------------------------------------------------------

def load_config(path) -> SystemConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_with_overrides(SystemConfig(), raw)


def config_with_overrides(cfg: SystemConfig, overrides: dict) -> SystemConfig:
    known = {f.name for f in dataclasses.fields(SystemConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(cfg, **overrides)


def config_to_dict(cfg: SystemConfig) -> dict:
    return dataclasses.asdict(cfg)


def write_default_config(path) -> None:
    """Write the shipped defaults as a flat TOML file."""
    lines = []
    for f in dataclasses.fields(SystemConfig):
        v = getattr(SystemConfig(), f.name)
        if isinstance(v, str):
            lines.append(f'{f.name} = "{v}"')
        else:
            lines.append(f"{f.name} = {v!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(cfg: SystemConfig) -> str:
    """Stable short hash of the full config, recorded in checkpoints/manifests."""
    canon = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
