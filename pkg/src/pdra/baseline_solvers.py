"""Ground-truth solvers the learned policies are judged against.

* per-gain optimal bandwidth under a QoS-statistic constraint, both as the
  one-draw-per-slot stochastic iteration and as a fast deterministic
  bisection on a quadrature estimate of the constraint;
* the closed-form threshold power allocation of the symmetric multi-user
  case, with the active-set fixed point;
* the jointly optimal (bandwidth, power-policy) pair built from the two;
* the equal-power per-user baseline;
* classic water-filling with a bisected water level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel_env import (SystemConfig, as_generator, fading_quadrature,
                          pathloss_gain, sample_fading)
from .nn_core import LrSchedule
from .qos_math import LN2, QosTarget, achievable_rate, inv_gaussian_q

# ---------------------------------------------------------------------------
# Expected constraint statistic and its bisection root
# ---------------------------------------------------------------------------


def expected_qos_exp(W, alpha, cfg: SystemConfig, target: QosTarget,
                     fixed_power: float | None = None, n_nodes: int = 160):
    """Quadrature estimate of E_g{ e^{-theta * s(W)} }.

    With fixed_power=None the transmit power tracks bandwidth at the flat
    density P_max/W_max (single-user bandwidth problem); otherwise the
    total power is held at the given value while W varies.
    """
    nodes, probs = fading_quadrature(cfg, n_nodes)
    W_arr = np.atleast_1d(np.asarray(W, dtype=float))
    alpha_arr = np.broadcast_to(np.asarray(alpha, dtype=float), W_arr.shape)
    if fixed_power is None:
        P = cfg.p0_density * W_arr
    else:
        P = np.broadcast_to(np.asarray(fixed_power, dtype=float), W_arr.shape)
    s = achievable_rate(W_arr[:, None], P[:, None], alpha_arr[:, None],
                        nodes[None, :], cfg)
    vals = np.exp(-target.theta * s) @ probs
    return float(vals[0]) if np.isscalar(W) or np.ndim(W) == 0 else vals


def shannon_bandwidth_guess(alpha, cfg: SystemConfig, target: QosTarget,
                            fixed_power: float | None = None):
    """Initial W from the Shannon rate at the mean fading gain."""
    alpha_arr = np.asarray(alpha, dtype=float)
    if fixed_power is None:
        snr = alpha_arr * cfg.fading_mean * cfg.p0_density / cfg.N0
        w0 = cfg.packet_bits_u * target.eb * LN2 / (cfg.tx_duration_tau * np.log1p(snr))
    else:
        w0 = cfg.packet_bits_u * target.eb * LN2 / cfg.tx_duration_tau  # 1 bit/s/Hz start
        for _ in range(3):  # SNR depends on W here; a few fixed-point passes settle it
            snr = alpha_arr * cfg.fading_mean * fixed_power / (cfg.N0 * w0)
            w0 = cfg.packet_bits_u * target.eb * LN2 / (cfg.tx_duration_tau * np.log1p(snr))
    return w0


def optimal_bandwidth(alpha, cfg: SystemConfig, target: QosTarget,
                      fixed_power: float | None = None, rel_tol: float = 1e-8,
                      n_nodes: int = 160):
    """Per-gain optimal bandwidth W*(alpha): the root of E{e^{-theta s(W)}} = e^{-theta EB}.

    The left side is strictly decreasing in W (rate is nondecreasing in W),
    so the root is unique and bisection applies.  Vectorized over alpha.
    """
    alpha_arr = np.atleast_1d(np.asarray(alpha, dtype=float))
    rhs = math.exp(-target.theta * target.eb)

    def gap(w):
        return expected_qos_exp(w, alpha_arr, cfg, target, fixed_power, n_nodes) - rhs

    hi = np.maximum(shannon_bandwidth_guess(alpha_arr, cfg, target, fixed_power), 1.0)
    for _ in range(80):
        bad = gap(hi) > 0.0
        if not np.any(bad):
            break
        hi = np.where(bad, hi * 2.0, hi)
    else:
        raise RuntimeError("failed to bracket the bandwidth root from above")
    lo = hi / 2.0
    for _ in range(80):
        bad = gap(lo) < 0.0
        if not np.any(bad):
            break
        lo = np.where(bad, lo / 2.0, lo)
    else:
        raise RuntimeError("failed to bracket the bandwidth root from below")
    while np.max((hi - lo) / hi) > rel_tol:
        mid = 0.5 * (lo + hi)
        above = gap(mid) > 0.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    out = 0.5 * (lo + hi)
    return float(out[0]) if np.isscalar(alpha) or np.ndim(alpha) == 0 else out


# ---------------------------------------------------------------------------
# Stochastic bandwidth iteration (one fading draw per slot)
# ---------------------------------------------------------------------------


@dataclass
class StochasticSolveResult:
    bandwidth_Hz: float
    converged: bool
    iterations: int
    validation_gap: float
    trajectory: np.ndarray | None = None  # (n, 2) columns (t, W) when recorded


def stochastic_bandwidth_solve(alpha: float, cfg: SystemConfig, target: QosTarget,
                               schedule: LrSchedule | None = None,
                               max_iters: int = 300_000, seed=0,
                               fixed_power: float | None = None,
                               gap_tol: float = 1e-3,
                               validation_draws: int = 100_000,
                               min_iters: int = 20_000,
                               check_every: int = 5_000,
                               avg_window: int = 5_000,
                               record_every: int | None = None) -> StochasticSolveResult:
    """Single-user bandwidth by the projected stochastic iteration
    W <- [W + phi(t) (e^{-theta s} - e^{-theta EB})]^+, one gain draw per slot.

    The tail average of the trajectory is the returned estimate.  Every
    check_every slots (after a warm-up) it is validated twice: against the
    deterministic quadrature expectation and against a fresh Monte-Carlo
    batch of validation_draws gains; the solve stops when the quadrature
    gap is within 0.3*gap_tol and the Monte-Carlo gap within gap_tol.
    Non-convergence returns converged=False with the last iterate and gap.
    """
    rng = as_generator(seed)
    rng_val = as_generator(rng.integers(2 ** 63))
    w0 = float(shannon_bandwidth_guess(alpha, cfg, target, fixed_power))
    if schedule is None:
        # first step moves W by <= 10% of the initial guess, then O(1/t) decay
        schedule = LrSchedule(base=0.1 * w0, decay_rate=1e-3)
    tau, u, n0 = cfg.tx_duration_tau, cfg.packet_bits_u, cfg.N0
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    rate_coef = tau / (u * LN2)
    rhs = math.exp(-target.theta * target.eb)
    theta = target.theta
    p0 = cfg.p0_density

    W = w0
    ring = np.full(avg_window, w0)
    traj = [] if record_every is not None else None
    chunk = check_every
    t = 0
    result_gap = math.nan
    while t < max_iters:
        gains = sample_fading(1, chunk, cfg, rng)[:, 0]
        for g in gains:
            if fixed_power is None:
                snr = alpha * g * p0 / n0
            else:
                snr = alpha * g * fixed_power / (n0 * W) if W > 0 else math.inf
            s = rate_coef * W * (math.log1p(snr) - qinv / math.sqrt(tau * W)) if W > 0 else 0.0
            s = max(s, 0.0)
            W = max(W + schedule(t) * (math.exp(-theta * s) - rhs), 0.0)
            ring[t % avg_window] = W
            if traj is not None and t % record_every == 0:
                traj.append((t, W))
            t += 1
        if t >= max(min_iters, avg_window):
            w_bar = float(ring.mean())
            quad_gap = expected_qos_exp(w_bar, alpha, cfg, target, fixed_power) - rhs
            g_val = sample_fading(1, validation_draws, cfg, rng_val)[:, 0]
            if fixed_power is None:
                s_val = achievable_rate(w_bar, p0 * w_bar, alpha, g_val, cfg)
            else:
                s_val = achievable_rate(w_bar, fixed_power, alpha, g_val, cfg)
            mc_gap = float(np.mean(np.exp(-theta * s_val))) - rhs
            result_gap = mc_gap
            if abs(quad_gap) <= 0.3 * gap_tol and abs(mc_gap) <= gap_tol:
                return StochasticSolveResult(
                    bandwidth_Hz=w_bar, converged=True, iterations=t,
                    validation_gap=mc_gap,
                    trajectory=np.array(traj) if traj is not None else None)
    return StochasticSolveResult(
        bandwidth_Hz=float(ring.mean()), converged=False, iterations=t,
        validation_gap=result_gap,
        trajectory=np.array(traj) if traj is not None else None)


def stochastic_bandwidth_solve_batch(alphas, cfg: SystemConfig, target: QosTarget,
                                     schedule: LrSchedule | None = None,
                                     max_iters: int = 30_000, seed=0,
                                     avg_window: int = 5_000) -> np.ndarray:
    """The same projected stochastic iteration run on many independent
    single-user problems in parallel (used for supervised-learning labels).

    Fixed iteration budget and no validation gate: each returned value is
    the tail average of its own trajectory and carries the convergence
    noise the iteration has at that budget, which is what a label produced
    by the stochastic solver looks like.
    """
    alphas = np.asarray(alphas, dtype=float)
    rng = as_generator(seed)
    W = shannon_bandwidth_guess(alphas, cfg, target).copy()
    if schedule is None:
        base = 0.1 * float(np.median(W))
        schedule = LrSchedule(base=base, decay_rate=1e-3)
    tau, u, n0 = cfg.tx_duration_tau, cfg.packet_bits_u, cfg.N0
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    rate_coef = tau / (u * LN2)
    rhs = math.exp(-target.theta * target.eb)
    theta = target.theta
    snr_per_g = alphas * cfg.p0_density / n0

    acc = np.zeros_like(W)
    n_acc = 0
    avg_start = max_iters - avg_window
    chunk = 2_000
    t = 0
    while t < max_iters:
        gains = sample_fading(alphas.size, chunk, cfg, rng)
        for n in range(chunk):
            s = rate_coef * W * (np.log1p(snr_per_g * gains[n]) - qinv / np.sqrt(tau * W))
            np.maximum(s, 0.0, out=s)
            W = np.maximum(W + schedule(t) * (np.exp(-theta * s) - rhs), 0.0)
            if t >= avg_start:
                acc += W
                n_acc += 1
            t += 1
            if t >= max_iters:
                break
    return acc / n_acc


# ---------------------------------------------------------------------------
# Symmetric-case optimal power allocation (threshold structure on the simplex)
# ---------------------------------------------------------------------------


@dataclass
class SymmetricAllocResult:
    powers: np.ndarray        # (K,) watts
    active_set: np.ndarray    # indices with strictly positive power
    g_threshold: float        # users at or below this gain are muted
    residual: float           # |sum(powers) - P_max|


def power_exponent_eta(theta: float, W: float, cfg: SystemConfig) -> float:
    """eta = 1 / (1 + theta * tau * W / (u ln 2)), in (0, 1)."""
    return 1.0 / (1.0 + theta * cfg.tx_duration_tau * W / (cfg.packet_bits_u * LN2))


def symmetric_power_alloc(g, W: float, alpha: float, theta: float,
                          cfg: SystemConfig) -> SymmetricAllocResult:
    """Optimal per-realization power split when users share alpha, theta, W.

    Starts from the full user set, computes the gain threshold and the
    closed-form powers, drops users that would get nonpositive power, and
    repeats until stable (at most K passes).  The budget is spent exactly.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise ValueError("gains must be positive")
    K = g.size
    eta = power_exponent_eta(theta, W, cfg)
    a_over = alpha * cfg.P_max / (cfg.N0 * W)
    scale = cfg.N0 * W / alpha
    active = np.ones(K, dtype=bool)
    g_th = 0.0
    for _ in range(K + 1):
        ga = g[active]
        g_th = ((a_over + np.sum(1.0 / ga)) / np.sum(ga ** (eta - 1.0))) ** (-1.0 / eta)
        drop = active & (g <= g_th)
        if not drop.any():
            break
        active = active & ~drop
        assert active.any(), "active set emptied; impossible for positive gains"
    powers = np.zeros(K)
    powers[active] = (scale / g[active]) * ((g[active] / g_th) ** eta - 1.0)
    return SymmetricAllocResult(
        powers=powers,
        active_set=np.flatnonzero(active),
        g_threshold=float(g_th),
        residual=float(abs(powers.sum() - cfg.P_max)),
    )


def symmetric_power_alloc_batch(G, W: float, alpha: float, theta: float,
                                cfg: SystemConfig) -> np.ndarray:
    """Vectorized allocation over a (N, K) batch of gain vectors.

    Equivalent to calling symmetric_power_alloc row by row (the active set
    is always the top-m gains for a unique m); used for large validation
    batches.
    """
    G = np.asarray(G, dtype=float)
    N, K = G.shape
    eta = power_exponent_eta(theta, W, cfg)
    a_over = alpha * cfg.P_max / (cfg.N0 * W)
    order = np.argsort(-G, axis=1)
    gs = np.take_along_axis(G, order, axis=1)          # descending per row
    s_inv = np.cumsum(1.0 / gs, axis=1)                # over the top-m users
    s_pow = np.cumsum(gs ** (eta - 1.0), axis=1)
    g_th_m = ((a_over + s_inv) / s_pow) ** (-1.0 / eta)  # (N, K), threshold if top-m active
    ok = gs > g_th_m                                   # m-th member strictly above
    nxt = np.concatenate([gs[:, 1:], np.full((N, 1), -np.inf)], axis=1)
    valid = ok & (nxt <= g_th_m)                       # and the next user at/below
    m_idx = np.argmax(valid, axis=1)                   # unique valid m per row
    g_th = g_th_m[np.arange(N), m_idx]
    scale = cfg.N0 * W / alpha
    P_sorted = (scale / gs) * ((gs / g_th[:, None]) ** eta - 1.0)
    P_sorted[np.arange(K)[None, :] > m_idx[:, None]] = 0.0
    P = np.empty_like(P_sorted)
    np.put_along_axis(P, order, P_sorted, axis=1)
    return P


# ---------------------------------------------------------------------------
# Jointly optimal bandwidth + power policy (symmetric scenario)
# ---------------------------------------------------------------------------


@dataclass
class JointSolveResult:
    bandwidth_per_user_Hz: float
    total_bandwidth_Hz: float
    n_users: int
    converged: bool
    iterations: int
    validation_gap: float      # worst per-user gap on a fresh batch

    def power_policy(self, alpha, theta, cfg):
        W = self.bandwidth_per_user_Hz

        def policy(G):
            G = np.asarray(G, dtype=float)
            if G.ndim == 1:
                return symmetric_power_alloc(G, W, alpha, theta, cfg).powers
            return symmetric_power_alloc_batch(G, W, alpha, theta, cfg)

        return policy


def _joint_pooled_gap(W: float, G: np.ndarray, alpha: float, target: QosTarget,
                      cfg: SystemConfig) -> float:
    P = symmetric_power_alloc_batch(G, W, alpha, target.theta, cfg)
    s = achievable_rate(W, P, alpha, G, cfg)
    return float(np.mean(np.exp(-target.theta * s))) - math.exp(-target.theta * target.eb)


def joint_optimal_solve(cfg: SystemConfig, K: int, target: QosTarget,
                        alpha: float | None = None,
                        schedule: LrSchedule | None = None,
                        max_iters: int = 15_000, seed=0,
                        gap_tol: float = 1e-3,
                        refine_draws: int = 300_000,
                        validation_draws: int = 100_000) -> JointSolveResult:
    """Globally optimal shared bandwidth with the closed-form power policy.

    Outer stochastic iteration on W (the per-user constraint residual,
    averaged over the symmetric users, drives the update) with the
    threshold power allocation recomputed for every fading draw; the
    result is then polished by bisection on a common-random-numbers
    Monte-Carlo estimate of the pooled constraint before a fresh-batch
    per-user validation.
    """
    if alpha is None:
        alpha = pathloss_gain(cfg.cell_max_dist, cfg)
    rng = as_generator(seed)
    w0 = float(shannon_bandwidth_guess(alpha, cfg, target, fixed_power=cfg.P_max / K))
    if schedule is None:
        schedule = LrSchedule(base=0.1 * w0, decay_rate=1e-3)
    rhs = math.exp(-target.theta * target.eb)
    theta = target.theta

    W = w0
    chunk = 2_000
    t = 0
    while t < max_iters:
        gains = sample_fading(K, chunk, cfg, rng)
        for n in range(chunk):
            g = gains[n]
            P = symmetric_power_alloc(g, W, alpha, theta, cfg).powers
            s = achievable_rate(W, P, alpha, g, cfg)
            upd = float(np.mean(np.exp(-theta * s))) - rhs
            W = max(W + schedule(t) * upd, 1e-3 * w0)
            t += 1

    G_ref = sample_fading(K, refine_draws // K + 1, cfg, rng)
    lo, hi = W / 2.0, W * 2.0
    for _ in range(60):
        if _joint_pooled_gap(lo, G_ref, alpha, target, cfg) > 0:
            break
        lo /= 2.0
    for _ in range(60):
        if _joint_pooled_gap(hi, G_ref, alpha, target, cfg) < 0:
            break
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _joint_pooled_gap(mid, G_ref, alpha, target, cfg) > 0:
            lo = mid
        else:
            hi = mid
    W = 0.5 * (lo + hi)

    G_val = sample_fading(K, validation_draws, cfg, rng)
    P_val = symmetric_power_alloc_batch(G_val, W, alpha, theta, cfg)
    s_val = achievable_rate(W, P_val, alpha, G_val, cfg)
    per_user = np.mean(np.exp(-theta * s_val), axis=0) - rhs
    worst = float(np.max(np.abs(per_user)))
    return JointSolveResult(
        bandwidth_per_user_Hz=float(W), total_bandwidth_Hz=float(K * W),
        n_users=K, converged=worst <= max(gap_tol, 4.0 / math.sqrt(validation_draws)),
        iterations=t, validation_gap=worst)


# ---------------------------------------------------------------------------
# Equal-power per-user baseline
# ---------------------------------------------------------------------------


@dataclass
class EqualPowerResult:
    bandwidth_per_user_Hz: np.ndarray
    total_bandwidth_Hz: float
    feasible: bool
    per_user: list = field(default_factory=list)  # StochasticSolveResult per user


def equal_power_baseline(alphas, cfg: SystemConfig, targets, seed=0,
                         **solve_kwargs) -> EqualPowerResult:
    """Per-user bandwidth at the flat power density P_max/W_max (no power
    adaptation across users); infeasible when the sum exceeds W_max."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if isinstance(targets, QosTarget):
        targets = [targets] * alphas.size
    rng = as_generator(seed)
    per_user = []
    for a_k, tgt in zip(alphas, targets):
        per_user.append(stochastic_bandwidth_solve(
            float(a_k), cfg, tgt, seed=rng.integers(2 ** 63), **solve_kwargs))
    w = np.array([r.bandwidth_Hz for r in per_user])
    total = float(w.sum())
    return EqualPowerResult(bandwidth_per_user_Hz=w, total_bandwidth_Hz=total,
                            feasible=bool(total <= cfg.W_max), per_user=per_user)


# ---------------------------------------------------------------------------
# Classic water-filling
# ---------------------------------------------------------------------------


@dataclass
class WaterFillingResult:
    water_level: float
    ergodic_capacity_bps: float
    avg_power_W: float
    gains: np.ndarray
    probs: np.ndarray
    powers: np.ndarray

    def power_fn(self, alpha: float, W: float, cfg: SystemConfig):
        cutoff = cfg.N0 * W / alpha

        def policy(g):
            return np.maximum(self.water_level - cutoff / np.asarray(g, dtype=float), 0.0)

        return policy


def water_filling_solve(alpha: float, W: float, P_ave: float, cfg: SystemConfig,
                        gains=None, probs=None, rel_tol: float = 1e-6,
                        n_nodes: int = 256) -> WaterFillingResult:
    """P(g) = (mu - N0 W/(alpha g))^+ with mu bisected until E{P} = P_ave.

    The expectation runs over the configured fading law by quadrature, or
    over an explicit discrete distribution when (gains, probs) are given.
    Returns the achieved ergodic capacity E{W log2(1 + alpha g P/(N0 W))}.
    """
    if P_ave <= 0:
        raise ValueError("P_ave must be positive")
    if gains is None:
        gains, probs = fading_quadrature(cfg, n_nodes)
    gains = np.asarray(gains, dtype=float)
    probs = np.asarray(probs, dtype=float)
    cutoff = cfg.N0 * W / alpha

    def avg_power(mu):
        return float(np.maximum(mu - cutoff / gains, 0.0) @ probs)

    lo, hi = 0.0, max(P_ave, cutoff / np.max(gains)) * 2.0
    for _ in range(200):
        if avg_power(hi) >= P_ave:
            break
        hi *= 2.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if avg_power(mid) < P_ave:
            lo = mid
        else:
            hi = mid
        if abs(avg_power(mid) - P_ave) <= 0.05 * rel_tol * P_ave:
            break
    mu = 0.5 * (lo + hi)
    powers = np.maximum(mu - cutoff / gains, 0.0)
    capacity = float(W * (np.log2(np.maximum(gains * mu / cutoff, 1.0)) @ probs))
    return WaterFillingResult(water_level=float(mu), ergodic_capacity_bps=capacity,
                              avg_power_W=float(powers @ probs), gains=gains,
                              probs=probs, powers=powers)
