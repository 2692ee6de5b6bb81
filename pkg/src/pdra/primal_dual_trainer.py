"""Primal-dual unsupervised training of resource-allocation policies.

Three instantiations of the same max-min machinery (dual ascent on
multipliers, primal descent on policy parameters, plain SGD/SGA with
inverse-time learning rates):

* single-user bandwidth: a bandwidth net trained jointly with a Lagrange
  multiplier *network* over the per-gain QoS constraint;
* joint bandwidth/power for K users: a Softmax power-policy net plus
  scalar per-user bandwidths and multipliers over statistic constraints;
* water-filling: a power-policy net with one scalar multiplier on the
  average-power constraint (textbook sanity check of the machinery).

A supervised regression arm (trained on solver labels) is included for
comparison.  All training runs are deterministic given (config, seed).

Internally the bandwidth terms of every Lagrangian are expressed in units
of `w_unit` (default 1 MHz) so that multipliers and gradients are O(1);
the interfaces speak Hz.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel_env import (SystemConfig, alpha_db, as_generator, config_hash,
                          fading_quadrature, pathloss_gain, sample_fading,
                          sample_users)
from .nn_core import LrSchedule, Mlp, grads_l1
from .qos_math import LN2, QosTarget, inv_gaussian_q

DEFAULT_W_UNIT = 1e6   # Hz; bandwidth scale for nets and normalized losses

# learning rates used in the reference experiments
SINGLE_USER_SCHEDULE = LrSchedule(base=0.5, decay_rate=1e-4)
JOINT_SCHEDULE = LrSchedule(base=1.0, decay_rate=0.1)
# per-group rate factors on top of the shared schedule: the bandwidth group
# moves slower than the multipliers so pressure can build before W falls far
# from its guess, and the Softmax policy net moves slower still or its
# logits saturate winner-take-all while every constraint is still violated
JOINT_W_RATE = 0.3
JOINT_NET_RATE = 0.1


@dataclass(frozen=True)
class Diagnostics:
    """Per-slot convergence measurements on a held-out batch."""

    slot: int
    zeta: float   # sum of absolute mean gradients, all parameter groups
    xi: float     # mean positive QoS violation across users

    def __post_init__(self):
        if not (math.isfinite(self.zeta) and math.isfinite(self.xi)):
            raise ValueError("diagnostics must be finite")
        if self.xi < 0:
            raise ValueError("xi is a positive part, cannot be negative")


@dataclass
class TrainState:
    """Mutable bundle of everything a primal-dual run updates."""

    primal_nets: dict
    dual_net: Mlp | None
    scalar_multipliers: np.ndarray | None
    scalar_primal: np.ndarray | None
    iteration: int
    schedules: dict
    history: list = field(default_factory=list)


def alpha_feature(alpha, cfg: SystemConfig):
    """Large-scale gain in dB, affinely mapped to [-1, 1] over the cell range.

    Raw gains span many orders of magnitude and would saturate TanH.
    """
    lo = alpha_db(pathloss_gain(cfg.cell_max_dist, cfg))
    hi = alpha_db(pathloss_gain(cfg.cell_min_dist, cfg))
    return 2.0 * (alpha_db(alpha) - lo) / (hi - lo) - 1.0


def _feature_column(alpha, cfg):
    return np.atleast_1d(alpha_feature(alpha, cfg))[:, None]


def predict_bandwidth(w_net: Mlp, alphas, cfg: SystemConfig):
    """Evaluate a trained bandwidth net at raw large-scale gains -> Hz."""
    out = w_net.forward(_feature_column(alphas, cfg))[:, 0]
    return float(out[0]) if np.isscalar(alphas) or np.ndim(alphas) == 0 else out


def derived_bandwidth_scale(cfg: SystemConfig, target: QosTarget) -> float:
    """Output scale for bandwidth nets: the optimal bandwidth at the road
    midpoint.  Keeps the Softplus in its linear region around the answer.
    No labels are involved, just the same constraint statistic the
    training loss evaluates anyway."""
    from .baseline_solvers import optimal_bandwidth
    a_mid = pathloss_gain(0.5 * (cfg.cell_min_dist + cfg.cell_max_dist), cfg)
    return float(optimal_bandwidth(a_mid, cfg, target))




# ---------------------------------------------------------------------------
# Single-user bandwidth: W-net vs multiplier-net (instantaneous constraint)
# ---------------------------------------------------------------------------


@dataclass
class SingleUserResult:
    w_net: Mlp
    v_net: Mlp
    history: list          # (iteration, loss, mean gap) tuples
    diverged: bool
    seed: int


def default_bandwidth_net(cfg: SystemConfig, seed, w_scale: float,
                          hidden=(16,) * 6) -> Mlp:
    return Mlp.init([1, *hidden, 1], output_activation="softplus",
                    output_scale=w_scale, seed=seed)


def single_user_loss(w_net: Mlp, v_net: Mlp, alphas, gains, cfg: SystemConfig,
                     target: QosTarget, w_unit: float = DEFAULT_W_UNIT) -> float:
    """Empirical Lagrangian mean_n[ W_n/w_unit + v_n (e^{-theta s_n} - e^{-theta EB}) ].

    Pure function of the parameters for a fixed batch; the trainer's
    gradients are exactly its derivatives (finite-difference checkable).
    """
    x = _feature_column(alphas, cfg)
    W = w_net.forward(x)[:, 0]
    v = v_net.forward(x)[:, 0]
    snr = np.asarray(alphas) * np.asarray(gains) * cfg.p0_density / cfg.N0
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    tau, u = cfg.tx_duration_tau, cfg.packet_bits_u
    s = np.maximum((tau * W / (u * LN2)) * (np.log1p(snr) - qinv / np.sqrt(tau * W)), 0.0)
    rhs = math.exp(-target.theta * target.eb)
    return float(np.mean(W / w_unit + v * (np.exp(-target.theta * s) - rhs)))


def train_single_user_bandwidth(cfg: SystemConfig, target: QosTarget | None = None,
                                schedule: LrSchedule = SINGLE_USER_SCHEDULE,
                                n_iters: int = 10_000, batch_size: int = 100,
                                seed=0, w_scale: float | None = None,
                                v_scale: float = 2.0, hidden=(16,) * 6,
                                record_every: int = 200,
                                tail_avg_frac: float = 0.25) -> SingleUserResult:
    """Joint SGD/SGA on the bandwidth net (descent) and multiplier net (ascent).

    Each iteration draws batch_size large-scale gains from the road
    placement with one independent fading realization each, exactly the
    sampling the empirical Lagrangian averages over.  The returned nets
    carry the tail average of the trajectory over the final tail_avg_frac
    of the iterations, which strips most of the SGD jitter around the
    saddle point (set tail_avg_frac=0 for the raw last iterate).

    w_scale=None derives the net output scale from the config (see
    derived_bandwidth_scale); the same scale normalizes the bandwidth term
    of the Lagrangian, which puts the multiplier's stationary value at O(1).
    """
    if target is None:
        target = QosTarget.from_config(cfg)
    if w_scale is None:
        w_scale = derived_bandwidth_scale(cfg, target)
    rng = as_generator(seed)
    w_net = default_bandwidth_net(cfg, rng.integers(2 ** 63), w_scale, hidden)
    v_net = Mlp.init([1, *hidden, 1], output_activation="softplus",
                     output_scale=v_scale, seed=rng.integers(2 ** 63))
    avg_start = n_iters - int(tail_avg_frac * n_iters)
    w_avg = v_avg = None
    n_avg = 0

    tau, u, n0 = cfg.tx_duration_tau, cfg.packet_bits_u, cfg.N0
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    rate_coef = tau / (u * LN2)
    theta, rhs = target.theta, math.exp(-target.theta * target.eb)
    p0 = cfg.p0_density

    history, diverged = [], False
    for t in range(n_iters):
        _, alphas = sample_users(batch_size, "uniform_road", cfg, rng)
        g = sample_fading(batch_size, 1, cfg, rng)[0]
        x = _feature_column(alphas, cfg)
        W, w_cache = w_net.forward_cached(x)
        W = W[:, 0]
        v, v_cache = v_net.forward_cached(x)
        v = v[:, 0]

        snr = alphas * g * p0 / n0
        bracket = np.log1p(snr) - qinv / np.sqrt(tau * W)
        s_raw = rate_coef * W * bracket
        live = s_raw > 0.0
        exps = np.exp(-theta * np.maximum(s_raw, 0.0))
        # d s/dW at fixed spectral density, zero where the rate is clamped
        dsdW = (rate_coef * np.log1p(snr) - 0.5 * qinv * np.sqrt(tau) / (u * LN2 * np.sqrt(W))) * live

        cot_w = ((1.0 / w_scale - v * theta * dsdW * exps) / batch_size)[:, None]
        cot_v = ((exps - rhs) / batch_size)[:, None]
        w_net.sgd_step(w_net.backward_cached(w_cache, cot_w), schedule, t, "descent")
        v_net.sgd_step(v_net.backward_cached(v_cache, cot_v), schedule, t, "ascent")

        if t >= avg_start:
            n_avg += 1
            if w_avg is None:
                w_avg = w_net.get_flat_params()
                v_avg = v_net.get_flat_params()
            else:
                w_avg += (w_net.get_flat_params() - w_avg) / n_avg
                v_avg += (v_net.get_flat_params() - v_avg) / n_avg

        if t % record_every == 0 or t == n_iters - 1:
            loss = float(np.mean(W / w_scale + v * (exps - rhs)))
            gap = float(np.mean(exps) - rhs)
            history.append((t, loss, gap))
            if not math.isfinite(loss):
                diverged = True
                break
    if w_avg is not None and not diverged:
        w_net.set_flat_params(w_avg)
        v_net.set_flat_params(v_avg)
    return SingleUserResult(w_net=w_net, v_net=v_net, history=history,
                            diverged=diverged,
                            seed=int(seed) if isinstance(seed, (int, np.integer)) else -1)


# ---------------------------------------------------------------------------
# Supervised comparison arm: regression on solver labels
# ---------------------------------------------------------------------------


@dataclass
class SupervisedResult:
    w_net: Mlp
    mse_curve: list        # (iteration, mse on the full label set), normalized units
    diverged: bool


def train_supervised_bandwidth(cfg: SystemConfig, label_alphas, label_w_hz,
                               schedule: LrSchedule = SINGLE_USER_SCHEDULE,
                               n_iters: int = 10_000, batch_size: int = 100,
                               seed=0, w_scale: float | None = None,
                               hidden=(16,) * 6,
                               eval_every: int = 500) -> SupervisedResult:
    """Mean-squared-error regression of W*(alpha) with the same architecture
    and schedule as the unsupervised arm."""
    rng = as_generator(seed)
    if w_scale is None:
        w_scale = derived_bandwidth_scale(cfg, QosTarget.from_config(cfg))
    net = default_bandwidth_net(cfg, rng.integers(2 ** 63), w_scale, hidden)
    x_all = _feature_column(label_alphas, cfg)
    y_all = np.asarray(label_w_hz, dtype=float)
    n = y_all.size
    mse_curve, diverged = [], False

    def full_mse():
        pred = net.forward(x_all)[:, 0]
        return float(np.mean(((pred - y_all) / w_scale) ** 2))

    for t in range(n_iters):
        idx = rng.integers(0, n, size=batch_size)
        x = x_all[idx]
        pred, cache = net.forward_cached(x)
        cot = (2.0 * (pred[:, 0] - y_all[idx]) / (batch_size * w_scale ** 2))[:, None]
        net.sgd_step(net.backward_cached(cache, cot), schedule, t, "descent")
        if t % eval_every == 0 or t == n_iters - 1:
            m = full_mse()
            mse_curve.append((t, m))
            if not math.isfinite(m):
                diverged = True
                break
    return SupervisedResult(w_net=net, mse_curve=mse_curve, diverged=diverged)


# ---------------------------------------------------------------------------
# Joint bandwidth + power allocation (statistic constraints, Softmax policy)
# ---------------------------------------------------------------------------


@dataclass
class JointTrainResult:
    p_net: Mlp
    bandwidth_Hz: np.ndarray       # (K,)
    multipliers: np.ndarray        # (K,)
    history: list                  # Diagnostics per slot
    converged_slot: int | None
    diverged: bool
    validation_gap: np.ndarray | None = None   # per-user, fresh batch

    @property
    def total_bandwidth_Hz(self) -> float:
        return float(self.bandwidth_Hz.sum())

    def feasible(self, cfg: SystemConfig) -> bool:
        return self.total_bandwidth_Hz <= cfg.W_max

    def checkpoint(self) -> dict:
        return {"p_net": self.p_net.to_dict(),
                "bandwidth_Hz": self.bandwidth_Hz.tolist(),
                "multipliers": self.multipliers.tolist()}


def save_joint_checkpoint(result: JointTrainResult, path, cfg: SystemConfig,
                          seed: int, slot: int) -> None:
    payload = result.checkpoint()
    payload.update({"t": int(slot), "seed": int(seed), "config_hash": config_hash(cfg)})
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_joint_checkpoint(path) -> dict:
    with open(path) as fh:
        d = json.load(fh)
    return {"p_net": Mlp.from_dict(d["p_net"]),
            "bandwidth_Hz": np.array(d["bandwidth_Hz"], dtype=float),
            "multipliers": np.array(d["multipliers"], dtype=float),
            "t": d.get("t"), "seed": d.get("seed"),
            "config_hash": d.get("config_hash")}


def _joint_terms(p_net: Mlp, w_hz: np.ndarray, lam: np.ndarray,
                 alphas: np.ndarray, thetas: np.ndarray, rhs: np.ndarray,
                 gains: np.ndarray, cfg: SystemConfig, w_unit: float):
    """Gradient assembly shared by the training step and the diagnostics.

    Returns (net grads, dL/dW in w_unit units, dL/dlambda, mean e^{-theta s},
    loss value).  The policy-net cotangent is
    -(1/N) lam_k theta_k (ds/dP) e^{-theta s} per sample and output.
    """
    n = gains.shape[0]
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    tau, u, n0 = cfg.tx_duration_tau, cfg.packet_bits_u, cfg.N0
    rate_coef = tau / (u * LN2)

    x = gains / cfg.fading_mean
    P, cache = p_net.forward_cached(x)
    snr = alphas * gains * P / (n0 * w_hz)
    bracket = np.log1p(snr) - qinv / np.sqrt(tau * w_hz)
    s_raw = rate_coef * w_hz * bracket
    live = s_raw > 0.0
    exps = np.exp(-thetas * np.maximum(s_raw, 0.0))
    mean_exps = exps.mean(axis=0)

    dsdP = rate_coef * (alphas * gains / n0) / (1.0 + snr) * live
    cot_p = -(lam * thetas / n) * dsdP * exps
    net_grads = p_net.backward_cached(cache, cot_p)

    dsdW = (tau * (np.log1p(snr) - snr / (1.0 + snr))
            - 0.5 * qinv * np.sqrt(tau / w_hz)) / (u * LN2) * live
    dL_dw = 1.0 - lam * thetas * (dsdW * exps).mean(axis=0) * w_unit
    dL_dlam = mean_exps - rhs
    loss = float(np.sum(w_hz / w_unit + lam * dL_dlam))
    return net_grads, dL_dw, dL_dlam, mean_exps, loss


def joint_loss(p_net: Mlp, w_hz, lam, alphas, targets, gains,
               cfg: SystemConfig, w_unit: float = DEFAULT_W_UNIT) -> float:
    """Empirical joint Lagrangian on a fixed batch (for derivative checks)."""
    thetas = np.array([t.theta for t in targets])
    rhs = np.exp(-thetas * np.array([t.eb for t in targets]))
    *_, loss = _joint_terms(p_net, np.asarray(w_hz, dtype=float),
                            np.asarray(lam, dtype=float), np.asarray(alphas, dtype=float),
                            thetas, rhs, np.asarray(gains, dtype=float), cfg, w_unit)
    return loss


def compute_diagnostics(p_net: Mlp, w_hz, lam, alphas, targets,
                        cfg: SystemConfig, gains, slot: int = 0,
                        w_unit: float = DEFAULT_W_UNIT) -> Diagnostics:
    """zeta (L1 norm of all mean gradients) and xi (mean positive QoS
    violation) on a held-out batch, through the training code path."""
    thetas = np.array([t.theta for t in targets])
    rhs = np.exp(-thetas * np.array([t.eb for t in targets]))
    net_grads, dL_dw, dL_dlam, mean_exps, _ = _joint_terms(
        p_net, np.asarray(w_hz, dtype=float), np.asarray(lam, dtype=float),
        np.asarray(alphas, dtype=float), thetas, rhs,
        np.asarray(gains, dtype=float), cfg, w_unit)
    zeta = grads_l1(net_grads) + float(np.abs(dL_dw).sum()) + float(np.abs(dL_dlam).sum())
    xi = float(np.mean(np.maximum(mean_exps / rhs - 1.0, 0.0)))
    return Diagnostics(slot=slot, zeta=zeta, xi=xi)


def train_joint_bw_power(cfg: SystemConfig, alphas, targets=None,
                         n_slots: int = 3_000, iters_per_slot: int = 10,
                         batch_size: int = 100, seed=0, init: dict | None = None,
                         schedule: LrSchedule = JOINT_SCHEDULE,
                         w_unit: float | None = None,
                         zeta_tol: float = 0.01, xi_tol: float = 0.01,
                         val_draws: int = 20_000, confirm_draws: int = 200_000,
                         stop_on_converged: bool = True,
                         validation_draws: int = 0) -> JointTrainResult:
    """Primal-dual learner for the two-timescale bandwidth/power problem.

    One fading vector arrives per slot and joins a sliding batch of the
    batch_size most recent realizations, which is replayed for
    iters_per_slot gradient passes (all at the slot's learning rate).
    The Softmax output pins sum_k P_k = P_max and P_k >= 0 by construction;
    W_k and lambda_k stay nonnegative through positive-part projections
    (W_k is floored at a fifth of its Shannon guess rather than 0 so the
    finite-blocklength rate stays live; the multiplier pressure lifts it
    back up from there).
    Convergence is declared at the first slot where zeta < zeta_tol and
    xi < xi_tol on a fixed held-out batch of val_draws realizations,
    confirmed on a larger held-out batch of confirm_draws (the small batch
    alone would leave a Monte-Carlo floor above the threshold for larger K).

    w_unit=None derives the bandwidth unit of the normalized Lagrangian
    from the per-user Shannon guesses, keeping every parameter group's
    gradient O(1).  init=None draws a fresh network; otherwise pass a
    checkpoint dict with keys p_net / bandwidth_Hz / multipliers
    (pre-training hand-off).
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    K = alphas.size
    if targets is None:
        targets = [QosTarget.from_config(cfg)] * K
    thetas = np.array([t.theta for t in targets])
    rhs = np.exp(-thetas * np.array([t.eb for t in targets]))

    rng = as_generator(seed)
    w0 = np.empty(K)
    for k in range(K):
        snr0 = alphas[k] * cfg.fading_mean * (cfg.P_max / K) / cfg.N0
        w0[k] = cfg.packet_bits_u * targets[k].eb * LN2 / cfg.tx_duration_tau
        for _ in range(3):
            w0[k] = (cfg.packet_bits_u * targets[k].eb * LN2
                     / (cfg.tx_duration_tau * math.log1p(snr0 / w0[k])))
    if w_unit is None:
        w_unit = float(np.median(w0))
    # floor at a fifth of each user's Shannon guess: low enough never to bind
    # at the optimum, high enough that the rate (and its W-gradient) stays
    # live, so the multiplier pressure can always pull W back up
    w_floor = 0.2 * w0
    if init is None:
        p_net = Mlp.init([K, K, K, K], output_activation="scaled_softmax",
                         output_scale=cfg.P_max, seed=rng.integers(2 ** 63))
        w_hz = w0
        lam = np.ones(K)
    else:
        p_net = init["p_net"].copy()
        w_hz = np.array(init["bandwidth_Hz"], dtype=float).copy()
        lam = np.array(init["multipliers"], dtype=float).copy()

    window = sample_fading(K, batch_size, cfg, rng)
    rng_val = as_generator(rng.integers(2 ** 63))
    val_gains = sample_fading(K, val_draws, cfg, rng_val)
    confirm_gains = None  # drawn lazily on the first candidate slot

    history, converged_slot, diverged = [], None, False
    for slot in range(1, n_slots + 1):
        window[(slot - 1) % batch_size] = sample_fading(K, 1, cfg, rng)[0]
        lr = schedule(slot - 1)
        net_step = LrSchedule(base=JOINT_NET_RATE * lr)  # shared across the slot
        for _ in range(iters_per_slot):
            net_grads, dL_dw, dL_dlam, _, loss = _joint_terms(
                p_net, w_hz, lam, alphas, thetas, rhs, window, cfg, w_unit)
            if not math.isfinite(loss):
                diverged = True
                break
            p_net.sgd_step(net_grads, net_step, 0, "descent")
            w_hz = np.maximum(w_hz - JOINT_W_RATE * lr * dL_dw * w_unit, w_floor)
            lam = np.maximum(lam + lr * dL_dlam, 0.0)
        if diverged:
            break
        diag = compute_diagnostics(p_net, w_hz, lam, alphas, targets, cfg,
                                   val_gains, slot=slot, w_unit=w_unit)
        if converged_slot is None and diag.zeta < zeta_tol and diag.xi < xi_tol:
            if confirm_gains is None:
                confirm_gains = sample_fading(K, confirm_draws, cfg, rng_val)
            diag = compute_diagnostics(p_net, w_hz, lam, alphas, targets, cfg,
                                       confirm_gains, slot=slot, w_unit=w_unit)
            if diag.zeta < zeta_tol and diag.xi < xi_tol:
                converged_slot = slot
        history.append(diag)
        if converged_slot is not None and stop_on_converged:
            break

    val_gap = None
    if validation_draws > 0:
        big = sample_fading(K, validation_draws, cfg, as_generator(rng.integers(2 ** 63)))
        *_, mean_exps, _ = _joint_terms(p_net, w_hz, lam, alphas, thetas, rhs,
                                        big, cfg, w_unit)
        val_gap = mean_exps - rhs
    return JointTrainResult(p_net=p_net, bandwidth_Hz=w_hz, multipliers=lam,
                            history=history, converged_slot=converged_slot,
                            diverged=diverged, validation_gap=val_gap)


# ---------------------------------------------------------------------------
# Pre-training / fine-tuning under mobility
# ---------------------------------------------------------------------------


@dataclass
class PretrainPair:
    epoch: int
    slots_random: int
    slots_pretrained: int
    censored_random: bool
    censored_pretrained: bool


@dataclass
class PretrainRunResult:
    pairs: list
    slot_cap: int


def _advance_reflect(d: np.ndarray, delta: float, lo: float, hi: float) -> np.ndarray:
    """Advance distances along the road, reflecting at the segment ends."""
    span = hi - lo
    x = np.mod(d - lo + delta, 2.0 * span)
    return lo + np.where(x <= span, x, 2.0 * span - x)


def pretrain_finetune_run(cfg: SystemConfig, K: int, n_epochs: int = 1,
                          velocity_mps: float = 20.0, update_interval_s: float = 0.1,
                          seed=0, slot_cap: int = 3_000,
                          **trainer_kwargs) -> PretrainRunResult:
    """Paired convergence counts with and without checkpoint initialization.

    Users move along the road; at each position epoch the joint learner is
    trained twice on identical channels: from random initial values and
    from the previous epoch's converged state.  Counts are capped at
    slot_cap and flagged as censored when the rule never fires.
    """
    rng = as_generator(seed)
    dists, _ = sample_users(K, "uniform_road", cfg, rng.integers(2 ** 63))
    alphas = pathloss_gain(dists, cfg)
    pre = train_joint_bw_power(cfg, alphas, seed=rng.integers(2 ** 63),
                               n_slots=slot_cap, init=None, **trainer_kwargs)
    ckpt = pre.checkpoint()
    ckpt["p_net"] = pre.p_net
    ckpt["bandwidth_Hz"] = pre.bandwidth_Hz
    ckpt["multipliers"] = pre.multipliers

    pairs = []
    step_m = velocity_mps * update_interval_s
    for epoch in range(1, n_epochs + 1):
        dists = _advance_reflect(dists, step_m, cfg.cell_min_dist, cfg.cell_max_dist)
        alphas = pathloss_gain(dists, cfg)
        data_seed = rng.integers(2 ** 63)
        r_rand = train_joint_bw_power(cfg, alphas, seed=data_seed,
                                      n_slots=slot_cap, init=None, **trainer_kwargs)
        r_pre = train_joint_bw_power(cfg, alphas, seed=data_seed,
                                     n_slots=slot_cap, init=ckpt, **trainer_kwargs)
        pairs.append(PretrainPair(
            epoch=epoch,
            slots_random=r_rand.converged_slot or slot_cap,
            slots_pretrained=r_pre.converged_slot or slot_cap,
            censored_random=r_rand.converged_slot is None,
            censored_pretrained=r_pre.converged_slot is None))
        ckpt = {"p_net": r_pre.p_net, "bandwidth_Hz": r_pre.bandwidth_Hz,
                "multipliers": r_pre.multipliers}
    return PretrainRunResult(pairs=pairs, slot_cap=slot_cap)


# ---------------------------------------------------------------------------
# Water-filling through the same machinery (one statistic constraint)
# ---------------------------------------------------------------------------


@dataclass
class WaterFillingTrainResult:
    p_net: Mlp
    multiplier: float
    history: list
    diverged: bool
    ergodic_capacity_bps: float
    avg_power_W: float


def train_water_filling(cfg: SystemConfig, alpha: float, W: float, P_ave: float,
                        n_iters: int = 20_000, batch_size: int = 100, seed=0,
                        net_schedule: LrSchedule | None = None,
                        lam_schedule: LrSchedule | None = None,
                        hidden=(16, 16, 16), record_every: int = 500) -> WaterFillingTrainResult:
    """Learn the ergodic-capacity power policy under E{P} <= P_ave.

    Primal descent on a Softplus power net (output scale P_ave), dual
    ascent on the scalar multiplier of the average-power constraint; the
    loss trades -log2(1 + SNR) against lambda * (P/P_ave - 1).
    """
    if net_schedule is None:
        net_schedule = LrSchedule(base=0.2, decay_rate=5e-4)
    if lam_schedule is None:
        lam_schedule = LrSchedule(base=0.5, decay_rate=5e-4)
    rng = as_generator(seed)
    net = Mlp.init([1, *hidden, 1], output_activation="softplus",
                   output_scale=P_ave, seed=rng.integers(2 ** 63))
    lam = 1.0
    rho = alpha / (cfg.N0 * W)
    g_mean = cfg.fading_mean

    history, diverged = [], False
    for t in range(n_iters):
        g = sample_fading(1, batch_size, cfg, rng)[:, 0]
        x = (g / g_mean)[:, None]
        P, cache = net.forward_cached(x)
        P = P[:, 0]
        dcap_dP = rho * g / ((1.0 + rho * g * P) * LN2)     # bits per W
        cot = ((-dcap_dP + lam / P_ave) / batch_size)[:, None]
        net.sgd_step(net.backward_cached(cache, cot), net_schedule, t, "descent")
        gap = float(np.mean(P) / P_ave - 1.0)
        lam = max(lam + lam_schedule(t) * gap, 0.0)
        if t % record_every == 0 or t == n_iters - 1:
            loss = float(np.mean(-np.log2(1.0 + rho * g * P)) + lam * gap)
            history.append((t, loss, gap, lam))
            if not math.isfinite(loss):
                diverged = True
                break

    nodes, probs = fading_quadrature(cfg, 256)
    P_nodes = net.forward((nodes / g_mean)[:, None])[:, 0]
    capacity = float(W * (np.log2(1.0 + rho * nodes * P_nodes) @ probs))
    avg_power = float(P_nodes @ probs)
    return WaterFillingTrainResult(p_net=net, multiplier=float(lam), history=history,
                                   diverged=diverged, ergodic_capacity_bps=capacity,
                                   avg_power_W=avg_power)
