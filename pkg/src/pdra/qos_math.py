"""Closed-form QoS mathematics for short-packet transmission under delay bounds.

Covers the inverse Gaussian Q-function, the finite-blocklength achievable
rate (dispersion factor approximated by 1), its partial derivatives, and
the effective-bandwidth / effective-capacity pair that turns a queueing
delay requirement into a constraint on the service-rate statistics.

Rates are in packets/slot, bandwidth in Hz, power in W throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcinv

from .channel_env import SystemConfig

LN2 = math.log(2.0)


def _maybe_scalar(x, *inputs):
    if all(np.isscalar(v) or np.ndim(v) == 0 for v in inputs):
        return float(x)
    return x


def inv_gaussian_q(p):
    """Inverse of the standard normal tail Q(x) = P(Z > x), for p in (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("p must lie strictly inside (0, 1)")
    return _maybe_scalar(math.sqrt(2.0) * erfcinv(2.0 * p_arr), p)


def qos_exponent(a, dq_max, eps_max):
    """Decay exponent of the queueing-delay tail: ln[1 - ln(eps/2)/(a*Dq)].

    Positive because ln(eps/2) < 0 on the valid domain eps in (0, 2).
    """
    a = np.asarray(a, dtype=float)
    dq = np.asarray(dq_max, dtype=float)
    if np.any(a <= 0) or np.any(dq <= 0):
        raise ValueError("arrival rate and delay budget must be positive")
    out = np.log1p(-np.log(np.asarray(eps_max, dtype=float) / 2.0) / (a * dq))
    return _maybe_scalar(out, a, dq_max, eps_max)


def effective_bandwidth(a, dq_max, eps_max):
    """Minimal constant service rate (packets/slot) meeting the delay tail target.

    Defined with |ln(eps/2)| so the value is positive and >= the mean arrival
    rate; the sign convention is discussed in the README.
    """
    theta = qos_exponent(a, dq_max, eps_max)
    out = -np.log(np.asarray(eps_max, dtype=float) / 2.0) / (np.asarray(dq_max, dtype=float) * theta)
    return _maybe_scalar(out, a, dq_max, eps_max)


@dataclass(frozen=True)
class QosTarget:
    """Per-user QoS quantities derived from (D_max, eps_max, arrival rate)."""

    dq_max: float     # slots available for queueing
    theta: float      # QoS exponent, nats/packet
    eb: float         # effective bandwidth, packets/slot
    eps_c: float      # decoding error probability budget
    eps_q: float      # queueing violation probability budget

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")

    @classmethod
    def from_config(cls, cfg: SystemConfig, arrival_rate: float | None = None) -> "QosTarget":
        a = cfg.arrival_rate_a if arrival_rate is None else arrival_rate
        dq = cfg.dq_max_slots
        return cls(
            dq_max=float(dq),
            theta=qos_exponent(a, dq, cfg.eps_max),
            eb=effective_bandwidth(a, dq, cfg.eps_max),
            eps_c=cfg.eps_max / 2.0,
            eps_q=cfg.eps_max / 2.0,
        )


def achievable_rate(W, P, alpha, g, cfg: SystemConfig):
    """Finite-blocklength rate in packets/slot, clamped at zero.

    s = (tau*W/(u ln2)) * [ln(1 + alpha*g*P/(N0*W)) - Qinv(eps/2)/sqrt(tau*W)],
    with s(0, .) = 0 by continuous extension and negative brackets clamped
    (a negative rate is unphysical and would blow up exp(-theta*s)).
    """
    W_arr = np.asarray(W, dtype=float)
    P_arr = np.asarray(P, dtype=float)
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    tau, u, n0 = cfg.tx_duration_tau, cfg.packet_bits_u, cfg.N0
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.asarray(alpha, dtype=float) * np.asarray(g, dtype=float) * P_arr / (n0 * W_arr)
        bracket = np.log1p(snr) - qinv / np.sqrt(tau * W_arr)
        s = (tau * W_arr / (u * LN2)) * bracket
    s = np.where(W_arr > 0.0, s, 0.0)
    out = np.maximum(s, 0.0)
    return _maybe_scalar(out, W, P, alpha, g)


def rate_dW(W, P, alpha, g, cfg: SystemConfig):
    """d(rate)/dW of the unclamped rate at fixed transmit power P.

    (1/(u ln2)) * (tau*[ln(1+gamma) - gamma/(1+gamma)] - (Qinv/2)*sqrt(tau/W)),
    gamma = alpha*g*P/(N0*W).  The SNR falls as W grows, hence the
    gamma/(1+gamma) term; contrast with rate_dW_fixed_density.
    """
    W_arr = np.asarray(W, dtype=float)
    if np.any(W_arr <= 0.0):
        raise ValueError("W must be positive")
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    tau, u = cfg.tx_duration_tau, cfg.packet_bits_u
    gamma = np.asarray(alpha, dtype=float) * np.asarray(g, dtype=float) * np.asarray(P, dtype=float) / (cfg.N0 * W_arr)
    out = (tau * (np.log1p(gamma) - gamma / (1.0 + gamma))
           - 0.5 * qinv * np.sqrt(tau / W_arr)) / (u * LN2)
    return _maybe_scalar(out, W, P, alpha, g)


def rate_dW_fixed_density(W, alpha, g, cfg: SystemConfig):
    """d(rate)/dW of the unclamped rate when power tracks bandwidth, P = P0*W.

    With the flat density P0 = P_max/W_max the SNR is alpha*g*P0/N0,
    independent of W:
    (1/(u ln2)) * (tau*ln(1 + alpha*g*P0/N0) - (Qinv/2)*sqrt(tau/W)).
    """
    W_arr = np.asarray(W, dtype=float)
    if np.any(W_arr <= 0.0):
        raise ValueError("W must be positive")
    qinv = inv_gaussian_q(cfg.eps_max / 2.0)
    tau, u = cfg.tx_duration_tau, cfg.packet_bits_u
    snr = np.asarray(alpha, dtype=float) * np.asarray(g, dtype=float) * cfg.p0_density / cfg.N0
    out = (tau * np.log1p(snr) - 0.5 * qinv * np.sqrt(tau / W_arr)) / (u * LN2)
    return _maybe_scalar(out, W, alpha, g)


def rate_dP(W, P, alpha, g, cfg: SystemConfig):
    """d(rate)/dP of the unclamped rate: (tau/(u ln2)) * (alpha*g/N0) / (1+gamma)."""
    W_arr = np.asarray(W, dtype=float)
    if np.any(W_arr <= 0.0):
        raise ValueError("W must be positive")
    ag = np.asarray(alpha, dtype=float) * np.asarray(g, dtype=float)
    gamma = ag * np.asarray(P, dtype=float) / (cfg.N0 * W_arr)
    out = (cfg.tx_duration_tau / (cfg.packet_bits_u * LN2)) * (ag / cfg.N0) / (1.0 + gamma)
    return _maybe_scalar(out, W, P, alpha, g)


def qos_gap(s_samples, target: QosTarget) -> float:
    """Empirical statistic-constraint residual mean(e^{-theta*s}) - e^{-theta*EB}.

    <= 0 means the delay-tail requirement is met on this batch.
    """
    s = np.asarray(s_samples, dtype=float)
    if s.size == 0:
        raise ValueError("batch must be nonempty")
    return float(np.mean(np.exp(-target.theta * s)) - math.exp(-target.theta * target.eb))


def effective_capacity(s_samples, theta: float) -> float:
    """Monte-Carlo effective capacity -(1/theta) ln E{e^{-theta*s}}, stabilized.

    The log-mean-exp is shifted by the max exponent so tiny rates cannot
    overflow and large ones cannot underflow to -inf.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    s = np.asarray(s_samples, dtype=float)
    if s.size == 0:
        raise ValueError("batch must be nonempty")
    z = -theta * s
    m = float(np.max(z))
    return -(m + math.log(float(np.mean(np.exp(z - m))))) / theta
