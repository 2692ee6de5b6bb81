"""Independent high-precision recomputation of the frozen QoS constants.

Run as a script to print the reference values asserted in test_qos_math.py
and test_acceptance.py.  Deliberately avoids the library under test and
scipy: the inverse Q-function is found by bisection on math.erfc, and the
closed-form quantities are evaluated with mpmath at 50 digits.
"""

import math

import mpmath

mpmath.mp.dps = 50


def gaussian_q(x: float) -> float:
    """Standard normal tail probability Q(x) via erfc."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def inv_gaussian_q_bisect(p: float, lo: float = -40.0, hi: float = 40.0) -> float:
    """Solve Q(x) = p by bisection. Q is strictly decreasing."""
    assert 0.0 < p < 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gaussian_q(mid) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def qos_exponent_mp(a, dq_max, eps_max):
    """ln(1 + |ln(eps/2)| / (a * Dq)) at 50 digits."""
    a, dq_max, eps_max = mpmath.mpf(a), mpmath.mpf(dq_max), mpmath.mpf(eps_max)
    return mpmath.log(1 - mpmath.log(eps_max / 2) / (a * dq_max))


def effective_bandwidth_mp(a, dq_max, eps_max):
    theta = qos_exponent_mp(a, dq_max, eps_max)
    return -mpmath.log(mpmath.mpf(eps_max) / 2) / (mpmath.mpf(dq_max) * theta)


def rate_mp(tau_w, snr, eps_max, u_bits):
    """Finite-blocklength rate for tau*W channel uses at the given SNR."""
    tau_w, snr = mpmath.mpf(tau_w), mpmath.mpf(snr)
    qinv = mpmath.mpf(inv_gaussian_q_bisect(eps_max / 2))
    return (tau_w / (u_bits * mpmath.log(2))) * (
        mpmath.log(1 + snr) - qinv / mpmath.sqrt(tau_w)
    )


def two_point_effective_capacity_mp(s_lo, s_hi, theta):
    s_lo, s_hi, theta = mpmath.mpf(s_lo), mpmath.mpf(s_hi), mpmath.mpf(theta)
    mean = (mpmath.exp(-theta * s_lo) + mpmath.exp(-theta * s_hi)) / 2
    return -mpmath.log(mean) / theta


def two_point_water_filling_mp(g_lo, g_hi, noise_over_gain, p_ave):
    """Water level for an equiprobable two-point fading law.

    P(g) = (mu - c/g)^+ with c = N0*W/alpha; E{P} = p_ave. Closed form per
    branch (both points active vs only the better one), picked consistently.
    """
    g_lo, g_hi = mpmath.mpf(g_lo), mpmath.mpf(g_hi)
    c, p_ave = mpmath.mpf(noise_over_gain), mpmath.mpf(p_ave)
    # both active: (mu - c/g_lo)/2 + (mu - c/g_hi)/2 = p_ave
    mu_both = p_ave + c * (1 / g_lo + 1 / g_hi) / 2
    if mu_both - c / g_lo > 0:
        return mu_both
    # only the strong point active: (mu - c/g_hi)/2 = p_ave
    return 2 * p_ave + c / g_hi


if __name__ == "__main__":
    print("Q^-1(0.05)        =", inv_gaussian_q_bisect(0.05))
    print("Q^-1(5e-6)        =", inv_gaussian_q_bisect(5e-6))
    print("theta(0.2,8,1e-5) =", qos_exponent_mp(0.2, 8, 1e-5))
    print("theta(1,10,0.2)   =", qos_exponent_mp(1, 10, 0.2))
    print("EB(0.2,8,1e-5)    =", effective_bandwidth_mp(0.2, 8, 1e-5))
    print("EB(1,10,0.2)      =", effective_bandwidth_mp(1, 10, 0.2))
    print("|ln(5e-6)|        =", -mpmath.log(mpmath.mpf(5e-6)))
    print("rate(tauW=50, snr=e^2-1, eps=1e-5, u=160) =",
          rate_mp(50, mpmath.e ** 2 - 1, 1e-5, 160))
    print("EC two-point {0.5,1.5}, theta=2 =",
          two_point_effective_capacity_mp(0.5, 1.5, 2))
    print("alpha(d=10m)  =", mpmath.mpf(10) ** (-(mpmath.mpf("35.3") + mpmath.mpf("37.6")) / 10))
    print("alpha(d=250m) exponent =", -(mpmath.mpf("35.3") + mpmath.mpf("37.6") * mpmath.log10(mpmath.mpf(250))) / 10)
