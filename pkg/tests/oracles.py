"""Independent reference values.

Closed forms are derived by hand from ``U = rho^s cos^{2s}(theta/2)``;
frozen numbers were computed once by the library and pinned to catch
regressions (they are not exact values).
"""
import math

from scipy import integrate


def dirichlet_U_unit_ball(s):
    """Full-ball ``int |y|^a |grad U|^2`` over ``B_1``, a = 1 - 2s.

    ``|grad U|^2 = s^2 rho^{2s-2} cos^{4s-2}(theta/2)`` so the radial
    integral is 1 and the angular one is a Beta function.
    """
    return s * s * 2 ** (2 - 2 * s) * math.pi / math.sin(math.pi * s)


def dirichlet_U_unit_ball_quad(s):
    """Same quantity by adaptive quadrature in polar coordinates (no closed form used)."""
    a = 1 - 2 * s

    def ang(th):
        return math.cos(th / 2) ** (4 * s - 2) * abs(math.sin(th)) ** a

    val, _ = integrate.quad(ang, 0, math.pi, limit=200)
    return 2 * s * s * val


def h3_infimum(s):
    """``inf U d_F^s / d_Z^{2s}`` over the upper half plane: ``2^{-2s}``, approached as theta -> pi."""
    return 2.0 ** (-2 * s)


def h3_ratio_direct(x, y, s):
    """The ratio for ``U`` from distances: ``F = {0}``, ``Z = {x <= 0, y = 0}``."""
    rho = math.hypot(x, y)
    d_zero = rho if x >= 0 else abs(y)
    # U = ((rho + x)/2)^s on y >= 0; for x < 0 use rho + x = y^2 / (rho - x)
    u = (0.5 * (rho + x) if x >= 0 else 0.5 * y * y / (rho - x)) ** s
    return u * rho ** s / d_zero ** (2 * s)


# Richardson limit of the discrete translation-stationary lambda at s = 1/2
LAMBDA_HALF = math.pi / 2

# frozen library outputs (regression pins, rtol 1e-9)
FROZEN = {
    "calibrate_lambda(0.25, 1/32)": 0.8488408688345039,
    "calibrate_lambda(0.5, 1/32)": 1.5890438968767455,
    "calibrate_lambda(0.75, 1/32)": 3.5428506643652327,
    "dirichlet U ball s=0.25 h=1/64": 0.8433865910301166,
    "dirichlet U ball s=0.5 h=1/64": 1.5728652073572902,
    "dirichlet U ball s=0.75 h=1/64": 3.506791813519623,
    "minimize U s=0.5 h=1/32 J": 3.1593529007592016,
}
