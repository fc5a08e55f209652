"""Inflammation dynamics: raw and rearranged right-hand sides and derivatives.

State order is ``x = (P, N, D, Ca)``: pathogen, early pro-inflammatory
mediators, tissue damage, anti-inflammatory mediators.  Control order is
``u = (up, ua)``; both controls enter additively (``up`` into the N equation,
``ua`` into the Ca equation), so the control matrix is constant.

All functions broadcast over leading axes: ``x`` may be ``(4,)`` or
``(m, 4)`` and the outputs gain the same leading shape.  Evaluation is pure.
"""

from __future__ import annotations

import numpy as np

from .params import ModelParams, RawParams

__all__ = [
    "CONTROL_MATRIX",
    "hill_inhibit",
    "rhs_raw",
    "rhs",
    "jac_x",
    "hess_x",
    "jac_u",
]

# du/dstate coupling of Eq. ẋ = f(x) + G u: rows (P, N, D, Ca) x cols (up, ua)
CONTROL_MATRIX = np.array(
    [
        [0.0, 0.0],
        [1.0, 0.0],
        [0.0, 0.0],
        [0.0, 1.0],
    ]
)


def _pow6(y):
    y2 = y * y
    return y2 * y2 * y2


def hill_inhibit(x, ca, c_inf):
    """Downregulation by the anti-inflammatory mediator: x / (1 + (Ca/c_inf)^2)."""
    ratio = ca / c_inf
    return x / (1.0 + ratio * ratio)


def _split_state(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2], x[..., 3]


def _split_control(u):
    u = np.asarray(u, dtype=float)
    return u[..., 0], u[..., 1]


def rhs_raw(x, u, raw: RawParams):
    """Time derivative of the state in the raw rate-law form.

    Written exactly as the model is usually stated: logistic pathogen growth,
    a saturating non-specific clearance term, phagocyte activation through an
    inhibited saturating response, an order-6 damage switch, and saturating
    anti-inflammatory production, plus the two additive dose rates.
    """
    P, N, D, Ca = _split_state(x)
    up, ua = _split_control(u)

    fN = hill_inhibit(N, Ca, raw.c_inf)
    R = hill_inhibit(raw.k_np * P + raw.k_nn * N + raw.k_nd * D, Ca, raw.c_inf)
    fND = hill_inhibit(N + raw.k_cnd * D, Ca, raw.c_inf)
    fN6 = _pow6(fN)

    dP = (
        raw.k_pg * P * (1.0 - P / raw.p_inf)
        - raw.k_pm * raw.s_m * P / (raw.mu_m + raw.k_mp * P)
        - raw.k_pn * fN * P
    )
    dN = raw.s_nr * R / (raw.mu_nr + R) - raw.mu_n * N + up
    dD = raw.k_dn * fN6 / (_pow6(raw.x_dn) + fN6) - raw.mu_d * D
    dCa = raw.s_c + raw.k_cn * fND / (1.0 + fND) - raw.mu_c * Ca + ua
    return np.stack([dP, dN, dD, dCa], axis=-1)


def _pieces(x, p: ModelParams):
    """Shared subexpressions of the rearranged form and its derivatives."""
    P, N, D, Ca = _split_state(x)
    ca2 = Ca * Ca
    den1 = p.d + p.e * P  # local-clearance denominator
    gca = p.g + ca2  # inhibition factor, cleared
    num2 = p.h * P + p.i * N + p.j * D
    den2 = p.k * P + p.l * N + p.m * D + p.n * ca2 + p.o
    B = p.r + p.s * ca2  # damage-switch half-saturation, cleared
    N6 = _pow6(N)
    den3 = _pow6(B) + p.t * N6
    num4 = p.u * N + p.v * D
    den4 = p.g + ca2 + p.g * N + p.w * D
    return P, N, D, Ca, ca2, den1, gca, num2, den2, B, N6, den3, num4, den4


def rhs(x, u, p: ModelParams):
    """Time derivative in the rearranged rational form, ``f(x) + G u``.

    Pointwise equal to :func:`rhs_raw` when ``p`` was derived from the same
    raw set; this form is the one differentiated throughout the toolkit.
    """
    P, N, D, Ca, ca2, den1, gca, num2, den2, B, N6, den3, num4, den4 = _pieces(x, p)
    up, ua = _split_control(u)

    dP = p.a * P - p.b * P * P - p.c * P / den1 - p.z * P * N / gca
    dN = num2 / den2 - p.p * N + up
    dD = p.q * N6 / den3 - p.mu_d * D
    dCa = p.s_c + num4 / den4 - p.mu_c * Ca + ua
    return np.stack([dP, dN, dD, dCa], axis=-1)


def jac_u(x, p: ModelParams):
    """Control Jacobian; constant because the controls enter additively."""
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(CONTROL_MATRIX, x.shape[:-1] + (4, 2)).copy()


def jac_x(x, u, p: ModelParams):
    """State Jacobian of the rearranged form, shape ``(..., 4, 4)``."""
    P, N, D, Ca, ca2, den1, gca, num2, den2, B, N6, den3, num4, den4 = _pieces(x, p)

    out = np.zeros(np.shape(P) + (4, 4), dtype=float)

    gca2 = gca * gca
    out[..., 0, 0] = p.a - 2.0 * p.b * P - p.c * p.d / (den1 * den1) - p.z * N / gca
    out[..., 0, 1] = -p.z * P / gca
    out[..., 0, 3] = 2.0 * p.z * P * N * Ca / gca2

    den2sq = den2 * den2
    out[..., 1, 0] = (p.h * den2 - p.k * num2) / den2sq
    out[..., 1, 1] = (p.i * den2 - p.l * num2) / den2sq - p.p
    out[..., 1, 2] = (p.j * den2 - p.m * num2) / den2sq
    out[..., 1, 3] = -2.0 * p.n * Ca * num2 / den2sq

    N4 = N * N
    N4 = N4 * N4
    N5 = N4 * N
    B2 = B * B
    B4 = B2 * B2
    B5 = B4 * B
    B6 = B5 * B
    den3sq = den3 * den3
    out[..., 2, 1] = 6.0 * p.q * N5 * B6 / den3sq
    out[..., 2, 2] = -p.mu_d
    out[..., 2, 3] = -12.0 * p.q * p.s * N6 * Ca * B5 / den3sq

    den4sq = den4 * den4
    out[..., 3, 1] = (p.u * den4 - p.g * num4) / den4sq
    out[..., 3, 2] = (p.v * den4 - p.w * num4) / den4sq
    out[..., 3, 3] = -2.0 * Ca * num4 / den4sq - p.mu_c
    return out


def hess_x(x, p: ModelParams):
    """Second state derivatives, shape ``(..., 4, 4, 4)``.

    ``hess_x(x, p)[..., i, j, k]`` is d2 f_i / dx_j dx_k; each slice is
    symmetric.  The controls never appear: f is affine in u.
    """
    P, N, D, Ca, ca2, den1, gca, num2, den2, B, N6, den3, num4, den4 = _pieces(x, p)

    T = np.zeros(np.shape(P) + (4, 4, 4), dtype=float)

    # f1 = aP - bP^2 - cP/den1 - zPN/gca
    gca2 = gca * gca
    gca3 = gca2 * gca
    T[..., 0, 0, 0] = -2.0 * p.b + 2.0 * p.c * p.d * p.e / (den1 * den1 * den1)
    T[..., 0, 0, 1] = -p.z / gca
    T[..., 0, 0, 3] = 2.0 * p.z * N * Ca / gca2
    T[..., 0, 1, 3] = 2.0 * p.z * P * Ca / gca2
    T[..., 0, 3, 3] = 2.0 * p.z * P * N * (p.g - 3.0 * ca2) / gca3

    # f2 = num2/den2 - pN: num2, den2 linear in (P,N,D), den2 quadratic in Ca
    den2sq = den2 * den2
    den2cb = den2sq * den2
    nlin = (p.h, p.i, p.j)
    dlin = (p.k, p.l, p.m)
    for a_ in range(3):
        for b_ in range(a_, 3):
            T[..., 1, a_, b_] = (
                -(nlin[a_] * dlin[b_] + nlin[b_] * dlin[a_]) / den2sq
                + 2.0 * num2 * dlin[a_] * dlin[b_] / den2cb
            )
        dca = 2.0 * p.n * Ca
        T[..., 1, a_, 3] = -nlin[a_] * dca / den2sq + 2.0 * num2 * dlin[a_] * dca / den2cb
    T[..., 1, 3, 3] = -2.0 * p.n * num2 / den2sq + 8.0 * p.n * p.n * ca2 * num2 / den2cb

    # f3 = q N^6 / (B^6 + t N^6)
    N2 = N * N
    N4 = N2 * N2
    N5 = N4 * N
    B2 = B * B
    B4 = B2 * B2
    B5 = B4 * B
    B6 = B5 * B
    B10 = B5 * B5
    den3sq = den3 * den3
    den3cb = den3sq * den3
    T[..., 2, 1, 1] = 6.0 * p.q * N4 * B6 * (5.0 * B6 - 7.0 * p.t * N6) / den3cb
    T[..., 2, 1, 3] = 72.0 * p.q * p.s * N5 * Ca * B5 * (p.t * N6 - B6) / den3cb
    T[..., 2, 3, 3] = (
        -12.0
        * p.q
        * p.s
        * N6
        * (B5 * den3 + 10.0 * p.s * ca2 * B4 * den3 - 24.0 * p.s * ca2 * B10)
        / den3cb
    )

    # f4 = num4/den4 - mu_c Ca: num4, den4 linear in (N,D), den4 quadratic in Ca
    den4sq = den4 * den4
    den4cb = den4sq * den4
    nlin4 = (0.0, p.u, p.v)
    dlin4 = (0.0, p.g, p.w)
    for a_ in (1, 2):
        for b_ in range(a_, 3):
            T[..., 3, a_, b_] = (
                -(nlin4[a_] * dlin4[b_] + nlin4[b_] * dlin4[a_]) / den4sq
                + 2.0 * num4 * dlin4[a_] * dlin4[b_] / den4cb
            )
        T[..., 3, a_, 3] = (
            -2.0 * Ca * nlin4[a_] / den4sq + 4.0 * Ca * num4 * dlin4[a_] / den4cb
        )
    T[..., 3, 3, 3] = -2.0 * num4 / den4sq + 8.0 * ca2 * num4 / den4cb

    # mirror the strict upper triangle written above
    lower = np.swapaxes(T, -1, -2)
    mask = np.triu(np.ones((4, 4), dtype=bool), k=1)
    T = np.where(mask, T, np.where(mask.T, lower, T))
    return T
