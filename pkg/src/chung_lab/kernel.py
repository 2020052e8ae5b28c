"""Periodic heat kernel on the unit circle for du/dt = (1/2) d^2u/dx^2.

Two classical series represent G(t, x):

  image sum     G(t,x) = sum_m (2 pi t)^(-1/2) exp(-(x+m)^2 / (2t))
  spectral sum  G(t,x) = 1 + 2 sum_{k>=1} exp(-2 pi^2 k^2 t) cos(2 pi k x)

The image sum converges fast for small t, the spectral sum for large t;
``heat_kernel`` switches at t* = 1/(2 pi).  Both are exposed separately so
that tests can cross-validate the representations.

With the 1/2 diffusion convention the k-th Fourier mode relaxes at rate
lambda_k = 2 pi^2 k^2, and the variance of the k-th mode of the stochastic
convolution with a unit coefficient is ``kernel_covariance_linear``.
"""

from __future__ import annotations

import math

import numpy as np

T_SPLIT = 1.0 / (2.0 * math.pi)

# stop the spectral sum once the next term drops below this
_SPECTRAL_TOL = 1e-16


def heat_kernel_image(t: float, x) -> np.ndarray | float:
    """Image (Gaussian) sum, truncated at |m| <= ceil(6 sqrt(t)) + 2."""
    if t <= 0.0:
        raise ValueError(f"heat kernel needs t > 0, got {t!r}")
    xw = np.asarray(x, dtype=np.float64)
    xw = xw - np.floor(xw)
    m_max = int(math.ceil(6.0 * math.sqrt(t))) + 2
    pref = 1.0 / math.sqrt(2.0 * math.pi * t)
    acc = np.zeros_like(xw)
    for m in range(-m_max, m_max + 1):
        acc += np.exp(-((xw + m) ** 2) / (2.0 * t))
    out = pref * acc
    return out if out.ndim else float(out)


def heat_kernel_spectral(t: float, x) -> np.ndarray | float:
    """Cosine sum, truncated when the next term falls below 1e-16."""
    if t <= 0.0:
        raise ValueError(f"heat kernel needs t > 0, got {t!r}")
    xw = np.asarray(x, dtype=np.float64)
    acc = np.ones_like(xw)
    k = 1
    while True:
        amp = 2.0 * math.exp(-2.0 * math.pi**2 * k**2 * t)
        if amp < _SPECTRAL_TOL:
            break
        acc += amp * np.cos(2.0 * math.pi * k * xw)
        k += 1
    return acc if acc.ndim else float(acc)


def heat_kernel(t: float, x) -> np.ndarray | float:
    """G(t, x) on the circle, positive for all t > 0; x may be an array."""
    if t <= 0.0:
        raise ValueError(f"heat kernel needs t > 0, got {t!r}")
    if t < T_SPLIT:
        return heat_kernel_image(t, x)
    return heat_kernel_spectral(t, x)


def kernel_covariance_linear(t: float, k: int) -> float:
    """Variance of the k-th Fourier mode of the unit-coefficient stochastic
    convolution at time t:

        int_0^t exp(-2 lambda_k (t-s)) ds,  lambda_k = 2 pi^2 k^2,

    which is t for k = 0 and (1 - exp(-4 pi^2 k^2 t)) / (4 pi^2 k^2) else.
    """
    if t < 0.0:
        raise ValueError(f"need t >= 0, got {t!r}")
    if k < 0:
        raise ValueError(f"need mode k >= 0, got {k}")
    if k == 0:
        return t
    lam2 = 4.0 * math.pi**2 * k**2
    return -math.expm1(-lam2 * t) / lam2
