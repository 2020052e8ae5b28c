"""Time integrators for the stochastic heat equation on the unit circle.

Model: du = (1/2) u_xx dt + sigma(u) dW with u(0, .) = 0, driven by
cell-averaged space-time white noise (see :mod:`chung_lab.noise`).

Two integrators are provided:

* :func:`solve_spde` — semi-implicit Euler-Maruyama for any Lipschitz
  coefficient: backward Euler in the Laplacian, explicit in the noise.
  Each step solves ``(I - dt*L/2) u_next = u + sigma(u) * dW / dx`` with L
  the periodic second-difference operator scaled by 1/dx^2.  The periodic
  implicit solve is a cyclic tridiagonal (Thomas + Sherman-Morrison)
  factorization, precomputed once per grid; an FFT diagonalization backend
  solves the identical circulant system and is kept for cross-validation.

* :func:`solve_linear_exact` — spectral exponential Euler for a constant
  coefficient c: every retained Fourier mode evolves by
  ``m_k(t+dt) = exp(-lambda_k dt) m_k(t) + c eta_k`` where eta_k has the
  exact stochastic-convolution variance of one step, so the field sampled
  at grid times is exact in law for the retained modes (Nyquist counted
  once, matching the grid's degrees of freedom).

Both are deterministic functions of their (coefficient, noise/seed, grid)
arguments; constant-coefficient fields scale exactly linearly in the
coefficient on shared noise.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numba
import numpy as np
import scipy.fft

from .domain import GridSpec, ParabolicWindow, cell_budget, BudgetError
from .noise import NoiseGrid, SeedSpec, generator, sample_noise

_MAGIC_FIELD = b"CLFIELD1"

# preset codes understood by the fused step kernels
KIND_CONSTANT = 0
KIND_AFFINE = 1
KIND_SINE = 2


class IntegrationError(RuntimeError):
    """Non-finite value produced during time stepping."""

    def __init__(self, step: int):
        super().__init__(f"non-finite value at time step {step}; integration aborted")
        self.step = step


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class Coefficient:
    """Lipschitz noise coefficient sigma with its declared constants.

    ``eval`` must accept and return ndarrays (any shape).  ``bound`` is a
    uniform bound on |sigma|, present only when sigma is bounded.  ``preset``
    is the (kind, c0, c1) triple consumed by the fused solver kernels; None
    for custom callables, which fall back to a vectorized evaluation path.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    sigma0: float
    bound: float | None = None
    tag: str = "custom"
    preset: tuple | None = None

    def __post_init__(self):
        if self.lipschitz < 0.0:
            raise ValueError(f"Lipschitz constant must be >= 0, got {self.lipschitz!r}")


def constant_coefficient(c: float, tag: str | None = None) -> Coefficient:
    """sigma == c: Lipschitz constant 0, bound |c|."""
    c = float(c)
    return Coefficient(
        eval=lambda u: np.full_like(u, c, dtype=np.float64),
        lipschitz=0.0,
        sigma0=c,
        bound=abs(c),
        tag=tag or f"const({c:g})",
        preset=(KIND_CONSTANT, c, 0.0),
    )


def affine_coefficient(c0: float, c1: float) -> Coefficient:
    """sigma(u) = c0 + c1*u: Lipschitz constant |c1|, unbounded for c1 != 0."""
    c0, c1 = float(c0), float(c1)
    return Coefficient(
        eval=lambda u: c0 + c1 * np.asarray(u, dtype=np.float64),
        lipschitz=abs(c1),
        sigma0=c0,
        bound=abs(c0) if c1 == 0.0 else None,
        tag=f"affine({c0:g},{c1:g})",
        preset=(KIND_AFFINE, c0, c1),
    )


def sine_coefficient(c0: float, c1: float) -> Coefficient:
    """sigma(u) = c0 + c1*sin(u): Lipschitz constant |c1|, bound |c0|+|c1|."""
    c0, c1 = float(c0), float(c1)
    return Coefficient(
        eval=lambda u: c0 + c1 * np.sin(np.asarray(u, dtype=np.float64)),
        lipschitz=abs(c1),
        sigma0=c0,
        bound=abs(c0) + abs(c1),
        tag=f"sine({c0:g},{c1:g})",
        preset=(KIND_SINE, c0, c1),
    )


@dataclass(frozen=True)
class TruncatedCoefficient:
    """sigma clipped to [-m, m] with m = 2|sigma(0)|.

    Exact by construction: values with |sigma| <= m pass through unchanged,
    larger ones clamp to +/-m, so sigma-tilde(0) = sigma(0) and the Lipschitz
    constant carries over (clipping is 1-Lipschitz).
    """

    base: Coefficient
    m: float

    def __post_init__(self):
        if not self.m > 0.0:
            raise ValueError(f"truncation level must be positive, got {self.m!r}")

    def eval(self, u: np.ndarray) -> np.ndarray:
        return np.clip(self.base.eval(u), -self.m, self.m)

    @property
    def lipschitz(self) -> float:
        return self.base.lipschitz

    @property
    def sigma0(self) -> float:
        return self.base.sigma0

    @property
    def bound(self) -> float:
        return self.m

    @property
    def tag(self) -> str:
        return f"trunc[{self.base.tag}]"

    @property
    def preset(self) -> tuple | None:
        return self.base.preset


def truncate_coefficient(sigma: Coefficient) -> TruncatedCoefficient:
    """Clip sigma at m = 2|sigma(0)|; rejects sigma(0) = 0 (m would vanish)."""
    if sigma.sigma0 == 0.0:
        raise ValueError("truncation needs sigma(0) != 0")
    return TruncatedCoefficient(base=sigma, m=2.0 * abs(sigma.sigma0))


def kernel_params(coeff) -> tuple | None:
    """(kind, c0, c1, clip) for the fused kernels, or None for custom evals.

    ``clip`` is +inf when no truncation applies.
    """
    preset = coeff.preset
    if preset is None:
        return None
    kind, c0, c1 = preset
    clip = coeff.m if isinstance(coeff, TruncatedCoefficient) else math.inf
    return kind, c0, c1, clip


# ---------------------------------------------------------------------------
# fields


@dataclass
class Field:
    """Solution values on a grid: values[j, i] = u(j*dt, i/nx), row 0 = 0."""

    grid: GridSpec
    values: np.ndarray
    coefficient: str
    seed: SeedSpec | None = None

    def __post_init__(self):
        expected = (self.grid.nt + 1, self.grid.nx)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} != {expected}")
        if np.any(self.values[0] != 0.0):
            raise ValueError("initial row must be identically zero")
        if not np.isfinite(self.values).all():
            raise ValueError("field contains non-finite values")


def sup_on_window(field: Field, window: ParabolicWindow) -> float:
    """max |u| over grid nodes with t <= r^4 and x in [0, r^2], inclusive."""
    field.grid.require_resolves(window)
    kt = field.grid.window_t_index(window)
    kx = field.grid.window_x_index(window)
    return float(np.max(np.abs(field.values[: kt + 1, : kx + 1])))


# ---------------------------------------------------------------------------
# cyclic tridiagonal machinery
#
# One implicit step solves A x = f with A = tridiag(-beta, 1+2*beta, -beta)
# plus periodic corners -beta, where beta = dt/(2 dx^2).  Sherman-Morrison
# splits A = B + u v^T with B strictly tridiagonal (gamma = -(1+2*beta)):
#     B[0,0]   = b - gamma,  B[-1,-1] = b - beta^2/gamma,
#     u = (gamma, 0, ..., -beta),  v = (1, 0, ..., -beta/gamma),
# so x = y - z (v.y)/(1 + v.z) with B y = f and B z = u (z precomputed).


@dataclass(frozen=True)
class CyclicSolve:
    """Precomputed factorization of one grid's implicit operator."""

    beta: float
    ep: np.ndarray  # forward-sweep reciprocals
    cp: np.ndarray  # forward-sweep superdiagonal ratios
    z: np.ndarray  # correction vector B^-1 u
    v_last: float  # last entry of v
    inv_denom: float  # 1 / (1 + v.z)


@numba.njit(cache=True)
def _thomas_factor(diag, beta, ep, cp):
    n = diag.shape[0]
    prev = 0.0
    for i in range(n):
        den = diag[i] + beta * prev
        ep[i] = 1.0 / den
        cp[i] = -beta / den
        prev = cp[i]


@numba.njit(cache=True)
def _thomas_solve(f, beta, ep, cp, out):
    n = f.shape[0]
    prev = 0.0
    for i in range(n):
        prev = (f[i] + beta * prev) * ep[i]
        out[i] = prev
    nxt = out[n - 1]
    for i in range(n - 2, -1, -1):
        nxt = out[i] - cp[i] * nxt
        out[i] = nxt


@lru_cache(maxsize=64)
def _cyclic_cached(nx: int, beta: float) -> CyclicSolve:
    b = 1.0 + 2.0 * beta
    gamma = -b
    diag = np.full(nx, b)
    diag[0] = b - gamma
    diag[-1] = b - beta * beta / gamma
    ep = np.empty(nx)
    cp = np.empty(nx)
    _thomas_factor(diag, beta, ep, cp)
    u = np.zeros(nx)
    u[0] = gamma
    u[-1] = -beta
    z = np.empty(nx)
    _thomas_solve(u, beta, ep, cp, z)
    v_last = -beta / gamma
    denom = 1.0 + z[0] + v_last * z[-1]
    return CyclicSolve(beta=beta, ep=ep, cp=cp, z=z, v_last=v_last, inv_denom=1.0 / denom)


def cyclic_precompute(grid: GridSpec) -> CyclicSolve:
    beta = grid.dt * grid.nx * grid.nx / 2.0
    return _cyclic_cached(grid.nx, beta)


@numba.njit(cache=True, nogil=True)
def _fd_step(u, w, kind, c0, c1, clip, inv_dx, beta, ep, cp, z, v_last, inv_denom, out, w_scale=1.0):
    """One semi-implicit step of one path; returns (clip_active, all_finite).

    The forward Thomas sweep builds the forced right-hand side on the fly,
    so the whole step is two passes plus the rank-one correction.  w_scale
    rescales raw noise rows in place of a separate pass (1.0 leaves
    pre-scaled increments bitwise untouched).
    """
    n = u.shape[0]
    clipped = False
    prev = 0.0
    for i in range(n):
        ui = u[i]
        if kind == KIND_CONSTANT:
            s = c0
        elif kind == KIND_AFFINE:
            s = c0 + c1 * ui
        else:
            s = c0 + c1 * math.sin(ui)
        if s > clip:
            s = clip
            clipped = True
        elif s < -clip:
            s = -clip
            clipped = True
        rhs = ui + s * (w[i] * w_scale) * inv_dx
        prev = (rhs + beta * prev) * ep[i]
        out[i] = prev
    nxt = out[n - 1]
    for i in range(n - 2, -1, -1):
        nxt = out[i] - cp[i] * nxt
        out[i] = nxt
    fac = (out[0] + v_last * out[n - 1]) * inv_denom
    ok = True
    for i in range(n):
        val = out[i] - fac * z[i]
        out[i] = val
        ok = ok and np.isfinite(val)
    return clipped, ok


@numba.njit(cache=True, nogil=True)
def _fd_step_batch(U, W, kind, c0, c1, clip, inv_dx, beta, ep, cp, z, v_last, inv_denom, OUT, clip_flags, ok_flags, w_scale=1.0):
    for b in range(U.shape[0]):
        clipped, ok = _fd_step(U[b], W[b], kind, c0, c1, clip, inv_dx, beta, ep, cp, z, v_last, inv_denom, OUT[b], w_scale)
        if clipped:
            clip_flags[b] = 1
        if not ok:
            ok_flags[b] = 0


@numba.njit(cache=True, nogil=True)
def _solve_cyclic(rhs, beta, ep, cp, z, v_last, inv_denom, out):
    """Implicit solve alone (right-hand side prepared by the caller)."""
    n = rhs.shape[0]
    prev = 0.0
    for i in range(n):
        prev = (rhs[i] + beta * prev) * ep[i]
        out[i] = prev
    nxt = out[n - 1]
    for i in range(n - 2, -1, -1):
        nxt = out[i] - cp[i] * nxt
        out[i] = nxt
    fac = (out[0] + v_last * out[n - 1]) * inv_denom
    ok = True
    for i in range(n):
        val = out[i] - fac * z[i]
        out[i] = val
        ok = ok and np.isfinite(val)
    return ok


class FdIntegrator:
    """Stepping engine binding one grid and one coefficient.

    ``step(u, w, out)`` advances one time step: ``u`` is the current row,
    ``w`` one noise row (variance dt*dx per cell), ``out`` receives the new
    row.  Returns (clip_active, all_finite).  ``backend="fft"`` solves the
    same circulant system by diagonalization instead; both backends are
    deterministic, the Thomas backend is the package default.
    """

    def __init__(self, grid: GridSpec, coefficient, backend: str = "thomas"):
        self.grid = grid
        self.coefficient = coefficient
        self.backend = backend
        self.pre = cyclic_precompute(grid)
        self.params = kernel_params(coefficient)
        self.inv_dx = float(grid.nx)
        if backend == "fft":
            k = np.arange(grid.nx // 2 + 1)
            sin2 = np.sin(math.pi * k / grid.nx) ** 2
            self._mult = 1.0 / (1.0 + 4.0 * self.pre.beta * sin2)
        elif backend != "thomas":
            raise ValueError(f"unknown backend {backend!r}")

    def step(self, u: np.ndarray, w: np.ndarray, out: np.ndarray) -> tuple[bool, bool]:
        if self.backend == "fft":
            sig = self._sigma(u)
            rhs = u + sig * w * self.inv_dx
            out[:] = scipy.fft.irfft(scipy.fft.rfft(rhs) * self._mult, n=self.grid.nx)
            clipped = bool(np.any(sig != self.coefficient.base.eval(u))) if isinstance(self.coefficient, TruncatedCoefficient) else False
            return clipped, bool(np.isfinite(out).all())
        pre = self.pre
        if self.params is not None:
            kind, c0, c1, clip = self.params
            return _fd_step(u, w, kind, c0, c1, clip, self.inv_dx, pre.beta, pre.ep, pre.cp, pre.z, pre.v_last, pre.inv_denom, out)
        sig = self._sigma(u)
        clipped = False
        if isinstance(self.coefficient, TruncatedCoefficient):
            clipped = bool(np.any(np.abs(self.coefficient.base.eval(u)) > self.coefficient.m))
        rhs = u + sig * w * self.inv_dx
        ok = _solve_cyclic(rhs, pre.beta, pre.ep, pre.cp, pre.z, pre.v_last, pre.inv_denom, out)
        return clipped, bool(ok)

    def _sigma(self, u: np.ndarray) -> np.ndarray:
        return self.coefficient.eval(u)


def solve_spde(coefficient, noise: NoiseGrid, grid: GridSpec, backend: str = "thomas", max_cells: int | None = None) -> Field:
    """Semi-implicit Euler-Maruyama field for (coefficient, noise) on grid.

    Deterministic given its arguments.  Raises IntegrationError with the
    offending step index if a non-finite value appears.
    """
    if noise.grid != grid:
        raise ValueError("noise was sampled on a different grid")
    budget = cell_budget(max_cells)
    if (grid.nt + 1) * grid.nx > budget:
        raise BudgetError(f"field of {(grid.nt + 1) * grid.nx} cells exceeds budget {budget}")
    stepper = FdIntegrator(grid, coefficient, backend=backend)
    vals = np.zeros((grid.nt + 1, grid.nx))
    for k in range(grid.nt):
        _, ok = stepper.step(vals[k], noise.increments[k], vals[k + 1])
        if not ok:
            raise IntegrationError(k)
    return Field(grid=grid, values=vals, coefficient=coefficient.tag, seed=noise.seed)


# ---------------------------------------------------------------------------
# exact spectral sampler for constant coefficients


@lru_cache(maxsize=64)
def _exact_tables(nx: int, dt: float):
    """(decay, std_re, std_im) for one exponential-Euler step of all retained
    modes k = 0..nx//2 (Nyquist once, real, for even nx)."""
    K = nx // 2
    k = np.arange(K + 1, dtype=np.float64)
    lam = 2.0 * math.pi**2 * k**2
    var = np.empty(K + 1)
    var[0] = dt
    var[1:] = -np.expm1(-2.0 * lam[1:] * dt) / (2.0 * lam[1:])
    std_re = np.sqrt(var / 2.0)
    std_im = np.sqrt(var / 2.0)
    std_re[0] = math.sqrt(dt)
    std_im[0] = 0.0
    if nx % 2 == 0:
        std_re[K] = math.sqrt(var[K])
        std_im[K] = 0.0
    decay = np.exp(-lam * dt)
    return decay, std_re, std_im


def solve_linear_exact(c: float, grid: GridSpec, seed: SeedSpec, max_cells: int | None = None) -> Field:
    """Spectral exponential-Euler field for sigma == c (exact in law at grid
    times for the retained modes).

    Per step the stream yields a (2, nx//2 + 1) standard-normal block: row 0
    drives the real parts (and the two purely real modes), row 1 the
    imaginary parts; the unused imaginary slots of the real modes keep the
    layout rectangular.
    """
    if c == 0.0:
        raise ValueError("constant coefficient must be nonzero")
    budget = cell_budget(max_cells)
    if (grid.nt + 1) * grid.nx > budget:
        raise BudgetError(f"field of {(grid.nt + 1) * grid.nx} cells exceeds budget {budget}")
    decay, std_re, std_im = _exact_tables(grid.nx, grid.dt)
    g = generator(seed)
    K = grid.nx // 2
    modes = np.zeros(K + 1, dtype=np.complex128)
    vals = np.zeros((grid.nt + 1, grid.nx))
    for j in range(grid.nt):
        z = g.standard_normal((2, K + 1))
        eta = z[0] * std_re + 1j * (z[1] * std_im)
        modes = decay * modes + c * eta
        vals[j + 1] = np.fft.irfft(modes, n=grid.nx) * grid.nx
    return Field(grid=grid, values=vals, coefficient=f"exact-linear({c:g})", seed=seed)


def pointwise_variance_linear(t: float, nx: int) -> float:
    """Variance of u(t, x) for sigma == 1 with modes truncated at the grid's
    Nyquist frequency (the exact sampler's retained set)."""
    from .kernel import kernel_covariance_linear

    K = nx // 2
    total = kernel_covariance_linear(t, 0)
    for k in range(1, K):
        total += 2.0 * kernel_covariance_linear(t, k)
    if nx % 2 == 0:
        total += kernel_covariance_linear(t, K)
    else:
        total += 2.0 * kernel_covariance_linear(t, K)
    return total


# ---------------------------------------------------------------------------
# dumps


def dump_field(field: Field, path) -> None:
    """Binary dump: header (grid, coefficient tag, seed) + row-major float64."""
    seed = field.seed or SeedSpec(0, 0, 0)
    tag = field.coefficient.encode()
    head = struct.pack(
        "<8sQQdQQQH",
        _MAGIC_FIELD,
        field.grid.nx,
        field.grid.nt,
        field.grid.dt,
        seed.master_seed,
        seed.replicate_id,
        seed.stream_label,
        len(tag),
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(tag)
        fh.write(np.ascontiguousarray(field.values, dtype=np.float64).tobytes())


def load_field(path) -> Field:
    fmt = "<8sQQdQQQH"
    with open(path, "rb") as fh:
        magic, nx, nt, dt, master, rep, label, taglen = struct.unpack(fmt, fh.read(struct.calcsize(fmt)))
        if magic != _MAGIC_FIELD:
            raise ValueError(f"not a field dump: bad magic {magic!r}")
        tag = fh.read(taglen).decode()
        vals = np.frombuffer(fh.read(), dtype=np.float64).reshape(int(nt) + 1, int(nx)).copy()
    grid = GridSpec(nx=int(nx), nt=int(nt), dt=float(dt))
    return Field(grid=grid, values=vals, coefficient=tag, seed=SeedSpec(int(master), int(rep), int(label)))
