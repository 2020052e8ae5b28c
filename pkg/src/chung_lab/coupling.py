"""Pathwise coupling experiments on shared noise.

Four processes are driven by one noise realization per replicate:

* ``u``        -- the solution with coefficient sigma;
* ``u_trunc``  -- the solution with the clipped coefficient sigma-tilde;
* ``u_frozen`` -- constant coefficient sigma-tilde evaluated at the initial
  field (= sigma(0) since u(0,.) = 0), the Gaussian comparison process;
* ``v``        -- unit coefficient, so u_frozen = sigma(0) * v by linearity.

Per replicate the experiments record: whether truncation changed the
solution anywhere on the window (beyond a rounding tolerance), the first
time step at which |u_trunc - u_trunc(0,.)| exceeds the threshold
g(r) = r^((1+eps)/2) somewhere on the window arc (a discrete stopping
index), and the windowed sup of the freezing error D = u_trunc - u_frozen
against the threshold r^(1+eps).

All paths use the identical finite-difference scheme within a replicate so
that D measures coefficient freezing only.  The campaign runner streams
rows (never materializing fields) and exploits two exact shortcuts, both
verified by tests: when clipping never activates along the truncated path,
u and u_trunc coincide bitwise, so u is only integrated when clipping
fired; and when sigma(0) is a power of two, scaling commutes with IEEE
rounding, so v's integration is bitwise sigma(0)^-1 * u_frozen and is run
in full only on periodic verification replicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .domain import GridSpec, ParabolicWindow
from .noise import NoiseGrid, SeedSpec, generator, sample_noise
from .solver import (
    Field,
    TruncatedCoefficient,
    constant_coefficient,
    cyclic_precompute,
    kernel_params,
    solve_spde,
    truncate_coefficient,
    IntegrationError,
    _fd_step,
    _solve_cyclic,
)

# stream_label = base + scale index, one independent family per scale
COUPLING_STREAM_BASE = 256

DIVERGENCE_TOL = 1e-9


def coupling_stream_label(n: int) -> int:
    return COUPLING_STREAM_BASE + n


@dataclass
class CoupledPaths:
    """The four coupled fields of one replicate (shared grid and noise)."""

    u: Field
    u_trunc: Field
    u_frozen: Field
    v: Field

    def __post_init__(self):
        grids = {f.grid for f in (self.u, self.u_trunc, self.u_frozen, self.v)}
        if len(grids) != 1:
            raise ValueError("coupled fields must share one grid")
        seeds = {f.seed for f in (self.u, self.u_trunc, self.u_frozen, self.v)}
        if len(seeds) != 1:
            raise ValueError("coupled fields must share one noise stream")


@dataclass(frozen=True)
class StoppingRecord:
    """First exceedance of the displacement threshold g on the window arc.

    ``tau_index`` is the first time-step index j >= 1 with
    |u_trunc(j dt, x) - u_trunc(0, x)| > threshold (strict) for some grid x
    in the window arc, or None if no exceedance occurs within the horizon.
    """

    threshold: float
    tau_index: int | None
    window: ParabolicWindow


@dataclass(frozen=True)
class CouplingOutcome:
    truncation_diverged: bool
    F_n_failed: bool
    sup_D: float
    sup_D_exceeds: bool


def frozen_value(trunc: TruncatedCoefficient, grid: GridSpec) -> float:
    """Constant coefficient of the frozen path: sigma-tilde at the initial
    field (identically zero), evaluated through the truncated coefficient."""
    vals = trunc.eval(np.zeros(grid.nx))
    return float(vals[0])


def truncation_divergence_check(u: Field, u_trunc: Field, window: ParabolicWindow, tol: float = DIVERGENCE_TOL) -> bool:
    """True iff max over window nodes of |u - u_trunc| exceeds tol."""
    if u.grid != u_trunc.grid:
        raise ValueError("fields live on different grids")
    u.grid.require_resolves(window)
    kt = u.grid.window_t_index(window)
    kx = u.grid.window_x_index(window)
    diff = np.abs(u.values[: kt + 1, : kx + 1] - u_trunc.values[: kt + 1, : kx + 1])
    return bool(diff.max() > tol)


def _stopping_record(u_trunc: Field, window: ParabolicWindow, eps: float) -> StoppingRecord:
    grid = u_trunc.grid
    kx = grid.window_x_index(window)
    thr = window.r ** ((1.0 + eps) / 2.0)
    arc = np.abs(u_trunc.values[1:, : kx + 1]).max(axis=1)
    hit = np.nonzero(arc > thr)[0]
    tau = int(hit[0]) + 1 if hit.size else None
    return StoppingRecord(threshold=thr, tau_index=tau, window=window)


def _fn_failed(tau_index: int | None, grid: GridSpec, window: ParabolicWindow) -> bool:
    """The event F_n = {tau >= r^4} fails iff tau fires strictly before r^4."""
    if tau_index is None:
        return False
    return tau_index * grid.dt < window.t_max * (1.0 - 1e-12)


def run_coupled(sigma, window: ParabolicWindow, grid: GridSpec, seed: SeedSpec, eps: float = 0.5, tol: float = DIVERGENCE_TOL, noise: NoiseGrid | None = None):
    """Integrate all four coupled paths on one noise draw and classify the
    replicate.  Returns (CoupledPaths, StoppingRecord, CouplingOutcome).

    ``noise`` overrides the sampled realization (diagnostics); by default
    the replicate's own stream is sampled from ``seed``.
    """
    if sigma.sigma0 == 0.0:
        raise ValueError("coupling experiments need sigma(0) != 0")
    grid.require_resolves(window)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"freezing exponent must be in (0, 1), got {eps!r}")
    if noise is None:
        noise = sample_noise(grid, seed)
    elif noise.grid != grid:
        raise ValueError("noise was sampled on a different grid")
    trunc = truncate_coefficient(sigma)
    u = solve_spde(sigma, noise, grid)
    u_trunc = solve_spde(trunc, noise, grid)
    g0 = frozen_value(trunc, grid)
    u_frozen = solve_spde(constant_coefficient(g0, tag=f"frozen[{trunc.tag}]"), noise, grid)
    v = solve_spde(constant_coefficient(1.0), noise, grid)
    paths = CoupledPaths(u=u, u_trunc=u_trunc, u_frozen=u_frozen, v=v)

    record = _stopping_record(u_trunc, window, eps)
    kt = grid.window_t_index(window)
    kx = grid.window_x_index(window)
    d_block = u_trunc.values[: kt + 1, : kx + 1] - u_frozen.values[: kt + 1, : kx + 1]
    sup_d = float(np.abs(d_block).max())
    outcome = CouplingOutcome(
        truncation_diverged=truncation_divergence_check(u, u_trunc, window, tol),
        F_n_failed=_fn_failed(record.tau_index, grid, window),
        sup_D=sup_d,
        sup_D_exceeds=sup_d > window.r ** (1.0 + eps),
    )
    return paths, record, outcome


def integrate_stopped(trunc: TruncatedCoefficient, noise: NoiseGrid, grid: GridSpec, reference: Field, tau_index: int | None) -> Field:
    """Diagnostic path: integrate with the coefficient argument stopped at
    tau, i.e. step k uses sigma-tilde(reference[min(k, tau_index)]).

    With ``reference`` the truncated solution on the same noise, this field
    coincides with it bitwise on all rows up to tau, so the stopped
    difference (this field minus the frozen field) reproduces
    u_trunc - u_frozen node-for-node whenever tau lies beyond the window.
    """
    if noise.grid != grid or reference.grid != grid:
        raise ValueError("grid mismatch")
    pre = cyclic_precompute(grid)
    inv_dx = float(grid.nx)
    vals = np.zeros((grid.nt + 1, grid.nx))
    for k in range(grid.nt):
        kk = k if tau_index is None else min(k, tau_index)
        sig = trunc.eval(reference.values[kk])
        rhs = vals[k] + sig * noise.increments[k] * inv_dx
        ok = _solve_cyclic(rhs, pre.beta, pre.ep, pre.cp, pre.z, pre.v_last, pre.inv_denom, vals[k + 1])
        if not ok:
            raise IntegrationError(k)
    return Field(grid=grid, values=vals, coefficient=f"stopped[{trunc.tag}]", seed=noise.seed)


# ---------------------------------------------------------------------------
# streaming campaign engine


@numba.njit(cache=True, nogil=True)
def _couple_step_deferred(
    YT, YG, YV, FT, FG, FV, W, do_v,
    kind, c0, c1, clip, g0, w_scale, inv_dx,
    beta, ep, cp, z, v_last, inv_denom,
    OT, OG, OV, NFT, NFG, NFV,
    arc_out, dmax_out, verr, vscale,
    kx, clip_flags, ok_flags,
):
    """Advance the truncated, frozen and (optionally) unit paths one step
    with a deferred rank-one correction.

    The state of row k is kept as (y, fac) with the true row x = y - fac*z;
    x materializes on the fly inside the next forward sweep, which removes
    one full array pass per path per step.  The element expressions match
    _fd_step exactly, so streamed campaigns stay bitwise consistent with
    materialized solves.  Window statistics of row k (sup over the arc of
    |x_trunc| and |x_trunc - x_frozen| up to column kx, plus the
    frozen-identity accumulators over all columns on verify rows) fall out
    of the same sweep.
    """
    n = YT.shape[1]
    for b in range(YT.shape[0]):
        yt = YT[b]
        yg = YG[b]
        yv = YV[b]
        ot = OT[b]
        og = OG[b]
        ov = OV[b]
        wrow = W[b]
        ft = FT[b]
        fg = FG[b]
        fv = FV[b]
        dv = do_v[b] != 0
        clipped = False
        arc = 0.0
        dmax = 0.0
        ve = verr[b]
        vs = vscale[b]
        pt = 0.0
        pg = 0.0
        pv = 0.0
        for i in range(n):
            zi = z[i]
            xt = yt[i] - ft * zi
            xg = yg[i] - fg * zi
            wi = wrow[i] * w_scale
            if kind == 0:
                s = c0
            elif kind == 1:
                s = c0 + c1 * xt
            else:
                s = c0 + c1 * math.sin(xt)
            if s > clip:
                s = clip
                clipped = True
            elif s < -clip:
                s = -clip
                clipped = True
            e = ep[i]
            pt = (xt + s * wi * inv_dx + beta * pt) * e
            ot[i] = pt
            pg = (xg + g0 * wi * inv_dx + beta * pg) * e
            og[i] = pg
            if i <= kx:
                a = abs(xt)
                if a > arc:
                    arc = a
                d = abs(xt - xg)
                if d > dmax:
                    dmax = d
            if dv:
                xv = yv[i] - fv * zi
                pv = (xv + 1.0 * wi * inv_dx + beta * pv) * e
                ov[i] = pv
                sc = g0 * xv
                a2 = abs(sc)
                if a2 > vs:
                    vs = a2
                d2 = abs(xg - sc)
                if d2 > ve:
                    ve = d2
        bt = ot[n - 1]
        bg = og[n - 1]
        bv = ov[n - 1] if dv else 0.0
        okr = np.isfinite(bt) and np.isfinite(bg)
        for i in range(n - 2, -1, -1):
            ci = cp[i]
            bt = ot[i] - ci * bt
            ot[i] = bt
            bg = og[i] - ci * bg
            og[i] = bg
            okr = okr and np.isfinite(bt) and np.isfinite(bg)
            if dv:
                bv = ov[i] - ci * bv
                ov[i] = bv
        nft = (ot[0] + v_last * ot[n - 1]) * inv_denom
        nfg = (og[0] + v_last * og[n - 1]) * inv_denom
        NFT[b] = nft
        NFG[b] = nfg
        NFV[b] = (ov[0] + v_last * ov[n - 1]) * inv_denom if dv else 0.0
        if not (np.isfinite(nft) and np.isfinite(nfg)):
            okr = False
        if clipped:
            clip_flags[b] = 1
        if not okr:
            ok_flags[b] = 0
        arc_out[b] = arc
        dmax_out[b] = dmax
        verr[b] = ve
        vscale[b] = vs


def _is_dyadic(x: float) -> bool:
    """True when |x| is an exact power of two (scaling then commutes with
    IEEE rounding, making u_frozen bitwise sigma(0) * v)."""
    if x == 0.0 or not math.isfinite(x):
        return False
    return math.frexp(abs(x))[0] == 0.5


def _divergence_sup(sigma, trunc, grid: GridSpec, seed: SeedSpec, window: ParabolicWindow) -> float:
    """Second pass for replicates where clipping fired: integrate u and
    u_trunc in lockstep on the regenerated stream, returning the window sup
    of |u - u_trunc|."""
    pu = kernel_params(sigma)
    pt = kernel_params(trunc)
    pre = cyclic_precompute(grid)
    inv_dx = float(grid.nx)
    kx = grid.window_x_index(window)
    kt = grid.window_t_index(window)
    gen = generator(seed)
    std = grid.cell_std
    u = np.zeros(grid.nx)
    ut = np.zeros(grid.nx)
    ou = np.empty(grid.nx)
    ot = np.empty(grid.nx)
    w = np.empty(grid.nx)
    worst = 0.0
    for k in range(grid.nt):
        gen.standard_normal(grid.nx, out=w)
        _, ok_u = _fd_step(u, w, pu[0], pu[1], pu[2], pu[3], inv_dx, pre.beta, pre.ep, pre.cp, pre.z, pre.v_last, pre.inv_denom, ou, std)
        _, ok_t = _fd_step(ut, w, pt[0], pt[1], pt[2], pt[3], inv_dx, pre.beta, pre.ep, pre.cp, pre.z, pre.v_last, pre.inv_denom, ot, std)
        if not (ok_u and ok_t):
            raise IntegrationError(k)
        if k + 1 <= kt:
            worst = max(worst, float(np.abs(ou[: kx + 1] - ot[: kx + 1]).max()))
        u, ou = ou, u
        ut, ot = ot, ut
    return worst


@dataclass
class CouplingBlock:
    """Per-replicate outcomes of one campaign block (arrays over replicates)."""

    replicates: np.ndarray  # replicate ids
    tau_index: np.ndarray  # -1 when tau never fired within the horizon
    fn_failed: np.ndarray  # uint8
    sup_D: np.ndarray
    supD_exceeds: np.ndarray  # uint8
    diverged: np.ndarray  # uint8
    frozen_rel_err: np.ndarray  # nan on replicates where v was derived, not integrated
    clip_fired: np.ndarray  # uint8


def run_coupling_block(
    sigma,
    window: ParabolicWindow,
    grid: GridSpec,
    eps: float,
    seed0: SeedSpec,
    count: int,
    tol: float = DIVERGENCE_TOL,
    verify_every: int = 16,
    batch: int | None = None,
) -> CouplingBlock:
    """Stream `count` coupled replicates (ids seed0.replicate_id ..+count-1)
    and classify each one; fields are never materialized.

    v is integrated on every replicate unless sigma(0) is a power of two, in
    which case the frozen path is provably bitwise sigma(0)*v and only every
    ``verify_every``-th replicate integrates v to re-verify that identity
    (recorded as frozen_rel_err = 0 on exact match).  Replicates where v was
    derived carry frozen_rel_err = nan.
    """
    if sigma.sigma0 == 0.0:
        raise ValueError("coupling experiments need sigma(0) != 0")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"freezing exponent must be in (0, 1), got {eps!r}")
    grid.require_resolves(window)
    trunc = truncate_coefficient(sigma)
    params = kernel_params(trunc)
    if params is None:
        return _coupling_block_generic(sigma, window, grid, eps, seed0, count, tol)
    kind, c0, c1, clip = params
    g0 = frozen_value(trunc, grid)
    dyadic = _is_dyadic(g0)
    pre = cyclic_precompute(grid)
    inv_dx = float(grid.nx)
    std = grid.cell_std
    nx, nt = grid.nx, grid.nt
    kx = grid.window_x_index(window)
    kt = grid.window_t_index(window)
    g_thr = window.r ** ((1.0 + eps) / 2.0)
    d_thr = window.r ** (1.0 + eps)

    B = batch or max(1, min(32, count, (1 << 19) // nx))
    reps = np.arange(seed0.replicate_id, seed0.replicate_id + count, dtype=np.int64)
    tau = np.full(count, -1, dtype=np.int64)
    supd = np.zeros(count)
    clipf = np.zeros(count, dtype=np.uint8)
    frozen_rel = np.full(count, np.nan)

    for lo in range(0, count, B):
        hi = min(lo + B, count)
        nb = hi - lo
        gens = [generator(seed0.replicate(int(r))) for r in reps[lo:hi]]
        verify = np.ones(nb, dtype=np.uint8)
        if dyadic:
            verify = ((reps[lo:hi] - seed0.replicate_id) % verify_every == 0).astype(np.uint8)
        YT = np.zeros((nb, nx))
        YG = np.zeros((nb, nx))
        YV = np.zeros((nb, nx))
        OT = np.empty((nb, nx))
        OG = np.empty((nb, nx))
        OV = np.empty((nb, nx))
        W = np.empty((nb, nx))
        FT = np.zeros(nb)
        FG = np.zeros(nb)
        FV = np.zeros(nb)
        NFT = np.empty(nb)
        NFG = np.empty(nb)
        NFV = np.empty(nb)
        arc = np.empty(nb)
        dmax = np.empty(nb)
        bclip = np.zeros(nb, dtype=np.uint8)
        ok = np.ones(nb, dtype=np.uint8)
        btau = np.full(nb, -1, dtype=np.int64)
        bsup = np.zeros(nb)
        ferr = np.zeros(nb)
        fscale = np.zeros(nb)
        for k in range(nt):
            for b in range(nb):
                gens[b].standard_normal(nx, out=W[b])
            # the sweep consuming noise row k materializes field row k
            _couple_step_deferred(
                YT, YG, YV, FT, FG, FV, W, verify,
                kind, c0, c1, clip, g0, std, inv_dx,
                pre.beta, pre.ep, pre.cp, pre.z, pre.v_last, pre.inv_denom,
                OT, OG, OV, NFT, NFG, NFV,
                arc, dmax, ferr, fscale, kx, bclip, ok,
            )
            if not ok.all():
                raise IntegrationError(k)
            fresh = (btau < 0) & (arc > g_thr)
            btau[fresh] = k
            if k <= kt:
                np.maximum(bsup, dmax, out=bsup)
            YT, OT = OT, YT
            YG, OG = OG, YG
            YV, OV = OV, YV
            FT, NFT = NFT, FT
            FG, NFG = NFG, FG
            FV, NFV = NFV, FV
        # epilogue: the final row (time nt*dt) only ever materializes here
        zw = pre.z[: kx + 1]
        xt = YT[:, : kx + 1] - FT[:, None] * zw
        xg = YG[:, : kx + 1] - FG[:, None] * zw
        arc_end = np.abs(xt).max(axis=1)
        fresh = (btau < 0) & (arc_end > g_thr)
        btau[fresh] = nt
        if nt <= kt:
            np.maximum(bsup, np.abs(xt - xg).max(axis=1), out=bsup)
        for b in np.nonzero(verify)[0]:
            xg_full = YG[b] - FG[b] * pre.z
            scaled = g0 * (YV[b] - FV[b] * pre.z)
            ferr[b] = max(ferr[b], float(np.abs(xg_full - scaled).max()))
            fscale[b] = max(fscale[b], float(np.abs(scaled).max()))
        tau[lo:hi] = btau
        supd[lo:hi] = bsup
        clipf[lo:hi] = bclip
        for b in np.nonzero(verify)[0]:
            frozen_rel[lo + b] = ferr[b] / fscale[b] if fscale[b] > 0.0 else 0.0

    # second pass: the untruncated path only matters where clipping fired
    diverged = np.zeros(count, dtype=np.uint8)
    for i in np.nonzero(clipf)[0]:
        worst = _divergence_sup(sigma, trunc, grid, seed0.replicate(int(reps[i])), window)
        diverged[i] = 1 if worst > tol else 0

    fn = np.array(
        [1 if (t >= 0 and t * grid.dt < window.t_max * (1.0 - 1e-12)) else 0 for t in tau],
        dtype=np.uint8,
    )
    return CouplingBlock(
        replicates=reps,
        tau_index=tau,
        fn_failed=fn,
        sup_D=supd,
        supD_exceeds=(supd > d_thr).astype(np.uint8),
        diverged=diverged,
        frozen_rel_err=frozen_rel,
        clip_fired=clipf,
    )


def _coupling_block_generic(sigma, window, grid, eps, seed0, count, tol) -> CouplingBlock:
    """Fallback for custom coefficient callables: materialized per-replicate
    coupling via run_coupled (slower, same outcomes)."""
    reps = np.arange(seed0.replicate_id, seed0.replicate_id + count, dtype=np.int64)
    tau = np.full(count, -1, dtype=np.int64)
    fn = np.zeros(count, dtype=np.uint8)
    supd = np.zeros(count)
    exc = np.zeros(count, dtype=np.uint8)
    div = np.zeros(count, dtype=np.uint8)
    frozen_rel = np.zeros(count)
    clipf = np.zeros(count, dtype=np.uint8)
    for i, r in enumerate(reps):
        paths, record, outcome = run_coupled(sigma, window, grid, seed0.replicate(int(r)), eps, tol)
        tau[i] = -1 if record.tau_index is None else record.tau_index
        fn[i] = 1 if outcome.F_n_failed else 0
        supd[i] = outcome.sup_D
        exc[i] = 1 if outcome.sup_D_exceeds else 0
        div[i] = 1 if outcome.truncation_diverged else 0
        scaled = sigma.sigma0 * paths.v.values
        err = np.abs(paths.u_frozen.values - scaled).max()
        scale = np.abs(scaled).max()
        frozen_rel[i] = err / scale if scale > 0.0 else 0.0
        clipf[i] = 1 if np.any(np.abs(sigma.eval(paths.u_trunc.values)) > truncate_coefficient(sigma).m) else 0
    return CouplingBlock(reps, tau, fn, supd, exc, div, frozen_rel, clipf)
