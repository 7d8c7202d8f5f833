"""Degenerate-sector solution operators built from curve-supported
fundamental solutions.

Two curve families average into the kernels: scaling rays
gamma1(t) = y + t (w y_d^a, y_d) and drift curves
gamma2(t) = (y' + w ((1+t)^a - 1), y_d + t), both escaping to infinity
inside the sector {|x'| <= x_d^a, x_d >= 1} when y sits in the inner
sector and |w| stays within the planar cutoff radius.

Stage 1 (scaling) is evaluated in curve variables: for an output height
x_d and parameter t, the source height is y_d = x_d/(1+t) and the
omega-average is a 2-d convolution of the source slice with the dilated
planar cutoff (dilation s = y_d^a t), applied row by row with t-nodes
aligned to the grid planes (no vertical interpolation; Gregory-corrected
weights).  The vertical cutoff chi2(t) equals 1 on [0, 1/4] and vanishes
beyond 1/2, so stage 1 is local in dyadic height shells; its divergence
defect is computed operationally as div(stage 1) - data and removed by
the drift-stage operator, which is translation invariant and evaluated
through the same projected-stencil FFT machinery as the cone kernels.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.ndimage import convolve as nd_convolve

from . import fftconv
from .fftconv import GridConvolver, Stencil, sharpen
from .geometry import smoothstep, smoothstep_d
from .grid import ScalarField, SymTensorField2, VectorField, partial_array, sym_index_pairs

__all__ = [
    "CurveFamily",
    "SectorDivKernel",
    "SectorSymDivKernel",
    "SectorOperators",
    "chi2_profile",
    "chi2_derivative",
    "curve_delta_apply",
    "curve_delta_divergence_check",
    "sector_apply_div",
    "sector_apply_double_div",
    "sector_apply_symdiv",
    "sector_kernel_tail_fit",
]

CHI2_PLATEAU = 0.25
CHI2_SUPPORT = 0.5


def chi2_profile(t):
    """Vertical cutoff: 1 on [0, 1/4], smooth, 0 beyond 1/2 (t >= 0)."""
    t = np.asarray(t, dtype=float)
    return smoothstep((CHI2_SUPPORT - t) / (CHI2_SUPPORT - CHI2_PLATEAU))


def chi2_derivative(t):
    t = np.asarray(t, dtype=float)
    return -smoothstep_d((CHI2_SUPPORT - t) / (CHI2_SUPPORT - CHI2_PLATEAU)) \
        / (CHI2_SUPPORT - CHI2_PLATEAU)


# ---------------------------------------------------------------------------
# curve families and the curve-supported fundamental solution
# ---------------------------------------------------------------------------

class CurveFamily:
    """Scaling or drift escape curve from a base point of the sector."""

    SCALING = "scaling"
    DRIFT = "drift"

    def __init__(self, kind, base, omega, alpha, sector=None, check=True):
        base = np.asarray(base, dtype=float)
        omega = np.asarray(omega, dtype=float)
        if omega.size != base.size - 1:
            raise ValueError("omega must be a (d-1)-vector")
        if kind not in (self.SCALING, self.DRIFT):
            raise ValueError(f"unknown curve kind {kind!r}")
        if base[-1] < 1.0:
            raise ValueError("curve base must have y_d >= 1")
        self.kind = kind
        self.base = base
        self.omega = omega
        self.alpha = float(alpha)
        if check and sector is not None:
            ts = np.geomspace(1e-3, 1e3, 120)
            pts = self(ts)
            if not np.all(sector.membership(pts)):
                raise ValueError("curve leaves the sector (base too close to the wall?)")

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        y = self.base
        if self.kind == self.SCALING:
            P = np.concatenate([self.omega * y[-1] ** self.alpha, [y[-1]]])
            return y[None, :] + t[:, None] * P[None, :]
        drift = (1.0 + t) ** self.alpha - 1.0
        out = np.empty((t.size, y.size))
        out[:, :-1] = y[:-1][None, :] + drift[:, None] * self.omega[None, :]
        out[:, -1] = y[-1] + t
        return out

    def velocity(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        y = self.base
        if self.kind == self.SCALING:
            P = np.concatenate([self.omega * y[-1] ** self.alpha, [y[-1]]])
            return np.broadcast_to(P, (t.size, y.size)).copy()
        out = np.empty((t.size, y.size))
        out[:, :-1] = self.alpha * (1.0 + t[:, None]) ** (self.alpha - 1.0) * self.omega[None, :]
        out[:, -1] = 1.0
        return out


def _improper_nodes(n):
    """Gauss-Legendre nodes for int_0^inf via u = 1/(1+t) on (0, 1]."""
    u, w = leggauss(n)
    u = 0.5 * (u + 1.0)
    w = 0.5 * w
    t = 1.0 / u - 1.0
    return t, w / u**2


def curve_delta_apply(curve, phi, tol=1e-10, n0=64, n_max=4096):
    """Line-integral pairing (delta_gamma, phi) = int phi(gamma(t)) gamma'(t) dt.

    ``phi`` maps (n, d) points to scalars; the result is the d-vector of
    component pairings.  Improper in t via u = 1/(1+t) with adaptive
    order doubling; raises if the tail fails to settle.
    """
    prev = None
    n = n0
    while True:
        t, w = _improper_nodes(n)
        vals = phi(curve(t))
        vel = curve.velocity(t)
        out = (w * vals) @ vel
        if prev is not None and np.max(np.abs(out - prev)) < tol:
            return out
        if n >= n_max:
            if prev is None or np.max(np.abs(out - prev)) > 1e3 * tol:
                raise RuntimeError("curve line integral failed to converge")
            return out
        prev = out
        n *= 2


def curve_delta_divergence_check(curve, bump, tol=1e-10):
    """| -int grad(phi)(gamma) . gamma' dt - phi(y) | for a closed-form bump."""
    def integrand(pts):
        return bump.gradient(pts)

    prev = None
    n = 64
    while True:
        t, w = _improper_nodes(n)
        g = integrand(curve(t))
        vel = curve.velocity(t)
        val = -float(np.sum(w * np.sum(g * vel, axis=1)))
        if prev is not None and abs(val - prev) < 0.25 * tol:
            break
        if n >= 8192:
            break
        prev = val
        n *= 2
    return abs(val - float(bump(curve.base[None, :])[0]))


# ---------------------------------------------------------------------------
# closed-form kernels (pointwise evaluation; quadrature machinery below)
# ---------------------------------------------------------------------------

class SectorDivKernel:
    """Two-stage divergence kernel data: planar cutoff, vertical cutoff, alpha."""

    def __init__(self, chi1, alpha, dim=3):
        self.chi1 = chi1
        self.alpha = float(alpha)
        self.dim = int(dim)

    def k1_value(self, x, y):
        """K1(x, y) for the scaling-curve average (x_d > y_d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        a = self.alpha
        yd = y[-1]
        t = (x[:, -1] - yd) / yd
        out = np.zeros_like(x)
        ok = t > 0
        if not np.any(ok):
            return out
        arg = ((x[ok, :-1] - y[:-1]) / yd**a) / t[ok, None]
        chi = self.chi1.eval(arg)
        denom = yd ** (a * (self.dim - 1) + 1) * np.abs(t[ok]) ** self.dim
        out[ok] = chi[:, None] * (x[ok] - y) / denom[:, None]
        return out

    def k2_value(self, x, z):
        """Drift-curve kernel K2(x, z) (x_d > z_d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.asarray(z, dtype=float)
        a = self.alpha
        td = x[:, -1] - z[-1]
        out = np.zeros_like(x)
        ok = td > 0
        if not np.any(ok):
            return out
        c = (1.0 + td[ok]) ** a - 1.0
        arg = (x[ok, :-1] - z[:-1]) / c[:, None]
        chi = self.chi1.eval(arg)
        vel_prime = a * (x[ok, :-1] - z[:-1]) * ((1.0 + td[ok]) ** (a - 1.0) / c)[:, None]
        out[ok, :-1] = chi[:, None] * vel_prime * (c ** -(self.dim - 1))[:, None]
        out[ok, -1] = chi * c ** -(self.dim - 1)
        return out

    def ktilde2_value(self, x, y, n_omega=20, n_t=240):
        """Far-field correction kernel Ktil2(x,y) = -int K2(x,z) e(z,y) dz.

        Evaluated in drift-curve variables z = (x' - w c(t), x_d - t),
        where the Jacobian cancels the c^{-(d-1)} dilution; the leakage
        density e(z, y) = chi2'((z_d-y_d)/y_d) K1^d(z, y)/y_d is closed
        form and supported in a dyadic shell above y.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        a = self.alpha
        yd = y[-1]
        # leakage shell: z_d in [y_d(1+1/4), y_d(1+1/2)] intersect z_d < x_d
        t_lo = x[-1] - yd * (1.0 + CHI2_SUPPORT)
        t_hi = x[-1] - yd * (1.0 + CHI2_PLATEAU)
        if t_hi <= max(t_lo, 0.0):
            return np.zeros(self.dim)
        t_lo = max(t_lo, 0.0)
        tg, tw = leggauss(n_t)
        tg = 0.5 * (tg + 1.0) * (t_hi - t_lo) + t_lo
        tw = 0.5 * tw * (t_hi - t_lo)
        # omega rule over the planar cutoff support (product Gauss)
        og, ow = leggauss(n_omega)
        r1 = self.chi1.outer_radius
        og = og * r1
        ow = ow * r1
        OX, OY = np.meshgrid(og, og, indexing="ij")
        WW = np.outer(ow, ow).reshape(-1)
        OM = np.stack([OX.reshape(-1), OY.reshape(-1)], axis=1) + self.chi1.center
        chi_om = self.chi1.eval(OM)
        keep = chi_om > 0
        OM, WW, chi_om = OM[keep], WW[keep], chi_om[keep]
        total = np.zeros(self.dim)
        for t, wt in zip(tg, tw):
            c = (1.0 + t) ** a - 1.0
            z = np.empty((len(OM), self.dim))
            z[:, :-1] = x[:-1] - OM * c
            z[:, -1] = x[-1] - t
            s = (z[:, -1] - yd) / yd
            dens = chi2_derivative(s) / yd
            k1d = self.k1_value(z, y)[:, -1] if True else None
            e = dens * k1d
            V = np.empty((len(OM), self.dim))
            V[:, :-1] = a * (1.0 + t) ** (a - 1.0) * OM
            V[:, -1] = 1.0
            total -= wt * np.sum((WW * chi_om * e)[:, None] * V, axis=0)
        return total


class SectorSymDivKernel:
    """Marker type for the symmetric-divergence operator stages."""

    L1 = "L1"
    L2 = "L2"

    def __init__(self, chi1, alpha, stage, dim=3):
        self.chi1 = chi1
        self.alpha = float(alpha)
        self.stage = stage
        self.dim = int(dim)


# ---------------------------------------------------------------------------
# stage-1 row machinery
# ---------------------------------------------------------------------------

def _gregory_weights(n):
    """Endpoint-corrected trapezoid weights (4th order for n >= 8)."""
    w = np.ones(n)
    if n >= 8:
        w[[0, -1]] = 3.0 / 8.0
        w[[1, -2]] = 7.0 / 6.0
        w[[2, -3]] = 23.0 / 24.0
    elif n >= 2:
        w[[0, -1]] = 0.5
    return w


def _chi1_moment_stencils(chi1, s, dx, max_moment):
    """Tent-projected taps of the dilated planar cutoff and its u-moments.

    Returns {beta: 2-d tap array} for multi-indices |beta| <= max_moment,
    where beta indexes powers of the physical offset components u.  The
    taps realize int chi1(u/s) s^{-(d-1)} u^beta tent_m(u) du on the x'
    lattice; per-axis subdivision keeps the rule exact when s ~ dx.
    """
    m = chi1.dim - 1
    if s <= 0.12 * dx:
        # delta limit: taps_beta -> s^{|beta|} M_beta(chi1) splat at s*center,
        # with M_beta the raw cutoff moments (computed once per cutoff)
        moms = _chi1_raw_moments(chi1, max_moment)
        ustar = chi1.center * s
        shape = (3,) * m
        base_idx = np.ones(m, dtype=int)
        out = {}
        frac = ustar / dx
        for beta in _moment_indices(m, max_moment):
            taps = np.zeros(shape)
            for corner in range(1 << m):
                wcorner = 1.0
                idx = []
                for ax in range(m):
                    bit = (corner >> ax) & 1
                    p0 = int(np.floor(frac[ax]))
                    wcorner *= (frac[ax] - p0) if bit else (1.0 - (frac[ax] - p0))
                    idx.append(base_idx[ax] + p0 + bit)
                taps[tuple(idx)] += wcorner
            out[beta] = taps * s ** sum(beta) * moms[beta]
        return out
    r_out = chi1.outer_radius * s
    ncells = int(np.ceil(r_out / dx)) + 1
    n_sub = int(np.clip(np.ceil(10.0 * dx / s), 1, 84))
    from .cone_kernels import _tent_rule_1d, _tent_rule_subdivided

    nodes1, wts1 = _tent_rule_subdivided(n_sub) if n_sub > 1 else _tent_rule_1d()
    grids = np.meshgrid(*([nodes1] * m), indexing="ij")
    pts = np.stack([gg.reshape(-1) for gg in grids], axis=1)
    wts = np.prod(
        np.stack([gg.reshape(-1) for gg in np.meshgrid(*([wts1] * m), indexing="ij")], axis=1),
        axis=1,
    )
    axes = [np.arange(-ncells, ncells + 1)] * m
    mm = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.reshape(-1) for g in mm], axis=1).astype(float)
    u = (centers[:, None, :] + pts[None, :, :]) * dx        # (ntap, nq, m)
    chi = chi1.eval(u / s) * s ** (-m)
    base = chi * wts[None, :]
    shape = (2 * ncells + 1,) * m
    out = {}
    for beta in _moment_indices(m, max_moment):
        mono = np.ones(u.shape[:2])
        for a, p in enumerate(beta):
            if p:
                mono = mono * u[..., a] ** p
        out[beta] = (base * mono).sum(axis=1).reshape(shape) * dx**m
    return out


_CHI1_MOMENTS = {}


def _chi1_raw_moments(chi1, max_moment):
    """Raw moments int chi1(w) w^beta dw up to max_moment (cached)."""
    key = (id(chi1), max_moment)
    if key in _CHI1_MOMENTS:
        return _CHI1_MOMENTS[key]
    m = chi1.dim - 1
    n = 80
    gl, glw = leggauss(n)
    r1 = chi1.outer_radius
    axes = [gl * r1 + chi1.center[a] for a in range(m)]
    wts1 = [glw * r1 for _ in range(m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.reshape(-1) for g in mesh], axis=1)
    ws = np.prod(np.stack([w.reshape(-1) for w in np.meshgrid(*wts1, indexing="ij")], axis=1), axis=1)
    chiv = chi1.eval(pts)
    out = {}
    for beta in _moment_indices(m, max_moment):
        mono = np.ones(len(pts))
        for a, pwr in enumerate(beta):
            if pwr:
                mono = mono * pts[:, a] ** pwr
        out[beta] = float(np.sum(ws * chiv * mono))
    _CHI1_MOMENTS[key] = out
    return out


def _moment_indices(m, max_order):
    import itertools

    idx = []
    for total in range(max_order + 1):
        for beta in itertools.product(range(total + 1), repeat=m):
            if sum(beta) == total:
                idx.append(beta)
    return idx


def _row_rule(x_d, z_coords, t_support=CHI2_SUPPORT, refine=3):
    """t-nodes on a refined vertical ladder for one output row.

    Returns (z values, t values, weights) realizing
    int_0^{t_support} F(t) dt with t = x_d/z - 1 over a uniform ladder of
    step dz/refine from z = x_d down to max(z_min, x_d/(1+t_support)).
    Ladder nodes at sub-plane positions use linear two-plane blends of
    the source slices; because plane crossings sit on ladder nodes, the
    endpoint-corrected trapezoid stays exact for the interpolated part.
    """
    dx = z_coords[1] - z_coords[0]
    h = dx / refine
    z_hi = x_d
    z_lo = max(z_coords[0], x_d / (1.0 + t_support))
    n = int(np.floor((z_hi - z_lo) / h + 1e-9)) + 1
    if n < 2:
        return np.array([]), np.array([]), np.array([])
    z = z_hi - h * np.arange(n)
    t = x_d / z - 1.0
    w = _gregory_weights(n) * h * x_d / z**2
    return z, t, w


class SectorOperators:
    """Solution-operator engine for one (cutoff, sector, grid) triple.

    ``qspec`` reuses the cone QuadratureSpec: radial_order sets the drift
    t-node budget, sphere_order the drift disc fineness.
    """

    def __init__(self, chi1, sector, grid, qspec, kernel_dtype=np.complex64):
        if grid.dim != sector.dim:
            raise ValueError("grid/sector dimension mismatch")
        self.chi1 = chi1
        self.sector = sector
        self.grid = grid
        self.alpha = sector.alpha
        self.qspec = qspec
        self.kernel_dtype = kernel_dtype
        self._drift_div = None
        self._drift_L = None

    # -- scaling stage -------------------------------------------------------

    def _stage1_pass(self, sources, assemble, tweight, max_moment):
        """Generic scaling-stage sweep.

        sources: dict name -> 3-d array (sharpened);
        assemble(out, row, conv, ctx): adds one (row, t)-node contribution,
        with conv(name, beta) the 2-d convolution of source ``name``'s
        slice with the u^beta moment stencil and ctx the node geometry;
        tweight(t): scalar weight profile in t (chi2 or its derivative).
        """
        grid = self.grid
        d = grid.dim
        dx = grid.spacing
        zc = grid.axis_coords(d - 1)
        nz = grid.shape[-1]
        out_shapes = assemble(None, None, None, None)
        outs = {k: np.zeros(grid.shape) for k in out_shapes}
        z0 = zc[0]
        for iz in range(nz):
            x_d = zc[iz]
            if x_d <= zc[0] or x_d <= 0:
                continue
            zs, ts, ws = _row_rule(x_d, zc)
            if len(zs) == 0:
                continue
            for zv, t, w in zip(zs, ts, ws):
                wt = tweight(t)
                yd = x_d / (1.0 + t)
                if yd <= 0:
                    continue
                pos = (zv - z0) / dx
                k0 = min(int(np.floor(pos + 1e-12)), nz - 1)
                frac = pos - k0
                s = yd**self.alpha * max(t, 1e-80)
                if frac < 1e-12 or k0 + 1 >= nz:
                    slices = {name: arr[..., k0] for name, arr in sources.items()}
                else:
                    slices = {name: (1.0 - frac) * arr[..., k0] + frac * arr[..., k0 + 1]
                              for name, arr in sources.items()}
                if all(not np.any(sl) for sl in slices.values()):
                    continue
                stencils = _chi1_moment_stencils(self.chi1, s, dx, max_moment)
                cache = {}

                def conv(name, beta, _sl=slices, _st=stencils, _c=cache):
                    key = (name, beta)
                    if key not in _c:
                        _c[key] = nd_convolve(_sl[name], _st[beta],
                                              mode="constant", cval=0.0)
                    return _c[key]

                ctx = {"t": t, "yd": yd, "s": s, "w": w, "wt": wt, "x_d": x_d}
                assemble(outs, iz, conv, ctx)
        return outs

    def stage1_div(self, f_arr):
        """v1 = chi2-localized scaling-stage divergence solution (vector)."""
        d = self.grid.dim
        fs = sharpen(f_arr)

        def assemble(outs, iz, conv, ctx):
            if outs is None:
                return [("v", j) for j in range(d)]
            t, yd, w, wt = ctx["t"], ctx["yd"], ctx["w"], ctx["wt"]
            fac = w * wt / (1.0 + t)
            c0 = conv("f", (0,) * (d - 1))
            outs[("v", d - 1)][..., iz] += fac * yd * c0
            if t > 0:
                for a in range(d - 1):
                    beta = tuple(1 if b == a else 0 for b in range(d - 1))
                    outs[("v", a)][..., iz] += fac / t * conv("f", beta)

        outs = self._stage1_pass({"f": fs}, assemble, chi2_profile, 1)
        return np.stack([outs[("v", j)] for j in range(d)])

    def stage1_defect_div(self, v1, f_arr):
        """Operational stage-1 defect: div(v1) - f (composed stencils)."""
        d = self.grid.dim
        div = np.zeros(self.grid.shape)
        for j in range(d):
            div += partial_array(v1[j], self.grid, j, 1)
        return div - f_arr

    # -- drift stage ----------------------------------------------------------

    def _drift_nodes(self):
        """Drift node cloud (offsets in cells, weights, omega, t)."""
        grid = self.grid
        dx = grid.spacing
        zc = grid.axis_coords(grid.dim - 1)
        t_max = max(zc[-1] - zc[0], 4.0 * dx)
        n_t = max(self.qspec.radial_order, int(np.ceil(t_max / (0.35 * dx))))
        from .cone_kernels import _radial_panels

        tt, tw = _radial_panels(t_max, n_t)
        r1 = self.chi1.outer_radius
        m = grid.dim - 1
        offs, wts, oms, tvals = [], [], [], []
        for t, w in zip(tt, tw):
            c = (1.0 + t) ** self.alpha - 1.0
            spread = max(r1 * c, 1e-12)
            # resolve both the cutoff profile and the offset lattice
            n_o = int(np.clip(max(16, np.ceil(2.0 * spread / (0.5 * dx))),
                              16, 6 * self.qspec.sphere_order))
            og, ow = leggauss(n_o)
            og = og * r1
            ow = ow * r1
            grids = np.meshgrid(*([og] * m), indexing="ij")
            om = np.stack([g.reshape(-1) for g in grids], axis=1) + self.chi1.center
            wo = np.prod(
                np.stack([g.reshape(-1) for g in np.meshgrid(*([ow] * m), indexing="ij")], axis=1),
                axis=1,
            )
            chi = self.chi1.eval(om)
            keep = chi > 0
            om, wo, chi = om[keep], wo[keep], chi[keep]
            if om.size == 0:
                continue
            s = np.empty((len(om), grid.dim))
            s[:, :-1] = om * c
            s[:, -1] = t
            offs.append(s / dx)
            wts.append(w * wo * chi)
            oms.append(om)
            tvals.append(np.full(len(om), t))
        return (np.concatenate(offs), np.concatenate(wts),
                np.concatenate(oms), np.concatenate(tvals))

    def _drift_engine_div(self):
        if self._drift_div is not None:
            return self._drift_div
        grid = self.grid
        offs, wts, oms, ts = self._drift_nodes()
        lo, shape = fftconv.node_bounds(offs)
        conv = GridConvolver(grid.shape, lo, shape, kernel_dtype=self.kernel_dtype)
        d = grid.dim
        Vfac = self.alpha * (1.0 + ts) ** (self.alpha - 1.0)
        specs = []
        for j in range(d):
            coeff = wts * (Vfac * oms[:, j] if j < d - 1 else 1.0)
            specs.append(conv.kernel_fft(fftconv.splat_nodes(offs, coeff, lo, shape)))
        ind = fftconv.splat_nodes(offs, np.ones(len(offs)), lo, shape).indicator()
        ind_spec = conv.kernel_fft(ind)
        self._drift_div = (conv, specs, ind_spec)
        return self._drift_div

    def drift_div(self, g_arr):
        """Drift-curve divergence solution applied to a scalar field."""
        conv, specs, ind_spec = self._drift_engine_div()
        gs = sharpen(g_arr)
        g_spec = conv.field_fft(gs)
        outs = [conv.convolve_ffts(g_spec, sj) for sj in specs]
        mask = conv.support_mask(conv.field_fft((gs != 0).astype(float)), ind_spec)
        for o in outs:
            o[~mask] = 0.0
        return np.stack(outs)

    # -- public: divergence and double divergence -----------------------------

    def apply_div(self, f):
        """v with div v = f, supported in the sector (outgoing)."""
        if f.grid != self.grid:
            raise ValueError("field grid mismatch")
        v1 = self.stage1_div(f.data)
        defect = self.stage1_defect_div(v1, f.data)
        v2 = self.drift_div(defect)
        return VectorField(self.grid, v1 - v2, check=False)

    def apply_double_div(self, f):
        if f.grid != self.grid:
            raise ValueError("field grid mismatch")
        d = self.grid.dim
        u = self.apply_div(f)
        rows = [self.apply_div(u.component(j)) for j in range(d)]
        data = np.empty((d * (d + 1) // 2,) + self.grid.shape)
        for idx, (i, j) in enumerate(sym_index_pairs(d)):
            data[idx] = 0.5 * (rows[j].data[i] + rows[i].data[j])
        return SymTensorField2(self.grid, data, check=False)

    # -- symmetric divergence --------------------------------------------------

    def stage1_L(self, F_data):
        """chi2-localized scaling-stage symmetric-divergence solution.

        Curve average of the line-integral construction with every data
        derivative either transferred to precomputed grid partials of F
        or integrated exactly in t.  T3 is the undifferentiated term; T1
        carries the divergence-type chain rule through y(x; w, t); T2 is
        the t-integrated directional-derivative term plus its geometric
        remainder.  Lateral components enter through u-moments of the
        dilated cutoff divided by the matching powers of t and y_d^a.
        """
        grid = self.grid
        d = grid.dim
        a = self.alpha
        pairs = sym_index_pairs(d)
        F = {f"F{k}": sharpen(F_data[k]) for k in range(d)}
        sources = dict(F)
        sources["divp"] = sharpen(
            sum(partial_array(F_data[k], grid, k, 1) for k in range(d - 1))
        )
        sources["dFdd"] = sharpen(partial_array(F_data[d - 1], grid, d - 1, 1))
        for aa in range(d - 1):
            sources[f"dF{aa}d"] = sharpen(partial_array(F_data[d - 1], grid, aa, 1))

        zero = (0,) * (d - 1)

        def e_a(i):
            return tuple(1 if b == i else 0 for b in range(d - 1))

        def e_ab(i, j):
            out = [0] * (d - 1)
            out[i] += 1
            out[j] += 1
            return tuple(out)

        def e_abc(i, j, k):
            out = [0] * (d - 1)
            out[i] += 1
            out[j] += 1
            out[k] += 1
            return tuple(out)

        def assemble(outs, iz, conv, ctx):
            if outs is None:
                return [("pi", i, j) for (i, j) in pairs]
            t = max(ctx["t"], 1e-80)
            yd, w, wt, x_d = ctx["yd"], ctx["w"], ctx["wt"], ctx["x_d"]
            op = 1.0 + t
            wt_d = chi2_derivative(t)
            m0 = wt / op

            def Pc(name, i):
                if i == d - 1:
                    return yd * conv(name, zero)
                return conv(name, e_a(i)) / t

            def PPc(name, i, j):
                if i == d - 1 and j == d - 1:
                    return yd**2 * conv(name, zero)
                if j == d - 1:
                    i, j = j, i
                if i == d - 1:
                    return (yd / t) * conv(name, e_a(j))
                return conv(name, e_ab(i, j)) / t**2

            def wPPc(name, i, j, aa):
                # P^i P^j omega_a, omega_a = u_a / (y_d^a t)
                sfac = yd**a * t
                if i == d - 1 and j == d - 1:
                    return yd**2 / sfac * conv(name, e_a(aa))
                if j == d - 1:
                    i, j = j, i
                if i == d - 1:
                    return yd / (t * sfac) * conv(name, e_ab(j, aa))
                return conv(name, e_abc(i, j, aa)) / (t**2 * sfac)

            # T2 weights: d/dt of (t chi2/(1+t)) P^j at fixed omega,
            # converted to u-moments (lateral) or closed form (vertical)
            w_ver = x_d * ((wt + t * wt_d) / op**2 - 2.0 * t * wt / op**3)
            w_lat = ((wt + t * wt_d) / op - (1.0 + a) * t * wt / op**2) / t

            for (i, j) in pairs:
                acc = 0.5 * m0 * (Pc(f"F{j}", i) + Pc(f"F{i}", j))
                # T1
                e1 = PPc("divp", i, j) + PPc("dFdd", i, j) / op
                for aa in range(d - 1):
                    e1 = e1 - (t * a * yd ** (a - 1.0) / op) * wPPc(f"dF{aa}d", i, j, aa)
                dpp = 0.0
                for (ii, jj) in ((i, j), (j, i)):
                    if ii == d - 1:
                        dpp = dpp + Pc(f"F{d-1}", jj)
                    elif jj == d - 1:
                        dpp = dpp + (a / t) * conv(f"F{d-1}", e_a(ii))
                    else:
                        dpp = dpp + (a / (yd * t**2)) * conv(f"F{d-1}", e_ab(ii, jj))
                acc = acc - t * m0 * (e1 + dpp / op)
                # T2 (t-integrated directional term + geometric remainder)
                for (jj, kk) in ((i, j), (j, i)):
                    if jj == d - 1:
                        acc = acc + 0.5 * (w_ver + (t * m0 / op) * 2.0 * yd) \
                            * conv(f"F{kk}", zero)
                    else:
                        acc = acc + 0.5 * (w_lat + (t * m0 / op) * (1.0 + a) / t) \
                            * conv(f"F{kk}", e_a(jj))
                outs[("pi", i, j)][..., iz] += w * acc
            return None

        outs = self._stage1_pass(sources, assemble, chi2_profile, 3)
        d2 = d * (d + 1) // 2
        data = np.empty((d2,) + grid.shape)
        for idx, (i, j) in enumerate(pairs):
            data[idx] = outs[("pi", i, j)]
        return data

    def stage1_defect_L(self, pi1_data, F_data):
        """Operational symmetric-stage defect: div(pi1) - F, per component."""
        grid = self.grid
        d = grid.dim
        pi = SymTensorField2(grid, pi1_data, check=False)
        out = np.zeros((d,) + grid.shape)
        for j in range(d):
            for i in range(d):
                out[j] += partial_array(pi.comp(i, j), grid, i, 1)
            out[j] -= F_data[j]
        return out

    # -- drift symmetric stage --------------------------------------------------

    def _drift_engine_L(self):
        if self._drift_L is not None:
            return self._drift_L
        grid = self.grid
        d = grid.dim
        offs, wts, oms, ts = self._drift_nodes()
        lo, shape = fftconv.node_bounds(offs)
        conv = GridConvolver(grid.shape, lo, shape, kernel_dtype=self.kernel_dtype)
        dx = grid.spacing
        V = np.empty((len(ts), d))
        V[:, :-1] = self.alpha * (1.0 + ts[:, None]) ** (self.alpha - 1.0) * oms
        V[:, -1] = 1.0
        S = offs * dx                     # physical offsets s(omega, t)
        specs = {}
        for i in range(d):
            specs[("V", i)] = conv.kernel_fft(
                fftconv.splat_nodes(offs, wts * V[:, i], lo, shape))
        for i in range(d):
            for j in range(d):
                specs[("sV", i, j)] = conv.kernel_fft(
                    fftconv.splat_nodes(offs, wts * S[:, i] * V[:, j], lo, shape))
        ind = fftconv.splat_nodes(offs, np.ones(len(offs)), lo, shape).indicator()
        specs["ind"] = conv.kernel_fft(ind)
        self._drift_L = (conv, specs)
        return self._drift_L

    def drift_L(self, D_data):
        """Drift-curve symmetric-divergence solution applied to a vector field.

        pi^{ij} = Sym int chi1 { V^i D^j - s^i V^j div D + V^i (s . grad D^j) }
        evaluated against the data and its grid partials.
        """
        grid = self.grid
        d = grid.dim
        conv, specs = self._drift_engine_L()
        Ds = [sharpen(D_data[k]) for k in range(d)]
        divD = sharpen(sum(partial_array(D_data[k], grid, k, 1) for k in range(d)))
        gradD = {(l, k): sharpen(partial_array(D_data[k], grid, l, 1))
                 for l in range(d) for k in range(d)}
        d_spec = [conv.field_fft(Dk) for Dk in Ds]
        div_spec = conv.field_fft(divD)
        grad_spec = {key: conv.field_fft(arr) for key, arr in gradD.items()}
        d2 = d * (d + 1) // 2
        data = np.empty((d2,) + grid.shape)
        for idx, (i, j) in enumerate(sym_index_pairs(d)):
            acc = np.zeros(grid.shape)
            for (ii, jj) in ((i, j), (j, i)):
                acc += conv.convolve_ffts(d_spec[jj], specs[("V", ii)])
                acc -= conv.convolve_ffts(div_spec, specs[("sV", ii, jj)])
                for l in range(d):
                    acc += conv.convolve_ffts(grad_spec[(l, jj)], specs[("sV", l, ii)])
            data[idx] = 0.5 * acc
        src = np.max(np.abs(np.stack(Ds + [divD])), axis=0)
        mask = conv.support_mask(conv.field_fft((src != 0).astype(float)), specs["ind"])
        data[:, ~mask] = 0.0
        return data

    def apply_L(self, fvec):
        """Symmetric pi with d_i pi^{ij} = fvec^j, supported in the sector."""
        if fvec.grid != self.grid:
            raise ValueError("field grid mismatch")
        pi1 = self.stage1_L(fvec.data)
        defect = self.stage1_defect_L(pi1, fvec.data)
        corr = self.drift_L(defect)
        return SymTensorField2(self.grid, pi1 - corr, check=False)



# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------

_SECTOR_CACHE = {}


def _sector_engine(chi1, sector, grid, qspec):
    key = (id(chi1), sector.alpha, sector.floor, tuple(grid.origin), grid.spacing,
           grid.shape, qspec.radial_order, qspec.sphere_order)
    eng = _SECTOR_CACHE.get(key)
    if eng is None:
        eng = SectorOperators(chi1, sector, grid, qspec)
        if len(_SECTOR_CACHE) > 3:
            _SECTOR_CACHE.clear()
        _SECTOR_CACHE[key] = eng
    return eng


def sector_apply_div(kernel, f, qspec, sector=None):
    from .geometry import SectorSpec

    sec = sector or SectorSpec(kernel.alpha, dim=kernel.dim)
    return _sector_engine(kernel.chi1, sec, f.grid, qspec).apply_div(f)


def sector_apply_double_div(kernel, f, qspec, sector=None):
    from .geometry import SectorSpec

    sec = sector or SectorSpec(kernel.alpha, dim=kernel.dim)
    return _sector_engine(kernel.chi1, sec, f.grid, qspec).apply_double_div(f)


def sector_apply_symdiv(kernel, fvec, qspec, sector=None):
    from .geometry import SectorSpec

    sec = sector or SectorSpec(kernel.alpha, dim=kernel.dim)
    return _sector_engine(kernel.chi1, sec, fvec.grid, qspec).apply_L(fvec)


def sector_kernel_tail_fit(kernel, y, x_d_samples, beta=(0, 0, 0), h_rel=2e-3):
    """Fitted decay exponent of d^beta Ktil2(x, y) along dyadic heights.

    ``beta`` = (b1, b2, bd) orders at most 1 per axis; derivatives by
    central differences of the pointwise kernel evaluation (smooth in x).
    Returns the log-log slope against the predicted exponent
    -a(d-1) - |beta'| a - beta_d.
    """
    y = np.asarray(y, dtype=float)
    x_d_samples = np.asarray(x_d_samples, dtype=float)
    if np.any(x_d_samples <= 2.0 * y[-1]):
        raise ValueError("tail fit needs x_d > 2 y_d")
    if len(x_d_samples) < 4:
        raise ValueError("need at least 4 dyadic samples")
    if sum(beta) > 1:
        raise NotImplementedError("tail fit implements derivative orders <= 1")
    d = kernel.dim
    a = kernel.alpha
    vals = []
    for xd in x_d_samples:
        x0 = np.concatenate([y[:-1], [xd]])

        def k2mag(x):
            return kernel.ktilde2_value(x, y)

        v = k2mag(x0)
        for ax, b in enumerate(beta):
            if b == 0:
                continue
            h = h_rel * xd
            e = np.zeros(d)
            e[ax] = h
            vp = kernel.ktilde2_value(x0 + e, y)
            vm = kernel.ktilde2_value(x0 - e, y)
            v = (vp - vm) / (2.0 * h)
        vals.append(float(np.linalg.norm(v)))
    vals = np.asarray(vals)
    if np.any(vals <= 0):
        raise ValueError("kernel vanished on a sample; widen the cutoffs")
    lx = np.log(x_d_samples)
    ly = np.log(vals)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    bprime = sum(beta[:-1])
    expected = -a * (d - 1) - bprime * a - beta[-1]
    return {"slope": float(coef[0]), "expected": expected,
            "samples": x_d_samples.tolist(), "values": vals.tolist()}
