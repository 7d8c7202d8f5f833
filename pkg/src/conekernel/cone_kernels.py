"""Cone-supported solution operators for the three divergence-type equations

    d_j v^j = f,   d_i d_j h^{ij} = f,   d_i pi^{ij} = F^j.

The divergence kernel is the ray average  Ktil(z) = chi(z/|z|) z/|z|^d
(homogeneous of degree 1-d, supported in the cone over supp chi).  Its
convolution with a grid field is evaluated in polar coordinates centered
at the output point, where the r^{d-1} Jacobian cancels the singularity
exactly; the resulting node cloud with trilinear input sampling is a
fixed lattice stencil applied at every grid point (see fftconv).

The double-divergence operator applies the divergence operator twice and
symmetrizes.  The symmetric-divergence operator uses the kernel family
A^{jlk}(z) = chi(zhat)(z^j z^l w^k + z^l z^k w^j - w^l z^k z^j)/|z|^d with
w running over the standard basis; moving the l-derivative onto the data
and integrating the radial (z^l-contracted) terms exactly in r leaves

    pi^{jk}(x) = int chi(th) [th^j F^k + th^k F^j - r th^j th^k div F](x - r th)

so only div F requires a finite-difference pass.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import fftconv
from .fftconv import GridConvolver, Stencil, sharpen, splat_nodes
from .geometry import cap_polar_rule, sphere_area
from .grid import ScalarField, SymTensorField2, VectorField, partial_array, sym_index_pairs

__all__ = [
    "QuadratureSpec",
    "DivKernel",
    "SymDivKernel",
    "ConeOperators",
    "apply_div",
    "apply_double_div",
    "apply_L",
    "verify_identity_div",
    "verify_identity_double_div",
    "verify_identity_L",
    "kernel_homogeneity_check",
]


class QuadratureSpec:
    """Polar quadrature layout: total radial nodes, angular order, truncation radius."""

    def __init__(self, radial_order=96, sphere_order=32, max_radius=None):
        if radial_order < 4 or sphere_order < 4:
            raise ValueError("quadrature orders must be >= 4")
        self.radial_order = int(radial_order)
        self.sphere_order = int(sphere_order)
        self.max_radius = None if max_radius is None else float(max_radius)

    def resolved_radius(self, grid):
        diam = grid.box_diameter()
        r = self.max_radius if self.max_radius is not None else diam
        if r < diam * (1.0 - 1e-12):
            raise ValueError(
                f"quadrature max_radius {r:g} does not cover the box diameter {diam:g}"
            )
        return min(r, diam + 2.0 * grid.spacing)


class DivKernel:
    """Ktil_chi(z) = chi(z/|z|) z / |z|^d, homogeneous of degree 1-d."""

    def __init__(self, cutoff, dim=3):
        self.cutoff = cutoff
        self.dim = int(dim)

    @property
    def homogeneity_degree(self):
        return 1 - self.dim

    def value(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=-1)
        if np.any(r == 0):
            raise ValueError("kernel is singular at the origin")
        chi = self.cutoff.eval(x / r[..., None])
        return chi[..., None] * x / (r**self.dim)[..., None]


class SymDivKernel:
    """Undifferentiated symmetric-divergence kernel family for one target w.

    a_value returns A^{jlk}(z) = chi(zhat)(z^j z^l w^k + z^l z^k w^j
    - w^l z^k z^j)/|z|^d, homogeneous of degree 2-d and symmetric in (j, k).
    """

    def __init__(self, cutoff, w, dim=3):
        w = np.asarray(w, dtype=float)
        self.cutoff = cutoff
        self.w = w / np.linalg.norm(w)
        self.dim = int(dim)

    @property
    def homogeneity_degree(self):
        return 2 - self.dim

    def a_value(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=-1)
        if np.any(r == 0):
            raise ValueError("kernel is singular at the origin")
        chi = self.cutoff.eval(x / r[..., None])
        w = self.w
        num = (
            np.einsum("...j,...l,k->...jlk", x, x, w)
            + np.einsum("...l,...k,j->...jlk", x, x, w)
            - np.einsum("l,...k,...j->...jlk", w, x, x)
        )
        return chi[..., None, None, None] * num / (r**self.dim)[..., None, None, None]


# ---------------------------------------------------------------------------
# node clouds
# ---------------------------------------------------------------------------

def _radial_panels(r_max, n_nodes):
    """Uniform panels with 6-point Gauss-Legendre, ~n_nodes total."""
    n_panels = max(1, int(np.ceil(n_nodes / 6)))
    edges = np.linspace(0.0, r_max, n_panels + 1)
    xg, wg = leggauss(6)
    rs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        rs.append(0.5 * (b - a) * (xg + 1.0) + a)
        ws.append(0.5 * (b - a) * wg)
    return np.concatenate(rs), np.concatenate(ws)


def polar_nodes(cutoff, qspec, grid):
    """Quadrature node cloud (offsets in cells, weights incl. chi) for a cutoff.

    Ring counts scale with the shell radius so the arc spacing stays
    roughly constant out to the truncation radius.
    """
    r_max = qspec.resolved_radius(grid)
    rr, wr = _radial_panels(r_max, qspec.radial_order)
    if getattr(cutoff, "uniform", False):
        capr = np.pi
        center = np.zeros(cutoff.dim)
        center[-1] = 1.0
    else:
        capr = cutoff.outer_radius
        center = cutoff.center
    offs, wts, dirs = [], [], []
    n_s = qspec.sphere_order
    for r, w in zip(rr, wr):
        n_polar = int(np.clip(np.ceil(n_s * r / r_max), 4, n_s))
        n_az = int(np.ceil(2.0 * np.pi * n_polar))
        pts, pw = cap_polar_rule(center, capr, n_polar, n_az, d=cutoff.dim)
        chi = cutoff.eval(pts)
        keep = chi != 0.0
        pts, pw, chi = pts[keep], pw[keep], chi[keep]
        offs.append(r * pts / grid.spacing)
        wts.append(w * pw * chi)
        dirs.append(pts)
    return np.concatenate(offs), np.concatenate(wts), np.concatenate(dirs)


def _component_values(cutoff, pts, d):
    """All stencil kernel components at once:  chi th_j r^{1-d} (div, d of
    them) followed by chi th_j th_k r^{2-d} (radial moments, packed)."""
    r = np.linalg.norm(pts, axis=1)
    r = np.maximum(r, 1e-300)
    dirs = pts / r[:, None]
    chi = cutoff.eval(dirs)
    out = np.empty((len(pts), d + d * (d + 1) // 2))
    base = chi * r ** (1 - d)
    for j in range(d):
        out[:, j] = base * dirs[:, j]
    mom = chi * r ** (2 - d)
    for idx, (j, k) in enumerate(sym_index_pairs(d)):
        out[:, d + idx] = mom * dirs[:, j] * dirs[:, k]
    return out


def _split_profile(r, r0, r1):
    """Smooth radial partition: 1 inside r0, 0 beyond r1."""
    from .geometry import smoothstep

    return smoothstep((r1 - r) / (r1 - r0))


# half-interval Gauss nodes/weights for exact tent x cubic integration
_HALF_GL = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]),
            np.array([0.5, 0.5]))


def _tent_rule_1d():
    """Nodes/weights on [-1, 1] integrating tent(u) * (cubic) exactly."""
    u, w = _HALF_GL
    nodes = np.concatenate([-u[::-1], u])
    wts = np.concatenate([w[::-1], w])
    tent = 1.0 - np.abs(nodes)
    return nodes, wts * tent


def _tent_rule_subdivided(n):
    """Nodes/weights on [-1, 1] integrating tent(u) x smooth with the tent
    factor exact: 2-point Gauss per subinterval (n per half, kink-aligned)."""
    edges = np.linspace(-1.0, 1.0, 2 * n + 1)
    u, w = _HALF_GL  # nodes in (0,1), weights summing to 1
    nodes, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(a + (b - a) * u)
        wts.append(w * (b - a))
    nodes = np.concatenate(nodes)
    wts = np.concatenate(wts)
    return nodes, wts * (1.0 - np.abs(nodes))


def projected_taps(cutoff, grid, r_max, lo, shape, core_factor=40, ncomp=None):
    """Stencil taps as tent-projections of the kernel components.

    Each tap m carries int K(z) tent_m(z) dz.  Away from the origin the
    integral uses a per-tap tensor rule with the tent factor exact and
    per-axis subdivision that refines toward the singularity; a smoothly
    cut singular core (|z| < ~2.5 cells) is splatted from a very fine
    polar cloud, where the r^{d-1} Jacobian cancels the kernel blowup.
    This realizes the dense-node limit of the polar quadrature with
    trilinear sampling.
    """
    d = grid.dim
    dx = grid.spacing
    ncomp = ncomp if ncomp is not None else d + d * (d + 1) // 2
    taps = np.zeros((ncomp,) + shape)
    flat = taps.reshape(ncomp, -1)
    rc0, rc1 = 1.5 * dx, 2.5 * dx   # smooth core cut

    axes = [np.arange(lo[a], lo[a] + shape[a]) for a in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.reshape(-1) for m in mesh], axis=1).astype(float)
    keep = _tap_prefilter(cutoff, centers, dx, r_max)
    minf = np.max(np.abs(centers), axis=1)
    levels = ((minf <= 2.5) * 6 + ((minf > 2.5) & (minf <= 5.5)) * 4
              + ((minf > 5.5) & (minf <= 11.5)) * 2 + (minf > 11.5) * 1)

    for n_sub in (1, 2, 4, 6):
        sel_mask = keep & (levels == n_sub)
        idx_sel = np.nonzero(sel_mask)[0]
        if idx_sel.size == 0:
            continue
        nodes1, wts1 = _tent_rule_subdivided(n_sub) if n_sub > 1 else _tent_rule_1d()
        pts_nd = np.stack(
            [m.reshape(-1) for m in np.meshgrid(*([nodes1] * d), indexing="ij")], axis=1
        )
        wts_nd = np.prod(
            np.stack([m.reshape(-1) for m in np.meshgrid(*([wts1] * d), indexing="ij")], axis=1),
            axis=1,
        )
        chunk = max(1, int(3e6 // len(pts_nd)))
        for a in range(0, len(idx_sel), chunk):
            sel = idx_sel[a : a + chunk]
            z = (centers[sel][:, None, :] + pts_nd[None, :, :]) * dx
            zf = z.reshape(-1, d)
            rr = np.linalg.norm(zf, axis=1)
            vals = _component_values(cutoff, zf, d)
            vals *= (1.0 - _split_profile(rr, rc0, rc1))[:, None]
            contrib = np.einsum(
                "cqk,q->kc", vals.reshape(len(sel), len(pts_nd), ncomp), wts_nd
            )
            flat[:, sel] += contrib * dx**d

    # singular core: fine polar cloud, trilinear splat
    h = dx / core_factor
    r_reach = rc1 + dx
    rr, wr = _radial_panels(r_reach, max(8, int(np.ceil(r_reach / h))))
    if getattr(cutoff, "uniform", False):
        capr, center = np.pi, _pole(d)
    else:
        capr, center = cutoff.outer_radius, cutoff.center
    for r, w in zip(rr, wr):
        n_polar = max(6, int(np.ceil(capr * r / h)))
        pts, pw = cap_polar_rule(center, capr, n_polar, int(np.ceil(2 * np.pi * n_polar)), d=d)
        z = r * pts
        vals = _component_values(cutoff, z, d)
        vals *= _split_profile(np.full(len(z), r), rc0, rc1)[:, None]
        wq = w * pw * r ** (d - 1)
        st_off = z / dx
        for c in range(ncomp):
            _splat_accumulate(flat[c], st_off, wq * vals[:, c], lo, shape)
    return [Stencil(taps[c], lo) for c in range(ncomp)]


def _pole(d):
    e = np.zeros(d)
    e[-1] = 1.0
    return e


def _tap_prefilter(cutoff, centers, dx, r_max):
    """Taps whose 2-cell neighbourhood could meet the support cone."""
    from .geometry import ConeSpec

    r = np.linalg.norm(centers, axis=1) * dx
    keep = r <= r_max + 2.0 * dx
    if getattr(cutoff, "uniform", False):
        return keep
    cone = ConeSpec(np.zeros(cutoff.dim), cutoff.center, cutoff.outer_radius)
    reach = 2.0 * dx * np.sqrt(cutoff.dim)
    return keep & (cone.outside_distance(centers * dx) <= reach)


def _splat_accumulate(flat, offsets, weights, lo, shape):
    """Trilinear scatter-add into an existing flat tap array."""
    d = offsets.shape[1]
    base = np.floor(offsets).astype(int)
    frac = offsets - base
    strides = np.cumprod((1,) + shape[::-1][:-1])[::-1].astype(int)
    for corner in range(1 << d):
        w = weights.copy()
        idx = np.zeros(len(offsets), dtype=int)
        for a in range(d):
            bit = (corner >> a) & 1
            w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
            ia = base[:, a] + bit - lo[a]
            if np.any((ia < 0) | (ia >= shape[a])):
                raise ValueError("near-zone node escapes the stencil window")
            idx = idx + ia * strides[a]
        flat += np.bincount(idx, weights=w, minlength=flat.size)


class ConeOperators:
    """Cached solution-operator engine for one (cutoff, grid, quadrature) triple.

    Builds projected kernel stencils and their spectra once; each apply
    is then a handful of FFTs.  Support masking keeps the exact zero set
    of the direct quadrature sum.
    """

    def __init__(self, cutoff, grid, qspec, kernel_dtype=np.complex64):
        self.cutoff = cutoff
        self.grid = grid
        self.qspec = qspec
        d = grid.dim
        r_max = qspec.resolved_radius(grid)
        lo, shape = self._window(cutoff, grid, r_max)
        self.conv = GridConvolver(grid.shape, lo, shape, kernel_dtype=kernel_dtype)
        stencils = projected_taps(cutoff, grid, r_max, lo, shape)
        self._div_spec = [self.conv.kernel_fft(stencils[j]) for j in range(d)]
        self._moment_spec = {
            pair: self.conv.kernel_fft(stencils[d + i])
            for i, pair in enumerate(sym_index_pairs(d))
        }
        union = np.zeros(shape)
        for st in stencils:
            union += np.abs(st.taps)
        self._indicator_spec = self.conv.kernel_fft(Stencil(union, lo).indicator())
        del stencils, union

    @staticmethod
    def _window(cutoff, grid, r_max):
        d = grid.dim
        nc = int(np.ceil(r_max / grid.spacing)) + 2
        if getattr(cutoff, "uniform", False) or d != 3:
            lo = -nc * np.ones(d, dtype=int)
            return lo, (2 * nc + 1,) * d
        # bounding box of the cone over the cap, padded by the tent reach
        ring = _cap_boundary_sample(cutoff)
        ext = np.concatenate([ring, [cutoff.center], [np.zeros(d)]])
        lo = np.floor(nc * ext.min(axis=0)).astype(int) - 2
        hi = np.ceil(nc * ext.max(axis=0)).astype(int) + 2
        return lo, tuple(hi - lo + 1)


    def _masked(self, outs, sharpened_src):
        # the convolution consumes the sharpened input, whose support is
        # two cells wider per axis than the raw field's
        ind_spec = self.conv.field_fft((sharpened_src != 0).astype(float))
        mask = self.conv.support_mask(ind_spec, self._indicator_spec)
        for o in outs:
            o[~mask] = 0.0
        return outs

    def _div_arrays(self, arr):
        fs = sharpen(arr)
        f_spec = self.conv.field_fft(fs)
        outs = [self.conv.convolve_ffts(f_spec, cj) for cj in self._div_spec]
        return self._masked(outs, fs)

    # -- public applies ------------------------------------------------------

    def apply_div(self, f):
        """v with div v = f, supported in the cone over supp chi."""
        if f.grid != self.grid:
            raise ValueError("field grid mismatch")
        comps = self._div_arrays(f.data)
        return VectorField(self.grid, np.stack(comps))

    def apply_double_div(self, f):
        """Symmetric h with d_i d_j h^{ij} = f (divergence operator twice)."""
        if f.grid != self.grid:
            raise ValueError("field grid mismatch")
        d = self.grid.dim
        u = self._div_arrays(f.data)
        rows = [self._div_arrays(u[j]) for j in range(d)]  # rows[j][i] = K_i * u^j
        data = np.empty((d * (d + 1) // 2,) + self.grid.shape)
        for idx, (i, j) in enumerate(sym_index_pairs(d)):
            data[idx] = 0.5 * (rows[j][i] + rows[i][j])
        return SymTensorField2(self.grid, data, check=False)

    def apply_L(self, fvec):
        """Symmetric pi with d_i pi^{ij} = fvec^j."""
        if fvec.grid != self.grid:
            raise ValueError("field grid mismatch")
        d = self.grid.dim
        div = np.zeros(self.grid.shape)
        for a in range(d):
            div += partial_array(fvec.data[a], self.grid, a, 1)
        f_sharp = [sharpen(fvec.data[k]) for k in range(d)]
        div_sharp = sharpen(div)
        f_specs = [self.conv.field_fft(fk) for fk in f_sharp]
        div_spec = self.conv.field_fft(div_sharp)
        data = np.empty((d * (d + 1) // 2,) + self.grid.shape)
        for idx, (j, k) in enumerate(sym_index_pairs(d)):
            acc = self.conv.convolve_ffts(f_specs[k], self._div_spec[j])
            acc += self.conv.convolve_ffts(f_specs[j], self._div_spec[k])
            acc -= self.conv.convolve_ffts(div_spec, self._moment_spec[(j, k)])
            data[idx] = acc
        outs = [data[i] for i in range(data.shape[0])]
        src = np.max(np.abs(np.stack(f_sharp + [div_sharp])), axis=0)
        self._masked(outs, src)
        return SymTensorField2(self.grid, data, check=False)


def _cap_boundary_sample(cutoff, n=720):
    """Directions on the boundary circle of the support cap (d = 3)."""
    c = cutoff.center
    seed = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = seed - (seed @ c) * c
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return (
        np.cos(cutoff.outer_radius) * c[None, :]
        + np.sin(cutoff.outer_radius) * (np.outer(np.cos(t), e1) + np.outer(np.sin(t), e2))
    )

    # -- internals ----------------------------------------------------------


_ENGINE_CACHE = {}


def _engine(kernel_or_cutoff, grid, qspec):
    cutoff = getattr(kernel_or_cutoff, "cutoff", kernel_or_cutoff)
    key = (
        id(cutoff),
        tuple(grid.origin),
        grid.spacing,
        grid.shape,
        qspec.radial_order,
        qspec.sphere_order,
        qspec.max_radius,
    )
    eng = _ENGINE_CACHE.get(key)
    if eng is None:
        eng = ConeOperators(cutoff, grid, qspec)
        if len(_ENGINE_CACHE) > 4:
            _ENGINE_CACHE.clear()
        _ENGINE_CACHE[key] = eng
    return eng


def apply_div(kernel, f, qspec):
    return _engine(kernel, f.grid, qspec).apply_div(f)


def apply_double_div(kernel, f, qspec):
    return _engine(kernel, f.grid, qspec).apply_double_div(f)


def apply_L(kernel_or_cutoff, fvec, qspec):
    return _engine(kernel_or_cutoff, fvec.grid, qspec).apply_L(fvec)


# ---------------------------------------------------------------------------
# kernel-level identity checks (pure quadrature, no grids)
# ---------------------------------------------------------------------------

def _cap_rule_for(cutoff, n_polar):
    if getattr(cutoff, "uniform", False):
        center = np.zeros(cutoff.dim)
        center[-1] = 1.0
        return cap_polar_rule(center, np.pi, n_polar, int(np.ceil(2 * np.pi * n_polar)),
                              d=cutoff.dim)
    return cap_polar_rule(
        cutoff.center, cutoff.outer_radius, n_polar,
        int(np.ceil(2 * np.pi * n_polar)), d=cutoff.dim,
    )


def _adaptive_radial(fn, r_max, tol, n0=48, n_max=3072):
    """Refine uniform GL panels until the value stabilizes below tol/4."""
    prev = None
    n = n0
    while True:
        rr, wr = _radial_panels(r_max, n)
        val = fn(rr, wr)
        if prev is not None and np.max(np.abs(val - prev)) < 0.25 * tol:
            return val
        if n >= n_max:
            return val
        prev = val
        n *= 2


def _support_radius(bump):
    lo, hi = bump.support_bounds()
    return float(np.max(np.linalg.norm(np.stack([lo, hi]), axis=1))) + 0.5


def verify_identity_div(kernel, bump, tol=1e-8, n_polar=64):
    """| -int Ktil . grad(phi) - phi(0) | for a closed-form bump phi."""
    pts, pw = _cap_rule_for(kernel.cutoff, n_polar)
    chi = kernel.cutoff.eval(pts)
    keep = chi != 0
    pts, pw, chi = pts[keep], pw[keep] * chi[keep], chi[keep]

    def radial_sum(rr, wr):
        # integrand: -sum_nodes chi w th . grad(phi)(r th)
        acc = 0.0
        for r, w in zip(rr, wr):
            g = bump.gradient(r * pts)
            acc -= w * np.sum(pw * np.sum(g * pts, axis=1))
        return np.array([acc])

    val = _adaptive_radial(radial_sum, _support_radius(bump), tol)[0]
    return abs(val - bump(np.zeros((1, kernel.dim)))[0])


def verify_identity_double_div(kernel, bump, n_polar=8, n_radial=24):
    """| int Ktil^i(z) Ktil^j(y) (d_i d_j phi)(z+y) dz dy - phi(0) |.

    Nested polar quadrature over the two convolution factors; node pairs
    are processed in memory-bounded chunks.  The 6-d product rule
    converges slowly, so treat this as a percent-level sanity check; the
    quantitative double-divergence verification is the grid-based weak
    identity.
    """
    pts, pw = _cap_rule_for(kernel.cutoff, n_polar)
    chi = kernel.cutoff.eval(pts)
    keep = chi != 0
    pts, pw = pts[keep], pw[keep] * chi[keep]
    r_max = _support_radius(bump)
    rr, wr = _radial_panels(r_max, n_radial)
    nodes = (rr[:, None, None] * pts[None, :, :]).reshape(-1, kernel.dim)
    wts = (wr[:, None] * pw[None, :]).reshape(-1)
    dirs = np.tile(pts, (len(rr), 1))
    total = 0.0
    chunk = max(1, int(1.2e7 // max(len(nodes), 1)))
    for a in range(0, len(nodes), chunk):
        z = nodes[a : a + chunk]
        wz = wts[a : a + chunk]
        dz = dirs[a : a + chunk]
        contr = bump.hessian_quadform(
            z[:, None, :] + nodes[None, :, :], dz[:, None, :], dirs[None, :, :]
        )
        total += np.sum(wz[:, None] * wts[None, :] * contr)
    return abs(total - bump(np.zeros((1, kernel.dim)))[0])


def verify_identity_L(kernel, bumps_vec, tol=1e-8, n_polar=64):
    """| int G^{jlk}(z)(d_l d_j phi_k)(z) dz - w^k phi_k(0) | for vector bumps.

    G^{jlk} is the undifferentiated A-kernel; the pairing with the Hessian
    of the test field realizes <d_j L^{jk}, phi_k>.  In polar coordinates
    the degree-(2-d) kernel leaves a factor r, and the three contractions
    become w^k th.H^k.th + th^k (th.H^k.w) - th^k (w.H^k.th).
    """
    cutoff = kernel.cutoff
    w = kernel.w
    d = kernel.dim
    pts, pw = _cap_rule_for(cutoff, n_polar)
    chi = cutoff.eval(pts)
    keep = chi != 0
    pts, pw = pts[keep], pw[keep] * chi[keep]

    def radial_sum(rr, wr):
        acc = 0.0
        for r, wq in zip(rr, wr):
            z = r * pts
            vals = np.zeros(len(pts))
            for k in range(d):
                H = bumps_vec[k].hessian(z)
                th_H_th = np.einsum("nl,nlj,nj->n", pts, H, pts)
                th_H_w = np.einsum("nl,nlj,j->n", pts, H, w)
                w_H_th = np.einsum("l,nlj,nj->n", w, H, pts)
                vals += w[k] * th_H_th + pts[:, k] * (th_H_w - w_H_th)
            acc += wq * r * np.sum(pw * vals)
        return np.array([acc])

    val = _adaptive_radial(radial_sum, max(_support_radius(b) for b in bumps_vec), tol)[0]
    target = sum(w[k] * bumps_vec[k](np.zeros((1, d)))[0] for k in range(d))
    return abs(val - target)


def kernel_homogeneity_check(kernel, x, lam):
    """Relative error of K(lam x) against lam^deg K(x)."""
    x = np.asarray(x, dtype=float)
    if np.all(x == 0):
        raise ValueError("x must be nonzero")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    deg = kernel.homogeneity_degree
    if isinstance(kernel, DivKernel):
        a = kernel.value(lam * x[None, :])[0]
        b = lam**deg * kernel.value(x[None, :])[0]
    else:
        a = kernel.a_value(lam * x[None, :])[0]
        b = lam**deg * kernel.a_value(x[None, :])[0]
    denom = np.max(np.abs(b))
    if denom == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / denom)
