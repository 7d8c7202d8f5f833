"""The geometric layer: change of variables (h, pi) <-> (g, k), the full
nonlinear constraint map, the nonlinearity split, and divergence-free
seed solutions of the linearized equations.

Conventions.  The unknowns are

    h_ij = g_ij - delta_ij - delta_ij tr(g - delta),
    pi_ij = k_ij - delta_ij tr k,

with inverse g = delta + h - delta tr h/(d-1), k = pi - delta tr pi/(d-1).
The constraint map is evaluated from finite-difference Christoffel
symbols; every first derivative (including the double divergence in the
linear part) uses the same composed first-order stencils, so the
linearization of the curvature cancels the double divergence of h
exactly in arithmetic and the nonlinearity vanishes quadratically at 0
down to rounding.
"""

import numpy as np

from .grid import (
    GridSpec,
    ScalarField,
    SymTensorField2,
    VectorField,
    partial_array,
    restrict_support,
    sym_index_pairs,
)

__all__ = [
    "HPiState",
    "GKState",
    "PositivityError",
    "hpi_to_gk",
    "gk_to_hpi",
    "constraint_residual",
    "nonlinearity",
    "make_seed",
    "compact_smooth",
    "double_divergence",
    "divergence",
]


class PositivityError(ValueError):
    """Metric lost positive-definiteness; reports the worst grid point."""

    def __init__(self, point_index, point, minor):
        self.point_index = tuple(int(i) for i in point_index)
        self.point = np.asarray(point)
        self.minor = float(minor)
        super().__init__(
            f"metric not positive-definite at grid index {self.point_index} "
            f"(x = {self.point.tolist()}, worst leading minor {self.minor:.3e})"
        )


class HPiState:
    """The fixed-point unknown: a pair of symmetric 2-tensor fields."""

    def __init__(self, h, pi):
        if h.grid != pi.grid:
            raise ValueError("h and pi must share a grid")
        self.h = h
        self.pi = pi
        self.grid = h.grid

    def __add__(self, other):
        return HPiState(self.h + other.h, self.pi + other.pi)

    def __sub__(self, other):
        return HPiState(self.h - other.h, self.pi - other.pi)

    def __mul__(self, s):
        return HPiState(self.h * s, self.pi * s)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, grid):
        return cls(SymTensorField2.zeros(grid), SymTensorField2.zeros(grid))

    def sup_norm(self):
        return max(self.h.max_abs(), self.pi.max_abs())


class GKState:
    """Initial-data pair: metric g (pointwise positive-definite) and k."""

    def __init__(self, g, k, check_positive=True):
        if g.grid != k.grid:
            raise ValueError("g and k must share a grid")
        self.g = g
        self.k = k
        self.grid = g.grid
        if check_positive:
            _check_positive_definite(g)


def _metric_matrix(g):
    """Dense (..., d, d) matrix from packed symmetric storage."""
    d = g.grid.dim
    M = np.empty(g.grid.shape + (d, d))
    for i in range(d):
        for j in range(d):
            M[..., i, j] = g.comp(i, j)
    return M


def _check_positive_definite(g):
    """Leading principal minors > 0 at every point; localize the worst."""
    M = _metric_matrix(g)
    d = g.grid.dim
    worst = np.inf
    worst_idx = None
    for k in range(1, d + 1):
        minors = np.linalg.det(M[..., :k, :k])
        m = float(minors.min())
        if m < worst:
            worst = m
            worst_idx = np.unravel_index(int(np.argmin(minors)), g.grid.shape)
    if worst <= 0:
        pt = g.grid.origin + g.grid.spacing * np.array(worst_idx)
        raise PositivityError(worst_idx, pt, worst)


def hpi_to_gk(state, check_positive=True):
    """(g, k) = (delta + h - delta tr h/(d-1), pi - delta tr pi/(d-1))."""
    grid = state.grid
    d = grid.dim
    tr_h = state.h.trace().data
    tr_pi = state.pi.trace().data
    fac = 1.0 / (d - 1.0)

    def g_comp(i, j):
        base = state.h.comp(i, j) - (fac * tr_h if i == j else 0.0)
        return base + (1.0 if i == j else 0.0)

    def k_comp(i, j):
        return state.pi.comp(i, j) - (fac * tr_pi if i == j else 0.0)

    g = SymTensorField2.from_components(grid, g_comp)
    k = SymTensorField2.from_components(grid, k_comp)
    return GKState(g, k, check_positive=check_positive)


def gk_to_hpi(state):
    """Inverse change of variables (exact pointwise algebra)."""
    grid = state.grid
    d = grid.dim
    m_tr = state.g.trace().data - d          # tr(g - delta)
    k_tr = state.k.trace().data

    def h_comp(i, j):
        m = state.g.comp(i, j) - (1.0 if i == j else 0.0)
        return m - (m_tr if i == j else 0.0)

    def pi_comp(i, j):
        return state.k.comp(i, j) - (k_tr if i == j else 0.0)

    h = SymTensorField2.from_components(grid, h_comp)
    pi = SymTensorField2.from_components(grid, pi_comp)
    return HPiState(h, pi)


# ---------------------------------------------------------------------------
# constraint map
# ---------------------------------------------------------------------------

def _inverse_metric(M):
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise PositivityError((-1,) * (M.ndim - 2), np.zeros(M.shape[-1]), 0.0) from exc


def constraint_residual(state):
    """Hamiltonian and momentum constraint fields of (g, k).

    ham = R_g + (tr_g k)^2 - |k|_g^2, with the scalar curvature from
    finite-difference Christoffel symbols; mom^j = g^{jj'}(g^{ii'}
    nabla_i k_{i'j'} - d_{j'} tr_g k).
    """
    grid = state.grid
    d = grid.dim
    G = _metric_matrix(state.g)
    K = _metric_matrix(state.k)
    Ginv = _inverse_metric(G)

    dG = np.empty((d,) + grid.shape + (d, d))
    for a in range(d):
        for i in range(d):
            for j in range(i, d):
                der = partial_array(state.g.comp(i, j), grid, a, 1)
                dG[a][..., i, j] = der
                dG[a][..., j, i] = der

    # Gamma^a_{bc} = g^{ad}(d_b g_{dc} + d_c g_{bd} - d_d g_{bc})/2
    Gamma = np.empty((d, d, d) + grid.shape)
    for b in range(d):
        for c in range(b, d):
            sym = np.empty(grid.shape + (d,))
            for dd in range(d):
                sym[..., dd] = dG[b][..., dd, c] + dG[c][..., b, dd] - dG[dd][..., b, c]
            for a in range(d):
                val = 0.5 * np.einsum("...d,...d->...", Ginv[..., a, :], sym)
                Gamma[a, b, c] = val
                Gamma[a, c, b] = val

    # Ricci R_{bc} = d_a Gamma^a_{bc} - d_c Gamma^a_{ab}
    #              + Gamma^a_{ae} Gamma^e_{bc} - Gamma^a_{ce} Gamma^e_{ab}
    trGamma = np.zeros((d,) + grid.shape)        # Gamma^a_{a e}
    for e in range(d):
        for a in range(d):
            trGamma[e] += Gamma[a, a, e]
    Ric = np.zeros(grid.shape + (d, d))
    for b in range(d):
        for c in range(b, d):
            val = np.zeros(grid.shape)
            for a in range(d):
                val += partial_array(Gamma[a, b, c], grid, a, 1)
            val -= partial_array(trGamma[b], grid, c, 1)
            for a in range(d):
                for e in range(d):
                    val += Gamma[a, a, e] * Gamma[e, b, c] - Gamma[a, c, e] * Gamma[e, b, a]
            Ric[..., b, c] = val
            Ric[..., c, b] = val
    R = np.einsum("...ij,...ij->...", Ginv, Ric)

    trgk = np.einsum("...ij,...ij->...", Ginv, K)
    Kup_mixed = np.einsum("...ia,...ab->...ib", Ginv, K)
    ksq = np.einsum("...ib,...bi->...", Kup_mixed, Kup_mixed)
    ham = R + trgk**2 - ksq

    # mom^j = g^{jj'}(g^{ii'} nabla_i k_{i'j'} - d_{j'} tr_g k), with
    # nabla_i k_{i'j'} = d_i k_{i'j'} - Gamma^a_{i i'} k_{a j'} - Gamma^a_{i j'} k_{i' a};
    # assembled per lower index j' to bound memory on large grids.
    dK = np.empty((d,) + grid.shape + (d, d))
    for a in range(d):
        for i in range(d):
            for j in range(i, d):
                der = partial_array(state.k.comp(i, j), grid, a, 1)
                dK[a][..., i, j] = der
                dK[a][..., j, i] = der
    GammaT = np.ascontiguousarray(np.moveaxis(Gamma, (0, 1, 2), (-3, -2, -1)))
    del Gamma, dG
    mom_low = np.empty(grid.shape + (d,))
    for jp in range(d):
        nab = np.moveaxis(dK[..., jp], 0, -2).copy()          # (..., i, i')
        nab -= np.einsum("...aio,...a->...io", GammaT, K[..., :, jp])
        nab -= np.einsum("...ai,...oa->...io", GammaT[..., jp], K)
        mom_low[..., jp] = np.einsum("...io,...io->...", Ginv, nab) \
            - partial_array(trgk, grid, jp, 1)
    mom_up = np.einsum("...jb,...b->...j", Ginv, mom_low)
    mom = np.ascontiguousarray(np.moveaxis(mom_up, -1, 0))

    return (
        ScalarField(grid, ham, check=False),
        VectorField(grid, mom, check=False),
    )


def divergence(pi):
    """d_i pi^{ij} with composed first-order stencils."""
    grid = pi.grid
    d = grid.dim
    out = np.zeros((d,) + grid.shape)
    for j in range(d):
        for i in range(d):
            out[j] += partial_array(pi.comp(i, j), grid, i, 1)
    return VectorField(grid, out, check=False)


def double_divergence(h):
    """d_i d_j h^{ij} with composed first-order stencils."""
    grid = h.grid
    d = grid.dim
    out = np.zeros(grid.shape)
    for i in range(d):
        acc = np.zeros(grid.shape)
        for j in range(d):
            acc += partial_array(h.comp(i, j), grid, j, 1)
        out += partial_array(acc, grid, i, 1)
    return ScalarField(grid, out, check=False)


def nonlinearity(state):
    """(Phi_1, Phi_2) = (dd h - ham(g,k), div pi - mom(g,k)).

    By the constraint reformulation the pair (h, pi) solves the
    constraints iff (dd h, div pi) = (Phi_1, Phi_2); the subtraction
    computes the quadratic right-hand side without expanding it.
    """
    gk = hpi_to_gk(state)
    ham, mom = constraint_residual(gk)
    phi1 = double_divergence(state.h) - ham
    phi2 = divergence(state.pi) - mom
    return phi1, phi2


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

def _curl_curl_recipe(f_arr, grid):
    """pi^{00} = d1 d1 f, pi^{01} = -d0 d1 f, pi^{11} = d0 d0 f, rest 0.

    Divergence-free because the composed stencils along distinct axes
    commute exactly.
    """
    d = grid.dim
    d0 = partial_array(f_arr, grid, 0, 1)
    d1 = partial_array(f_arr, grid, 1, 1)
    comps = {}
    comps[(0, 0)] = partial_array(d1, grid, 1, 1)
    comps[(0, 1)] = -partial_array(d0, grid, 1, 1)
    comps[(1, 1)] = partial_array(d0, grid, 0, 1)

    def comp_fn(i, j):
        return comps.get((i, j), np.zeros(grid.shape))

    return SymTensorField2.from_components(grid, comp_fn)


def compact_smooth(arr, passes=3):
    """Repeated 3-point box average per axis with zero extension.

    Slice sums keep exact zeros exact, so compact support only dilates
    by ``passes`` cells per axis; used to mollify seed bumps whose edge
    derivatives would otherwise inject unresolvable content into the
    nonlinearity at coarse grid spacings.
    """
    out = arr
    for _ in range(passes):
        for ax in range(out.ndim):
            u = np.moveaxis(out, ax, 0)
            acc = u.copy()
            acc[:-1] += u[1:]
            acc[1:] += u[:-1]
            out = np.moveaxis(acc / 3.0, 0, ax)
    return out


def make_seed(f1, f2, epsilon, region=None, margin=None, smooth_passes=0):
    """Seed (h0, pi0) from two scalar bump fields, scaled to sup-norm epsilon.

    Both tensors come from the divergence-free second-derivative recipe,
    so P(h0, pi0) = 0 to rounding.  When ``region`` is given, the inputs
    (after optional compact mollification) must be supported at least
    ``margin`` inside it.
    """
    grid = f1.grid
    if f2.grid != grid:
        raise ValueError("seed inputs must share a grid")
    d1, d2 = f1.data, f2.data
    if smooth_passes:
        d1 = compact_smooth(d1, smooth_passes)
        d2 = compact_smooth(d2, smooth_passes)
        f1 = ScalarField(grid, d1, check=False)
        f2 = ScalarField(grid, d2, check=False)
    if region is not None:
        m = margin if margin is not None else 4.0 * grid.spacing
        for f in (f1, f2):
            if restrict_support(f, region, 0.0) > 0:
                raise ValueError("seed input support leaves the region")
            if _support_margin_violated(f, region, m):
                raise ValueError("seed input support too close to the region boundary")
    h0 = _scaled(_curl_curl_recipe(d1, grid), epsilon)
    pi0 = _scaled(_curl_curl_recipe(d2, grid), epsilon)
    return HPiState(h0, pi0)


def _scaled(field, epsilon):
    m = field.max_abs()
    if m == 0:
        return field
    return field * (epsilon / m)


def _support_margin_violated(f, region, margin):
    pts = f.grid.points().reshape(-1, f.grid.dim)
    nz = np.abs(f.data.reshape(-1)) > 0
    if not np.any(nz):
        return False
    # support must keep `margin` clearance inside the region: dilate the
    # complement by checking the boundary distance of support points
    dist_out = region.outside_distance(pts[nz])
    if np.any(dist_out > 0):
        return True
    return bool(np.min(_inside_clearance(region, pts[nz])) < margin)


def _inside_clearance(region, pts):
    """Distance from inside points to the region boundary (conservative)."""
    if hasattr(region, "axis"):
        r = pts - region.vertex
        rn = np.linalg.norm(r, axis=-1)
        proj = r @ region.axis
        beta = np.arccos(np.clip(proj / np.maximum(rn, 1e-300), -1, 1))
        return rn * np.sin(np.maximum(region.angle - beta, 0.0))
    xd = pts[:, -1]
    rp = np.linalg.norm(pts[:, :-1], axis=1)
    lateral = (np.power(np.maximum(xd, region.floor), region.alpha) - rp) \
        / np.sqrt(1.0 + region.alpha**2)
    return np.minimum(xd - region.floor, np.maximum(lateral, 0.0))
