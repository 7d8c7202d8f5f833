"""Weighted-norm diagnostics: b-Sobolev norms, their dyadic (Littlewood-
Paley) form, anisotropic sector norms, embedding and bilinear ratio
checks, operator-boundedness sweeps, and decay-exponent fits.

Derivative sums run over plain multi-indices (no multinomial
multiplicities), which makes the anisotropic norm with alpha = 1
coincide exactly with the isotropic b-norm.  All L^2 integrals use the
trapezoid rule on the grid.

The dyadic form resamples each shell onto a fixed reference chart
(w, z) in (-2, 2) x S^2 via x = 2^{w+j} z and measures a chart Sobolev
norm there; the b-norm/dyadic-norm ratio is the measured equivalence
constant.  Charts are implemented for d = 3.
"""

import csv
import itertools

import numpy as np
from scipy.ndimage import map_coordinates

from .geometry import smoothstep
from .grid import ScalarField, multi_partial, trapezoid_weights

__all__ = [
    "NormSpec",
    "bnorm",
    "anorm",
    "lp_norm",
    "field_norm",
    "embedding_ratio",
    "bilinear_ratio",
    "boundedness_sweep",
    "decay_fit",
    "write_norm_csv",
]


class NormSpec:
    """(s, delta) selects an isotropic b-norm; adding alpha the anisotropic one."""

    def __init__(self, s, delta, alpha=None):
        if s < 0 or s != int(s):
            raise ValueError("s must be a nonnegative integer")
        if int(s) > 4:
            raise ValueError("s > 4 exceeds the stencil accuracy budget")
        if not np.isfinite(delta):
            raise ValueError("delta must be finite")
        self.s = int(s)
        self.delta = float(delta)
        self.alpha = None if alpha is None else float(alpha)

    @property
    def isotropic(self):
        return self.alpha is None

    def __repr__(self):
        if self.isotropic:
            return f"NormSpec(s={self.s}, delta={self.delta:g})"
        return f"NormSpec(s={self.s}, delta={self.delta:g}, alpha={self.alpha:g})"


def _multi_indices(d, s):
    """All multi-indices beta with |beta| <= s."""
    out = []
    for total in range(s + 1):
        for beta in itertools.product(range(total + 1), repeat=d):
            if sum(beta) == total:
                out.append(beta)
    return out


def _weighted_l2sq(arr, weight, wts):
    acc = (arr * weight) ** 2
    for w in wts:
        acc = acc * w
    return float(np.sum(acc))


def _component_fields(u):
    if isinstance(u, ScalarField):
        return [u]
    return [ScalarField(u.grid, c, check=False) for c in u.component_list()]


def bnorm(u, spec):
    """Isotropic weighted Sobolev norm sqrt(sum_beta ||<x>^{|beta|+delta} d^beta u||^2)."""
    if not spec.isotropic:
        raise ValueError("bnorm needs an isotropic spec; use anorm")
    grid = u.grid
    bracket = np.sqrt(1.0 + grid.radius() ** 2)
    wts = trapezoid_weights(grid)
    total = 0.0
    for comp in _component_fields(u):
        for beta in _multi_indices(grid.dim, spec.s):
            der = multi_partial(comp, beta)
            total += _weighted_l2sq(der.data, bracket ** (sum(beta) + spec.delta), wts)
    return float(np.sqrt(total))


def anorm(u, spec):
    """Anisotropic sector norm: tangential derivatives weighted by <x>^alpha.

    sqrt( sum_{|beta|<=s} || <x>^{|beta'| alpha + beta_d + delta} d^beta u ||^2 );
    with alpha = 1 this equals bnorm exactly.
    """
    if spec.alpha is None:
        raise ValueError("anorm needs an anisotropic spec (alpha set)")
    grid = u.grid
    bracket = np.sqrt(1.0 + grid.radius() ** 2)
    wts = trapezoid_weights(grid)
    total = 0.0
    for comp in _component_fields(u):
        for beta in _multi_indices(grid.dim, spec.s):
            der = multi_partial(comp, beta)
            expo = spec.alpha * sum(beta[:-1]) + beta[-1] + spec.delta
            total += _weighted_l2sq(der.data, bracket**expo, wts)
    return float(np.sqrt(total))


def field_norm(u, spec):
    """Dispatch on the spec: bnorm when isotropic, anorm otherwise."""
    return bnorm(u, spec) if spec.isotropic else anorm(u, spec)


# ---------------------------------------------------------------------------
# dyadic (Littlewood-Paley) norm
# ---------------------------------------------------------------------------

def _log2_radius(grid, floor=1e-12):
    return np.log2(np.maximum(grid.radius(), floor))


def _shell_count(grid):
    # largest j with supp chi_j (a ball of radius 2^{j+0.9}) inside the box
    lo, hi = grid.bounds()
    r_box = float(np.min(np.minimum(-lo, hi)))
    if r_box <= 0:
        raise ValueError("grid box must contain the origin for dyadic shells")
    return int(np.floor(np.log2(r_box) - 0.9))


def _partition_weights(grid, jmax):
    """chi_j on the grid: chi_0 = 1 - H_1, chi_j = H_j - H_{j+1}.

    H_j rises from 0 to 1 over w in (j-1, j-0.1], so supp chi_j sits in
    2^{j-1} < |x| < 2^{j+0.9}, inside the dyadic shell D_j.
    """
    w = _log2_radius(grid)

    def H(j):
        return smoothstep((w - (j - 1.0)) / 0.9)

    chis = [1.0 - H(1)]
    for j in range(1, jmax + 1):
        chis.append(H(j) - H(j + 1))
    return chis


def _chart_grid(n_w=64, n_phi=24, n_lam=48):
    ws = np.linspace(-2.0, 2.0, n_w)
    phis = (np.arange(n_phi) + 0.5) * np.pi / n_phi
    lams = np.arange(n_lam) * 2.0 * np.pi / n_lam
    return ws, phis, lams


def _chart_h_norm_sq(vals, ws, phis, lams, s):
    """H^s on (-2,2) x S^2 in chart coordinates (w, phi, lambda).

    Derivative combos up to order s from D_w, D_phi, D_lam/sin(phi);
    measure dw sin(phi) dphi dlam.  lambda is periodic.
    """
    dw = ws[1] - ws[0]
    dphi = phis[1] - phis[0]
    dlam = lams[1] - lams[0]
    sinphi = np.sin(phis)[None, :, None]

    def d_w(a):
        out = np.gradient(a, dw, axis=0, edge_order=2)
        return out

    def d_phi(a):
        return np.gradient(a, dphi, axis=1, edge_order=2)

    def d_lam(a):
        out = (np.roll(a, -1, axis=2) - np.roll(a, 1, axis=2)) / (2.0 * dlam)
        return out / sinphi

    ops = (d_w, d_phi, d_lam)
    total = 0.0
    meas = dw * dphi * dlam * sinphi
    for order in range(s + 1):
        for combo in itertools.combinations_with_replacement(range(3), order):
            der = vals
            for k in combo:
                der = ops[k](der)
            total += float(np.sum(der**2 * meas))
    return total


def lp_norm(u, spec, n_w=64, n_phi=24, n_lam=48):
    """Dyadic-decomposition form of the isotropic norm (d = 3 charts).

    sqrt( sum_j 2^{2j(delta + d/2)} ||Phi_j^*(chi_j u)||_{H^s}^2 ) with the
    shell pieces resampled onto the fixed (w, z) reference chart.
    """
    if not spec.isotropic:
        raise ValueError("lp_norm is defined for isotropic specs")
    grid = u.grid
    if grid.dim != 3:
        raise NotImplementedError("dyadic charts are implemented for d = 3")
    jmax = _shell_count(grid)
    if jmax < 2:
        raise ValueError("grid box too small to contain 3 nonempty shells")
    chis = _partition_weights(grid, jmax)
    comps = _component_fields(u)
    wts = trapezoid_weights(grid)
    ws, phis, lams = _chart_grid(n_w, n_phi, n_lam)
    W, P, L = np.meshgrid(ws, phis, lams, indexing="ij")
    d = grid.dim
    total = 0.0
    for comp in comps:
        # j = 0: identity chart; plain grid H^s of chi_0 u
        piece0 = comp.data * chis[0]
        for beta in _multi_indices(d, spec.s):
            der = multi_partial(ScalarField(grid, piece0, check=False), beta)
            total += _weighted_l2sq(der.data, 1.0, wts)
        for j in range(1, jmax + 1):
            piece = comp.data * chis[j]
            rad = 2.0 ** (W + j)
            xs = rad * np.sin(P) * np.cos(L)
            ys = rad * np.sin(P) * np.sin(L)
            zs = rad * np.cos(P)
            coords = np.stack(
                [
                    (xs - grid.origin[0]) / grid.spacing,
                    (ys - grid.origin[1]) / grid.spacing,
                    (zs - grid.origin[2]) / grid.spacing,
                ]
            )
            vals = map_coordinates(piece, coords.reshape(3, -1), order=1,
                                   mode="constant", cval=0.0).reshape(W.shape)
            total += 2.0 ** (2 * j * (spec.delta + d / 2.0)) * _chart_h_norm_sq(
                vals, ws, phis, lams, spec.s
            )
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# ratio checks
# ---------------------------------------------------------------------------

def embedding_ratio(u, spec):
    """sup |<x>^{d/2+delta} u| / bnorm(u) (finite for s > d/2 uniformly)."""
    grid = u.grid
    bracket = np.sqrt(1.0 + grid.radius() ** 2)
    sup = 0.0
    for comp in _component_fields(u):
        sup = max(sup, float(np.max(np.abs(comp.data) * bracket ** (grid.dim / 2.0 + spec.delta))))
    nb = field_norm(u, spec)
    return sup / nb if nb > 0 else 0.0


def bilinear_ratio(u, v, s, delta1, delta2, alpha=None):
    """||uv||_{s, delta1+delta2+shift} / (||u|| ||v||) with the product shift.

    shift = d/2 for the isotropic norm and ((d-1) alpha + 1)/2 for the
    anisotropic one.
    """
    grid = u.grid
    d = grid.dim
    if alpha is None:
        shift = d / 2.0
    else:
        shift = ((d - 1) * alpha + 1.0) / 2.0
    prod = ScalarField(grid, u.data * v.data, check=False)
    spec_u = NormSpec(s, delta1, alpha)
    spec_v = NormSpec(s, delta2, alpha)
    spec_p = NormSpec(s, delta1 + delta2 + shift, alpha)
    nu, nv = field_norm(u, spec_u), field_norm(v, spec_v)
    if nu == 0 or nv == 0:
        return 0.0
    return field_norm(prod, spec_p) / (nu * nv)


def boundedness_sweep(op, spec_in, spec_out, family):
    """Ratio table r_j = ||op(u_j)||_out / ||u_j||_in over a bump family.

    ``family`` is a sequence of input fields (dyadic bumps); boundedness
    shows up as a bounded spread max r / min r across scales.
    """
    rows = []
    for j, u in enumerate(family):
        nin = field_norm(u, spec_in)
        out = op(u)
        nout = field_norm(out, spec_out)
        rows.append({"j": j, "norm_in": nin, "norm_out": nout,
                     "ratio": nout / nin if nin > 0 else 0.0})
    ratios = [r["ratio"] for r in rows if r["ratio"] > 0]
    spread = max(ratios) / min(ratios) if ratios else 0.0
    return {"rows": rows, "spread": spread}


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

def decay_fit(u, radii, expected=None, center=None, width=2.0 ** 0.25):
    """Log-log least-squares decay exponent from max-over-annulus samples.

    Annulus m is {r_m / width <= |x - center| < r_m * width}; the slope of
    log max|u| against log r_m is returned with its standard error.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 4:
        raise ValueError("need at least 4 annuli")
    if callable(u):
        vals = _annulus_max_callable(u, radii, center, width)
    else:
        grid = u.grid
        r = grid.radius(center)
        data = np.max(np.abs(np.asarray(u.component_list())), axis=0)
        vals = []
        for rm in radii:
            mask = (r >= rm / width) & (r < rm * width)
            if not np.any(mask):
                raise ValueError(f"annulus at r={rm:g} has no grid points")
            vals.append(float(np.max(data[mask])))
        vals = np.asarray(vals)
    if np.any(vals <= 0):
        raise ValueError("zero field on an annulus; cannot fit a decay rate")
    x = np.log(radii)
    y = np.log(vals)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    n = len(x)
    resid = y - A @ coef
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = float(np.sqrt(np.sum(resid**2) / max(n - 2, 1) / sxx))
    return {"slope": slope, "stderr": stderr, "expected": expected,
            "radii": radii.tolist(), "max_abs": vals.tolist()}


def _annulus_max_callable(fn, radii, center, width, n_dir=256, n_rad=9):
    rng = np.random.default_rng(1234)
    dirs = rng.standard_normal((n_dir, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    vals = []
    for rm in radii:
        rs = np.geomspace(rm / width, rm * width, n_rad)
        pts = c[None, None, :] + rs[:, None, None] * dirs[None, :, :]
        v = fn(pts.reshape(-1, 3))
        vals.append(float(np.max(np.abs(v))))
    return np.asarray(vals)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def write_norm_csv(path, rows):
    """Rows: dicts with id, s, delta, alpha, value (alpha may be None)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "s", "delta", "alpha", "value"])
        for r in rows:
            alpha = "" if r.get("alpha") is None else f"{r['alpha']:.17g}"
            writer.writerow([r["id"], r["s"], f"{r['delta']:.17g}", alpha,
                             f"{r['value']:.17g}"])
